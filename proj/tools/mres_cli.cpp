#include "mres/harness.hpp"

int main(int argc, char** argv) { return mres::main_cli(argc, argv); }
