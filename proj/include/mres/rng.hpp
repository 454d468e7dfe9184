#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace mres {

/// Stream tags keep the random draws of one trial in disjoint sequences, so
/// changing e.g. the noise level never perturbs the channel or the symbols.
enum class Stream : std::uint64_t {
  Channel = 0x43484e4cULL,
  Symbols = 0x53594d42ULL,
  Noise = 0x4e4f4953ULL,
  Transform = 0x5452414eULL,
  Training = 0x54524149ULL,
  Reference = 0x52454645ULL,
  Synthetic = 0x53594e54ULL,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t master_seed, Stream tag,
                                 std::uint64_t index) {
  std::uint64_t h = splitmix64(master_seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  return splitmix64(h ^ index);
}

/// Thin wrapper over mt19937_64 with the handful of draws the simulator needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master_seed, Stream tag, std::uint64_t index)
      : engine_(stream_seed(master_seed, tag, index)) {}

  double normal() { return normal_(engine_); }

  /// Circular complex Gaussian with unit total variance.
  std::complex<double> complex_normal() {
    constexpr double kHalf = 0.70710678118654752440;
    const double re = normal_(engine_);
    const double im = normal_(engine_);
    return {kHalf * re, kHalf * im};
  }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace mres
