#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "CLI11.hpp"

#include "mres/harness.hpp"

namespace mres {

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--seed", f.seed, "master seed");
  cmd->add_option("--threads", f.threads, "worker threads");
  cmd->add_option("--out", f.out, "output directory");
}

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig c = f.config_path.empty() ? config_from_json("{}") : load_config(f.config_path);
  if (f.seed) c.sim.master_seed = *f.seed;
  if (f.threads) c.threads = *f.threads;
  if (f.out) c.out_dir = *f.out;
  c.validate();
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

int cmd_sweep(const ExperimentConfig& c) {
  const auto rows = run_sweep(c, true);
  for (const auto& r : rows) {
    std::printf("snr=%g %-28s m=%d ser=%.6g ber=%.6g (%lld/%lld symbol errors)\n", r.snr_db,
                r.detector.c_str(), r.m, r.ser, r.ber, static_cast<long long>(r.symbol_errors),
                static_cast<long long>(r.trials * c.sim.n_tx));
  }
  std::printf("wrote %s\n", (fs::path(c.out_dir) / "results.csv").string().c_str());
  return 0;
}

int cmd_train(ExperimentConfig c, const CommonFlags& f) {
  if (f.seed) c.train.seed = *f.seed;
  const std::string path = c.model_path.value_or((fs::path(c.out_dir) / "model.mresnn").string());
  const NeuralModel model = train(c.train, [](int epoch, const NeuralModel&, double loss) {
    std::printf("epoch %d loss %.6f\n", epoch, loss);
    std::fflush(stdout);
  });
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  model.save(path);
  write_text(fs::path(c.out_dir) / "config.echo.json", config_to_json(c));
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_analyze(const ExperimentConfig& c, int n_bins) {
  const ErrorAnalysis a = run_error_analysis(c, n_bins, true);
  write_text(fs::path(c.out_dir) / "config.echo.json", config_to_json(c));
  std::printf("detector %s, %zu channels, n_obs %lld\n", a.detector.c_str(), a.channels.size(),
              static_cast<long long>(a.stats.n_obs));
  for (const auto& ch : a.channels) {
    std::printf("  %-10s mean %+.5f variance %.5f\n", ch.name.c_str(), ch.mean, ch.variance);
  }
  std::printf("  sigma2 %.5f mean rho %.5f\n", a.stats.sigma2, a.mean_rho);
  std::printf("  combined variance %.5f predicted %.5f\n", a.combined.variance, a.predicted_uniform);
  std::printf("wrote %s\n", (fs::path(c.out_dir) / "analysis.json").string().c_str());
  return 0;
}

int cmd_theorem1(const std::vector<int>& m_values, const std::vector<double>& rho, double sigma2,
                 std::int64_t draws, std::uint64_t seed, const std::string& out_dir) {
  const auto rows = run_theorem1_check(m_values, rho, sigma2, draws, seed);
  std::printf("rho m predicted empirical stderr empirical_optimal\n");
  for (const auto& r : rows) {
    std::printf("%g %d %.6g %.6g %.3g %.6g\n", r.rho, r.m, r.predicted, r.empirical, r.stderr_,
                r.empirical_optimal);
  }
  write_text(fs::path(out_dir) / "theorem1.csv", theorem1_to_csv(rows));
  std::printf("wrote %s\n", (fs::path(out_dir) / "theorem1.csv").string().c_str());
  return 0;
}

int cmd_invariance(const ExperimentConfig& c, const std::vector<std::string>& tags, int n_samples,
                   double alpha) {
  std::vector<InvarianceReport> reports;
  bool all_pass = true;
  for (const auto& t : tags) {
    reports.push_back(verify_invariance(parse_transform_tag(t), c.sim, n_samples, alpha));
    const auto& rep = reports.back();
    all_pass = all_pass && rep.pass;
    std::printf("%-10s %s\n", rep.transform.c_str(), rep.pass ? "PASS" : "FAIL");
    for (const auto& k : rep.tests) {
      std::printf("  %-12s D=%.5f p=%.4f\n", k.quantity.c_str(), k.statistic, k.p_value);
    }
  }
  write_text(fs::path(c.out_dir) / "invariance.json", invariance_to_json(reports));
  write_text(fs::path(c.out_dir) / "config.echo.json", config_to_json(c));
  return all_pass ? 0 : 1;
}

}  // namespace

int main_cli(int argc, const char* const* argv) {
  CLI::App app{"MIMO detection with invariant-transform resampling"};
  app.require_subcommand(1);

  CommonFlags sweep_f, train_f, analyze_f, inv_f;
  auto* sweep = app.add_subcommand("sweep", "Monte Carlo SER/BER sweep");
  add_common(sweep, sweep_f);

  auto* train_cmd = app.add_subcommand("train", "train the neural detector");
  add_common(train_cmd, train_f);

  auto* analyze = app.add_subcommand("analyze", "error-statistics analysis");
  add_common(analyze, analyze_f);
  std::optional<int> n_bins;
  analyze->add_option("--bins", n_bins, "histogram bins");

  auto* t1 = app.add_subcommand("theorem1-check", "equicorrelated variance check");
  std::vector<int> m_values = {1, 2, 4, 8, 16, 64};
  std::vector<double> rho_values = {0.0, 0.25, 0.5, 0.71, 0.9, 1.0};
  double sigma2 = 1.0;
  std::int64_t draws = 200000;
  std::uint64_t t1_seed = 1;
  std::string t1_out = "out";
  t1->add_option("--m", m_values, "number of channels (repeatable)")->delimiter(',');
  t1->add_option("--rho", rho_values, "correlation values (repeatable)")->delimiter(',');
  t1->add_option("--sigma2", sigma2, "per-channel variance");
  t1->add_option("--draws", draws, "Monte Carlo draws per point");
  t1->add_option("--seed", t1_seed, "master seed");
  t1->add_option("--out", t1_out, "output directory");

  auto* inv = app.add_subcommand("verify-invariance", "KS check of transform invariance");
  add_common(inv, inv_f);
  std::vector<std::string> inv_tags = {"neg", "conj_rot", "perm", "unitary"};
  int inv_samples = 5000;
  double inv_alpha = 0.01;
  inv->add_option("--transforms", inv_tags, "transform tags")->delimiter(',');
  inv->add_option("--samples", inv_samples, "samples per quantity");
  inv->add_option("--alpha", inv_alpha, "significance level");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  ExperimentConfig config;
  try {
    if (*sweep) config = resolve_config(sweep_f);
    if (*train_cmd) config = resolve_config(train_f);
    if (*analyze) config = resolve_config(analyze_f);
    if (*inv) {
      config = resolve_config(inv_f);
      for (const auto& t : inv_tags) (void)parse_transform_tag(t);
    }
    if (n_bins && *n_bins < 1) throw std::invalid_argument("--bins must be >= 1");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*sweep) return cmd_sweep(config);
    if (*train_cmd) return cmd_train(config, train_f);
    if (*analyze) return cmd_analyze(config, n_bins.value_or(config.n_bins));
    if (*t1) return cmd_theorem1(m_values, rho_values, sigma2, draws, t1_seed, t1_out);
    if (*inv) return cmd_invariance(config, inv_tags, inv_samples, inv_alpha);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace mres
