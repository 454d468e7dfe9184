#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mres/detectors.hpp"
#include "mres/mimo_model.hpp"
#include "mres/neural_detector.hpp"
#include "mres/resampler.hpp"
#include "mres/transforms.hpp"

namespace mres {

/// Flat experiment configuration, loaded from JSON. Every key is optional;
/// unknown keys are rejected. See README for the key list.
struct ExperimentConfig {
  SimConfig sim;
  std::vector<std::string> detectors = {"ml", "lmmse"};
  std::vector<std::vector<std::string>> transform_sets = {{"identity"}, {"identity", "neg"}};
  std::string weight_mode = "uniform";
  std::string combine_domain = "marginal";
  std::vector<double> snr_grid = {20.0};
  std::string out_dir = "out";
  std::optional<std::string> model_path;
  std::optional<std::string> error_stats_path;
  int threads = 1;
  std::int64_t ml_budget = kDefaultMlBudget;
  int calibration_trials = 2000;

  // Training.
  TrainConfig train;

  // Error analysis.
  std::string analysis_detector;
  std::vector<std::string> analysis_transform_set = {"identity", "neg"};
  int n_bins = 41;
  double trunc_factor = 1.5;
  double synthetic_rho = 0.71;
  double synthetic_sigma2 = 0.385;

  /// Throws std::invalid_argument on violated invariants.
  void validate() const;
};

ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& config);

/// Detector from a tag; "neural" uses config.model_path, "neural:<path>" an
/// explicit file.
Detector make_detector(const std::string& tag, const ExperimentConfig& config);

struct ResultRow {
  double snr_db = 0.0;
  std::string detector;
  int m = 1;
  std::int64_t trials = 0;
  std::int64_t symbol_errors = 0;
  std::int64_t bit_errors = 0;
  double ser = 0.0;
  double ber = 0.0;
  double elapsed_s = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kResultsHeader =
    "snr_db,detector,m,trials,symbol_errors,bit_errors,ser,ber,elapsed_s,seed";

std::string format_double(double v);
std::string results_to_csv(const std::vector<ResultRow>& rows);

/// Monte Carlo sweep over snr_grid x detectors x transform_sets. Every variant
/// sees the same problems (trial i of every SNR point uses the same channel,
/// symbols and noise direction). Writes results.csv and config.echo.json to
/// out_dir when `write_files` is set.
std::vector<ResultRow> run_sweep(const ExperimentConfig& config, bool write_files = true);

struct ChannelSummary {
  std::string name;
  double mean = 0.0;
  double variance = 0.0;
  std::vector<std::int64_t> histogram;
  std::int64_t below = 0;
  std::int64_t above = 0;
  std::optional<double> ser;
};

struct ErrorAnalysis {
  std::string detector;
  std::vector<std::string> transforms;
  double snr_db = 0.0;
  std::int64_t n_problems = 0;
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> bin_edges;
  std::vector<ChannelSummary> channels;
  ErrorStats stats;
  double mean_rho = 1.0;
  ChannelSummary combined;
  /// (rho_bar + (1 - rho_bar) / M) sigma2 with the mean off-diagonal rho.
  double predicted_equicorrelated = 0.0;
  /// beta^T R beta for the uniform weights actually used.
  double predicted_uniform = 0.0;
  CombinerWeights<double> optimal;
};

/// Histogram and moments of an n_obs x M error matrix plus its uniform
/// combination.
ErrorAnalysis analyze_errors(const Eigen::MatrixXd& errors, const std::vector<std::string>& names,
                             int n_bins, double lo, double hi);

/// Error analysis of the configured detector (or synthetic Gaussian channels
/// when analysis_detector is "synthetic"). Writes analysis.json when
/// `write_files` is set.
ErrorAnalysis run_error_analysis(const ExperimentConfig& config, int n_bins, bool write_files = true);
std::string analysis_to_json(const ErrorAnalysis& a);

/// Zero-mean Gaussian vectors with covariance R (rows = draws).
Eigen::MatrixXd sample_gaussian_channels(const Eigen::MatrixXd& r, std::int64_t n_draws, Rng& rng);

struct Theorem1Row {
  double rho = 0.0;
  int m = 1;
  double predicted = 0.0;
  double empirical = 0.0;
  double stderr_ = 0.0;
  double empirical_optimal = 0.0;
};

inline constexpr const char* kTheorem1Header = "rho,m,predicted,empirical,stderr";

/// Equicorrelated Gaussian channels combined with uniform and with optimal
/// weights, compared with (rho + (1 - rho)/M) sigma2.
std::vector<Theorem1Row> run_theorem1_check(const std::vector<int>& m_values,
                                            const std::vector<double>& rho_grid, double sigma2,
                                            std::int64_t n_draws, std::uint64_t seed);
std::string theorem1_to_csv(const std::vector<Theorem1Row>& rows);

std::string invariance_to_json(const std::vector<InvarianceReport>& reports);

/// Command-line entry point. Returns 0 on success, 2 on usage or config
/// errors, 1 on runtime failures.
int main_cli(int argc, const char* const* argv);

}  // namespace mres
