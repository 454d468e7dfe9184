#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mres/detectors.hpp"
#include "mres/mimo_model.hpp"
#include "mres/soft_output.hpp"
#include "mres/transforms.hpp"

namespace mres {

/// Minimum-variance affine combination of M correlated unbiased estimates.
template <typename Scalar>
struct CombinerWeights {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> beta;
  Scalar predicted_var = Scalar(0);
  /// Set when R was numerically singular and the solve ran on R + eps I.
  bool regularized = false;
};

/// beta = R^-1 1 / (1^T R^-1 1), predicted_var = 1 / (1^T R^-1 1).
///
/// Solved with a pivoted LDL^T factorization. When R is numerically singular
/// (e.g. fully correlated channels) the solve runs on R + eps I with
/// eps = 1e-9 trace(R) / M and the result is flagged.
template <typename Derived>
CombinerWeights<typename Derived::Scalar> optimal_weights(const Eigen::MatrixBase<Derived>& r) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  const Eigen::Index m = r.rows();
  if (m < 1 || r.cols() != m) throw std::invalid_argument("covariance must be square and non-empty");
  const Scalar scale = r.cwiseAbs().maxCoeff();
  if ((r - r.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-10) * std::max(scale, Scalar(1))) {
    throw std::invalid_argument("covariance must be symmetric");
  }

  Matrix work = r;
  const Vector ones = Vector::Ones(m);
  CombinerWeights<Scalar> out;
  Eigen::LDLT<Matrix> ldlt(work);
  const auto pivots = ldlt.vectorD().cwiseAbs();
  const bool singular = ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
                        !(pivots.minCoeff() > Scalar(1e-12) * pivots.maxCoeff()) ||
                        !(ldlt.rcond() > Scalar(1e-12));
  if (singular) {
    const Scalar eps = Scalar(1e-9) * r.trace() / Scalar(m);
    if (!(eps > Scalar(0))) throw std::domain_error("covariance has non-positive trace");
    work.diagonal().array() += eps;
    ldlt.compute(work);
    out.regularized = true;
  }
  const Vector x = ldlt.solve(ones);
  const Scalar denom = ones.dot(x);
  out.beta = x / denom;
  out.predicted_var = Scalar(1) / denom;
  return out;
}

/// Variance of the affine combination beta^T z for error covariance R.
template <typename DerivedR, typename DerivedB>
typename DerivedR::Scalar combined_variance(const Eigen::MatrixBase<DerivedR>& r,
                                            const Eigen::MatrixBase<DerivedB>& beta) {
  return beta.dot(r * beta);
}

/// s_bar = sum_m beta_m s_m.
template <typename DerivedE, typename DerivedB>
typename DerivedE::Scalar combine_scalar(const Eigen::MatrixBase<DerivedE>& estimates,
                                         const Eigen::MatrixBase<DerivedB>& beta) {
  if (estimates.size() != beta.size()) throw std::invalid_argument("combine_scalar: length mismatch");
  return beta.dot(estimates);
}

/// Equicorrelated R = sigma2 ((1 - rho) I + rho 1 1^T).
template <typename Scalar = double>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> equicorrelated(int m, Scalar rho, Scalar sigma2) {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Matrix r = Matrix::Constant(m, m, rho * sigma2);
  r.diagonal().setConstant(sigma2);
  return r;
}

/// Smallest admissible rho (exclusive) for an equicorrelated M x M matrix.
inline double min_equicorrelation(int m) {
  return m <= 1 ? -std::numeric_limits<double>::infinity() : -1.0 / (m - 1);
}

/// (rho + (1 - rho) / M) sigma2 for each M. Throws std::domain_error when rho
/// falls outside (-1/(M-1), 1] for some requested M.
std::vector<double> variance_curve(double rho, double sigma2, const std::vector<int>& m_values);

struct ErrorStats {
  int m = 0;
  Eigen::MatrixXd r;
  double sigma2 = 0.0;
  Eigen::MatrixXd rho;
  Eigen::VectorXd mean_error;
  std::int64_t n_obs = 0;
  /// Pairs whose correlation was undefined (a constant channel); reported as 1.
  std::vector<std::pair<int, int>> degenerate_pairs;
};

/// Unbiased sample covariance of an n_obs x M matrix of scalar errors.
ErrorStats error_stats_from_samples(const Eigen::MatrixXd& errors);

std::string error_stats_to_json(const ErrorStats& stats);
ErrorStats error_stats_from_json(const std::string& text);
void save_error_stats(const ErrorStats& stats, const std::string& path);
ErrorStats load_error_stats(const std::string& path);

/// Scalar errors of the back-mapped soft-symbol outputs of each transform
/// channel. Row = one real or imaginary part of one layer of one problem
/// (imaginary parts only for complex alphabets); column = channel.
struct ErrorSamples {
  Eigen::MatrixXd errors;
  std::vector<int> layer;
};

/// Problems are draw_problem(config, ., config.snr_db, first_trial + i); the
/// random transform parameters of problem i come from its Transform stream.
ErrorSamples collect_errors(const Detector& detector, const std::vector<TransformTag>& transform_set,
                            const SimConfig& config, int n_problems, std::uint64_t first_trial = 0,
                            int threads = 1);

/// Error statistics with one R pooled over all layers and real/imaginary parts.
ErrorStats estimate_error_covariance(const Detector& detector,
                                     const std::vector<TransformTag>& transform_set,
                                     const SimConfig& config, int n_problems,
                                     std::uint64_t first_trial = 0, int threads = 1);

/// One ErrorStats per layer instead of a pooled R.
std::vector<ErrorStats> estimate_error_covariance_per_layer(
    const Detector& detector, const std::vector<TransformTag>& transform_set,
    const SimConfig& config, int n_problems, std::uint64_t first_trial = 0, int threads = 1);

enum class CombineDomain { SoftSymbol, Llr, Marginal };

CombineDomain parse_combine_domain(const std::string& name);
std::string to_string(CombineDomain domain);

Eigen::VectorXd uniform_weights(int m);

/// Back-mapped outputs of the detector on every transformed copy of `problem`.
std::vector<SoftOutput> transformed_outputs(const Detector& detector, const MimoProblem& problem,
                                            const std::vector<InvariantTransform>& transforms);

/// Combine back-mapped outputs with weights beta (sum 1).
///
/// SoftSymbol: weighted soft symbols, hard = nearest point, marginals and
/// LLRs left empty. Llr: weighted LLRs, marginals from the bit model.
/// Marginal: weighted marginals, negative mass clipped, rows renormalized.
/// When all outputs agree (within 1e-9) the first one is returned as is.
SoftOutput combine_outputs(const std::vector<SoftOutput>& outputs, const Eigen::VectorXd& beta,
                           CombineDomain domain, const Constellation& c);

SoftOutput resample_detect(const Detector& detector, const MimoProblem& problem,
                           const std::vector<InvariantTransform>& transforms,
                           const Eigen::VectorXd& beta, CombineDomain domain);

/// Uniform weights when `stats` is null, minimum-variance weights otherwise.
SoftOutput resample_detect(const Detector& detector, const MimoProblem& problem,
                           const std::vector<InvariantTransform>& transforms,
                           const ErrorStats* stats, CombineDomain domain);

/// Per-layer spread of the back-mapped soft symbols across transform
/// channels: (1/M) sum_m |s_m - mean|^2. Needs at least two transforms.
Eigen::VectorXd epistemic_variance(const Detector& detector, const MimoProblem& problem,
                                   const std::vector<InvariantTransform>& transforms);

}  // namespace mres
