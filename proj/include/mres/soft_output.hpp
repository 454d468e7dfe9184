#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "mres/constellation.hpp"

namespace mres {

/// LLR magnitude cap. Also the margin added to the worst survivor metric when
/// a K-best list holds no counter-hypothesis for a bit.
inline constexpr double kLlrClamp = 40.0;

/// Detector output for one problem.
///
/// `marginals` is n_tx x order, `llrs` is n_tx x bits with
/// L = log p(bit = 0) - log p(bit = 1). Either matrix may be empty when a
/// combining mode does not produce it; `hard` and `soft_symbols` are always set.
struct SoftOutput {
  Eigen::MatrixXd marginals;
  Eigen::MatrixXd llrs;
  Eigen::VectorXi hard;
  Eigen::VectorXcd soft_symbols;

  int n_tx() const { return static_cast<int>(hard.size()); }
};

/// Row-wise argmax; ties go to the lowest index.
Eigen::VectorXi argmax_rows(const Eigen::MatrixXd& marginals);

/// Exact bit LLRs of a symbol distribution, clamped to +-kLlrClamp.
Eigen::MatrixXd marginals_to_llr(const Eigen::MatrixXd& marginals, const Constellation& c);

/// Symbol distribution implied by independent bits with the given LLRs.
Eigen::MatrixXd llr_to_marginals(const Eigen::MatrixXd& llrs, const Constellation& c);

Eigen::VectorXcd expected_symbols(const Eigen::MatrixXd& marginals, const Constellation& c);

/// Complete a SoftOutput from normalized per-layer marginals.
SoftOutput soft_output_from_marginals(Eigen::MatrixXd marginals, const Constellation& c);

/// Complete a SoftOutput from LLRs; marginals follow the per-bit independence
/// model, so they reproduce the LLRs exactly.
SoftOutput soft_output_from_llrs(Eigen::MatrixXd llrs, const Constellation& c);

/// Turn per-layer log-weights into normalized probabilities (log-sum-exp).
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

struct ErrorCount {
  std::int64_t symbol_errors = 0;
  std::int64_t bit_errors = 0;
  std::int64_t symbols = 0;
  std::int64_t bits = 0;

  ErrorCount& operator+=(const ErrorCount& other) {
    symbol_errors += other.symbol_errors;
    bit_errors += other.bit_errors;
    symbols += other.symbols;
    bits += other.bits;
    return *this;
  }
};

ErrorCount count_errors(const Eigen::VectorXi& hard, const Eigen::VectorXi& s_true,
                        const Constellation& c);

}  // namespace mres
