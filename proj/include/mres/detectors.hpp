#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "mres/mimo_model.hpp"
#include "mres/soft_output.hpp"

namespace mres {

enum class MlMode { MaxLog, FullPosterior };

inline constexpr std::int64_t kDefaultMlBudget = std::int64_t{1} << 20;

/// Exhaustive search over all order^n_tx candidates.
///
/// FullPosterior sums exp(-||y - Hs||^2 / (c * noise_var)) into exact
/// marginals under a flat prior; hard is the per-layer argmax of those
/// marginals. MaxLog reports max-log LLRs and the marginals of the per-bit
/// independence model built from them; its hard decision is the global
/// minimizer of ||y - Hs||^2.
/// Throws std::length_error when the search space exceeds `budget`.
template <typename Scalar>
SoftOutput detect_ml(const BasicMimoProblem<Scalar>& problem, MlMode mode = MlMode::FullPosterior,
                     std::int64_t budget = kDefaultMlBudget);

/// Linear MMSE filter (H^H H + (noise_var / Es) I)^-1 H^H y followed by a
/// per-layer Gaussian demapper on the bias-corrected output.
template <typename Scalar>
SoftOutput detect_lmmse(const BasicMimoProblem<Scalar>& problem);

/// Unfiltered LMMSE equalizer output, exposed for tests.
template <typename Scalar>
typename BasicMimoProblem<Scalar>::Vector lmmse_filter(const BasicMimoProblem<Scalar>& problem);

/// QR-based K-best (QRM) breadth-first search.
///
/// Columns are sorted by ascending norm before the QR, so the strongest
/// column sits in the last row of R and is expanded at the first tree level.
/// Each level expands every survivor by every point, sorts the children by
/// accumulated metric (ties by candidate index) and keeps `k_best`.
template <typename Scalar>
SoftOutput detect_qrm(const BasicMimoProblem<Scalar>& problem, int k_best);

/// Any detector acting on complex problems.
using Detector = std::function<SoftOutput(const MimoProblem&)>;

/// Build a classical detector from a tag: "ml", "ml:maxlog", "lmmse", "qrm:<k>".
/// Neural detectors are built by make_detector in harness.hpp.
Detector make_classical_detector(const std::string& tag, std::int64_t ml_budget = kDefaultMlBudget);

}  // namespace mres
