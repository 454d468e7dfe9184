#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mres/mimo_model.hpp"
#include "mres/soft_output.hpp"

namespace mres {

enum class TransformKind {
  Identity,
  Negation,
  Conjugate,
  Permutation,
  Unitary,
  ConjugateRotated,
  Composite,
  /// y and H scaled by a real gain != 1. Not invariant; used as a negative
  /// control for verify_invariance.
  Scaling,
};

/// Invariant transformation of y = H s + n, stored in the canonical form
///
///   y' = g Q c(y),   H' = phase g Q c(H) P^T,   s' = conj(phase) P c(s),
///
/// where c() is complex conjugation when `conjugate` is set, g a scalar gain,
/// Q a unitary (absent = identity) and P the permutation with
/// s'_i = s_{perm[i]}. Every listed family is a special case and the form is
/// closed under composition. The noise maps to g Q c(n).
class InvariantTransform {
 public:
  static InvariantTransform identity();
  static InvariantTransform negation();
  static InvariantTransform conjugate();
  static InvariantTransform permutation(std::vector<int> perm);
  static InvariantTransform unitary(Eigen::MatrixXcd q);
  /// (y*, phase H*) with symbol map s -> conj(phase) s*. phase = j is the
  /// (y*, jH*) transform whose symbol map is s -> -j s*.
  static InvariantTransform conjugate_rotated(cdouble phase);
  static InvariantTransform scaling(double gain);

  /// Apply `first`, then `second`.
  static InvariantTransform compose(const InvariantTransform& first,
                                    const InvariantTransform& second);

  TransformKind kind() const { return kind_; }
  bool conjugates() const { return conjugate_; }
  cdouble gain() const { return gain_; }
  cdouble phase() const { return phase_; }
  const std::optional<Eigen::MatrixXcd>& rotation() const { return rotation_; }
  const std::vector<int>& perm() const { return perm_; }
  std::string name() const;

  /// Forward symbol map on one amplitude (without the layer permutation).
  cdouble map_symbol(cdouble s) const;
  /// Inverse of map_symbol.
  cdouble unmap_symbol(cdouble s) const;

  /// Image of the transform on y (or on a noise vector).
  Eigen::VectorXcd map_observation(const Eigen::VectorXcd& y) const;
  Eigen::MatrixXcd map_channel(const Eigen::MatrixXcd& h) const;

  /// Layer that transformed layer i carries; identity when no permutation.
  int source_layer(int i) const { return perm_.empty() ? i : perm_[i]; }

  /// Throws std::invalid_argument when the transform does not fit n_rx x n_tx.
  void check_dimensions(int n_rx, int n_tx) const;

 private:
  InvariantTransform() = default;

  TransformKind kind_ = TransformKind::Identity;
  bool conjugate_ = false;
  cdouble gain_{1.0, 0.0};
  cdouble phase_{1.0, 0.0};
  std::optional<Eigen::MatrixXcd> rotation_;
  std::vector<int> perm_;
};

/// Point-index image of the symbol map: table[p] = index of map_symbol(point p).
/// Throws std::invalid_argument when the constellation is not closed under it.
std::vector<int> induced_point_map(const InvariantTransform& t, const Constellation& c);

/// Bit-label action of a point map: original bit k equals transformed bit
/// `source[k]`, XOR `flip[k]`, for every point.
struct LabelMap {
  std::vector<int> source;
  std::vector<bool> flip;
};

/// Throws std::invalid_argument when the point map does not act on labels as
/// a bit permutation with flips.
LabelMap induced_label_map(const std::vector<int>& point_map, const Constellation& c);

struct TransformedProblem {
  MimoProblem problem;
  InvariantTransform source;
  std::vector<int> point_map;
};

TransformedProblem apply_transform(const InvariantTransform& t, const MimoProblem& problem);

/// Bring an output computed on the transformed problem back to the original
/// coordinates. Empty marginal or LLR matrices stay empty.
SoftOutput backmap_estimate(const TransformedProblem& tp, const SoftOutput& out);
SoftOutput backmap_estimate(const InvariantTransform& t, const Constellation& c,
                            const SoftOutput& out);

/// Haar-distributed unitary: QR of an i.i.d. CN(0,1) matrix with the columns
/// of Q rescaled by the phases of diag(R).
Eigen::MatrixXcd random_unitary(int n, Rng& rng);

std::vector<int> random_permutation(int n, Rng& rng);

/// Transform families named in configuration files.
enum class TransformTag { Identity, Neg, ConjRot, Perm, Unitary };

TransformTag parse_transform_tag(const std::string& tag);
std::string to_string(TransformTag tag);
std::vector<TransformTag> parse_transform_set(const std::vector<std::string>& tags);

/// Concrete transforms for one problem; "perm" and "unitary" draw their
/// parameters from `rng`.
std::vector<InvariantTransform> instantiate_transforms(const std::vector<TransformTag>& set,
                                                       int n_rx, int n_tx, Rng& rng);

struct KsResult {
  std::string quantity;
  double statistic = 0.0;
  double p_value = 1.0;
  bool pass = true;
};

struct InvarianceReport {
  std::string transform;
  int n_samples = 0;
  double alpha = 0.01;
  std::vector<KsResult> tests;
  bool pass = true;
};

/// Two-sample KS comparison of transformed channel entries, symbols and noise
/// against fresh draws of the untransformed generators. `make_transform` is
/// called once per sample so that random families are redrawn each time.
InvarianceReport verify_invariance(const std::function<InvariantTransform(Rng&)>& make_transform,
                                   const std::string& name, const SimConfig& config,
                                   int n_samples, double alpha = 0.01);

InvarianceReport verify_invariance(TransformTag tag, const SimConfig& config, int n_samples,
                                   double alpha = 0.01);

}  // namespace mres
