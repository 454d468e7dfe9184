#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <optional>
#include <type_traits>

#include <Eigen/Dense>

#include "mres/constellation.hpp"
#include "mres/rng.hpp"

namespace mres {

using cdouble = std::complex<double>;

template <typename Scalar>
inline constexpr bool is_complex_v = !std::is_same_v<Scalar, typename Eigen::NumTraits<Scalar>::Real>;

/// Exponent scale of the Gaussian likelihood: exp(-|e|^2 / (c * noise_var)),
/// c = 1 for circular complex noise and 2 for real noise.
template <typename Scalar>
constexpr double likelihood_factor() {
  return is_complex_v<Scalar> ? 1.0 : 2.0;
}

template <typename Scalar>
Scalar point_as(const cdouble& p) {
  if constexpr (is_complex_v<Scalar>) {
    return p;
  } else {
    return p.real();
  }
}

/// One realization of y = H s + n.
///
/// For complex problems `noise_var` is the variance of each complex noise
/// entry. For real problems it is the variance of each real entry.
template <typename Scalar>
struct BasicMimoProblem {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix h;
  Vector y;
  std::optional<Eigen::VectorXi> s_true;
  double noise_var = 0.0;
  std::shared_ptr<const Constellation> constellation;

  int n_rx() const { return static_cast<int>(h.rows()); }
  int n_tx() const { return static_cast<int>(h.cols()); }

  /// Map symbol indices to amplitudes.
  Vector symbols(const Eigen::VectorXi& indices) const {
    Vector s(indices.size());
    for (Eigen::Index i = 0; i < indices.size(); ++i) {
      s(i) = point_as<Scalar>(constellation->point(indices(i)));
    }
    return s;
  }

  /// Throws std::invalid_argument on inconsistent dimensions.
  void validate() const;
};

using MimoProblem = BasicMimoProblem<cdouble>;
using RealMimoProblem = BasicMimoProblem<double>;

struct SimConfig {
  int n_rx = 4;
  int n_tx = 4;
  ModulationKind modulation = ModulationKind::Qam;
  int order = 16;
  bool normalized = false;
  double snr_db = 20.0;
  std::uint64_t master_seed = 1;
  int n_trials = 1000;

  void validate() const;
  std::shared_ptr<const Constellation> make_constellation() const;
};

Constellation make_constellation(ModulationKind kind, int order, bool normalized = false);

/// i.i.d. CN(0, 1) entries.
Eigen::MatrixXcd sample_channel(int n_rx, int n_tx, Rng& rng);

Eigen::VectorXi sample_symbols(int n_tx, const Constellation& constellation, Rng& rng);

/// y = H map(s) + n with n ~ CN(0, noise_var I).
MimoProblem transmit(const Eigen::MatrixXcd& h, const Eigen::VectorXi& s_indices,
                     std::shared_ptr<const Constellation> constellation, double noise_var,
                     Rng& rng);

/// Noise variance per complex receive entry for a per-antenna SNR:
/// n_tx * avg_energy / 10^(snr_db / 10).
double snr_to_noise_var(double snr_db, const Constellation& constellation, int n_tx);

/// Real embedding: H' = [[Re H, -Im H], [Im H, Re H]], y' = [Re y; Im y],
/// s' = [Re s; Im s]. Labels are carried over only for QAM, whose axis
/// alphabet contains both halves of s'.
RealMimoProblem complex_to_real(const MimoProblem& problem);

/// Inverse of the label split done by complex_to_real.
Eigen::VectorXi real_to_complex_indices(const Eigen::VectorXi& real_indices,
                                        const Constellation& complex_constellation);

/// Draw trial `trial_index` of a configuration. Channel, symbols and noise
/// come from disjoint streams keyed by (master_seed, trial_index); the noise
/// stream is drawn at unit variance and scaled, so the same trial at two SNR
/// points shares its channel, symbols and noise direction.
MimoProblem draw_problem(const SimConfig& config,
                         const std::shared_ptr<const Constellation>& constellation,
                         double snr_db, std::uint64_t trial_index);

}  // namespace mres
