#include "mres/mimo_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mres {

template <typename Scalar>
void BasicMimoProblem<Scalar>::validate() const {
  if (!constellation) throw std::invalid_argument("problem has no constellation");
  if (h.rows() < 1 || h.cols() < 1) throw std::invalid_argument("empty channel matrix");
  if (y.size() != h.rows()) {
    throw std::invalid_argument("observation length " + std::to_string(y.size()) +
                                " does not match channel rows " + std::to_string(h.rows()));
  }
  if (s_true && s_true->size() != h.cols()) {
    throw std::invalid_argument("label length does not match channel columns");
  }
  if (!(noise_var >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
}

template struct BasicMimoProblem<cdouble>;
template struct BasicMimoProblem<double>;

void SimConfig::validate() const {
  if (n_tx < 1 || n_rx < n_tx) {
    throw std::invalid_argument("require n_rx >= n_tx >= 1");
  }
  if (n_trials < 1) throw std::invalid_argument("n_trials must be >= 1");
  if (!std::isfinite(snr_db)) throw std::invalid_argument("snr_db must be finite");
  (void)Constellation::make(modulation, order, normalized);
}

std::shared_ptr<const Constellation> SimConfig::make_constellation() const {
  return std::make_shared<const Constellation>(Constellation::make(modulation, order, normalized));
}

Constellation make_constellation(ModulationKind kind, int order, bool normalized) {
  return Constellation::make(kind, order, normalized);
}

Eigen::MatrixXcd sample_channel(int n_rx, int n_tx, Rng& rng) {
  if (n_rx < 1 || n_tx < 1) throw std::invalid_argument("channel dimensions must be >= 1");
  Eigen::MatrixXcd h(n_rx, n_tx);
  // Column-major fill order is part of the reproducibility contract.
  for (int c = 0; c < n_tx; ++c) {
    for (int r = 0; r < n_rx; ++r) h(r, c) = rng.complex_normal();
  }
  return h;
}

Eigen::VectorXi sample_symbols(int n_tx, const Constellation& constellation, Rng& rng) {
  Eigen::VectorXi s(n_tx);
  for (int i = 0; i < n_tx; ++i) s(i) = rng.uniform_int(0, constellation.order() - 1);
  return s;
}

MimoProblem transmit(const Eigen::MatrixXcd& h, const Eigen::VectorXi& s_indices,
                     std::shared_ptr<const Constellation> constellation, double noise_var,
                     Rng& rng) {
  if (!(noise_var >= 0.0)) throw std::invalid_argument("noise variance must be >= 0");
  if (s_indices.size() != h.cols()) {
    throw std::invalid_argument("symbol vector length does not match channel columns");
  }
  for (Eigen::Index i = 0; i < s_indices.size(); ++i) {
    if (s_indices(i) < 0 || s_indices(i) >= constellation->order()) {
      throw std::out_of_range("symbol index " + std::to_string(s_indices(i)) +
                              " out of range for " + constellation->name());
    }
  }
  MimoProblem p;
  p.h = h;
  p.constellation = std::move(constellation);
  p.noise_var = noise_var;
  p.s_true = s_indices;
  p.y = h * p.symbols(s_indices);
  if (noise_var > 0.0) {
    const double amp = std::sqrt(noise_var);
    for (Eigen::Index r = 0; r < p.y.size(); ++r) p.y(r) += amp * rng.complex_normal();
  }
  return p;
}

double snr_to_noise_var(double snr_db, const Constellation& constellation, int n_tx) {
  return n_tx * constellation.avg_energy() / std::pow(10.0, snr_db / 10.0);
}

RealMimoProblem complex_to_real(const MimoProblem& problem) {
  problem.validate();
  const Eigen::Index nr = problem.h.rows();
  const Eigen::Index nt = problem.h.cols();
  RealMimoProblem out;
  out.h.resize(2 * nr, 2 * nt);
  const Eigen::MatrixXd re = problem.h.real();
  const Eigen::MatrixXd im = problem.h.imag();
  out.h.topLeftCorner(nr, nt) = re;
  out.h.topRightCorner(nr, nt) = -im;
  out.h.bottomLeftCorner(nr, nt) = im;
  out.h.bottomRightCorner(nr, nt) = re;
  out.y.resize(2 * nr);
  out.y.head(nr) = problem.y.real();
  out.y.tail(nr) = problem.y.imag();
  out.noise_var = problem.noise_var / 2.0;
  out.constellation = std::make_shared<const Constellation>(problem.constellation->axis_alphabet());
  if (problem.s_true && problem.constellation->kind() == ModulationKind::Qam) {
    Eigen::VectorXi s(2 * nt);
    for (Eigen::Index i = 0; i < nt; ++i) {
      const auto [ii, qq] = problem.constellation->axis_indices((*problem.s_true)(i));
      s(i) = ii;
      s(nt + i) = qq;
    }
    out.s_true = s;
  }
  return out;
}

Eigen::VectorXi real_to_complex_indices(const Eigen::VectorXi& real_indices,
                                        const Constellation& complex_constellation) {
  if (complex_constellation.kind() != ModulationKind::Qam || real_indices.size() % 2 != 0) {
    throw std::invalid_argument("real_to_complex_indices requires a QAM constellation");
  }
  const Eigen::Index nt = real_indices.size() / 2;
  const int levels = complex_constellation.levels_per_axis();
  Eigen::VectorXi out(nt);
  for (Eigen::Index i = 0; i < nt; ++i) out(i) = real_indices(i) * levels + real_indices(nt + i);
  return out;
}

MimoProblem draw_problem(const SimConfig& config,
                         const std::shared_ptr<const Constellation>& constellation,
                         double snr_db, std::uint64_t trial_index) {
  Rng channel_rng(config.master_seed, Stream::Channel, trial_index);
  Rng symbol_rng(config.master_seed, Stream::Symbols, trial_index);
  Rng noise_rng(config.master_seed, Stream::Noise, trial_index);
  const Eigen::MatrixXcd h = sample_channel(config.n_rx, config.n_tx, channel_rng);
  const Eigen::VectorXi s = sample_symbols(config.n_tx, *constellation, symbol_rng);
  const double nv = snr_to_noise_var(snr_db, *constellation, config.n_tx);
  return transmit(h, s, constellation, nv, noise_rng);
}

}  // namespace mres
