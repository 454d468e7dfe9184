#include "mres/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace mres {

namespace {

// Denominator of the likelihood exponent; a zero noise variance degenerates
// to a hard argmin instead of producing 0/0.
template <typename Scalar>
double exponent_scale(double noise_var) {
  return std::max(likelihood_factor<Scalar>() * noise_var, std::numeric_limits<double>::min());
}

template <typename Scalar>
std::vector<Scalar> alphabet(const Constellation& c) {
  std::vector<Scalar> pts(c.order());
  for (int m = 0; m < c.order(); ++m) pts[m] = point_as<Scalar>(c.point(m));
  return pts;
}

double llr_from_metrics(double metric0, double metric1, double scale) {
  const double l = (metric1 - metric0) / scale;
  if (std::isnan(l)) return 0.0;
  return std::clamp(l, -kLlrClamp, kLlrClamp);
}

}  // namespace

template <typename Scalar>
SoftOutput detect_ml(const BasicMimoProblem<Scalar>& problem, MlMode mode, std::int64_t budget) {
  problem.validate();
  const Constellation& c = *problem.constellation;
  const int q = c.order();
  const int n = problem.n_tx();
  const int nr = problem.n_rx();

  std::int64_t total = 1;
  for (int j = 0; j < n; ++j) {
    total *= q;
    if (total > budget) {
      throw std::length_error("ML search space " + std::to_string(q) + "^" + std::to_string(n) +
                              " exceeds budget " + std::to_string(budget));
    }
  }

  const std::vector<Scalar> pts = alphabet<Scalar>(c);
  std::vector<double> metrics(static_cast<std::size_t>(total));
  Eigen::VectorXi digits = Eigen::VectorXi::Zero(n);
  using Vector = typename BasicMimoProblem<Scalar>::Vector;
  Vector base(nr);

  // Digit 0 runs fastest; the residual of the slower digits is rebuilt
  // exactly once per block of q candidates.
  for (std::int64_t t = 0; t < total; t += q) {
    base = problem.y;
    for (int j = 1; j < n; ++j) base.noalias() -= problem.h.col(j) * pts[digits(j)];
    for (int p = 0; p < q; ++p) {
      metrics[static_cast<std::size_t>(t + p)] = (base - problem.h.col(0) * pts[p]).squaredNorm();
    }
    for (int j = 1; j < n; ++j) {
      if (++digits(j) < q) break;
      digits(j) = 0;
    }
  }

  const double scale = exponent_scale<Scalar>(problem.noise_var);
  const double dmin = *std::min_element(metrics.begin(), metrics.end());

  if (mode == MlMode::FullPosterior) {
    Eigen::MatrixXd marg = Eigen::MatrixXd::Zero(n, q);
    digits.setZero();
    for (std::int64_t t = 0; t < total; ++t) {
      const double w = std::exp(-(metrics[static_cast<std::size_t>(t)] - dmin) / scale);
      for (int j = 0; j < n; ++j) marg(j, digits(j)) += w;
      for (int j = 0; j < n; ++j) {
        if (++digits(j) < q) break;
        digits(j) = 0;
      }
    }
    for (int j = 0; j < n; ++j) marg.row(j) /= marg.row(j).sum();
    return soft_output_from_marginals(std::move(marg), c);
  }

  Eigen::MatrixXd best = Eigen::MatrixXd::Constant(n, q, std::numeric_limits<double>::infinity());
  digits.setZero();
  for (std::int64_t t = 0; t < total; ++t) {
    const double d = metrics[static_cast<std::size_t>(t)];
    for (int j = 0; j < n; ++j) best(j, digits(j)) = std::min(best(j, digits(j)), d);
    for (int j = 0; j < n; ++j) {
      if (++digits(j) < q) break;
      digits(j) = 0;
    }
  }
  const int bits = c.bits_per_symbol();
  Eigen::MatrixXd llrs(n, bits);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < bits; ++k) {
      double m0 = std::numeric_limits<double>::infinity();
      double m1 = std::numeric_limits<double>::infinity();
      for (int p = 0; p < q; ++p) {
        double& slot = c.bit(p, k) == 0 ? m0 : m1;
        slot = std::min(slot, best(j, p));
      }
      llrs(j, k) = llr_from_metrics(m0, m1, scale);
    }
  }
  return soft_output_from_llrs(std::move(llrs), c);
}

template <typename Scalar>
typename BasicMimoProblem<Scalar>::Vector lmmse_filter(const BasicMimoProblem<Scalar>& problem) {
  using Matrix = typename BasicMimoProblem<Scalar>::Matrix;
  problem.validate();
  const double es = problem.constellation->avg_energy();
  const int n = problem.n_tx();
  Matrix gram = problem.h.adjoint() * problem.h;
  if (problem.noise_var == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(problem.h);
    if (qr.rank() < n) {
      throw std::domain_error("LMMSE undefined: zero noise variance with rank-deficient channel");
    }
  }
  gram.diagonal().array() += problem.noise_var / es;
  return gram.ldlt().solve(problem.h.adjoint() * problem.y);
}

template <typename Scalar>
SoftOutput detect_lmmse(const BasicMimoProblem<Scalar>& problem) {
  using Matrix = typename BasicMimoProblem<Scalar>::Matrix;
  problem.validate();
  const Constellation& c = *problem.constellation;
  const double es = c.avg_energy();
  const int n = problem.n_tx();
  const double ratio = problem.noise_var / es;

  if (problem.noise_var == 0.0) {
    Eigen::ColPivHouseholderQR<Matrix> qr(problem.h);
    if (qr.rank() < n) {
      throw std::domain_error("LMMSE undefined: zero noise variance with rank-deficient channel");
    }
  }
  Matrix gram = problem.h.adjoint() * problem.h;
  gram.diagonal().array() += ratio;
  const Eigen::LDLT<Matrix> ldlt(gram);
  const auto s_lin = ldlt.solve(problem.h.adjoint() * problem.y).eval();
  const Matrix inv = ldlt.solve(Matrix::Identity(n, n));

  const double lf = likelihood_factor<Scalar>();
  Eigen::MatrixXd logits(n, c.order());
  for (int j = 0; j < n; ++j) {
    // Bias of the MMSE output: (W H)_jj = 1 - ratio * inv_jj.
    const double mu = std::clamp(1.0 - ratio * std::real(inv(j, j)), 1e-12, 1.0);
    const double var = es * (1.0 - mu) / mu;
    const double denom = std::max(lf * var, std::numeric_limits<double>::min());
    const Scalar z = s_lin(j) / mu;
    for (int m = 0; m < c.order(); ++m) {
      logits(j, m) = -std::norm(z - point_as<Scalar>(c.point(m))) / denom;
    }
  }
  return soft_output_from_marginals(softmax_rows(logits), c);
}

template <typename Scalar>
SoftOutput detect_qrm(const BasicMimoProblem<Scalar>& problem, int k_best) {
  using Matrix = typename BasicMimoProblem<Scalar>::Matrix;
  using Vector = typename BasicMimoProblem<Scalar>::Vector;
  problem.validate();
  if (k_best < 1) throw std::invalid_argument("k_best must be >= 1");
  const Constellation& c = *problem.constellation;
  const int q = c.order();
  const int n = problem.n_tx();
  const int bits = c.bits_per_symbol();

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> norms(n);
  for (int j = 0; j < n; ++j) norms[j] = problem.h.col(j).squaredNorm();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return norms[a] < norms[b]; });

  Matrix hs(problem.n_rx(), n);
  for (int j = 0; j < n; ++j) hs.col(j) = problem.h.col(order[j]);
  const Eigen::HouseholderQR<Matrix> qr(hs);
  const Matrix r = qr.matrixQR().topRows(n).template triangularView<Eigen::Upper>();
  const Vector qy = qr.householderQ().adjoint() * problem.y;
  const Vector z = qy.head(n);
  const double outside = qy.tail(problem.n_rx() - n).squaredNorm();

  const std::vector<Scalar> pts = alphabet<Scalar>(c);

  struct Node {
    double metric;
    std::int64_t rank;
    Eigen::VectorXi symbols;
  };
  std::vector<Node> survivors{{outside, 0, Eigen::VectorXi::Constant(n, -1)}};
  std::vector<Node> children;

  for (int level = n - 1; level >= 0; --level) {
    children.clear();
    children.reserve(survivors.size() * static_cast<std::size_t>(q));
    for (std::size_t sidx = 0; sidx < survivors.size(); ++sidx) {
      const Node& parent = survivors[sidx];
      Scalar target = z(level);
      for (int j = level + 1; j < n; ++j) target -= r(level, j) * pts[parent.symbols(j)];
      for (int p = 0; p < q; ++p) {
        Node child{parent.metric + std::norm(target - r(level, level) * pts[p]),
                   static_cast<std::int64_t>(sidx) * q + p, parent.symbols};
        child.symbols(level) = p;
        children.push_back(std::move(child));
      }
    }
    const std::size_t keep = std::min<std::size_t>(children.size(), static_cast<std::size_t>(k_best));
    std::partial_sort(children.begin(), children.begin() + static_cast<std::ptrdiff_t>(keep),
                      children.end(), [](const Node& a, const Node& b) {
                        return a.metric < b.metric || (a.metric == b.metric && a.rank < b.rank);
                      });
    children.resize(keep);
    std::swap(survivors, children);
  }

  const double scale = exponent_scale<Scalar>(problem.noise_var);
  const double worst = survivors.back().metric;
  const double fallback = worst + kLlrClamp * scale;
  Eigen::MatrixXd llrs(n, bits);
  for (int j = 0; j < n; ++j) {
    for (int k = 0; k < bits; ++k) {
      double m0 = std::numeric_limits<double>::infinity();
      double m1 = std::numeric_limits<double>::infinity();
      for (const Node& s : survivors) {
        double& slot = c.bit(s.symbols(j), k) == 0 ? m0 : m1;
        slot = std::min(slot, s.metric);
      }
      if (!std::isfinite(m0)) m0 = fallback;
      if (!std::isfinite(m1)) m1 = fallback;
      // Row j of the sorted system is original layer order[j].
      llrs(order[j], k) = llr_from_metrics(m0, m1, scale);
    }
  }
  return soft_output_from_llrs(std::move(llrs), c);
}

template SoftOutput detect_ml<cdouble>(const MimoProblem&, MlMode, std::int64_t);
template SoftOutput detect_ml<double>(const RealMimoProblem&, MlMode, std::int64_t);
template SoftOutput detect_lmmse<cdouble>(const MimoProblem&);
template SoftOutput detect_lmmse<double>(const RealMimoProblem&);
template MimoProblem::Vector lmmse_filter<cdouble>(const MimoProblem&);
template RealMimoProblem::Vector lmmse_filter<double>(const RealMimoProblem&);
template SoftOutput detect_qrm<cdouble>(const MimoProblem&, int);
template SoftOutput detect_qrm<double>(const RealMimoProblem&, int);

Detector make_classical_detector(const std::string& tag, std::int64_t ml_budget) {
  if (tag == "ml") {
    return [ml_budget](const MimoProblem& p) { return detect_ml(p, MlMode::FullPosterior, ml_budget); };
  }
  if (tag == "ml:maxlog") {
    return [ml_budget](const MimoProblem& p) { return detect_ml(p, MlMode::MaxLog, ml_budget); };
  }
  if (tag == "lmmse") {
    return [](const MimoProblem& p) { return detect_lmmse(p); };
  }
  if (tag.rfind("qrm:", 0) == 0) {
    std::size_t used = 0;
    int k = 0;
    try {
      k = std::stoi(tag.substr(4), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tag.size() - 4 || k < 1) {
      throw std::invalid_argument("bad QRM tag '" + tag + "' (expected qrm:<k>, k >= 1)");
    }
    return [k](const MimoProblem& p) { return detect_qrm(p, k); };
  }
  throw std::invalid_argument("unknown detector tag '" + tag + "'");
}

}  // namespace mres
