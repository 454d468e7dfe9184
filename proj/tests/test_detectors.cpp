#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mres/detectors.hpp"
#include "mres/mimo_model.hpp"

using namespace mres;

namespace {

// Brute-force posterior: explicit candidate list, direct exponentials.
Eigen::MatrixXd oracle_posterior(const MimoProblem& p) {
  const int q = p.constellation->order();
  const int n = p.n_tx();
  long total = 1;
  for (int i = 0; i < n; ++i) total *= q;
  std::vector<double> metric(static_cast<std::size_t>(total));
  std::vector<std::vector<int>> cand(static_cast<std::size_t>(total), std::vector<int>(n));
  for (long idx = 0; idx < total; ++idx) {
    long rest = idx;
    Eigen::VectorXcd s(n);
    for (int i = n - 1; i >= 0; --i) {
      cand[idx][i] = static_cast<int>(rest % q);
      rest /= q;
      s(i) = p.constellation->point(cand[idx][i]);
    }
    metric[idx] = (p.y - p.h * s).squaredNorm();
  }
  const double best = *std::min_element(metric.begin(), metric.end());
  Eigen::MatrixXd post = Eigen::MatrixXd::Zero(n, q);
  double z = 0.0;
  for (long idx = 0; idx < total; ++idx) {
    const double w = std::exp(-(metric[idx] - best) / p.noise_var);
    z += w;
    for (int i = 0; i < n; ++i) post(i, cand[idx][i]) += w;
  }
  return post / z;
}

Eigen::VectorXi oracle_argmin(const MimoProblem& p) {
  const int q = p.constellation->order();
  const int n = p.n_tx();
  Eigen::VectorXi best_s(n), s(n);
  double best = 1e300;
  std::function<void(int)> rec = [&](int layer) {
    if (layer == n) {
      const double m = (p.y - p.h * p.symbols(s)).squaredNorm();
      if (m < best) {
        best = m;
        best_s = s;
      }
      return;
    }
    for (int k = 0; k < q; ++k) {
      s(layer) = k;
      rec(layer + 1);
    }
  };
  rec(0);
  return best_s;
}

// Successive interference cancellation in the QRM column order.
Eigen::VectorXi oracle_sic(const MimoProblem& p) {
  const int n = p.n_tx();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return p.h.col(a).norm() < p.h.col(b).norm(); });
  Eigen::MatrixXcd hp(p.n_rx(), n);
  for (int i = 0; i < n; ++i) hp.col(i) = p.h.col(order[i]);
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(hp);
  const Eigen::MatrixXcd qm = qr.householderQ() * Eigen::MatrixXcd::Identity(p.n_rx(), n);
  const Eigen::MatrixXcd r = qm.adjoint() * hp;
  const Eigen::VectorXcd z = qm.adjoint() * p.y;
  Eigen::VectorXcd x = Eigen::VectorXcd::Zero(n);
  Eigen::VectorXi out(n);
  for (int i = n - 1; i >= 0; --i) {
    cdouble acc = z(i);
    for (int k = i + 1; k < n; ++k) acc -= r(i, k) * x(k);
    int best = 0;
    double bd = 1e300;
    for (int c = 0; c < p.constellation->order(); ++c) {
      const double d = std::norm(acc - r(i, i) * p.constellation->point(c));
      if (d < bd) {
        bd = d;
        best = c;
      }
    }
    x(i) = p.constellation->point(best);
    out(order[i]) = best;
  }
  return out;
}

SimConfig small_config(int n_rx, int n_tx, int order) {
  SimConfig c;
  c.n_rx = n_rx;
  c.n_tx = n_tx;
  c.order = order;
  return c;
}

}  // namespace

TEST(Detectors, MlPosteriorMatchesEnumerationOracle) {
  const SimConfig cfg = small_config(3, 3, 4);
  const auto c = cfg.make_constellation();
  for (std::uint64_t t = 0; t < 40; ++t) {
    const MimoProblem p = draw_problem(cfg, c, 6.0, t);
    const SoftOutput out = detect_ml(p);
    const Eigen::MatrixXd ref = oracle_posterior(p);
    EXPECT_LT((out.marginals - ref).cwiseAbs().maxCoeff(), 1e-12);
    for (int i = 0; i < p.n_tx(); ++i) {
      Eigen::Index k;
      ref.row(i).maxCoeff(&k);
      EXPECT_EQ(out.hard(i), k);
    }
  }
}

TEST(Detectors, MlMaxLogHardIsGlobalArgmin) {
  const SimConfig cfg = small_config(2, 3, 16);
  const auto c = cfg.make_constellation();
  for (std::uint64_t t = 0; t < 20; ++t) {
    const MimoProblem p = draw_problem(cfg, c, 10.0, t);
    const SoftOutput maxlog = detect_ml(p, MlMode::MaxLog);
    const Eigen::VectorXi ref = oracle_argmin(p);
    EXPECT_EQ(maxlog.hard, ref);
    // Max-log LLR signs agree with the bits of the minimizer.
    for (int i = 0; i < p.n_tx(); ++i) {
      for (int b = 0; b < c->bits_per_symbol(); ++b) {
        if (std::abs(maxlog.llrs(i, b)) > 1e-9) {
          EXPECT_EQ(maxlog.llrs(i, b) < 0, c->bit(ref(i), b) == 1);
        }
      }
    }
  }
}

TEST(Detectors, MlBudgetEnforced) {
  const SimConfig cfg = small_config(4, 4, 16);
  const auto c = cfg.make_constellation();
  const MimoProblem p = draw_problem(cfg, c, 10.0, 0);
  EXPECT_THROW(detect_ml(p, MlMode::FullPosterior, 1000), std::length_error);
  EXPECT_THROW(make_classical_detector("ml", 1000)(p), std::length_error);
}

TEST(Detectors, QrmSaturatedEqualsMl) {
  const SimConfig cfg = small_config(3, 3, 4);
  const auto c = cfg.make_constellation();
  for (std::uint64_t t = 0; t < 50; ++t) {
    const MimoProblem p = draw_problem(cfg, c, 4.0, t);
    EXPECT_EQ(detect_qrm(p, 16).hard, detect_ml(p, MlMode::MaxLog).hard);
  }
}

TEST(Detectors, QrmSingleSurvivorIsSic) {
  const SimConfig cfg = small_config(4, 4, 16);
  const auto c = cfg.make_constellation();
  for (std::uint64_t t = 0; t < 50; ++t) {
    const MimoProblem p = draw_problem(cfg, c, 15.0, t);
    EXPECT_EQ(detect_qrm(p, 1).hard, oracle_sic(p));
  }
}

TEST(Detectors, QrmLlrsFinite) {
  const SimConfig cfg = small_config(4, 4, 16);
  const auto c = cfg.make_constellation();
  const MimoProblem p = draw_problem(cfg, c, 15.0, 3);
  const SoftOutput out = detect_qrm(p, 4);
  EXPECT_TRUE(out.llrs.allFinite());
  EXPECT_LE(out.llrs.cwiseAbs().maxCoeff(), kLlrClamp);
  EXPECT_THROW(detect_qrm(p, 0), std::invalid_argument);
}

TEST(Detectors, LmmseScalarClosedForm) {
  auto c = std::make_shared<const Constellation>(Constellation::make(ModulationKind::Qam, 4));
  MimoProblem p;
  p.h = Eigen::MatrixXcd::Constant(1, 1, cdouble(0.8, -0.6));
  p.y = Eigen::VectorXcd::Constant(1, cdouble(0.7, 1.3));
  p.noise_var = 0.5;
  p.constellation = c;
  const cdouble h = p.h(0, 0);
  const cdouble expect = std::conj(h) * p.y(0) / (std::norm(h) + p.noise_var / c->avg_energy());
  EXPECT_LT(std::abs(lmmse_filter(p)(0) - expect), 1e-14);
  const SoftOutput out = detect_lmmse(p);
  EXPECT_EQ(out.hard(0), c->nearest(expect));
}

TEST(Detectors, LmmseApproachesZfAtHighSnr) {
  const SimConfig cfg = small_config(4, 2, 16);
  const auto c = cfg.make_constellation();
  const MimoProblem p = draw_problem(cfg, c, 80.0, 0);
  EXPECT_EQ(detect_lmmse(p).hard, *p.s_true);
}

TEST(Detectors, LmmseRankDeficientNoiselessThrows) {
  auto c = std::make_shared<const Constellation>(Constellation::make(ModulationKind::Qam, 4));
  MimoProblem p;
  p.h = Eigen::MatrixXcd::Ones(2, 2);
  p.y = Eigen::VectorXcd::Ones(2);
  p.noise_var = 0.0;
  p.constellation = c;
  EXPECT_THROW(detect_lmmse(p), std::domain_error);
}

TEST(Detectors, ClassicalTags) {
  EXPECT_NO_THROW(make_classical_detector("qrm:8"));
  EXPECT_NO_THROW(make_classical_detector("ml:maxlog"));
  EXPECT_THROW(make_classical_detector("qrm:"), std::invalid_argument);
  EXPECT_THROW(make_classical_detector("zf"), std::invalid_argument);
}

TEST(Detectors, MlAtLeastAsGoodAsLmmseOnSharedTrials) {
  const SimConfig cfg = small_config(2, 2, 16);
  const auto c = cfg.make_constellation();
  ErrorCount ml, lmmse;
  for (std::uint64_t t = 0; t < 2000; ++t) {
    const MimoProblem p = draw_problem(cfg, c, 18.0, t);
    ml += count_errors(detect_ml(p).hard, *p.s_true, *c);
    lmmse += count_errors(detect_lmmse(p).hard, *p.s_true, *c);
  }
  EXPECT_LT(ml.symbol_errors, lmmse.symbol_errors);
}

TEST(Detectors, SixteenQamFourByFourMonteCarlo) {
  // 1e4 shared realizations at 18 dB: QRM-16 within 1.15x of ML, LMMSE no better than ML.
  const SimConfig cfg = small_config(4, 4, 16);
  const auto c = cfg.make_constellation();
  ErrorCount ml, qrm, lmmse;
  for (std::uint64_t t = 0; t < 10000; ++t) {
    const MimoProblem p = draw_problem(cfg, c, 18.0, t);
    ml += count_errors(detect_ml(p).hard, *p.s_true, *c);
    qrm += count_errors(detect_qrm(p, 16).hard, *p.s_true, *c);
    lmmse += count_errors(detect_lmmse(p).hard, *p.s_true, *c);
  }
  EXPECT_LE(qrm.symbol_errors, 1.15 * ml.symbol_errors);
  EXPECT_GE(lmmse.symbol_errors, ml.symbol_errors);
}

TEST(Detectors, TrivialMlCases) {
  const SimConfig cfg = small_config(3, 3, 16);
  const auto c = cfg.make_constellation();
  const MimoProblem p = draw_problem(cfg, c, 300.0, 5);
  EXPECT_EQ(detect_ml(p).hard, *p.s_true);

  auto bpsk = std::make_shared<const Constellation>(Constellation::make(ModulationKind::Pam, 2));
  for (double nv : {0.01, 1.0, 100.0}) {
    MimoProblem q;
    q.h = Eigen::MatrixXcd::Ones(1, 1);
    q.y = Eigen::VectorXcd::Constant(1, cdouble(0.3, 0.0));
    q.noise_var = nv;
    q.constellation = bpsk;
    EXPECT_DOUBLE_EQ(bpsk->point(detect_ml(q).hard(0)).real(), 1.0);
    EXPECT_DOUBLE_EQ(bpsk->point(detect_ml(q, MlMode::MaxLog).hard(0)).real(), 1.0);
  }
}

TEST(Detectors, TrivialLmmseCases) {
  auto c = std::make_shared<const Constellation>(Constellation::make(ModulationKind::Qam, 16, true));
  MimoProblem p;
  p.h = Eigen::MatrixXcd::Ones(1, 1);
  p.y = Eigen::VectorXcd::Constant(1, cdouble(0.4, -0.2));
  p.noise_var = 1.0;
  p.constellation = c;
  EXPECT_LT(std::abs(lmmse_filter(p)(0) - p.y(0) / 2.0), 1e-15);

  MimoProblem q;
  q.h = Eigen::MatrixXcd::Identity(3, 3);
  q.y = Eigen::VectorXcd(3);
  q.y << cdouble(0.2, 0.9), cdouble(-0.7, -0.1), cdouble(1.3, 0.3);
  q.noise_var = 1e-12;
  q.constellation = c;
  EXPECT_LT((lmmse_filter(q) - q.y).norm(), 1e-10);
  const SoftOutput out = detect_lmmse(q);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(out.hard(i), c->nearest(q.y(i)));
}

TEST(Detectors, SoftOutputInvariantsHoldForEveryDetector) {
  const SimConfig cfg = small_config(3, 2, 16);
  const auto c = cfg.make_constellation();
  for (const std::string tag : {"ml", "ml:maxlog", "lmmse", "qrm:1", "qrm:8"}) {
    const Detector d = make_classical_detector(tag);
    for (std::uint64_t t = 0; t < 10; ++t) {
      const SoftOutput out = d(draw_problem(cfg, c, 8.0, t));
      ASSERT_EQ(out.marginals.rows(), 2) << tag;
      EXPECT_GE(out.marginals.minCoeff(), 0.0);
      for (int i = 0; i < 2; ++i) EXPECT_NEAR(out.marginals.row(i).sum(), 1.0, 1e-9);
      EXPECT_EQ(out.hard, argmax_rows(out.marginals)) << tag;
      EXPECT_LT((out.soft_symbols - expected_symbols(out.marginals, *c)).cwiseAbs().maxCoeff(), 1e-9);
      EXPECT_LT((out.llrs - marginals_to_llr(out.marginals, *c)).cwiseAbs().maxCoeff(), 1e-6) << tag;
    }
  }
}
