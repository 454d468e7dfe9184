#include "mres/soft_output.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mres {

namespace {

double clamp_llr(double v) {
  if (std::isnan(v)) return 0.0;
  return std::clamp(v, -kLlrClamp, kLlrClamp);
}

// log(1 + exp(x)) without overflow.
double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

Eigen::VectorXi argmax_rows(const Eigen::MatrixXd& marginals) {
  Eigen::VectorXi out(marginals.rows());
  for (Eigen::Index r = 0; r < marginals.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < marginals.cols(); ++c) {
      if (marginals(r, c) > marginals(r, best)) best = c;
    }
    out(r) = static_cast<int>(best);
  }
  return out;
}

Eigen::MatrixXd marginals_to_llr(const Eigen::MatrixXd& marginals, const Constellation& c) {
  const int bits = c.bits_per_symbol();
  Eigen::MatrixXd llrs(marginals.rows(), bits);
  for (Eigen::Index r = 0; r < marginals.rows(); ++r) {
    for (int k = 0; k < bits; ++k) {
      double p0 = 0.0;
      double p1 = 0.0;
      for (int m = 0; m < c.order(); ++m) {
        (c.bit(m, k) == 0 ? p0 : p1) += marginals(r, m);
      }
      if (p0 <= 0.0 && p1 <= 0.0) {
        llrs(r, k) = 0.0;
      } else {
        llrs(r, k) = clamp_llr(std::log(p0) - std::log(p1));
      }
    }
  }
  return llrs;
}

Eigen::MatrixXd llr_to_marginals(const Eigen::MatrixXd& llrs, const Constellation& c) {
  const int bits = c.bits_per_symbol();
  if (llrs.cols() != bits) throw std::invalid_argument("LLR width does not match constellation");
  Eigen::MatrixXd logp(llrs.rows(), c.order());
  for (Eigen::Index r = 0; r < llrs.rows(); ++r) {
    for (int m = 0; m < c.order(); ++m) {
      double acc = 0.0;
      for (int k = 0; k < bits; ++k) {
        // log p(bit) = -softplus(-L) for bit 0, -softplus(L) for bit 1.
        const double l = llrs(r, k);
        acc -= softplus(c.bit(m, k) == 0 ? -l : l);
      }
      logp(r, m) = acc;
    }
  }
  return softmax_rows(logp);
}

Eigen::VectorXcd expected_symbols(const Eigen::MatrixXd& marginals, const Constellation& c) {
  Eigen::VectorXcd pts(c.order());
  for (int m = 0; m < c.order(); ++m) pts(m) = c.point(m);
  return marginals.cast<std::complex<double>>() * pts;
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

SoftOutput soft_output_from_marginals(Eigen::MatrixXd marginals, const Constellation& c) {
  SoftOutput out;
  out.hard = argmax_rows(marginals);
  out.soft_symbols = expected_symbols(marginals, c);
  out.llrs = marginals_to_llr(marginals, c);
  out.marginals = std::move(marginals);
  return out;
}

SoftOutput soft_output_from_llrs(Eigen::MatrixXd llrs, const Constellation& c) {
  SoftOutput out;
  out.marginals = llr_to_marginals(llrs, c);
  out.hard = argmax_rows(out.marginals);
  out.soft_symbols = expected_symbols(out.marginals, c);
  out.llrs = std::move(llrs);
  return out;
}

ErrorCount count_errors(const Eigen::VectorXi& hard, const Eigen::VectorXi& s_true,
                        const Constellation& c) {
  if (hard.size() != s_true.size()) throw std::invalid_argument("count_errors: length mismatch");
  ErrorCount e;
  e.symbols = hard.size();
  e.bits = hard.size() * c.bits_per_symbol();
  for (Eigen::Index i = 0; i < hard.size(); ++i) {
    if (hard(i) != s_true(i)) {
      ++e.symbol_errors;
      e.bit_errors += std::popcount(c.label(hard(i)) ^ c.label(s_true(i)));
    }
  }
  return e;
}

}  // namespace mres
