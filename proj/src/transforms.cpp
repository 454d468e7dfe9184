#include "mres/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mres/stats.hpp"

namespace mres {

namespace {

cdouble maybe_conj(cdouble v, bool conj) { return conj ? std::conj(v) : v; }

bool is_bijection(const std::vector<int>& perm) {
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= static_cast<int>(perm.size()) || seen[p]) return false;
    seen[p] = true;
  }
  return true;
}

std::string kind_name(TransformKind kind) {
  switch (kind) {
    case TransformKind::Identity: return "identity";
    case TransformKind::Negation: return "neg";
    case TransformKind::Conjugate: return "conj";
    case TransformKind::Permutation: return "perm";
    case TransformKind::Unitary: return "unitary";
    case TransformKind::ConjugateRotated: return "conj_rot";
    case TransformKind::Composite: return "composite";
    case TransformKind::Scaling: return "scale";
  }
  return "unknown";
}

}  // namespace

InvariantTransform InvariantTransform::identity() { return {}; }

InvariantTransform InvariantTransform::negation() {
  InvariantTransform t;
  t.kind_ = TransformKind::Negation;
  t.gain_ = -1.0;
  return t;
}

InvariantTransform InvariantTransform::conjugate() {
  InvariantTransform t;
  t.kind_ = TransformKind::Conjugate;
  t.conjugate_ = true;
  return t;
}

InvariantTransform InvariantTransform::permutation(std::vector<int> perm) {
  if (!is_bijection(perm)) throw std::invalid_argument("permutation is not a bijection");
  InvariantTransform t;
  t.kind_ = TransformKind::Permutation;
  t.perm_ = std::move(perm);
  return t;
}

InvariantTransform InvariantTransform::unitary(Eigen::MatrixXcd q) {
  if (q.rows() != q.cols()) throw std::invalid_argument("unitary transform must be square");
  const Eigen::MatrixXcd gram = q.adjoint() * q;
  if (!gram.isIdentity(1e-10)) throw std::invalid_argument("matrix is not unitary (Q^H Q != I)");
  InvariantTransform t;
  t.kind_ = TransformKind::Unitary;
  t.rotation_ = std::move(q);
  return t;
}

InvariantTransform InvariantTransform::conjugate_rotated(cdouble phase) {
  if (std::abs(std::abs(phase) - 1.0) > 1e-12) {
    throw std::invalid_argument("conjugate-rotated phase must have unit modulus");
  }
  InvariantTransform t;
  t.kind_ = TransformKind::ConjugateRotated;
  t.conjugate_ = true;
  t.phase_ = phase;
  return t;
}

InvariantTransform InvariantTransform::scaling(double gain) {
  InvariantTransform t;
  t.kind_ = TransformKind::Scaling;
  t.gain_ = gain;
  return t;
}

InvariantTransform InvariantTransform::compose(const InvariantTransform& first,
                                               const InvariantTransform& second) {
  const bool c2 = second.conjugate_;
  InvariantTransform t;
  t.kind_ = TransformKind::Composite;
  t.conjugate_ = first.conjugate_ != second.conjugate_;
  t.gain_ = second.gain_ * maybe_conj(first.gain_, c2);
  t.phase_ = second.phase_ * maybe_conj(first.phase_, c2);

  if (first.rotation_ || second.rotation_) {
    std::optional<Eigen::MatrixXcd> q1;
    if (first.rotation_) q1 = c2 ? first.rotation_->conjugate().eval() : *first.rotation_;
    if (q1 && second.rotation_) {
      if (q1->rows() != second.rotation_->cols()) {
        throw std::invalid_argument("composed unitaries have different sizes");
      }
      t.rotation_ = (*second.rotation_ * *q1).eval();
    } else {
      t.rotation_ = q1 ? *q1 : *second.rotation_;
    }
  }

  if (!first.perm_.empty() || !second.perm_.empty()) {
    const std::size_t n = std::max(first.perm_.size(), second.perm_.size());
    if (!first.perm_.empty() && !second.perm_.empty() && first.perm_.size() != second.perm_.size()) {
      throw std::invalid_argument("composed permutations have different sizes");
    }
    t.perm_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int mid = second.perm_.empty() ? static_cast<int>(i) : second.perm_[i];
      t.perm_[i] = first.perm_.empty() ? mid : first.perm_[mid];
    }
  }
  return t;
}

std::string InvariantTransform::name() const { return kind_name(kind_); }

cdouble InvariantTransform::map_symbol(cdouble s) const {
  return std::conj(phase_) * maybe_conj(s, conjugate_);
}

cdouble InvariantTransform::unmap_symbol(cdouble s) const {
  return maybe_conj(phase_ * s, conjugate_);
}

Eigen::VectorXcd InvariantTransform::map_observation(const Eigen::VectorXcd& y) const {
  Eigen::VectorXcd v = conjugate_ ? y.conjugate().eval() : y;
  if (rotation_) v = (*rotation_ * v).eval();
  return gain_ * v;
}

Eigen::MatrixXcd InvariantTransform::map_channel(const Eigen::MatrixXcd& h) const {
  Eigen::MatrixXcd x = conjugate_ ? h.conjugate().eval() : h;
  if (rotation_) x = (*rotation_ * x).eval();
  x *= gain_ * phase_;
  if (perm_.empty()) return x;
  Eigen::MatrixXcd out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) out.col(i) = x.col(perm_[static_cast<std::size_t>(i)]);
  return out;
}

void InvariantTransform::check_dimensions(int n_rx, int n_tx) const {
  if (rotation_ && rotation_->rows() != n_rx) {
    throw std::invalid_argument("unitary size " + std::to_string(rotation_->rows()) +
                                " does not match n_rx " + std::to_string(n_rx));
  }
  if (!perm_.empty() && static_cast<int>(perm_.size()) != n_tx) {
    throw std::invalid_argument("permutation size " + std::to_string(perm_.size()) +
                                " does not match n_tx " + std::to_string(n_tx));
  }
}

std::vector<int> induced_point_map(const InvariantTransform& t, const Constellation& c) {
  std::vector<int> table(c.order());
  for (int p = 0; p < c.order(); ++p) {
    const int img = c.find(t.map_symbol(c.point(p)));
    if (img < 0) {
      throw std::invalid_argument(c.name() + " is not closed under the symbol map of '" +
                                  t.name() + "'");
    }
    table[p] = img;
  }
  return table;
}

LabelMap induced_label_map(const std::vector<int>& point_map, const Constellation& c) {
  const int bits = c.bits_per_symbol();
  LabelMap lm;
  lm.source.assign(bits, -1);
  lm.flip.assign(bits, false);
  for (int k = 0; k < bits; ++k) {
    for (int kk = 0; kk < bits && lm.source[k] < 0; ++kk) {
      for (int f = 0; f < 2; ++f) {
        bool ok = true;
        for (int p = 0; p < c.order() && ok; ++p) {
          ok = c.bit(p, k) == (c.bit(point_map[p], kk) ^ f);
        }
        if (ok) {
          lm.source[k] = kk;
          lm.flip[k] = f == 1;
          break;
        }
      }
    }
    if (lm.source[k] < 0) {
      throw std::invalid_argument("symbol map does not act on " + c.name() +
                                  " labels as a bit permutation with flips");
    }
  }
  return lm;
}

TransformedProblem apply_transform(const InvariantTransform& t, const MimoProblem& problem) {
  problem.validate();
  t.check_dimensions(problem.n_rx(), problem.n_tx());
  std::vector<int> pmap = induced_point_map(t, *problem.constellation);

  MimoProblem out;
  out.constellation = problem.constellation;
  out.h = t.map_channel(problem.h);
  out.y = t.map_observation(problem.y);
  out.noise_var = std::norm(t.gain()) * problem.noise_var;
  if (problem.s_true) {
    Eigen::VectorXi s(problem.n_tx());
    for (int i = 0; i < problem.n_tx(); ++i) s(i) = pmap[(*problem.s_true)(t.source_layer(i))];
    out.s_true = s;
  }
  return {std::move(out), t, std::move(pmap)};
}

SoftOutput backmap_estimate(const InvariantTransform& t, const Constellation& c,
                            const SoftOutput& out) {
  const std::vector<int> pmap = induced_point_map(t, c);
  std::vector<int> inverse(pmap.size());
  for (std::size_t p = 0; p < pmap.size(); ++p) inverse[pmap[p]] = static_cast<int>(p);
  const int n = out.n_tx();
  if (!t.perm().empty() && static_cast<int>(t.perm().size()) != n) {
    throw std::invalid_argument("output layer count does not match the permutation");
  }

  SoftOutput back;
  back.hard.resize(n);
  back.soft_symbols.resize(n);
  for (int i = 0; i < n; ++i) {
    const int src = t.source_layer(i);
    back.hard(src) = inverse[out.hard(i)];
    back.soft_symbols(src) = t.unmap_symbol(out.soft_symbols(i));
  }
  if (out.marginals.size() > 0) {
    back.marginals.resize(n, c.order());
    for (int i = 0; i < n; ++i) {
      for (int p = 0; p < c.order(); ++p) {
        back.marginals(t.source_layer(i), p) = out.marginals(i, pmap[p]);
      }
    }
  }
  if (out.llrs.size() > 0) {
    const LabelMap lm = induced_label_map(pmap, c);
    back.llrs.resize(n, c.bits_per_symbol());
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < c.bits_per_symbol(); ++k) {
        const double l = out.llrs(i, lm.source[k]);
        back.llrs(t.source_layer(i), k) = lm.flip[k] ? -l : l;
      }
    }
  }
  return back;
}

SoftOutput backmap_estimate(const TransformedProblem& tp, const SoftOutput& out) {
  return backmap_estimate(tp.source, *tp.problem.constellation, out);
}

Eigen::MatrixXcd random_unitary(int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("random_unitary: n must be >= 1");
  Eigen::MatrixXcd z(n, n);
  for (int c = 0; c < n; ++c) {
    for (int r = 0; r < n; ++r) z(r, c) = rng.complex_normal();
  }
  const Eigen::HouseholderQR<Eigen::MatrixXcd> qr(z);
  Eigen::MatrixXcd q = qr.householderQ();
  for (int j = 0; j < n; ++j) {
    const cdouble d = qr.matrixQR()(j, j);
    const double mag = std::abs(d);
    if (mag > 0.0) q.col(j) *= d / mag;
  }
  return q;
}

std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  // Explicit Fisher-Yates: std::shuffle's draw pattern is library-defined.
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);
  return perm;
}

TransformTag parse_transform_tag(const std::string& tag) {
  if (tag == "identity") return TransformTag::Identity;
  if (tag == "neg") return TransformTag::Neg;
  if (tag == "conj_rot") return TransformTag::ConjRot;
  if (tag == "perm") return TransformTag::Perm;
  if (tag == "unitary") return TransformTag::Unitary;
  throw std::invalid_argument("unknown transform tag '" + tag + "'");
}

std::string to_string(TransformTag tag) {
  switch (tag) {
    case TransformTag::Identity: return "identity";
    case TransformTag::Neg: return "neg";
    case TransformTag::ConjRot: return "conj_rot";
    case TransformTag::Perm: return "perm";
    case TransformTag::Unitary: return "unitary";
  }
  return "unknown";
}

std::vector<TransformTag> parse_transform_set(const std::vector<std::string>& tags) {
  if (tags.empty()) throw std::invalid_argument("transform set must not be empty");
  std::vector<TransformTag> out;
  out.reserve(tags.size());
  for (const auto& t : tags) out.push_back(parse_transform_tag(t));
  return out;
}

std::vector<InvariantTransform> instantiate_transforms(const std::vector<TransformTag>& set,
                                                       int n_rx, int n_tx, Rng& rng) {
  std::vector<InvariantTransform> out;
  out.reserve(set.size());
  for (TransformTag tag : set) {
    switch (tag) {
      case TransformTag::Identity: out.push_back(InvariantTransform::identity()); break;
      case TransformTag::Neg: out.push_back(InvariantTransform::negation()); break;
      case TransformTag::ConjRot:
        out.push_back(InvariantTransform::conjugate_rotated({0.0, 1.0}));
        break;
      case TransformTag::Perm:
        out.push_back(InvariantTransform::permutation(random_permutation(n_tx, rng)));
        break;
      case TransformTag::Unitary:
        out.push_back(InvariantTransform::unitary(random_unitary(n_rx, rng)));
        break;
    }
  }
  return out;
}

InvarianceReport verify_invariance(const std::function<InvariantTransform(Rng&)>& make_transform,
                                   const std::string& name, const SimConfig& config,
                                   int n_samples, double alpha) {
  config.validate();
  if (n_samples < 1) throw std::invalid_argument("verify_invariance: n_samples must be >= 1");
  const auto constellation = config.make_constellation();
  const double nv = snr_to_noise_var(config.snr_db, *constellation, config.n_tx);
  const double amp = std::sqrt(nv);

  enum { HRe, HIm, SRe, SIm, NRe, NIm, Count };
  const char* labels[Count] = {"channel_re", "channel_im", "symbol_re",
                               "symbol_im",  "noise_re",   "noise_im"};
  std::vector<double> got[Count];
  std::vector<double> ref[Count];

  auto draw = [&](std::uint64_t seed, Stream stream, std::uint64_t i) {
    Rng rng(seed, stream, i);
    Eigen::MatrixXcd h = sample_channel(config.n_rx, config.n_tx, rng);
    Eigen::VectorXcd s(config.n_tx);
    for (int k = 0; k < config.n_tx; ++k) {
      s(k) = constellation->point(rng.uniform_int(0, constellation->order() - 1));
    }
    Eigen::VectorXcd n(config.n_rx);
    for (int k = 0; k < config.n_rx; ++k) n(k) = amp * rng.complex_normal();
    return std::make_tuple(std::move(h), std::move(s), std::move(n));
  };
  auto push = [](std::vector<double>* dst, const auto& h, const auto& s, const auto& n) {
    for (Eigen::Index k = 0; k < h.size(); ++k) {
      dst[HRe].push_back(h.data()[k].real());
      dst[HIm].push_back(h.data()[k].imag());
    }
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      dst[SRe].push_back(s(k).real());
      dst[SIm].push_back(s(k).imag());
    }
    for (Eigen::Index k = 0; k < n.size(); ++k) {
      dst[NRe].push_back(n(k).real());
      dst[NIm].push_back(n(k).imag());
    }
  };

  for (int i = 0; i < n_samples; ++i) {
    const auto idx = static_cast<std::uint64_t>(i);
    auto [h, s, n] = draw(config.master_seed, Stream::Synthetic, idx);
    Rng trng(config.master_seed, Stream::Transform, idx);
    const InvariantTransform t = make_transform(trng);
    t.check_dimensions(config.n_rx, config.n_tx);
    Eigen::VectorXcd s2(config.n_tx);
    for (int k = 0; k < config.n_tx; ++k) s2(k) = t.map_symbol(s(t.source_layer(k)));
    push(got, t.map_channel(h), s2, t.map_observation(n));

    auto [rh, rs, rn] = draw(config.master_seed, Stream::Reference, idx);
    push(ref, rh, rs, rn);
  }

  InvarianceReport report;
  report.transform = name;
  report.n_samples = n_samples;
  report.alpha = alpha;
  for (int q = 0; q < Count; ++q) {
    // The imaginary parts of a real (PAM) alphabet are identically zero.
    const auto [lo, hi] = std::minmax_element(ref[q].begin(), ref[q].end());
    const auto [glo, ghi] = std::minmax_element(got[q].begin(), got[q].end());
    KsResult r;
    r.quantity = labels[q];
    if (*lo == *hi && *glo == *ghi) {
      r.statistic = *lo == *glo ? 0.0 : 1.0;
      r.p_value = *lo == *glo ? 1.0 : 0.0;
    } else {
      const stats::KsTest ks = stats::ks_two_sample(got[q], ref[q]);
      r.statistic = ks.statistic;
      r.p_value = ks.p_value;
    }
    r.pass = r.p_value >= alpha;
    report.pass = report.pass && r.pass;
    report.tests.push_back(r);
  }
  return report;
}

InvarianceReport verify_invariance(TransformTag tag, const SimConfig& config, int n_samples,
                                   double alpha) {
  return verify_invariance(
      [&](Rng& rng) {
        return instantiate_transforms({tag}, config.n_rx, config.n_tx, rng).front();
      },
      to_string(tag), config, n_samples, alpha);
}

}  // namespace mres
