#include "mres/resampler.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "mres/parallel.hpp"

namespace mres {

using nlohmann::json;

std::vector<double> variance_curve(double rho, double sigma2, const std::vector<int>& m_values) {
  std::vector<double> out;
  out.reserve(m_values.size());
  for (int m : m_values) {
    if (m < 1) throw std::domain_error("M must be >= 1");
    if (!(rho <= 1.0) || !(rho > min_equicorrelation(m))) {
      throw std::domain_error("rho = " + std::to_string(rho) +
                              " gives a non-PSD equicorrelated matrix for M = " + std::to_string(m));
    }
    out.push_back((rho + (1.0 - rho) / m) * sigma2);
  }
  return out;
}

ErrorStats error_stats_from_samples(const Eigen::MatrixXd& errors) {
  const Eigen::Index n = errors.rows();
  const Eigen::Index m = errors.cols();
  if (n < 2 || m < 1) throw std::invalid_argument("need at least two observations of one channel");
  ErrorStats st;
  st.m = static_cast<int>(m);
  st.n_obs = n;
  st.mean_error = errors.colwise().mean().transpose();
  const Eigen::MatrixXd centred = errors.rowwise() - st.mean_error.transpose();
  st.r = (centred.transpose() * centred) / static_cast<double>(n - 1);
  st.r = 0.5 * (st.r + st.r.transpose()).eval();
  st.sigma2 = st.r.diagonal().mean();
  st.rho = Eigen::MatrixXd::Identity(m, m);
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = a + 1; b < m; ++b) {
      const double denom = std::sqrt(st.r(a, a) * st.r(b, b));
      double rho = 1.0;
      if (denom > 0.0) {
        rho = std::clamp(st.r(a, b) / denom, -1.0, 1.0);
      } else {
        st.degenerate_pairs.emplace_back(static_cast<int>(a), static_cast<int>(b));
      }
      st.rho(a, b) = st.rho(b, a) = rho;
    }
  }
  return st;
}

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, int m) {
  Eigen::MatrixXd out(m, m);
  if (!j.is_array() || static_cast<int>(j.size()) != m) throw std::invalid_argument("bad matrix size");
  for (int r = 0; r < m; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != m) {
      throw std::invalid_argument("bad matrix row size");
    }
    for (int c = 0; c < m; ++c) out(r, c) = j[r][c].get<double>();
  }
  return out;
}

}  // namespace

std::string error_stats_to_json(const ErrorStats& s) {
  json j;
  j["format"] = "mres-error-stats";
  j["version"] = 1;
  j["m"] = s.m;
  j["n_obs"] = s.n_obs;
  j["sigma2"] = s.sigma2;
  j["r"] = matrix_json(s.r);
  j["rho"] = matrix_json(s.rho);
  j["mean_error"] = std::vector<double>(s.mean_error.data(), s.mean_error.data() + s.mean_error.size());
  json deg = json::array();
  for (const auto& [a, b] : s.degenerate_pairs) deg.push_back({a, b});
  j["degenerate_pairs"] = deg;
  return j.dump(2) + "\n";
}

ErrorStats error_stats_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("error stats: ") + e.what());
  }
  if (j.value("format", "") != "mres-error-stats" || j.value("version", 0) != 1) {
    throw std::invalid_argument("error stats: unsupported format or version");
  }
  ErrorStats s;
  s.m = j.at("m").get<int>();
  if (s.m < 1) throw std::invalid_argument("error stats: m must be >= 1");
  s.n_obs = j.at("n_obs").get<std::int64_t>();
  s.sigma2 = j.at("sigma2").get<double>();
  s.r = matrix_from_json(j.at("r"), s.m);
  s.rho = matrix_from_json(j.at("rho"), s.m);
  const auto mean = j.at("mean_error").get<std::vector<double>>();
  if (static_cast<int>(mean.size()) != s.m) throw std::invalid_argument("error stats: bad mean size");
  s.mean_error = Eigen::Map<const Eigen::VectorXd>(mean.data(), s.m);
  for (const auto& p : j.value("degenerate_pairs", json::array())) {
    s.degenerate_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
  }
  return s;
}

void save_error_stats(const ErrorStats& stats, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << error_stats_to_json(stats);
}

ErrorStats load_error_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return error_stats_from_json(ss.str());
}

std::vector<SoftOutput> transformed_outputs(const Detector& detector, const MimoProblem& problem,
                                            const std::vector<InvariantTransform>& transforms) {
  std::vector<SoftOutput> outs;
  outs.reserve(transforms.size());
  for (const auto& t : transforms) {
    const TransformedProblem tp = apply_transform(t, problem);
    outs.push_back(backmap_estimate(tp, detector(tp.problem)));
  }
  return outs;
}

ErrorSamples collect_errors(const Detector& detector, const std::vector<TransformTag>& transform_set,
                            const SimConfig& config, int n_problems, std::uint64_t first_trial,
                            int threads) {
  config.validate();
  if (transform_set.empty()) throw std::invalid_argument("transform set must not be empty");
  if (n_problems < 1) throw std::invalid_argument("n_problems must be >= 1");
  const auto constellation = config.make_constellation();
  const bool complex_alphabet = constellation->kind() == ModulationKind::Qam;
  const int per_layer = complex_alphabet ? 2 : 1;
  const int rows_per_problem = config.n_tx * per_layer;
  const int m = static_cast<int>(transform_set.size());

  ErrorSamples out;
  out.errors.resize(static_cast<Eigen::Index>(n_problems) * rows_per_problem, m);
  out.layer.resize(static_cast<std::size_t>(out.errors.rows()));

  parallel_for(n_problems, threads, [&](std::int64_t i) {
    const std::uint64_t trial = first_trial + static_cast<std::uint64_t>(i);
    const MimoProblem p = draw_problem(config, constellation, config.snr_db, trial);
    Rng trng(config.master_seed, Stream::Transform, trial);
    const auto transforms = instantiate_transforms(transform_set, config.n_rx, config.n_tx, trng);
    const auto outs = transformed_outputs(detector, p, transforms);
    const Eigen::Index base = static_cast<Eigen::Index>(i) * rows_per_problem;
    for (int layer = 0; layer < config.n_tx; ++layer) {
      const cdouble truth = constellation->point((*p.s_true)(layer));
      for (int ch = 0; ch < m; ++ch) {
        const cdouble e = outs[static_cast<std::size_t>(ch)].soft_symbols(layer) - truth;
        out.errors(base + layer * per_layer, ch) = e.real();
        if (complex_alphabet) out.errors(base + layer * per_layer + 1, ch) = e.imag();
      }
      for (int part = 0; part < per_layer; ++part) {
        out.layer[static_cast<std::size_t>(base + layer * per_layer + part)] = layer;
      }
    }
  });
  return out;
}

ErrorStats estimate_error_covariance(const Detector& detector,
                                     const std::vector<TransformTag>& transform_set,
                                     const SimConfig& config, int n_problems,
                                     std::uint64_t first_trial, int threads) {
  return error_stats_from_samples(
      collect_errors(detector, transform_set, config, n_problems, first_trial, threads).errors);
}

std::vector<ErrorStats> estimate_error_covariance_per_layer(
    const Detector& detector, const std::vector<TransformTag>& transform_set,
    const SimConfig& config, int n_problems, std::uint64_t first_trial, int threads) {
  const ErrorSamples samples =
      collect_errors(detector, transform_set, config, n_problems, first_trial, threads);
  std::vector<ErrorStats> out;
  for (int layer = 0; layer < config.n_tx; ++layer) {
    std::vector<Eigen::Index> rows;
    for (std::size_t r = 0; r < samples.layer.size(); ++r) {
      if (samples.layer[r] == layer) rows.push_back(static_cast<Eigen::Index>(r));
    }
    out.push_back(error_stats_from_samples(samples.errors(rows, Eigen::all)));
  }
  return out;
}

CombineDomain parse_combine_domain(const std::string& name) {
  if (name == "soft_symbol") return CombineDomain::SoftSymbol;
  if (name == "llr") return CombineDomain::Llr;
  if (name == "marginal") return CombineDomain::Marginal;
  throw std::invalid_argument("unknown combine domain '" + name +
                              "' (expected soft_symbol, llr or marginal)");
}

std::string to_string(CombineDomain domain) {
  switch (domain) {
    case CombineDomain::SoftSymbol: return "soft_symbol";
    case CombineDomain::Llr: return "llr";
    case CombineDomain::Marginal: return "marginal";
  }
  return "unknown";
}

Eigen::VectorXd uniform_weights(int m) {
  if (m < 1) throw std::invalid_argument("need at least one weight");
  return Eigen::VectorXd::Constant(m, 1.0 / m);
}

namespace {

bool same_output(const SoftOutput& a, const SoftOutput& b) {
  constexpr double tol = 1e-9;
  auto close = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && (x.size() == 0 || (x - y).cwiseAbs().maxCoeff() <= tol);
  };
  return a.hard == b.hard && close(a.soft_symbols, b.soft_symbols) && close(a.marginals, b.marginals) &&
         close(a.llrs, b.llrs);
}

}  // namespace

SoftOutput combine_outputs(const std::vector<SoftOutput>& outputs, const Eigen::VectorXd& beta,
                           CombineDomain domain, const Constellation& c) {
  if (outputs.empty()) throw std::invalid_argument("nothing to combine");
  if (static_cast<std::size_t>(beta.size()) != outputs.size()) {
    throw std::invalid_argument("weight count does not match transform count");
  }
  if (std::abs(beta.sum() - 1.0) > 1e-9) throw std::invalid_argument("weights must sum to 1");
  const int n = outputs.front().n_tx();
  for (const auto& o : outputs) {
    if (o.n_tx() != n) throw std::invalid_argument("outputs disagree on layer count");
  }
  // Any affine combination of identical estimates is that estimate.
  if (std::all_of(outputs.begin() + 1, outputs.end(),
                  [&](const SoftOutput& o) { return same_output(o, outputs.front()); })) {
    return outputs.front();
  }

  switch (domain) {
    case CombineDomain::SoftSymbol: {
      SoftOutput out;
      out.soft_symbols = Eigen::VectorXcd::Zero(n);
      for (std::size_t m = 0; m < outputs.size(); ++m) {
        out.soft_symbols += beta(static_cast<Eigen::Index>(m)) * outputs[m].soft_symbols;
      }
      out.hard.resize(n);
      for (int j = 0; j < n; ++j) out.hard(j) = c.nearest(out.soft_symbols(j));
      return out;
    }
    case CombineDomain::Llr: {
      Eigen::MatrixXd llrs = Eigen::MatrixXd::Zero(n, c.bits_per_symbol());
      for (std::size_t m = 0; m < outputs.size(); ++m) {
        if (outputs[m].llrs.rows() != n) throw std::invalid_argument("output has no LLRs");
        llrs += beta(static_cast<Eigen::Index>(m)) * outputs[m].llrs;
      }
      llrs = llrs.cwiseMax(-kLlrClamp).cwiseMin(kLlrClamp);
      return soft_output_from_llrs(std::move(llrs), c);
    }
    case CombineDomain::Marginal: {
      Eigen::MatrixXd marg = Eigen::MatrixXd::Zero(n, c.order());
      for (std::size_t m = 0; m < outputs.size(); ++m) {
        if (outputs[m].marginals.rows() != n) throw std::invalid_argument("output has no marginals");
        marg += beta(static_cast<Eigen::Index>(m)) * outputs[m].marginals;
      }
      marg = marg.cwiseMax(0.0);
      for (int j = 0; j < n; ++j) {
        const double total = marg.row(j).sum();
        if (total > 0.0) {
          marg.row(j) /= total;
        } else {
          marg.row(j).setConstant(1.0 / c.order());
        }
      }
      return soft_output_from_marginals(std::move(marg), c);
    }
  }
  throw std::invalid_argument("unknown combine domain");
}

SoftOutput resample_detect(const Detector& detector, const MimoProblem& problem,
                           const std::vector<InvariantTransform>& transforms,
                           const Eigen::VectorXd& beta, CombineDomain domain) {
  if (transforms.empty()) throw std::invalid_argument("transform set must not be empty");
  if (static_cast<std::size_t>(beta.size()) != transforms.size()) {
    throw std::invalid_argument("weight count does not match transform count");
  }
  if (std::abs(beta.sum() - 1.0) > 1e-9) throw std::invalid_argument("weights must sum to 1");
  return combine_outputs(transformed_outputs(detector, problem, transforms), beta, domain,
                         *problem.constellation);
}

SoftOutput resample_detect(const Detector& detector, const MimoProblem& problem,
                           const std::vector<InvariantTransform>& transforms,
                           const ErrorStats* stats, CombineDomain domain) {
  const int m = static_cast<int>(transforms.size());
  if (stats == nullptr) return resample_detect(detector, problem, transforms, uniform_weights(m), domain);
  if (stats->m != m) throw std::invalid_argument("error statistics were estimated for a different M");
  return resample_detect(detector, problem, transforms, optimal_weights(stats->r).beta, domain);
}

Eigen::VectorXd epistemic_variance(const Detector& detector, const MimoProblem& problem,
                                   const std::vector<InvariantTransform>& transforms) {
  if (transforms.size() < 2) throw std::invalid_argument("epistemic variance needs >= 2 transforms");
  const auto outs = transformed_outputs(detector, problem, transforms);
  const int n = problem.n_tx();
  Eigen::VectorXcd mean = Eigen::VectorXcd::Zero(n);
  for (const auto& o : outs) mean += o.soft_symbols;
  mean /= static_cast<double>(outs.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(n);
  for (const auto& o : outs) var += (o.soft_symbols - mean).cwiseAbs2();
  return var / static_cast<double>(outs.size());
}

}  // namespace mres
