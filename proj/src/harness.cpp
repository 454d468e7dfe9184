#include "mres/harness.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "mres/parallel.hpp"
#include "mres/stats.hpp"

namespace mres {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

template <typename T>
void read_key(const json& j, const char* key, T& dst, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  sim.validate();
  if (snr_grid.empty()) throw std::invalid_argument("snr_grid must not be empty");
  for (std::size_t i = 1; i < snr_grid.size(); ++i) {
    if (!(snr_grid[i] > snr_grid[i - 1])) throw std::invalid_argument("snr_grid must be strictly increasing");
  }
  if (detectors.empty()) throw std::invalid_argument("detectors must not be empty");
  if (transform_sets.empty()) throw std::invalid_argument("transform_sets must not be empty");
  for (const auto& ts : transform_sets) (void)parse_transform_set(ts);
  (void)parse_transform_set(analysis_transform_set);
  if (weight_mode != "uniform" && weight_mode != "optimal") {
    throw std::invalid_argument("weight_mode must be 'uniform' or 'optimal'");
  }
  (void)parse_combine_domain(combine_domain);
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (calibration_trials < 100) throw std::invalid_argument("calibration_trials must be >= 100");
  if (n_bins < 1) throw std::invalid_argument("n_bins must be >= 1");
  if (!(trunc_factor > 0.0)) throw std::invalid_argument("trunc_factor must be positive");
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");

  ExperimentConfig c;
  std::set<std::string> seen;
  std::string modulation = "qam";
  read_key(j, "n_rx", c.sim.n_rx, seen);
  read_key(j, "n_tx", c.sim.n_tx, seen);
  read_key(j, "modulation", modulation, seen);
  read_key(j, "order", c.sim.order, seen);
  read_key(j, "normalized", c.sim.normalized, seen);
  read_key(j, "snr_db", c.sim.snr_db, seen);
  read_key(j, "seed", c.sim.master_seed, seen);
  read_key(j, "n_trials", c.sim.n_trials, seen);
  read_key(j, "detectors", c.detectors, seen);
  read_key(j, "transform_sets", c.transform_sets, seen);
  read_key(j, "weight_mode", c.weight_mode, seen);
  read_key(j, "combine_domain", c.combine_domain, seen);
  read_key(j, "snr_grid", c.snr_grid, seen);
  read_key(j, "out", c.out_dir, seen);
  std::string model_path;
  read_key(j, "model_path", model_path, seen);
  if (!model_path.empty()) c.model_path = model_path;
  std::string stats_path;
  read_key(j, "error_stats", stats_path, seen);
  if (!stats_path.empty()) c.error_stats_path = stats_path;
  read_key(j, "threads", c.threads, seen);
  read_key(j, "ml_budget", c.ml_budget, seen);
  read_key(j, "calibration_trials", c.calibration_trials, seen);

  c.train.snr_db = c.sim.snr_db;
  read_key(j, "train_snr_db", c.train.snr_db, seen);
  read_key(j, "train_n", c.train.n_train, seen);
  read_key(j, "train_batch_size", c.train.batch_size, seen);
  read_key(j, "train_epochs", c.train.epochs, seen);
  read_key(j, "train_learning_rate", c.train.learning_rate, seen);
  read_key(j, "train_momentum", c.train.momentum, seen);
  read_key(j, "train_lr_decay", c.train.lr_decay, seen);
  read_key(j, "train_seed", c.train.seed, seen);
  read_key(j, "train_hidden", c.train.hidden, seen);
  read_key(j, "train_activation", c.train.activation, seen);
  read_key(j, "noise_feature", c.train.spec.noise_feature, seen);

  read_key(j, "analysis_detector", c.analysis_detector, seen);
  read_key(j, "analysis_transform_set", c.analysis_transform_set, seen);
  read_key(j, "n_bins", c.n_bins, seen);
  read_key(j, "trunc_factor", c.trunc_factor, seen);
  read_key(j, "synthetic_rho", c.synthetic_rho, seen);
  read_key(j, "synthetic_sigma2", c.synthetic_sigma2, seen);

  for (const auto& [key, value] : j.items()) {
    if (!seen.count(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  }
  c.sim.modulation = parse_modulation(modulation);
  c.train.spec.n_rx = c.sim.n_rx;
  c.train.spec.n_tx = c.sim.n_tx;
  c.train.spec.modulation = c.sim.modulation;
  c.train.spec.order = c.sim.order;
  c.train.spec.normalized = c.sim.normalized;
  if (c.analysis_detector.empty()) c.analysis_detector = c.detectors.empty() ? "ml" : c.detectors.front();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["n_rx"] = c.sim.n_rx;
  j["n_tx"] = c.sim.n_tx;
  j["modulation"] = c.sim.modulation == ModulationKind::Qam ? "qam" : "pam";
  j["order"] = c.sim.order;
  j["normalized"] = c.sim.normalized;
  j["snr_db"] = c.sim.snr_db;
  j["seed"] = c.sim.master_seed;
  j["n_trials"] = c.sim.n_trials;
  j["detectors"] = c.detectors;
  j["transform_sets"] = c.transform_sets;
  j["weight_mode"] = c.weight_mode;
  j["combine_domain"] = c.combine_domain;
  j["snr_grid"] = c.snr_grid;
  j["out"] = c.out_dir;
  j["model_path"] = c.model_path.value_or("");
  j["error_stats"] = c.error_stats_path.value_or("");
  j["threads"] = c.threads;
  j["ml_budget"] = c.ml_budget;
  j["calibration_trials"] = c.calibration_trials;
  j["train_snr_db"] = c.train.snr_db;
  j["train_n"] = c.train.n_train;
  j["train_batch_size"] = c.train.batch_size;
  j["train_epochs"] = c.train.epochs;
  j["train_learning_rate"] = c.train.learning_rate;
  j["train_momentum"] = c.train.momentum;
  j["train_lr_decay"] = c.train.lr_decay;
  j["train_seed"] = c.train.seed;
  j["train_hidden"] = c.train.hidden;
  j["train_activation"] = c.train.activation;
  j["noise_feature"] = c.train.spec.noise_feature;
  j["analysis_detector"] = c.analysis_detector;
  j["analysis_transform_set"] = c.analysis_transform_set;
  j["n_bins"] = c.n_bins;
  j["trunc_factor"] = c.trunc_factor;
  j["synthetic_rho"] = c.synthetic_rho;
  j["synthetic_sigma2"] = c.synthetic_sigma2;
  return j.dump(2) + "\n";
}

Detector make_detector(const std::string& tag, const ExperimentConfig& config) {
  if (tag == "neural" || tag.rfind("neural:", 0) == 0) {
    const std::string path = tag == "neural" ? config.model_path.value_or("") : tag.substr(7);
    if (path.empty()) throw std::invalid_argument("detector 'neural' needs model_path");
    if (!fs::exists(path)) throw std::runtime_error("model file '" + path + "' not found");
    auto model = std::make_shared<const NeuralModel>(NeuralModel::load(path));
    return [model](const MimoProblem& p) { return infer(*model, p); };
  }
  return make_classical_detector(tag, config.ml_budget);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string results_to_csv(const std::vector<ResultRow>& rows) {
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& r : rows) {
    char elapsed[32];
    std::snprintf(elapsed, sizeof(elapsed), "%.3f", r.elapsed_s);
    out += format_double(r.snr_db) + "," + r.detector + "," + std::to_string(r.m) + "," +
           std::to_string(r.trials) + "," + std::to_string(r.symbol_errors) + "," +
           std::to_string(r.bit_errors) + "," + format_double(r.ser) + "," + format_double(r.ber) +
           "," + elapsed + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

std::vector<ResultRow> run_sweep(const ExperimentConfig& config, bool write_files) {
  config.validate();
  const auto constellation = config.sim.make_constellation();
  const CombineDomain domain = parse_combine_domain(config.combine_domain);

  std::vector<std::string> detector_tags = config.detectors;
  std::vector<Detector> detectors;
  for (const auto& tag : detector_tags) detectors.push_back(make_detector(tag, config));

  std::vector<std::vector<TransformTag>> sets;
  for (const auto& ts : config.transform_sets) sets.push_back(parse_transform_set(ts));
  // One draw of each tag per trial; sets share it.
  std::set<TransformTag> used;
  for (const auto& s : sets) used.insert(s.begin(), s.end());
  const std::vector<TransformTag> union_tags(used.begin(), used.end());

  struct Variant {
    std::size_t detector;
    std::size_t set;
    std::string name;
  };
  std::vector<Variant> variants;
  for (std::size_t d = 0; d < detectors.size(); ++d) {
    for (std::size_t s = 0; s < sets.size(); ++s) {
      const bool plain = sets[s].size() == 1 && sets[s][0] == TransformTag::Identity;
      const std::string name =
          plain ? detector_tags[d] : detector_tags[d] + "+" + join(config.transform_sets[s], "|");
      variants.push_back({d, s, name});
    }
  }

  std::optional<ErrorStats> loaded_stats;
  if (config.error_stats_path) loaded_stats = load_error_stats(*config.error_stats_path);

  std::vector<ResultRow> rows;
  const std::int64_t n_trials = config.sim.n_trials;
  for (double snr : config.snr_grid) {
    std::vector<Eigen::VectorXd> weights(variants.size());
    for (std::size_t v = 0; v < variants.size(); ++v) {
      const int m = static_cast<int>(sets[variants[v].set].size());
      if (config.weight_mode == "uniform" || m == 1) {
        weights[v] = uniform_weights(m);
      } else if (loaded_stats) {
        if (loaded_stats->m != m) throw std::invalid_argument("error_stats file has a different M");
        weights[v] = optimal_weights(loaded_stats->r).beta;
      } else {
        SimConfig cal = config.sim;
        cal.snr_db = snr;
        // Calibration problems come from trial indices past the sweep's own.
        const ErrorStats st =
            estimate_error_covariance(detectors[variants[v].detector], sets[variants[v].set], cal,
                                      config.calibration_trials,
                                      static_cast<std::uint64_t>(n_trials) + (std::uint64_t{1} << 40),
                                      config.threads);
        weights[v] = optimal_weights(st.r).beta;
      }
    }

    std::vector<std::vector<ErrorCount>> per_trial(static_cast<std::size_t>(n_trials),
                                                   std::vector<ErrorCount>(variants.size()));
    std::vector<std::vector<double>> per_trial_time(static_cast<std::size_t>(n_trials),
                                                    std::vector<double>(variants.size(), 0.0));
    parallel_for(n_trials, config.threads, [&](std::int64_t i) {
      const auto trial = static_cast<std::uint64_t>(i);
      const MimoProblem p = draw_problem(config.sim, constellation, snr, trial);
      Rng trng(config.sim.master_seed, Stream::Transform, trial);
      const auto drawn = instantiate_transforms(union_tags, p.n_rx(), p.n_tx(), trng);
      std::map<TransformTag, std::size_t> slot;
      for (std::size_t k = 0; k < union_tags.size(); ++k) slot[union_tags[k]] = k;

      std::vector<std::vector<std::optional<SoftOutput>>> cache(
          detectors.size(), std::vector<std::optional<SoftOutput>>(union_tags.size()));
      for (std::size_t v = 0; v < variants.size(); ++v) {
        const auto t0 = std::chrono::steady_clock::now();
        const Variant& var = variants[v];
        std::vector<SoftOutput> outs;
        for (TransformTag tag : sets[var.set]) {
          auto& entry = cache[var.detector][slot[tag]];
          if (!entry) {
            const TransformedProblem tp = apply_transform(drawn[slot[tag]], p);
            entry = backmap_estimate(tp, detectors[var.detector](tp.problem));
          }
          outs.push_back(*entry);
        }
        const SoftOutput combined =
            outs.size() == 1 ? outs.front() : combine_outputs(outs, weights[v], domain, *constellation);
        per_trial[static_cast<std::size_t>(i)][v] = count_errors(combined.hard, *p.s_true, *constellation);
        per_trial_time[static_cast<std::size_t>(i)][v] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    });

    for (std::size_t v = 0; v < variants.size(); ++v) {
      ErrorCount total;
      double elapsed = 0.0;
      for (std::int64_t i = 0; i < n_trials; ++i) {
        total += per_trial[static_cast<std::size_t>(i)][v];
        elapsed += per_trial_time[static_cast<std::size_t>(i)][v];
      }
      ResultRow row;
      row.snr_db = snr;
      row.detector = variants[v].name;
      row.m = static_cast<int>(sets[variants[v].set].size());
      row.trials = n_trials;
      row.symbol_errors = total.symbol_errors;
      row.bit_errors = total.bit_errors;
      row.ser = static_cast<double>(total.symbol_errors) / static_cast<double>(total.symbols);
      row.ber = static_cast<double>(total.bit_errors) / static_cast<double>(total.bits);
      row.elapsed_s = elapsed;
      row.seed = config.sim.master_seed;
      rows.push_back(row);
    }
  }

  if (write_files) {
    const fs::path out(config.out_dir);
    write_file(out / "results.csv", results_to_csv(rows));
    write_file(out / "config.echo.json", config_to_json(config));
  }
  return rows;
}

namespace {

ChannelSummary summarize(const std::string& name, const Eigen::VectorXd& e,
                         const std::vector<double>& edges) {
  ChannelSummary s;
  s.name = name;
  const Eigen::Index n = e.size();
  s.mean = e.mean();
  s.variance = n > 1 ? (e.array() - s.mean).square().sum() / static_cast<double>(n - 1) : 0.0;
  const int bins = static_cast<int>(edges.size()) - 1;
  s.histogram.assign(static_cast<std::size_t>(bins), 0);
  const double lo = edges.front();
  const double hi = edges.back();
  const double width = (hi - lo) / bins;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = e(i);
    if (v < lo) {
      ++s.below;
    } else if (v >= hi) {
      ++s.above;
    } else {
      const int b = std::min(bins - 1, static_cast<int>((v - lo) / width));
      ++s.histogram[static_cast<std::size_t>(b)];
    }
  }
  return s;
}

json summary_json(const ChannelSummary& s) {
  json j = {{"name", s.name},         {"mean", s.mean},   {"variance", s.variance},
            {"histogram", s.histogram}, {"below", s.below}, {"above", s.above}};
  if (s.ser) j["ser"] = *s.ser;
  return j;
}

}  // namespace

ErrorAnalysis analyze_errors(const Eigen::MatrixXd& errors, const std::vector<std::string>& names,
                             int n_bins, double lo, double hi) {
  if (static_cast<std::size_t>(errors.cols()) != names.size()) {
    throw std::invalid_argument("channel names do not match error columns");
  }
  if (!(hi > lo) || n_bins < 1) throw std::invalid_argument("bad histogram range");
  ErrorAnalysis a;
  a.transforms = names;
  a.lo = lo;
  a.hi = hi;
  for (int b = 0; b <= n_bins; ++b) a.bin_edges.push_back(lo + (hi - lo) * b / n_bins);
  for (Eigen::Index c = 0; c < errors.cols(); ++c) {
    a.channels.push_back(summarize(names[static_cast<std::size_t>(c)], errors.col(c), a.bin_edges));
  }
  a.stats = error_stats_from_samples(errors);
  const int m = a.stats.m;
  double rho_sum = 0.0;
  int pairs = 0;
  for (int i = 0; i < m; ++i) {
    for (int k = i + 1; k < m; ++k) {
      rho_sum += a.stats.rho(i, k);
      ++pairs;
    }
  }
  a.mean_rho = pairs ? rho_sum / pairs : 1.0;
  const Eigen::VectorXd beta = uniform_weights(m);
  a.combined = summarize("combined", errors * beta, a.bin_edges);
  a.predicted_equicorrelated = (a.mean_rho + (1.0 - a.mean_rho) / m) * a.stats.sigma2;
  a.predicted_uniform = combined_variance(a.stats.r, beta);
  a.optimal = optimal_weights(a.stats.r);
  return a;
}

Eigen::MatrixXd sample_gaussian_channels(const Eigen::MatrixXd& r, std::int64_t n_draws, Rng& rng) {
  const Eigen::Index m = r.rows();
  Eigen::MatrixXd factor;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
  if (eig.eigenvalues().minCoeff() < -1e-10 * std::max(1.0, r.trace())) {
    throw std::domain_error("covariance is not positive semidefinite");
  }
  factor = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Eigen::MatrixXd out(n_draws, m);
  Eigen::VectorXd g(m);
  for (std::int64_t i = 0; i < n_draws; ++i) {
    for (Eigen::Index k = 0; k < m; ++k) g(k) = rng.normal();
    out.row(i) = (factor * g).transpose();
  }
  return out;
}

ErrorAnalysis run_error_analysis(const ExperimentConfig& config, int n_bins, bool write_files) {
  config.validate();
  const auto constellation = config.sim.make_constellation();
  const double half = config.trunc_factor * constellation->min_distance() / 2.0;
  ErrorAnalysis a;

  if (config.analysis_detector == "synthetic") {
    const int m = static_cast<int>(config.analysis_transform_set.size());
    const Eigen::MatrixXd r = equicorrelated(m, config.synthetic_rho, config.synthetic_sigma2);
    Rng rng(config.sim.master_seed, Stream::Synthetic, 0);
    const Eigen::MatrixXd errors = sample_gaussian_channels(r, config.sim.n_trials, rng);
    std::vector<std::string> names;
    for (int k = 0; k < m; ++k) names.push_back("channel" + std::to_string(k));
    a = analyze_errors(errors, names, n_bins, -half, half);
    a.detector = "synthetic";
    a.n_problems = config.sim.n_trials;
  } else {
    const Detector detector = make_detector(config.analysis_detector, config);
    const auto tags = parse_transform_set(config.analysis_transform_set);
    const int m = static_cast<int>(tags.size());
    const std::int64_t n = config.sim.n_trials;
    const bool complex_alphabet = constellation->kind() == ModulationKind::Qam;
    const int per_layer = complex_alphabet ? 2 : 1;
    const int rows = config.sim.n_tx * per_layer;

    Eigen::MatrixXd errors(n * rows, m);
    std::vector<std::vector<ErrorCount>> counts(static_cast<std::size_t>(n),
                                                std::vector<ErrorCount>(static_cast<std::size_t>(m) + 1));
    parallel_for(n, config.threads, [&](std::int64_t i) {
      const auto trial = static_cast<std::uint64_t>(i);
      const MimoProblem p = draw_problem(config.sim, constellation, config.sim.snr_db, trial);
      Rng trng(config.sim.master_seed, Stream::Transform, trial);
      const auto transforms = instantiate_transforms(tags, p.n_rx(), p.n_tx(), trng);
      const auto outs = transformed_outputs(detector, p, transforms);
      for (int layer = 0; layer < p.n_tx(); ++layer) {
        const cdouble truth = constellation->point((*p.s_true)(layer));
        for (int ch = 0; ch < m; ++ch) {
          const cdouble e = outs[static_cast<std::size_t>(ch)].soft_symbols(layer) - truth;
          errors(i * rows + layer * per_layer, ch) = e.real();
          if (complex_alphabet) errors(i * rows + layer * per_layer + 1, ch) = e.imag();
        }
      }
      auto& slot = counts[static_cast<std::size_t>(i)];
      for (int ch = 0; ch < m; ++ch) {
        slot[static_cast<std::size_t>(ch)] =
            count_errors(outs[static_cast<std::size_t>(ch)].hard, *p.s_true, *constellation);
      }
      const bool have_marginals = outs.front().marginals.size() > 0;
      const SoftOutput comb = combine_outputs(
          outs, uniform_weights(m), have_marginals ? CombineDomain::Marginal : CombineDomain::SoftSymbol,
          *constellation);
      slot[static_cast<std::size_t>(m)] = count_errors(comb.hard, *p.s_true, *constellation);
    });
    a = analyze_errors(errors, config.analysis_transform_set, n_bins, -half, half);
    a.detector = config.analysis_detector;
    a.n_problems = n;
    for (int ch = 0; ch <= m; ++ch) {
      ErrorCount total;
      for (const auto& c : counts) total += c[static_cast<std::size_t>(ch)];
      const double ser = static_cast<double>(total.symbol_errors) / static_cast<double>(total.symbols);
      (ch < m ? a.channels[static_cast<std::size_t>(ch)] : a.combined).ser = ser;
    }
  }
  a.snr_db = config.sim.snr_db;
  if (write_files) write_file(fs::path(config.out_dir) / "analysis.json", analysis_to_json(a));
  return a;
}

std::string analysis_to_json(const ErrorAnalysis& a) {
  json j;
  j["detector"] = a.detector;
  j["transforms"] = a.transforms;
  j["snr_db"] = a.snr_db;
  j["n_problems"] = a.n_problems;
  j["n_obs"] = a.stats.n_obs;
  j["interval"] = {a.lo, a.hi};
  j["bin_edges"] = a.bin_edges;
  json channels = json::array();
  for (const auto& c : a.channels) channels.push_back(summary_json(c));
  j["channels"] = channels;
  j["sigma2"] = a.stats.sigma2;
  j["mean_rho"] = a.mean_rho;
  json r = json::array();
  json rho = json::array();
  for (int i = 0; i < a.stats.m; ++i) {
    json rr = json::array();
    json pr = json::array();
    for (int k = 0; k < a.stats.m; ++k) {
      rr.push_back(a.stats.r(i, k));
      pr.push_back(a.stats.rho(i, k));
    }
    r.push_back(rr);
    rho.push_back(pr);
  }
  j["r"] = r;
  j["rho"] = rho;
  j["mean_error"] = std::vector<double>(a.stats.mean_error.data(),
                                        a.stats.mean_error.data() + a.stats.mean_error.size());
  json combined = summary_json(a.combined);
  combined["weights"] = "uniform";
  combined["predicted_equicorrelated"] = a.predicted_equicorrelated;
  combined["predicted"] = a.predicted_uniform;
  j["combined"] = combined;
  j["optimal"] = {{"beta", std::vector<double>(a.optimal.beta.data(),
                                               a.optimal.beta.data() + a.optimal.beta.size())},
                  {"predicted_var", a.optimal.predicted_var},
                  {"regularized", a.optimal.regularized}};
  return j.dump(2) + "\n";
}

std::vector<Theorem1Row> run_theorem1_check(const std::vector<int>& m_values,
                                            const std::vector<double>& rho_grid, double sigma2,
                                            std::int64_t n_draws, std::uint64_t seed) {
  if (m_values.empty() || rho_grid.empty()) throw std::invalid_argument("empty M or rho grid");
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
  if (n_draws < 2) throw std::invalid_argument("need at least two draws");
  for (double rho : rho_grid) (void)variance_curve(rho, sigma2, m_values);

  std::vector<Theorem1Row> rows;
  for (std::size_t ri = 0; ri < rho_grid.size(); ++ri) {
    const double rho = rho_grid[ri];
    const std::vector<double> predicted = variance_curve(rho, sigma2, m_values);
    for (std::size_t mi = 0; mi < m_values.size(); ++mi) {
      const int m = m_values[mi];
      const Eigen::MatrixXd r = equicorrelated(m, rho, sigma2);
      const Eigen::VectorXd beta_opt = optimal_weights(r).beta;
      const Eigen::VectorXd beta_uni = uniform_weights(m);
      Rng rng(seed, Stream::Synthetic, (static_cast<std::uint64_t>(ri) << 32) | static_cast<std::uint64_t>(m));
      // Common factor plus independent parts for rho >= 0; general factor otherwise.
      Eigen::MatrixXd factor;
      if (rho < 0.0) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(r);
        factor = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
      }
      const double common = std::sqrt(std::max(rho, 0.0) * sigma2);
      const double own = std::sqrt((1.0 - std::max(rho, 0.0)) * sigma2);
      std::vector<double> uni(static_cast<std::size_t>(n_draws));
      std::vector<double> opt(static_cast<std::size_t>(n_draws));
      Eigen::VectorXd z(m);
      Eigen::VectorXd g(m);
      for (std::int64_t i = 0; i < n_draws; ++i) {
        if (rho < 0.0) {
          for (int k = 0; k < m; ++k) g(k) = rng.normal();
          z = factor * g;
        } else {
          const double c = common * rng.normal();
          for (int k = 0; k < m; ++k) z(k) = c + own * rng.normal();
        }
        uni[static_cast<std::size_t>(i)] = combine_scalar(z, beta_uni);
        opt[static_cast<std::size_t>(i)] = combine_scalar(z, beta_opt);
      }
      Theorem1Row row;
      row.rho = rho;
      row.m = m;
      row.predicted = predicted[mi];
      row.empirical = stats::moments(uni).variance;
      row.empirical_optimal = stats::moments(opt).variance;
      row.stderr_ = row.predicted * std::sqrt(2.0 / static_cast<double>(n_draws - 1));
      rows.push_back(row);
    }
  }
  return rows;
}

std::string theorem1_to_csv(const std::vector<Theorem1Row>& rows) {
  std::string out = std::string(kTheorem1Header) + "\n";
  for (const auto& r : rows) {
    out += format_double(r.rho) + "," + std::to_string(r.m) + "," + format_double(r.predicted) + "," +
           format_double(r.empirical) + "," + format_double(r.stderr_) + "\n";
  }
  return out;
}

std::string invariance_to_json(const std::vector<InvarianceReport>& reports) {
  json arr = json::array();
  for (const auto& rep : reports) {
    json tests = json::array();
    for (const auto& t : rep.tests) {
      tests.push_back({{"quantity", t.quantity},
                       {"ks_statistic", t.statistic},
                       {"p_value", t.p_value},
                       {"pass", t.pass}});
    }
    arr.push_back({{"transform", rep.transform},
                   {"n_samples", rep.n_samples},
                   {"alpha", rep.alpha},
                   {"pass", rep.pass},
                   {"tests", tests}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace mres
