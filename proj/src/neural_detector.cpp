#include "mres/neural_detector.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mres {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; add byte swapping for this target");

namespace {

constexpr char kMagic[8] = {'M', 'R', 'E', 'S', 'N', 'N', '\0', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

bool is_relu(const std::string& a) { return a == "relu"; }

void check_activation(const std::string& a) {
  if (a != "relu" && a != "tanh") throw std::invalid_argument("unknown activation '" + a + "'");
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, const std::string& a) {
  return is_relu(a) ? z.cwiseMax(0.0).eval() : z.array().tanh().matrix().eval();
}

// Derivative expressed through the activation output.
Eigen::MatrixXd activation_slope(const Eigen::MatrixXd& out, const std::string& a) {
  if (is_relu(a)) return (out.array() > 0.0).cast<double>().matrix();
  return (1.0 - out.array().square()).matrix();
}

// Per-layer softmax over blocks of `order` rows.
Eigen::MatrixXd block_softmax(const Eigen::MatrixXd& logits, int n_tx, int order) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (int layer = 0; layer < n_tx; ++layer) {
    const auto block = logits.middleRows(layer * order, order);
    const Eigen::RowVectorXd mx = block.colwise().maxCoeff();
    Eigen::MatrixXd e = (block.rowwise() - mx).array().exp().matrix();
    const Eigen::RowVectorXd sum = e.colwise().sum();
    p.middleRows(layer * order, order) = e.array().rowwise() / sum.array();
  }
  return p;
}

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::invalid_argument("model file truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

json spec_json(const InputSpec& s) {
  return {{"n_rx", s.n_rx},
          {"n_tx", s.n_tx},
          {"modulation", s.modulation == ModulationKind::Qam ? "qam" : "pam"},
          {"order", s.order},
          {"normalized", s.normalized},
          {"noise_feature", s.noise_feature}};
}

InputSpec spec_from_json(const json& j) {
  InputSpec s;
  s.n_rx = j.at("n_rx").get<int>();
  s.n_tx = j.at("n_tx").get<int>();
  s.modulation = parse_modulation(j.at("modulation").get<std::string>());
  s.order = j.at("order").get<int>();
  s.normalized = j.at("normalized").get<bool>();
  s.noise_feature = j.at("noise_feature").get<bool>();
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  if (n_train < 1 || batch_size < 1 || epochs < 1) {
    throw std::invalid_argument("n_train, batch_size and epochs must be positive");
  }
  if (n_train < batch_size) throw std::invalid_argument("n_train must be >= batch_size");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(lr_decay > 0.0)) throw std::invalid_argument("lr_decay must be positive");
  for (int w : hidden) {
    if (w < 1) throw std::invalid_argument("hidden widths must be positive");
  }
  check_activation(activation);
  if (spec.n_tx < 1 || spec.n_rx < spec.n_tx) throw std::invalid_argument("require n_rx >= n_tx >= 1");
}

std::uint64_t training_master_seed(std::uint64_t seed) {
  return stream_seed(seed, Stream::Training, 0);
}

Eigen::VectorXd problem_features(const MimoProblem& problem, const InputSpec& spec) {
  if (problem.n_rx() != spec.n_rx || problem.n_tx() != spec.n_tx ||
      problem.constellation->order() != spec.order ||
      problem.constellation->kind() != spec.modulation) {
    throw std::invalid_argument("problem shape " + std::to_string(problem.n_rx()) + "x" +
                                std::to_string(problem.n_tx()) + " " +
                                problem.constellation->name() +
                                " does not match the model input spec");
  }
  const int nr = spec.n_rx;
  const int nt = spec.n_tx;
  Eigen::VectorXd f(spec.feature_count());
  const double ys = 1.0 / std::sqrt(problem.constellation->avg_energy() * nt);
  f.segment(0, nr) = problem.y.real() * ys;
  f.segment(nr, nr) = problem.y.imag() * ys;
  const Eigen::MatrixXd re = problem.h.real();
  const Eigen::MatrixXd im = problem.h.imag();
  f.segment(2 * nr, nr * nt) = Eigen::Map<const Eigen::VectorXd>(re.data(), nr * nt);
  f.segment(2 * nr + nr * nt, nr * nt) = Eigen::Map<const Eigen::VectorXd>(im.data(), nr * nt);
  if (spec.noise_feature) f(f.size() - 1) = problem.noise_var;
  return f;
}

Dataset generate_dataset(const SimConfig& sim, const InputSpec& spec, int n_samples,
                         std::uint64_t first_trial) {
  if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
  const auto constellation = sim.make_constellation();
  Dataset d;
  d.features.resize(spec.feature_count(), n_samples);
  d.labels.resize(spec.n_tx, n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const MimoProblem p =
        draw_problem(sim, constellation, sim.snr_db, first_trial + static_cast<std::uint64_t>(i));
    d.features.col(i) = problem_features(p, spec);
    d.labels.col(i) = *p.s_true;
  }
  return d;
}

NeuralModel NeuralModel::initialize(const InputSpec& spec, const std::vector<int>& hidden,
                                    const std::string& activation, std::uint64_t seed) {
  check_activation(activation);
  NeuralModel m;
  m.spec_ = spec;
  m.activation_ = activation;
  m.widths_.push_back(spec.feature_count());
  m.widths_.insert(m.widths_.end(), hidden.begin(), hidden.end());
  m.widths_.push_back(spec.output_count());
  Rng rng(seed, Stream::Training, 1);
  for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) {
    const int fan_in = m.widths_[l];
    const int fan_out = m.widths_[l + 1];
    const double sd = is_relu(activation) && l + 2 < m.widths_.size()
                          ? std::sqrt(2.0 / fan_in)
                          : std::sqrt(1.0 / fan_in);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = sd * rng.normal();
    }
    m.weights_.push_back(std::move(w));
    m.biases_.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

Eigen::MatrixXd NeuralModel::logits(const Eigen::MatrixXd& features) const {
  Eigen::MatrixXd a = features;
  const std::size_t n_layers = weights_.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    a = l + 1 < n_layers ? activate(z, activation_) : std::move(z);
  }
  return a;
}

Eigen::MatrixXd NeuralModel::marginals(const Eigen::VectorXd& features) const {
  const Eigen::MatrixXd p = block_softmax(logits(features), spec_.n_tx, spec_.order);
  Eigen::MatrixXd out(spec_.n_tx, spec_.order);
  for (int layer = 0; layer < spec_.n_tx; ++layer) {
    out.row(layer) = p.col(0).segment(layer * spec_.order, spec_.order).transpose();
  }
  return out;
}

double cross_entropy(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXi& labels, int order) {
  const Eigen::Index n_tx = labels.rows();
  const Eigen::Index batch = labels.cols();
  double total = 0.0;
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (Eigen::Index layer = 0; layer < n_tx; ++layer) {
      const double p = probabilities(layer * order + labels(layer, b), b);
      total -= std::log(std::max(p, std::numeric_limits<double>::min()));
    }
  }
  return total / static_cast<double>(batch * n_tx);
}

double NeuralModel::loss(const Eigen::MatrixXd& features, const Eigen::MatrixXi& labels) const {
  return cross_entropy(block_softmax(logits(features), spec_.n_tx, spec_.order), labels, spec_.order);
}

double NeuralModel::loss_and_gradient(const Eigen::MatrixXd& features, const Eigen::MatrixXi& labels,
                                      Gradients& grad) const {
  const std::size_t n_layers = weights_.size();
  std::vector<Eigen::MatrixXd> acts;
  acts.reserve(n_layers + 1);
  acts.push_back(features);
  for (std::size_t l = 0; l < n_layers; ++l) {
    Eigen::MatrixXd z = weights_[l] * acts.back();
    z.colwise() += biases_[l];
    acts.push_back(l + 1 < n_layers ? activate(z, activation_) : std::move(z));
  }
  const Eigen::MatrixXd p = block_softmax(acts.back(), spec_.n_tx, spec_.order);
  const double value = cross_entropy(p, labels, spec_.order);

  const Eigen::Index batch = features.cols();
  const double norm = 1.0 / static_cast<double>(batch * spec_.n_tx);
  Eigen::MatrixXd delta = p;
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int layer = 0; layer < spec_.n_tx; ++layer) delta(layer * spec_.order + labels(layer, b), b) -= 1.0;
  }
  delta *= norm;

  grad.weights.resize(n_layers);
  grad.biases.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    grad.weights[l].noalias() = delta * acts[l].transpose();
    grad.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      Eigen::MatrixXd back = weights_[l].transpose() * delta;
      delta = back.cwiseProduct(activation_slope(acts[l], activation_));
    }
  }
  return value;
}

Eigen::Index NeuralModel::parameter_count() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Eigen::VectorXd NeuralModel::parameters() const {
  Gradients g{weights_, biases_};
  return flatten(g);
}

Eigen::VectorXd NeuralModel::flatten(const Gradients& grad) {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < grad.weights.size(); ++l) n += grad.weights[l].size() + grad.biases[l].size();
  Eigen::VectorXd flat(n);
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < grad.weights.size(); ++l) {
    flat.segment(pos, grad.weights[l].size()) =
        Eigen::Map<const Eigen::VectorXd>(grad.weights[l].data(), grad.weights[l].size());
    pos += grad.weights[l].size();
    flat.segment(pos, grad.biases[l].size()) = grad.biases[l];
    pos += grad.biases[l].size();
  }
  return flat;
}

void NeuralModel::set_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != parameter_count()) throw std::invalid_argument("parameter vector size mismatch");
  Eigen::Index pos = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Eigen::Map<Eigen::VectorXd>(weights_[l].data(), weights_[l].size()) =
        flat.segment(pos, weights_[l].size());
    pos += weights_[l].size();
    biases_[l] = flat.segment(pos, biases_[l].size());
    pos += biases_[l].size();
  }
}

void NeuralModel::apply_update(const Gradients& step) {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    weights_[l] += step.weights[l];
    biases_[l] += step.biases[l];
  }
}

std::string NeuralModel::serialize() const {
  json header;
  header["input_spec"] = spec_json(spec_);
  header["widths"] = widths_;
  header["activation"] = activation_;
  header["train_meta"] = {{"snr_db", meta_.snr_db},
                          {"n_train", meta_.n_train},
                          {"epochs", meta_.epochs},
                          {"seed", meta_.seed},
                          {"initial_loss", meta_.initial_loss},
                          {"final_loss", meta_.final_loss}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put(out, kFormatVersion);
  put(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    // Row-major weights, then biases.
    for (Eigen::Index r = 0; r < weights_[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) put(out, weights_[l](r, c));
    }
    for (Eigen::Index r = 0; r < biases_[l].size(); ++r) put(out, biases_[l](r));
  }
  return out;
}

NeuralModel NeuralModel::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::invalid_argument("not a model file (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kFormatVersion) {
    throw std::invalid_argument("unsupported model format version " + std::to_string(version));
  }
  const auto len = get<std::uint32_t>(bytes, pos);
  if (pos + len > bytes.size()) throw std::invalid_argument("model file truncated");
  json header;
  try {
    header = json::parse(bytes.substr(pos, len));
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad model header: ") + e.what());
  }
  pos += len;

  NeuralModel m;
  m.spec_ = spec_from_json(header.at("input_spec"));
  m.widths_ = header.at("widths").get<std::vector<int>>();
  m.activation_ = header.at("activation").get<std::string>();
  check_activation(m.activation_);
  const json& meta = header.at("train_meta");
  m.meta_.snr_db = meta.at("snr_db").get<double>();
  m.meta_.n_train = meta.at("n_train").get<std::int64_t>();
  m.meta_.epochs = meta.at("epochs").get<int>();
  m.meta_.seed = meta.at("seed").get<std::uint64_t>();
  m.meta_.initial_loss = meta.at("initial_loss").get<double>();
  m.meta_.final_loss = meta.at("final_loss").get<double>();
  if (m.widths_.size() < 2 || m.widths_.front() != m.spec_.feature_count() ||
      m.widths_.back() != m.spec_.output_count()) {
    throw std::invalid_argument("model widths do not match its input spec");
  }
  for (std::size_t l = 0; l + 1 < m.widths_.size(); ++l) {
    Eigen::MatrixXd w(m.widths_[l + 1], m.widths_[l]);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = get<double>(bytes, pos);
    }
    Eigen::VectorXd b(m.widths_[l + 1]);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = get<double>(bytes, pos);
    m.weights_.push_back(std::move(w));
    m.biases_.push_back(std::move(b));
  }
  if (pos != bytes.size()) throw std::invalid_argument("trailing bytes in model file");
  return m;
}

void NeuralModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file " + path);
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NeuralModel NeuralModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read model file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

NeuralModel train_on(const TrainConfig& config, const Dataset& data, const EpochCallback& on_epoch) {
  config.validate();
  if (data.size() < config.batch_size) throw std::invalid_argument("dataset smaller than one batch");
  NeuralModel model = NeuralModel::initialize(config.spec, config.hidden, config.activation, config.seed);
  model.meta().snr_db = config.snr_db;
  model.meta().n_train = data.size();
  model.meta().epochs = config.epochs;
  model.meta().seed = config.seed;
  model.meta().initial_loss = model.loss(data.features, data.labels);

  NeuralModel::Gradients grad;
  NeuralModel::Gradients velocity;
  for (std::size_t l = 0; l < model.weights().size(); ++l) {
    velocity.weights.push_back(Eigen::MatrixXd::Zero(model.weights()[l].rows(), model.weights()[l].cols()));
    velocity.biases.push_back(Eigen::VectorXd::Zero(model.biases()[l].size()));
  }

  const Eigen::Index n = data.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng shuffle_rng(config.seed, Stream::Training, 2);
  double lr = config.learning_rate;
  Eigen::MatrixXd xb(data.features.rows(), config.batch_size);
  Eigen::MatrixXi yb(data.labels.rows(), config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (Eigen::Index i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, static_cast<int>(i)))]);
    }
    double epoch_loss = 0.0;
    Eigen::Index batches = 0;
    for (Eigen::Index start = 0; start + config.batch_size <= n; start += config.batch_size) {
      for (int b = 0; b < config.batch_size; ++b) {
        const Eigen::Index src = order[static_cast<std::size_t>(start + b)];
        xb.col(b) = data.features.col(src);
        yb.col(b) = data.labels.col(src);
      }
      const double value = model.loss_and_gradient(xb, yb, grad);
      if (!std::isfinite(value)) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(batches) + " (loss " + std::to_string(value) +
                                 "); lower the learning rate");
      }
      for (std::size_t l = 0; l < grad.weights.size(); ++l) {
        velocity.weights[l] = config.momentum * velocity.weights[l] - lr * grad.weights[l];
        velocity.biases[l] = config.momentum * velocity.biases[l] - lr * grad.biases[l];
      }
      model.apply_update(velocity);
      epoch_loss += value;
      ++batches;
    }
    lr *= config.lr_decay;
    if (on_epoch) on_epoch(epoch, model, epoch_loss / static_cast<double>(batches));
  }
  model.meta().final_loss = model.loss(data.features, data.labels);
  if (!std::isfinite(model.meta().final_loss)) {
    throw std::runtime_error("training produced a non-finite final loss");
  }
  return model;
}

NeuralModel train(const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  SimConfig sim;
  sim.n_rx = config.spec.n_rx;
  sim.n_tx = config.spec.n_tx;
  sim.modulation = config.spec.modulation;
  sim.order = config.spec.order;
  sim.normalized = config.spec.normalized;
  sim.snr_db = config.snr_db;
  sim.master_seed = training_master_seed(config.seed);
  const Dataset data = generate_dataset(sim, config.spec, config.n_train);
  return train_on(config, data, on_epoch);
}

SoftOutput infer(const NeuralModel& model, const MimoProblem& problem) {
  const Eigen::VectorXd f = problem_features(problem, model.spec());
  if (problem.constellation->normalized() != model.spec().normalized) {
    throw std::invalid_argument("constellation normalization does not match the model input spec");
  }
  return soft_output_from_marginals(model.marginals(f), *problem.constellation);
}

}  // namespace mres
