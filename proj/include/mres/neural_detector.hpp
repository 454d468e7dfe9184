#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mres/mimo_model.hpp"
#include "mres/soft_output.hpp"

namespace mres {

/// Problem shape a network was trained for.
struct InputSpec {
  int n_rx = 2;
  int n_tx = 2;
  ModulationKind modulation = ModulationKind::Qam;
  int order = 4;
  bool normalized = false;
  /// Append noise_var as one extra feature.
  bool noise_feature = false;

  int feature_count() const { return 2 * n_rx + 2 * n_rx * n_tx + (noise_feature ? 1 : 0); }
  int output_count() const { return n_tx * order; }
  bool operator==(const InputSpec&) const = default;
};

struct TrainMeta {
  double snr_db = 0.0;
  std::int64_t n_train = 0;
  int epochs = 0;
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

struct TrainConfig {
  InputSpec spec;
  double snr_db = 15.0;
  int n_train = 200000;
  int batch_size = 256;
  int epochs = 40;
  double learning_rate = 0.05;
  double momentum = 0.9;
  /// Learning rate multiplier applied after every epoch.
  double lr_decay = 0.9;
  std::uint64_t seed = 1;
  std::vector<int> hidden = {128, 128};
  std::string activation = "relu";

  void validate() const;
};

/// Features and per-layer label indices, one column per sample.
struct Dataset {
  Eigen::MatrixXd features;
  Eigen::MatrixXi labels;

  Eigen::Index size() const { return features.cols(); }
};

/// Network input for one problem:
///   [Re y, Im y] / sqrt(avg_energy * n_tx), Re H, Im H (column-major),
///   optionally noise_var.
Eigen::VectorXd problem_features(const MimoProblem& problem, const InputSpec& spec);

/// Problems draw_problem(sim, ., sim.snr_db, first_trial + i) for i < n_samples.
Dataset generate_dataset(const SimConfig& sim, const InputSpec& spec, int n_samples,
                         std::uint64_t first_trial = 0);

/// Feed-forward network with a per-layer softmax head over the constellation.
class NeuralModel {
 public:
  struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
  };

  NeuralModel() = default;

  /// Random initialization (He for relu, Xavier for tanh); zero biases.
  static NeuralModel initialize(const InputSpec& spec, const std::vector<int>& hidden,
                                const std::string& activation, std::uint64_t seed);

  const InputSpec& spec() const { return spec_; }
  const std::vector<int>& widths() const { return widths_; }
  const std::string& activation() const { return activation_; }
  const TrainMeta& meta() const { return meta_; }
  TrainMeta& meta() { return meta_; }
  const std::vector<Eigen::MatrixXd>& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const { return biases_; }

  /// Raw output logits for a batch (features x batch).
  Eigen::MatrixXd logits(const Eigen::MatrixXd& features) const;
  /// Per-layer marginals for one feature vector (n_tx x order).
  Eigen::MatrixXd marginals(const Eigen::VectorXd& features) const;

  /// Mean per-layer cross-entropy over the batch.
  double loss(const Eigen::MatrixXd& features, const Eigen::MatrixXi& labels) const;
  double loss_and_gradient(const Eigen::MatrixXd& features, const Eigen::MatrixXi& labels,
                           Gradients& grad) const;

  Eigen::Index parameter_count() const;
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);
  static Eigen::VectorXd flatten(const Gradients& grad);

  /// Apply `step` to every parameter block: p += step.
  void apply_update(const Gradients& step);

  std::string serialize() const;
  static NeuralModel deserialize(const std::string& bytes);
  void save(const std::string& path) const;
  static NeuralModel load(const std::string& path);

 private:
  InputSpec spec_;
  std::vector<int> widths_;
  std::string activation_ = "relu";
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  TrainMeta meta_;
};

/// Mean per-layer cross-entropy of precomputed probabilities.
double cross_entropy(const Eigen::MatrixXd& probabilities, const Eigen::MatrixXi& labels, int order);

/// Called after each epoch with (epoch index from 1, model, mean epoch loss).
using EpochCallback = std::function<void(int, const NeuralModel&, double)>;

/// Mini-batch SGD with momentum on per-layer cross-entropy. Deterministic
/// given the config. Throws std::runtime_error if the loss becomes non-finite.
NeuralModel train(const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Same, on a caller-supplied dataset.
NeuralModel train_on(const TrainConfig& config, const Dataset& data,
                     const EpochCallback& on_epoch = {});

/// Throws std::invalid_argument when the problem does not match the model.
SoftOutput infer(const NeuralModel& model, const MimoProblem& problem);

/// Seed of the training-data stream for a training seed; keeps training
/// problems disjoint from evaluation problems drawn with the same seed.
std::uint64_t training_master_seed(std::uint64_t seed);

}  // namespace mres
