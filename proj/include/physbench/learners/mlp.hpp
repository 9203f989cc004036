#pragma once

// Fully connected tanh networks trained on mean squared error with Adam or
// plain SGD. All parameters live in one flat vector: for each layer the
// weight matrix (column-major, out x in) followed by its bias.

#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "physbench/learners/model.hpp"
#include "physbench/rng.hpp"

namespace physbench {

/// Depth counts affine maps, so depth d has d - 1 hidden layers.
struct MlpShape {
  int depth = 2;
  Index width = 64;
};

/// The named architectures, "mlp-<depth>-<width>".
inline MlpShape parse_architecture(std::string_view name) {
  if (name == "mlp-2-2048") return {2, 2048};
  if (name == "mlp-3-200") return {3, 200};
  if (name == "mlp-5-2048") return {5, 2048};
  if (name == "mlp-4-4096") return {4, 4096};
  // Any other mlp-D-W is accepted for desk-scale runs.
  if (name.starts_with("mlp-")) {
    const auto rest = name.substr(4);
    const auto dash = rest.find('-');
    if (dash != std::string_view::npos) {
      try {
        const int d = std::stoi(std::string(rest.substr(0, dash)));
        const long w = std::stol(std::string(rest.substr(dash + 1)));
        if (d >= 1 && w >= 1) return {d, static_cast<Index>(w)};
      } catch (const std::exception&) {
      }
    }
  }
  throw ValidationError("unknown architecture '" + std::string(name) + "'");
}

class Mlp : public Model {
 public:
  /// Layer sizes [in, hidden..., out], Glorot-uniform weights scaled for
  /// tanh, zero biases.
  Mlp(std::vector<Index> sizes, std::uint64_t seed, TaskKind task = TaskKind::DerivativePrediction)
      : sizes_(std::move(sizes)), seed_(seed), task_(task) {
    if (sizes_.size() < 2) throw ValidationError("mlp: needs at least an input and an output size");
    for (Index s : sizes_) {
      if (s <= 0) throw ValidationError("mlp: layer sizes must be positive");
    }
    Index total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      offsets_.push_back(total);
      total += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
    }
    theta_ = Vector::Zero(total);
    Rng rng(seed);
    for (std::size_t l = 0; l < layers(); ++l) {
      const double fan = static_cast<double>(sizes_[l] + sizes_[l + 1]);
      const double gain = l + 1 < layers() ? 5.0 / 3.0 : 1.0;
      const double limit = gain * std::sqrt(6.0 / fan);
      auto w = weight(l);
      for (Index j = 0; j < w.cols(); ++j) {
        for (Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
      }
    }
  }

  static Mlp make(Index input_dim, Index output_dim, MlpShape shape, std::uint64_t seed,
                  TaskKind task = TaskKind::DerivativePrediction) {
    if (shape.depth < 1) throw ValidationError("mlp: depth must be at least 1");
    std::vector<Index> sizes{input_dim};
    for (int i = 0; i + 1 < shape.depth; ++i) sizes.push_back(shape.width);
    sizes.push_back(output_dim);
    return Mlp(std::move(sizes), seed, task);
  }

  using Model::predict;

  std::string kind() const override { return "mlp"; }
  TaskKind task() const override { return task_; }
  void set_task(TaskKind t) { task_ = t; }
  Index input_dim() const override { return sizes_.front(); }
  Index output_dim() const override { return sizes_.back(); }
  std::size_t layers() const { return sizes_.size() - 1; }
  const std::vector<Index>& sizes() const { return sizes_; }
  std::uint64_t seed() const { return seed_; }

  Vector& parameters() { return theta_; }
  const Vector& parameters() const { return theta_; }

  Eigen::Map<Matrix> weight(std::size_t l) {
    return {theta_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<const Matrix> weight(std::size_t l) const {
    return {theta_.data() + offsets_[l], sizes_[l + 1], sizes_[l]};
  }
  Eigen::Map<Vector> bias(std::size_t l) {
    return {theta_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
  }
  Eigen::Map<const Vector> bias(std::size_t l) const {
    return {theta_.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]};
  }

  /// Outputs for a batch of column inputs.
  Matrix forward(const Matrix& x) const {
    if (x.rows() != input_dim()) throw DimensionError("mlp: input dimension mismatch");
    Matrix a = x;
    for (std::size_t l = 0; l < layers(); ++l) {
      Matrix z = weight(l) * a;
      z.colwise() += bias(l);
      a = l + 1 < layers() ? Matrix(z.array().tanh().matrix()) : std::move(z);
    }
    return a;
  }

  void predict(const Vector& input, Vector& out) const override {
    check_input(input);
    out = forward(input);
  }

  /// Mean squared error over every output of the batch, and its gradient
  /// with respect to the flat parameter vector.
  double loss_and_gradient(const Matrix& x, const Matrix& y, Vector& grad) const {
    if (x.cols() == 0) throw ValidationError("mlp: empty batch");
    if (x.rows() != input_dim() || y.rows() != output_dim() || y.cols() != x.cols()) {
      throw DimensionError("mlp: batch dimension mismatch");
    }
    std::vector<Matrix> acts;
    acts.reserve(layers() + 1);
    acts.push_back(x);
    for (std::size_t l = 0; l < layers(); ++l) {
      Matrix z = weight(l) * acts.back();
      z.colwise() += bias(l);
      if (l + 1 < layers()) z = z.array().tanh().matrix();
      acts.push_back(std::move(z));
    }
    const Matrix diff = acts.back() - y;
    const double count = static_cast<double>(y.size());
    const double loss = diff.squaredNorm() / count;

    grad.resize(theta_.size());
    Matrix delta = (2.0 / count) * diff;
    for (std::size_t l = layers(); l-- > 0;) {
      Eigen::Map<Matrix> gw(grad.data() + offsets_[l], sizes_[l + 1], sizes_[l]);
      Eigen::Map<Vector> gb(grad.data() + offsets_[l] + sizes_[l + 1] * sizes_[l], sizes_[l + 1]);
      gw.noalias() = delta * acts[l].transpose();
      gb = delta.rowwise().sum();
      if (l > 0) {
        Matrix back = weight(l).transpose() * delta;
        delta = back.array() * (1.0 - acts[l].array().square());
      }
    }
    return loss;
  }

 private:
  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
  Vector theta_;
  std::uint64_t seed_;
  TaskKind task_;
};

inline Vector mlp_gradients(const Mlp& model, const Matrix& x, const Matrix& y) {
  Vector g;
  model.loss_and_gradient(x, y, g);
  return g;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient
};

class Adam {
 public:
  Adam(Index size, AdamConfig cfg) : cfg_(cfg), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

  void step(Vector& params, const Vector& grad) {
    ++t_;
    const Vector g = cfg_.weight_decay != 0.0 ? Vector(grad + cfg_.weight_decay * params) : grad;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * g;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.array() -= cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Vector m_, v_;
  std::size_t t_ = 0;
};

enum class OptimizerKind { Adam, Sgd };

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double noise_variance = 0.0;  // input noise; derivative targets are corrected for it
  std::uint64_t seed = 0;
};

/// Adds N(0, sd^2) noise to the first `rows` input rows. Derivative
/// targets absorb the negated noise; step targets stay clean.
inline void inject_noise(Matrix& xb, Matrix& yb, Index rows, TaskKind task, double sd, Rng& rng) {
  for (Index j = 0; j < xb.cols(); ++j) {
    for (Index i = 0; i < rows; ++i) {
      const double e = sd * rng.normal();
      xb(i, j) += e;
      if (task == TaskKind::DerivativePrediction) yb(i, j) -= e;
    }
  }
}

/// Shuffled mini-batch training. Returns the mean loss of every epoch.
inline std::vector<double> mlp_train(Mlp& model, const TrainingSet& set, const TrainConfig& cfg) {
  if (set.size() == 0) throw ValidationError("mlp: empty training set");
  if (set.inputs.rows() != model.input_dim() || set.targets.rows() != model.output_dim()) {
    throw DimensionError("mlp: training set does not match the network");
  }
  if (cfg.noise_variance < 0.0) throw ValidationError("mlp: noise variance must be >= 0");
  model.set_task(set.task);
  const Index n = set.size();
  const auto bs = static_cast<Index>(std::max<std::size_t>(1, cfg.batch_size));
  const double noise_sd = std::sqrt(cfg.noise_variance);
  const Index noisy_rows = set.state_dim;

  Adam adam(model.parameters().size(),
            AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(cfg.seed);
  Vector grad;
  Matrix xb, yb;
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    double total = 0.0;
    for (Index start = 0; start < n; start += bs) {
      const Index b = std::min(bs, n - start);
      xb.resize(set.inputs.rows(), b);
      yb.resize(set.targets.rows(), b);
      for (Index j = 0; j < b; ++j) {
        const Index src = order[static_cast<std::size_t>(start + j)];
        xb.col(j) = set.inputs.col(src);
        yb.col(j) = set.targets.col(src);
      }
      if (cfg.noise_variance > 0.0) inject_noise(xb, yb, noisy_rows, set.task, noise_sd, rng);
      total += model.loss_and_gradient(xb, yb, grad) * static_cast<double>(b);
      if (cfg.optimizer == OptimizerKind::Adam) {
        adam.step(model.parameters(), grad);
      } else {
        model.parameters() -= cfg.learning_rate * (grad + cfg.weight_decay * model.parameters());
      }
    }
    const double loss = total / static_cast<double>(n);
    if (!std::isfinite(loss)) {
      throw DivergenceError("mlp: non-finite loss at epoch " + std::to_string(epoch), epoch);
    }
    history.push_back(loss);
  }
  return history;
}

}  // namespace physbench
