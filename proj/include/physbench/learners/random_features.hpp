#pragma once

// Kernel ridge regression on frozen random ReLU features,
//   phi(x)_l = ReLU(<x, z_l>) / sqrt(L),  z_l ~ N(0, I).
// Feature l is drawn from its own child stream, so a model with more
// features extends one with fewer.

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "physbench/learners/model.hpp"
#include "physbench/rng.hpp"

namespace physbench {

struct RidgeSgdConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

class RandomFeatureModel : public Model {
 public:
  RandomFeatureModel(Index num_features, Index input_dim, std::uint64_t seed,
                     TaskKind task = TaskKind::DerivativePrediction)
      : seed_(seed), task_(task), z_(num_features, input_dim) {
    if (num_features <= 0 || input_dim <= 0) throw ValidationError("random features: sizes must be positive");
    for (Index l = 0; l < num_features; ++l) {
      Rng rng = Rng::child(seed, static_cast<std::uint64_t>(l));
      for (Index d = 0; d < input_dim; ++d) z_(l, d) = rng.normal();
    }
  }

  /// Rebuilds a fitted model from stored parameters.
  RandomFeatureModel(Matrix z, Matrix w, std::uint64_t seed, TaskKind task, double lambda)
      : seed_(seed), task_(task), z_(std::move(z)), w_(std::move(w)), lambda_(lambda) {
    if (w_.rows() != z_.rows()) throw DimensionError("random features: weight rows must equal L");
  }

  using Model::predict;

  std::string kind() const override { return "random-features"; }
  TaskKind task() const override { return task_; }
  Index input_dim() const override { return z_.cols(); }
  Index output_dim() const override { return w_.cols(); }
  Index num_features() const { return z_.rows(); }
  std::uint64_t seed() const { return seed_; }
  const Matrix& projections() const { return z_; }
  const Matrix& weights() const { return w_; }
  double lambda() const { return lambda_; }
  bool fitted() const { return w_.size() > 0; }

  /// Feature matrix, one column per input column (L x N).
  Matrix features(const Matrix& inputs) const {
    if (inputs.rows() != input_dim()) throw DimensionError("random features: input dimension mismatch");
    return (z_ * inputs).cwiseMax(0.0) / std::sqrt(static_cast<double>(num_features()));
  }

  Vector features(const Vector& x) const {
    check_input(x);
    return (z_ * x).cwiseMax(0.0) / std::sqrt(static_cast<double>(num_features()));
  }

  /// Closed-form ridge: minimizes ||Phi^T W - Y^T||^2 + lambda ||W||^2.
  /// Uses the L x L system when N >= L and the N x N dual otherwise. Without
  /// an explicit lambda, 1e-8 times the mean diagonal of Phi Phi^T is used.
  void fit(const Matrix& inputs, const Matrix& targets, std::optional<double> lambda = std::nullopt) {
    if (inputs.cols() != targets.cols()) throw DimensionError("random features: input/target count mismatch");
    if (inputs.cols() == 0) throw ValidationError("random features: empty training set");
    const Matrix phi = features(inputs);
    const Index n = phi.cols();
    const Index l = phi.rows();
    const double mean_diag = phi.squaredNorm() / static_cast<double>(l);
    lambda_ = lambda ? *lambda : 1e-8 * mean_diag;
    if (lambda_ < 0.0 || !std::isfinite(lambda_)) throw ValidationError("random features: lambda must be >= 0");

    auto solve = [&](Matrix gram, const Matrix& rhs) -> Matrix {
      gram.diagonal().array() += lambda_;
      Eigen::LLT<Matrix> llt(gram);
      const double scale = gram.diagonal().cwiseAbs().maxCoeff();
      const bool singular = llt.info() != Eigen::Success || !(scale > 0.0) ||
                            (lambda_ == 0.0 && !(llt.rcond() > 1e-15));
      if (singular) {
        throw IllConditionedError(
            "random features: normal equations are singular or ill-conditioned at lambda = " +
            std::to_string(lambda_) + "; use lambda > 0");
      }
      return llt.solve(rhs);
    };
    if (n >= l) {
      w_ = solve(phi * phi.transpose(), phi * targets.transpose());
    } else {
      w_ = phi * solve(phi.transpose() * phi, targets.transpose());
    }
  }

  void fit(const TrainingSet& set, std::optional<double> lambda = std::nullopt) {
    task_ = set.task;
    fit(set.inputs, set.targets, lambda);
  }

  /// Mini-batch SGD on mean squared error plus weight decay, starting from
  /// zero weights. Returns the per-epoch mean loss.
  std::vector<double> fit_sgd(const TrainingSet& set, const RidgeSgdConfig& cfg) {
    task_ = set.task;
    const Matrix phi = features(set.inputs);
    const Index n = phi.cols();
    w_ = Matrix::Zero(num_features(), set.targets.rows());
    lambda_ = cfg.weight_decay;
    std::vector<Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Index{0});
    Rng rng(cfg.seed);
    std::vector<double> history;
    const auto bs = static_cast<Index>(std::max<std::size_t>(1, cfg.batch_size));
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      shuffle(order, rng);
      double total = 0.0;
      for (Index start = 0; start < n; start += bs) {
        const Index b = std::min(bs, n - start);
        Matrix pb(num_features(), b), yb(set.targets.rows(), b);
        for (Index j = 0; j < b; ++j) {
          pb.col(j) = phi.col(order[static_cast<std::size_t>(start + j)]);
          yb.col(j) = set.targets.col(order[static_cast<std::size_t>(start + j)]);
        }
        const Matrix resid = w_.transpose() * pb - yb;
        total += resid.squaredNorm();
        const Matrix grad = (2.0 / static_cast<double>(b * yb.rows())) * pb * resid.transpose() +
                            cfg.weight_decay * w_;
        w_ -= cfg.learning_rate * grad;
      }
      const double loss = total / static_cast<double>(n * set.targets.rows());
      if (!std::isfinite(loss)) {
        throw DivergenceError("random features: non-finite loss at epoch " + std::to_string(epoch), epoch);
      }
      history.push_back(loss);
    }
    return history;
  }

  void predict(const Vector& input, Vector& out) const override {
    if (!fitted()) throw ValidationError("random features: model is not fitted");
    out = w_.transpose() * features(input);
  }

  Matrix predict_batch(const Matrix& inputs) const { return w_.transpose() * features(inputs); }

 private:
  std::uint64_t seed_;
  TaskKind task_;
  Matrix z_;
  Matrix w_;
  double lambda_ = 0.0;
};

}  // namespace physbench
