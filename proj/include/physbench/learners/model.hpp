#pragma once

// Shared learner plumbing: task kinds, training-set assembly and the
// prediction interface used by rollouts.

#include <Eigen/Dense>

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "physbench/domain.hpp"

namespace physbench {

using Matrix = Eigen::MatrixXd;

/// Derivative prediction learns x -> f(x); step prediction learns
/// x_k -> x_{k+1} at the stored stride.
enum class TaskKind { DerivativePrediction, StepPrediction };

inline std::string_view to_string(TaskKind t) {
  return t == TaskKind::DerivativePrediction ? "derivative" : "step";
}

inline TaskKind parse_task(std::string_view s) {
  if (s == "derivative" || s == "deriv") return TaskKind::DerivativePrediction;
  if (s == "step") return TaskKind::StepPrediction;
  throw ValidationError("unknown task '" + std::string(s) + "'");
}

/// Samples stored column-wise. Inputs are packed states, optionally
/// followed by per-trajectory mask features; targets are packed derivatives
/// or successor states.
struct TrainingSet {
  Matrix inputs;
  Matrix targets;
  Index state_dim = 0;
  TaskKind task = TaskKind::DerivativePrediction;

  Index size() const { return inputs.cols(); }
};

inline Vector augment(const Vector& state, const Vector& mask) {
  if (mask.size() == 0) return state;
  Vector out(state.size() + mask.size());
  out << state, mask;
  return out;
}

inline TrainingSet make_training_set(const std::vector<Trajectory>& trajs, TaskKind task,
                                     const std::vector<Vector>& masks = {}) {
  if (trajs.empty()) throw ValidationError("training set needs at least one trajectory");
  if (!masks.empty() && masks.size() != trajs.size()) {
    throw DimensionError("one mask per trajectory is required");
  }
  const Index state_dim = trajs.front().states.front().size();
  const Index mask_dim = masks.empty() ? 0 : masks.front().size();
  const std::size_t drop = task == TaskKind::StepPrediction ? 1 : 0;
  std::size_t n = 0;
  for (const auto& tr : trajs) {
    if (tr.size() < 1 + drop) throw ValidationError("trajectory too short for this task");
    n += tr.size() - drop;
  }
  TrainingSet set;
  set.task = task;
  set.state_dim = state_dim;
  set.inputs.resize(state_dim + mask_dim, static_cast<Index>(n));
  set.targets.resize(state_dim, static_cast<Index>(n));
  Index col = 0;
  for (std::size_t t = 0; t < trajs.size(); ++t) {
    const auto& tr = trajs[t];
    for (std::size_t k = 0; k + drop < tr.size(); ++k, ++col) {
      const Vector x = pack_state(tr.states[k]);
      if (x.size() != state_dim) throw DimensionError("trajectories have different state sizes");
      set.inputs.col(col).head(state_dim) = x;
      if (mask_dim) set.inputs.col(col).tail(mask_dim) = masks[t];
      set.targets.col(col) = task == TaskKind::StepPrediction ? pack_state(tr.states[k + 1])
                                                                : pack_derivative(tr.derivatives[k]);
    }
  }
  return set;
}

/// A fitted predictor. `predict` maps one (augmented) input to one target.
class Model {
 public:
  virtual ~Model() = default;
  virtual std::string kind() const = 0;
  virtual TaskKind task() const = 0;
  virtual Index input_dim() const = 0;
  virtual Index output_dim() const = 0;
  virtual void predict(const Vector& input, Vector& out) const = 0;

  Vector predict(const Vector& input) const {
    Vector out;
    predict(input, out);
    return out;
  }

 protected:
  void check_input(const Vector& input) const {
    if (input.size() != input_dim()) {
      throw DimensionError(kind() + ": input has length " + std::to_string(input.size()) + ", expected " +
                           std::to_string(input_dim()));
    }
  }
};

}  // namespace physbench
