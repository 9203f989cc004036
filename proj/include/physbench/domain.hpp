#pragma once

// Core state, trajectory and time-grid types shared by every module.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "physbench/errors.hpp"

namespace physbench {

using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Position/momentum pair. For the Navier-Stokes system q holds pressures
/// and p the flattened velocity field.
struct PhaseState {
  Vector q;
  Vector p;

  Index size() const { return q.size() + p.size(); }
};

/// Time derivative of a PhaseState, component-wise.
struct StateDerivative {
  Vector dq;
  Vector dp;
};

inline bool all_finite(const Vector& v) { return v.allFinite(); }

inline Vector pack_state(const PhaseState& s) {
  Vector out(s.q.size() + s.p.size());
  out << s.q, s.p;
  return out;
}

inline Vector pack_derivative(const StateDerivative& d) {
  Vector out(d.dq.size() + d.dp.size());
  out << d.dq, d.dp;
  return out;
}

inline PhaseState unpack_state(const Vector& v, Index nq) {
  if (nq < 0 || v.size() < nq) {
    throw DimensionError("unpack_state: vector of length " +
                         std::to_string(v.size()) +
                         " cannot hold a position block of length " +
                         std::to_string(nq));
  }
  return PhaseState{v.head(nq), v.tail(v.size() - nq)};
}

inline StateDerivative unpack_derivative(const Vector& v, Index nq) {
  PhaseState s = unpack_state(v, nq);
  return StateDerivative{std::move(s.q), std::move(s.p)};
}

/// Uniform stored time grid. Snapshots are taken every `step` time units;
/// the integrator runs `subsample` inner steps between snapshots.
class TimeGrid {
 public:
  TimeGrid(double step, std::size_t count, std::size_t subsample = 1)
      : step_(step), count_(count), subsample_(subsample) {
    if (!(step > 0.0) || !std::isfinite(step)) {
      throw ValidationError("TimeGrid: step must be positive and finite");
    }
    if (count < 1) throw ValidationError("TimeGrid: count must be >= 1");
    if (subsample < 1) throw ValidationError("TimeGrid: subsample must be >= 1");
  }

  double step() const { return step_; }
  std::size_t count() const { return count_; }
  std::size_t subsample() const { return subsample_; }
  double inner_step() const { return step_ / static_cast<double>(subsample_); }

  // k * step, never accumulated.
  double time(std::size_t k) const { return static_cast<double>(k) * step_; }

  std::vector<double> times() const {
    std::vector<double> t(count_);
    for (std::size_t k = 0; k < count_; ++k) t[k] = time(k);
    return t;
  }

  double final_time() const { return time(count_ - 1); }

  bool operator==(const TimeGrid&) const = default;

 private:
  double step_;
  std::size_t count_;
  std::size_t subsample_;
};

struct Trajectory {
  TimeGrid grid;
  std::vector<PhaseState> states;
  std::vector<StateDerivative> derivatives;
  double gen_time_seconds = 0.0;

  std::size_t size() const { return states.size(); }
};

/// Checks the Trajectory invariants and describes every violation found.
/// An empty result means the trajectory is well formed.
inline std::vector<std::string> validate_trajectory(const Trajectory& tr) {
  std::vector<std::string> out;
  if (tr.states.size() != tr.derivatives.size()) {
    out.emplace_back("length mismatch");
  }
  if (tr.states.size() != tr.grid.count()) {
    out.emplace_back("grid count mismatch");
  }
  if (!(tr.gen_time_seconds >= 0.0)) out.emplace_back("negative generation time");

  const std::size_t n = std::min(tr.states.size(), tr.derivatives.size());
  const Index nq = tr.states.empty() ? 0 : tr.states.front().q.size();
  const Index np = tr.states.empty() ? 0 : tr.states.front().p.size();
  for (std::size_t k = 0; k < tr.states.size(); ++k) {
    const auto& s = tr.states[k];
    if (s.q.size() != nq || s.p.size() != np) {
      out.push_back("dimension mismatch at " + std::to_string(k));
    }
    if (!all_finite(s.q) || !all_finite(s.p)) {
      out.push_back("non-finite at " + std::to_string(k));
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    const auto& d = tr.derivatives[k];
    if (d.dq.size() != tr.states[k].q.size() ||
        d.dp.size() != tr.states[k].p.size()) {
      out.push_back("derivative dimension mismatch at " + std::to_string(k));
    }
    if (!all_finite(d.dq) || !all_finite(d.dp)) {
      out.push_back("non-finite derivative at " + std::to_string(k));
    }
  }
  return out;
}

}  // namespace physbench
