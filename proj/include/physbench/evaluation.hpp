#pragma once

// Rollouts of learned models against reference trajectories, the error
// metrics reported for them, the power-of-two timing comparison against
// numerical integrators, and box-plot summaries.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "physbench/integrators.hpp"
#include "physbench/io/zip.hpp"
#include "physbench/learners/model.hpp"

namespace physbench {

/// A rollout stops once the state is non-finite or its norm exceeds this
/// multiple of max(|x0|, 1).
inline constexpr double kDivergenceFactor = 1e6;

struct RolloutResult {
  Trajectory predicted{TimeGrid(1.0, 1), {}, {}, 0.0};
  Trajectory reference{TimeGrid(1.0, 1), {}, {}, 0.0};
  std::vector<double> per_step_mse;  // steps 1 .. shared - 1
  double trajectory_mse = 0.0;
  std::optional<std::size_t> diverged_at;
  double eval_seconds = 0.0;  // time inside the model only
  std::size_t steps_taken = 0;

  double per_step_seconds() const {
    return steps_taken ? eval_seconds / static_cast<double>(steps_taken) : 0.0;
  }
};

inline double state_mse(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("state_mse: size mismatch");
  if (a.size() == 0) return 0.0;
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Weight of step k out of K error entries: exp(-ln(100) * k / (K - 1)),
/// evaluated as 100^-p so both endpoints are exact.
inline double step_weight(std::size_t k, std::size_t count) {
  if (count <= 1) return 1.0;
  const double p = static_cast<double>(k) / static_cast<double>(count - 1);
  return std::pow(100.0, -p);
}

inline double weighted_trajectory_mse(const std::vector<double>& per_step) {
  if (per_step.empty()) throw ValidationError("weighted_trajectory_mse: no steps");
  double s = 0.0;
  for (std::size_t k = 0; k < per_step.size(); ++k) s += step_weight(k, per_step.size()) * per_step[k];
  return s / static_cast<double>(per_step.size());
}

namespace detail {

inline bool escaped(const Vector& x, double limit) { return !x.allFinite() || x.norm() > limit; }

/// Fills the per-step and trajectory errors from the predicted states.
inline void score(RolloutResult& r) {
  const std::size_t shared = std::min(r.predicted.size(), r.reference.size());
  r.per_step_mse.clear();
  for (std::size_t k = 1; k < shared; ++k) {
    r.per_step_mse.push_back(
        state_mse(pack_state(r.predicted.states[k]), pack_state(r.reference.states[k])));
  }
  r.trajectory_mse = mean(r.per_step_mse);
}

}  // namespace detail

/// Presents a learned derivative model as an ODE right-hand side. Mask
/// features are appended to every query; time spent in the model is
/// accumulated.
class LearnedSystem {
 public:
  LearnedSystem(const Model& model, Index dimension, std::optional<Index> position_size, Vector mask = {})
      : model_(&model), dim_(dimension), nq_(position_size), mask_(std::move(mask)) {
    if (model.task() != TaskKind::DerivativePrediction) {
      throw ValidationError("derivative rollout needs a derivative-prediction model");
    }
    if (model.input_dim() != dimension + mask_.size() || model.output_dim() != dimension) {
      throw DimensionError("learned system: model dimensions do not match the state");
    }
    input_.resize(dimension + mask_.size());
    input_.tail(mask_.size()) = mask_;
  }

  Index dimension() const { return dim_; }
  std::optional<Index> position_size() const { return nq_; }

  void derivative(const Vector& x, Vector& dx) const {
    input_.head(dim_) = x;
    const auto t0 = std::chrono::steady_clock::now();
    model_->predict(input_, dx);
    seconds_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  double seconds() const { return seconds_; }

 private:
  const Model* model_;
  Index dim_;
  std::optional<Index> nq_;
  Vector mask_;
  mutable Vector input_;
  mutable double seconds_ = 0.0;
};

/// Wraps a known system as a derivative "model"; the oracle for rollouts.
template <OdeSystem S>
class SystemModel : public Model {
 public:
  explicit SystemModel(const S& sys) : sys_(&sys) {}
  using Model::predict;
  std::string kind() const override { return "system"; }
  TaskKind task() const override { return TaskKind::DerivativePrediction; }
  Index input_dim() const override { return sys_->dimension(); }
  Index output_dim() const override { return sys_->dimension(); }
  void predict(const Vector& in, Vector& out) const override { sys_->derivative(in, out); }

 private:
  const S* sys_;
};

/// Integrates the learned derivative at the reference's stored stride
/// (no subsampling) and scores it step by step against the reference.
inline RolloutResult rollout_derivative(const Model& model, IntegratorKind kind, const Trajectory& reference,
                                        const Vector& mask = {}, IntegratorOptions opts = {}) {
  if (reference.size() == 0) throw ValidationError("rollout: empty reference trajectory");
  const PhaseState& s0 = reference.states.front();
  const Vector x0 = pack_state(s0);
  const std::optional<Index> nq = s0.p.size() > 0 ? std::optional<Index>(s0.q.size()) : std::nullopt;
  LearnedSystem sys(model, x0.size(), nq, mask);
  Stepper<LearnedSystem> stepper(sys, kind, opts);

  RolloutResult r;
  r.reference = reference;
  const double dt = reference.grid.step();
  const double limit = kDivergenceFactor * std::max(x0.norm(), 1.0);
  std::vector<PhaseState> states{s0};
  std::vector<StateDerivative> derivs;
  Vector x = x0, dx;
  Vector input(x0.size() + mask.size());
  input.tail(mask.size()) = mask;
  auto record_derivative = [&] {
    input.head(x.size()) = x;
    model.predict(input, dx);
    derivs.push_back(unpack_derivative(dx, s0.q.size()));
  };
  record_derivative();
  for (std::size_t k = 1; k < reference.size(); ++k) {
    try {
      stepper.step(x, dt, k - 1);
    } catch (const DivergenceError&) {
      r.diverged_at = k;
    } catch (const SolverError&) {
      r.diverged_at = k;
    }
    ++r.steps_taken;
    if (!r.diverged_at && detail::escaped(x, limit)) r.diverged_at = k;
    if (r.diverged_at) break;
    states.push_back(unpack_state(x, s0.q.size()));
    record_derivative();
  }
  r.eval_seconds = sys.seconds();
  r.predicted = Trajectory{TimeGrid(dt, states.size(), 1), std::move(states), std::move(derivs), r.eval_seconds};
  detail::score(r);
  return r;
}

/// Applies a step model recurrently, count - 1 times, from the reference's
/// initial state. `count` defaults to the reference length.
inline RolloutResult rollout_step(const Model& model, const Trajectory& reference, const Vector& mask = {},
                                  std::optional<std::size_t> count = std::nullopt) {
  if (model.task() != TaskKind::StepPrediction) {
    throw ValidationError("step rollout needs a step-prediction model");
  }
  if (reference.size() == 0) throw ValidationError("rollout: empty reference trajectory");
  const std::size_t n = count.value_or(reference.size());
  if (n < 1) throw ValidationError("rollout: count must be >= 1");
  const PhaseState& s0 = reference.states.front();
  const Vector x0 = pack_state(s0);
  if (model.input_dim() != x0.size() + mask.size() || model.output_dim() != x0.size()) {
    throw DimensionError("step rollout: model dimensions do not match the state");
  }

  RolloutResult r;
  r.reference = reference;
  const double limit = kDivergenceFactor * std::max(x0.norm(), 1.0);
  std::vector<PhaseState> states{s0};
  Vector input(x0.size() + mask.size());
  input.tail(mask.size()) = mask;
  input.head(x0.size()) = x0;
  Vector next;
  for (std::size_t k = 1; k < n; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    model.predict(input, next);
    r.eval_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++r.steps_taken;
    if (detail::escaped(next, limit)) {
      r.diverged_at = k;
      break;
    }
    states.push_back(unpack_state(next, s0.q.size()));
    input.head(x0.size()) = next;
  }
  // Step models carry no derivative; store the forward difference.
  const double dt = reference.grid.step();
  std::vector<StateDerivative> derivs;
  for (std::size_t k = 0; k < states.size(); ++k) {
    const std::size_t a = k + 1 < states.size() ? k : (k > 0 ? k - 1 : k);
    const std::size_t b = std::min(a + 1, states.size() - 1);
    const Vector d = (pack_state(states[b]) - pack_state(states[a])) / dt;
    derivs.push_back(unpack_derivative(d, s0.q.size()));
  }
  r.predicted = Trajectory{TimeGrid(dt, states.size(), 1), std::move(states), std::move(derivs), r.eval_seconds};
  detail::score(r);
  return r;
}

// ---- timing ------------------------------------------------------------------

/// A power-of-two time-step multiplier. `capped` means no tested power
/// reached the crossing, so the true factor is at least `factor`.
struct Scaling {
  std::uint64_t factor = 1;
  bool capped = false;

  bool operator==(const Scaling&) const = default;
  std::string label() const { return (capped ? ">=" : "") + std::to_string(factor) + "x"; }
};

/// Smallest 2^j whose integrator error exceeds the learned error at that
/// power; both spans are indexed by j. Non-finite integrator errors count
/// as exceeding anything; a non-finite learned error is never exceeded.
inline Scaling find_scaling(const std::vector<double>& integrator_error, const std::vector<double>& learned_error) {
  if (integrator_error.empty() || integrator_error.size() != learned_error.size()) {
    throw ValidationError("find_scaling: need one learned error per tested power");
  }
  for (std::size_t j = 0; j < integrator_error.size(); ++j) {
    const double li = std::isnan(learned_error[j]) ? INFINITY : learned_error[j];
    const double ii = std::isfinite(integrator_error[j]) ? integrator_error[j] : INFINITY;
    if (ii > li) return {std::uint64_t{1} << j, false};
  }
  return {std::uint64_t{1} << (integrator_error.size() - 1), true};
}

inline Scaling find_scaling(const std::vector<double>& integrator_error, double learned_error) {
  return find_scaling(integrator_error, std::vector<double>(integrator_error.size(), learned_error));
}

/// Most frequent scaling; ties go to the smaller factor, uncapped first.
inline Scaling modal_scaling(const std::vector<Scaling>& all) {
  if (all.empty()) throw ValidationError("modal_scaling: no trajectories");
  std::map<std::pair<std::uint64_t, bool>, std::size_t> counts;
  for (const auto& s : all) ++counts[{s.factor, s.capped}];
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return {best->first.first, best->first.second};
}

struct TimingReport {
  std::vector<Scaling> scaling;  // per trajectory
  Scaling modal;
  double learned_step_seconds = 0.0;     // median over trajectories
  double integrator_step_seconds = 0.0;  // median over trajectories, at dt_base
  double time_ratio = 0.0;
  int max_power = 0;
};

inline double median(std::vector<double> v);

/// Runs `kind` on the true system at dt_base * 2^j, j = 0..max_power, from
/// each reference initial state and compares errors with the learned
/// rollout at the last time shared by the integrator's grid, the stored
/// grid and the reference. The stored stride must be a whole multiple of
/// dt_base.
template <OdeSystem S>
TimingReport timing_protocol(const S& sys, IntegratorKind kind, const std::vector<RolloutResult>& learned,
                             double dt_base, int max_power, IntegratorOptions opts = {}) {
  if (learned.empty()) throw ValidationError("timing: no learned results");
  if (max_power < 0 || max_power > 40) throw ValidationError("timing: max_power must be in [0, 40]");
  if (!(dt_base > 0.0)) throw ValidationError("timing: dt_base must be positive");
  TimingReport rep;
  rep.max_power = max_power;
  std::vector<double> learned_cost, integ_cost;
  for (const auto& r : learned) {
    const auto& ref = r.reference;
    const double ratio = ref.grid.step() / dt_base;
    const auto stride = static_cast<std::uint64_t>(std::llround(ratio));
    if (stride < 1 || std::abs(ratio - static_cast<double>(stride)) > 1e-9 * ratio) {
      throw ValidationError("timing: stored stride is not a whole multiple of dt_base");
    }
    const std::uint64_t total = (ref.size() - 1) * stride;  // in units of dt_base
    const Vector x0 = pack_state(ref.states.front());
    std::vector<double> ie, le;
    for (int j = 0; j <= max_power; ++j) {
      const std::uint64_t step = std::uint64_t{1} << j;
      const std::uint64_t common = std::lcm(stride, step);
      const std::uint64_t final_units = total / common * common;
      if (final_units == 0) {
        // No shared point after t = 0 at this or any coarser power.
        break;
      }
      const std::size_t idx = static_cast<std::size_t>(final_units / stride);
      double learned_err = INFINITY;
      if (!r.diverged_at || idx < *r.diverged_at) learned_err = r.per_step_mse.at(idx - 1);

      Stepper<S> stepper(sys, kind, opts);
      Vector x = x0;
      const std::uint64_t n = final_units / step;
      double err;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        for (std::uint64_t k = 0; k < n; ++k) stepper.step(x, dt_base * static_cast<double>(step), k);
        err = state_mse(x, pack_state(ref.states[idx]));
      } catch (const DivergenceError&) {
        err = INFINITY;
      } catch (const SolverError&) {
        err = INFINITY;
      }
      if (j == 0) {
        integ_cost.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
                             static_cast<double>(n));
      }
      ie.push_back(err);
      le.push_back(learned_err);
    }
    if (ie.empty()) throw ValidationError("timing: reference trajectory is too short");
    Scaling s = find_scaling(ie, le);
    if (s.capped) s.factor = std::uint64_t{1} << max_power;
    rep.scaling.push_back(s);
    learned_cost.push_back(r.per_step_seconds());
  }
  rep.modal = modal_scaling(rep.scaling);
  rep.learned_step_seconds = median(learned_cost);
  rep.integrator_step_seconds = median(integ_cost);
  rep.time_ratio = rep.integrator_step_seconds > 0.0 ? rep.learned_step_seconds / rep.integrator_step_seconds
                                                     : INFINITY;
  return rep;
}

// ---- summaries -----------------------------------------------------------------

/// Quantile by linear interpolation between order statistics,
/// h = (n - 1) q. `sorted` must be ascending.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ValidationError("quantile level must be in [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double f = h - static_cast<double>(lo);
  if (f == 0.0 || sorted[lo] == sorted[hi]) return sorted[lo];
  return sorted[lo] + f * (sorted[hi] - sorted[lo]);
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, 0.5);
}

/// Box-plot statistics: quartiles, fences at 1.5 IQR, whiskers at the most
/// extreme samples inside the fences, and everything beyond as outliers.
struct BoxStats {
  std::size_t count = 0;
  double median = 0.0, q1 = 0.0, q3 = 0.0;
  double lower_fence = 0.0, upper_fence = 0.0;
  double whisker_low = 0.0, whisker_high = 0.0;
  double min = 0.0, max = 0.0;
  std::vector<double> outliers;
};

inline BoxStats box_stats(std::vector<double> v) {
  if (v.empty()) throw ValidationError("box_stats: empty sample");
  std::sort(v.begin(), v.end());
  BoxStats b;
  b.count = v.size();
  b.median = quantile_sorted(v, 0.5);
  b.q1 = quantile_sorted(v, 0.25);
  b.q3 = quantile_sorted(v, 0.75);
  const double iqr = b.q3 - b.q1;
  b.lower_fence = b.q1 - 1.5 * iqr;
  b.upper_fence = b.q3 + 1.5 * iqr;
  b.min = v.front();
  b.max = v.back();
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  for (double x : v) {
    if (x < b.lower_fence || x > b.upper_fence) {
      b.outliers.push_back(x);
    } else {
      b.whisker_low = std::min(b.whisker_low, x);
      b.whisker_high = std::max(b.whisker_high, x);
    }
  }
  return b;
}

struct EvalSummary {
  BoxStats mse;
  BoxStats weighted_mse;
  std::size_t diverged = 0;
};

/// Summary over every (trajectory, replica) result.
inline EvalSummary aggregate_report(const std::vector<RolloutResult>& results) {
  if (results.empty()) throw ValidationError("aggregate_report: no results");
  std::vector<double> plain, weighted;
  EvalSummary s;
  for (const auto& r : results) {
    plain.push_back(r.trajectory_mse);
    weighted.push_back(r.per_step_mse.empty() ? 0.0 : weighted_trajectory_mse(r.per_step_mse));
    if (r.diverged_at) ++s.diverged;
  }
  s.mse = box_stats(std::move(plain));
  s.weighted_mse = box_stats(std::move(weighted));
  return s;
}

// ---- results files -------------------------------------------------------------

inline nlohmann::ordered_json to_json(const BoxStats& b) {
  nlohmann::ordered_json j;
  j["count"] = b.count;
  j["median"] = b.median;
  j["q1"] = b.q1;
  j["q3"] = b.q3;
  j["whisker_low"] = b.whisker_low;
  j["whisker_high"] = b.whisker_high;
  j["min"] = b.min;
  j["max"] = b.max;
  j["outliers"] = b.outliers;
  return j;
}

inline nlohmann::ordered_json to_json(const TimingReport& t) {
  nlohmann::ordered_json j;
  j["time_ratio"] = t.time_ratio;
  j["scaling"] = t.modal.label();
  j["scaling_factor"] = t.modal.factor;
  j["scaling_capped"] = t.modal.capped;
  j["max_power"] = t.max_power;
  j["learned_step_seconds"] = t.learned_step_seconds;
  j["integrator_step_seconds"] = t.integrator_step_seconds;
  auto& per = j["per_trajectory_scaling"] = nlohmann::ordered_json::array();
  for (const auto& s : t.scaling) per.push_back(s.label());
  return j;
}

inline constexpr std::string_view kResultsFile = "results.json";
inline constexpr std::string_view kPerStepFile = "per_step_mse.npz";

/// Writes results.json (summary, per-trajectory scalars and timing keyed by
/// baseline integrator) and per_step_mse.npz (one float64 array per result,
/// named like trajectories).
inline void write_eval_results(const std::filesystem::path& dir, const std::vector<RolloutResult>& results,
                               const nlohmann::ordered_json& context = nlohmann::ordered_json::object(),
                               const std::map<std::string, TimingReport>& timing = {}) {
  std::filesystem::create_directories(dir);
  const EvalSummary s = aggregate_report(results);
  nlohmann::ordered_json doc;
  doc["context"] = context;
  doc["summary"] = {{"mse", to_json(s.mse)}, {"weighted_mse", to_json(s.weighted_mse)}, {"diverged", s.diverged}};
  auto& per = doc["trajectories"] = nlohmann::ordered_json::array();
  std::map<std::string, io::NdArray> arrays;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    char name[32];
    std::snprintf(name, sizeof name, "traj_%05zu", i);
    nlohmann::ordered_json t;
    t["name"] = name;
    t["trajectory_mse"] = r.trajectory_mse;
    t["weighted_mse"] = r.per_step_mse.empty() ? 0.0 : weighted_trajectory_mse(r.per_step_mse);
    t["final_mse"] = r.per_step_mse.empty() ? 0.0 : r.per_step_mse.back();
    t["diverged_at"] = r.diverged_at ? nlohmann::ordered_json(*r.diverged_at) : nlohmann::ordered_json(nullptr);
    t["steps"] = r.per_step_mse.size();
    t["eval_seconds"] = r.eval_seconds;
    per.push_back(std::move(t));
    arrays.emplace(name, io::NdArray::f64({r.per_step_mse.size()}, r.per_step_mse));
  }
  if (!timing.empty()) {
    auto& t = doc["timing"] = nlohmann::ordered_json::object();
    for (const auto& [baseline, rep] : timing) t[baseline] = to_json(rep);
  }
  std::map<std::string, const io::NdArray*> ptrs;
  for (const auto& [k, v] : arrays) ptrs[k] = &v;
  io::write_npz(dir / kPerStepFile, ptrs);
  std::ofstream(dir / kResultsFile) << doc.dump(2) << "\n";
}

}  // namespace physbench
