#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "json.hpp"
#include "physbench/evaluation.hpp"
#include "physbench/io/zip.hpp"
#include "physbench/learners/knn.hpp"
#include "physbench/systems/spring.hpp"

using namespace physbench;

namespace {

Trajectory closed_form_trajectory(double r, double theta, double dt, std::size_t n) {
  Trajectory tr{TimeGrid(dt, n, 1), {}, {}, 0.0};
  for (std::size_t k = 0; k < n; ++k) {
    tr.states.push_back(spring_closed_form(r, theta, tr.grid.time(k)));
    tr.derivatives.push_back(spring_derivative(tr.states.back()));
  }
  return tr;
}

class FunctionModel : public Model {
 public:
  FunctionModel(Index dim, TaskKind task, std::function<Vector(const Vector&)> f)
      : dim_(dim), task_(task), f_(std::move(f)) {}
  using Model::predict;
  std::string kind() const override { return "function"; }
  TaskKind task() const override { return task_; }
  Index input_dim() const override { return dim_; }
  Index output_dim() const override { return dim_; }
  void predict(const Vector& in, Vector& out) const override { out = f_(in); }

 private:
  Index dim_;
  TaskKind task_;
  std::function<Vector(const Vector&)> f_;
};

}  // namespace

// ---- rollouts ----------------------------------------------------------------

TEST(Rollout, OracleModelReproducesIntegratorBitForBit) {
  SpringSystem sys;
  SystemModel<SpringSystem> oracle(sys);
  const auto ref = closed_form_trajectory(0.7, 0.3, 0.1, 60);
  for (auto kind : {IntegratorKind::ForwardEuler, IntegratorKind::Leapfrog, IntegratorKind::RK4,
                    IntegratorKind::BackwardEuler, IntegratorKind::BDF2}) {
    const auto r = rollout_derivative(oracle, kind, ref);
    const auto base = integrate(sys, kind, pack_state(ref.states[0]), TimeGrid(0.1, 60, 1));
    ASSERT_EQ(r.predicted.size(), 60u);
    ASSERT_EQ(r.per_step_mse.size(), 59u);
    if (is_implicit(kind)) {
      // The oracle hides the linear operator, so Newton replaces the direct solve.
      for (std::size_t k = 0; k < 60; ++k) {
        EXPECT_LT((pack_state(r.predicted.states[k]) - pack_state(base.states[k])).norm(), 1e-9);
      }
      continue;
    }
    for (std::size_t k = 0; k < 60; ++k) {
      EXPECT_EQ(pack_state(r.predicted.states[k]), pack_state(base.states[k])) << to_string(kind) << k;
    }
    for (std::size_t k = 1; k < 60; ++k) {
      EXPECT_EQ(r.per_step_mse[k - 1], state_mse(pack_state(base.states[k]), pack_state(ref.states[k])));
    }
    EXPECT_TRUE(validate_trajectory(r.predicted).empty());
  }
}

TEST(Rollout, ZeroDerivativeKeepsInitialState) {
  FunctionModel zero(2, TaskKind::DerivativePrediction, [](const Vector& x) { return Vector(Vector::Zero(x.size())); });
  const auto ref = closed_form_trajectory(1.0, 0.0, 0.1, 20);
  const auto r = rollout_derivative(zero, IntegratorKind::RK4, ref);
  for (const auto& s : r.predicted.states) EXPECT_EQ(pack_state(s), pack_state(ref.states[0]));
}

TEST(Rollout, KnnOnItsOwnTrajectoryStartsNearZero) {
  SpringSystem sys;
  const auto ref = integrate(sys, IntegratorKind::Leapfrog, Vector::Unit(2, 1), TimeGrid(0.05, 200, 16));
  auto knn = knn_fit({ref}, TaskKind::DerivativePrediction);
  const auto r = rollout_derivative(*knn, IntegratorKind::RK4, ref);
  EXPECT_LT(r.per_step_mse.front(), 1e-6);
  EXPECT_FALSE(r.diverged_at);
}

TEST(Rollout, IdentityStepModelIsConstant) {
  FunctionModel id(2, TaskKind::StepPrediction, [](const Vector& x) { return x; });
  Trajectory ref{TimeGrid(0.1, 10), {}, {}, 0.0};
  for (int k = 0; k < 10; ++k) {
    ref.states.push_back(PhaseState{Vector::Constant(1, 0.5), Vector::Constant(1, -0.5)});
    ref.derivatives.push_back(StateDerivative{Vector::Zero(1), Vector::Zero(1)});
  }
  const auto r = rollout_step(id, ref);
  EXPECT_EQ(r.trajectory_mse, 0.0);
  EXPECT_EQ(r.per_step_mse.size(), 9u);
}

TEST(Rollout, KnnStepReplaysTrainingTrajectoryExactly) {
  SpringSystem sys;
  std::vector<Trajectory> train;
  for (double r : {0.3, 0.6, 0.9}) {
    train.push_back(integrate(sys, IntegratorKind::Leapfrog, Vector::Constant(2, r), TimeGrid(0.1, 300, 8)));
  }
  auto knn = knn_fit(train, TaskKind::StepPrediction);
  for (const auto& tr : train) {
    const auto r = rollout_step(*knn, tr);
    EXPECT_EQ(r.trajectory_mse, 0.0);
    EXPECT_EQ(r.per_step_mse.size(), 299u);
  }
}

TEST(Rollout, CountOneHasNoErrors) {
  FunctionModel id(2, TaskKind::StepPrediction, [](const Vector& x) { return x; });
  const auto r = rollout_step(id, closed_form_trajectory(1, 0, 0.1, 5), {}, 1);
  EXPECT_TRUE(r.per_step_mse.empty());
  EXPECT_EQ(r.predicted.size(), 1u);
  EXPECT_EQ(r.trajectory_mse, 0.0);
}

TEST(Rollout, DivergenceTruncatesErrors) {
  FunctionModel blowup(2, TaskKind::DerivativePrediction, [](const Vector& x) { return Vector(50.0 * x); });
  const auto ref = closed_form_trajectory(1, 0, 0.1, 100);
  const auto r = rollout_derivative(blowup, IntegratorKind::ForwardEuler, ref);
  ASSERT_TRUE(r.diverged_at);
  // |x| grows by 6x per step; 1e6 is passed on step 8.
  EXPECT_EQ(*r.diverged_at, 8u);
  EXPECT_EQ(r.per_step_mse.size(), 7u);
  EXPECT_TRUE(std::isfinite(r.trajectory_mse));
  EXPECT_EQ(r.predicted.size(), 8u);
}

TEST(Rollout, NonFiniteStepModelDiverges) {
  FunctionModel nan(2, TaskKind::StepPrediction, [](const Vector& x) { return Vector(x * NAN); });
  const auto r = rollout_step(nan, closed_form_trajectory(1, 0, 0.1, 10));
  EXPECT_EQ(r.diverged_at, std::optional<std::size_t>(1));
  EXPECT_TRUE(r.per_step_mse.empty());
}

TEST(Rollout, TaskMismatchRejected) {
  FunctionModel id(2, TaskKind::StepPrediction, [](const Vector& x) { return x; });
  EXPECT_THROW(rollout_derivative(id, IntegratorKind::RK4, closed_form_trajectory(1, 0, 0.1, 3)), ValidationError);
}

TEST(Rollout, MaskIsAppendedToQueries) {
  Vector seen;
  class Probe : public Model {
   public:
    explicit Probe(Vector* seen) : seen_(seen) {}
    using Model::predict;
    std::string kind() const override { return "probe"; }
    TaskKind task() const override { return TaskKind::StepPrediction; }
    Index input_dim() const override { return 3; }
    Index output_dim() const override { return 2; }
    void predict(const Vector& in, Vector& out) const override {
      *seen_ = in;
      out = in.head(2);
    }

   private:
    Vector* seen_;
  } probe(&seen);
  rollout_step(probe, closed_form_trajectory(1, 0, 0.1, 3), Vector::Constant(1, 7.0));
  ASSERT_EQ(seen.size(), 3);
  EXPECT_EQ(seen[2], 7.0);
}

// ---- weighting -----------------------------------------------------------------

TEST(Weights, Endpoints) {
  EXPECT_EQ(step_weight(0, 11), 1.0);
  EXPECT_EQ(step_weight(10, 11), 0.01);
  EXPECT_EQ(step_weight(0, 11) / step_weight(10, 11), 100.0);
  EXPECT_NEAR(step_weight(5, 11), 0.1, 1e-15);
}

TEST(Weights, StrictlyDecreasing) {
  for (std::size_t k = 1; k < 50; ++k) EXPECT_LT(step_weight(k, 50), step_weight(k - 1, 50));
}

TEST(Weights, ConstantErrorIsScaledByMeanWeight) {
  const std::vector<double> e(21, 3.0);
  double mw = 0.0;
  for (std::size_t k = 0; k < 21; ++k) mw += std::exp(-std::log(100.0) * k / 20.0) / 21.0;
  EXPECT_NEAR(weighted_trajectory_mse(e), 3.0 * mw, 1e-14);
  EXPECT_THROW(weighted_trajectory_mse({}), ValidationError);
}

// ---- timing ------------------------------------------------------------------

TEST(Scaling, EdgeCases) {
  const std::vector<double> integ{1e-8, 1e-6, 1e-4, 1e-2};
  EXPECT_EQ(find_scaling(integ, 0.0), (Scaling{1, false}));
  EXPECT_EQ(find_scaling(integ, INFINITY), (Scaling{8, true}));
  EXPECT_EQ(find_scaling(integ, 1e-5), (Scaling{4, false}));
  EXPECT_EQ(find_scaling(integ, 1e-6), (Scaling{4, false}));  // equal is not exceeding
  EXPECT_EQ(find_scaling({1e-8, INFINITY}, 1.0), (Scaling{2, false}));
  EXPECT_EQ(Scaling({8, true}).label(), ">=8x");
}

TEST(Scaling, Mode) {
  EXPECT_EQ(modal_scaling({{4, false}, {2, false}, {4, false}, {8, true}}), (Scaling{4, false}));
  EXPECT_EQ(modal_scaling({{4, false}, {2, false}}), (Scaling{2, false}));
}

TEST(Timing, CrossingMatchesIndependentIntegration) {
  SpringSystem sys;
  const double dt_base = 0.0125;
  const auto ref = closed_form_trajectory(1.0, 0.4, 0.1, 9);  // final time 0.8 = 64 base steps
  // Integrator error at each power, computed independently.
  std::vector<double> errs;
  for (int j = 0; j <= 5; ++j) {
    const double dt = dt_base * std::pow(2.0, j);
    const auto tr = integrate(sys, IntegratorKind::ForwardEuler, pack_state(ref.states[0]),
                              TimeGrid(dt, 64 / (1u << j) + 1));
    errs.push_back(state_mse(pack_state(tr.states.back()), pack_state(ref.states[8])));
  }
  for (int j = 1; j < 6; ++j) ASSERT_GT(errs[j], errs[j - 1]);

  for (int j = 0; j < 5; ++j) {
    RolloutResult r;
    r.reference = ref;
    const double between = std::sqrt(errs[j] * errs[j + 1]);
    r.per_step_mse.assign(8, between);
    const auto rep = timing_protocol(sys, IntegratorKind::ForwardEuler, {r}, dt_base, 5);
    EXPECT_EQ(rep.modal, (Scaling{std::uint64_t{1} << (j + 1), false})) << j;
  }
  RolloutResult perfect;
  perfect.reference = ref;
  perfect.per_step_mse.assign(8, 0.0);
  EXPECT_EQ(timing_protocol(sys, IntegratorKind::ForwardEuler, {perfect}, dt_base, 5).modal, (Scaling{1, false}));
  RolloutResult diverged = perfect;
  diverged.per_step_mse.assign(3, 0.0);
  diverged.diverged_at = 4;
  EXPECT_EQ(timing_protocol(sys, IntegratorKind::ForwardEuler, {diverged}, dt_base, 5).modal, (Scaling{32, true}));
}

TEST(Timing, ScalingGrowsWithLearnedError) {
  SpringSystem sys;
  const auto ref = closed_form_trajectory(1.0, 0.0, 0.1, 17);
  std::uint64_t prev = 0;
  for (double e = 1e-12; e < 1e2; e *= 10) {
    RolloutResult r;
    r.reference = ref;
    r.per_step_mse.assign(16, e);
    const auto rep = timing_protocol(sys, IntegratorKind::RK4, {r}, 0.1 / 8, 6);
    EXPECT_GE(rep.modal.factor, prev);
    prev = rep.modal.factor;
  }
}

TEST(Timing, RejectsIncommensurateBase) {
  SpringSystem sys;
  RolloutResult r;
  r.reference = closed_form_trajectory(1, 0, 0.1, 5);
  r.per_step_mse.assign(4, 1.0);
  EXPECT_THROW(timing_protocol(sys, IntegratorKind::RK4, {r}, 0.03, 2), ValidationError);
}

// ---- summaries -----------------------------------------------------------------

TEST(BoxStats, SingleValue) {
  const auto b = box_stats({4.2});
  EXPECT_EQ(b.median, 4.2);
  EXPECT_TRUE(b.outliers.empty());
}

TEST(BoxStats, OneToNine) {
  const auto b = box_stats({9, 1, 8, 2, 7, 3, 6, 4, 5});
  EXPECT_EQ(b.median, 5.0);
  EXPECT_EQ(b.q1, 3.0);
  EXPECT_EQ(b.q3, 7.0);
  EXPECT_EQ(b.whisker_low, 1.0);
  EXPECT_EQ(b.whisker_high, 9.0);
}

TEST(BoxStats, InterpolatedQuartiles) {
  const auto b = box_stats({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(b.q1, 1.75);
  EXPECT_DOUBLE_EQ(b.median, 2.5);
  EXPECT_DOUBLE_EQ(b.q3, 3.25);
}

TEST(BoxStats, FlagsOutlier) {
  const auto b = box_stats({1, 1, 1, 1, 100});
  ASSERT_EQ(b.outliers.size(), 1u);
  EXPECT_EQ(b.outliers[0], 100.0);
  EXPECT_EQ(b.whisker_high, 1.0);
}

TEST(Report, WritesResultsFiles) {
  SpringSystem sys;
  SystemModel<SpringSystem> oracle(sys);
  std::vector<RolloutResult> results;
  for (double th : {0.0, 1.0, 2.0}) {
    results.push_back(rollout_derivative(oracle, IntegratorKind::RK4, closed_form_trajectory(1, th, 0.1, 30)));
  }
  const auto dir = std::filesystem::temp_directory_path() / "physbench_eval_results";
  std::filesystem::remove_all(dir);
  write_eval_results(dir, results, {{"learner", "oracle"}});
  const auto doc = nlohmann::json::parse(io::read_file(dir / kResultsFile));
  EXPECT_EQ(doc["trajectories"].size(), 3u);
  EXPECT_EQ(doc["summary"]["mse"]["count"], 3);
  const auto arrays = io::read_npz(dir / kPerStepFile);
  ASSERT_EQ(arrays.size(), 3u);
  EXPECT_EQ(arrays.at("traj_00001").as_f64(), results[1].per_step_mse);
  std::filesystem::remove_all(dir);
}
