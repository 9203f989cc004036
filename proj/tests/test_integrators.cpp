#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "physbench/integrators.hpp"
#include "physbench/systems/spring.hpp"
#include "physbench/systems/spring_mesh.hpp"
#include "physbench/systems/wave.hpp"

using namespace physbench;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

DynamicSystem scalar(double lambda) {
  return DynamicSystem::from_function(1, [lambda](const Vector& x) -> Vector { return lambda * x; });
}

// Error at t = 1 on the spring after 1 / dt steps.
double spring_error(IntegratorKind kind, double dt, Rk4Variant variant = Rk4Variant::Classical) {
  SpringSystem sys;
  IntegratorOptions opts;
  opts.rk4_variant = variant;
  Stepper<SpringSystem> stepper(sys, kind, opts);
  Vector x = vec({0, 1});
  const int n = static_cast<int>(std::lround(1.0 / dt));
  for (int i = 0; i < n; ++i) stepper.step(x, dt, static_cast<std::size_t>(i));
  const auto exact = spring_closed_form(1.0, 0.0, n * dt);
  return (x - pack_state(exact)).norm();
}

double observed_order(IntegratorKind kind, Rk4Variant variant = Rk4Variant::Classical) {
  const double e1 = spring_error(kind, 1.0 / 32, variant);
  const double e2 = spring_error(kind, 1.0 / 64, variant);
  return std::log2(e1 / e2);
}

}  // namespace

TEST(Integrators, ParseNames) {
  EXPECT_EQ(parse_integrator("rk4"), IntegratorKind::RK4);
  EXPECT_EQ(parse_integrator("lf"), IntegratorKind::Leapfrog);
  EXPECT_EQ(parse_integrator("be"), IntegratorKind::BackwardEuler);
  EXPECT_EQ(parse_integrator(to_string(IntegratorKind::BDF2)), IntegratorKind::BDF2);
  EXPECT_THROW(parse_integrator("verlet"), ValidationError);
}

TEST(Integrators, EulerHandValue) {
  const auto y = euler_step(SpringSystem{}, vec({0, 1}), 0.5);
  EXPECT_DOUBLE_EQ(y[0], 0.5);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
}

TEST(Integrators, Rk4HandValueOnExponential) {
  // 1 + 1 + 1/2 + 1/6 + 1/24
  const auto y = rk4_step(scalar(1.0), vec({1}), 1.0);
  EXPECT_NEAR(y[0], 65.0 / 24.0, 1e-15);
}

TEST(Integrators, LeapfrogHandValue) {
  const auto y = leapfrog_step(SpringSystem{}, vec({0, 1}), 1.0);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], 0.5);
  const auto s = leapfrog_step(SpringSystem{}, PhaseState{vec({0}), vec({1})}, 1.0);
  EXPECT_DOUBLE_EQ(s.q[0], 1.0);
  EXPECT_DOUBLE_EQ(s.p[0], 0.5);
}

TEST(Integrators, LeapfrogNeedsSplitState) {
  EXPECT_THROW(leapfrog_step(scalar(-1.0), vec({1}), 0.1), UnsupportedError);
}

TEST(Integrators, BackwardEulerHandValue) {
  const auto y = backward_euler_step(scalar(-1.0), vec({1}), 1.0);
  EXPECT_NEAR(y[0], 0.5, 1e-10);
}

TEST(Integrators, BackwardEulerLinearPathMatchesNewton) {
  SpringSystem sys;
  const auto linear = backward_euler_step(sys, vec({0.3, -0.7}), 0.25);
  const auto generic = backward_euler_step(
      DynamicSystem::from_function(2, [](const Vector& x) -> Vector { return vec({x[1], -x[0]}); }),
      vec({0.3, -0.7}), 0.25);
  EXPECT_NEAR((linear - generic).norm(), 0.0, 1e-10);
  // (I - hA)^-1 for the rotation generator.
  const double h = 0.25, d = 1 + h * h;
  EXPECT_NEAR(linear[0], (0.3 + h * -0.7) / d, 1e-14);
  EXPECT_NEAR(linear[1], (-0.7 - h * 0.3) / d, 1e-14);
}

TEST(Integrators, Bdf2HandValues) {
  // y - (2/3) dt (-y) = (4 b - a) / 3  =>  y = (4b - a) / 5 at dt = 1.
  EXPECT_NEAR(bdf2_step(scalar(-1.0), vec({1}), vec({1}), 1.0)[0], 0.6, 1e-10);
  // Zero right-hand side reduces to the extrapolation itself.
  const double a = 0.4, b = 1.3;
  EXPECT_NEAR(bdf2_step(scalar(0.0), vec({a}), vec({b}), 0.5)[0], (4 * b - a) / 3, 1e-12);
}

TEST(Integrators, Bdf2FirstStepIsBackwardEuler) {
  const auto sys = scalar(-1.0);
  Stepper<DynamicSystem> stepper(sys, IntegratorKind::BDF2);
  Vector x = vec({1});
  stepper.step(x, 1.0);
  EXPECT_NEAR(x[0], 0.5, 1e-10);
  stepper.step(x, 1.0);
  // (4 * 0.5 - 1) / 5
  EXPECT_NEAR(x[0], 0.2, 1e-10);
}

TEST(Integrators, NewtonFailureReportsResidual) {
  // Steep nonlinearity with a tiny iteration budget.
  const auto sys = DynamicSystem::from_function(
      1, [](const Vector& x) -> Vector { return vec({-std::pow(x[0], 9)}); });
  IntegratorOptions opts;
  opts.implicit.max_iterations = 1;
  Stepper<DynamicSystem> stepper(sys, IntegratorKind::BackwardEuler, opts);
  Vector x = vec({3.0});
  try {
    stepper.step(x, 10.0);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.residual(), 1e-10);
  }
}

TEST(Integrators, DivergenceIsReported) {
  const auto sys = scalar(1e200);
  Stepper<DynamicSystem> stepper(sys, IntegratorKind::ForwardEuler);
  Vector x = vec({1e200});
  EXPECT_THROW(stepper.step(x, 1e200, 3), DivergenceError);
}

TEST(Integrators, ConvergenceOrders) {
  EXPECT_NEAR(observed_order(IntegratorKind::ForwardEuler), 1.0, 0.1);
  EXPECT_NEAR(observed_order(IntegratorKind::BackwardEuler), 1.0, 0.1);
  EXPECT_NEAR(observed_order(IntegratorKind::Leapfrog), 2.0, 0.1);
  EXPECT_NEAR(observed_order(IntegratorKind::BDF2), 2.0, 0.15);
  EXPECT_NEAR(observed_order(IntegratorKind::RK4), 4.0, 0.1);
}

TEST(Integrators, HalfStepRk4VariantIsFirstOrder) {
  EXPECT_NEAR(observed_order(IntegratorKind::RK4, Rk4Variant::HalfStepFourthStage), 1.0, 0.15);
}

TEST(Integrators, EnergyBehaviourOnSpring) {
  SpringSystem sys;
  const double dt = 0.05;
  auto run = [&](IntegratorKind kind) {
    Stepper<SpringSystem> stepper(sys, kind);
    Vector x = vec({0, 1});
    std::vector<double> e;
    for (int i = 0; i < 2000; ++i) {
      stepper.step(x, dt);
      e.push_back(SpringSystem::energy(x));
    }
    return e;
  };
  const auto fe = run(IntegratorKind::ForwardEuler);
  const auto be = run(IntegratorKind::BackwardEuler);
  const auto lf = run(IntegratorKind::Leapfrog);
  for (std::size_t i = 1; i < fe.size(); ++i) {
    EXPECT_GT(fe[i], fe[i - 1]);
    EXPECT_LT(be[i], be[i - 1]);
  }
  double lo = lf[0], hi = lf[0];
  for (double e : lf) {
    lo = std::min(lo, e);
    hi = std::max(hi, e);
  }
  // Symplectic: bounded oscillation of order dt.
  EXPECT_LT(hi - lo, dt);
}

TEST(Integrate, SubsampledRunMatchesFineRun) {
  SpringSystem sys;
  const Vector x0 = vec({0.2, 0.9});
  const auto coarse = integrate(sys, IntegratorKind::Leapfrog, x0, TimeGrid(0.1, 11, 16));
  const auto fine = integrate(sys, IntegratorKind::Leapfrog, x0, TimeGrid(0.1 / 16, 161, 1));
  ASSERT_EQ(coarse.size(), 11u);
  for (std::size_t k = 0; k < coarse.size(); ++k) {
    EXPECT_EQ(coarse.states[k].q, fine.states[16 * k].q);
    EXPECT_EQ(coarse.states[k].p, fine.states[16 * k].p);
  }
  EXPECT_TRUE(validate_trajectory(coarse).empty());
  EXPECT_GE(coarse.gen_time_seconds, 0.0);
}

TEST(Integrate, StoresSystemDerivatives) {
  SpringSystem sys;
  const auto tr = integrate(sys, IntegratorKind::RK4, vec({0, 1}), TimeGrid(0.1, 5, 4));
  for (std::size_t k = 0; k < tr.size(); ++k) {
    EXPECT_EQ(tr.derivatives[k].dq[0], tr.states[k].p[0]);
    EXPECT_EQ(tr.derivatives[k].dp[0], -tr.states[k].q[0]);
  }
}

TEST(Integrate, SpringLeapfrogTracksClosedForm) {
  SpringSystem sys;
  const TimeGrid grid(0.00781, 805, 128);
  const auto tr = integrate(sys, IntegratorKind::Leapfrog, vec({0, 1}), grid);
  double worst = 0.0;
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const auto exact = spring_closed_form(1.0, 0.0, grid.time(k));
    worst = std::max(worst, (pack_state(tr.states[k]) - pack_state(exact)).norm());
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Integrate, RejectsWrongDimension) {
  EXPECT_THROW(integrate(SpringSystem{}, IntegratorKind::RK4, vec({1}), TimeGrid(0.1, 3)),
               DimensionError);
}

TEST(Integrate, WaveLinearImplicitPath) {
  const WaveSystem sys(32);
  Vector x0 = Vector::Zero(64);
  x0.head(32) = wave_spline_pulse(1.0, 1.0, 32);
  const auto tr = integrate(sys, IntegratorKind::BDF2, x0, TimeGrid(0.01, 20, 2));
  EXPECT_TRUE(validate_trajectory(tr).empty());
  auto energy = [&](const PhaseState& st) {
    return st.p.squaredNorm() - 0.01 * st.q.dot(sys.dxx() * st.q);
  };
  // BDF2 is dissipative in the discrete energy.
  for (std::size_t k = 1; k < tr.size(); ++k) {
    EXPECT_LE(energy(tr.states[k]), energy(tr.states[k - 1]) * (1 + 1e-12));
  }
}
