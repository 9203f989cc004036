#pragma once

// Time integration: forward Euler, leapfrog, RK4, backward Euler and BDF2,
// plus the subsampling rollout driver that produces stored trajectories.

#include <Eigen/SparseLU>

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "physbench/domain.hpp"
#include "physbench/systems/system.hpp"

namespace physbench {

enum class IntegratorKind { ForwardEuler, Leapfrog, RK4, BackwardEuler, BDF2 };

/// Which fourth stage RK4 uses. `Classical` evaluates h4 at the full step;
/// `HalfStepFourthStage` evaluates h4 = f(x + dt/2 h3), as some published
/// listings write it. The latter is only first-order accurate.
enum class Rk4Variant { Classical, HalfStepFourthStage };

inline std::string_view to_string(IntegratorKind k) {
  switch (k) {
    case IntegratorKind::ForwardEuler: return "euler";
    case IntegratorKind::Leapfrog: return "leapfrog";
    case IntegratorKind::RK4: return "rk4";
    case IntegratorKind::BackwardEuler: return "backward-euler";
    case IntegratorKind::BDF2: return "bdf2";
  }
  return "?";
}

inline IntegratorKind parse_integrator(std::string_view name) {
  if (name == "euler" || name == "fe" || name == "forward-euler") return IntegratorKind::ForwardEuler;
  if (name == "leapfrog" || name == "lf") return IntegratorKind::Leapfrog;
  if (name == "rk4") return IntegratorKind::RK4;
  if (name == "backward-euler" || name == "be") return IntegratorKind::BackwardEuler;
  if (name == "bdf2") return IntegratorKind::BDF2;
  throw ValidationError("unknown integrator '" + std::string(name) + "'");
}

inline bool is_implicit(IntegratorKind k) {
  return k == IntegratorKind::BackwardEuler || k == IntegratorKind::BDF2;
}

struct ImplicitSolveConfig {
  double tolerance = 1e-10;       // residual infinity norm
  int max_iterations = 50;
  double jacobian_epsilon = 1e-7; // scaled by (1 + |x_i|) per column
};

struct IntegratorOptions {
  ImplicitSolveConfig implicit;
  Rk4Variant rk4_variant = Rk4Variant::Classical;
};

/// Advances a state in place with one scheme. Holds scratch buffers, the
/// BDF2 history and, for linear systems, the factorized implicit matrix.
template <OdeSystem S>
class Stepper {
 public:
  Stepper(const S& sys, IntegratorKind kind, IntegratorOptions opts = {})
      : sys_(&sys), kind_(kind), opts_(opts) {
    if (kind == IntegratorKind::Leapfrog && !sys.position_size()) {
      throw UnsupportedError(
          "leapfrog needs a state split into position and momentum blocks");
    }
  }

  IntegratorKind kind() const { return kind_; }

  /// Forgets the BDF2 history.
  void reset() { have_history_ = false; }

  /// One step of size dt. `step_index` only labels errors.
  void step(Vector& x, double dt, std::size_t step_index = 0) {
    switch (kind_) {
      case IntegratorKind::ForwardEuler: euler(x, dt); break;
      case IntegratorKind::RK4: rk4(x, dt); break;
      case IntegratorKind::Leapfrog: leapfrog(x, dt); break;
      case IntegratorKind::BackwardEuler: backward_euler(x, dt, step_index); break;
      case IntegratorKind::BDF2: bdf2(x, dt, step_index); break;
    }
    if (!x.allFinite()) {
      throw DivergenceError("integrator produced a non-finite state at step " +
                            std::to_string(step_index),
                            step_index);
    }
  }

  /// Implicit solve of y - coeff * dt * f(y) = rhs, starting from `guess`.
  Vector solve_implicit(const Vector& rhs, const Vector& guess, double coeff,
                        double dt, std::size_t step_index = 0) {
    if constexpr (LinearOdeSystem<S>) {
      return solve_linear(rhs, coeff * dt);
    } else {
      return solve_newton(rhs, guess, coeff * dt, step_index);
    }
  }

  /// y - h f(y) = rhs by Newton's method with a forward-difference Jacobian.
  Vector solve_newton(const Vector& rhs, const Vector& guess, double h,
                      std::size_t step_index = 0) {
    const ImplicitSolveConfig& cfg = opts_.implicit;
    const Index n = rhs.size();
    Vector y = guess;
    Vector fy(n), fp(n), residual(n);
    Eigen::MatrixXd jac(n, n);
    double norm = 0.0;
    for (int iter = 0;; ++iter) {
      sys_->derivative(y, fy);
      residual = y - h * fy - rhs;
      norm = residual.lpNorm<Eigen::Infinity>();
      if (!std::isfinite(norm)) break;
      if (norm <= cfg.tolerance) return y;
      if (iter >= cfg.max_iterations) break;
      for (Index j = 0; j < n; ++j) {
        const double eps = cfg.jacobian_epsilon * (1.0 + std::abs(y[j]));
        const double saved = y[j];
        y[j] = saved + eps;
        sys_->derivative(y, fp);
        y[j] = saved;
        jac.col(j) = (-h / eps) * (fp - fy);
        jac(j, j) += 1.0;
      }
      y -= jac.partialPivLu().solve(residual);
    }
    throw SolverError("implicit step " + std::to_string(step_index) +
                          " did not converge; residual " + std::to_string(norm),
                      norm);
  }

 private:
  void ensure(Vector& v, Index n) {
    if (v.size() != n) v.resize(n);
  }

  void euler(Vector& x, double dt) {
    ensure(k1_, x.size());
    sys_->derivative(x, k1_);
    x += dt * k1_;
  }

  void rk4(Vector& x, double dt) {
    const Index n = x.size();
    ensure(k1_, n); ensure(k2_, n); ensure(k3_, n); ensure(k4_, n); ensure(work_, n);
    const double half = 0.5 * dt;
    sys_->derivative(x, k1_);
    work_ = x + half * k1_;
    sys_->derivative(work_, k2_);
    work_ = x + half * k2_;
    sys_->derivative(work_, k3_);
    const double last = opts_.rk4_variant == Rk4Variant::Classical ? dt : half;
    work_ = x + last * k3_;
    sys_->derivative(work_, k4_);
    x += (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
  }

  // Kick-drift-kick:
  //   p_half = p + dt/2 * pdot(q, p)
  //   q'     = q + dt * qdot(q, p_half)
  //   p'     = p_half + dt/2 * pdot(q', p_half)
  void leapfrog(Vector& x, double dt) {
    const Index n = x.size();
    const Index nq = *sys_->position_size();
    const Index np = n - nq;
    ensure(k1_, n);
    sys_->derivative(x, k1_);
    x.tail(np) += (0.5 * dt) * k1_.tail(np);
    sys_->derivative(x, k1_);
    x.head(nq) += dt * k1_.head(nq);
    sys_->derivative(x, k1_);
    x.tail(np) += (0.5 * dt) * k1_.tail(np);
  }

  void backward_euler(Vector& x, double dt, std::size_t step_index) {
    x = solve_implicit(x, x, 1.0, dt, step_index);
  }

  void bdf2(Vector& x, double dt, std::size_t step_index) {
    if (!have_history_) {
      // First step has no two-step history: one backward Euler step.
      previous_ = x;
      x = solve_implicit(x, x, 1.0, dt, step_index);
      have_history_ = true;
      return;
    }
    const Vector rhs = (4.0 / 3.0) * x - (1.0 / 3.0) * previous_;
    Vector next = solve_implicit(rhs, x, 2.0 / 3.0, dt, step_index);
    previous_ = std::move(x);
    x = std::move(next);
  }

  Vector solve_linear(const Vector& rhs, double h) requires LinearOdeSystem<S> {
    if (!lu_ || lu_h_ != h) {
      const SparseMatrix& a = sys_->linear_operator();
      SparseMatrix m(a.rows(), a.cols());
      m.setIdentity();
      m -= h * a;
      m.makeCompressed();
      lu_.emplace();
      lu_->compute(m);
      if (lu_->info() != Eigen::Success) {
        lu_.reset();
        throw SolverError("implicit step: linear system is singular", INFINITY);
      }
      lu_h_ = h;
    }
    return lu_->solve(rhs);
  }

  const S* sys_;
  IntegratorKind kind_;
  IntegratorOptions opts_;
  Vector k1_, k2_, k3_, k4_, work_;
  Vector previous_;
  bool have_history_ = false;
  std::optional<Eigen::SparseLU<SparseMatrix>> lu_;
  double lu_h_ = 0.0;
};

template <OdeSystem S>
Vector euler_step(const S& sys, const Vector& x, double dt) {
  Vector y = x;
  Stepper<S>(sys, IntegratorKind::ForwardEuler).step(y, dt);
  return y;
}

template <OdeSystem S>
Vector rk4_step(const S& sys, const Vector& x, double dt,
                Rk4Variant variant = Rk4Variant::Classical) {
  Vector y = x;
  IntegratorOptions opts;
  opts.rk4_variant = variant;
  Stepper<S>(sys, IntegratorKind::RK4, opts).step(y, dt);
  return y;
}

template <OdeSystem S>
Vector leapfrog_step(const S& sys, const Vector& x, double dt) {
  Vector y = x;
  Stepper<S>(sys, IntegratorKind::Leapfrog).step(y, dt);
  return y;
}

template <OdeSystem S>
PhaseState leapfrog_step(const S& sys, const PhaseState& s, double dt) {
  return unpack_state(leapfrog_step(sys, pack_state(s), dt), s.q.size());
}

template <OdeSystem S>
Vector backward_euler_step(const S& sys, const Vector& x, double dt,
                           const ImplicitSolveConfig& cfg = {}) {
  Vector y = x;
  Stepper<S>(sys, IntegratorKind::BackwardEuler, IntegratorOptions{cfg}).step(y, dt);
  return y;
}

/// One BDF2 step from the history (x_prev2, x_prev1) at spacing dt.
template <OdeSystem S>
Vector bdf2_step(const S& sys, const Vector& x_prev2, const Vector& x_prev1,
                 double dt, const ImplicitSolveConfig& cfg = {}) {
  Stepper<S> stepper(sys, IntegratorKind::BDF2, IntegratorOptions{cfg});
  const Vector rhs = (4.0 / 3.0) * x_prev1 - (1.0 / 3.0) * x_prev2;
  Vector y = stepper.solve_implicit(rhs, x_prev1, 2.0 / 3.0, dt);
  if (!y.allFinite()) throw DivergenceError("bdf2 step produced a non-finite state", 0);
  return y;
}

template <OdeSystem S>
PhaseState to_phase_state(const S& sys, const Vector& x) {
  const auto nq = sys.position_size();
  return unpack_state(x, nq ? *nq : x.size());
}

template <OdeSystem S>
StateDerivative to_derivative(const S& sys, const Vector& dx) {
  const auto nq = sys.position_size();
  return unpack_derivative(dx, nq ? *nq : dx.size());
}

/// Integrates from x0 over `grid`: (count - 1) * subsample inner steps of
/// size step / subsample, keeping every subsample-th state and the system
/// derivative at each kept state.
template <OdeSystem S>
Trajectory integrate(const S& sys, IntegratorKind kind, const Vector& x0,
                     const TimeGrid& grid, IntegratorOptions opts = {}) {
  if (x0.size() != sys.dimension()) {
    throw DimensionError("integrate: initial state has length " +
                         std::to_string(x0.size()) + ", system expects " +
                         std::to_string(sys.dimension()));
  }
  const auto start = std::chrono::steady_clock::now();
  Stepper<S> stepper(sys, kind, opts);
  Trajectory tr{grid, {}, {}, 0.0};
  tr.states.reserve(grid.count());
  tr.derivatives.reserve(grid.count());

  Vector x = x0;
  Vector dx(x.size());
  auto record = [&] {
    sys.derivative(x, dx);
    tr.states.push_back(to_phase_state(sys, x));
    tr.derivatives.push_back(to_derivative(sys, dx));
  };
  record();
  const double dt = grid.inner_step();
  std::size_t inner = 0;
  for (std::size_t k = 1; k < grid.count(); ++k) {
    for (std::size_t s = 0; s < grid.subsample(); ++s) {
      stepper.step(x, dt, inner++);
    }
    record();
  }
  tr.gen_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return tr;
}

}  // namespace physbench
