#pragma once

#include <cmath>
#include <optional>

#include "physbench/systems/system.hpp"

namespace physbench {

/// Unit-mass, unit-stiffness spring with zero rest length: q' = p, p' = -q.
class SpringSystem {
 public:
  SpringSystem() {
    op_.resize(2, 2);
    op_.insert(0, 1) = 1.0;
    op_.insert(1, 0) = -1.0;
    op_.makeCompressed();
  }

  Index dimension() const { return 2; }
  std::optional<Index> position_size() const { return 1; }

  void derivative(const Vector& x, Vector& dx) const {
    dx.resize(2);
    const double q = x[0];
    dx[0] = x[1];
    dx[1] = -q;
  }

  const SparseMatrix& linear_operator() const { return op_; }

  /// q^2 + p^2, the squared phase-space radius.
  static double energy(const Vector& x) { return x.squaredNorm(); }

 private:
  SparseMatrix op_;
};

inline StateDerivative spring_derivative(const PhaseState& s) {
  if (s.q.size() != 1 || s.p.size() != 1) {
    throw DimensionError("spring_derivative: expected one position and one momentum");
  }
  StateDerivative d;
  d.dq = s.p;
  d.dp = -s.q;
  return d;
}

/// Exact spring solution (q, p) = (r sin(t + theta0), r cos(t + theta0)).
inline PhaseState spring_closed_form(double radius, double theta0, double t) {
  PhaseState s;
  s.q = Vector::Constant(1, radius * std::sin(t + theta0));
  s.p = Vector::Constant(1, radius * std::cos(t + theta0));
  return s;
}

}  // namespace physbench
