#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "physbench/systems/system.hpp"

namespace physbench {

/// Periodic three-point second-difference matrix scaled by 1/dx^2.
inline SparseMatrix periodic_laplacian(Index n, double dx) {
  if (n < 3) throw DimensionError("periodic_laplacian: need at least 3 grid points");
  const double inv = 1.0 / (dx * dx);
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(3 * n));
  for (Index i = 0; i < n; ++i) {
    entries.emplace_back(i, (i + n - 1) % n, inv);
    entries.emplace_back(i, i, -2.0 * inv);
    entries.emplace_back(i, (i + 1) % n, inv);
  }
  SparseMatrix m(n, n);
  m.setFromTriplets(entries.begin(), entries.end());
  return m;
}

/// Semi-discrete 1D wave equation on a periodic grid:
/// q' = p, p' = c^2 Dxx q.
class WaveSystem {
 public:
  explicit WaveSystem(Index n_grid = 125, double space_max = 1.0,
                      double wave_speed = 0.1)
      : n_grid_(n_grid),
        space_max_(space_max),
        wave_speed_(wave_speed),
        dxx_(periodic_laplacian(n_grid, space_max / static_cast<double>(n_grid))) {
    const double c2 = wave_speed * wave_speed;
    std::vector<Eigen::Triplet<double>> entries;
    for (Index i = 0; i < n_grid; ++i) entries.emplace_back(i, n_grid + i, 1.0);
    for (Index k = 0; k < dxx_.outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(dxx_, k); it; ++it) {
        entries.emplace_back(n_grid + it.row(), it.col(), c2 * it.value());
      }
    }
    op_.resize(2 * n_grid, 2 * n_grid);
    op_.setFromTriplets(entries.begin(), entries.end());
  }

  Index n_grid() const { return n_grid_; }
  double space_max() const { return space_max_; }
  double wave_speed() const { return wave_speed_; }
  double dx() const { return space_max_ / static_cast<double>(n_grid_); }
  const SparseMatrix& dxx() const { return dxx_; }

  Index dimension() const { return 2 * n_grid_; }
  std::optional<Index> position_size() const { return n_grid_; }

  void derivative(const Vector& x, Vector& dx) const {
    dx.resize(2 * n_grid_);
    dx.head(n_grid_) = x.tail(n_grid_);
    dx.tail(n_grid_).noalias() =
        (wave_speed_ * wave_speed_) * (dxx_ * x.head(n_grid_));
  }

  const SparseMatrix& linear_operator() const { return op_; }

 private:
  Index n_grid_;
  double space_max_;
  double wave_speed_;
  SparseMatrix dxx_;
  SparseMatrix op_;
};

inline StateDerivative wave_derivative(const WaveSystem& sys, const PhaseState& s) {
  if (s.q.size() != sys.n_grid() || s.p.size() != sys.n_grid()) {
    throw DimensionError("wave_derivative: state does not match the grid size");
  }
  const double c2 = sys.wave_speed() * sys.wave_speed();
  StateDerivative d;
  d.dq = s.p;
  d.dp = c2 * (sys.dxx() * s.q);
  return d;
}

/// Unit-height cubic spline kernel on s >= 0, supported on [0, 2].
inline double spline_kernel(double s) {
  s = std::abs(s);
  if (s <= 1.0) return 1.0 - 1.5 * s * s + 0.75 * s * s * s;
  if (s <= 2.0) {
    const double r = 2.0 - s;
    return 0.25 * r * r * r;
  }
  return 0.0;
}

/// Initial pulse h(s(x_i)) on the grid x_i = i * space_max / n_grid, with
/// s(x) = (10 / width) |x - position|.
inline Vector wave_spline_pulse(double width, double height, Index n_grid,
                                double space_max = 1.0, double position = 0.5) {
  if (!(width > 0.0)) throw ValidationError("wave_spline_pulse: width must be positive");
  Vector out(n_grid);
  const double dx = space_max / static_cast<double>(n_grid);
  for (Index i = 0; i < n_grid; ++i) {
    const double x = static_cast<double>(i) * dx;
    out[i] = height * spline_kernel((10.0 / width) * std::abs(x - position));
  }
  return out;
}

}  // namespace physbench
