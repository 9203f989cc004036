#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "physbench/systems/system.hpp"

namespace physbench {

struct Particle {
  Eigen::Vector2d position;  // rest (or initial) position
  double mass = 1.0;
  bool is_fixed = false;
};

struct Spring {
  Index a = 0;
  Index b = 0;
  double rest_length = 1.0;
  double spring_const = 1.0;
};

/// Damped particle-spring mesh in the plane.
///
/// State layout: q = [x_0, y_0, x_1, y_1, ...], p likewise. For each
/// spring (a, b), particle a receives
///   -k (|q_a - q_b| - l_ab) (q_a - q_b) / |q_a - q_b|
/// and b the opposite. Velocity damping -gamma * qdot_a is applied once per
/// particle. Fixed particles have zero derivative.
class SpringMeshSystem {
 public:
  SpringMeshSystem(std::vector<Particle> particles, std::vector<Spring> springs,
                   double vel_decay)
      : particles_(std::move(particles)),
        springs_(std::move(springs)),
        vel_decay_(vel_decay) {
    const auto n = static_cast<Index>(particles_.size());
    std::set<std::pair<Index, Index>> seen;
    for (const auto& s : springs_) {
      if (s.a < 0 || s.b < 0 || s.a >= n || s.b >= n || s.a == s.b) {
        throw ValidationError("SpringMeshSystem: spring endpoints out of range");
      }
      auto key = std::minmax(s.a, s.b);
      if (!seen.insert(key).second) {
        throw ValidationError("SpringMeshSystem: duplicate spring " +
                              std::to_string(key.first) + "-" +
                              std::to_string(key.second));
      }
    }
    for (const auto& p : particles_) {
      if (!(p.mass > 0.0)) throw ValidationError("SpringMeshSystem: mass must be positive");
    }
  }

  /// n x n unit grid with axis-aligned springs (rest length 1) and both
  /// diagonals of every cell (rest length sqrt 2). Particle (row, col) has
  /// index row * n + col and rest position (col, row); the top row is
  /// row n - 1.
  static SpringMeshSystem grid(Index n = 10, double vel_decay = 0.1,
                               bool fix_top_row = true, double spring_const = 1.0) {
    std::vector<Particle> particles;
    particles.reserve(static_cast<std::size_t>(n * n));
    for (Index row = 0; row < n; ++row) {
      for (Index col = 0; col < n; ++col) {
        particles.push_back(Particle{
            Eigen::Vector2d(static_cast<double>(col), static_cast<double>(row)),
            1.0, fix_top_row && row == n - 1});
      }
    }
    std::vector<Spring> springs;
    auto id = [n](Index row, Index col) { return row * n + col; };
    for (const auto& [a, b] : grid_axis_edges(n)) {
      springs.push_back(Spring{a, b, 1.0, spring_const});
    }
    for (Index row = 0; row + 1 < n; ++row) {
      for (Index col = 0; col + 1 < n; ++col) {
        springs.push_back(Spring{id(row, col), id(row + 1, col + 1),
                                 std::numbers::sqrt2, spring_const});
        springs.push_back(Spring{id(row, col + 1), id(row + 1, col),
                                 std::numbers::sqrt2, spring_const});
      }
    }
    return SpringMeshSystem(std::move(particles), std::move(springs), vel_decay);
  }

  /// Undirected axis-aligned neighbour pairs of an n x n grid, a < b.
  static std::vector<std::pair<Index, Index>> grid_axis_edges(Index n) {
    std::vector<std::pair<Index, Index>> out;
    for (Index row = 0; row < n; ++row) {
      for (Index col = 0; col < n; ++col) {
        const Index i = row * n + col;
        if (col + 1 < n) out.emplace_back(i, i + 1);
        if (row + 1 < n) out.emplace_back(i, i + n);
      }
    }
    return out;
  }

  const std::vector<Particle>& particles() const { return particles_; }
  const std::vector<Spring>& springs() const { return springs_; }
  double vel_decay() const { return vel_decay_; }
  Index n_particles() const { return static_cast<Index>(particles_.size()); }

  Index dimension() const { return 4 * n_particles(); }
  std::optional<Index> position_size() const { return 2 * n_particles(); }

  /// Rest positions packed as a q block.
  Vector rest_positions() const {
    Vector q(2 * n_particles());
    for (Index i = 0; i < n_particles(); ++i) {
      q.segment<2>(2 * i) = particles_[static_cast<std::size_t>(i)].position;
    }
    return q;
  }

  void derivative(const Vector& x, Vector& dx) const {
    const Index n = n_particles();
    dx.resize(4 * n);
    auto q = x.head(2 * n);
    auto p = x.tail(2 * n);
    auto dq = dx.head(2 * n);
    auto dp = dx.tail(2 * n);

    for (Index i = 0; i < n; ++i) {
      const double m = particles_[static_cast<std::size_t>(i)].mass;
      dq.segment<2>(2 * i) = p.segment<2>(2 * i) / m;
      dp.segment<2>(2 * i) = -vel_decay_ * dq.segment<2>(2 * i);
    }
    for (const auto& s : springs_) {
      const Eigen::Vector2d d = q.segment<2>(2 * s.a) - q.segment<2>(2 * s.b);
      const double len = d.norm();
      if (!(len > 0.0)) {
        throw SingularityError("mesh_derivative: particles " + std::to_string(s.a) +
                               " and " + std::to_string(s.b) + " coincide");
      }
      const Eigen::Vector2d f = (-s.spring_const * (len - s.rest_length) / len) * d;
      dp.segment<2>(2 * s.a) += f;
      dp.segment<2>(2 * s.b) -= f;
    }
    for (Index i = 0; i < n; ++i) {
      if (particles_[static_cast<std::size_t>(i)].is_fixed) {
        dq.segment<2>(2 * i).setZero();
        dp.segment<2>(2 * i).setZero();
      }
    }
  }

  /// Kinetic plus spring potential energy.
  double energy(const Vector& x) const {
    const Index n = n_particles();
    double e = 0.0;
    for (Index i = 0; i < n; ++i) {
      e += 0.5 * x.segment<2>(2 * n + 2 * i).squaredNorm() /
           particles_[static_cast<std::size_t>(i)].mass;
    }
    for (const auto& s : springs_) {
      const double stretch =
          (x.segment<2>(2 * s.a) - x.segment<2>(2 * s.b)).norm() - s.rest_length;
      e += 0.5 * s.spring_const * stretch * stretch;
    }
    return e;
  }

  /// Sum of all particle momenta.
  Eigen::Vector2d total_momentum(const Vector& x) const {
    const Index n = n_particles();
    Eigen::Vector2d total = Eigen::Vector2d::Zero();
    for (Index i = 0; i < n; ++i) total += x.segment<2>(2 * n + 2 * i);
    return total;
  }

 private:
  std::vector<Particle> particles_;
  std::vector<Spring> springs_;
  double vel_decay_;
};

inline StateDerivative mesh_derivative(const SpringMeshSystem& sys, const PhaseState& s) {
  const Index n = 2 * sys.n_particles();
  if (s.q.size() != n || s.p.size() != n) {
    throw DimensionError("mesh_derivative: state does not match the particle count");
  }
  Vector dx;
  sys.derivative(pack_state(s), dx);
  return unpack_derivative(dx, n);
}

}  // namespace physbench
