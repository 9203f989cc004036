#pragma once

// Initial-condition sources. Every source caches what it has drawn, and
// entry i always comes from child stream i, so a larger request is a strict
// superset of every smaller one.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "physbench/rng.hpp"
#include "physbench/systems/navier_stokes.hpp"
#include "physbench/systems/spring.hpp"
#include "physbench/systems/spring_mesh.hpp"
#include "physbench/systems/wave.hpp"

namespace physbench {

enum class Distribution { InDistribution, OutOfDistribution };

inline std::string_view to_string(Distribution d) {
  return d == Distribution::InDistribution ? "in" : "ood";
}

inline Distribution parse_distribution(std::string_view s) {
  if (s == "in" || s == "in-distribution") return Distribution::InDistribution;
  if (s == "ood" || s == "out-of-distribution") return Distribution::OutOfDistribution;
  throw ValidationError("unknown distribution '" + std::string(s) + "'");
}

template <class T>
class InitialConditionSource {
 public:
  using Sampler = std::function<T(Rng&)>;

  InitialConditionSource(std::uint64_t seed, Sampler sampler)
      : seed_(seed), sampler_(std::move(sampler)) {}

  std::uint64_t seed() const { return seed_; }

  /// The first n conditions, extending the cache as needed.
  std::vector<T> draw(std::size_t n) {
    while (cache_.size() < n) {
      Rng rng = Rng::child(seed_, cache_.size());
      cache_.push_back(sampler_(rng));
    }
    return {cache_.begin(), cache_.begin() + static_cast<std::ptrdiff_t>(n)};
  }

  std::size_t cached() const { return cache_.size(); }

 private:
  std::uint64_t seed_;
  Sampler sampler_;
  std::vector<T> cache_;
};

struct SpringIc {
  double radius = 0.0;
  double theta = 0.0;
  PhaseState state;
};

struct WaveIc {
  double width = 1.0;
  double height = 1.0;
  double position = 0.5;
  PhaseState state;
};

using NsIc = NavierStokesScene;

inline InitialConditionSource<SpringIc> spring_source(std::uint64_t seed,
                                                      Distribution dist) {
  return {seed, [dist](Rng& rng) {
            const bool in = dist == Distribution::InDistribution;
            SpringIc ic;
            ic.radius = in ? rng.uniform(0.2, 1.0) : rng.uniform(1.0, 1.2);
            ic.theta = 2.0 * std::numbers::pi * rng.uniform01();
            ic.state = spring_closed_form(ic.radius, ic.theta, 0.0);
            return ic;
          }};
}

/// Pulse width and height, each drawn independently. Out of distribution
/// picks one of (0.5, 0.75) and (1.25, 1.5) with probability proportional to
/// its length, then draws uniformly inside it.
inline double wave_parameter(Rng& rng, Distribution dist) {
  if (dist == Distribution::InDistribution) return rng.uniform(0.75, 1.25);
  constexpr double lo_len = 0.75 - 0.5;
  constexpr double hi_len = 1.5 - 1.25;
  if (rng.uniform01() * (lo_len + hi_len) < lo_len) return rng.uniform(0.5, 0.75);
  return rng.uniform(1.25, 1.5);
}

inline InitialConditionSource<WaveIc> wave_source(std::uint64_t seed,
                                                  Distribution dist,
                                                  Index n_grid = 125,
                                                  double space_max = 1.0) {
  return {seed, [=](Rng& rng) {
            WaveIc ic;
            ic.width = wave_parameter(rng, dist);
            ic.height = wave_parameter(rng, dist);
            ic.state.q = wave_spline_pulse(ic.width, ic.height, n_grid, space_max, ic.position);
            ic.state.p = Vector::Zero(n_grid);
            return ic;
          }};
}

/// Perturbed mesh positions: each free particle moves by a vector drawn
/// area-uniformly from the disk of radius 0.35 (in distribution) or the
/// annulus 0.35 < r <= 0.45 (out of distribution). Fixed particles stay put.
inline InitialConditionSource<PhaseState> mesh_source(std::uint64_t seed,
                                                      Distribution dist,
                                                      SpringMeshSystem mesh) {
  return {seed, [dist, mesh = std::move(mesh)](Rng& rng) {
            constexpr double inner = 0.35;
            constexpr double outer = 0.45;
            PhaseState s;
            s.q = mesh.rest_positions();
            s.p = Vector::Zero(s.q.size());
            for (Index i = 0; i < mesh.n_particles(); ++i) {
              if (mesh.particles()[static_cast<std::size_t>(i)].is_fixed) continue;
              const double angle = 2.0 * std::numbers::pi * rng.uniform01();
              const double u = rng.uniform_open01();
              const double r = dist == Distribution::InDistribution
                                   ? inner * std::sqrt(u)
                                   : std::sqrt(inner * inner + u * (outer * outer - inner * inner));
              s.q[2 * i] += r * std::cos(angle);
              s.q[2 * i + 1] += r * std::sin(angle);
            }
            return s;
          }};
}

inline RadiusRange ns_radius_range(Distribution dist) {
  return dist == Distribution::InDistribution ? RadiusRange{0.05, 0.1}
                                              : RadiusRange{0.025, 0.05};
}

inline InitialConditionSource<NsIc> ns_source(std::uint64_t seed, Distribution dist,
                                              std::size_t obstacle_count,
                                              NavierStokesScene base = {}) {
  if (obstacle_count != 1 && obstacle_count != 4) {
    throw ValidationError("ns_source: obstacle count must be 1 or 4");
  }
  return {seed, [=](Rng& rng) {
            NavierStokesScene scene = base;
            scene.obstacles =
                sample_obstacles(rng, obstacle_count, ns_radius_range(dist), base.geometry);
            return scene;
          }};
}

inline std::vector<PhaseState> spring_ics(InitialConditionSource<SpringIc>& src,
                                          std::size_t n) {
  std::vector<PhaseState> out;
  for (auto& ic : src.draw(n)) out.push_back(std::move(ic.state));
  return out;
}

inline std::vector<PhaseState> wave_ics(InitialConditionSource<WaveIc>& src,
                                        std::size_t n) {
  std::vector<PhaseState> out;
  for (auto& ic : src.draw(n)) out.push_back(std::move(ic.state));
  return out;
}

inline std::vector<PhaseState> mesh_ics(InitialConditionSource<PhaseState>& src,
                                        std::size_t n) {
  return src.draw(n);
}

inline std::vector<NavierStokesScene> ns_ics(InitialConditionSource<NsIc>& src,
                                             std::size_t n) {
  return src.draw(n);
}

}  // namespace physbench
