#pragma once

// Navier-Stokes scene description: channel geometry, obstacle sampling,
// inflow profile, and the job document handed to an external FEM solver.
// The flow itself is never solved here.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "physbench/domain.hpp"
#include "physbench/rng.hpp"

namespace physbench {

struct Obstacle {
  Eigen::Vector2d center;
  double radius = 0.0;

  bool operator==(const Obstacle&) const = default;
};

struct RadiusRange {
  double lo = 0.05;
  double hi = 0.1;
};

struct ChannelGeometry {
  double width = 2.2;
  double height = 0.41;
  double side_margin = 0.25;     // clearance from the left and right walls
  double wall_margin = 0.05;     // clearance from the top and bottom walls
  double obstacle_gap = 0.05;    // minimum surface gap between obstacles
};

struct NavierStokesScene {
  ChannelGeometry geometry;
  std::vector<Obstacle> obstacles;
  double viscosity = 0.001;
  double in_velocity = 1.5;
  double grid_resolution = 0.01;
  double time_step_size = 0.08;
  std::size_t num_time_steps = 65;

  bool operator==(const NavierStokesScene& o) const {
    return obstacles == o.obstacles && viscosity == o.viscosity &&
           in_velocity == o.in_velocity && grid_resolution == o.grid_resolution &&
           time_step_size == o.time_step_size && num_time_steps == o.num_time_steps &&
           geometry.width == o.geometry.width && geometry.height == o.geometry.height;
  }
};

/// Margin rules every scene must satisfy; empty means valid.
inline std::vector<std::string> scene_violations(const NavierStokesScene& scene) {
  std::vector<std::string> out;
  const auto& g = scene.geometry;
  // Scale-aware slack so centres placed exactly on a margin pass.
  constexpr double slack = 1e-12;
  for (std::size_t i = 0; i < scene.obstacles.size(); ++i) {
    const auto& o = scene.obstacles[i];
    const double x = o.center.x();
    const double y = o.center.y();
    if (x - o.radius < g.side_margin - slack ||
        x + o.radius > g.width - g.side_margin + slack) {
      out.push_back("obstacle " + std::to_string(i) + " violates side margin");
    }
    if (y - o.radius < g.wall_margin - slack ||
        y + o.radius > g.height - g.wall_margin + slack) {
      out.push_back("obstacle " + std::to_string(i) + " violates wall margin");
    }
    for (std::size_t j = i + 1; j < scene.obstacles.size(); ++j) {
      const auto& b = scene.obstacles[j];
      const double gap = (o.center - b.center).norm() - o.radius - b.radius;
      if (gap < g.obstacle_gap - slack) {
        out.push_back("obstacles " + std::to_string(i) + " and " +
                      std::to_string(j) + " closer than the gap");
      }
    }
  }
  return out;
}

inline constexpr int kObstacleAttempts = 1000;
inline constexpr int kSceneRestarts = 100;

/// Rejection sampling of `count` circular obstacles. Each obstacle draws a
/// radius, then a centre in the margin-shrunk box; a candidate too close to
/// an earlier obstacle is redrawn. After kObstacleAttempts failures for one
/// obstacle the whole scene restarts; after kSceneRestarts restarts the
/// sampler gives up.
inline std::vector<Obstacle> sample_obstacles(Rng& rng, std::size_t count,
                                              RadiusRange radii,
                                              const ChannelGeometry& g = {}) {
  if (!(radii.lo > 0.0) || !(radii.hi > radii.lo)) {
    throw ValidationError("sample_obstacles: radius range must satisfy 0 < lo < hi");
  }
  for (int restart = 0; restart < kSceneRestarts; ++restart) {
    std::vector<Obstacle> placed;
    bool failed = false;
    while (placed.size() < count && !failed) {
      bool accepted = false;
      for (int attempt = 0; attempt < kObstacleAttempts && !accepted; ++attempt) {
        const double r = rng.uniform(radii.lo, radii.hi);
        const double x_lo = g.side_margin + r;
        const double x_hi = g.width - g.side_margin - r;
        const double y_lo = g.wall_margin + r;
        const double y_hi = g.height - g.wall_margin - r;
        if (x_lo > x_hi || y_lo > y_hi) continue;
        const Eigen::Vector2d c(x_lo + (x_hi - x_lo) * rng.uniform01(),
                                y_lo + (y_hi - y_lo) * rng.uniform01());
        bool clear = true;
        for (const auto& o : placed) {
          if ((c - o.center).norm() - r - o.radius < g.obstacle_gap) {
            clear = false;
            break;
          }
        }
        if (clear) {
          placed.push_back(Obstacle{c, r});
          accepted = true;
        }
      }
      failed = !accepted;
    }
    if (!failed) return placed;
  }
  throw SamplingExhaustedError("sample_obstacles: could not place " +
                               std::to_string(count) + " obstacles with radii in (" +
                               std::to_string(radii.lo) + ", " +
                               std::to_string(radii.hi) + ")");
}

/// Parabolic inflow on the left wall, ramped up in time. With the default
/// in_velocity of 1.5 and height 0.41 this is
/// (6 (1 - e^{-5t}) (0.41 - y) y / 0.1681, 0).
inline Eigen::Vector2d inflow_profile(double y, double t, double in_velocity = 1.5,
                                      double height = 0.41) {
  const double ramp = 1.0 - std::exp(-5.0 * t);
  return {4.0 * in_velocity * ramp * (height - y) * y / (height * height), 0.0};
}

/// Regular sampling grid on the channel: nx * ny points, x varying fastest.
struct NsGrid {
  Index nx = 0;
  Index ny = 0;
  double resolution = 0.01;

  static NsGrid for_scene(const NavierStokesScene& scene) {
    NsGrid g;
    g.resolution = scene.grid_resolution;
    g.nx = static_cast<Index>(std::llround(scene.geometry.width / scene.grid_resolution)) + 1;
    g.ny = static_cast<Index>(std::llround(scene.geometry.height / scene.grid_resolution)) + 1;
    return g;
  }

  Index size() const { return nx * ny; }
  Index index(Index ix, Index iy) const { return iy * nx + ix; }
  Eigen::Vector2d point(Index i) const {
    return {static_cast<double>(i % nx) * resolution,
            static_cast<double>(i / nx) * resolution};
  }
};

using ordered_json = nlohmann::ordered_json;

inline ordered_json scene_to_json(const NavierStokesScene& scene) {
  ordered_json mesh = ordered_json::array();
  for (const auto& o : scene.obstacles) {
    mesh.push_back(ordered_json{{"radius", o.radius},
                                {"center", {o.center.x(), o.center.y()}}});
  }
  const auto& g = scene.geometry;
  ordered_json doc;
  doc["domain"] = {{"width", g.width}, {"height", g.height}};
  doc["mesh"] = std::move(mesh);
  doc["viscosity"] = scene.viscosity;
  doc["in_velocity"] = scene.in_velocity;
  doc["grid_resolution"] = scene.grid_resolution;
  doc["num_time_steps"] = scene.num_time_steps;
  doc["time_step_size"] = scene.time_step_size;
  doc["boundary_conditions"] = {
      {"inflow",
       {{"side", "left"},
        {"type", "dirichlet"},
        {"velocity",
         "[4*in_velocity*(1-exp(-5*t))*(height-y)*y/height^2, 0]"}}},
      {"walls", {{"sides", {"top", "bottom"}}, {"type", "dirichlet"}, {"velocity", {0.0, 0.0}}}},
      {"obstacles", {{"type", "dirichlet"}, {"velocity", {0.0, 0.0}}}},
      {"outflow", {{"side", "right"}, {"type", "neumann"}, {"value", 0.0}}}};
  doc["initial_velocity"] = {0.0, 0.0};
  return doc;
}

/// Solver job document for one scene.
inline std::string emit_solver_scene(const NavierStokesScene& scene) {
  return scene_to_json(scene).dump(2) + "\n";
}

inline NavierStokesScene scene_from_json(const ordered_json& doc) {
  NavierStokesScene scene;
  try {
    scene.geometry.width = doc.at("domain").at("width").get<double>();
    scene.geometry.height = doc.at("domain").at("height").get<double>();
    for (const auto& m : doc.at("mesh")) {
      const auto& c = m.at("center");
      if (c.size() != 2) throw ValidationError("scene: obstacle centre must have two entries");
      scene.obstacles.push_back(
          Obstacle{Eigen::Vector2d(c[0].get<double>(), c[1].get<double>()),
                   m.at("radius").get<double>()});
    }
    scene.viscosity = doc.at("viscosity").get<double>();
    scene.in_velocity = doc.at("in_velocity").get<double>();
    scene.grid_resolution = doc.at("grid_resolution").get<double>();
    scene.num_time_steps = doc.at("num_time_steps").get<std::size_t>();
    scene.time_step_size = doc.at("time_step_size").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scene document: ") + e.what());
  }
  return scene;
}

inline NavierStokesScene parse_solver_scene(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scene document: ") + e.what());
  }
  return scene_from_json(doc);
}

}  // namespace physbench
