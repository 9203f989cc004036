#pragma once

// Builds Navier-Stokes bundles from an external solver's snapshots. The
// solver output for one scene is an npz holding `velocity` (N_t, N_p, 2) and
// `pressure` (N_t, N_p), sampled on the scene's regular grid.

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "physbench/generate.hpp"
#include "physbench/io/dataset.hpp"
#include "physbench/systems/navier_stokes.hpp"

namespace physbench::io {

inline constexpr std::string_view kNsStencil =
    "central differences in the interior, second-order one-sided at the endpoints";

struct NsSolverOutput {
  NdArray velocity;  // (N_t, N_p, 2)
  NdArray pressure;  // (N_t, N_p)
  double solve_time_seconds = 0.0;
};

inline NsSolverOutput read_ns_solver_output(const std::filesystem::path& npz) {
  auto arrays = read_npz(npz);
  for (auto key : {"velocity", "pressure"}) {
    if (!arrays.count(key)) {
      throw FormatError(FormatErrorKind::DanglingReference,
                        npz.string() + " has no '" + std::string(key) + "' array");
    }
  }
  NsSolverOutput out{std::move(arrays.at("velocity")), std::move(arrays.at("pressure")), 0.0};
  return out;
}

/// Time derivative of snapshots laid out as (N_t, width): central
/// differences inside, (-3u0 + 4u1 - u2) / 2dt style one-sided stencils at
/// the ends. Two snapshots fall back to a plain difference.
inline std::vector<double> time_derivative(const std::vector<double>& u, std::size_t nt, double dt) {
  if (nt < 2) throw ValidationError("time derivative needs at least two snapshots");
  const std::size_t w = u.size() / nt;
  std::vector<double> d(u.size());
  auto at = [&](std::size_t k, std::size_t j) { return u[k * w + j]; };
  for (std::size_t j = 0; j < w; ++j) {
    if (nt == 2) {
      d[j] = d[w + j] = (at(1, j) - at(0, j)) / dt;
      continue;
    }
    d[j] = (-3.0 * at(0, j) + 4.0 * at(1, j) - at(2, j)) / (2.0 * dt);
    for (std::size_t k = 1; k + 1 < nt; ++k) d[k * w + j] = (at(k + 1, j) - at(k - 1, j)) / (2.0 * dt);
    const std::size_t e = nt - 1;
    d[e * w + j] = (3.0 * at(e, j) - 4.0 * at(e - 1, j) + at(e - 2, j)) / (2.0 * dt);
  }
  return d;
}

/// Boundary points: inflow wall and the two channel walls. The outflow
/// side is open.
inline bool on_boundary(const NsGrid& g, Index i) {
  const Index ix = i % g.nx;
  const Index iy = i / g.nx;
  return ix == 0 || iy == 0 || iy == g.ny - 1;
}

inline bool in_obstacle(const NavierStokesScene& scene, const Eigen::Vector2d& x) {
  for (const auto& o : scene.obstacles) {
    if ((x - o.center).norm() <= o.radius) return true;
  }
  return false;
}

/// Directed axis-aligned grid neighbours, shape (2, N_e).
inline NdArray grid_edge_indices(const NsGrid& g) {
  std::vector<std::int64_t> src, dst;
  for (Index iy = 0; iy < g.ny; ++iy) {
    for (Index ix = 0; ix < g.nx; ++ix) {
      const Index i = g.index(ix, iy);
      if (ix + 1 < g.nx) {
        const Index j = g.index(ix + 1, iy);
        src.insert(src.end(), {i, j});
        dst.insert(dst.end(), {j, i});
      }
      if (iy + 1 < g.ny) {
        const Index j = g.index(ix, iy + 1);
        src.insert(src.end(), {i, j});
        dst.insert(dst.end(), {j, i});
      }
    }
  }
  const std::size_t ne = src.size();
  src.insert(src.end(), dst.begin(), dst.end());
  return NdArray::i64({2, ne}, std::move(src));
}

/// One bundle trajectory per (scene, solver output) pair.
inline DatasetBundle ingest_external_ns(
    const std::vector<std::pair<NavierStokesScene, NsSolverOutput>>& runs) {
  DatasetBundle b;
  b.system = "navier-stokes";
  ordered_json defs = ordered_json::array();
  double resolution = runs.empty() ? NavierStokesScene{}.grid_resolution : runs.front().first.grid_resolution;
  b.system_args["grid_resolution"] = resolution;

  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& [scene, out] = runs[i];
    const std::string name = trajectory_name(i);
    if (scene.grid_resolution != resolution) {
      throw ValidationError(name + ": grid resolution differs from the first scene");
    }
    if (auto bad = scene_violations(scene); !bad.empty()) throw ValidationError(name + ": " + bad.front());
    const NsGrid grid = NsGrid::for_scene(scene);
    const auto np = static_cast<std::size_t>(grid.size());
    const std::size_t want = scene.num_time_steps;

    if (out.velocity.dtype() != DType::Float64 || out.pressure.dtype() != DType::Float64) {
      throw ValidationError(name + ": solver output must be float64");
    }
    const auto& vs = out.velocity.shape;
    const auto& ps = out.pressure.shape;
    if (vs.size() != 3 || vs[2] != 2 || ps.size() != 2) {
      throw ValidationError(name + ": solver output arrays have the wrong rank");
    }
    if (vs[1] != np || ps[1] != np) {
      throw ValidationError(name + ": solver grid has " + std::to_string(vs[1]) + " points, scene grid has " +
                            std::to_string(np));
    }
    if (vs[0] != ps[0]) throw ValidationError(name + ": velocity and pressure snapshot counts differ");
    const std::size_t nt = vs[0];
    if (nt < want || nt < 2) {
      throw ValidationError(name + ": missing snapshots (" + std::to_string(nt) + " of " +
                            std::to_string(want) + ")");
    }
    if (nt > want) {
      throw ValidationError(name + ": solver wrote " + std::to_string(nt) + " snapshots, scene expects " +
                            std::to_string(want));
    }

    const double dt = scene.time_step_size;
    ordered_json d;
    d["viscosity"] = scene.viscosity;
    d["in_velocity"] = scene.in_velocity;
    d["mesh"] = scene_to_json(scene)["mesh"];
    d["num_time_steps"] = nt;
    d["time_step_size"] = dt;
    d["subsample"] = 1;
    defs.push_back(std::move(d));

    TrajectoryRecord rec;
    rec.name = name;
    rec.num_time_steps = nt;
    rec.time_step_size = dt;
    rec.traj_gen_time = out.solve_time_seconds;
    rec.extras["in_velocity"] = scene.in_velocity;
    rec.extras["viscosity"] = scene.viscosity;
    auto put = [&](const std::string& channel, NdArray arr) {
      b.add_record(name + "_" + channel, std::move(arr));
      rec.field_keys.emplace_back(channel, name + "_" + channel);
    };
    auto alias = [&](const std::string& channel, const std::string& target) {
      rec.field_keys.emplace_back(channel, name + "_" + target);
    };

    put("solutions", out.velocity);
    put("pressures", out.pressure);
    put("grads", NdArray::f64(vs, time_derivative(out.velocity.as_f64(), nt, dt)));
    put("pressures_grads", NdArray::f64(ps, time_derivative(out.pressure.as_f64(), nt, dt)));
    std::vector<double> t(nt);
    for (std::size_t k = 0; k < nt; ++k) t[k] = static_cast<double>(k) * dt;
    put("t", NdArray::f64({nt}, std::move(t)));
    alias("q", "pressures");
    alias("p", "solutions");
    alias("dqdt", "pressures_grads");
    alias("dpdt", "grads");
    put("edge_indices", grid_edge_indices(grid));

    std::vector<double> verts(2 * np);
    std::vector<std::uint8_t> fixed(np), fixed2(2 * np), extra(2 * np);
    for (std::size_t j = 0; j < np; ++j) {
      const auto x = grid.point(static_cast<Index>(j));
      verts[2 * j] = x.x();
      verts[2 * j + 1] = x.y();
      const bool obstacle = in_obstacle(scene, x);
      const bool f = obstacle || on_boundary(grid, static_cast<Index>(j));
      fixed[j] = f;
      fixed2[2 * j] = fixed2[2 * j + 1] = f;
      extra[2 * j] = f;
      extra[2 * j + 1] = obstacle;
    }
    put("vertices", NdArray::f64({np, 2}, std::move(verts)));
    put("fixed_mask", NdArray::boolean({np}, fixed));
    put("fixed_mask_solutions", NdArray::boolean({np, 2}, fixed2));
    put("fixed_mask_pressures", NdArray::boolean({np}, fixed));
    alias("fixed_mask_q", "fixed_mask_pressures");
    alias("fixed_mask_p", "fixed_mask_solutions");
    put("extra_fixed_mask", NdArray::boolean({np, 2}, std::move(extra)));
    b.trajectories.push_back(std::move(rec));
  }
  b.system_args["trajectory_defs"] = std::move(defs);
  b.metadata["grid_resolution"] = resolution;
  b.metadata["viscosity"] = runs.empty() ? NavierStokesScene{}.viscosity : runs.front().first.viscosity;
  b.metadata["time_derivative_stencil"] = kNsStencil;
  return b;
}

}  // namespace physbench::io
