#pragma once

// Ground-truth dataset generation for the spring, wave and spring-mesh
// systems. Navier-Stokes data comes from an external solver; see
// io/ns_ingest.hpp.

#include <cstdio>
#include <string>
#include <vector>

#include "physbench/integrators.hpp"
#include "physbench/io/dataset.hpp"
#include "physbench/sampling.hpp"

namespace physbench {

struct GenerationConfig {
  std::string system;  // spring | wave | spring-mesh
  std::size_t num_traj = 1;
  std::uint64_t seed = 0;
  Distribution distribution = Distribution::InDistribution;
  double time_step_size = 0.1;
  std::size_t num_time_steps = 2;
  std::size_t subsample = 1;
  IntegratorKind integrator = IntegratorKind::Leapfrog;
  IntegratorOptions integrator_options;

  Index n_grid = 125;
  double space_max = 1.0;
  double wave_speed = 0.1;
  Index mesh_size = 10;
  double vel_decay = 0.1;

  TimeGrid grid() const { return TimeGrid(time_step_size, num_time_steps, subsample); }
};

/// Default step, subsample and length for each system.
inline GenerationConfig default_config(const std::string& system) {
  GenerationConfig c;
  c.system = system;
  if (system == "spring" || system == "spring-mesh") {
    c.time_step_size = 0.00781;
    c.subsample = 128;
    c.num_time_steps = 805;
  } else if (system == "wave") {
    c.time_step_size = 0.00049;
    c.subsample = 8;
    c.num_time_steps = 10204;
  } else if (system == "navier-stokes") {
    c.time_step_size = 0.08;
    c.subsample = 1;
    c.num_time_steps = 65;
  } else {
    throw ValidationError("unknown system '" + system + "'");
  }
  return c;
}

inline std::string trajectory_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "traj_%05zu", i);
  return buf;
}

namespace gen_detail {

using io::NdArray;
using io::ordered_json;

// Stacks per-step vectors into an (N_t, trailing...) array.
template <class Get>
NdArray stack(const Trajectory& tr, io::Shape trailing, Get get) {
  const std::size_t nt = tr.size();
  const std::size_t width = io::element_count(trailing);
  std::vector<double> data;
  data.reserve(nt * width);
  for (std::size_t k = 0; k < nt; ++k) {
    const Vector& v = get(k);
    if (static_cast<std::size_t>(v.size()) != width) {
      throw DimensionError("stacked channel has inconsistent width");
    }
    data.insert(data.end(), v.data(), v.data() + v.size());
  }
  io::Shape shape{nt};
  shape.insert(shape.end(), trailing.begin(), trailing.end());
  return NdArray::f64(std::move(shape), std::move(data));
}

inline NdArray times(const Trajectory& tr) {
  const auto t = tr.grid.times();
  return NdArray::f64({t.size()}, t);
}

inline ordered_json grid_args(const TimeGrid& g) {
  return {{"num_time_steps", g.count()}, {"time_step_size", g.step()}, {"subsample", g.subsample()}};
}

inline void merge(ordered_json& into, const ordered_json& extra) {
  for (const auto& [k, v] : extra.items()) into[k] = v;
}

// Adds q, p, dqdt, dpdt, t records for trajectory i and returns its keys.
inline io::FieldKeys add_state_channels(io::DatasetBundle& b, const std::string& name,
                                        const Trajectory& tr, const io::Shape& trailing) {
  io::FieldKeys keys;
  auto put = [&](const std::string& channel, NdArray arr) {
    const std::string rec = name + "_" + channel;
    b.add_record(rec, std::move(arr));
    keys.emplace_back(channel, rec);
  };
  put("q", stack(tr, trailing, [&](std::size_t k) -> const Vector& { return tr.states[k].q; }));
  put("p", stack(tr, trailing, [&](std::size_t k) -> const Vector& { return tr.states[k].p; }));
  put("dqdt", stack(tr, trailing, [&](std::size_t k) -> const Vector& { return tr.derivatives[k].dq; }));
  put("dpdt", stack(tr, trailing, [&](std::size_t k) -> const Vector& { return tr.derivatives[k].dp; }));
  put("t", times(tr));
  return keys;
}

inline io::TrajectoryRecord record_for(const std::string& name, const Trajectory& tr) {
  io::TrajectoryRecord rec;
  rec.name = name;
  rec.num_time_steps = tr.grid.count();
  rec.time_step_size = tr.grid.step();
  rec.traj_gen_time = tr.gen_time_seconds;
  return rec;
}

}  // namespace gen_detail

inline io::DatasetBundle spring_bundle(const std::vector<Trajectory>& trajs,
                                       const std::vector<PhaseState>& ics,
                                       IntegratorKind integrator) {
  using namespace gen_detail;
  io::DatasetBundle b;
  b.system = "spring";
  ordered_json defs = ordered_json::array();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    ordered_json d;
    d["initial_condition"] = {{"q", ics[i].q[0]}, {"p", ics[i].p[0]}};
    merge(d, grid_args(trajs[i].grid));
    defs.push_back(std::move(d));

    const std::string name = trajectory_name(i);
    auto rec = record_for(name, trajs[i]);
    rec.field_keys = add_state_channels(b, name, trajs[i], {1});
    b.trajectories.push_back(std::move(rec));
  }
  b.system_args["trajectory_defs"] = std::move(defs);
  b.metadata["n_grid"] = 1;
  b.metadata["integrator"] = std::string(to_string(integrator));
  return b;
}

inline io::DatasetBundle wave_bundle(const std::vector<Trajectory>& trajs,
                                     const std::vector<WaveIc>& ics, const WaveSystem& sys,
                                     double space_max, double wave_speed,
                                     IntegratorKind integrator) {
  using namespace gen_detail;
  io::DatasetBundle b;
  b.system = "wave";
  const auto n = static_cast<std::size_t>(sys.dxx().rows());
  b.system_args["n_grid"] = n;
  b.system_args["space_max"] = space_max;
  ordered_json defs = ordered_json::array();
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    ordered_json d;
    d["wave_speed"] = wave_speed;
    d["start_type"] = "cubic_splines";
    d["start_type_args"] = {{"height", ics[i].height}, {"width", ics[i].width}, {"position", ics[i].position}};
    merge(d, grid_args(trajs[i].grid));
    defs.push_back(std::move(d));

    const std::string name = trajectory_name(i);
    auto rec = record_for(name, trajs[i]);
    rec.extras["wave_speed"] = wave_speed;
    rec.field_keys = add_state_channels(b, name, trajs[i], {n});
    b.trajectories.push_back(std::move(rec));
  }
  b.system_args["trajectory_defs"] = std::move(defs);
  b.metadata["n_grid"] = n;
  b.metadata["space_max"] = space_max;
  b.metadata["integrator"] = std::string(to_string(integrator));
  return b;
}

namespace gen_detail {

inline ordered_json particles_json(const SpringMeshSystem& mesh, const Vector& q) {
  ordered_json out = ordered_json::array();
  for (Index i = 0; i < mesh.n_particles(); ++i) {
    const auto& p = mesh.particles()[static_cast<std::size_t>(i)];
    out.push_back({{"is_fixed", p.is_fixed}, {"mass", p.mass}, {"position", {q[2 * i], q[2 * i + 1]}}});
  }
  return out;
}

inline ordered_json springs_json(const SpringMeshSystem& mesh) {
  ordered_json out = ordered_json::array();
  for (const auto& s : mesh.springs()) {
    out.push_back({{"a", s.a}, {"b", s.b}, {"rest_length", s.rest_length}, {"spring_const", s.spring_const}});
  }
  return out;
}

// Directed copies of the axis-aligned grid edges, shape (2, N_e).
inline NdArray axis_edge_indices(Index n) {
  const auto edges = SpringMeshSystem::grid_axis_edges(n);
  std::vector<std::int64_t> src, dst;
  for (const auto& [a, b] : edges) {
    src.push_back(a);
    dst.push_back(b);
    src.push_back(b);
    dst.push_back(a);
  }
  const std::size_t ne = src.size();
  src.insert(src.end(), dst.begin(), dst.end());
  return NdArray::i64({2, ne}, std::move(src));
}

}  // namespace gen_detail

inline io::DatasetBundle mesh_bundle(const std::vector<Trajectory>& trajs,
                                     const std::vector<PhaseState>& ics,
                                     const SpringMeshSystem& mesh, Index grid_n,
                                     IntegratorKind integrator) {
  using namespace gen_detail;
  io::DatasetBundle b;
  b.system = "spring-mesh";
  const auto np = static_cast<std::size_t>(mesh.n_particles());
  b.system_args["vel_decay"] = mesh.vel_decay();
  ordered_json defs = ordered_json::array();

  std::vector<double> masses;
  std::vector<std::uint8_t> fixed, fixed2;
  for (const auto& p : mesh.particles()) {
    masses.push_back(p.mass);
    fixed.push_back(p.is_fixed);
    fixed2.push_back(p.is_fixed);
    fixed2.push_back(p.is_fixed);
  }

  for (std::size_t i = 0; i < trajs.size(); ++i) {
    ordered_json d;
    d["particles"] = particles_json(mesh, ics[i].q);
    d["springs"] = springs_json(mesh);
    merge(d, grid_args(trajs[i].grid));
    defs.push_back(std::move(d));

    const std::string name = trajectory_name(i);
    auto rec = record_for(name, trajs[i]);
    rec.field_keys = add_state_channels(b, name, trajs[i], {np, 2});
    auto put = [&](const std::string& channel, NdArray arr) {
      b.add_record(name + "_" + channel, std::move(arr));
      rec.field_keys.emplace_back(channel, name + "_" + channel);
    };
    put("edge_indices", axis_edge_indices(grid_n));
    put("masses", NdArray::f64({np}, masses));
    put("fixed_mask", NdArray::boolean({np}, fixed));
    put("fixed_mask_q", NdArray::boolean({np, 2}, fixed2));
    rec.field_keys.emplace_back("fixed_mask_p", name + "_fixed_mask_q");
    rec.field_keys.emplace_back("extra_fixed_mask", name + "_fixed_mask");
    b.trajectories.push_back(std::move(rec));
  }
  b.system_args["trajectory_defs"] = defs;
  if (!defs.empty()) {
    b.metadata["edges"] = defs[0]["springs"];
    b.metadata["particles"] = defs[0]["particles"];
  } else {
    b.metadata["edges"] = springs_json(mesh);
    b.metadata["particles"] = particles_json(mesh, mesh.rest_positions());
  }
  b.metadata["n_dim"] = 2;
  b.metadata["n_grid"] = grid_n;
  b.metadata["n_particles"] = np;
  b.metadata["vel_decay"] = mesh.vel_decay();
  b.metadata["integrator"] = std::string(to_string(integrator));
  return b;
}

/// Samples initial conditions and integrates every trajectory. Trajectory i
/// depends only on (seed, i), so a larger set extends a smaller one.
inline io::DatasetBundle generate_dataset(const GenerationConfig& cfg) {
  const TimeGrid grid = cfg.grid();
  if (cfg.system == "spring") {
    SpringSystem sys;
    auto src = spring_source(cfg.seed, cfg.distribution);
    const auto ics = spring_ics(src, cfg.num_traj);
    std::vector<Trajectory> trajs;
    for (const auto& ic : ics) {
      trajs.push_back(integrate(sys, cfg.integrator, pack_state(ic), grid, cfg.integrator_options));
    }
    return spring_bundle(trajs, ics, cfg.integrator);
  }
  if (cfg.system == "wave") {
    WaveSystem sys(cfg.n_grid, cfg.space_max, cfg.wave_speed);
    auto src = wave_source(cfg.seed, cfg.distribution, cfg.n_grid, cfg.space_max);
    const auto ics = src.draw(cfg.num_traj);
    std::vector<Trajectory> trajs;
    for (const auto& ic : ics) {
      trajs.push_back(integrate(sys, cfg.integrator, pack_state(ic.state), grid, cfg.integrator_options));
    }
    return wave_bundle(trajs, ics, sys, cfg.space_max, cfg.wave_speed, cfg.integrator);
  }
  if (cfg.system == "spring-mesh") {
    const auto mesh = SpringMeshSystem::grid(cfg.mesh_size, cfg.vel_decay);
    auto src = mesh_source(cfg.seed, cfg.distribution, mesh);
    const auto ics = mesh_ics(src, cfg.num_traj);
    std::vector<Trajectory> trajs;
    for (const auto& ic : ics) {
      trajs.push_back(integrate(mesh, cfg.integrator, pack_state(ic), grid, cfg.integrator_options));
    }
    return mesh_bundle(trajs, ics, mesh, cfg.mesh_size, cfg.integrator);
  }
  if (cfg.system == "navier-stokes") {
    throw UnsupportedError("navier-stokes data is produced by an external solver; ingest its output instead");
  }
  throw ValidationError("unknown system '" + cfg.system + "'");
}

}  // namespace physbench
