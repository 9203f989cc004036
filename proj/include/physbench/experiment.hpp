#pragma once

// Experiment specs and the work behind each run phase. A spec names
// datasets (with a list of sizes drawn from one seed), learners and the
// datasets they train and evaluate on; expand_spec turns it into run
// descriptions, and execute_run carries one of them out.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "physbench/evaluation.hpp"
#include "physbench/generate.hpp"
#include "physbench/io/dataset.hpp"
#include "physbench/io/ns_ingest.hpp"
#include "physbench/learners/checkpoint.hpp"
#include "physbench/learners/knn.hpp"
#include "physbench/learners/mlp.hpp"
#include "physbench/learners/random_features.hpp"
#include "physbench/runmgr.hpp"
#include "physbench/systems/spring.hpp"
#include "physbench/systems/spring_mesh.hpp"
#include "physbench/systems/wave.hpp"

namespace physbench::experiment {

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using runmgr::Phase;
using runmgr::RunDescription;

inline constexpr std::string_view kTrainLog = "train_log.json";
inline constexpr std::string_view kModelDir = "model";

namespace detail {

inline void check_name(const std::string& what, const std::string& name) {
  if (name.empty()) throw ValidationError(what + ": empty name");
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
      throw ValidationError(what + ": name '" + name + "' may only use letters, digits, '-', '_' and '.'");
    }
  }
}

template <class T>
T get_or(const ordered_json& j, const char* key, T fallback) {
  return j.contains(key) && !j.at(key).is_null() ? j.at(key).get<T>() : fallback;
}

inline std::vector<std::string> string_list(const ordered_json& j) {
  if (j.is_string()) return {j.get<std::string>()};
  return j.get<std::vector<std::string>>();
}

/// Fully resolved data_gen payload for one size of a dataset.
inline ordered_json dataset_payload(const ordered_json& ds, std::size_t size) {
  const std::string system = ds.at("system").get<std::string>();
  ordered_json p;
  p["system"] = system;
  p["num_traj"] = size;
  p["seed"] = ds.at("seed").get<std::uint64_t>();
  p["distribution"] = get_or<std::string>(ds, "distribution", "in");
  if (system == "navier-stokes") {
    p["obstacles"] = get_or<std::size_t>(ds, "obstacles", 1);
    p["solver_dir"] = ds.at("solver_dir").get<std::string>();
    return p;
  }
  const GenerationConfig d = default_config(system);
  p["time_step_size"] = get_or(ds, "time_step_size", d.time_step_size);
  p["num_time_steps"] = get_or(ds, "num_time_steps", d.num_time_steps);
  p["subsample"] = get_or(ds, "subsample", d.subsample);
  p["integrator"] = get_or<std::string>(ds, "integrator", "leapfrog");
  if (system == "wave") {
    p["n_grid"] = get_or<Index>(ds, "n_grid", d.n_grid);
    p["space_max"] = get_or(ds, "space_max", d.space_max);
    p["wave_speed"] = get_or(ds, "wave_speed", d.wave_speed);
  } else if (system == "spring-mesh") {
    p["mesh_size"] = get_or<Index>(ds, "mesh_size", d.mesh_size);
    p["vel_decay"] = get_or(ds, "vel_decay", d.vel_decay);
  }
  return p;
}

// Learner fields copied into train or eval payloads, with defaults.
inline ordered_json learner_params(const ordered_json& l, const std::string& type) {
  ordered_json p;
  if (type == "mlp") {
    p["architecture"] = l.at("architecture").get<std::string>();
    p["optimizer"] = get_or<std::string>(l, "optimizer", "adam");
    p["epochs"] = get_or<std::size_t>(l, "epochs", 10);
    p["batch_size"] = get_or<std::size_t>(l, "batch_size", 32);
    p["learning_rate"] = get_or(l, "learning_rate", 1e-3);
    p["weight_decay"] = get_or(l, "weight_decay", 0.0);
    p["noise_variance"] = get_or(l, "noise_variance", 0.0);
  } else if (type == "random-features") {
    p["num_features"] = l.at("num_features").get<Index>();
    p["lambda"] = l.contains("lambda") ? l.at("lambda") : ordered_json(nullptr);
    p["solver"] = get_or<std::string>(l, "solver", "closed-form");
    if (p["solver"] == "sgd") {
      p["epochs"] = get_or<std::size_t>(l, "epochs", 10);
      p["batch_size"] = get_or<std::size_t>(l, "batch_size", 32);
      p["learning_rate"] = get_or(l, "learning_rate", 1e-3);
      p["weight_decay"] = get_or(l, "weight_decay", 1e-4);
    }
  }
  return p;
}

}  // namespace detail

/// Checks a description's payload against its phase. Throws ValidationError.
inline void validate_payload(const RunDescription& d) {
  const auto& p = d.payload;
  auto need = [&](const char* key) {
    if (!p.contains(key)) throw ValidationError(d.name + ": payload is missing '" + key + "'");
  };
  try {
    switch (d.phase) {
      case Phase::DataGen: {
        need("system");
        need("num_traj");
        need("seed");
        const auto system = p.at("system").get<std::string>();
        if (std::find(io::known_systems().begin(), io::known_systems().end(), system) == io::known_systems().end()) {
          throw ValidationError(d.name + ": unknown system '" + system + "'");
        }
        parse_distribution(p.value("distribution", "in"));
        if (p.at("num_traj").get<std::size_t>() < 1) throw ValidationError(d.name + ": num_traj must be >= 1");
        if (system == "navier-stokes") {
          need("solver_dir");
        } else {
          need("time_step_size");
          need("num_time_steps");
          need("subsample");
          parse_integrator(p.value("integrator", "leapfrog"));
          TimeGrid(p.at("time_step_size").get<double>(), p.at("num_time_steps").get<std::size_t>(),
                   p.at("subsample").get<std::size_t>());
        }
        break;
      }
      case Phase::Train: {
        need("learner");
        need("dataset");
        need("task");
        parse_task(p.at("task").get<std::string>());
        const auto learner = p.at("learner").get<std::string>();
        if (learner == "mlp") {
          need("architecture");
          parse_architecture(p.at("architecture").get<std::string>());
        } else if (learner == "random-features") {
          need("num_features");
          if (p.at("num_features").get<Index>() < 1) throw ValidationError(d.name + ": num_features must be >= 1");
        } else {
          throw ValidationError(d.name + ": learner '" + learner + "' has no training phase");
        }
        break;
      }
      case Phase::Eval: {
        need("learner");
        need("task");
        need("eval_dataset");
        const TaskKind task = parse_task(p.at("task").get<std::string>());
        if (task == TaskKind::DerivativePrediction) {
          need("integrator");
          parse_integrator(p.at("integrator").get<std::string>());
        }
        const auto learner = p.at("learner").get<std::string>();
        if (learner == "knn") {
          need("train_dataset");
        } else if (learner == "mlp" || learner == "random-features") {
          need("model_run");
        } else {
          throw ValidationError(d.name + ": unknown learner '" + learner + "'");
        }
        break;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(d.name + ": " + e.what());
  }
}

/// Expands an experiment spec into run descriptions:
///
///   { "experiment": "...",
///     "datasets": { "<name>": { "system", "seed", "sizes": [...], ... } },
///     "learners": [ { "name", "type": knn|mlp|random-features, "task",
///                     "train": "<dataset>", "eval": ["<dataset>"],
///                     "integrators": [...], "seeds": [...], ... } ],
///     "timing": { "max_power": N } }
///
/// Dataset runs are named <dataset>-n<size>; training runs
/// <learner>-<data run>-s<seed>; evaluation runs append the integrator (for
/// derivative tasks) and the evaluation data run.
inline std::vector<RunDescription> expand_spec(const ordered_json& spec) {
  std::vector<RunDescription> out;
  try {
    const std::string exp = spec.at("experiment").get<std::string>();
    detail::check_name("experiment", exp);
    std::map<std::string, std::vector<std::string>> data_runs;  // dataset -> run names
    std::map<std::string, std::string> systems;

    const ordered_json datasets = spec.value("datasets", ordered_json::object());
    for (const auto& [ds_name, ds] : datasets.items()) {
      detail::check_name("dataset", ds_name);
      const auto sizes = ds.at("sizes").get<std::vector<std::size_t>>();
      if (sizes.empty()) throw ValidationError("dataset '" + ds_name + "' lists no sizes");
      systems[ds_name] = ds.at("system").get<std::string>();
      for (std::size_t n : sizes) {
        RunDescription d;
        d.phase = Phase::DataGen;
        d.experiment = exp;
        d.name = ds_name + "-n" + std::to_string(n);
        d.payload = detail::dataset_payload(ds, n);
        data_runs[ds_name].push_back(d.name);
        out.push_back(std::move(d));
      }
    }

    const ordered_json default_timing = spec.value("timing", ordered_json(nullptr));
    const ordered_json learners = spec.value("learners", ordered_json::array());
    for (const auto& l : learners) {
      const auto name = l.at("name").get<std::string>();
      detail::check_name("learner", name);
      const auto type = l.at("type").get<std::string>();
      const auto task_name = l.at("task").get<std::string>();
      const TaskKind task = parse_task(task_name);
      const auto train_ds = l.at("train").get<std::string>();
      if (!data_runs.count(train_ds)) throw ValidationError(name + ": unknown training dataset '" + train_ds + "'");
      std::vector<std::string> eval_runs;
      for (const auto& e : detail::string_list(l.at("eval"))) {
        if (!data_runs.count(e)) throw ValidationError(name + ": unknown evaluation dataset '" + e + "'");
        if (systems[e] != systems[train_ds]) throw ValidationError(name + ": train and eval systems differ");
        eval_runs.insert(eval_runs.end(), data_runs[e].begin(), data_runs[e].end());
      }
      std::vector<std::string> integrators{""};
      if (task == TaskKind::DerivativePrediction) {
        integrators = detail::string_list(l.value("integrators", ordered_json("leapfrog")));
        for (const auto& i : integrators) parse_integrator(i);
      }
      const ordered_json timing = l.value("timing", default_timing);
      const bool with_timing = task == TaskKind::DerivativePrediction && !timing.is_null() &&
                               systems[train_ds] != "navier-stokes";
      const ordered_json params = detail::learner_params(l, type);

      auto add_eval = [&](const std::string& prefix, ordered_json base, std::vector<runmgr::RunRef> deps) {
        for (const auto& integ : integrators) {
          for (const auto& ev : eval_runs) {
            RunDescription d;
            d.phase = Phase::Eval;
            d.experiment = exp;
            d.name = prefix + (integ.empty() ? "" : "-" + integ) + "-" + ev;
            d.payload = base;
            d.payload["eval_dataset"] = ev;
            if (!integ.empty()) d.payload["integrator"] = integ;
            d.payload["timing"] = with_timing ? timing : ordered_json(nullptr);
            d.depends_on = deps;
            d.depends_on.push_back({Phase::DataGen, ev});
            out.push_back(std::move(d));
          }
        }
      };

      for (const auto& tr : data_runs[train_ds]) {
        if (type == "knn") {
          ordered_json base{{"learner", "knn"}, {"task", task_name}, {"train_dataset", tr}};
          add_eval(name + "-" + tr, base, {{Phase::DataGen, tr}});
          continue;
        }
        if (type != "mlp" && type != "random-features") throw ValidationError(name + ": unknown learner type '" + type + "'");
        for (auto seed : l.value("seeds", std::vector<std::uint64_t>{0})) {
          RunDescription d;
          d.phase = Phase::Train;
          d.experiment = exp;
          d.name = name + "-" + tr + "-s" + std::to_string(seed);
          d.payload = {{"learner", type}, {"task", task_name}, {"dataset", tr}};
          for (const auto& [k, v] : params.items()) d.payload[k] = v;
          d.payload["seed"] = seed;
          d.depends_on = {{Phase::DataGen, tr}};
          const std::string model_run = d.name;
          out.push_back(std::move(d));
          add_eval(model_run, {{"learner", type}, {"task", task_name}, {"model_run", model_run}},
                   {{Phase::Train, model_run}});
        }
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("experiment spec: ") + e.what());
  }
  for (const auto& d : out) validate_payload(d);
  return out;
}

// ---- execution -------------------------------------------------------------------

/// Calls f with the true system of a dataset (spring, wave or spring mesh).
template <class F>
decltype(auto) with_true_system(const io::DatasetBundle& b, F&& f) {
  const auto& defs = b.system_args.at("trajectory_defs");
  if (b.system == "spring") return f(SpringSystem{});
  if (b.system == "wave") {
    const double c = defs.empty() ? 0.1 : defs[0].at("wave_speed").get<double>();
    return f(WaveSystem(b.system_args.at("n_grid").get<Index>(), b.system_args.at("space_max").get<double>(), c));
  }
  if (b.system == "spring-mesh") {
    std::vector<Particle> particles;
    for (const auto& p : b.metadata.at("particles")) {
      particles.push_back(Particle{Eigen::Vector2d(p.at("position")[0].get<double>(), p.at("position")[1].get<double>()),
                                   p.at("mass").get<double>(), p.at("is_fixed").get<bool>()});
    }
    std::vector<Spring> springs;
    for (const auto& s : b.metadata.at("edges")) {
      springs.push_back(Spring{s.at("a").get<Index>(), s.at("b").get<Index>(), s.at("rest_length").get<double>(),
                               s.at("spring_const").get<double>()});
    }
    return f(SpringMeshSystem(std::move(particles), std::move(springs), b.system_args.at("vel_decay").get<double>()));
  }
  throw UnsupportedError("no ground-truth integrator for system '" + b.system + "'");
}

inline std::vector<Vector> dataset_masks(const io::DatasetBundle& b) {
  std::vector<Vector> masks;
  for (std::size_t i = 0; i < b.trajectories.size(); ++i) masks.push_back(io::mask_features(b, i));
  if (!masks.empty() && masks.front().size() == 0) masks.clear();
  return masks;
}

inline void run_data_gen(const RunDescription& d, const fs::path& run, const fs::path& exp) {
  const auto& p = d.payload;
  const auto system = p.at("system").get<std::string>();
  if (system == "navier-stokes") {
    // Scenes are sampled here; the flow itself comes from an external
    // solver whose outputs sit in solver_dir as traj_XXXXX.npz.
    auto src = ns_source(p.at("seed").get<std::uint64_t>(), parse_distribution(p.value("distribution", "in")),
                         p.value("obstacles", std::size_t{1}));
    const auto scenes = src.draw(p.at("num_traj").get<std::size_t>());
    const fs::path solver = exp / p.at("solver_dir").get<std::string>();
    std::vector<std::pair<NavierStokesScene, io::NsSolverOutput>> runs;
    std::vector<std::string> missing;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const fs::path out = solver / (trajectory_name(i) + ".npz");
      if (!fs::exists(out)) {
        missing.push_back(out.string());
        fs::create_directories(run / "scenes");
        runmgr::write_text(run / "scenes" / (trajectory_name(i) + ".json"), emit_solver_scene(scenes[i]));
        continue;
      }
      runs.emplace_back(scenes[i], io::read_ns_solver_output(out));
    }
    if (!missing.empty()) {
      throw Error(std::to_string(missing.size()) + " solver outputs missing (first: " + missing.front() +
                  "); scenes written to " + (run / "scenes").string());
    }
    io::write_bundle(io::ingest_external_ns(runs), run);
    return;
  }
  GenerationConfig cfg = default_config(system);
  cfg.num_traj = p.at("num_traj").get<std::size_t>();
  cfg.seed = p.at("seed").get<std::uint64_t>();
  cfg.distribution = parse_distribution(p.value("distribution", "in"));
  cfg.time_step_size = p.at("time_step_size").get<double>();
  cfg.num_time_steps = p.at("num_time_steps").get<std::size_t>();
  cfg.subsample = p.at("subsample").get<std::size_t>();
  cfg.integrator = parse_integrator(p.value("integrator", "leapfrog"));
  cfg.n_grid = p.value("n_grid", cfg.n_grid);
  cfg.space_max = p.value("space_max", cfg.space_max);
  cfg.wave_speed = p.value("wave_speed", cfg.wave_speed);
  cfg.mesh_size = p.value("mesh_size", cfg.mesh_size);
  cfg.vel_decay = p.value("vel_decay", cfg.vel_decay);
  io::write_bundle(generate_dataset(cfg), run);
}

inline io::DatasetBundle load_data_run(const fs::path& exp, const std::string& name) {
  return io::read_bundle(runmgr::run_dir(exp, Phase::DataGen, name));
}

inline TrainingSet training_set_for(const io::DatasetBundle& b, TaskKind task) {
  return make_training_set(io::load_trajectories(b), task, dataset_masks(b));
}

inline void run_train(const RunDescription& d, const fs::path& run, const fs::path& exp) {
  const auto& p = d.payload;
  const TaskKind task = parse_task(p.at("task").get<std::string>());
  const auto set = training_set_for(load_data_run(exp, p.at("dataset").get<std::string>()), task);
  const auto learner = p.at("learner").get<std::string>();
  const auto seed = p.value("seed", std::uint64_t{0});
  const auto t0 = std::chrono::steady_clock::now();
  ordered_json log{{"learner", learner}, {"samples", set.size()}};
  if (learner == "mlp") {
    auto m = Mlp::make(set.inputs.rows(), set.targets.rows(), parse_architecture(p.at("architecture").get<std::string>()),
                       seed, task);
    TrainConfig cfg;
    cfg.optimizer = p.value("optimizer", "adam") == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Adam;
    cfg.epochs = p.value("epochs", cfg.epochs);
    cfg.batch_size = p.value("batch_size", cfg.batch_size);
    cfg.learning_rate = p.value("learning_rate", cfg.learning_rate);
    cfg.weight_decay = p.value("weight_decay", cfg.weight_decay);
    cfg.noise_variance = p.value("noise_variance", cfg.noise_variance);
    cfg.seed = seed;
    log["loss_history"] = mlp_train(m, set, cfg);
    save_model(m, run / kModelDir);
  } else if (learner == "random-features") {
    RandomFeatureModel m(p.at("num_features").get<Index>(), set.inputs.rows(), seed, task);
    if (p.value("solver", "closed-form") == "sgd") {
      RidgeSgdConfig cfg;
      cfg.epochs = p.value("epochs", cfg.epochs);
      cfg.batch_size = p.value("batch_size", cfg.batch_size);
      cfg.learning_rate = p.value("learning_rate", cfg.learning_rate);
      cfg.weight_decay = p.value("weight_decay", cfg.weight_decay);
      cfg.seed = seed;
      log["loss_history"] = m.fit_sgd(set, cfg);
    } else {
      const auto& lam = p.at("lambda");
      m.fit(set, lam.is_null() ? std::nullopt : std::optional<double>(lam.get<double>()));
      log["lambda"] = m.lambda();
    }
    save_model(m, run / kModelDir);
  } else {
    throw ValidationError("learner '" + learner + "' has no training phase");
  }
  log["train_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  runmgr::write_text(run / kTrainLog, log.dump(2) + "\n");
}

inline void run_eval(const RunDescription& d, const fs::path& run, const fs::path& exp) {
  const auto& p = d.payload;
  const TaskKind task = parse_task(p.at("task").get<std::string>());
  const auto learner = p.at("learner").get<std::string>();
  const auto eval_set = load_data_run(exp, p.at("eval_dataset").get<std::string>());

  std::unique_ptr<Model> model;
  if (learner == "knn") {
    model = std::make_unique<KnnModel>(training_set_for(load_data_run(exp, p.at("train_dataset").get<std::string>()), task));
  } else {
    model = load_model(runmgr::run_dir(exp, Phase::Train, p.at("model_run").get<std::string>()) / kModelDir);
  }
  if (model->task() != task) throw ValidationError("model task does not match the evaluation task");

  const auto refs = io::load_trajectories(eval_set);
  const auto masks = dataset_masks(eval_set);
  const std::optional<IntegratorKind> integ =
      task == TaskKind::DerivativePrediction ? std::optional(parse_integrator(p.at("integrator").get<std::string>()))
                                             : std::nullopt;
  std::vector<RolloutResult> results;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Vector mask = masks.empty() ? Vector(0) : masks[i];
    results.push_back(integ ? rollout_derivative(*model, *integ, refs[i], mask) : rollout_step(*model, refs[i], mask));
  }

  ordered_json context = p;
  context["system"] = eval_set.system;
  std::map<std::string, TimingReport> timing;
  if (integ && p.contains("timing") && !p.at("timing").is_null()) {
    const auto& t = p.at("timing");
    const int max_power = t.value("max_power", 8);
    std::vector<std::string> baselines{std::string(to_string(*integ))};
    if (t.contains("integrators")) baselines = t.at("integrators").get<std::vector<std::string>>();
    const auto& defs = eval_set.system_args.at("trajectory_defs");
    const double sub = defs.empty() ? 1.0 : defs[0].value("subsample", 1.0);
    const double dt_base = refs.front().grid.step() / sub;
    for (const auto& name : baselines) {
      const IntegratorKind k = parse_integrator(name);
      timing[std::string(to_string(k))] = with_true_system(
          eval_set, [&](const auto& sys) { return timing_protocol(sys, k, results, dt_base, max_power); });
    }
  }
  write_eval_results(run, results, context, timing);
}

/// Executor for runmgr::launch.
inline void execute_run(const RunDescription& d, const fs::path& run, const fs::path& exp) {
  validate_payload(d);
  switch (d.phase) {
    case Phase::DataGen: run_data_gen(d, run, exp); break;
    case Phase::Train: run_train(d, run, exp); break;
    case Phase::Eval: run_eval(d, run, exp); break;
  }
}

struct TimingRow {
  std::string run;
  std::string learner;
  std::string integrator;  // used by the learned rollout
  std::string baseline;
  double time_ratio;
  std::string scaling;
  double median_mse;
};

/// Timing entries of every complete evaluation run.
inline std::vector<TimingRow> collect_timing(const fs::path& exp) {
  std::vector<TimingRow> rows;
  for (const auto& st : runmgr::scan_phase(exp, Phase::Eval)) {
    if (st.state != runmgr::RunState::Complete) continue;
    const auto doc = ordered_json::parse(runmgr::read_text(runmgr::run_dir(exp, Phase::Eval, st.name) / kResultsFile));
    if (!doc.contains("timing")) continue;
    for (const auto& [baseline, t] : doc.at("timing").items()) {
      rows.push_back(TimingRow{st.name, doc["context"].value("learner", ""), doc["context"].value("integrator", ""),
                               baseline, t.at("time_ratio").get<double>(), t.at("scaling").get<std::string>(),
                               doc["summary"]["mse"]["median"].get<double>()});
    }
  }
  return rows;
}

}  // namespace physbench::experiment
