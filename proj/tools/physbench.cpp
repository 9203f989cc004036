#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "physbench/experiment.hpp"
#include "physbench/runmgr.hpp"

namespace fs = std::filesystem;
namespace rm = physbench::runmgr;
namespace ex = physbench::experiment;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kExecution = 2;

int gen_descr(const std::string& spec_path, const fs::path& dir) {
  const auto spec = nlohmann::ordered_json::parse(rm::read_text(spec_path));
  const auto descs = ex::expand_spec(spec);
  rm::write_descriptions(dir, descs);
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& d : descs) ++counts[static_cast<int>(d.phase)];
  std::printf("wrote %zu data_gen, %zu train, %zu eval descriptions under %s\n", counts[0], counts[1], counts[2],
              (dir / "descr").c_str());
  return kOk;
}

int scan(const fs::path& dir, const std::string& del) {
  if (!del.empty()) {
    const auto state = del == "incomplete" ? rm::RunState::Incomplete : rm::RunState::Mismatched;
    for (const auto& st : rm::delete_runs(dir, state)) {
      std::printf("deleted %s/%s\n", rm::to_string(st.phase).c_str(), st.name.c_str());
    }
  }
  std::map<std::string, std::size_t> totals;
  bool malformed = false;
  for (const auto& st : rm::scan(dir)) {
    ++totals[rm::to_string(st.state)];
    if (st.state == rm::RunState::Malformed) malformed = true;
    if (st.state == rm::RunState::Complete) continue;
    std::printf("%-11s %-8s %s%s%s\n", rm::to_string(st.state).c_str(), rm::to_string(st.phase).c_str(),
                st.name.c_str(), st.detail.empty() ? "" : "  ", st.detail.c_str());
  }
  std::printf("summary:");
  for (const auto& [state, n] : totals) std::printf(" %s=%zu", state.c_str(), n);
  std::printf("\n");
  return malformed ? kValidation : kOk;
}

int launch(const fs::path& dir, const std::string& phase_name, unsigned jobs) {
  const rm::Phase phase = rm::parse_phase(phase_name);
  const auto summary = rm::launch(dir, phase, ex::execute_run, jobs);
  for (const auto& name : summary.succeeded) std::printf("ok     %s\n", name.c_str());
  for (const auto& [name, err] : summary.failed) std::printf("FAILED %s: %s\n", name.c_str(), err.c_str());
  std::printf("%zu outstanding, %zu succeeded, %zu failed\n", summary.outstanding, summary.succeeded.size(),
              summary.failed.size());
  return summary.failed.empty() ? kOk : kExecution;
}

int timing(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw physbench::ValidationError("experiment directory " + dir.string() + " does not exist");
  const auto rows = ex::collect_timing(dir);
  if (rows.empty()) {
    std::printf("no completed evaluation runs with timing results\n");
    return kOk;
  }
  std::printf("%-48s %-16s %-10s %-15s %12s %10s %12s\n", "run", "learner", "rollout", "baseline", "time ratio",
              "scaling", "median mse");
  for (const auto& r : rows) {
    std::printf("%-48s %-16s %-10s %-15s %12.3g %10s %12.4g\n", r.run.c_str(), r.learner.c_str(), r.integrator.c_str(),
                r.baseline.c_str(), r.time_ratio, r.scaling.c_str(), r.median_mse);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physical-simulation learning benchmark: run descriptions, scanning and launching"};
  app.require_subcommand(1);

  std::string spec, dir, phase, del;
  unsigned jobs = 1;

  auto* gen = app.add_subcommand("gen-descr", "Write run descriptions for an experiment spec");
  gen->add_option("spec", spec, "Experiment spec (JSON)")->required()->check(CLI::ExistingFile);
  gen->add_option("dir", dir, "Experiment directory")->required();

  auto* sc = app.add_subcommand("scan", "Report the state of every run");
  sc->add_option("dir", dir, "Experiment directory")->required();
  sc->add_option("--delete", del, "Delete runs in this state")->check(CLI::IsMember({"incomplete", "mismatch"}));

  auto* la = app.add_subcommand("launch", "Run the outstanding runs of one phase");
  la->add_option("dir", dir, "Experiment directory")->required();
  la->add_option("phase", phase, "data_gen, train or eval")->required();
  la->add_option("--jobs,-j", jobs, "Runs executed at once")->check(CLI::PositiveNumber);

  auto* ti = app.add_subcommand("timing", "Tabulate time ratios and scaling factors");
  ti->add_option("dir", dir, "Experiment directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }

  try {
    if (*gen) return gen_descr(spec, dir);
    if (*sc) return scan(dir, del);
    if (*la) return launch(dir, phase, jobs);
    if (*ti) return timing(dir);
  } catch (const rm::BlockedError& e) {
    std::cerr << e.what() << "\n";
    return kValidation;
  } catch (const physbench::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExecution;
  }
  return kOk;
}
