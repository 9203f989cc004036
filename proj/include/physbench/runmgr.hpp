#pragma once

// Experiment directories: JSON run descriptions for the data_gen, train and
// eval phases, state scanning from on-disk markers, and local launching.
//
//   <dir>/descr/<phase>/<name>.json        run description
//   <dir>/run/<phase>/<name>/launch.json   description hash, start time, pid
//   <dir>/run/<phase>/<name>/alive         pid of the process running it
//   <dir>/run/<phase>/<name>/done.json     exit status, wall time, outputs digest

#include <openssl/evp.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "physbench/errors.hpp"

namespace physbench::runmgr {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

enum class Phase { DataGen, Train, Eval };

inline const std::vector<Phase>& all_phases() {
  static const std::vector<Phase> p{Phase::DataGen, Phase::Train, Phase::Eval};
  return p;
}

inline std::string to_string(Phase p) {
  switch (p) {
    case Phase::DataGen: return "data_gen";
    case Phase::Train: return "train";
    case Phase::Eval: return "eval";
  }
  return "?";
}

inline Phase parse_phase(std::string_view s) {
  if (s == "data_gen") return Phase::DataGen;
  if (s == "train") return Phase::Train;
  if (s == "eval") return Phase::Eval;
  throw ValidationError("unknown phase '" + std::string(s) + "' (expected data_gen, train or eval)");
}

// ---- hashing -----------------------------------------------------------------

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw Error("sha256: init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_, data, n) != 1) throw Error("sha256: update failed");
  }
  void update(std::string_view s) { update(s.data(), s.size()); }

  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_, md, &len) != 1) throw Error("sha256: final failed");
    static const char* digits = "0123456789abcdef";
    std::string out;
    for (unsigned i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline std::string sha256_hex(std::string_view s) {
  Sha256 h;
  h.update(s);
  return h.hex();
}

/// Sorted keys, no whitespace.
inline std::string canonical_json(const ordered_json& j) { return nlohmann::json::parse(j.dump()).dump(); }

inline std::string description_hash(const ordered_json& j) { return sha256_hex(canonical_json(j)); }

// ---- descriptions --------------------------------------------------------------

struct RunRef {
  Phase phase;
  std::string name;
  bool operator<(const RunRef& o) const { return std::tie(phase, name) < std::tie(o.phase, o.name); }
  bool operator==(const RunRef&) const = default;
};

struct RunDescription {
  Phase phase = Phase::DataGen;
  std::string experiment;
  std::string name;
  ordered_json payload = ordered_json::object();
  std::vector<RunRef> depends_on;

  ordered_json to_json() const {
    ordered_json j;
    j["phase"] = to_string(phase);
    j["experiment"] = experiment;
    j["run_name"] = name;
    auto& deps = j["depends_on"] = ordered_json::array();
    for (const auto& d : depends_on) deps.push_back({{"phase", to_string(d.phase)}, {"run_name", d.name}});
    j["payload"] = payload;
    return j;
  }

  static RunDescription from_json(const ordered_json& j) {
    RunDescription d;
    try {
      d.phase = parse_phase(j.at("phase").get<std::string>());
      d.experiment = j.at("experiment").get<std::string>();
      d.name = j.at("run_name").get<std::string>();
      d.payload = j.at("payload");
      for (const auto& dep : j.at("depends_on")) {
        d.depends_on.push_back({parse_phase(dep.at("phase").get<std::string>()), dep.at("run_name").get<std::string>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("run description: ") + e.what());
    }
    if (!d.payload.is_object()) throw ValidationError("run description: payload must be an object");
    if (d.name.empty() || d.name.find('/') != std::string::npos || d.name.starts_with(".")) {
      throw ValidationError("run description: invalid run name '" + d.name + "'");
    }
    return d;
  }

  std::string text() const { return to_json().dump(2) + "\n"; }
  std::string hash() const { return description_hash(to_json()); }
};

inline fs::path descr_dir(const fs::path& dir, Phase p) { return dir / "descr" / to_string(p); }
inline fs::path run_dir(const fs::path& dir, Phase p, const std::string& name) {
  return dir / "run" / to_string(p) / name;
}
inline fs::path run_dir(const fs::path& dir, const RunRef& r) { return run_dir(dir, r.phase, r.name); }

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, std::string_view text) {
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  fs::rename(tmp, p);
}

/// Writes one file per description. Names must be unique within a phase.
inline void write_descriptions(const fs::path& dir, const std::vector<RunDescription>& descs) {
  std::set<RunRef> seen;
  for (const auto& d : descs) {
    if (!seen.insert({d.phase, d.name}).second) {
      throw ValidationError("duplicate run name '" + d.name + "' in phase " + to_string(d.phase));
    }
  }
  for (Phase p : all_phases()) fs::create_directories(descr_dir(dir, p));
  for (const auto& d : descs) write_text(descr_dir(dir, d.phase) / (d.name + ".json"), d.text());
}

struct LoadedDescription {
  fs::path file;
  std::string name;  // file stem
  std::optional<RunDescription> desc;
  std::string hash;   // of the file's canonical form
  std::string error;  // set when malformed
};

/// Every description file of a phase, sorted by name. Unreadable or
/// invalid files are returned with `error` set.
inline std::vector<LoadedDescription> load_descriptions(const fs::path& dir, Phase phase) {
  std::vector<LoadedDescription> out;
  const fs::path d = descr_dir(dir, phase);
  if (!fs::exists(d)) return out;
  for (const auto& e : fs::directory_iterator(d)) {
    if (!e.is_regular_file() || e.path().extension() != ".json") continue;
    LoadedDescription ld;
    ld.file = e.path();
    ld.name = e.path().stem().string();
    try {
      const auto j = ordered_json::parse(read_text(e.path()));
      ld.hash = description_hash(j);
      auto desc = RunDescription::from_json(j);
      if (desc.phase != phase) throw ValidationError("phase field says " + to_string(desc.phase));
      if (desc.name != ld.name) throw ValidationError("run_name does not match the file name");
      ld.desc = std::move(desc);
    } catch (const std::exception& ex) {
      ld.error = ex.what();
    }
    out.push_back(std::move(ld));
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  return out;
}

// ---- markers and scanning --------------------------------------------------------

inline constexpr std::string_view kLaunchMarker = "launch.json";
inline constexpr std::string_view kDoneMarker = "done.json";
inline constexpr std::string_view kAliveFile = "alive";

inline bool is_marker(const fs::path& rel) {
  const auto s = rel.string();
  return s == kLaunchMarker || s == kDoneMarker || s == kAliveFile;
}

/// Digest over every non-marker file in a run directory: relative path,
/// size and content, in path order.
inline std::string outputs_digest(const fs::path& run) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), run);
    if (!is_marker(rel)) files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  for (const auto& rel : files) {
    const std::string name = rel.generic_string();
    const std::string size = std::to_string(fs::file_size(run / rel));
    h.update(name);
    h.update("\0", 1);
    h.update(size);
    h.update("\0", 1);
    std::ifstream in(run / rel, std::ios::binary);
    while (in) {
      in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
  }
  return h.hex();
}

inline std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline bool process_alive(long pid) { return pid > 0 && (::kill(static_cast<pid_t>(pid), 0) == 0 || errno == EPERM); }

enum class RunState { Outstanding, Running, Complete, Incomplete, Mismatched, Malformed };

inline std::string to_string(RunState s) {
  switch (s) {
    case RunState::Outstanding: return "outstanding";
    case RunState::Running: return "running";
    case RunState::Complete: return "complete";
    case RunState::Incomplete: return "incomplete";
    case RunState::Mismatched: return "mismatched";
    case RunState::Malformed: return "malformed";
  }
  return "?";
}

struct RunStatus {
  Phase phase;
  std::string name;
  RunState state;
  std::string detail;
};

/// State of one run from its description hash and markers.
inline RunStatus classify(const fs::path& dir, Phase phase, const LoadedDescription& ld) {
  RunStatus st{phase, ld.name, RunState::Outstanding, {}};
  if (!ld.error.empty()) {
    st.state = RunState::Malformed;
    st.detail = ld.error;
    return st;
  }
  const fs::path run = run_dir(dir, phase, ld.name);
  if (!fs::exists(run / kLaunchMarker)) return st;
  try {
    const auto launch = ordered_json::parse(read_text(run / kLaunchMarker));
    if (launch.at("description_hash").get<std::string>() != ld.hash) {
      st.state = RunState::Mismatched;
      st.detail = "description changed after launch";
      return st;
    }
    if (!fs::exists(run / kDoneMarker)) {
      long pid = -1;
      if (fs::exists(run / kAliveFile)) {
        try {
          pid = std::stol(read_text(run / kAliveFile));
        } catch (const std::exception&) {
        }
      }
      st.state = process_alive(pid) ? RunState::Running : RunState::Incomplete;
      st.detail = st.state == RunState::Running ? "pid " + std::to_string(pid) : "launched but never finished";
      return st;
    }
    const auto done = ordered_json::parse(read_text(run / kDoneMarker));
    if (done.at("exit_status").get<int>() != 0) {
      st.state = RunState::Incomplete;
      st.detail = "failed: " + done.value("error", std::string("unknown error"));
      return st;
    }
    if (done.at("outputs_digest").get<std::string>() != outputs_digest(run)) {
      st.state = RunState::Incomplete;
      st.detail = "outputs changed after completion";
      return st;
    }
    st.state = RunState::Complete;
  } catch (const std::exception& e) {
    st.state = RunState::Incomplete;
    st.detail = std::string("unreadable marker: ") + e.what();
  }
  return st;
}

inline std::vector<RunStatus> scan_phase(const fs::path& dir, Phase phase) {
  std::vector<RunStatus> out;
  for (const auto& ld : load_descriptions(dir, phase)) out.push_back(classify(dir, phase, ld));
  return out;
}

inline std::vector<RunStatus> scan(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("experiment directory " + dir.string() + " does not exist");
  std::vector<RunStatus> out;
  for (Phase p : all_phases()) {
    auto s = scan_phase(dir, p);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

/// Removes the run directories of every run in `state` (incomplete or
/// mismatched only). Returns the removed runs.
inline std::vector<RunStatus> delete_runs(const fs::path& dir, RunState state) {
  if (state != RunState::Incomplete && state != RunState::Mismatched) {
    throw ValidationError("only incomplete or mismatched runs can be deleted");
  }
  std::vector<RunStatus> removed;
  for (const auto& st : scan(dir)) {
    if (st.state != state) continue;
    fs::remove_all(run_dir(dir, st.phase, st.name));
    removed.push_back(st);
  }
  return removed;
}

// ---- launching -----------------------------------------------------------------

/// Executes one run, writing outputs into `run`. Throws on failure.
using Executor = std::function<void(const RunDescription& desc, const fs::path& run, const fs::path& experiment)>;

struct LaunchSummary {
  std::size_t outstanding = 0;
  std::vector<std::string> succeeded;
  std::vector<std::pair<std::string, std::string>> failed;  // name, error
};

/// Raised when a run depends on runs that are not complete.
class BlockedError : public ValidationError {
 public:
  BlockedError(const std::string& what, std::vector<std::string> blockers)
      : ValidationError(what), blockers_(std::move(blockers)) {}
  const std::vector<std::string>& blockers() const { return blockers_; }

 private:
  std::vector<std::string> blockers_;
};

inline void run_one(const fs::path& dir, const LoadedDescription& ld, const Executor& exec, LaunchSummary& summary,
                    std::mutex& mu) {
  const RunDescription& desc = *ld.desc;
  const fs::path run = run_dir(dir, desc.phase, desc.name);
  fs::remove_all(run);
  fs::create_directories(run);
  write_text(run / kLaunchMarker, ordered_json{{"description_hash", ld.hash},
                                               {"start_time", utc_now()},
                                               {"pid", static_cast<long>(::getpid())}}
                                      .dump(2) +
                                      "\n");
  write_text(run / kAliveFile, std::to_string(::getpid()) + "\n");
  const auto t0 = std::chrono::steady_clock::now();
  int status = 0;
  std::string error;
  try {
    exec(desc, run, dir);
  } catch (const std::exception& e) {
    status = 2;
    error = e.what();
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ordered_json done{{"exit_status", status}, {"wall_time_seconds", wall}, {"end_time", utc_now()}};
  if (status != 0) done["error"] = error;
  done["outputs_digest"] = outputs_digest(run);
  write_text(run / kDoneMarker, done.dump(2) + "\n");
  fs::remove(run / kAliveFile);
  std::lock_guard lock(mu);
  if (status == 0) {
    summary.succeeded.push_back(desc.name);
  } else {
    summary.failed.emplace_back(desc.name, error);
  }
}

/// Runs every outstanding run of `phase` in name order, `jobs` at a time.
/// Refuses (BlockedError) if any of them depends on an incomplete run, and
/// (ValidationError) if a description of the phase is malformed.
inline LaunchSummary launch(const fs::path& dir, Phase phase, const Executor& exec, unsigned jobs = 1) {
  if (!fs::is_directory(dir)) throw ValidationError("experiment directory " + dir.string() + " does not exist");
  const auto loaded = load_descriptions(dir, phase);
  std::vector<const LoadedDescription*> todo;
  for (const auto& ld : loaded) {
    if (!ld.error.empty()) throw ValidationError("malformed description " + ld.file.string() + ": " + ld.error);
    if (classify(dir, phase, ld).state == RunState::Outstanding) todo.push_back(&ld);
  }

  // Dependencies must be complete before anything starts.
  std::map<Phase, std::map<std::string, RunState>> states;
  for (const auto* ld : todo) {
    for (const auto& dep : ld->desc->depends_on) {
      if (!states.count(dep.phase)) {
        for (const auto& st : scan_phase(dir, dep.phase)) states[dep.phase][st.name] = st.state;
      }
    }
  }
  std::set<std::string> blockers;
  for (const auto* ld : todo) {
    for (const auto& dep : ld->desc->depends_on) {
      const auto& m = states[dep.phase];
      auto it = m.find(dep.name);
      if (it == m.end() || it->second != RunState::Complete) {
        blockers.insert(to_string(dep.phase) + "/" + dep.name + " (" +
                        (it == m.end() ? std::string("missing") : to_string(it->second)) + ")");
      }
    }
  }
  if (!blockers.empty()) {
    std::string msg = "cannot launch " + to_string(phase) + "; waiting on:";
    for (const auto& b : blockers) msg += "\n  " + b;
    throw BlockedError(msg, {blockers.begin(), blockers.end()});
  }

  LaunchSummary summary;
  summary.outstanding = todo.size();
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < todo.size();) run_one(dir, *todo[i], exec, summary, mu);
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(todo.size())));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::sort(summary.succeeded.begin(), summary.succeeded.end());
  std::sort(summary.failed.begin(), summary.failed.end());
  return summary;
}

}  // namespace physbench::runmgr
