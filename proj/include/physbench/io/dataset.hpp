#pragma once

// Dataset bundles: a metadata document (system_meta.json) plus an npz
// archive of named records (trajectories.npz). Channels are always resolved
// through each trajectory's field_keys map.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "physbench/domain.hpp"
#include "physbench/io/npy.hpp"
#include "physbench/io/zip.hpp"

namespace physbench::io {

using ordered_json = nlohmann::ordered_json;

inline constexpr std::string_view kMetaFile = "system_meta.json";
inline constexpr std::string_view kArchiveFile = "trajectories.npz";

inline const std::vector<std::string>& known_systems() {
  static const std::vector<std::string> names{"spring", "wave", "spring-mesh", "navier-stokes"};
  return names;
}

// --- channel tables ---------------------------------------------------------

/// Symbolic dimension in a channel shape.
enum class Dim { Nt, Np, Ne, One, Two };

struct ChannelSpec {
  std::string name;
  DType dtype;
  std::vector<Dim> shape;
  std::string alias_of;  // empty unless this channel must share a record
};

inline const std::vector<ChannelSpec>& channel_table(std::string_view system) {
  using D = Dim;
  static const std::vector<ChannelSpec> spring{
      {"q", DType::Float64, {D::Nt, D::One}, ""},
      {"p", DType::Float64, {D::Nt, D::One}, ""},
      {"dqdt", DType::Float64, {D::Nt, D::One}, ""},
      {"dpdt", DType::Float64, {D::Nt, D::One}, ""},
      {"t", DType::Float64, {D::Nt}, ""}};
  static const std::vector<ChannelSpec> wave{
      {"q", DType::Float64, {D::Nt, D::Np}, ""},
      {"p", DType::Float64, {D::Nt, D::Np}, ""},
      {"dqdt", DType::Float64, {D::Nt, D::Np}, ""},
      {"dpdt", DType::Float64, {D::Nt, D::Np}, ""},
      {"t", DType::Float64, {D::Nt}, ""}};
  static const std::vector<ChannelSpec> mesh{
      {"q", DType::Float64, {D::Nt, D::Np, D::Two}, ""},
      {"p", DType::Float64, {D::Nt, D::Np, D::Two}, ""},
      {"dqdt", DType::Float64, {D::Nt, D::Np, D::Two}, ""},
      {"dpdt", DType::Float64, {D::Nt, D::Np, D::Two}, ""},
      {"t", DType::Float64, {D::Nt}, ""},
      {"edge_indices", DType::Int64, {D::Two, D::Ne}, ""},
      {"masses", DType::Float64, {D::Np}, ""},
      {"fixed_mask", DType::Bool, {D::Np}, ""},
      {"fixed_mask_q", DType::Bool, {D::Np, D::Two}, ""},
      {"fixed_mask_p", DType::Bool, {D::Np, D::Two}, "fixed_mask_q"},
      {"extra_fixed_mask", DType::Bool, {D::Np}, "fixed_mask"}};
  static const std::vector<ChannelSpec> ns{
      {"solutions", DType::Float64, {D::Nt, D::Np, D::Two}, ""},
      {"pressures", DType::Float64, {D::Nt, D::Np}, ""},
      {"grads", DType::Float64, {D::Nt, D::Np, D::Two}, ""},
      {"pressures_grads", DType::Float64, {D::Nt, D::Np}, ""},
      {"t", DType::Float64, {D::Nt}, ""},
      {"q", DType::Float64, {D::Nt, D::Np}, "pressures"},
      {"p", DType::Float64, {D::Nt, D::Np, D::Two}, "solutions"},
      {"dqdt", DType::Float64, {D::Nt, D::Np}, "pressures_grads"},
      {"dpdt", DType::Float64, {D::Nt, D::Np, D::Two}, "grads"},
      {"edge_indices", DType::Int64, {D::Two, D::Ne}, ""},
      {"vertices", DType::Float64, {D::Np, D::Two}, ""},
      {"fixed_mask", DType::Bool, {D::Np}, ""},
      {"fixed_mask_solutions", DType::Bool, {D::Np, D::Two}, ""},
      {"fixed_mask_pressures", DType::Bool, {D::Np}, ""},
      {"fixed_mask_q", DType::Bool, {D::Np}, "fixed_mask_pressures"},
      {"fixed_mask_p", DType::Bool, {D::Np, D::Two}, "fixed_mask_solutions"},
      {"extra_fixed_mask", DType::Bool, {D::Np, D::Two}, ""}};
  if (system == "spring") return spring;
  if (system == "wave") return wave;
  if (system == "spring-mesh") return mesh;
  if (system == "navier-stokes") return ns;
  throw ValidationError("unknown system '" + std::string(system) + "'");
}

// --- bundle -------------------------------------------------------------------

using FieldKeys = std::vector<std::pair<std::string, std::string>>;

struct TrajectoryRecord {
  std::string name;
  std::size_t num_time_steps = 0;
  double time_step_size = 0.0;
  ordered_json extras = ordered_json::object();  // system-specific entries
  FieldKeys field_keys;
  double traj_gen_time = 0.0;

  const std::string* field(std::string_view channel) const {
    for (const auto& [c, r] : field_keys) {
      if (c == channel) return &r;
    }
    return nullptr;
  }

  bool operator==(const TrajectoryRecord&) const = default;
};

struct DatasetBundle {
  std::string system;
  ordered_json system_args = ordered_json::object();
  ordered_json metadata = ordered_json::object();
  std::vector<TrajectoryRecord> trajectories;
  std::map<std::string, std::shared_ptr<const NdArray>> records;

  /// The record behind `channel` of trajectory `traj`.
  const NdArray& channel(std::size_t traj, std::string_view channel) const {
    const auto& tr = trajectories.at(traj);
    const std::string* key = tr.field(channel);
    if (!key) {
      throw FormatError(FormatErrorKind::DanglingReference,
                        "trajectory '" + tr.name + "' has no channel '" + std::string(channel) + "'");
    }
    auto it = records.find(*key);
    if (it == records.end() || !it->second) {
      throw FormatError(FormatErrorKind::DanglingReference,
                        "trajectory '" + tr.name + "' channel '" + std::string(channel) +
                            "' references missing record '" + *key + "'");
    }
    return *it->second;
  }

  std::shared_ptr<const NdArray> channel_ptr(std::size_t traj, std::string_view ch) const {
    channel(traj, ch);
    return records.at(*trajectories.at(traj).field(ch));
  }

  void add_record(const std::string& name, NdArray array) {
    records[name] = std::make_shared<const NdArray>(std::move(array));
  }

  bool operator==(const DatasetBundle& o) const {
    if (system != o.system || system_args != o.system_args || metadata != o.metadata ||
        trajectories != o.trajectories || records.size() != o.records.size()) {
      return false;
    }
    for (const auto& [name, arr] : records) {
      auto it = o.records.find(name);
      if (it == o.records.end() || !(*arr == *it->second)) return false;
    }
    return true;
  }
};

// --- validation ---------------------------------------------------------------

enum class ViolationKind { Structure, DanglingReference, ShapeMismatch, DtypeMismatch, Alias, Ordering, NonFinite };

inline std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::Structure: return "structure";
    case ViolationKind::DanglingReference: return "dangling-reference";
    case ViolationKind::ShapeMismatch: return "shape";
    case ViolationKind::DtypeMismatch: return "dtype";
    case ViolationKind::Alias: return "alias";
    case ViolationKind::Ordering: return "ordering";
    case ViolationKind::NonFinite: return "non-finite";
  }
  return "?";
}

struct Violation {
  ViolationKind kind;
  std::string message;
};

namespace detail {

inline std::string dims_string(const std::vector<Dim>& dims) {
  std::string out = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) out += ", ";
    switch (dims[i]) {
      case Dim::Nt: out += "N_t"; break;
      case Dim::Np: out += "N_p"; break;
      case Dim::Ne: out += "N_e"; break;
      case Dim::One: out += "1"; break;
      case Dim::Two: out += "2"; break;
    }
  }
  return out + ")";
}

inline std::optional<std::size_t> metadata_np(const DatasetBundle& b) {
  const char* key = b.system == "wave" ? "n_grid" : b.system == "spring-mesh" ? "n_particles" : nullptr;
  if (key && b.metadata.is_object() && b.metadata.contains(key) && b.metadata[key].is_number_unsigned()) {
    return b.metadata[key].get<std::size_t>();
  }
  return std::nullopt;
}

}  // namespace detail

/// Every check against the channel tables and bundle invariants. Empty
/// means the bundle is well formed.
inline std::vector<Violation> validate_bundle(const DatasetBundle& b) {
  std::vector<Violation> out;
  auto add = [&](ViolationKind k, std::string msg) { out.push_back({k, std::move(msg)}); };

  if (std::find(known_systems().begin(), known_systems().end(), b.system) == known_systems().end()) {
    add(ViolationKind::Structure, "unknown system '" + b.system + "'");
    return out;
  }
  if (!b.system_args.is_object() || !b.system_args.contains("trajectory_defs") ||
      !b.system_args["trajectory_defs"].is_array()) {
    add(ViolationKind::Structure, "system_args.trajectory_defs must be an array");
  }
  if (!b.metadata.is_object()) add(ViolationKind::Structure, "metadata must be an object");
  const auto& table = channel_table(b.system);

  std::set<std::string> names;
  for (const auto& tr : b.trajectories) {
    const std::string where = "trajectory '" + tr.name + "'";
    if (!names.insert(tr.name).second) add(ViolationKind::Structure, "duplicate " + where);
    if (tr.num_time_steps == 0) add(ViolationKind::Structure, where + ": num_time_steps must be positive");
    if (!(tr.time_step_size > 0.0) || !std::isfinite(tr.time_step_size)) {
      add(ViolationKind::Structure, where + ": time_step_size must be positive");
    }
    if (!(tr.traj_gen_time >= 0.0)) add(ViolationKind::Structure, where + ": negative traj_gen_time");

    for (const auto& [channel, record] : tr.field_keys) {
      if (!b.records.count(record)) {
        add(ViolationKind::DanglingReference,
            where + " channel '" + channel + "' references missing record '" + record + "'");
      }
    }

    std::map<Dim, std::size_t> bound{{Dim::Nt, tr.num_time_steps}, {Dim::One, 1}, {Dim::Two, 2}};
    if (b.system == "spring") bound[Dim::Np] = 1;
    if (auto np = detail::metadata_np(b)) bound[Dim::Np] = *np;

    for (const auto& spec : table) {
      const std::string* key = tr.field(spec.name);
      if (!key) {
        add(ViolationKind::Structure, where + " lacks channel '" + spec.name + "'");
        continue;
      }
      if (!spec.alias_of.empty()) {
        const std::string* target = tr.field(spec.alias_of);
        if (!target || *target != *key) {
          add(ViolationKind::Alias, where + " channel '" + spec.name + "' must alias '" + spec.alias_of + "'");
        }
      }
      auto it = b.records.find(*key);
      if (it == b.records.end() || !it->second) continue;
      const NdArray& arr = *it->second;
      if (arr.dtype() != spec.dtype) {
        add(ViolationKind::DtypeMismatch, where + " channel '" + spec.name + "' is " +
                                              std::string(dtype_name(arr.dtype())) + ", expected " +
                                              std::string(dtype_name(spec.dtype)));
      }
      bool shape_ok = arr.shape.size() == spec.shape.size();
      for (std::size_t d = 0; shape_ok && d < spec.shape.size(); ++d) {
        auto [slot, fresh] = bound.try_emplace(spec.shape[d], arr.shape[d]);
        if (!fresh && slot->second != arr.shape[d]) shape_ok = false;
      }
      if (!shape_ok) {
        add(ViolationKind::ShapeMismatch, where + " channel '" + spec.name + "' has shape " +
                                              shape_string(arr.shape) + ", expected " +
                                              detail::dims_string(spec.shape));
        continue;
      }
      if (arr.dtype() == DType::Float64) {
        const auto& v = arr.as_f64();
        if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
          add(ViolationKind::NonFinite, where + " channel '" + spec.name + "' has non-finite values");
        }
        if (spec.name == "t") {
          for (std::size_t k = 1; k < v.size(); ++k) {
            if (!(v[k] > v[k - 1])) {
              add(ViolationKind::Ordering, where + ": t is not strictly increasing at index " + std::to_string(k));
              break;
            }
          }
        }
      }
      if (spec.name == "edge_indices" && arr.dtype() == DType::Int64 && bound.count(Dim::Np)) {
        const auto np = static_cast<std::int64_t>(bound[Dim::Np]);
        for (auto e : arr.as_i64()) {
          if (e < 0 || e >= np) {
            add(ViolationKind::Structure, where + ": edge index " + std::to_string(e) + " out of range");
            break;
          }
        }
      }
    }
  }
  return out;
}

// --- json ---------------------------------------------------------------------

inline ordered_json trajectory_to_json(const TrajectoryRecord& tr) {
  ordered_json j;
  j["name"] = tr.name;
  j["num_time_steps"] = tr.num_time_steps;
  j["time_step_size"] = tr.time_step_size;
  for (const auto& [k, v] : tr.extras.items()) j[k] = v;
  ordered_json keys = ordered_json::object();
  for (const auto& [c, r] : tr.field_keys) keys[c] = r;
  j["field_keys"] = std::move(keys);
  j["timing"] = {{"traj_gen_time", tr.traj_gen_time}};
  return j;
}

inline std::string bundle_meta_json(const DatasetBundle& b) {
  ordered_json doc;
  doc["system"] = b.system;
  doc["system_args"] = b.system_args;
  doc["metadata"] = b.metadata;
  doc["trajectories"] = ordered_json::array();
  for (const auto& tr : b.trajectories) doc["trajectories"].push_back(trajectory_to_json(tr));
  return doc.dump(2) + "\n";
}

namespace detail {

inline FormatError meta_error(const std::string& what) {
  return FormatError(FormatErrorKind::MalformedHeader, std::string(kMetaFile) + ": " + what);
}

inline TrajectoryRecord trajectory_from_json(const ordered_json& j) {
  TrajectoryRecord tr;
  if (!j.is_object()) throw meta_error("trajectory entry is not an object");
  try {
    tr.name = j.at("name").get<std::string>();
    tr.num_time_steps = j.at("num_time_steps").get<std::size_t>();
    tr.time_step_size = j.at("time_step_size").get<double>();
    for (const auto& [c, r] : j.at("field_keys").items()) tr.field_keys.emplace_back(c, r.get<std::string>());
    tr.traj_gen_time = j.at("timing").at("traj_gen_time").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw meta_error(e.what());
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "name" && k != "num_time_steps" && k != "time_step_size" && k != "field_keys" && k != "timing") {
      tr.extras[k] = v;
    }
  }
  return tr;
}

inline void replace_file(const std::filesystem::path& tmp, const std::filesystem::path& dest) {
  std::error_code ec;
  std::filesystem::rename(tmp, dest, ec);
  if (ec) throw FormatError(FormatErrorKind::Io, "cannot move " + tmp.string() + " to " + dest.string());
}

}  // namespace detail

// --- read / write -------------------------------------------------------------

inline void write_bundle(const DatasetBundle& b, const std::filesystem::path& dir) {
  const auto violations = validate_bundle(b);
  if (!violations.empty()) {
    std::string msg = "refusing to write invalid bundle: " + violations.front().message;
    if (violations.size() > 1) msg += " (and " + std::to_string(violations.size() - 1) + " more)";
    throw ValidationError(msg);
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FormatError(FormatErrorKind::Io, "cannot create " + dir.string());

  const auto meta_tmp = dir / (std::string(kMetaFile) + ".tmp");
  const auto npz_tmp = dir / (std::string(kArchiveFile) + ".tmp");
  {
    std::ofstream out(meta_tmp, std::ios::binary | std::ios::trunc);
    const std::string text = bundle_meta_json(b);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw FormatError(FormatErrorKind::Io, "write failed: " + meta_tmp.string());
  }
  std::map<std::string, const NdArray*> arrays;
  for (const auto& [name, arr] : b.records) arrays[name] = arr.get();
  write_npz(npz_tmp, arrays);
  detail::replace_file(npz_tmp, dir / kArchiveFile);
  detail::replace_file(meta_tmp, dir / kMetaFile);
}

/// Loads a bundle and checks it against the channel tables. Dangling
/// references, shape and dtype mismatches are thrown as their own
/// FormatErrorKind; other invariant checks are left to validate_bundle.
inline DatasetBundle read_bundle(const std::filesystem::path& dir) {
  for (auto name : {kMetaFile, kArchiveFile}) {
    if (!std::filesystem::exists(dir / name)) {
      throw FormatError(FormatErrorKind::MissingFile, "missing " + (dir / name).string());
    }
  }
  ordered_json doc;
  try {
    doc = ordered_json::parse(read_file(dir / kMetaFile));
  } catch (const nlohmann::json::exception& e) {
    throw detail::meta_error(e.what());
  }
  DatasetBundle b;
  if (!doc.is_object()) throw detail::meta_error("top level is not an object");
  for (auto key : {"system", "system_args", "metadata", "trajectories"}) {
    if (!doc.contains(key)) throw detail::meta_error(std::string("missing key '") + key + "'");
  }
  if (!doc["system"].is_string() || !doc["trajectories"].is_array()) {
    throw detail::meta_error("bad system or trajectories entry");
  }
  b.system = doc["system"].get<std::string>();
  b.system_args = doc["system_args"];
  b.metadata = doc["metadata"];
  for (const auto& j : doc["trajectories"]) b.trajectories.push_back(detail::trajectory_from_json(j));

  for (auto& [name, arr] : read_npz(dir / kArchiveFile)) {
    b.records.emplace(name, std::make_shared<const NdArray>(std::move(arr)));
  }
  for (const auto& v : validate_bundle(b)) {
    switch (v.kind) {
      case ViolationKind::DanglingReference:
        throw FormatError(FormatErrorKind::DanglingReference, v.message);
      case ViolationKind::ShapeMismatch:
        throw FormatError(FormatErrorKind::ShapeMismatch, v.message);
      case ViolationKind::DtypeMismatch:
        throw FormatError(FormatErrorKind::DtypeMismatch, v.message);
      default:
        break;
    }
  }
  return b;
}

// --- trajectory views ---------------------------------------------------------

namespace detail {

inline std::vector<Vector> rows(const NdArray& a, std::size_t nt) {
  if (a.dtype() != DType::Float64 || a.shape.empty() || a.shape[0] != nt) {
    throw FormatError(FormatErrorKind::ShapeMismatch, "channel is not a float64 (N_t, ...) array");
  }
  const std::size_t width = nt ? a.size() / nt : 0;
  std::vector<Vector> out(nt);
  const auto& v = a.as_f64();
  for (std::size_t k = 0; k < nt; ++k) {
    out[k] = Eigen::Map<const Vector>(v.data() + k * width, static_cast<Index>(width));
  }
  return out;
}

}  // namespace detail

/// Trajectory `i` as flattened phase states, read through q, p, dqdt, dpdt.
inline Trajectory load_trajectory(const DatasetBundle& b, std::size_t i) {
  const auto& rec = b.trajectories.at(i);
  const std::size_t nt = rec.num_time_steps;
  const auto q = detail::rows(b.channel(i, "q"), nt);
  const auto p = detail::rows(b.channel(i, "p"), nt);
  const auto dq = detail::rows(b.channel(i, "dqdt"), nt);
  const auto dp = detail::rows(b.channel(i, "dpdt"), nt);
  Trajectory tr{TimeGrid(rec.time_step_size, nt), {}, {}, rec.traj_gen_time};
  tr.states.reserve(nt);
  tr.derivatives.reserve(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    tr.states.push_back(PhaseState{q[k], p[k]});
    tr.derivatives.push_back(StateDerivative{dq[k], dp[k]});
  }
  return tr;
}

inline std::vector<Trajectory> load_trajectories(const DatasetBundle& b) {
  std::vector<Trajectory> out;
  out.reserve(b.trajectories.size());
  for (std::size_t i = 0; i < b.trajectories.size(); ++i) out.push_back(load_trajectory(b, i));
  return out;
}

/// Per-trajectory mask features fed to learners as extra input, flattened
/// from extra_fixed_mask; empty for systems without masks.
inline Vector mask_features(const DatasetBundle& b, std::size_t i) {
  const auto& tr = b.trajectories.at(i);
  if (!tr.field("extra_fixed_mask")) return Vector(0);
  const auto& m = b.channel(i, "extra_fixed_mask").as_bool();
  Vector out(static_cast<Index>(m.size()));
  for (std::size_t k = 0; k < m.size(); ++k) out[static_cast<Index>(k)] = m[k] ? 1.0 : 0.0;
  return out;
}

}  // namespace physbench::io
