#pragma once

// Run bookkeeping. Every stage reads and writes through an ArtifactStore
// rooted at the run's output directory and appends one JSON record to
// <out>/manifest.jsonl.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mat/checkpoint.hpp"
#include "mat/data.hpp"
#include "mat/error.hpp"
#include "mat/hash.hpp"
#include "mat/trigger.hpp"
#include "mat/verification.hpp"

namespace mat {

using json = nlohmann::json;

inline constexpr std::string_view kToolVersion = "0.4.0";

// ---- artifact store ----------------------------------------------------------

struct ArtifactRef {
  std::string path;  // relative to the output directory
  std::string sha256;
  bool operator==(const ArtifactRef&) const = default;
};

// All stage I/O goes through here. Paths are relative to the root and may not
// escape it; every access is logged so tests can audit hermeticity.
class ArtifactStore {
 public:
  explicit ArtifactStore(const std::filesystem::path& root) {
    std::filesystem::create_directories(root);
    root_ = std::filesystem::weakly_canonical(std::filesystem::absolute(root));
  }

  const std::filesystem::path& root() const { return root_; }

  std::filesystem::path resolve(const std::string& rel) const {
    if (rel.empty()) throw PersistenceError("empty artifact path");
    const std::filesystem::path r(rel);
    if (r.is_absolute()) throw PersistenceError("artifact path must be relative: " + rel);
    const auto p = std::filesystem::weakly_canonical(root_ / r);
    auto [a, b] = std::mismatch(root_.begin(), root_.end(), p.begin(), p.end());
    if (a != root_.end()) throw PersistenceError("artifact path escapes the output directory: " + rel);
    return p;
  }

  bool exists(const std::string& rel) const { return std::filesystem::exists(resolve(rel)); }

  std::string read(const std::string& rel) {
    const auto p = resolve(rel);
    accessed_.push_back(p);
    return read_file_bytes(p);
  }

  ArtifactRef write(const std::string& rel, const std::string& bytes) {
    const auto p = resolve(rel);
    accessed_.push_back(p);
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(bytes.data(), static_cast<std::streamsize>(bytes.size())))
      throw PersistenceError("cannot write " + p.string());
    return {rel, sha256_hex(bytes)};
  }

  void append(const std::string& rel, const std::string& line) {
    const auto p = resolve(rel);
    accessed_.push_back(p);
    std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::app);
    if (!out || !(out << line << '\n')) throw PersistenceError("cannot append to " + p.string());
  }

  ArtifactRef ref(const std::string& rel) { return {rel, sha256_hex(read(rel))}; }

  const std::vector<std::filesystem::path>& accessed() const { return accessed_; }
  void note(const std::vector<std::filesystem::path>& paths) { accessed_.insert(accessed_.end(), paths.begin(), paths.end()); }

  ArtifactRef put_model(const std::string& rel, const ModelCheckpoint& m) { return write(rel, serialize_checkpoint(m)); }
  ModelCheckpoint get_model(const std::string& rel) { return deserialize_checkpoint(read(rel)); }
  ArtifactRef put_dataset(const std::string& rel, const Dataset& d) { return write(rel, format_dataset_csv(d)); }
  Dataset get_dataset(const std::string& rel) { return parse_dataset_csv(read(rel), rel); }
  ArtifactRef put_trigger(const std::string& rel, const TriggerSet& t) { return write(rel, format_trigger_manifest(t)); }
  TriggerSet get_trigger(const std::string& rel) { return parse_trigger_manifest(read(rel)); }
  ArtifactRef put_report(const std::string& rel, const VerificationReport& r) { return write(rel, format_report(r)); }
  VerificationReport get_report(const std::string& rel) { return parse_report(read(rel)); }
  ArtifactRef put_json(const std::string& rel, const json& j) { return write(rel, j.dump(2) + "\n"); }
  json get_json(const std::string& rel) {
    try {
      return json::parse(read(rel));
    } catch (const json::exception& e) {
      throw PersistenceError(rel + ": " + e.what());
    }
  }

 private:
  std::filesystem::path root_;
  std::vector<std::filesystem::path> accessed_;
};

// ---- manifest ----------------------------------------------------------------

inline constexpr const char* kManifestFile = "manifest.jsonl";

struct StageRecord {
  std::string stage;
  std::string status = "ok";  // ok | failed
  std::string config_hash;
  std::string tool_version{kToolVersion};
  std::map<std::string, ArtifactRef> inputs;
  std::map<std::string, ArtifactRef> outputs;
  double seconds = 0.0;
  std::vector<std::string> planned;  // run header records only
  std::string error;

  bool ok() const { return status == "ok"; }
};

inline void to_json(json& j, const ArtifactRef& a) { j = json{{"path", a.path}, {"sha256", a.sha256}}; }
inline void from_json(const json& j, ArtifactRef& a) {
  j.at("path").get_to(a.path);
  j.at("sha256").get_to(a.sha256);
}

inline void to_json(json& j, const StageRecord& r) {
  j = json{{"stage", r.stage},     {"status", r.status},   {"config_hash", r.config_hash},
           {"tool_version", r.tool_version}, {"inputs", r.inputs}, {"outputs", r.outputs},
           {"seconds", r.seconds}};
  if (!r.planned.empty()) j["planned"] = r.planned;
  if (!r.error.empty()) j["error"] = r.error;
}

inline void from_json(const json& j, StageRecord& r) {
  j.at("stage").get_to(r.stage);
  j.at("status").get_to(r.status);
  j.at("config_hash").get_to(r.config_hash);
  j.at("tool_version").get_to(r.tool_version);
  j.at("inputs").get_to(r.inputs);
  j.at("outputs").get_to(r.outputs);
  j.at("seconds").get_to(r.seconds);
  r.planned = j.value("planned", std::vector<std::string>{});
  r.error = j.value("error", std::string{});
}

// The in-memory view of manifest.jsonl: every record in append order.
struct RunManifest {
  std::vector<StageRecord> records;

  // Most recent "run" header: config hash, tool version and planned stages.
  const StageRecord* header() const {
    for (auto it = records.rbegin(); it != records.rend(); ++it)
      if (it->stage == "run") return &*it;
    return nullptr;
  }

  std::string config_hash() const { return header() ? header()->config_hash : ""; }

  const StageRecord* latest(const std::string& stage) const {
    for (auto it = records.rbegin(); it != records.rend(); ++it)
      if (it->stage == stage) return &*it;
    return nullptr;
  }

  const StageRecord* latest_ok(const std::string& stage, const std::string& config_hash) const {
    const auto* r = latest(stage);
    return r && r->ok() && r->config_hash == config_hash ? r : nullptr;
  }

  // Planned stages of the current header lacking a successful record.
  std::vector<std::string> missing() const {
    std::vector<std::string> out;
    const auto* h = header();
    if (!h) return {"run"};
    for (const auto& s : h->planned)
      if (!latest_ok(s, h->config_hash)) out.push_back(s);
    return out;
  }

  const ArtifactRef& output(const std::string& stage, const std::string& name) const {
    const auto* r = latest_ok(stage, config_hash());
    if (!r) throw ReportError("stage " + stage + " has no successful record");
    auto it = r->outputs.find(name);
    if (it == r->outputs.end()) throw ReportError("stage " + stage + " recorded no output '" + name + "'");
    return it->second;
  }
};

inline RunManifest parse_manifest(const std::string& text) {
  RunManifest m;
  std::istringstream in(text);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    try {
      m.records.push_back(json::parse(line).get<StageRecord>());
    } catch (const json::exception& e) {
      throw PersistenceError(std::string(kManifestFile) + " line " + std::to_string(no) + ": " + e.what());
    }
  }
  return m;
}

inline RunManifest load_manifest(ArtifactStore& store) {
  return store.exists(kManifestFile) ? parse_manifest(store.read(kManifestFile)) : RunManifest{};
}

inline RunManifest load_manifest(const std::filesystem::path& root) {
  ArtifactStore store(root);
  return load_manifest(store);
}

// Problems with the current run's records: missing or altered artifacts and
// unfinished planned stages. Empty means the run validates.
inline std::vector<std::string> validate_manifest(const std::filesystem::path& root) {
  ArtifactStore store(root);
  const auto m = load_manifest(store);
  std::vector<std::string> problems;
  if (!m.header()) return {"manifest has no run header"};
  for (const auto& s : m.missing()) problems.push_back("stage " + s + " has not completed");
  for (const auto& s : m.header()->planned) {
    const auto* r = m.latest_ok(s, m.config_hash());
    if (!r) continue;
    for (const auto& [name, a] : r->outputs) {
      if (!store.exists(a.path)) {
        problems.push_back(s + ": " + a.path + " is missing");
      } else if (store.ref(a.path).sha256 != a.sha256) {
        problems.push_back(s + ": " + a.path + " does not match its recorded hash");
      }
    }
  }
  return problems;
}

}  // namespace mat
