#pragma once

// Ownership verification: compare how often a suspect and a benign model
// predict the assigned trigger labels, with a one-sided Welch t-test.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mat/attacks.hpp"
#include "mat/dataset.hpp"
#include "mat/error.hpp"
#include "mat/hash.hpp"
#include "mat/stats.hpp"
#include "mat/trigger.hpp"

namespace mat {

struct VerificationReport {
  double suspect_trigger_acc = 0.0;
  double benign_trigger_acc = 0.0;
  std::vector<int> suspect_hits;
  std::vector<int> benign_hits;
  double t_statistic = 0.0;
  double df = 0.0;
  double p_value = 1.0;
  double significance = 0.01;
  stats::Degeneracy degeneracy = stats::Degeneracy::none;
  bool owned = false;

  bool operator==(const VerificationReport&) const = default;
};

// 1 where the model's argmax on trigger sample k equals its assigned label.
inline std::vector<int> hit_indicators(const BlackBoxModel& model, const TriggerSet& trigger, const Dataset& data) {
  const auto index = data.index_by_id();
  std::vector<std::size_t> rows;
  rows.reserve(trigger.size());
  for (const auto& e : trigger.entries) {
    auto it = index.find(e.sample_id);
    if (it == index.end()) throw DataError("trigger sample " + std::to_string(e.sample_id) + " missing from data");
    rows.push_back(it->second);
  }
  const auto z = model.query_logits(data, rows);
  const std::size_t K = model.num_classes();
  std::vector<int> hits(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k)
    hits[k] = static_cast<int>(argmax(std::span<const float>(z.data() + k * K, K))) == trigger.entries[k].assigned_label;
  return hits;
}

inline std::vector<int> hit_indicators(const ModelCheckpoint& model, const TriggerSet& trigger, const Dataset& data) {
  const BlackBoxModel bb(model);
  return hit_indicators(bb, trigger, data);
}

inline double mean_of(const std::vector<int>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (int x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Assembles a report from two hit vectors.
inline VerificationReport verify_hits(const std::vector<int>& suspect_hits, const std::vector<int>& benign_hits,
                                      double significance) {
  if (suspect_hits.size() < 2 || benign_hits.size() < 2)
    throw VerificationError("verification needs a trigger set of at least 2 samples");
  if (!(significance > 0.0 && significance < 1.0)) throw ConfigError("significance must lie in (0, 1)");
  VerificationReport r;
  r.suspect_hits = suspect_hits;
  r.benign_hits = benign_hits;
  r.suspect_trigger_acc = mean_of(suspect_hits);
  r.benign_trigger_acc = mean_of(benign_hits);
  const std::vector<double> a(suspect_hits.begin(), suspect_hits.end());
  const std::vector<double> b(benign_hits.begin(), benign_hits.end());
  const auto w = stats::welch_t_test(a, b);
  r.t_statistic = w.t;
  r.df = w.df;
  r.p_value = w.p;
  r.degeneracy = w.degeneracy;
  r.significance = significance;
  r.owned = r.p_value < significance && r.suspect_trigger_acc > r.benign_trigger_acc;
  return r;
}

inline VerificationReport verify_ownership(const BlackBoxModel& suspect, const BlackBoxModel& benign,
                                           const TriggerSet& trigger, const Dataset& data, double significance = 0.01) {
  if (trigger.size() < 2) throw VerificationError("verification needs a trigger set of at least 2 samples");
  return verify_hits(hit_indicators(suspect, trigger, data), hit_indicators(benign, trigger, data), significance);
}

inline VerificationReport verify_ownership(const ModelCheckpoint& suspect, const ModelCheckpoint& benign,
                                           const TriggerSet& trigger, const Dataset& data, double significance = 0.01) {
  const BlackBoxModel s(suspect), b(benign);
  return verify_ownership(s, b, trigger, data, significance);
}

// ---- serialisation: "key=value" lines in a fixed order ----------------------

inline std::string format_report(const VerificationReport& r) {
  auto bits = [](const std::vector<int>& v) {
    std::string s;
    for (int x : v) s.push_back(x ? '1' : '0');
    return s;
  };
  std::ostringstream os;
  os << std::setprecision(17);
  os << "# mat verification report v1\n";
  os << "q=" << r.suspect_hits.size() << "\n";
  os << "suspect_trigger_acc=" << r.suspect_trigger_acc << "\n";
  os << "benign_trigger_acc=" << r.benign_trigger_acc << "\n";
  os << "t_statistic=" << r.t_statistic << "\n";
  os << "df=" << r.df << "\n";
  os << "p_value=" << r.p_value << "\n";
  os << "significance=" << r.significance << "\n";
  os << "degeneracy=" << stats::to_string(r.degeneracy) << "\n";
  os << "owned=" << (r.owned ? "true" : "false") << "\n";
  os << "suspect_hits=" << bits(r.suspect_hits) << "\n";
  os << "benign_hits=" << bits(r.benign_hits) << "\n";
  return os.str();
}

inline VerificationReport parse_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "# mat verification report v1")
    throw PersistenceError("not a verification report");
  std::unordered_map<std::string, std::string> kv;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw PersistenceError("malformed report line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw PersistenceError(std::string("report lacks '") + k + "'");
    return it->second;
  };
  auto num = [&](const char* k) {
    const auto s = get(k);
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    return std::stod(s);
  };
  auto bits = [&](const char* k) {
    std::vector<int> v;
    for (char c : get(k)) v.push_back(c == '1');
    return v;
  };
  VerificationReport r;
  r.suspect_trigger_acc = num("suspect_trigger_acc");
  r.benign_trigger_acc = num("benign_trigger_acc");
  r.t_statistic = num("t_statistic");
  r.df = num("df");
  r.p_value = num("p_value");
  r.significance = num("significance");
  const auto deg = get("degeneracy");
  r.degeneracy = deg == "equal_constant"       ? stats::Degeneracy::equal_constant
                 : deg == "separated_constant" ? stats::Degeneracy::separated_constant
                                               : stats::Degeneracy::none;
  r.owned = get("owned") == "true";
  r.suspect_hits = bits("suspect_hits");
  r.benign_hits = bits("benign_hits");
  return r;
}

inline void write_report(const VerificationReport& r, const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw PersistenceError("cannot write " + p.string());
  out << format_report(r);
}

inline VerificationReport read_report(const std::filesystem::path& p) { return parse_report(read_file_bytes(p)); }

}  // namespace mat
