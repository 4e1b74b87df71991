#pragma once

// Trigger-set construction: rank source samples by logit margin, relabel the
// chosen ones, and carve them out of the source data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mat/checkpoint.hpp"
#include "mat/dataset.hpp"
#include "mat/error.hpp"
#include "mat/model.hpp"
#include "mat/rng.hpp"

namespace mat {

enum class SelectionStrategy { margin_top, random, highest_confidence };
enum class LabelStrategy { runner_up, random_other, min_confidence };

inline std::string to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::margin_top: return "margin_top";
    case SelectionStrategy::random: return "random";
    case SelectionStrategy::highest_confidence: return "highest_confidence";
  }
  return "?";
}

inline std::string to_string(LabelStrategy s) {
  switch (s) {
    case LabelStrategy::runner_up: return "runner_up";
    case LabelStrategy::random_other: return "random_other";
    case LabelStrategy::min_confidence: return "min_confidence";
  }
  return "?";
}

inline SelectionStrategy parse_selection(const std::string& s) {
  if (s == "margin_top") return SelectionStrategy::margin_top;
  if (s == "random") return SelectionStrategy::random;
  if (s == "highest_confidence") return SelectionStrategy::highest_confidence;
  throw ConfigError("unknown selection strategy '" + s + "'");
}

inline LabelStrategy parse_labeling(const std::string& s) {
  if (s == "runner_up") return LabelStrategy::runner_up;
  if (s == "random_other") return LabelStrategy::random_other;
  if (s == "min_confidence") return LabelStrategy::min_confidence;
  throw ConfigError("unknown label strategy '" + s + "'");
}

struct TriggerEntry {
  std::size_t sample_id = 0;
  int original_label = 0;
  int assigned_label = 0;
  double margin = 0.0;
  bool operator==(const TriggerEntry&) const = default;
};

// The watermark secret.
struct TriggerSet {
  std::vector<TriggerEntry> entries;
  std::string source_dataset_id;
  std::string selector_model_hash;
  SelectionStrategy selection = SelectionStrategy::margin_top;
  LabelStrategy labeling = LabelStrategy::runner_up;
  std::uint64_t seed = 0;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  bool operator==(const TriggerSet&) const = default;

  void validate() const {
    std::unordered_set<std::size_t> seen;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.assigned_label == e.original_label)
        throw DataError("trigger entry " + std::to_string(e.sample_id) + " keeps its original label");
      if (!seen.insert(e.sample_id).second)
        throw DataError("duplicate trigger sample id " + std::to_string(e.sample_id));
      if (i > 0 && entries[i - 1].margin < e.margin) throw DataError("trigger entries not sorted by margin");
    }
  }
};

// max_{j != y} z_j - z_y. Negative iff the model strictly prefers y.
template <class T>
T logit_margin(std::span<const T> logits, std::size_t y) {
  if (logits.size() < 2) throw DomainError("logit margin needs at least two classes");
  if (y >= logits.size()) throw DomainError("class index out of range");
  T best = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < logits.size(); ++j)
    if (j != y) best = std::max(best, logits[j]);
  return best - logits[y];
}

// Logit margin of every row of `data`, evaluated in double from float logits.
inline std::vector<double> dataset_margins(const ModelCheckpoint& m, const Dataset& data) {
  const auto z = dataset_logits(m, data);
  const std::size_t K = m.num_classes();
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::vector<double> row(z.begin() + static_cast<std::ptrdiff_t>(i * K),
                            z.begin() + static_cast<std::ptrdiff_t>((i + 1) * K));
    out[i] = logit_margin(std::span<const double>(row), static_cast<std::size_t>(data.labels[i]));
  }
  return out;
}

// Picks q sample ids given per-sample margins. margin_top takes the largest
// margins, highest_confidence the smallest; ties go to the smaller id.
// `eligible` (optional) restricts the ranking pool.
inline std::vector<std::size_t> select_by_margin(std::span<const double> margins, std::span<const std::size_t> ids,
                                                 std::size_t q, SelectionStrategy strategy, std::uint64_t seed,
                                                 std::span<const std::uint8_t> eligible = {}) {
  if (margins.size() != ids.size()) throw InputError("margins and ids differ in length");
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (eligible.empty() || eligible[i]) pool.push_back(i);
  if (q > pool.size())
    throw SelectionError("cannot select " + std::to_string(q) + " triggers from " + std::to_string(pool.size()) +
                         " candidates");
  std::vector<std::size_t> out;
  out.reserve(q);
  if (strategy == SelectionStrategy::random) {
    std::sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    Rng rng(substream(seed, "select"));
    // Partial Fisher-Yates: the first q slots form a uniform sample.
    for (std::size_t i = 0; i < q; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      out.push_back(ids[pool[i]]);
    }
    return out;
  }
  const bool largest = strategy == SelectionStrategy::margin_top;
  auto better = [&](std::size_t a, std::size_t b) {
    if (margins[a] != margins[b]) return largest ? margins[a] > margins[b] : margins[a] < margins[b];
    return ids[a] < ids[b];
  };
  std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(q), pool.end(), better);
  for (std::size_t i = 0; i < q; ++i) out.push_back(ids[pool[i]]);
  return out;
}

// When `include_misclassified` is false only samples the selector classifies
// correctly (negative margin) are ranked.
inline std::vector<std::size_t> select_trigger_set(const ModelCheckpoint& model, const Dataset& data, std::size_t q,
                                                   SelectionStrategy strategy, std::uint64_t seed,
                                                   bool include_misclassified = true) {
  if (q > data.size())
    throw SelectionError("trigger size " + std::to_string(q) + " exceeds dataset size " + std::to_string(data.size()));
  const auto margins = dataset_margins(model, data);
  std::vector<std::uint8_t> eligible;
  if (!include_misclassified) {
    eligible.resize(margins.size());
    for (std::size_t i = 0; i < margins.size(); ++i) eligible[i] = margins[i] < 0.0;
  }
  return select_by_margin(margins, data.ids, q, strategy, seed, eligible);
}

// Label for one selected sample; never returns y.
template <class T>
int choose_label(std::span<const T> logits, int y, LabelStrategy strategy, Rng& rng) {
  const std::size_t K = logits.size();
  if (K < 2) throw DomainError("relabeling needs at least two classes");
  const auto yy = static_cast<std::size_t>(y);
  if (strategy == LabelStrategy::random_other) {
    const auto r = static_cast<std::size_t>(rng.below(K - 1));
    return static_cast<int>(r >= yy ? r + 1 : r);
  }
  // argmax_{j!=y} (z_j - z_y) == argmax_{j!=y} z_j; lowest index wins ties.
  std::size_t pick = yy == 0 ? 1 : 0;
  for (std::size_t j = 0; j < K; ++j) {
    if (j == yy) continue;
    const bool take = strategy == LabelStrategy::runner_up ? logits[j] > logits[pick] : logits[j] < logits[pick];
    if (take) pick = j;
  }
  return static_cast<int>(pick);
}

inline void sort_entries(std::vector<TriggerEntry>& entries) {
  std::stable_sort(entries.begin(), entries.end(), [](const TriggerEntry& a, const TriggerEntry& b) {
    if (a.margin != b.margin) return a.margin > b.margin;
    return a.sample_id < b.sample_id;
  });
}

inline TriggerSet assign_labels(const ModelCheckpoint& model, const Dataset& data, std::span<const std::size_t> ids,
                                LabelStrategy strategy, std::uint64_t seed) {
  const auto index = data.index_by_id();
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  std::unordered_set<std::size_t> seen;
  for (std::size_t id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw DataError("trigger id " + std::to_string(id) + " not in dataset");
    if (!seen.insert(id).second) throw DataError("trigger id " + std::to_string(id) + " selected twice");
    rows.push_back(it->second);
  }
  const auto z = dataset_logits(model, data, rows);
  const std::size_t K = model.num_classes();
  Rng rng(substream(seed, "label"));
  TriggerSet ts;
  ts.source_dataset_id = data.name;
  ts.selector_model_hash = model_hash(model);
  ts.labeling = strategy;
  ts.seed = seed;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<double> row(z.begin() + static_cast<std::ptrdiff_t>(i * K),
                            z.begin() + static_cast<std::ptrdiff_t>((i + 1) * K));
    const int y = data.labels[rows[i]];
    TriggerEntry e;
    e.sample_id = ids[i];
    e.original_label = y;
    e.assigned_label = choose_label(std::span<const double>(row), y, strategy, rng);
    e.margin = logit_margin(std::span<const double>(row), static_cast<std::size_t>(y));
    ts.entries.push_back(e);
  }
  sort_entries(ts.entries);
  return ts;
}

// Clean set (original labels) and trigger view (assigned labels, manifest order).
inline std::pair<Dataset, Dataset> split_source(const Dataset& data, const TriggerSet& trigger) {
  const auto index = data.index_by_id();
  std::unordered_set<std::size_t> trig_rows;
  Dataset dt = data.like(data.name + "/trigger");
  for (const auto& e : trigger.entries) {
    auto it = index.find(e.sample_id);
    if (it == index.end()) throw DataError("trigger id " + std::to_string(e.sample_id) + " not in dataset");
    if (!trig_rows.insert(it->second).second) throw DataError("duplicate trigger id");
    dt.push_back(data.row(it->second), e.assigned_label, e.sample_id);
  }
  std::vector<std::size_t> clean_rows;
  clean_rows.reserve(data.size() - trig_rows.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    if (!trig_rows.count(i)) clean_rows.push_back(i);
  return {data.subset(clean_rows, data.name + "/clean"), std::move(dt)};
}

// ---- trigger manifest -------------------------------------------------------
//
//   # mat trigger manifest v1
//   dataset_id=<string>
//   selector_model_hash=<hex>
//   selection=<strategy>
//   labeling=<strategy>
//   seed=<uint64>
//   count=<q>
//   sample_id,y,assigned,margin
//   <id>,<y>,<assigned>,<margin %.17g>     (q lines, margin descending)

inline std::string format_trigger_manifest(const TriggerSet& t) {
  std::ostringstream os;
  os << "# mat trigger manifest v1\n";
  os << "dataset_id=" << t.source_dataset_id << "\n";
  os << "selector_model_hash=" << t.selector_model_hash << "\n";
  os << "selection=" << to_string(t.selection) << "\n";
  os << "labeling=" << to_string(t.labeling) << "\n";
  os << "seed=" << t.seed << "\n";
  os << "count=" << t.entries.size() << "\n";
  os << "sample_id,y,assigned,margin\n";
  os << std::setprecision(17);
  for (const auto& e : t.entries)
    os << e.sample_id << ',' << e.original_label << ',' << e.assigned_label << ',' << e.margin << "\n";
  return os.str();
}

inline TriggerSet parse_trigger_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "# mat trigger manifest v1")
    throw PersistenceError("not a trigger manifest (missing v1 header)");
  TriggerSet t;
  std::unordered_map<std::string, std::string> kv;
  while (std::getline(in, line) && line != "sample_id,y,assigned,margin") {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw PersistenceError("malformed manifest header line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* k : {"dataset_id", "selector_model_hash", "selection", "labeling", "seed", "count"})
    if (!kv.count(k)) throw PersistenceError(std::string("trigger manifest lacks '") + k + "'");
  t.source_dataset_id = kv["dataset_id"];
  t.selector_model_hash = kv["selector_model_hash"];
  t.selection = parse_selection(kv["selection"]);
  t.labeling = parse_labeling(kv["labeling"]);
  t.seed = std::stoull(kv["seed"]);
  const std::size_t count = std::stoull(kv["count"]);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    TriggerEntry e;
    char c1, c2, c3;
    if (!(ls >> e.sample_id >> c1 >> e.original_label >> c2 >> e.assigned_label >> c3 >> e.margin) || c1 != ',' ||
        c2 != ',' || c3 != ',')
      throw PersistenceError("malformed trigger record: " + line);
    t.entries.push_back(e);
  }
  if (t.entries.size() != count) throw PersistenceError("trigger manifest count does not match its records");
  t.validate();
  return t;
}

inline void write_trigger_manifest(const TriggerSet& t, const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw PersistenceError("cannot write " + p.string());
  out << format_trigger_manifest(t);
}

inline TriggerSet read_trigger_manifest(const std::filesystem::path& p) {
  return parse_trigger_manifest(read_file_bytes(p));
}

}  // namespace mat
