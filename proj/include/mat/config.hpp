#pragma once

// Experiment configuration: a flat "key = value" text file. '#' starts a
// comment, blank lines are ignored, keys may appear once, and unknown keys
// are rejected with their line number. Lists are comma separated. See
// configs/*.conf for annotated examples and README.md for the schema.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mat/attacks.hpp"
#include "mat/data.hpp"
#include "mat/error.hpp"
#include "mat/hash.hpp"
#include "mat/model.hpp"
#include "mat/multiview.hpp"
#include "mat/train.hpp"
#include "mat/trigger.hpp"
#include "mat/watermark.hpp"

namespace mat {

enum class DatasetKind { textures, blobs, digits, csv };

inline std::string to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::textures: return "textures";
    case DatasetKind::blobs: return "blobs";
    case DatasetKind::digits: return "digits";
    case DatasetKind::csv: return "csv";
  }
  return "?";
}

inline DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "textures") return DatasetKind::textures;
  if (s == "blobs") return DatasetKind::blobs;
  if (s == "digits") return DatasetKind::digits;
  if (s == "csv") return DatasetKind::csv;
  throw ConfigError("unknown dataset '" + s + "' (textures, blobs, digits, csv)");
}

struct DatasetConfig {
  DatasetKind kind = DatasetKind::textures;
  std::filesystem::path path;            // csv: labelled data
  std::filesystem::path surrogate_path;  // optional csv replacing the surrogate half
  double test_fraction = 0.2;            // held out before the source/surrogate split
  TextureParams textures;
  int blob_classes = 6, blob_dim = 16, blob_per_class = 300;
  double blob_spread = 3.0, blob_noise = 1.0;
};

struct TriggerConfig {
  std::size_t q = 0;        // explicit size; 0 means use `fraction`
  double fraction = 0.02;   // of the source set
  SelectionStrategy selection = SelectionStrategy::margin_top;
  LabelStrategy labeling = LabelStrategy::runner_up;
  bool include_misclassified = false;

  std::size_t size_for(std::size_t source_size) const {
    if (q > 0) return q;
    return std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(source_size))));
  }
};

struct SweepConfig {
  std::vector<double> alpha;
  std::vector<std::size_t> trigger_q;
  std::vector<double> distill_alpha;

  bool empty() const { return alpha.empty() && trigger_q.empty() && distill_alpha.empty(); }
};

struct ExperimentConfig {
  DatasetConfig dataset;
  double source_fraction = 0.5;
  ModelSpec model{.arch = Arch::conv, .num_classes = 6, .input_shape = {1, 8, 8}, .widths = {8, 8, 16, 16}};
  std::optional<ModelSpec> surrogate_model;  // defaults to `model`
  TrainConfig train{.epochs = 20, .batch_size = 64, .lr_initial = 0.02};
  TriggerConfig trigger;
  WatermarkTrainConfig watermark{.base = {}, .alpha = 0.01};
  std::vector<AttackConfig> attacks;
  double significance = 0.01;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/default";
  SweepConfig sweep;
  sim::TransferConfig multiview;

  ModelSpec surrogate_spec() const { return surrogate_model.value_or(model); }

  void validate() const {
    if (!(source_fraction > 0.0 && source_fraction < 1.0)) throw ConfigError("source_fraction must lie in (0, 1)");
    if (!(dataset.test_fraction >= 0.0 && dataset.test_fraction < 1.0))
      throw ConfigError("dataset.test_fraction must lie in [0, 1)");
    if (dataset.kind == DatasetKind::csv) {
      if (dataset.path.empty()) throw ConfigError("dataset.path is required for csv datasets");
      if (!std::filesystem::exists(dataset.path)) throw ConfigError("dataset.path does not exist: " + dataset.path.string());
    }
    if (!dataset.surrogate_path.empty() && !std::filesystem::exists(dataset.surrogate_path))
      throw ConfigError("dataset.surrogate_path does not exist: " + dataset.surrogate_path.string());
    model.validate();
    surrogate_spec().validate();
    train.validate();
    watermark.validate();
    if (!(trigger.fraction > 0.0 && trigger.fraction < 1.0)) throw ConfigError("trigger.fraction must lie in (0, 1)");
    if (!(significance > 0.0 && significance < 1.0)) throw ConfigError("significance must lie in (0, 1)");
    for (const auto& a : attacks) {
      a.validate();
      if (a.kind == AttackKind::fineprune && model.arch != Arch::conv)
        throw ConfigError("fineprune needs model.arch = conv (it prunes the last conv layer)");
    }
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  }

  // Canonical text of every field that affects results; output_dir excluded.
  std::string canonical() const;
  std::string hash() const { return sha256_hex(canonical()); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<int> to_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& t : split_list(v)) out.push_back(static_cast<int>(to_int(key, t)));
  return out;
}

inline std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& t : split_list(v)) out.push_back(to_double(key, t));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v, const char* sep = ",") {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? sep : "") << v[i];
  return os.str();
}

}  // namespace detail

inline std::vector<int> default_widths(Arch a) {
  switch (a) {
    case Arch::linear: return {};
    case Arch::mlp: return {128, 64};
    case Arch::conv: return {8, 8, 16, 16};
  }
  return {};
}

// Parsed "key = value" pairs with their source line numbers.
struct KeyValues {
  std::map<std::string, std::pair<std::string, int>> entries;
};

inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(no) + ": empty key");
    if (!kv.entries.emplace(key, std::make_pair(value, no)).second)
      throw ConfigError("line " + std::to_string(no) + ": duplicate key '" + key + "'");
  }
  return kv;
}

namespace detail {

// Attack settings shared by every configured attack.
struct AttackDefaults {
  std::optional<int> epochs, batch_size, decay_every;
  std::optional<double> lr, momentum, weight_decay;
  double distill_alpha = 0.5;
  double prune_acc_drop = 0.2;
  std::size_t prune_batch = 256;
  KlDirection kl = KlDirection::source_surrogate;
  double temperature = 1.0;
};

}  // namespace detail

// Relative paths inside the file resolve against `base_dir`.
inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig c;
  detail::AttackDefaults ad;
  std::vector<std::string> attack_kinds;
  std::optional<Arch> sur_arch;
  std::optional<std::vector<int>> sur_widths;
  bool model_widths_set = false;
  auto resolve = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  using detail::to_bool, detail::to_double, detail::to_int;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto& d = c.dataset;
  auto& tp = d.textures;
  auto& mv = c.multiview;
  const std::map<std::string, Setter> setters{
      {"seed", [&](auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(to_int(k, v)); }},
      {"output_dir", [&](auto&, auto& v) { c.output_dir = resolve(v); }},
      {"source_fraction", [&](auto& k, auto& v) { c.source_fraction = to_double(k, v); }},
      {"significance", [&](auto& k, auto& v) { c.significance = to_double(k, v); }},

      {"dataset", [&](auto&, auto& v) { d.kind = parse_dataset_kind(v); }},
      {"dataset.path", [&](auto&, auto& v) { d.path = resolve(v); }},
      {"dataset.surrogate_path", [&](auto&, auto& v) { d.surrogate_path = resolve(v); }},
      {"dataset.test_fraction", [&](auto& k, auto& v) { d.test_fraction = to_double(k, v); }},
      {"textures.classes", [&](auto& k, auto& v) { tp.num_classes = static_cast<int>(to_int(k, v)); }},
      {"textures.size", [&](auto& k, auto& v) { tp.size = static_cast<int>(to_int(k, v)); }},
      {"textures.per_class", [&](auto& k, auto& v) { tp.per_class = static_cast<int>(to_int(k, v)); }},
      {"textures.multiview_fraction", [&](auto& k, auto& v) { tp.multiview_fraction = to_double(k, v); }},
      {"textures.weak_max", [&](auto& k, auto& v) { tp.weak_max = to_double(k, v); }},
      {"textures.strong_min", [&](auto& k, auto& v) { tp.strong_min = to_double(k, v); }},
      {"textures.strong_max", [&](auto& k, auto& v) { tp.strong_max = to_double(k, v); }},
      {"textures.noise", [&](auto& k, auto& v) { tp.noise = to_double(k, v); }},
      {"textures.partner_prob", [&](auto& k, auto& v) { tp.partner_prob = to_double(k, v); }},
      {"blobs.classes", [&](auto& k, auto& v) { d.blob_classes = static_cast<int>(to_int(k, v)); }},
      {"blobs.dim", [&](auto& k, auto& v) { d.blob_dim = static_cast<int>(to_int(k, v)); }},
      {"blobs.per_class", [&](auto& k, auto& v) { d.blob_per_class = static_cast<int>(to_int(k, v)); }},
      {"blobs.spread", [&](auto& k, auto& v) { d.blob_spread = to_double(k, v); }},
      {"blobs.noise", [&](auto& k, auto& v) { d.blob_noise = to_double(k, v); }},

      {"model.arch", [&](auto&, auto& v) { c.model.arch = parse_arch(v); }},
      {"model.widths",
       [&](auto& k, auto& v) {
         c.model.widths = detail::to_ints(k, v);
         model_widths_set = true;
       }},
      {"surrogate_model.arch", [&](auto&, auto& v) { sur_arch = parse_arch(v); }},
      {"surrogate_model.widths", [&](auto& k, auto& v) { sur_widths = detail::to_ints(k, v); }},

      {"train.epochs", [&](auto& k, auto& v) { c.train.epochs = static_cast<int>(to_int(k, v)); }},
      {"train.batch_size", [&](auto& k, auto& v) { c.train.batch_size = static_cast<int>(to_int(k, v)); }},
      {"train.lr", [&](auto& k, auto& v) { c.train.lr_initial = to_double(k, v); }},
      {"train.lr_decay_every", [&](auto& k, auto& v) { c.train.lr_decay_every = static_cast<int>(to_int(k, v)); }},
      {"train.momentum", [&](auto& k, auto& v) { c.train.momentum = to_double(k, v); }},
      {"train.weight_decay", [&](auto& k, auto& v) { c.train.weight_decay = to_double(k, v); }},

      {"trigger.q", [&](auto& k, auto& v) { c.trigger.q = static_cast<std::size_t>(to_int(k, v)); }},
      {"trigger.fraction", [&](auto& k, auto& v) { c.trigger.fraction = to_double(k, v); }},
      {"trigger.selection", [&](auto&, auto& v) { c.trigger.selection = parse_selection(v); }},
      {"trigger.labeling", [&](auto&, auto& v) { c.trigger.labeling = parse_labeling(v); }},
      {"trigger.include_misclassified", [&](auto& k, auto& v) { c.trigger.include_misclassified = to_bool(k, v); }},

      {"watermark.alpha", [&](auto& k, auto& v) { c.watermark.alpha = to_double(k, v); }},
      {"watermark.reg_mode", [&](auto&, auto& v) { c.watermark.reg_mode = parse_reg_mode(v); }},
      {"watermark.repel_cap", [&](auto& k, auto& v) { c.watermark.repel_cap = to_double(k, v); }},
      {"watermark.repel_cap_factor", [&](auto& k, auto& v) { c.watermark.repel_cap_factor = to_double(k, v); }},

      {"attacks", [&](auto&, auto& v) { attack_kinds = detail::split_list(v); }},
      {"attack.epochs", [&](auto& k, auto& v) { ad.epochs = static_cast<int>(to_int(k, v)); }},
      {"attack.batch_size", [&](auto& k, auto& v) { ad.batch_size = static_cast<int>(to_int(k, v)); }},
      {"attack.lr", [&](auto& k, auto& v) { ad.lr = to_double(k, v); }},
      {"attack.lr_decay_every", [&](auto& k, auto& v) { ad.decay_every = static_cast<int>(to_int(k, v)); }},
      {"attack.momentum", [&](auto& k, auto& v) { ad.momentum = to_double(k, v); }},
      {"attack.weight_decay", [&](auto& k, auto& v) { ad.weight_decay = to_double(k, v); }},
      {"attack.distill_alpha", [&](auto& k, auto& v) { ad.distill_alpha = to_double(k, v); }},
      {"attack.prune_acc_drop", [&](auto& k, auto& v) { ad.prune_acc_drop = to_double(k, v); }},
      {"attack.prune_batch", [&](auto& k, auto& v) { ad.prune_batch = static_cast<std::size_t>(to_int(k, v)); }},
      {"attack.kl_direction", [&](auto&, auto& v) { ad.kl = parse_kl_direction(v); }},
      {"attack.temperature", [&](auto& k, auto& v) { ad.temperature = to_double(k, v); }},

      {"sweep.alpha", [&](auto& k, auto& v) { c.sweep.alpha = detail::to_doubles(k, v); }},
      {"sweep.trigger_q",
       [&](auto& k, auto& v) {
         for (int q : detail::to_ints(k, v)) {
           if (q < 2) throw ConfigError(k + ": trigger sizes must be >= 2");
           c.sweep.trigger_q.push_back(static_cast<std::size_t>(q));
         }
       }},
      {"sweep.distill_alpha", [&](auto& k, auto& v) { c.sweep.distill_alpha = detail::to_doubles(k, v); }},

      {"multiview.dim", [&](auto& k, auto& v) { mv.dim = static_cast<int>(to_int(k, v)); }},
      {"multiview.per_class", [&](auto& k, auto& v) { mv.per_class = static_cast<int>(to_int(k, v)); }},
      {"multiview.surrogate_per_class",
       [&](auto& k, auto& v) { mv.surrogate_per_class = static_cast<int>(to_int(k, v)); }},
      {"multiview.eps_max", [&](auto& k, auto& v) { mv.eps_max = to_double(k, v); }},
      {"multiview.noise", [&](auto& k, auto& v) { mv.noise = to_double(k, v); }},
      {"multiview.w0_grid", [&](auto& k, auto& v) { mv.w0_grid = detail::to_doubles(k, v); }},
      {"multiview.seeds", [&](auto& k, auto& v) { mv.seeds = static_cast<int>(to_int(k, v)); }},
      {"multiview.sampling",
       [&](auto&, auto& v) {
         if (v == "spanning") mv.sampling = sim::SurrogateSampling::spanning;
         else if (v == "v1_only") mv.sampling = sim::SurrogateSampling::v1_only;
         else throw ConfigError("multiview.sampling: expected spanning or v1_only, got '" + v + "'");
       }},
      {"multiview.arch", [&](auto&, auto& v) { mv.arch = parse_arch(v); }},
      {"multiview.epochs", [&](auto& k, auto& v) { mv.train.epochs = static_cast<int>(to_int(k, v)); }},
      {"multiview.lr", [&](auto& k, auto& v) { mv.train.lr_initial = to_double(k, v); }},
  };

  const auto kv = parse_key_values(text);
  for (const auto& [key, entry] : kv.entries) {
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("line " + std::to_string(entry.second) + ": unknown key '" + key + "'");
    try {
      it->second(key, entry.first);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(entry.second) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError("line " + std::to_string(entry.second) + ": " + key + ": " + e.what());
    }
  }

  // The model's input shape and class count follow the dataset.
  switch (d.kind) {
    case DatasetKind::textures:
      c.model.input_shape = {1, tp.size, tp.size};
      c.model.num_classes = tp.num_classes;
      break;
    case DatasetKind::blobs:
      c.model.input_shape = {d.blob_dim};
      c.model.num_classes = d.blob_classes;
      break;
    case DatasetKind::digits:
      c.model.input_shape = {1, 8, 8};
      c.model.num_classes = 10;
      break;
    case DatasetKind::csv:
      break;  // filled in once the file is read
  }
  if (!model_widths_set) c.model.widths = default_widths(c.model.arch);
  c.watermark.base = c.train;
  c.watermark.base.seed = substream(c.seed, "source");
  c.train.seed = c.seed;
  if (sur_arch || sur_widths) {
    ModelSpec s = c.model;
    if (sur_arch) s.arch = *sur_arch;
    if (sur_widths) s.widths = *sur_widths;
    else if (s.arch != c.model.arch) s.widths = default_widths(s.arch);
    c.surrogate_model = s;
  }
  for (const auto& name : attack_kinds) {
    AttackConfig a;
    a.kind = parse_attack_kind(name);
    a.surrogate_spec = c.surrogate_spec();
    a.train = c.train;
    if (ad.epochs) a.train.epochs = *ad.epochs;
    if (ad.batch_size) a.train.batch_size = *ad.batch_size;
    if (ad.lr) a.train.lr_initial = *ad.lr;
    if (ad.decay_every) a.train.lr_decay_every = *ad.decay_every;
    if (ad.momentum) a.train.momentum = *ad.momentum;
    if (ad.weight_decay) a.train.weight_decay = *ad.weight_decay;
    a.train.seed = substream(c.seed, "attack/" + name);
    if (a.kind == AttackKind::distill) a.distill_alpha = ad.distill_alpha;
    if (a.kind == AttackKind::fineprune) a.prune_acc_drop = ad.prune_acc_drop;
    a.prune_batch = ad.prune_batch;
    a.kl_direction = ad.kl;
    a.temperature = ad.temperature;
    if (std::any_of(c.attacks.begin(), c.attacks.end(), [&](const AttackConfig& x) { return x.kind == a.kind; }))
      throw ConfigError("attack '" + name + "' listed twice");
    c.attacks.push_back(a);
  }
  mv.seed = substream(c.seed, "multiview");
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), p.parent_path());
}

// Rebuilds the model-dependent pieces after the seed is overridden (CLI --seed).
inline void reseed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.train.seed = seed;
  c.watermark.base.seed = substream(seed, "source");
  for (auto& a : c.attacks) a.train.seed = substream(seed, "attack/" + to_string(a.kind));
  c.multiview.seed = substream(seed, "multiview");
}

inline std::string ExperimentConfig::canonical() const {
  using detail::join;
  std::ostringstream os;
  os.precision(17);
  const auto& tp = dataset.textures;
  os << "seed=" << seed << "\nsource_fraction=" << source_fraction << "\nsignificance=" << significance
     << "\ndataset=" << to_string(dataset.kind) << "\ndataset.test_fraction=" << dataset.test_fraction;
  if (dataset.kind == DatasetKind::csv) os << "\ndataset.sha256=" << file_sha256(dataset.path);
  if (!dataset.surrogate_path.empty()) os << "\ndataset.surrogate_sha256=" << file_sha256(dataset.surrogate_path);
  if (dataset.kind == DatasetKind::textures)
    os << "\ntextures=" << tp.num_classes << ',' << tp.size << ',' << tp.per_class << ',' << tp.multiview_fraction
       << ',' << tp.weak_max << ',' << tp.strong_min << ',' << tp.strong_max << ',' << tp.noise << ','
       << tp.partner_prob;
  if (dataset.kind == DatasetKind::blobs)
    os << "\nblobs=" << dataset.blob_classes << ',' << dataset.blob_dim << ',' << dataset.blob_per_class << ','
       << dataset.blob_spread << ',' << dataset.blob_noise;
  os << "\nmodel=" << to_string(model.arch) << ':' << join(model.widths);
  const auto s = surrogate_spec();
  os << "\nsurrogate_model=" << to_string(s.arch) << ':' << join(s.widths);
  os << "\ntrain=" << train.epochs << ',' << train.batch_size << ',' << train.lr_initial << ',' << train.lr_decay_every
     << ',' << train.momentum << ',' << train.weight_decay;
  os << "\ntrigger=" << trigger.q << ',' << trigger.fraction << ',' << to_string(trigger.selection) << ','
     << to_string(trigger.labeling) << ',' << trigger.include_misclassified;
  os << "\nwatermark=" << watermark.alpha << ',' << to_string(watermark.reg_mode) << ',' << watermark.repel_cap << ','
     << watermark.repel_cap_factor;
  for (const auto& a : attacks) os << "\nattack=" << a.canonical();
  os << "\nsweep=" << join(sweep.alpha) << '|' << join(sweep.trigger_q) << '|' << join(sweep.distill_alpha) << '\n';
  return os.str();
}

}  // namespace mat
