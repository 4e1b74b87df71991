#pragma once

// End-to-end orchestration. A stage is skipped on rerun when its last record
// matches the current config hash, its inputs still hash the same, and its
// outputs are intact.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mat/attacks.hpp"
#include "mat/checkpoint.hpp"
#include "mat/config.hpp"
#include "mat/data.hpp"
#include "mat/error.hpp"
#include "mat/hash.hpp"
#include "mat/manifest.hpp"
#include "mat/report.hpp"
#include "mat/trigger.hpp"
#include "mat/verification.hpp"
#include "mat/watermark.hpp"

namespace mat {

// SHA-256 of the digits CSV written by tools/fetch_digits.py.
inline constexpr std::string_view kDigitsSha256 = "299c48558f6cc25b2c0cd0d86bc57cc1894c811adf50fc8eaaa8fd93da58550f";

// $MAT_DATA_CACHE, else ~/.cache/mat.
inline std::filesystem::path data_cache_dir() {
  if (const char* e = std::getenv("MAT_DATA_CACHE"); e && *e) return e;
  if (const char* h = std::getenv("HOME"); h && *h) return std::filesystem::path(h) / ".cache" / "mat";
  return ".mat-cache";
}

inline Dataset load_digits() {
  const auto p = data_cache_dir() / "digits.csv";
  if (!std::filesystem::exists(p))
    throw DataError(p.string() + " not found; run tools/fetch_digits.py (honours MAT_DATA_CACHE)");
  const auto bytes = read_file_bytes(p);
  if (sha256_hex(bytes) != kDigitsSha256) throw DataError(p.string() + ": checksum does not match the pinned digest");
  return parse_dataset_csv(bytes, p.string());
}

// ---- stages -------------------------------------------------------------------

namespace stage {
inline const std::string ingest = "ingest";
inline const std::string select = "select-trigger";
inline const std::string source = "train-source";
inline const std::string benign = "train-benign";
inline const std::string report = "report";
inline std::string attack(AttackKind k) { return "attack/" + to_string(k); }
inline std::string verify(const std::string& model) { return "verify/" + model; }
}  // namespace stage

enum class Phase { ingest, select, source, benign, attack, verify, report };

inline Phase parse_phase(const std::string& s) {
  if (s == "ingest") return Phase::ingest;
  if (s == "select-trigger") return Phase::select;
  if (s == "train-source") return Phase::source;
  if (s == "train-benign") return Phase::benign;
  if (s == "attack") return Phase::attack;
  if (s == "verify") return Phase::verify;
  if (s == "run" || s == "report") return Phase::report;
  throw ConfigError("unknown pipeline phase '" + s + "'");
}

struct PipelineOptions {
  Phase until = Phase::report;  // last phase to execute
  bool sweeps = true;           // also run configured sweeps (report phase only)
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline json log_to_json(const TrainLog& log) {
  json a = json::array();
  for (const auto& e : log)
    a.push_back({{"epoch", e.epoch},
                 {"lr", e.lr},
                 {"clean_loss", e.clean_loss},
                 {"trigger_loss", e.trigger_loss},
                 {"reg_loss", e.reg_loss},
                 {"clean_acc", e.clean_acc},
                 {"trigger_acc", e.trigger_acc},
                 {"bank_epoch", e.bank_epoch}});
  return a;
}

// Trigger rows of `data` with assigned labels.
inline Dataset trigger_rows(const Dataset& data, const TriggerSet& t) { return split_source(data, t).second; }

class Runner {
 public:
  Runner(const ExperimentConfig& cfg, ArtifactStore& store)
      : cfg_(cfg), store_(store), hash_(cfg.hash()), manifest_(load_manifest(store)) {}

  RunManifest& manifest() { return manifest_; }

  void header(const std::vector<std::string>& planned) {
    StageRecord h;
    h.stage = "run";
    h.config_hash = hash_;
    h.planned = planned;
    append(h);
  }

  // Runs `body` unless an identical earlier execution can be reused.
  template <class Body>
  const StageRecord& stage(const std::string& name, const std::vector<std::string>& inputs, Body&& body) {
    StageRecord rec;
    rec.stage = name;
    rec.config_hash = hash_;
    try {
      for (const auto& in : inputs) rec.inputs[in] = store_.ref(in);
    } catch (const Error& e) {
      fail(rec, std::string("missing input: ") + e.what());
    }
    if (reusable(name, rec.inputs)) return *manifest_.latest(name);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body(rec);
    } catch (const std::exception& e) {
      rec.seconds = seconds_since(t0);
      fail(rec, e.what());
    }
    rec.seconds = seconds_since(t0);
    append(rec);
    return manifest_.records.back();
  }

 private:
  bool reusable(const std::string& name, const std::map<std::string, ArtifactRef>& inputs) {
    const auto* prev = manifest_.latest_ok(name, hash_);
    if (!prev || prev->inputs != inputs) return false;
    for (const auto& [k, a] : prev->outputs)
      if (!store_.exists(a.path) || store_.ref(a.path).sha256 != a.sha256) return false;
    return true;
  }

  [[noreturn]] void fail(StageRecord& rec, const std::string& msg) {
    rec.status = "failed";
    rec.error = msg;
    rec.outputs.clear();
    append(rec);
    throw StageError(rec.stage, msg);
  }

  void append(const StageRecord& r) {
    store_.append(kManifestFile, json(r).dump());
    manifest_.records.push_back(r);
  }

  const ExperimentConfig& cfg_;
  ArtifactStore& store_;
  std::string hash_;
  RunManifest manifest_;
};

inline std::string model_file(const std::string& name) { return "models/" + name + ".ckpt"; }
inline std::string metrics_file(const std::string& name) { return "metrics/" + name + ".json"; }

// Loads or generates the raw data and splits it into source, surrogate and test.
inline void ingest(const ExperimentConfig& cfg, ArtifactStore& store, StageRecord& rec) {
  Dataset all;
  switch (cfg.dataset.kind) {
    case DatasetKind::textures: all = make_textures(cfg.dataset.textures, substream(cfg.seed, "data")); break;
    case DatasetKind::blobs:
      all = make_blobs(cfg.dataset.blob_classes, cfg.dataset.blob_dim, cfg.dataset.blob_per_class,
                       cfg.dataset.blob_spread, cfg.dataset.blob_noise, substream(cfg.seed, "data"));
      break;
    case DatasetKind::digits: all = load_digits(); break;
    case DatasetKind::csv: all = read_dataset_csv(cfg.dataset.path); break;
  }
  Dataset pool = all, test = all.like("test");
  if (cfg.dataset.test_fraction > 0.0) {
    auto [rest, held] = split_dataset(all, 1.0 - cfg.dataset.test_fraction, substream(cfg.seed, "test_split"), "pool", "test");
    pool = std::move(rest);
    test = std::move(held);
  }
  auto [source, surrogate] = split_dataset(pool, cfg.source_fraction, substream(cfg.seed, "split"));
  if (!cfg.dataset.surrogate_path.empty()) {
    surrogate = read_dataset_csv(cfg.dataset.surrogate_path);
    surrogate.name = "surrogate";
  }
  rec.outputs["source"] = store.put_dataset("data/source.csv", source);
  rec.outputs["surrogate"] = store.put_dataset("data/surrogate.csv", surrogate);
  rec.outputs["test"] = store.put_dataset("data/test.csv", test);
  rec.outputs["metrics"] = store.put_json(metrics_file("ingest"), json{{"source", source.size()},
                                                                         {"surrogate", surrogate.size()},
                                                                         {"test", test.size()}});
}

// Input shape and class count come from the ingested data for csv/digits.
inline ModelSpec fit_spec(ModelSpec spec, const Dataset& d) {
  spec.input_shape = d.input_shape;
  spec.num_classes = d.num_classes;
  if (spec.arch == Arch::conv && spec.input_shape.size() == 1) {
    // Square single-channel images stored flat.
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(spec.input_shape[0]))));
    if (side * side == spec.input_shape[0]) spec.input_shape = {1, side, side};
  }
  spec.validate();
  return spec;
}

inline Dataset reshaped(Dataset d, const ModelSpec& spec) {
  if (shape_size(d.input_shape) != spec.input_dim()) throw DataError(d.name + ": sample size does not fit the model");
  d.input_shape = spec.input_shape;
  return d;
}

}  // namespace detail

// The stage list implied by a config, in execution order.
inline std::vector<std::string> planned_stages(const ExperimentConfig& cfg) {
  std::vector<std::string> s{stage::ingest, stage::select, stage::source, stage::benign};
  for (const auto& a : cfg.attacks) s.push_back(stage::attack(a.kind));
  if (cfg.attacks.empty()) s.push_back(stage::verify("source"));
  for (const auto& a : cfg.attacks) s.push_back(stage::verify(to_string(a.kind)));
  return s;
}

// Config for one point of a sweep, rooted under the parent's output directory.
inline ExperimentConfig sweep_point(const ExperimentConfig& cfg, const std::string& param, double value) {
  ExperimentConfig c = cfg;
  c.sweep = {};
  std::ostringstream name;
  name << param << '=' << value;
  c.output_dir = cfg.output_dir / "sweeps" / name.str();
  if (param == "alpha") {
    c.watermark.alpha = value;
    if (value > 0.0 && c.watermark.reg_mode == RegMode::none) c.watermark.reg_mode = RegMode::attract;
  } else if (param == "trigger_q") {
    c.trigger.q = static_cast<std::size_t>(value);
  } else if (param == "distill_alpha") {
    auto it = std::find_if(c.attacks.begin(), c.attacks.end(),
                           [](const AttackConfig& a) { return a.kind == AttackKind::distill; });
    if (it == c.attacks.end()) {
      AttackConfig a = c.attacks.empty() ? AttackConfig{} : c.attacks.front();
      if (c.attacks.empty()) {
        a.surrogate_spec = c.surrogate_spec();
        a.train = c.train;
      }
      a.kind = AttackKind::distill;
      a.prune_acc_drop.reset();
      a.train.seed = substream(c.seed, "attack/distill");
      c.attacks.push_back(a);
      it = std::prev(c.attacks.end());
    }
    it->distill_alpha = value;
  } else {
    throw ConfigError("unknown sweep parameter '" + param + "'");
  }
  return c;
}

inline std::vector<std::pair<std::string, std::vector<double>>> sweep_axes(const SweepConfig& s) {
  std::vector<std::pair<std::string, std::vector<double>>> axes;
  if (!s.alpha.empty()) axes.emplace_back("alpha", s.alpha);
  if (!s.trigger_q.empty()) axes.emplace_back("trigger_q", std::vector<double>(s.trigger_q.begin(), s.trigger_q.end()));
  if (!s.distill_alpha.empty()) axes.emplace_back("distill_alpha", s.distill_alpha);
  return axes;
}

// Executes the stages up to `opt.until`, reusing completed ones.
inline RunManifest run_pipeline(const ExperimentConfig& cfg, const PipelineOptions& opt = {},
                                ArtifactStore* audit = nullptr) {
  cfg.validate();
  ArtifactStore own(cfg.output_dir);
  ArtifactStore& store = audit ? *audit : own;
  detail::Runner run(cfg, store);
  run.header(planned_stages(cfg));
  auto reached = [&](Phase p) { return static_cast<int>(p) <= static_cast<int>(opt.until); };

  run.stage(stage::ingest, {}, [&](StageRecord& rec) { detail::ingest(cfg, store, rec); });
  if (!reached(Phase::select)) return run.manifest();

  run.stage(stage::select, {"data/source.csv", "data/test.csv"}, [&](StageRecord& rec) {
    const auto source = store.get_dataset("data/source.csv");
    const auto spec = detail::fit_spec(cfg.model, source);
    const auto S = detail::reshaped(source, spec);
    TrainConfig tc = cfg.train;
    tc.seed = substream(cfg.seed, "selector");
    const auto selector = train_supervised(spec, S, tc);
    const std::size_t q = cfg.trigger.size_for(S.size());
    const auto ids = select_trigger_set(selector, S, q, cfg.trigger.selection, cfg.seed, cfg.trigger.include_misclassified);
    auto ts = assign_labels(selector, S, ids, cfg.trigger.labeling, cfg.seed);
    ts.selection = cfg.trigger.selection;
    ts.source_dataset_id = store.ref("data/source.csv").sha256;
    const auto test = detail::reshaped(store.get_dataset("data/test.csv"), spec);
    rec.outputs["selector"] = store.put_model(detail::model_file("selector"), selector);
    rec.outputs["trigger"] = store.put_trigger("trigger/trigger_set.csv", ts);
    rec.outputs["metrics"] = store.put_json(
        detail::metrics_file("selector"),
        json{{"test_acc", test.empty() ? 0.0 : accuracy(selector, test)}, {"q", ts.size()}});
  });
  if (!reached(Phase::source)) return run.manifest();

  const std::vector<std::string> train_inputs{"data/source.csv", "data/test.csv", "trigger/trigger_set.csv"};
  auto load_split = [&](ModelSpec& spec, Dataset& dc, Dataset& dt, TriggerSet& ts, Dataset& test) {
    const auto source = store.get_dataset("data/source.csv");
    spec = detail::fit_spec(cfg.model, source);
    ts = store.get_trigger("trigger/trigger_set.csv");
    auto parts = split_source(detail::reshaped(source, spec), ts);
    dc = std::move(parts.first);
    dt = std::move(parts.second);
    test = detail::reshaped(store.get_dataset("data/test.csv"), spec);
  };

  run.stage(stage::source, train_inputs, [&](StageRecord& rec) {
    ModelSpec spec;
    Dataset dc, dt, test;
    TriggerSet ts;
    load_split(spec, dc, dt, ts, test);
    TrainLog log;
    const auto m = train_watermarked(spec, dc, dt, cfg.watermark, &log);
    rec.outputs["model"] = store.put_model(detail::model_file("source"), m);
    rec.outputs["metrics"] = store.put_json(detail::metrics_file("source"),
                                            json{{"test_acc", test.empty() ? 0.0 : accuracy(m, test)},
                                                 {"trigger_acc", accuracy(m, dt)},
                                                 {"clean_acc", accuracy(m, dc)},
                                                 {"log", detail::log_to_json(log)}});
  });
  if (!reached(Phase::benign)) return run.manifest();

  run.stage(stage::benign, train_inputs, [&](StageRecord& rec) {
    ModelSpec spec;
    Dataset dc, dt, test;
    TriggerSet ts;
    load_split(spec, dc, dt, ts, test);
    TrainConfig tc = cfg.train;
    tc.seed = substream(cfg.seed, "benign");
    const auto m = train_benign(spec, dc, tc);
    rec.outputs["model"] = store.put_model(detail::model_file("benign"), m);
    rec.outputs["metrics"] = store.put_json(detail::metrics_file("benign"),
                                            json{{"test_acc", test.empty() ? 0.0 : accuracy(m, test)},
                                                 {"trigger_acc", accuracy(m, dt)}});
  });
  if (!reached(Phase::attack)) return run.manifest();

  for (const auto& acfg : cfg.attacks) {
    const auto name = to_string(acfg.kind);
    run.stage(stage::attack(acfg.kind), {detail::model_file("source"), "data/surrogate.csv", "data/test.csv"},
              [&](StageRecord& rec) {
                const auto source = store.get_model(detail::model_file("source"));
                AttackConfig a = acfg;
                a.surrogate_spec.input_shape = source.spec.input_shape;
                a.surrogate_spec.num_classes = source.spec.num_classes;
                a.surrogate_spec.validate();
                const auto surrogate = detail::reshaped(store.get_dataset("data/surrogate.csv"), source.spec);
                const auto test = detail::reshaped(store.get_dataset("data/test.csv"), source.spec);
                AttackResult res;
                switch (a.kind) {
                  case AttackKind::extract_soft:
                  case AttackKind::extract_hard:
                  case AttackKind::distill: {
                    const BlackBoxModel victim(source);
                    res = a.kind == AttackKind::extract_soft   ? extract_soft(victim, surrogate, a)
                          : a.kind == AttackKind::extract_hard ? extract_hard(victim, surrogate, a)
                                                               : distill(victim, surrogate, a);
                    break;
                  }
                  case AttackKind::finetune: res = finetune(source, surrogate, a); break;
                  case AttackKind::fineprune: {
                    auto [train_part, val_part] =
                        split_dataset(surrogate, 0.8, substream(cfg.seed, "prune_validation"), "prune_train", "prune_val");
                    res = fine_prune(source, train_part, val_part, a);
                    break;
                  }
                }
                json meta{{"kind", name},
                          {"query_count", res.query_count},
                          {"config_hash", res.config_hash},
                          {"test_acc", test.empty() ? 0.0 : accuracy(res.model, test)},
                          {"log", detail::log_to_json(res.log)}};
                if (res.prune)
                  meta["prune"] = {{"order", res.prune->order},
                                   {"pruned", res.prune->pruned},
                                   {"base_accuracy", res.prune->base_accuracy},
                                   {"pruned_accuracy", res.prune->pruned_accuracy},
                                   {"final_accuracy", res.prune->final_accuracy}};
                rec.outputs["model"] = store.put_model(detail::model_file("surrogate_" + name), res.model);
                rec.outputs["metrics"] = store.put_json(detail::metrics_file("attack_" + name), meta);
              });
  }
  if (!reached(Phase::verify)) return run.manifest();

  auto verify = [&](const std::string& label, const std::string& model_rel) {
    run.stage(stage::verify(label),
              {model_rel, detail::model_file("benign"), "trigger/trigger_set.csv", "data/source.csv"},
              [&](StageRecord& rec) {
                const auto suspect = store.get_model(model_rel);
                const auto benign = store.get_model(detail::model_file("benign"));
                const auto ts = store.get_trigger("trigger/trigger_set.csv");
                const auto source = detail::reshaped(store.get_dataset("data/source.csv"), benign.spec);
                const BlackBoxModel s(suspect), b(benign);
                const auto r = verify_ownership(s, b, ts, source, cfg.significance);
                rec.outputs["report"] = store.put_report("reports/verify_" + label + ".txt", r);
              });
  };
  if (cfg.attacks.empty()) verify("source", detail::model_file("source"));
  for (const auto& a : cfg.attacks) verify(to_string(a.kind), detail::model_file("surrogate_" + to_string(a.kind)));
  if (!reached(Phase::report)) return run.manifest();

  if (opt.sweeps) {
    for (const auto& [param, values] : sweep_axes(cfg.sweep))
      for (double v : values) {
        const auto sub = sweep_point(cfg, param, v);
        // Sub-runs live inside the parent directory and keep their own manifests.
        ArtifactStore sub_store(sub.output_dir);
        run_pipeline(sub, {.until = Phase::verify, .sweeps = false}, &sub_store);
        store.note(sub_store.accessed());
      }
  }
  emit_report(store);
  return load_manifest(store);
}

}  // namespace mat
