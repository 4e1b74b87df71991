#pragma once

// Adversary simulations. Black-box attacks (extraction, distillation) see
// the victim only through BlackBoxModel, which exposes logit queries and
// nothing else. White-box attacks (fine-tuning, fine-pruning) copy the
// victim's parameters; the victim itself is never modified.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mat/checkpoint.hpp"
#include "mat/dataset.hpp"
#include "mat/error.hpp"
#include "mat/hash.hpp"
#include "mat/log.hpp"
#include "mat/losses.hpp"
#include "mat/model.hpp"
#include "mat/train.hpp"

namespace mat {

// Query-only view of a model. There is deliberately no accessor for the
// wrapped parameters; `query_count` audits how many samples were submitted.
class BlackBoxModel {
 public:
  explicit BlackBoxModel(const ModelCheckpoint& m) : model_(&m) {}

  BlackBoxModel(const BlackBoxModel&) = delete;
  BlackBoxModel& operator=(const BlackBoxModel&) = delete;

  std::size_t num_classes() const { return model_->num_classes(); }
  const Shape& input_shape() const { return model_->spec.input_shape; }

  std::vector<float> query_logits(const Dataset& d, std::span<const std::size_t> rows) const {
    queries_ += rows.size();
    return dataset_logits(*model_, d, rows);
  }

  std::vector<float> query_logits(const Dataset& d) const {
    const auto rows = all_rows(d);
    return query_logits(d, rows);
  }

  std::size_t query_count() const { return queries_.load(); }

 private:
  const ModelCheckpoint* model_;
  mutable std::atomic<std::size_t> queries_{0};
};

enum class AttackKind { extract_soft, extract_hard, distill, finetune, fineprune };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::extract_soft: return "extract_soft";
    case AttackKind::extract_hard: return "extract_hard";
    case AttackKind::distill: return "distill";
    case AttackKind::finetune: return "finetune";
    case AttackKind::fineprune: return "fineprune";
  }
  return "?";
}

inline AttackKind parse_attack_kind(const std::string& s) {
  for (auto k : {AttackKind::extract_soft, AttackKind::extract_hard, AttackKind::distill, AttackKind::finetune,
                 AttackKind::fineprune})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown attack kind '" + s + "'");
}

inline bool is_black_box(AttackKind k) {
  return k == AttackKind::extract_soft || k == AttackKind::extract_hard || k == AttackKind::distill;
}

struct AttackConfig {
  AttackKind kind = AttackKind::extract_soft;
  ModelSpec surrogate_spec;  // black-box attacks only
  TrainConfig train;
  std::optional<double> distill_alpha;   // distill only
  std::optional<double> prune_acc_drop;  // fineprune only (absolute accuracy, e.g. 0.2)
  std::size_t prune_batch = 256;
  KlDirection kl_direction = KlDirection::source_surrogate;
  double temperature = 1.0;

  void validate() const {
    train.validate();
    if (distill_alpha.has_value() != (kind == AttackKind::distill))
      throw ConfigError("distill_alpha must be set exactly for distill attacks");
    if (prune_acc_drop.has_value() != (kind == AttackKind::fineprune))
      throw ConfigError("prune_acc_drop must be set exactly for fineprune attacks");
    if (distill_alpha && !(*distill_alpha >= 0.0 && *distill_alpha <= 1.0))
      throw ConfigError("distill_alpha must lie in [0, 1]");
    if (prune_acc_drop && !(*prune_acc_drop >= 0.0)) throw ConfigError("prune_acc_drop must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (is_black_box(kind)) surrogate_spec.validate();
  }

  // Canonical text form; its SHA-256 is the config hash.
  std::string canonical() const {
    std::ostringstream os;
    os.precision(17);
    os << "kind=" << to_string(kind) << ";arch=" << to_string(surrogate_spec.arch)
       << ";classes=" << surrogate_spec.num_classes << ";shape=";
    for (int d : surrogate_spec.input_shape) os << d << ',';
    os << ";widths=";
    for (int d : surrogate_spec.widths) os << d << ',';
    os << ";epochs=" << train.epochs << ";batch=" << train.batch_size << ";lr=" << train.lr_initial
       << ";decay_every=" << train.lr_decay_every << ";momentum=" << train.momentum << ";wd=" << train.weight_decay
       << ";seed=" << train.seed << ";kl=" << to_string(kl_direction) << ";temperature=" << temperature;
    if (distill_alpha) os << ";distill_alpha=" << *distill_alpha;
    if (prune_acc_drop) os << ";prune_acc_drop=" << *prune_acc_drop << ";prune_batch=" << prune_batch;
    return os.str();
  }

  std::string hash() const { return sha256_hex(canonical()); }
};

struct PruneReport {
  std::vector<std::size_t> order;   // ascending mean activation
  std::vector<std::size_t> pruned;  // channels actually removed, in order
  double base_accuracy = 0.0;       // validation accuracy before pruning
  double pruned_accuracy = 0.0;     // validation accuracy when pruning stopped
  double final_accuracy = 0.0;      // validation accuracy after fine-tuning
};

struct AttackResult {
  ModelCheckpoint model;
  AttackKind kind = AttackKind::extract_soft;
  std::size_t query_count = 0;
  std::string config_hash;
  std::optional<PruneReport> prune;
  TrainLog log;
};

// Per-batch surrogate loss of a black-box attack. `target_log_probs` are the
// victim's log-softmax outputs; `labels` are hard labels (extract_hard) or
// ground truth (distill); unused otherwise.
template <class T>
double attack_batch_loss(const Model<T>& surrogate, std::span<const T> x, std::size_t n,
                         std::span<const T> target_log_probs, std::span<const int> labels, const AttackConfig& cfg,
                         std::vector<T>* grad = nullptr, std::size_t* correct = nullptr) {
  const auto fp = forward(surrogate, x, n);
  const std::size_t K = surrogate.num_classes();
  const std::span<const T> z(fp.logits);
  std::vector<T> dz;
  std::vector<T>* dzp = grad ? &dz : nullptr;
  double loss = 0.0;
  switch (cfg.kind) {
    case AttackKind::extract_soft:
      loss = extraction_loss(z, target_log_probs, K, cfg.kl_direction, dzp, cfg.temperature);
      break;
    case AttackKind::extract_hard:
      loss = cross_entropy(z, K, labels, dzp);
      break;
    case AttackKind::distill:
      loss = distillation_loss(z, target_log_probs, labels, K, cfg.distill_alpha.value_or(1.0), cfg.kl_direction, dzp,
                               cfg.temperature);
      break;
    default:
      throw AttackError("attack_batch_loss applies to black-box attacks only");
  }
  if (grad) *grad = backward(surrogate, fp, std::span<const T>(dz));
  if (correct && labels.size() == n) {
    *correct = 0;
    for (std::size_t s = 0; s < n; ++s) *correct += static_cast<int>(argmax(z.subspan(s * K, K))) == labels[s];
  }
  return loss;
}

// Index of the largest logit per row; ties resolve to the lowest class.
inline std::vector<int> hard_labels(std::span<const float> logits, std::size_t K) {
  std::vector<int> y(logits.size() / K);
  for (std::size_t s = 0; s < y.size(); ++s) y[s] = static_cast<int>(argmax(logits.subspan(s * K, K)));
  return y;
}

inline std::vector<float> rowwise_log_softmax(std::span<const float> logits, std::size_t K, double temperature) {
  std::vector<float> out(logits.size());
  for (std::size_t s = 0; s < logits.size() / K; ++s) {
    const auto lp = log_softmax(logits.subspan(s * K, K), temperature);
    std::copy(lp.begin(), lp.end(), out.begin() + static_cast<std::ptrdiff_t>(s * K));
  }
  return out;
}

namespace detail {

inline AttackResult run_black_box(const BlackBoxModel& source, const Dataset& data, const AttackConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw AttackError("surrogate dataset is empty");
  if (static_cast<std::size_t>(cfg.surrogate_spec.num_classes) != source.num_classes())
    throw AttackError("surrogate class count differs from the victim's");
  if (cfg.kind == AttackKind::distill) data.validate_labels();
  const std::size_t K = source.num_classes();
  const std::size_t before = source.query_count();
  // The victim is deterministic in inference mode, so one query per sample suffices.
  const auto victim_logits = source.query_logits(data);
  const auto targets = rowwise_log_softmax(victim_logits, K, cfg.temperature);
  const auto hard = hard_labels(victim_logits, K);
  const std::vector<int>& labels = cfg.kind == AttackKind::extract_hard ? hard : data.labels;

  AttackResult res;
  res.kind = cfg.kind;
  res.config_hash = cfg.hash();
  res.model = init_model<float>(cfg.surrogate_spec, substream(cfg.train.seed, "init"));
  check_dataset_shape(cfg.surrogate_spec, data);
  StepFn step = [&](const ModelCheckpoint& m, std::span<const std::size_t> rows, std::vector<float>& grad) {
    const auto x = data.gather(rows);
    std::vector<float> t(rows.size() * K);
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(targets.begin() + static_cast<std::ptrdiff_t>(rows[i] * K), K,
                  t.begin() + static_cast<std::ptrdiff_t>(i * K));
      y[i] = cfg.kind == AttackKind::extract_soft ? hard[rows[i]] : labels[rows[i]];
    }
    StepResult r;
    r.loss = attack_batch_loss(m, std::span<const float>(x), rows.size(), std::span<const float>(t),
                               std::span<const int>(y), cfg, &grad, &r.correct);
    return r;
  };
  res.log = run_sgd(res.model, data.size(), cfg.train, step);
  res.query_count = source.query_count() - before;
  return res;
}

}  // namespace detail

// Soft-label model extraction: minimise mean KL between surrogate and victim
// output distributions over the (unlabeled) surrogate data.
inline AttackResult extract_soft(const BlackBoxModel& source, const Dataset& surrogate_data, AttackConfig cfg) {
  cfg.kind = AttackKind::extract_soft;
  return detail::run_black_box(source, surrogate_data, cfg);
}

// Hard-label extraction: cross-entropy against the victim's argmax labels.
inline AttackResult extract_hard(const BlackBoxModel& source, const Dataset& surrogate_data, AttackConfig cfg) {
  cfg.kind = AttackKind::extract_hard;
  return detail::run_black_box(source, surrogate_data, cfg);
}

// alpha * KL(victim outputs) + (1 - alpha) * CE(ground truth).
inline AttackResult distill(const BlackBoxModel& source, const Dataset& surrogate_labeled, AttackConfig cfg) {
  cfg.kind = AttackKind::distill;
  if (!cfg.distill_alpha) throw ConfigError("distill requires distill_alpha");
  return detail::run_black_box(source, surrogate_labeled, cfg);
}

// White-box: continue cross-entropy training from the victim's parameters.
inline AttackResult finetune(const ModelCheckpoint& source, const Dataset& clean_data, AttackConfig cfg) {
  cfg.kind = AttackKind::finetune;
  cfg.validate();
  AttackResult res;
  res.kind = cfg.kind;
  res.config_hash = cfg.hash();
  res.model = source;
  if (cfg.train.epochs > 0) res.log = continue_supervised(res.model, clean_data, cfg.train);
  return res;
}

// Mean activation of each last-conv-layer channel over `rows` (post-ReLU,
// so equal to the mean absolute activation).
inline std::vector<double> channel_mean_activation(const ModelCheckpoint& m, const Dataset& data,
                                                   std::span<const std::size_t> rows) {
  if (m.spec.arch != Arch::conv) throw AttackError("fine-pruning needs a conv model (no last conv layer)");
  check_dataset_shape(m.spec, data);
  const auto x = data.gather(rows);
  const auto fp = forward(m, std::span<const float>(x), rows.size());
  const std::size_t C = m.feature_dim();
  const std::size_t per = fp.hidden[3].size() / (rows.size() * C);
  std::vector<double> mean(C, 0.0);
  for (std::size_t s = 0; s < rows.size(); ++s)
    for (std::size_t c = 0; c < C; ++c) {
      const float* a = fp.hidden[3].data() + (s * C + c) * per;
      for (std::size_t i = 0; i < per; ++i) mean[c] += std::abs(static_cast<double>(a[i]));
    }
  for (auto& v : mean) v /= static_cast<double>(rows.size() * per);
  return mean;
}

// Channels sorted by ascending mean activation; ties by channel index.
inline std::vector<std::size_t> channel_prune_order(std::span<const double> mean_activation) {
  std::vector<std::size_t> order(mean_activation.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_activation[a] < mean_activation[b]; });
  return order;
}

// Seed-fixed clean batch used to rank channels.
inline std::vector<std::size_t> prune_batch_rows(const Dataset& data, const AttackConfig& cfg) {
  std::vector<std::size_t> rows = all_rows(data);
  Rng rng(substream(cfg.train.seed, "prune_batch"));
  rng.shuffle(rows);
  rows.resize(std::min(rows.size(), cfg.prune_batch));
  std::sort(rows.begin(), rows.end());
  return rows;
}

// Prunes last-conv channels in ascending activation order while validation
// accuracy stays within prune_acc_drop of the unpruned accuracy, then
// fine-tunes with the pruned channels held at zero.
inline AttackResult fine_prune(const ModelCheckpoint& source, const Dataset& clean_data, const Dataset& validation,
                               AttackConfig cfg) {
  cfg.kind = AttackKind::fineprune;
  cfg.validate();
  if (validation.empty()) throw AttackError("fine-pruning needs a non-empty validation set");
  if (clean_data.empty()) throw AttackError("fine-pruning needs clean data");
  const auto rows = prune_batch_rows(clean_data, cfg);
  const auto act = channel_mean_activation(source, clean_data, rows);
  PruneReport rep;
  for (std::size_t c : channel_prune_order(act))
    if (source.channel_mask.empty() || source.channel_mask[c]) rep.order.push_back(c);
  rep.base_accuracy = accuracy(source, validation);
  rep.pruned_accuracy = rep.base_accuracy;
  ModelCheckpoint current = source;
  for (std::size_t c : rep.order) {
    ModelCheckpoint trial = current;
    prune_channel(trial, c);
    const double acc = accuracy(trial, validation);
    if (rep.base_accuracy - acc > *cfg.prune_acc_drop) break;
    current = std::move(trial);
    rep.pruned.push_back(c);
    rep.pruned_accuracy = acc;
  }
  if (rep.pruned.empty()) warn("fine-pruning: the first prune already exceeds the accuracy threshold; no channel pruned");
  AttackResult res;
  res.kind = cfg.kind;
  res.config_hash = cfg.hash();
  res.model = std::move(current);
  if (cfg.train.epochs > 0) res.log = continue_supervised(res.model, clean_data, cfg.train);
  rep.final_accuracy = accuracy(res.model, validation);
  res.prune = std::move(rep);
  return res;
}

}  // namespace mat
