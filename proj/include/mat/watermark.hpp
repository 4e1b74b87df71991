#pragma once

// Watermarked source training: clean loss + trigger loss, plus an optional
// feature regulariser that pulls trigger features toward the assigned
// class's mean feature (attract) or pushes them from the original class's
// mean (repel). Class means come from the previous epoch's FeatureBank and
// are treated as constants.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mat/dataset.hpp"
#include "mat/error.hpp"
#include "mat/log.hpp"
#include "mat/losses.hpp"
#include "mat/model.hpp"
#include "mat/train.hpp"

namespace mat {

enum class RegMode { none, attract, repel };

inline std::string to_string(RegMode m) {
  switch (m) {
    case RegMode::none: return "none";
    case RegMode::attract: return "attract";
    case RegMode::repel: return "repel";
  }
  return "?";
}

inline RegMode parse_reg_mode(const std::string& s) {
  if (s == "none") return RegMode::none;
  if (s == "attract") return RegMode::attract;
  if (s == "repel") return RegMode::repel;
  throw ConfigError("unknown reg_mode '" + s + "'");
}

struct WatermarkTrainConfig {
  TrainConfig base;
  double alpha = 0.01;
  RegMode reg_mode = RegMode::attract;
  // Repel only: per-sample distance cap. 0 selects repel_cap_factor x the mean
  // pairwise distance between class means of the current bank.
  double repel_cap = 0.0;
  double repel_cap_factor = 10.0;

  bool operator==(const WatermarkTrainConfig&) const = default;

  void validate() const {
    base.validate();
    if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("alpha must be finite and >= 0");
    if (!(repel_cap >= 0.0) || !(repel_cap_factor > 0.0)) throw ConfigError("repel cap settings must be positive");
  }

  bool regularized() const { return reg_mode != RegMode::none && alpha > 0.0; }
};

// Mean over the batch of ||f_k - mean[target_k]||_2, where entries whose
// target class is missing from the bank contribute nothing (the divisor stays
// the batch size). Distances are clamped at `cap` when cap > 0; clamped
// entries carry no gradient. Writes d(loss)/d(features) when asked.
template <class T>
double feature_reg_loss(std::span<const T> features, std::size_t P, std::span<const int> targets,
                        const FeatureBank& bank, double cap = 0.0, std::vector<T>* dfeatures = nullptr) {
  const std::size_t n = targets.size();
  if (features.size() != n * P) throw InputError("feature_reg_loss: shape mismatch");
  if (dfeatures) dfeatures->assign(n * P, T(0));
  if (n == 0) return 0.0;
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto c = static_cast<std::size_t>(targets[k]);
    if (!bank.available(c)) continue;
    if (bank.means[c].size() != P) throw InputError("feature bank width differs from the model's features");
    ++used;
    double sq = 0.0;
    for (std::size_t j = 0; j < P; ++j) {
      const double d = static_cast<double>(features[k * P + j]) - bank.means[c][j];
      sq += d * d;
    }
    const double dist = std::sqrt(sq);
    if (cap > 0.0 && dist >= cap) {
      total += cap;
      continue;
    }
    total += dist;
    if (dfeatures && dist > 0.0) {
      for (std::size_t j = 0; j < P; ++j)
        (*dfeatures)[k * P + j] =
            static_cast<T>((static_cast<double>(features[k * P + j]) - bank.means[c][j]) / (dist * n));
    }
  }
  if (used == 0) warn("feature regulariser skipped: no referenced class mean is available");
  return total / static_cast<double>(n);
}

// 10 x mean pairwise distance between available class means (repel cap).
inline double mean_interclass_distance(const FeatureBank& bank) {
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < bank.num_classes(); ++a)
    for (std::size_t b = a + 1; b < bank.num_classes(); ++b) {
      if (!bank.available(a) || !bank.available(b)) continue;
      double sq = 0.0;
      for (std::size_t j = 0; j < bank.means[a].size(); ++j) {
        const double d = bank.means[a][j] - bank.means[b][j];
        sq += d * d;
      }
      sum += std::sqrt(sq);
      ++pairs;
    }
  return pairs ? sum / static_cast<double>(pairs) : 0.0;
}

// One batch of the watermark objective.
template <class T>
struct JointBatch {
  std::span<const T> clean_x;
  std::span<const int> clean_y;
  std::span<const T> trigger_x;
  std::span<const int> trigger_assigned;
  std::span<const int> trigger_original;  // needed by repel only
};

struct ObjectiveParts {
  double clean = 0.0;
  double trigger = 0.0;
  double reg = 0.0;
  double total = 0.0;
  std::size_t clean_correct = 0;
};

// Clean-batch mean CE plus trigger-batch mean CE (each averaged on its own).
template <class T>
double joint_loss(const Model<T>& m, std::span<const T> clean_x, std::span<const int> clean_y,
                  std::span<const T> trigger_x, std::span<const int> trigger_y) {
  if (clean_y.empty()) throw DomainError("joint loss needs a non-empty clean batch");
  const auto zc = forward_logits(m, clean_x, clean_y.size());
  double loss = cross_entropy(std::span<const T>(zc), m.num_classes(), clean_y);
  if (!trigger_y.empty()) {
    const auto zt = forward_logits(m, trigger_x, trigger_y.size());
    loss += cross_entropy(std::span<const T>(zt), m.num_classes(), trigger_y);
  }
  return loss;
}

// Full objective: joint loss, + alpha * attract or - alpha * repel.
// `bank` may be null (no regularisation this epoch).
template <class T>
ObjectiveParts watermark_objective(const Model<T>& m, const JointBatch<T>& b, const FeatureBank* bank,
                                   const WatermarkTrainConfig& cfg, double cap, std::vector<T>* grad) {
  if (b.clean_y.empty()) throw DomainError("joint loss needs a non-empty clean batch");
  const std::size_t K = m.num_classes();
  ObjectiveParts parts;
  const auto fc = forward(m, b.clean_x, b.clean_y.size());
  std::vector<T> dz;
  parts.clean = cross_entropy(std::span<const T>(fc.logits), K, b.clean_y, grad ? &dz : nullptr);
  for (std::size_t s = 0; s < b.clean_y.size(); ++s)
    parts.clean_correct +=
        static_cast<int>(argmax(std::span<const T>(fc.logits.data() + s * K, K))) == b.clean_y[s];
  if (grad) *grad = backward(m, fc, std::span<const T>(dz));
  parts.total = parts.clean;
  if (b.trigger_assigned.empty()) return parts;

  const auto ft = forward(m, b.trigger_x, b.trigger_assigned.size());
  std::vector<T> dzt, df;
  parts.trigger = cross_entropy(std::span<const T>(ft.logits), K, b.trigger_assigned, grad ? &dzt : nullptr);
  parts.total += parts.trigger;
  const bool reg = bank && cfg.regularized();
  if (reg) {
    const bool repel = cfg.reg_mode == RegMode::repel;
    if (repel && b.trigger_original.size() != b.trigger_assigned.size())
      throw WatermarkError("repel regularisation needs the original trigger labels");
    const auto targets = repel ? b.trigger_original : b.trigger_assigned;
    parts.reg = feature_reg_loss(std::span<const T>(ft.features), m.feature_dim(), targets, *bank,
                                 repel ? cap : 0.0, grad ? &df : nullptr);
    const double sign = repel ? -1.0 : 1.0;
    parts.total += sign * cfg.alpha * parts.reg;
    if (grad) {
      const T scale = static_cast<T>(sign * cfg.alpha);
      for (auto& v : df) v *= scale;
    }
  }
  if (grad) {
    const auto gt = reg ? backward(m, ft, std::span<const T>(dzt), std::span<const T>(df))
                        : backward(m, ft, std::span<const T>(dzt));
    for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += gt[i];
  }
  return parts;
}

// Trains on D_c with the whole trigger set in every step. Accepts an empty
// trigger set, in which case it reduces to plain supervised training.
inline ModelCheckpoint train_joint(const ModelSpec& spec, const Dataset& clean, const Dataset& trigger,
                                   std::span<const int> trigger_original, const WatermarkTrainConfig& cfg,
                                   TrainLog* log = nullptr) {
  cfg.validate();
  if (clean.empty()) throw DataError("clean set is empty");
  check_dataset_shape(spec, clean);
  clean.validate_labels();
  if (!trigger.empty()) {
    check_dataset_shape(spec, trigger);
    trigger.validate_labels();
  }
  auto model = init_model<float>(spec, substream(cfg.base.seed, "init"));
  const std::vector<float>& tx = trigger.features;
  const std::vector<int>& ty = trigger.labels;
  std::optional<FeatureBank> bank;
  double cap = 0.0;
  double trig_sum = 0.0, reg_sum = 0.0;
  std::size_t steps = 0;

  auto on_begin = [&](const ModelCheckpoint& m, int epoch, EpochRecord& rec) {
    trig_sum = reg_sum = 0.0;
    steps = 0;
    bank.reset();
    // No bank exists before the first epoch has finished.
    if (epoch >= 1 && cfg.regularized() && !trigger.empty()) {
      bank = build_feature_bank(m, clean);
      rec.bank_epoch = bank->epoch_of_origin;
      cap = cfg.repel_cap > 0.0 ? cfg.repel_cap : cfg.repel_cap_factor * mean_interclass_distance(*bank);
    }
  };
  StepFn step = [&](const ModelCheckpoint& m, std::span<const std::size_t> rows, std::vector<float>& grad) {
    const auto x = clean.gather(rows);
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = clean.labels[rows[i]];
    JointBatch<float> b{x, y, tx, ty, trigger_original};
    const auto parts = watermark_objective(m, b, bank ? &*bank : nullptr, cfg, cap, &grad);
    trig_sum += parts.trigger;
    reg_sum += parts.reg;
    ++steps;
    return StepResult{parts.clean, parts.clean_correct};
  };
  auto on_end = [&](const ModelCheckpoint& m, int, EpochRecord& rec) {
    rec.trigger_loss = steps ? trig_sum / static_cast<double>(steps) : 0.0;
    rec.reg_loss = steps ? reg_sum / static_cast<double>(steps) : 0.0;
    rec.trigger_acc = trigger.empty() ? 0.0 : accuracy(m, trigger);
  };
  auto l = run_sgd(model, clean.size(), cfg.base, step, on_begin, on_end);
  if (log) *log = std::move(l);
  return model;
}

inline ModelCheckpoint train_watermarked(const ModelSpec& spec, const Dataset& clean, const Dataset& trigger,
                                         const WatermarkTrainConfig& cfg, TrainLog* log = nullptr,
                                         std::span<const int> trigger_original = {}) {
  if (trigger.empty()) throw WatermarkError("trigger set is empty: nothing to embed");
  return train_joint(spec, clean, trigger, trigger_original, cfg, log);
}

// Benign reference: plain cross-entropy on the clean set only.
inline ModelCheckpoint train_benign(const ModelSpec& spec, const Dataset& clean, const TrainConfig& cfg,
                                    TrainLog* log = nullptr) {
  return train_supervised(spec, clean, cfg, log);
}

}  // namespace mat
