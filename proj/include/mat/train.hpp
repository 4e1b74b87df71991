#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mat/dataset.hpp"
#include "mat/error.hpp"
#include "mat/losses.hpp"
#include "mat/model.hpp"
#include "mat/rng.hpp"

namespace mat {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double lr_initial = 0.1;
  // Epochs between learning-rate steps; 0 scales the 50-of-200 schedule to `epochs`.
  int lr_decay_every = 0;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(lr_initial >= 0.0) || !std::isfinite(lr_initial)) throw ConfigError("lr_initial must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (lr_decay_every < 0) throw ConfigError("lr_decay_every must be >= 0");
  }

  int decay_every() const {
    if (lr_decay_every > 0) return lr_decay_every;
    return std::max(1, static_cast<int>(std::lround(epochs * 50.0 / 200.0)));
  }

  // Staircase linear decay: the rate drops by the same amount at every step,
  // e.g. 200 epochs stepping every 50 gives 1, 0.75, 0.5, 0.25 x lr_initial.
  double lr_at(int epoch) const {
    if (epochs <= 0) return lr_initial;
    const int step = decay_every();
    const double frac = static_cast<double>((epoch / step) * step) / static_cast<double>(epochs);
    return lr_initial * std::max(0.0, 1.0 - frac);
  }
};

// SGD with momentum and L2 weight decay (coupled, heavy-ball form):
//   v <- momentum * v + (g + wd * theta);  theta <- theta - lr * v
template <class T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay, std::size_t n)
      : momentum_(static_cast<T>(momentum)), wd_(static_cast<T>(weight_decay)), velocity_(n, T(0)) {}

  void step(std::vector<T>& params, const std::vector<T>& grad, double lr) {
    const T rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity_[i] = momentum_ * velocity_[i] + grad[i] + wd_ * params[i];
      params[i] -= rate * velocity_[i];
    }
  }

 private:
  T momentum_, wd_;
  std::vector<T> velocity_;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double clean_loss = 0.0;
  double trigger_loss = 0.0;
  double reg_loss = 0.0;
  double clean_acc = 0.0;    // running accuracy over the epoch's clean batches
  double trigger_acc = 0.0;  // full trigger set, end of epoch
  std::int64_t bank_epoch = -1;  // epoch the feature bank was built at; -1 = none
};

using TrainLog = std::vector<EpochRecord>;

// Step callback: computes the loss on `rows`, fills `grad` (sized like the
// parameters, zero-initialised by the caller) and returns batch statistics.
struct StepResult {
  double loss = 0.0;
  std::size_t correct = 0;
};

using StepFn = std::function<StepResult(const ModelCheckpoint&, std::span<const std::size_t>, std::vector<float>&)>;
using EpochHook = std::function<void(const ModelCheckpoint&, int epoch, EpochRecord&)>;

// Shared mini-batch loop. Rows 0..n-1 are shuffled per epoch by a generator
// seeded from the config's "shuffle" sub-stream.
inline TrainLog run_sgd(ModelCheckpoint& model, std::size_t n, const TrainConfig& cfg, const StepFn& step,
                        const EpochHook& on_begin = {}, const EpochHook& on_end = {}) {
  cfg.validate();
  if (n == 0) throw DataError("cannot train on an empty dataset");
  Rng rng(substream(cfg.seed, "shuffle"));
  Sgd<float> opt(cfg.momentum, cfg.weight_decay, model.params.size());
  std::vector<std::size_t> order(n);
  std::vector<float> grad(model.params.size());
  TrainLog log;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochRecord rec;
    rec.epoch = e;
    rec.lr = cfg.lr_at(e);
    if (on_begin) on_begin(model, e, rec);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t b = 0; b < n; b += bs) {
      const std::span<const std::size_t> rows(order.data() + b, std::min(bs, n - b));
      std::fill(grad.begin(), grad.end(), 0.0f);
      const StepResult r = step(model, rows, grad);
      opt.step(model.params, grad, rec.lr);
      apply_channel_mask(model);
      loss_sum += r.loss;
      correct += r.correct;
      ++batches;
    }
    rec.clean_loss = loss_sum / static_cast<double>(batches);
    rec.clean_acc = static_cast<double>(correct) / static_cast<double>(n);
    ++model.epoch;
    if (on_end) on_end(model, e, rec);
    log.push_back(rec);
  }
  model.rng_state = rng.state();
  return log;
}

inline std::size_t count_correct(std::span<const float> logits, std::size_t K, std::span<const int> labels) {
  std::size_t c = 0;
  for (std::size_t s = 0; s < labels.size(); ++s)
    c += static_cast<int>(argmax(logits.subspan(s * K, K))) == labels[s];
  return c;
}

// Cross-entropy step on rows of a labeled dataset.
inline StepFn cross_entropy_step(const Dataset& data) {
  return [&data](const ModelCheckpoint& m, std::span<const std::size_t> rows, std::vector<float>& grad) {
    const auto x = data.gather(rows);
    std::vector<int> y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) y[i] = data.labels[rows[i]];
    const auto fp = forward(m, std::span<const float>(x), rows.size());
    std::vector<float> dz;
    StepResult r;
    r.loss = cross_entropy(std::span<const float>(fp.logits), m.num_classes(), std::span<const int>(y), &dz);
    r.correct = count_correct(fp.logits, m.num_classes(), y);
    grad = backward(m, fp, std::span<const float>(dz));
    return r;
  };
}

// Continues cross-entropy training of an existing model.
inline TrainLog continue_supervised(ModelCheckpoint& model, const Dataset& data, const TrainConfig& cfg) {
  check_dataset_shape(model.spec, data);
  if (static_cast<int>(model.num_classes()) != data.num_classes && data.num_classes != 0)
    throw DataError("dataset class count differs from the model's");
  for (int y : data.labels)
    if (y < 0 || y >= model.spec.num_classes) throw DataError("label " + std::to_string(y) + " out of range");
  return run_sgd(model, data.size(), cfg, cross_entropy_step(data));
}

// Mini-batch cross-entropy training from a seeded random initialisation.
inline ModelCheckpoint train_supervised(const ModelSpec& spec, const Dataset& data, const TrainConfig& cfg,
                                        TrainLog* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw DataError("cannot train on an empty dataset");
  auto model = init_model<float>(spec, substream(cfg.seed, "init"));
  auto l = continue_supervised(model, data, cfg);
  if (log) *log = std::move(l);
  return model;
}

// Mean cross-entropy over a whole dataset (evaluation only).
inline double dataset_loss(const ModelCheckpoint& m, const Dataset& d) {
  const auto z = dataset_logits(m, d);
  return cross_entropy(std::span<const float>(z), m.num_classes(), std::span<const int>(d.labels));
}

// Per-class mean penultimate features; target of the feature regulariser.
struct FeatureBank {
  std::vector<std::vector<double>> means;  // num_classes x feature_dim
  std::vector<std::size_t> counts;
  std::int64_t epoch_of_origin = -1;

  bool available(std::size_t c) const { return c < counts.size() && counts[c] > 0; }
  std::size_t num_classes() const { return means.size(); }
};

template <class T>
FeatureBank build_feature_bank(const Model<T>& m, const Dataset& data, std::size_t chunk = 256) {
  check_dataset_shape(m.spec, data);
  const std::size_t K = m.num_classes(), P = m.feature_dim();
  FeatureBank bank;
  bank.means.assign(K, std::vector<double>(P, 0.0));
  bank.counts.assign(K, 0);
  bank.epoch_of_origin = m.epoch;
  for (std::size_t i = 0; i < data.size(); i += chunk) {
    const std::size_t len = std::min(chunk, data.size() - i);
    std::vector<T> x(data.features.begin() + static_cast<std::ptrdiff_t>(i * data.dim()),
                     data.features.begin() + static_cast<std::ptrdiff_t>((i + len) * data.dim()));
    const auto f = forward_features(m, std::span<const T>(x), len);
    for (std::size_t s = 0; s < len; ++s) {
      const int y = data.labels[i + s];
      if (y < 0 || static_cast<std::size_t>(y) >= K) throw DataError("label out of range");
      auto& mu = bank.means[static_cast<std::size_t>(y)];
      for (std::size_t j = 0; j < P; ++j) mu[j] += static_cast<double>(f[s * P + j]);
      ++bank.counts[static_cast<std::size_t>(y)];
    }
  }
  for (std::size_t c = 0; c < K; ++c)
    if (bank.counts[c] > 0)
      for (auto& v : bank.means[c]) v /= static_cast<double>(bank.counts[c]);
  return bank;
}

}  // namespace mat
