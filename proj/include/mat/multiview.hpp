#pragma once

// Closed-form multi-view feature model: orthonormal class features, samples
// built as weighted sums of them, linear classifiers over those features, and
// an end-to-end experiment measuring whether a relabeled multi-view trigger's
// prediction survives soft-label extraction.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mat/attacks.hpp"
#include "mat/dataset.hpp"
#include "mat/error.hpp"
#include "mat/model.hpp"
#include "mat/rng.hpp"
#include "mat/watermark.hpp"

namespace mat::sim {

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DomainError("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

struct FeatureBasis {
  std::vector<std::vector<double>> vectors;  // one unit vector per class

  std::size_t classes() const { return vectors.size(); }
  std::size_t dim() const { return vectors.empty() ? 0 : vectors[0].size(); }

  // Largest deviation from orthonormality, max |<v_i, v_j> - delta_ij|.
  double orthonormality_error() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < classes(); ++i)
      for (std::size_t j = 0; j < classes(); ++j)
        worst = std::max(worst, std::fabs(dot(vectors[i], vectors[j]) - (i == j ? 1.0 : 0.0)));
    return worst;
  }
};

// Gram-Schmidt (two passes) over Gaussian draws.
inline FeatureBasis make_basis(int classes, int dim, std::uint64_t seed) {
  if (classes < 1 || dim < classes) throw DomainError("basis needs 1 <= classes <= dim");
  Rng rng(seed);
  FeatureBasis b;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& u : b.vectors) {
        const double p = dot(v, u);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * u[i];
      }
    const double n = norm(v);
    if (n < 1e-8) throw DomainError("degenerate basis draw");
    for (auto& x : v) x /= n;
    b.vectors.push_back(std::move(v));
  }
  return b;
}

inline void check_basis(const FeatureBasis& b) {
  if (b.classes() == 0) throw DomainError("empty basis");
  for (const auto& v : b.vectors)
    if (v.size() != b.dim()) throw DomainError("basis vectors differ in dimension");
  if (b.orthonormality_error() > 1e-9) throw DomainError("degenerate basis: vectors are not orthonormal");
}

struct MultiViewSample {
  std::vector<double> weights;
  std::vector<double> feature;
};

// feature = sum_c weights[c] * v_c
inline MultiViewSample make_multiview_sample(std::span<const double> weights, const FeatureBasis& basis) {
  if (weights.size() != basis.classes())
    throw DomainError("expected " + std::to_string(basis.classes()) + " weights, got " +
                      std::to_string(weights.size()));
  MultiViewSample s;
  s.weights.assign(weights.begin(), weights.end());
  s.feature.assign(basis.dim(), 0.0);
  for (std::size_t c = 0; c < weights.size(); ++c)
    for (std::size_t i = 0; i < basis.dim(); ++i) s.feature[i] += weights[c] * basis.vectors[c][i];
  return s;
}

struct LinearClassifier {
  std::vector<std::vector<double>> W;  // classes x dim
  std::vector<double> b;

  // W_i = v_i^T, b = 0.
  static LinearClassifier aligned(const FeatureBasis& basis) {
    LinearClassifier c;
    c.W = basis.vectors;
    c.b.assign(basis.classes(), 0.0);
    return c;
  }

  // Reads W and b out of a trained linear-architecture model.
  static LinearClassifier from_model(const ModelCheckpoint& m) {
    if (m.spec.arch != Arch::linear) throw DomainError("not a linear model");
    const std::size_t K = m.num_classes(), d = m.spec.input_dim();
    LinearClassifier c;
    c.W.assign(K, std::vector<double>(d));
    c.b.assign(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < d; ++i) c.W[k][i] = m.params[k * d + i];
      c.b[k] = m.params[K * d + k];
    }
    return c;
  }
};

// z = W f + b
inline std::vector<double> linear_logits(const LinearClassifier& clf, std::span<const double> f) {
  if (clf.W.size() != clf.b.size()) throw DomainError("classifier rows and bias differ in length");
  std::vector<double> z(clf.W.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    if (clf.W[k].size() != f.size()) throw DomainError("feature dimension does not match classifier");
    z[k] = dot(clf.W[k], f) + clf.b[k];
  }
  return z;
}

enum class SurrogateSampling { spanning, v1_only };

inline std::string to_string(SurrogateSampling s) { return s == SurrogateSampling::spanning ? "spanning" : "v1_only"; }

struct TransferConfig {
  int dim = 16;
  int per_class = 200;
  int surrogate_per_class = 200;
  double eps_max = 0.1;   // off-class weight ~ U(0, eps_max)
  double noise = 0.05;    // isotropic noise in the orthogonal complement
  std::vector<double> w0_grid{0.0, 0.2, 0.5, 0.8, 1.0};
  int seeds = 20;
  std::uint64_t seed = 0;
  SurrogateSampling sampling = SurrogateSampling::spanning;
  Arch arch = Arch::linear;  // mlp swaps in a nonlinear source and surrogate; cosines are then left at 0
  std::vector<int> widths{32, 16};
  TrainConfig train{.epochs = 40, .batch_size = 32, .lr_initial = 0.1, .lr_decay_every = 0, .momentum = 0.9,
                    .weight_decay = 0.0, .seed = 0};
};

struct TransferRun {
  double w0 = 0.0;
  int seed = 0;
  bool source_predicts_assigned = false;
  bool transferred = false;
  double source_cos0 = 0.0, source_cos1 = 0.0;
  double surrogate_cos0 = 0.0, surrogate_cos1 = 0.0;
};

struct TransferReport {
  SurrogateSampling sampling = SurrogateSampling::spanning;
  std::vector<TransferRun> runs;

  // Fraction of seeds at which the surrogate predicted the assigned label.
  double rate(double w0) const {
    std::size_t n = 0, hit = 0;
    for (const auto& r : runs)
      if (r.w0 == w0) {
        ++n;
        hit += r.transferred;
      }
    return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
  }
};

namespace detail {

// Gaussian noise projected onto the orthogonal complement of the basis span.
inline std::vector<double> complement_noise(const FeatureBasis& basis, double sigma, Rng& rng) {
  std::vector<double> z(basis.dim());
  for (auto& v : z) v = rng.normal(0.0, sigma);
  for (const auto& u : basis.vectors) {
    const double p = dot(z, u);
    for (std::size_t k = 0; k < z.size(); ++k) z[k] -= p * u[k];
  }
  return z;
}

// Two-class clean data: class 0 has weights (1, eps), class 1 (eps, 1),
// plus Gaussian noise projected onto the orthogonal complement of span(v0, v1).
inline Dataset clean_samples(const FeatureBasis& basis, int per_class, double eps_max, double noise, Rng& rng,
                             bool only_class1, std::size_t first_id) {
  Dataset d;
  d.name = "multiview";
  d.input_shape = {static_cast<int>(basis.dim())};
  d.num_classes = 2;
  std::vector<float> x(basis.dim());
  std::size_t id = first_id;
  for (int i = 0; i < per_class; ++i)
    for (int c = only_class1 ? 1 : 0; c < 2; ++c) {
      const double eps = rng.uniform(0.0, eps_max);
      const double w[2] = {c == 0 ? 1.0 : eps, c == 0 ? eps : 1.0};
      const auto s = make_multiview_sample(w, basis);
      const auto z = complement_noise(basis, noise, rng);
      for (std::size_t k = 0; k < x.size(); ++k) x[k] = static_cast<float>(s.feature[k] + z[k]);
      d.push_back(x, c, id++);
    }
  return d;
}

}  // namespace detail

// For every w0 in the grid and every seed: train a linear source on clean
// data plus one class-1 trigger with weights (w0, 1 - w0) relabeled to class
// 0 (plain joint training), extract it with soft labels, and record whether
// the surrogate also predicts class 0 on the trigger.
inline TransferReport run_transfer_experiment(const TransferConfig& cfg) {
  if (cfg.dim < 2) throw DomainError("feature dimension must be >= 2");
  TransferReport rep;
  rep.sampling = cfg.sampling;
  ModelSpec spec;
  spec.arch = cfg.arch;
  spec.num_classes = 2;
  spec.input_shape = {cfg.dim};
  if (cfg.arch == Arch::mlp) spec.widths = cfg.widths;
  if (cfg.arch == Arch::conv) throw DomainError("the transfer experiment supports linear and mlp models");
  for (double w0 : cfg.w0_grid) {
    for (int s = 0; s < cfg.seeds; ++s) {
      const std::uint64_t base = substream(cfg.seed, "transfer/" + std::to_string(s));
      const auto basis = make_basis(2, cfg.dim, substream(base, "basis"));
      check_basis(basis);
      Rng rng(substream(base, "data"));
      const auto clean = detail::clean_samples(basis, cfg.per_class, cfg.eps_max, cfg.noise, rng, false, 0);
      // The trigger is drawn like any other sample: exact span part plus
      // its own off-span noise.
      const double tw[2] = {w0, 1.0 - w0};
      const auto trig = make_multiview_sample(tw, basis);
      const auto tnoise = detail::complement_noise(basis, cfg.noise, rng);
      Dataset dt = clean.like("multiview/trigger");
      std::vector<float> tx(basis.dim());
      for (std::size_t k = 0; k < tx.size(); ++k) tx[k] = static_cast<float>(trig.feature[k] + tnoise[k]);
      dt.push_back(tx, 0, 1000000);
      Rng srng(substream(base, "surrogate"));
      const auto surrogate_data =
          detail::clean_samples(basis, cfg.surrogate_per_class, cfg.eps_max, cfg.noise, srng,
                                cfg.sampling == SurrogateSampling::v1_only, 2000000);

      WatermarkTrainConfig wc;
      wc.base = cfg.train;
      wc.base.seed = substream(base, "source");
      wc.alpha = 0.0;
      wc.reg_mode = RegMode::none;
      const auto source = train_watermarked(spec, clean, dt, wc);

      AttackConfig ac;
      ac.kind = AttackKind::extract_soft;
      ac.surrogate_spec = spec;
      ac.train = cfg.train;
      ac.train.seed = substream(base, "attack");
      const BlackBoxModel bb(source);
      const auto surrogate = extract_soft(bb, surrogate_data, ac).model;

      TransferRun run;
      run.w0 = w0;
      run.seed = s;
      run.source_predicts_assigned = predict(source, dt)[0] == 0;
      run.transferred = predict(surrogate, dt)[0] == 0;
      if (cfg.arch == Arch::linear) {
        const auto sc = LinearClassifier::from_model(source);
        const auto uc = LinearClassifier::from_model(surrogate);
        run.source_cos0 = cosine(sc.W[0], basis.vectors[0]);
        run.source_cos1 = cosine(sc.W[1], basis.vectors[1]);
        run.surrogate_cos0 = cosine(uc.W[0], basis.vectors[0]);
        run.surrogate_cos1 = cosine(uc.W[1], basis.vectors[1]);
      }
      rep.runs.push_back(run);
    }
  }
  return rep;
}

// Delimited table: one row per (w0, seed).
inline std::string format_transfer_report(const TransferReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "# mat transfer report v1 sampling=" << to_string(r.sampling) << "\n";
  os << "w0,seed,transferred,source_predicts_assigned,source_cos0,source_cos1,surrogate_cos0,surrogate_cos1\n";
  for (const auto& x : r.runs)
    os << x.w0 << ',' << x.seed << ',' << x.transferred << ',' << x.source_predicts_assigned << ',' << x.source_cos0
       << ',' << x.source_cos1 << ',' << x.surrogate_cos0 << ',' << x.surrogate_cos1 << "\n";
  return os.str();
}

inline void write_transfer_report(const TransferReport& r, const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw PersistenceError("cannot write " + p.string());
  out << format_transfer_report(r);
}

}  // namespace mat::sim
