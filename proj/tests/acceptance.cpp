// Acceptance gate: one PASS/FAIL line per criterion. With no arguments every
// criterion runs; otherwise only the listed numbers. Exit status is nonzero
// if any selected criterion fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "mat/attacks.hpp"
#include "mat/checkpoint.hpp"
#include "mat/config.hpp"
#include "mat/multiview.hpp"
#include "mat/pipeline.hpp"
#include "mat/stats.hpp"
#include "mat/trigger.hpp"
#include "mat/verification.hpp"
#include "mat/watermark.hpp"
#include "support.hpp"

namespace {

using namespace mat;
using namespace mat::testing;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a failed check.
  void check(bool ok, const std::string& what) {
    if (ok) return;
    failures += (failures.empty() ? "" : "; ") + what;
    pass = false;
  }

  std::string text() const { return failures.empty() ? detail.str() : "FAILED: " + failures + " | " + detail.str(); }

  std::string failures;
};

std::string num(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

std::filesystem::path runs_root() {
  static const auto root = fresh_dir("acceptance");
  return root;
}

// ---- 1: exact oracles ------------------------------------------------------------

void criterion_1(Outcome& o) {
  std::mt19937_64 g(101);
  constexpr int kCases = 200;
  std::uniform_int_distribution<int> kdist(2, 9);
  double worst_loss = 0.0, worst_bank = 0.0;
  int margin_bad = 0, label_bad = 0, select_bad = 0;

  for (int c = 0; c < kCases; ++c) {
    // logit margin and relabeling against explicit loops over j != y
    const int K = kdist(g);
    auto z = random_vector<double>(static_cast<std::size_t>(K), g, 3.0);
    if (c % 4 == 0) z[1] = z[0];  // exercise ties
    const auto y = static_cast<std::size_t>(g() % static_cast<std::uint64_t>(K));
    double best = -INFINITY;
    int runner = -1, weakest = -1;
    for (int j = 0; j < K; ++j) {
      if (static_cast<std::size_t>(j) == y) continue;
      best = std::max(best, z[static_cast<std::size_t>(j)] - z[y]);
      if (runner < 0 || z[static_cast<std::size_t>(j)] > z[static_cast<std::size_t>(runner)]) runner = j;
      if (weakest < 0 || z[static_cast<std::size_t>(j)] - z[y] < z[static_cast<std::size_t>(weakest)] - z[y]) weakest = j;
    }
    margin_bad += logit_margin(std::span<const double>(z), y) != best;
    Rng rng(1);
    label_bad += choose_label(std::span<const double>(z), static_cast<int>(y), LabelStrategy::runner_up, rng) != runner;
    label_bad += choose_label(std::span<const double>(z), static_cast<int>(y), LabelStrategy::min_confidence, rng) != weakest;

    // selection against a full sort (ties by ascending id)
    const std::size_t n = 20 + g() % 200, q = 1 + g() % n;
    std::vector<double> margins(n);
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      margins[i] = std::round(random_vector<double>(1, g, 4.0)[0] * 2.0) / 2.0;
      ids[i] = i * 7 + 3;
    }
    std::shuffle(ids.begin(), ids.end(), g);
    for (auto strategy : {SelectionStrategy::margin_top, SelectionStrategy::highest_confidence}) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t i = 0; i < n; ++i)
        all.emplace_back(strategy == SelectionStrategy::margin_top ? -margins[i] : margins[i], ids[i]);
      std::sort(all.begin(), all.end());
      std::vector<std::size_t> want;
      for (std::size_t i = 0; i < q; ++i) want.push_back(all[i].second);
      select_bad += select_by_margin(margins, ids, q, strategy, 0) != want;
    }

    // losses on random logits
    const std::size_t B = 1 + g() % 8, Kz = static_cast<std::size_t>(K);
    auto logits = random_vector<double>(B * Kz, g, 2.0);
    auto target = random_vector<double>(B * Kz, g, 2.0);
    std::vector<int> labels(B);
    for (auto& l : labels) l = static_cast<int>(g() % Kz);
    std::vector<double> target_lp(B * Kz);
    long double kl_ss = 0, kl_sr = 0;
    for (std::size_t s = 0; s < B; ++s) {
      const std::span<const double> zs(logits.data() + s * Kz, Kz), ts(target.data() + s * Kz, Kz);
      const auto p_sur = ref_softmax(zs), p_src = ref_softmax(ts);
      const long double lse = ref_log_sum_exp(ts);
      for (std::size_t j = 0; j < Kz; ++j) target_lp[s * Kz + j] = static_cast<double>(ts[j] - lse);
      kl_ss += ref_kl(p_sur, p_src);
      kl_sr += ref_kl(p_src, p_sur);
    }
    kl_ss /= static_cast<long double>(B);
    kl_sr /= static_cast<long double>(B);
    const std::span<const double> zsp(logits), tsp(target_lp);
    const auto ce_ref = ref_cross_entropy(zsp, Kz, labels);
    const double a = std::uniform_real_distribution<double>(0.0, 1.0)(g);
    auto err = [&](double got, long double want) {
      worst_loss = std::max(worst_loss, static_cast<double>(std::abs(got - want)));
    };
    err(extraction_loss(zsp, tsp, Kz, KlDirection::surrogate_source), kl_ss);
    err(extraction_loss(zsp, tsp, Kz, KlDirection::source_surrogate), kl_sr);
    err(distillation_loss(zsp, tsp, std::span<const int>(labels), Kz, a, KlDirection::source_surrogate),
        a * kl_sr + (1 - a) * ce_ref);
    {
      std::vector<double> p(Kz), q2(Kz);
      const auto ps = ref_softmax(zsp.subspan(0, Kz)), qs = ref_softmax(tsp.subspan(0, Kz));
      for (std::size_t j = 0; j < Kz; ++j) p[j] = static_cast<double>(ps[j]), q2[j] = static_cast<double>(qs[j]);
      err(kl_divergence(p, q2), ref_kl(ps, qs));
    }

    // joint loss: two separately averaged cross-entropies
    const auto spec = c % 2 ? probe_mlp() : probe_conv();
    const auto m = random_model<double>(spec, static_cast<std::uint64_t>(c));
    const std::size_t nc = 1 + g() % 6, nt = g() % 4;
    const auto cx = random_vector<double>(nc * spec.input_dim(), g), tx = random_vector<double>(nt * spec.input_dim(), g);
    std::vector<int> cy(nc), ty(nt);
    for (auto& v : cy) v = static_cast<int>(g() % 3);
    for (auto& v : ty) v = static_cast<int>(g() % 3);
    const auto zc = forward_logits(m, std::span<const double>(cx), nc);
    long double want = ref_cross_entropy(zc, 3, cy);
    if (nt) want += ref_cross_entropy(forward_logits(m, std::span<const double>(tx), nt), 3, ty);
    err(joint_loss(m, std::span<const double>(cx), std::span<const int>(cy), std::span<const double>(tx),
                   std::span<const int>(ty)),
        want);

    // feature regulariser: mean distance to bank means; missing classes skipped
    const std::size_t P = 1 + g() % 6, nk = 1 + g() % 6;
    FeatureBank bank;
    bank.means.assign(4, {});
    bank.counts.assign(4, 0);
    for (std::size_t k = 0; k < 4; ++k) {
      bank.means[k] = random_vector<double>(P, g);
      bank.counts[k] = (c + k) % 5 == 0 ? 0 : 1 + g() % 9;
    }
    const auto f = random_vector<double>(nk * P, g);
    std::vector<int> tgt(nk);
    for (auto& v : tgt) v = static_cast<int>(g() % 4);
    long double dist_sum = 0;
    for (std::size_t k = 0; k < nk; ++k) {
      const auto cls = static_cast<std::size_t>(tgt[k]);
      if (!bank.counts[cls]) continue;
      long double sq = 0;
      for (std::size_t j = 0; j < P; ++j) sq += std::pow(static_cast<long double>(f[k * P + j]) - bank.means[cls][j], 2);
      dist_sum += std::sqrt(sq);
    }
    ScopedWarningHandler quiet([](const std::string&) {});
    err(feature_reg_loss(std::span<const double>(f), P, std::span<const int>(tgt), bank),
        dist_sum / static_cast<long double>(nk));

    // feature bank against single-sample forwards and a two-pass mean
    auto data = random_dataset(spec.input_shape, 3, 20, static_cast<std::uint64_t>(c));
    for (int k = 0; k < 3; ++k) data.labels[static_cast<std::size_t>(k)] = k;
    const auto b = build_feature_bank(m, data);
    const std::size_t Pf = spec.feature_dim();
    for (int cls = 0; cls < 3; ++cls) {
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.labels[i] != cls) continue;
        const auto x = data.row(i);
        const std::vector<double> xd(x.begin(), x.end());
        rows.push_back(forward_features(m, std::span<const double>(xd), 1));
      }
      for (std::size_t j = 0; j < Pf; ++j) {
        long double m1 = 0;
        for (const auto& r : rows) m1 += r[j];
        m1 /= static_cast<long double>(rows.size());
        long double corr = 0;
        for (const auto& r : rows) corr += r[j] - m1;
        const long double mean = m1 + corr / static_cast<long double>(rows.size());
        worst_bank = std::max(worst_bank, static_cast<double>(std::abs(b.means[static_cast<std::size_t>(cls)][j] - mean)));
      }
      o.check(b.counts[static_cast<std::size_t>(cls)] == rows.size(), "feature bank count");
    }
  }
  o.check(margin_bad == 0, "logit_margin mismatches: " + std::to_string(margin_bad));
  o.check(label_bad == 0, "relabeling mismatches: " + std::to_string(label_bad));
  o.check(select_bad == 0, "selection mismatches: " + std::to_string(select_bad));
  o.check(worst_loss <= 1e-10, "loss error " + num(worst_loss));
  o.check(worst_bank <= 1e-10, "feature bank error " + num(worst_bank));
  o.detail << kCases << " random instances per oracle; max loss error " << num(worst_loss)
           << ", max bank error " << num(worst_bank);
}

// ---- 2: gradient checks ---------------------------------------------------------

void criterion_2(Outcome& o) {
  std::mt19937_64 g(202);
  double worst = 0.0;
  int checks = 0;
  const std::vector<std::pair<std::string, ModelSpec>> probes{
      {"linear10", probe_linear()}, {"mlp10", probe_mlp10()}, {"mlp", probe_mlp()}, {"conv", probe_conv()}};
  for (const auto& [name, spec] : probes) {
    for (int rep = 0; rep < 3; ++rep) {
      auto m = name == "mlp10" ? live_mlp10(static_cast<std::uint64_t>(rep)) : random_model<double>(spec, 7u + rep);
      const std::size_t K = m.num_classes(), D = spec.input_dim();
      auto cx = random_vector<double>(5 * D, g), tx = random_vector<double>(3 * D, g);
      if (name == "mlp10")
        for (auto* v : {&cx, &tx})
          for (auto& x : *v) x = std::abs(x) + 0.05;
      std::vector<int> cy(5), ty(3), to(3);
      for (auto& v : cy) v = static_cast<int>(g() % K);
      for (std::size_t k = 0; k < 3; ++k) {
        to[k] = static_cast<int>(g() % K);
        ty[k] = static_cast<int>((static_cast<std::size_t>(to[k]) + 1) % K);
      }
      auto bank_data = random_dataset(spec.input_shape, static_cast<int>(K), 30, 9u + rep);
      if (name == "mlp10")
        for (auto& x : bank_data.features) x = std::abs(x) + 0.05f;
      for (std::size_t k = 0; k < K; ++k) bank_data.labels[k] = static_cast<int>(k);
      const auto bank = build_feature_bank(m, bank_data);
      const JointBatch<double> batch{cx, cy, tx, ty, to};

      for (auto mode : {RegMode::none, RegMode::attract, RegMode::repel}) {
        for (double alpha : {0.01, 0.5}) {
          WatermarkTrainConfig cfg;
          cfg.alpha = mode == RegMode::none ? 0.0 : alpha;
          cfg.reg_mode = mode;
          std::vector<double> grad;
          watermark_objective(m, batch, &bank, cfg, 1e9, &grad);
          auto f = [&](const std::vector<double>& p) {
            auto mm = m;
            mm.params = p;
            return watermark_objective(mm, batch, &bank, cfg, 1e9, static_cast<std::vector<double>*>(nullptr)).total;
          };
          worst = std::max(worst, max_fd_relative_error(m.params, grad, f));
          ++checks;
        }
      }

      // attack losses: targets are victim log-probabilities, constants here
      const auto victim = random_model<double>(spec, 99u + rep);
      const auto zt = forward_logits(victim, std::span<const double>(cx), 5);
      std::vector<double> tlp(zt.size());
      for (std::size_t s = 0; s < 5; ++s) {
        const auto lp = log_softmax(std::span<const double>(zt.data() + s * K, K));
        std::copy(lp.begin(), lp.end(), tlp.begin() + static_cast<std::ptrdiff_t>(s * K));
      }
      std::vector<AttackConfig> attacks;
      for (auto dir : {KlDirection::surrogate_source, KlDirection::source_surrogate})
        for (double temp : {1.0, 2.0}) {
          AttackConfig a;
          a.kind = AttackKind::extract_soft;
          a.kl_direction = dir;
          a.temperature = temp;
          attacks.push_back(a);
        }
      AttackConfig hard;
      hard.kind = AttackKind::extract_hard;
      attacks.push_back(hard);
      AttackConfig dist;
      dist.kind = AttackKind::distill;
      dist.distill_alpha = 0.3;
      attacks.push_back(dist);
      for (const auto& a : attacks) {
        std::vector<double> grad;
        attack_batch_loss(m, std::span<const double>(cx), 5, std::span<const double>(tlp), std::span<const int>(cy), a,
                          &grad);
        auto f = [&](const std::vector<double>& p) {
          auto mm = m;
          mm.params = p;
          return attack_batch_loss(mm, std::span<const double>(cx), 5, std::span<const double>(tlp),
                                   std::span<const int>(cy), a);
        };
        worst = std::max(worst, max_fd_relative_error(m.params, grad, f));
        ++checks;
      }
    }
  }
  o.check(worst <= 1e-4, "max relative error " + num(worst));
  o.detail << checks << " gradient checks (watermark none/attract/repel, soft/hard/distill) on 10-parameter and "
           << "larger probes; max relative error " << num(worst);
}

// ---- 3: statistics -----------------------------------------------------------------

void criterion_3(Outcome& o) {
  constexpr int q = 100;
  double worst = 0.0;
  int compared = 0, monotone_bad = 0, flag_bad = 0;
  for (int hb = 0; hb <= q; ++hb) {
    double prev = 2.0;
    for (int hs = 0; hs <= q; ++hs) {
      std::vector<int> a(q, 0), b(q, 0);
      std::fill(a.begin(), a.begin() + hs, 1);
      std::fill(b.begin(), b.begin() + hb, 1);
      const auto r = verify_hits(a, b, 0.01);
      // independent reference: textbook Welch formulas and Boost's t distribution
      const double ma = hs / double(q), mb = hb / double(q);
      const double va = (hs * (1 - ma) * (1 - ma) + (q - hs) * ma * ma) / (q - 1);
      const double vb = (hb * (1 - mb) * (1 - mb) + (q - hb) * mb * mb) / (q - 1);
      const double se2 = va / q + vb / q;
      if (se2 == 0.0) {
        const auto want = ma == mb ? stats::Degeneracy::equal_constant : stats::Degeneracy::separated_constant;
        flag_bad += r.degeneracy != want;
        flag_bad += ma == mb ? r.p_value != 0.5 : r.p_value != (ma > mb ? 0.0 : 1.0);
      } else {
        const double t = (ma - mb) / std::sqrt(se2);
        const double df = se2 * se2 / ((va / q) * (va / q) / (q - 1) + (vb / q) * (vb / q) / (q - 1));
        const boost::math::students_t dist(df);
        const double p = boost::math::cdf(boost::math::complement(dist, t));
        worst = std::max(worst, std::abs(p - r.p_value));
        ++compared;
      }
      monotone_bad += r.p_value > prev + 1e-15;
      prev = r.p_value;
    }
  }
  o.check(worst <= 1e-9, "max |p - reference| " + num(worst));
  o.check(monotone_bad == 0, "p not monotone in suspect hits: " + std::to_string(monotone_bad));
  o.check(flag_bad == 0, "degenerate cases mishandled: " + std::to_string(flag_bad));
  o.detail << compared << " hit-count pairs at q = 100 vs Boost t CDF; max |dp| " << num(worst)
           << "; monotone in suspect hits";
}

// ---- 4: multi-view transfer ----------------------------------------------------------

void criterion_4(Outcome& o) {
  sim::TransferConfig cfg;
  cfg.seed = 4;
  const auto rep = sim::run_transfer_experiment(cfg);
  o.check(cfg.seeds == 20, "expected 20 seeds");
  o.check(rep.rate(0.8) == 1.0, "rate at w0=0.8 is " + num(rep.rate(0.8)));
  o.check(rep.rate(0.0) <= 0.6, "rate at w0=0 is " + num(rep.rate(0.0)));
  double prev = -1.0;
  std::ostringstream rates;
  for (double w0 : cfg.w0_grid) {
    const double r = rep.rate(w0);
    o.check(r >= prev, "rate decreases at w0=" + num(w0));
    prev = r;
    rates << (rates.tellp() > 0 ? " " : "") << num(w0) << ":" << num(r);
  }
  auto ablate = cfg;
  ablate.sampling = sim::SurrogateSampling::v1_only;
  const auto v1 = sim::run_transfer_experiment(ablate);
  o.detail << "transfer rate over 20 seeds {" << rates.str() << "}; v1-only surrogate data at w0=0.8: "
           << num(v1.rate(0.8));
}

// ---- 5 and 6: desk-scale pipeline -------------------------------------------------------

ExperimentConfig desk_config(std::uint64_t seed, const std::string& variant) {
  auto cfg = load_config(std::filesystem::path(MAT_SOURCE_DIR) / "configs" / "desk_mat.conf");
  reseed(cfg, seed);
  if (variant == "noreg" || variant == "random") {
    cfg.watermark.alpha = 0.0;
    cfg.watermark.reg_mode = RegMode::none;
    cfg.attacks.resize(1);  // soft-label extraction only
  }
  if (variant == "random") cfg.trigger.selection = SelectionStrategy::random;
  cfg.output_dir = runs_root() / (variant + "_seed" + std::to_string(seed));
  return cfg;
}

struct DeskRun {
  double source_test = 0, benign_test = 0, source_trigger = 0;
  std::map<std::string, VerificationReport> reports;
};

DeskRun run_desk(std::uint64_t seed, const std::string& variant) {
  const auto cfg = desk_config(seed, variant);
  const auto m = run_pipeline(cfg, {.until = Phase::verify, .sweeps = false});
  ArtifactStore store(cfg.output_dir);
  DeskRun r;
  const auto src = store.get_json(m.output("train-source", "metrics").path);
  const auto ben = store.get_json(m.output("train-benign", "metrics").path);
  r.source_test = src.at("test_acc").get<double>();
  r.source_trigger = src.at("trigger_acc").get<double>();
  r.benign_test = ben.at("test_acc").get<double>();
  for (const auto& a : cfg.attacks) {
    const auto k = to_string(a.kind);
    r.reports[k] = store.get_report(m.output("verify/" + k, "report").path);
  }
  return r;
}

void criterion_5(Outcome& o) {
  const auto r = run_desk(1, "mat");
  const double gap = r.benign_test - r.source_test;
  o.check(r.source_trigger >= 0.95, "source trigger accuracy " + num(r.source_trigger));
  o.check(gap <= 0.05, "clean accuracy gap " + num(gap));
  o.detail << "source trigger acc " << num(r.source_trigger) << ", source/benign test acc " << num(r.source_test)
           << "/" << num(r.benign_test) << " (gap " << num(100 * gap) << " points)";
}

void criterion_6(Outcome& o) {
  double mat = 0, noreg = 0, random = 0, hard = 0;
  int owned = 0, clean_owned = 0;
  std::ostringstream per_seed;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto m = run_desk(seed, "mat");
    const auto n = run_desk(seed, "noreg");
    const auto rnd = run_desk(seed, "random");
    const auto& soft = m.reports.at("extract_soft");
    mat += soft.suspect_trigger_acc / 3;
    hard += m.reports.at("extract_hard").suspect_trigger_acc / 3;
    noreg += n.reports.at("extract_soft").suspect_trigger_acc / 3;
    random += rnd.reports.at("extract_soft").suspect_trigger_acc / 3;
    owned += soft.owned;

    // An independently trained clean model: the attacker's data, own seed.
    const auto cfg = desk_config(seed, "mat");
    ArtifactStore store(cfg.output_dir);
    auto sur = store.get_dataset("data/surrogate.csv");
    auto src = store.get_dataset("data/source.csv");
    const auto benign = store.get_model("models/benign.ckpt");
    sur.input_shape = src.input_shape = benign.spec.input_shape;
    TrainConfig tc = cfg.train;
    tc.seed = substream(seed, "independent");
    const auto clean = train_supervised(benign.spec, sur, tc);
    const auto rep = verify_ownership(clean, benign, store.get_trigger("trigger/trigger_set.csv"), src, cfg.significance);
    clean_owned += rep.owned;
    per_seed << " s" << seed << "(mat " << num(soft.suspect_trigger_acc, 2) << " p=" << num(soft.p_value, 2)
             << ", noreg " << num(n.reports.at("extract_soft").suspect_trigger_acc, 2) << ", random "
             << num(rnd.reports.at("extract_soft").suspect_trigger_acc, 2) << ", clean p=" << num(rep.p_value, 2) << ")";
  }
  o.check(mat > noreg, "MAT " + num(mat) + " <= no-reg " + num(noreg));
  o.check(noreg > random, "no-reg " + num(noreg) + " <= random " + num(random));
  o.check(mat - random >= 0.20, "MAT - random = " + num(mat - random));
  o.check(mat >= hard, "soft " + num(mat) + " < hard " + num(hard));
  o.check(owned == 3, "MAT surrogates owned on " + std::to_string(owned) + "/3 seeds");
  o.check(clean_owned == 0, "independent clean model owned on " + std::to_string(clean_owned) + "/3 seeds");
  o.detail << "mean soft-label trigger acc MAT " << num(mat) << " > no-reg " << num(noreg) << " > random "
           << num(random) << "; MAT hard-label " << num(hard) << "; owned " << owned << "/3, clean model owned "
           << clean_owned << "/3;" << per_seed.str();
}

// ---- 7: distillation boundaries ------------------------------------------------------------

void criterion_7(Outcome& o) {
  std::mt19937_64 g(707);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const auto spec = c % 2 ? probe_mlp() : probe_conv();
    const auto m = random_model<double>(spec, static_cast<std::uint64_t>(c));
    const std::size_t n = 1 + g() % 8, K = 3;
    const auto x = random_vector<double>(n * spec.input_dim(), g);
    const auto tz = random_vector<double>(n * K, g, 2.0);
    std::vector<double> tlp(n * K);
    for (std::size_t s = 0; s < n; ++s) {
      const auto lp = log_softmax(std::span<const double>(tz.data() + s * K, K));
      std::copy(lp.begin(), lp.end(), tlp.begin() + static_cast<std::ptrdiff_t>(s * K));
    }
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(g() % K);
    AttackConfig soft, d1, d0;
    soft.kind = AttackKind::extract_soft;
    d1.kind = d0.kind = AttackKind::distill;
    d1.distill_alpha = 1.0;
    d0.distill_alpha = 0.0;
    const std::span<const double> xs(x), ts(tlp);
    const std::span<const int> ys(y);
    worst = std::max(worst, std::abs(attack_batch_loss(m, xs, n, ts, ys, d1) - attack_batch_loss(m, xs, n, ts, ys, soft)));
    const auto z = forward_logits(m, xs, n);
    worst = std::max(worst, std::abs(attack_batch_loss(m, xs, n, ts, ys, d0) -
                                     static_cast<double>(ref_cross_entropy(z, K, y))));
  }
  o.check(worst <= 1e-10, "per-batch difference " + num(worst));

  // Whole training runs under one seed coincide exactly as well.
  const auto data = random_dataset({1, 6, 6}, 3, 96, 7);
  ModelSpec spec{.arch = Arch::conv, .num_classes = 3, .input_shape = {1, 6, 6}, .widths = {4, 4, 6, 6}};
  const auto victim = init_model<float>(spec, 11);
  const BlackBoxModel bb(victim);
  AttackConfig a;
  a.surrogate_spec = spec;
  a.train = {.epochs = 3, .batch_size = 16, .lr_initial = 0.05, .seed = 5};
  const auto soft = extract_soft(bb, data, a);
  a.distill_alpha = 1.0;
  const auto d1 = distill(bb, data, a);
  a.distill_alpha = 0.0;
  const auto d0 = distill(bb, data, a);
  const auto sup = train_supervised(spec, data, a.train);
  o.check(d1.model.params == soft.model.params, "distill(1) trajectory differs from extract_soft");
  o.check(d0.model.params == sup.params, "distill(0) trajectory differs from supervised training");
  o.detail << "100 random batches, max per-batch difference " << num(worst)
           << "; 3-epoch trainings bitwise equal at both boundaries";
}

// ---- 8: fine-pruning ----------------------------------------------------------------------

void criterion_8(Outcome& o) {
  TextureParams tp;
  tp.per_class = 120;
  const auto all = make_textures(tp, 8);
  auto [train, val] = split_dataset(all, 0.6, 8, "train", "validation");
  ModelSpec spec{.arch = Arch::conv, .num_classes = 6, .input_shape = {1, 8, 8}, .widths = {8, 8, 16, 16}};
  const auto model = train_supervised(spec, train, {.epochs = 6, .batch_size = 32, .lr_initial = 0.05, .seed = 8});
  const auto before = serialize_checkpoint(model);
  ScopedWarningHandler quiet([](const std::string&) {});

  std::ostringstream summary;
  for (double thr : {0.0, 0.05, 1.0}) {
    AttackConfig a;
    a.kind = AttackKind::fineprune;
    a.prune_acc_drop = thr;
    a.train = {.epochs = 1, .batch_size = 32, .lr_initial = 0.01, .seed = 3};
    const auto res = fine_prune(model, train, val, a);
    const auto& rep = *res.prune;
    o.check(rep.base_accuracy - rep.pruned_accuracy <= thr + 1e-12, "threshold exceeded at " + num(thr));
    // the next channel in order would have crossed the threshold
    if (rep.pruned.size() < rep.order.size()) {
      auto trial = model;
      for (std::size_t i = 0; i <= rep.pruned.size(); ++i) prune_channel(trial, rep.order[i]);
      o.check(rep.base_accuracy - accuracy(trial, val) > thr, "pruning stopped early at " + num(thr));
    }
    o.check(std::equal(rep.pruned.begin(), rep.pruned.end(), rep.order.begin()), "pruned set is not an order prefix");
    if (thr >= 1.0) o.check(rep.pruned.size() == rep.order.size(), "threshold 1.0 must prune every channel");
    for (std::size_t c : rep.pruned) o.check(res.model.channel_mask[c] == 0, "pruned channel active after fine-tuning");
    summary << " thr " << num(thr) << ": " << rep.pruned.size() << "/" << rep.order.size() << " pruned (acc "
            << num(rep.base_accuracy) << " -> " << num(rep.pruned_accuracy) << ");";
  }
  o.check(serialize_checkpoint(model) == before, "victim modified");

  // Ordering oracle: with global average pooling, a channel's mean activation
  // over the batch is the mean of its feature column.
  int order_bad = 0;
  for (int c = 0; c < 20; ++c) {
    const auto m = random_model<float>(spec, static_cast<std::uint64_t>(c), 0.3);
    AttackConfig a;
    a.kind = AttackKind::fineprune;
    a.prune_acc_drop = 0.2;
    a.train.seed = static_cast<std::uint64_t>(c);
    const auto rows = prune_batch_rows(train, a);
    const auto got = channel_prune_order(channel_mean_activation(m, train, rows));
    const auto x = train.gather(rows);
    const auto f = forward_features(m, std::span<const float>(x), rows.size());
    std::vector<double> mean(16, 0.0);
    for (std::size_t s = 0; s < rows.size(); ++s)
      for (std::size_t ch = 0; ch < 16; ++ch) mean[ch] += f[s * 16 + ch];
    std::vector<std::size_t> want, left(16);
    std::iota(left.begin(), left.end(), std::size_t{0});
    while (!left.empty()) {  // selection sort, lowest index on ties
      std::size_t bi = 0;
      for (std::size_t i = 1; i < left.size(); ++i)
        if (mean[left[i]] < mean[left[bi]] - 1e-9 * std::max(1.0, std::abs(mean[left[bi]]))) bi = i;
      want.push_back(left[bi]);
      left.erase(left.begin() + static_cast<std::ptrdiff_t>(bi));
    }
    order_bad += got != want;
  }
  o.check(order_bad == 0, "channel order mismatches: " + std::to_string(order_bad) + "/20");
  o.detail << summary.str() << " channel order matches the activation-sort oracle on 20 random models";
}

// ---- 9: determinism and persistence --------------------------------------------------------

void criterion_9(Outcome& o) {
  auto cfg = parse_config(
      "seed = 9\ntextures.per_class = 80\ntrain.epochs = 3\nattacks = extract_soft, finetune, fineprune\n"
      "attack.epochs = 2\n");
  std::map<std::string, std::string> first;
  for (int rep = 0; rep < 2; ++rep) {
    cfg.output_dir = runs_root() / ("determinism_" + std::to_string(rep));
    const auto m = run_pipeline(cfg, {.until = Phase::verify, .sweeps = false});
    ArtifactStore store(cfg.output_dir);
    for (const auto& s : planned_stages(cfg)) {
      for (const auto& [name, ref] : m.latest_ok(s, m.config_hash())->outputs) {
        const auto bytes = store.read(ref.path);
        if (rep == 0) first[ref.path] = bytes;
        else o.check(first[ref.path] == bytes, ref.path + " differs between reruns");
      }
    }
  }
  std::size_t models = 0;
  const auto probe = random_dataset({1, 8, 8}, 6, 32, 99);
  for (const auto& [path, bytes] : first) {
    if (!path.ends_with(".ckpt")) continue;
    ++models;
    const auto m = deserialize_checkpoint(bytes);
    const auto again = deserialize_checkpoint(serialize_checkpoint(m));
    o.check(dataset_logits(m, probe) == dataset_logits(again, probe), path + " round trip changes logits");
    bool rejected = false;
    try {
      deserialize_checkpoint(bytes.substr(0, bytes.size() - 1));
    } catch (const PersistenceError&) {
      rejected = true;
    }
    o.check(rejected, "truncated " + path + " accepted");
  }
  o.detail << first.size() << " artifacts bitwise identical across two runs (" << models
           << " checkpoints, all verification reports); round trips preserve logits exactly";
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "exact oracles", 60, criterion_1},
      {2, "gradient checks", 60, criterion_2},
      {3, "Welch t-test statistics", 60, criterion_3},
      {4, "multi-view transfer theory", 300, criterion_4},
      {5, "watermark embedding", 900, criterion_5},
      {6, "directional extraction comparison", 3600, criterion_6},
      {7, "distillation boundary identities", 60, criterion_7},
      {8, "fine-pruning contract", 300, criterion_8},
      {9, "determinism and persistence", 300, criterion_9},
  };
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.push_back(std::stoi(argv[i]));
  bool ok = true;
  for (const auto& c : all) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.check(secs <= c.limit_seconds, "runtime " + num(secs) + " s over the " + num(c.limit_seconds) + " s limit");
    ok = ok && o.pass;
    std::printf("criterion %d (%s): %s [%.1f s, limit %.0f s] %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", secs,
                c.limit_seconds, o.text().c_str());
    std::fflush(stdout);
  }
  return ok ? 0 : 1;
}
