#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "mat/multiview.hpp"
#include "support.hpp"

using namespace mat;
using namespace mat::sim;
using namespace mat::testing;

TEST(Basis, IsOrthonormalAndSeeded) {
  for (int dim : {2, 5, 16}) {
    const auto b = make_basis(2, dim, 7);
    EXPECT_LT(b.orthonormality_error(), 1e-12);
    EXPECT_NO_THROW(check_basis(b));
    EXPECT_EQ(make_basis(2, dim, 7).vectors, b.vectors);
  }
  EXPECT_NE(make_basis(2, 8, 7).vectors, make_basis(2, 8, 8).vectors);
  EXPECT_THROW(make_basis(3, 2, 1), DomainError);
  FeatureBasis bad;
  bad.vectors = {{1.0, 0.0}, {1.0, 1.0}};
  EXPECT_THROW(check_basis(bad), DomainError);
}

TEST(Sample, WeightsAreRecoveredByProjection) {
  const auto b = make_basis(3, 6, 2);
  const std::vector<double> w{0.7, 0.2, -0.4};
  const auto s = make_multiview_sample(w, b);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(dot(s.feature, b.vectors[c]), w[c], 1e-14);
  EXPECT_THROW(make_multiview_sample(std::vector<double>{1.0}, b), DomainError);
}

TEST(AlignedClassifier, PredictsTheDominantView) {
  const auto b = make_basis(2, 8, 3);
  const auto clf = LinearClassifier::aligned(b);
  for (double w0 : {0.0, 0.2, 0.45, 0.55, 0.8, 1.0}) {
    const std::vector<double> w{w0, 1.0 - w0};
    const auto z = linear_logits(clf, make_multiview_sample(w, b).feature);
    EXPECT_NEAR(z[0], w0, 1e-14);
    EXPECT_NEAR(z[1], 1.0 - w0, 1e-14);
  }
  EXPECT_THROW(linear_logits(clf, std::vector<double>(3, 0.0)), DomainError);
}

TEST(LinearClassifier, FromModelMatchesForward) {
  const ModelSpec spec{.arch = Arch::linear, .num_classes = 2, .input_shape = {5}, .widths = {}};
  const auto m = init_model<float>(spec, 4);
  const auto clf = LinearClassifier::from_model(m);
  const std::vector<float> x{0.5f, -1.0f, 0.25f, 2.0f, 0.0f};
  const std::vector<double> xd(x.begin(), x.end());
  const auto want = forward_logits(m, std::span<const float>(x), 1);
  const auto got = linear_logits(clf, xd);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(got[k], want[k], 1e-5);
  EXPECT_THROW(LinearClassifier::from_model(init_model<float>(probe_mlp(), 1)), DomainError);
}

TEST(Transfer, DominantTriggerTransfersAndMinorityDoesNot) {
  TransferConfig cfg;
  cfg.seeds = 3;
  cfg.w0_grid = {0.0, 1.0};
  const auto rep = run_transfer_experiment(cfg);
  ASSERT_EQ(rep.runs.size(), 6u);
  EXPECT_EQ(rep.rate(1.0), 1.0);
  EXPECT_EQ(rep.rate(0.0), 0.0);
  for (const auto& r : rep.runs) EXPECT_TRUE(r.source_predicts_assigned);
  EXPECT_EQ(rep.rate(0.5), 0.0);  // not in the grid

  std::istringstream table(format_transfer_report(rep));
  std::string line;
  int lines = 0;
  while (std::getline(table, line)) ++lines;
  EXPECT_EQ(lines, 2 + 6);
}

TEST(Transfer, RejectsUnsupportedSettings) {
  TransferConfig cfg;
  cfg.seeds = 1;
  cfg.arch = Arch::conv;
  EXPECT_THROW(run_transfer_experiment(cfg), DomainError);
  cfg.arch = Arch::linear;
  cfg.dim = 1;
  EXPECT_THROW(run_transfer_experiment(cfg), DomainError);
}

TEST(Transfer, MlpVariantRuns) {
  TransferConfig cfg;
  cfg.seeds = 2;
  cfg.w0_grid = {1.0};
  cfg.arch = Arch::mlp;
  cfg.train.epochs = 10;
  const auto rep = run_transfer_experiment(cfg);
  ASSERT_EQ(rep.runs.size(), 2u);
  EXPECT_EQ(rep.runs[0].source_cos0, 0.0);
}
