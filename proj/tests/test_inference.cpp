/*
 * Copyright 2026 The mteqtl authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mteqtl/inference.hpp"

#include <gtest/gtest.h>

#include <random>

#include "mteqtl/simulate.hpp"
#include "oracles.hpp"

using namespace mteqtl;

namespace {

ModelParams one_tissue_theta(double p_null) {
  ModelParams theta;
  theta.mu0 = Eigen::VectorXd::Zero(1);
  theta.delta = Eigen::MatrixXd::Identity(1, 1);
  theta.sigma = Eigen::MatrixXd::Constant(1, 1, 4.0);
  theta.p = Eigen::VectorXd(2);
  theta.p << p_null, 1.0 - p_null;
  return theta;
}

/// Exchangeable two-tissue model for tie and symmetry checks.
ModelParams symmetric_two_tissue() {
  ModelParams theta;
  theta.mu0 = Eigen::VectorXd::Zero(2);
  theta.delta = Eigen::MatrixXd::Identity(2, 2);
  theta.delta(0, 1) = theta.delta(1, 0) = 0.15;
  theta.sigma = Eigen::MatrixXd::Constant(2, 2, 3.0);
  theta.sigma(0, 0) = theta.sigma(1, 1) = 5.0;
  theta.p = Eigen::VectorXd(4);
  theta.p << 0.7, 0.1, 0.1, 0.1;
  return theta;
}

}  // namespace

TEST(Lfdr, DegenerateMixtures) {
  Eigen::VectorXd z(1);
  z << 1.4;
  EXPECT_DOUBLE_EQ(lfdr(z, one_tissue_theta(1.0)), 1.0);
  EXPECT_DOUBLE_EQ(lfdr(z, one_tissue_theta(0.0)), 0.0);
}

TEST(Lfdr, FrozenOneTissueValue) {
  Eigen::VectorXd z(1);
  z << 0.0;
  // phi(0;0,1) / (phi(0;0,1) + phi(0;0,5)), both weights one half.
  EXPECT_NEAR(lfdr(z, one_tissue_theta(0.5)), 0.6909830056250526, 1e-12);
}

TEST(Lfdr, WithinUnitIntervalOnRandomModels) {
  std::mt19937_64 rng(61);
  std::normal_distribution<double> normal(0.0, 4.0);
  for (int rep = 0; rep < 30; ++rep) {
    const int k = 1 + static_cast<int>(rng() % 4);
    const auto theta = oracle::random_theta(k, rng, /*allow_zero_mass=*/true);
    Eigen::VectorXd z(k);
    for (int i = 0; i < k; ++i) z(i) = normal(rng);
    const double eta = lfdr(z, theta);
    EXPECT_GE(eta, 0.0);
    EXPECT_LE(eta, 1.0);
  }
}

TEST(MarginalLfdr, FullSubsetEqualsLfdr) {
  std::mt19937_64 rng(62);
  std::normal_distribution<double> normal(0.0, 3.0);
  const auto theta = oracle::random_theta(3, rng);
  const std::vector<int> all = {0, 1, 2};
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd z(3);
    for (int i = 0; i < 3; ++i) z(i) = normal(rng);
    EXPECT_DOUBLE_EQ(marginal_lfdr(z, theta, all), lfdr(z, theta));
  }
}

TEST(MarginalLfdr, MatchesEnumerationOracle) {
  std::mt19937_64 rng(63);
  const auto theta = oracle::random_theta(2, rng);
  Eigen::VectorXd z(2);
  z << 2.4, -0.7;
  // Restricting to the first tissue: null configurations are those with
  // tissue 1 absent, i.e. masks 0 and 2.
  const auto post = oracle::enumeration_posterior({z(0), z(1)}, theta);
  const double expected = post[0] + post[2];
  EXPECT_NEAR(marginal_lfdr(z, theta, std::vector<int>{0}), expected, 1e-12);
}

TEST(MarginalLfdr, ZeroWhenSubsetAlwaysActive) {
  ModelParams theta = symmetric_two_tissue();
  theta.p << 0.0, 0.5, 0.0, 0.5;  // tissue 1 active in every supported config
  Eigen::VectorXd z(2);
  z << 0.2, 1.0;
  EXPECT_DOUBLE_EQ(marginal_lfdr(z, theta, std::vector<int>{0}), 0.0);
}

TEST(MarginalLfdr, RejectsEmptySubset) {
  const auto theta = symmetric_two_tissue();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(marginal_lfdr(z, theta, std::vector<int>{}), DataError);
}

TEST(ConfigSetLfdr, AllNonzeroFamilyEqualsLfdr) {
  std::mt19937_64 rng(64);
  const auto theta = oracle::random_theta(3, rng);
  std::vector<Configuration> family;
  for (std::uint32_t g = 1; g < 8; ++g) family.push_back(Configuration{g});
  Eigen::VectorXd z(3);
  z << 1.0, -2.0, 0.5;
  EXPECT_DOUBLE_EQ(config_set_lfdr(z, theta, family), lfdr(z, theta));
}

TEST(ConfigSetLfdr, ComplementarySplitsSumToOne) {
  std::mt19937_64 rng(65);
  std::normal_distribution<double> normal(0.0, 3.0);
  const auto theta = oracle::random_theta(3, rng);
  const std::vector<Configuration> family = {Configuration{1}, Configuration{4},
                                             Configuration{6}};
  std::vector<Configuration> complement;
  for (std::uint32_t g = 0; g < 8; ++g)
    if (g != 1 && g != 4 && g != 6) complement.push_back(Configuration{g});
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd z(3);
    for (int i = 0; i < 3; ++i) z(i) = normal(rng);
    const double a = config_set_lfdr(z, theta, family);
    const double b = config_set_lfdr(z, theta, complement);
    EXPECT_NEAR(a + b, 1.0, 1e-14);
  }
}

TEST(ConfigSetLfdr, MatchesEnumerationOracle) {
  std::mt19937_64 rng(66);
  const auto theta = oracle::random_theta(2, rng);
  Eigen::VectorXd z(2);
  z << 3.3, 2.1;
  const auto post = oracle::enumeration_posterior({z(0), z(1)}, theta);
  const double expected = post[0] + post[1] + post[2];  // complement of {11}
  EXPECT_NEAR(config_set_lfdr(z, theta, {Configuration{3}}), expected, 1e-12);
}

TEST(ConfigSetLfdr, RejectsEmptyAndFullFamilies) {
  const auto theta = symmetric_two_tissue();
  Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
  EXPECT_THROW(config_set_lfdr(z, theta, {}), DataError);
  std::vector<Configuration> everything;
  for (std::uint32_t g = 0; g < 4; ++g) everything.push_back(Configuration{g});
  EXPECT_THROW(config_set_lfdr(z, theta, everything), DataError);
}

TEST(StepUp, FrozenPrefixExample) {
  const std::vector<double> etas = {0.01, 0.03, 0.20};
  const StepUpResult out = stepup_reject(etas, 0.05);
  EXPECT_EQ(out.rejected_count, 2);
  EXPECT_EQ(out.rejected, (std::vector<char>{1, 1, 0}));
}

TEST(StepUp, NothingRejectedWhenAllAboveAlpha) {
  const std::vector<double> etas = {0.2, 0.9, 0.4};
  EXPECT_EQ(stepup_reject(etas, 0.1).rejected_count, 0);
}

TEST(StepUp, EverythingRejectedAtZero) {
  const std::vector<double> etas(100, 0.0);
  EXPECT_EQ(stepup_reject(etas, 0.05).rejected_count, 100);
}

TEST(StepUp, MatchesBruteForceOnRandomLists) {
  std::mt19937_64 rng(67);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t n = 1 + rng() % 120;
    std::vector<double> etas(n);
    for (double& v : etas) v = std::pow(uniform(rng), 2.5);
    const double alpha = 0.01 + 0.3 * uniform(rng);
    EXPECT_EQ(stepup_reject(etas, alpha).rejected_count,
              oracle::brute_force_stepup(etas, alpha));
  }
}

TEST(StepUp, RejectedSetIsThresholdConsistent) {
  std::mt19937_64 rng(68);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> etas(500);
  for (double& v : etas) v = uniform(rng);
  const StepUpResult out = stepup_reject(etas, 0.2);
  double max_rejected = -1.0, min_kept = 2.0, sum_rejected = 0.0;
  for (std::size_t i = 0; i < etas.size(); ++i) {
    if (out.rejected[i]) {
      max_rejected = std::max(max_rejected, etas[i]);
      sum_rejected += etas[i];
    } else {
      min_kept = std::min(min_kept, etas[i]);
    }
  }
  EXPECT_LE(max_rejected, min_kept);
  if (out.rejected_count > 0)
    EXPECT_LE(sum_rejected / static_cast<double>(out.rejected_count), 0.2);
}

TEST(StepUp, MonotoneInAlpha) {
  std::mt19937_64 rng(69);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> etas(400);
  for (double& v : etas) v = uniform(rng);
  std::int64_t prev = 0;
  for (double alpha : {0.01, 0.05, 0.1, 0.2, 0.4, 0.8}) {
    const std::int64_t count = stepup_reject(etas, alpha).rejected_count;
    EXPECT_GE(count, prev);
    prev = count;
  }
}

TEST(StepUp, StableTieOrderByIndex) {
  // The cutoff lands inside the tied block of 0.06s: prefix means run
  // 0.01, 0.035, 0.043, so exactly one of the ties is rejected, and the
  // stable order picks the one with the smaller original index.
  const std::vector<double> etas = {0.06, 0.01, 0.06};
  const StepUpResult out = stepup_reject(etas, 0.04);
  EXPECT_EQ(out.rejected_count, 2);
  EXPECT_EQ(out.rejected, (std::vector<char>{1, 1, 0}));
}

TEST(MapConfiguration, OneTissueAlwaysReturnsActive) {
  const auto theta = one_tissue_theta(0.99);
  Eigen::VectorXd z(1);
  z << 0.01;
  EXPECT_EQ(map_configuration(z, theta).mask, 1u);
}

TEST(MapConfiguration, SymmetricModelSwapsWithData) {
  const auto theta = symmetric_two_tissue();
  Eigen::VectorXd z12(2), z21(2);
  z12 << 5.0, 0.0;
  z21 << 0.0, 5.0;
  const std::uint32_t first = map_configuration(z12, theta).mask;
  const std::uint32_t second = map_configuration(z21, theta).mask;
  EXPECT_EQ(first, 1u);
  EXPECT_EQ(second, 2u);
}

TEST(MapConfiguration, MatchesEnumerationOnBenchmarkModel) {
  const ModelParams theta = paper_scenario().params;
  Eigen::VectorXd z(4);
  z << 6.0, 6.0, 6.0, 6.0;
  const auto weights = oracle::enumeration_weights({6.0, 6.0, 6.0, 6.0}, theta);
  std::uint32_t best = 1;
  for (std::uint32_t g = 2; g < 16; ++g)
    if (weights[g] > weights[best]) best = g;
  EXPECT_EQ(map_configuration(z, theta).mask, best);
}

TEST(MapConfiguration, TieBreaksToSmallestMask) {
  // Zero effect covariance makes every component identical, so all nonzero
  // masks tie bitwise and the smallest mask must win.
  ModelParams theta;
  theta.mu0 = Eigen::VectorXd::Zero(2);
  theta.delta = Eigen::MatrixXd::Identity(2, 2);
  theta.sigma = Eigen::MatrixXd::Zero(2, 2);
  theta.p = Eigen::VectorXd::Constant(4, 0.25);
  Eigen::VectorXd z(2);
  z << 2.0, -1.0;
  EXPECT_EQ(map_configuration(z, theta).mask, 1u);
}

TEST(MapConfiguration, NoAlternativeMassThrows) {
  auto theta = symmetric_two_tissue();
  theta.p << 1.0, 0.0, 0.0, 0.0;
  Eigen::VectorXd z(2);
  z << 4.0, 4.0;
  EXPECT_THROW(map_configuration(z, theta), NumericalError);
}

TEST(TissuePosterior, NullModelGivesZero) {
  auto theta = symmetric_two_tissue();
  theta.p << 1.0, 0.0, 0.0, 0.0;
  Eigen::VectorXd z(2);
  z << 3.0, 3.0;
  EXPECT_DOUBLE_EQ(tissue_posterior(z, theta, 0), 0.0);
  EXPECT_DOUBLE_EQ(tissue_posterior(z, theta, 1), 0.0);
}

TEST(TissuePosterior, ComplementOfMarginalLfdr) {
  std::mt19937_64 rng(70);
  std::normal_distribution<double> normal(0.0, 3.0);
  const auto theta = oracle::random_theta(3, rng);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd z(3);
    for (int i = 0; i < 3; ++i) z(i) = normal(rng);
    for (int k = 0; k < 3; ++k)
      EXPECT_NEAR(tissue_posterior(z, theta, k),
                  1.0 - marginal_lfdr(z, theta, std::vector<int>{k}), 1e-12);
  }
}

TEST(TissuePosterior, MatchesEnumerationOracle) {
  std::mt19937_64 rng(71);
  const auto theta = oracle::random_theta(2, rng);
  Eigen::VectorXd z(2);
  z << 1.8, -2.6;
  const auto post = oracle::enumeration_posterior({z(0), z(1)}, theta);
  EXPECT_NEAR(tissue_posterior(z, theta, 0), post[1] + post[3], 1e-12);
  EXPECT_NEAR(tissue_posterior(z, theta, 1), post[2] + post[3], 1e-12);
}

TEST(RunInference, TinyAlphaRejectsNothingOnNullData) {
  ModelParams truth = symmetric_two_tissue();
  Model model;
  model.panel.names = {"t1", "t2"};
  model.panel.dof = {50, 50};
  model.params = truth;
  model.params.p << 1.0, 0.0, 0.0, 0.0;
  const SimulatedDataset data = sample_dataset(model, 20000, 77);
  InferenceOptions opts;
  opts.alpha = 1e-6;
  const InferenceResult result = run_inference(data.zm, truth, opts);
  EXPECT_EQ(result.rejected_count, 0);
  EXPECT_TRUE(result.map_config.empty());
}

TEST(RunInference, RejectedPairsCarryDetail) {
  const Model model = paper_scenario();
  const SimulatedDataset data = sample_dataset(model, 50000, 78);
  InferenceOptions opts;
  const InferenceResult result = run_inference(data.zm, model.params, opts);
  EXPECT_GT(result.rejected_count, 0);
  std::int64_t flagged = 0;
  for (std::int64_t j = 0; j < result.pair_count(); ++j) {
    const bool rejected = result.rejected[static_cast<std::size_t>(j)];
    const std::int64_t col = result.detail_col[static_cast<std::size_t>(j)];
    if (rejected) {
      ++flagged;
      ASSERT_GE(col, 0);
      EXPECT_NE(result.map_config[static_cast<std::size_t>(col)].mask, 0u);
      for (int t = 0; t < 4; ++t) {
        EXPECT_GE(result.tissue_posteriors(t, col), 0.0);
        EXPECT_LE(result.tissue_posteriors(t, col), 1.0);
      }
    } else {
      EXPECT_EQ(col, -1);
    }
  }
  EXPECT_EQ(flagged, result.rejected_count);
}

TEST(RunInference, SubsetSpanningAllTissuesMatchesPlainRun) {
  const Model model = paper_scenario();
  const SimulatedDataset data = sample_dataset(model, 20000, 79);
  InferenceOptions plain;
  InferenceOptions spanning;
  spanning.subset = {0, 1, 2, 3};
  const InferenceResult a = run_inference(data.zm, model.params, plain);
  const InferenceResult b = run_inference(data.zm, model.params, spanning);
  ASSERT_EQ(a.pair_count(), b.pair_count());
  EXPECT_EQ(a.rejected_count, b.rejected_count);
  for (std::int64_t j = 0; j < a.pair_count(); ++j)
    EXPECT_EQ(a.lfdr[static_cast<std::size_t>(j)], b.lfdr[static_cast<std::size_t>(j)]);
}

TEST(RunInference, MapAllCoversEveryPair) {
  const Model model = paper_scenario();
  const SimulatedDataset data = sample_dataset(model, 5000, 80);
  InferenceOptions opts;
  opts.map_all = true;
  const InferenceResult result = run_inference(data.zm, model.params, opts);
  for (std::int64_t j = 0; j < result.pair_count(); ++j)
    EXPECT_EQ(result.detail_col[static_cast<std::size_t>(j)], j);
}

TEST(RunInference, MarginalEtaUsesFullVector) {
  // The subset statistic on the full model differs from the plain lfdr of
  // the marginalized model: it borrows strength from the other tissues.
  const Model model = paper_scenario();
  const SimulatedDataset data = sample_dataset(model, 2000, 81);
  InferenceOptions opts;
  opts.subset = {0};
  const InferenceResult full = run_inference(data.zm, model.params, opts);
  for (std::int64_t j = 0; j < 50; ++j) {
    const double direct =
        marginal_lfdr(data.zm.z.col(j), model.params, std::vector<int>{0});
    EXPECT_NEAR(full.lfdr[static_cast<std::size_t>(j)], direct, 1e-12);
  }
}
