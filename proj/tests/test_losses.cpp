// Copyright 2026 The safe-cf Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "safe/errors.hpp"
#include "safe/losses.hpp"

using namespace safe;

namespace {

double scalar(const torch::Tensor& t) { return t.item<double>(); }

torch::Tensor t1(double v) { return torch::full({1, 1, 1, 1}, v, torch::kDouble); }

}  // namespace

// --- interpolate ------------------------------------------------------------

TEST(Interpolate, AlphaOneGivesQuery) {
  auto x = fixture::uniform({2, 3, 4, 4}, 1);
  auto x_cf = fixture::uniform({2, 3, 4, 4}, 2);
  EXPECT_TRUE(torch::equal(interpolate(x, x_cf, 1.0).x_hat, x));
}

TEST(Interpolate, AlphaZeroGivesCounterfactual) {
  auto x = fixture::uniform({2, 3, 4, 4}, 1);
  auto x_cf = fixture::uniform({2, 3, 4, 4}, 2);
  EXPECT_TRUE(torch::equal(interpolate(x, x_cf, 0.0).x_hat, x_cf));
}

TEST(Interpolate, ScalarArithmetic) {
  auto r = interpolate(t1(0.2), t1(0.8), 0.25);
  EXPECT_NEAR(scalar(r.x_hat), 0.65, 1e-12);
}

TEST(Interpolate, PerSampleAlphaMatchesOracle) {
  auto x = fixture::uniform({3, 2, 2, 2}, 3);
  auto x_cf = fixture::uniform({3, 2, 2, 2}, 4);
  auto alpha = torch::tensor({0.1, 0.5, 0.9}, torch::kDouble);
  auto got = oracle::to_vec(interpolate(x, x_cf, alpha).x_hat);
  auto want = oracle::interpolate(oracle::to_vec(x), oracle::to_vec(x_cf), oracle::to_vec(alpha), 8);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
}

TEST(Interpolate, RejectsShapeMismatch) {
  EXPECT_THROW(interpolate(torch::zeros({1, 3, 4, 4}), torch::zeros({1, 3, 4, 5}), 0.5), ShapeError);
  EXPECT_THROW(interpolate(torch::zeros({2, 3, 4, 4}), torch::zeros({2, 3, 4, 4}), torch::ones({3})),
               ShapeError);
}

// --- gradient penalty -------------------------------------------------------

TEST(GradientPenalty, ConstantCriticGivesOne) {
  Critic constant = [](const torch::Tensor& v) { return torch::full({v.size(0)}, 3.0, v.options()); };
  EXPECT_DOUBLE_EQ(scalar(gradient_penalty(constant, fixture::uniform({2, 1, 2, 2}, 1))), 1.0);
}

TEST(GradientPenalty, LinearSumCritic) {
  Critic sum = [](const torch::Tensor& v) { return v.flatten(1).sum(1); };
  // k = 4: gradient norm 2, penalty (2 - 1)^2.
  EXPECT_NEAR(scalar(gradient_penalty(sum, fixture::uniform({3, 1, 2, 2}, 2))), 1.0, 1e-12);
  // k = 1: gradient norm 1, penalty 0.
  EXPECT_NEAR(scalar(gradient_penalty(sum, fixture::uniform({3, 1, 1, 1}, 3))), 0.0, 1e-12);
}

TEST(GradientPenalty, MatchesFiniteDifferencesOnRandomCritics) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    torch::manual_seed(seed);
    auto w1 = torch::randn({5, 12}, torch::kDouble);
    auto w2 = torch::randn({5}, torch::kDouble);
    Critic critic = [&](const torch::Tensor& v) { return torch::tanh(v.flatten(1).matmul(w1.t())).matmul(w2); };
    auto x_hat = fixture::uniform({2, 3, 2, 2}, seed + 100);
    const double got = scalar(gradient_penalty(critic, x_hat));
    auto single = [&](const oracle::Vec& s) {
      return scalar(critic(oracle::to_tensor(s, {1, 3, 2, 2})));
    };
    const double want = oracle::gradient_penalty_fd(single, oracle::to_vec(x_hat), 2);
    EXPECT_LE(oracle::rel_err(got, want), 1e-3) << "seed " << seed;
  }
}

TEST(GradientPenalty, NonNegativeAndZeroOnlyAtUnitNorm) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(0.1, 3.0);
  for (int i = 0; i < 50; ++i) {
    const double c = scale(rng);
    Critic critic = [c](const torch::Tensor& v) { return c * v.flatten(1).select(1, 0); };
    const double gp = scalar(gradient_penalty(critic, fixture::uniform({2, 1, 2, 2}, i)));
    EXPECT_GE(gp, 0.0);
    EXPECT_NEAR(gp, (c - 1) * (c - 1), 1e-12);
  }
  Critic unit = [](const torch::Tensor& v) { return v.flatten(1).select(1, 0); };
  EXPECT_EQ(scalar(gradient_penalty(unit, fixture::uniform({2, 1, 2, 2}, 9))), 0.0);
}

TEST(GradientPenalty, RejectsNonFiniteGradient) {
  Critic bad = [](const torch::Tensor& v) { return (v.flatten(1) * std::nan("")).sum(1); };
  EXPECT_THROW(gradient_penalty(bad, fixture::uniform({1, 1, 2, 2}, 1)), NumericalError);
}

TEST(GradientPenalty, DifferentiableInCriticParameters) {
  torch::manual_seed(3);
  Discriminator d(fixture::tiny_discriminator_config());
  d->to(torch::kDouble);
  auto gp = gradient_penalty(d, fixture::uniform({2, 3, 8, 8}, 4));
  gp.backward();
  bool any = false;
  for (const auto& p : d->parameters()) {
    if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0) any = true;
  }
  EXPECT_TRUE(any);
}

// --- adversarial ------------------------------------------------------------

TEST(AdversarialD, ZeroCritic) {
  auto [real, fake] = adversarial_d(torch::zeros({4}), torch::zeros({4}));
  EXPECT_EQ(scalar(real), 0.0);
  EXPECT_EQ(scalar(fake), 0.0);
}

TEST(AdversarialD, BatchMeans) {
  auto [real, fake] = adversarial_d(torch::tensor({1.0, 0.5}, torch::kDouble), torch::tensor({0.2, 0.0}, torch::kDouble));
  EXPECT_NEAR(scalar(real), 0.75, 1e-12);
  EXPECT_NEAR(scalar(fake), 0.10, 1e-12);
}

TEST(AdversarialD, IdenticalInputsGiveEqualTerms) {
  torch::manual_seed(4);
  Discriminator d(fixture::tiny_discriminator_config());
  auto x = fixture::uniform({3, 3, 8, 8}, 5, torch::kFloat);
  auto [real, fake] = adversarial_d(d, x, x.clone());
  EXPECT_EQ(scalar(real), scalar(fake));
}

// --- classification ---------------------------------------------------------

TEST(ClassificationLoss, Examples) {
  EXPECT_DOUBLE_EQ(classification_loss(ClassProbabilities{{0.0, 1.0}, 1}, 1), 0.0);
  EXPECT_NEAR(classification_loss(ClassProbabilities{{0.5, 0.5}, 0}, 0), 0.693147, 1e-6);
  EXPECT_NEAR(classification_loss(ClassProbabilities{{1.0, 0.0}, 0}, 1), 27.631021, 1e-6);
  auto probs = torch::tensor({{0.5, 0.5}, {1.0, 0.0}}, torch::kDouble);
  EXPECT_NEAR(scalar(classification_loss(probs, torch::tensor({0, 1}))), (std::log(2.0) - std::log(1e-12)) / 2, 1e-9);
}

TEST(ClassificationLoss, RejectsBadLabelOrShape) {
  EXPECT_THROW(classification_loss(ClassProbabilities{{0.5, 0.5}, 0}, 2), InvalidRequest);
  EXPECT_THROW(classification_loss(torch::ones({2, 2}), torch::tensor({0, 1, 0})), ShapeError);
}

// --- reconstruction and fuse ------------------------------------------------

TEST(ReconstructionLoss, PerfectCycleIsZero) {
  auto x = fixture::uniform({2, 3, 4, 4}, 1);
  auto s = fixture::uniform({2, 1, 4, 4}, 2);
  EXPECT_EQ(scalar(reconstruction_loss(x, s, x.clone(), s.clone())), 0.0);
}

TEST(ReconstructionLoss, SinglePixel) {
  EXPECT_NEAR(scalar(reconstruction_loss(t1(0.5), t1(1.0), t1(0.3), t1(0.5))), 0.35, 1e-12);
}

TEST(ReconstructionLoss, Symmetric) {
  auto x = fixture::uniform({2, 3, 4, 4}, 1), xr = fixture::uniform({2, 3, 4, 4}, 2);
  auto s = fixture::uniform({2, 1, 4, 4}, 3), sr = fixture::uniform({2, 1, 4, 4}, 4);
  EXPECT_DOUBLE_EQ(scalar(reconstruction_loss(x, s, xr, sr)), scalar(reconstruction_loss(xr, sr, x, s)));
}

TEST(FuseLoss, NoChangeIsZero) {
  auto x = fixture::uniform({2, 3, 4, 4}, 1);
  EXPECT_EQ(scalar(fuse_loss(x, x.clone(), fixture::uniform({2, 4, 4}, 2))), 0.0);
}

TEST(FuseLoss, FullySalientIsZero) {
  auto x = fixture::uniform({2, 3, 4, 4}, 1);
  EXPECT_EQ(scalar(fuse_loss(x, fixture::uniform({2, 3, 4, 4}, 2), torch::ones({2, 4, 4}, torch::kDouble))), 0.0);
}

TEST(FuseLoss, SinglePixel) {
  EXPECT_NEAR(scalar(fuse_loss(t1(0.5), t1(0.2), torch::full({1, 1, 1}, 0.25, torch::kDouble))), 0.225, 1e-12);
}

TEST(FuseLoss, RejectsShapeMismatch) {
  EXPECT_THROW(fuse_loss(torch::zeros({1, 3, 4, 4}), torch::zeros({1, 3, 4, 4}), torch::zeros({1, 5, 4})), ShapeError);
  EXPECT_THROW(fuse_loss(torch::zeros({1, 3, 4, 4}), torch::zeros({1, 3, 4, 3}), torch::zeros({1, 4, 4})), ShapeError);
}

TEST(FuseLoss, MonotoneInSaliency) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto x = fixture::uniform({2, 3, 5, 5}, seed), x_cf = fixture::uniform({2, 3, 5, 5}, seed + 50);
    auto s = fixture::uniform({2, 5, 5}, seed + 100);
    auto bigger = (s + fixture::uniform({2, 5, 5}, seed + 150) * (1 - s)).clamp(0, 1);
    EXPECT_LE(scalar(fuse_loss(x, x_cf, bigger)), scalar(fuse_loss(x, x_cf, s)) + 1e-15);
  }
}

TEST(FuseLoss, DecomposesMeanChange) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto x = fixture::uniform({2, 3, 5, 5}, seed), x_cf = fixture::uniform({2, 3, 5, 5}, seed + 50);
    auto s = fixture::uniform({2, 5, 5}, seed + 100);
    const double total = scalar((x - x_cf).abs().mean());
    EXPECT_NEAR(scalar(fuse_loss(x, x_cf, s)) + scalar(salient_change(x, x_cf, s)), total, 1e-12);
  }
}

// --- totals -----------------------------------------------------------------

TEST(TotalD, Examples) {
  LossWeights w;
  EXPECT_EQ(total_d(DiscriminatorTerms<double>{0, 0, 0, 0}, w), 0.0);
  EXPECT_NEAR(total_d(DiscriminatorTerms<double>{1.0, 0.3, 0.2, 0.04}, w), -0.1, 1e-12);
  auto doubled = w;
  doubled.lambda_gp *= 2;
  const DiscriminatorTerms<double> t{1.0, 0.3, 0.2, 0.04};
  EXPECT_NEAR(total_d(t, doubled) - total_d(t, w), 0.04 * w.lambda_gp, 1e-12);
}

TEST(TotalD, NamesFirstNonFiniteComponent) {
  try {
    total_d(DiscriminatorTerms<double>{1.0, std::nan(""), 0, INFINITY}, LossWeights{});
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("loss_fake"), std::string::npos);
  }
}

TEST(TotalG, Examples) {
  LossWeights w;
  EXPECT_EQ(total_g(GeneratorTerms<double>{0, 0, 0, 0, 0}, w), 0.0);
  EXPECT_NEAR(total_g(GeneratorTerms<double>{0.5, 0.7, 0.02, 0.1, 0.05}, w), 1.45, 1e-12);
  auto ablated = w;
  ablated.lambda_fuse = 0;
  EXPECT_EQ(total_g(GeneratorTerms<double>{0.5, 0.7, 0.02, 0.1, 0.05}, ablated),
            total_g(GeneratorTerms<double>{0.5, 0.7, 0.02, 0.1, 9.0}, ablated));
}

TEST(TotalG, ReconstructionSwitch) {
  LossWeights w;
  w.include_reconstruction = false;
  EXPECT_NEAR(total_g(GeneratorTerms<double>{0.5, 0.7, 0.02, 0.1, 0.05}, w), 0.45, 1e-12);
}

TEST(TotalG, RejectsNonFinite) {
  EXPECT_THROW(total_g(GeneratorTerms<double>{0, 0, 0, INFINITY, 0}, LossWeights{}), NumericalError);
}

TEST(LossWeights, DefaultsAndValidation) {
  LossWeights w;
  EXPECT_EQ(w.lambda_cls, 1.0);
  EXPECT_EQ(w.lambda_gp, 10.0);
  EXPECT_EQ(w.lambda_rec, 10.0);
  EXPECT_EQ(w.lambda_fuse, 1.0);
  w.lambda_rec = -1;
  EXPECT_THROW(w.validate(), ConfigError);
}

// --- oracle sweep -----------------------------------------------------------

// Every loss op on 100 random small tensors against the loop oracles.
TEST(LossOracles, RandomSweep) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::int64_t> dim(1, 4);
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const auto n = dim(rng), c = dim(rng), h = dim(rng), w = dim(rng), d = dim(rng) + 1;
    auto x = fixture::uniform({n, c, h, w}, trial * 7 + 1);
    auto x_cf = fixture::uniform({n, c, h, w}, trial * 7 + 2);
    auto s = fixture::uniform({n, h, w}, trial * 7 + 3);
    auto s_rec = fixture::uniform({n, h, w}, trial * 7 + 4);
    auto alpha = fixture::uniform({n}, trial * 7 + 5);
    auto probs = torch::softmax(fixture::uniform({n, d}, trial * 7 + 6) * 8 - 4, 1);
    std::vector<std::int64_t> labels;
    for (std::int64_t i = 0; i < n; ++i) labels.push_back(static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(d)));

    const auto vx = oracle::to_vec(x), vcf = oracle::to_vec(x_cf), vs = oracle::to_vec(s);
    auto got_interp = oracle::to_vec(interpolate(x, x_cf, alpha).x_hat);
    auto want_interp = oracle::interpolate(vx, vcf, oracle::to_vec(alpha), c * h * w);
    for (std::size_t i = 0; i < got_interp.size(); ++i) ASSERT_LE(oracle::rel_err(got_interp[i], want_interp[i]), 1e-6);

    ASSERT_LE(oracle::rel_err(scalar(fuse_loss(x, x_cf, s)), oracle::masked_change(vx, vcf, vs, n, c, h * w, true)), 1e-6);
    ASSERT_LE(oracle::rel_err(scalar(salient_change(x, x_cf, s)), oracle::masked_change(vx, vcf, vs, n, c, h * w, false)), 1e-6);
    ASSERT_LE(oracle::rel_err(scalar(reconstruction_loss(x, s, x_cf, s_rec)),
                              oracle::reconstruction_loss(vx, vs, vcf, oracle::to_vec(s_rec))),
              1e-6);
    ASSERT_LE(oracle::rel_err(scalar(classification_loss(probs, torch::tensor(labels))),
                              oracle::classification_loss(oracle::to_vec(probs), labels, d)),
              1e-6);
    auto src_real = fixture::uniform({n}, trial * 7 + 8) - 0.5, src_fake = fixture::uniform({n}, trial * 7 + 9) - 0.5;
    auto [lr, lf] = adversarial_d(src_real, src_fake);
    ASSERT_LE(oracle::rel_err(scalar(lr), oracle::mean(oracle::to_vec(src_real))), 1e-6);
    ASSERT_LE(oracle::rel_err(scalar(lf), oracle::mean(oracle::to_vec(src_fake))), 1e-6);

    // A quadratic critic has a closed-form input gradient: d/dv sum(v^2) = 2v.
    Critic quad = [](const torch::Tensor& v) { return v.flatten(1).square().sum(1); };
    double want_gp = 0.0;
    const auto per = static_cast<std::size_t>(c * h * w);
    for (std::int64_t b = 0; b < n; ++b) {
      double sq = 0.0;
      for (std::size_t i = 0; i < per; ++i) sq += 4 * vx[static_cast<std::size_t>(b) * per + i] * vx[static_cast<std::size_t>(b) * per + i];
      want_gp += (std::sqrt(sq) - 1) * (std::sqrt(sq) - 1);
    }
    ASSERT_LE(oracle::rel_err(scalar(gradient_penalty(quad, x)), want_gp / static_cast<double>(n)), 1e-6);

    std::uniform_real_distribution<double> u(0, 1);
    const DiscriminatorTerms<double> dt{u(rng), u(rng), u(rng), u(rng)};
    const GeneratorTerms<double> gt{u(rng), u(rng), u(rng), u(rng), u(rng)};
    LossWeights lw{u(rng), u(rng) * 10, u(rng) * 10, u(rng) * 5, true};
    ASSERT_LE(oracle::rel_err(total_d(dt, lw), -dt.loss_real + dt.loss_fake + lw.lambda_cls * dt.cls_real + lw.lambda_gp * dt.gp), 1e-6);
    ASSERT_LE(oracle::rel_err(total_g(gt, lw), -gt.adv_g + lw.lambda_cls * gt.cls_fake + lw.lambda_gp * gt.gp +
                                                   lw.lambda_rec * gt.rec + lw.lambda_fuse * gt.fuse),
              1e-6);
  }
}
