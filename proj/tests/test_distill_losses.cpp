#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ufen/distill_losses.hpp"
#include "ufen/gradcheck.hpp"

using namespace ufen;
using namespace ufen::distill;
using heads::kDetectorChannels;

namespace {

Tensor random_logits(Rng& rng, std::size_t hc, std::size_t wc, double scale = 2.0) {
  Tensor t({hc, wc, kDetectorChannels});
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST(DistillLosses, KlPinnedValue) {
  Tensor teacher({1, 1, kDetectorChannels});
  teacher[0] = std::log(2.0);
  const Tensor student({1, 1, kDetectorChannels});
  const double expect = std::log(65.0 / 33.0) / 33.0 + 32.0 / 33.0 * std::log(65.0 / 66.0);
  const double value = kl_loss_grad(teacher, student).value;
  EXPECT_NEAR(value, 0.0057370, 1e-6);
  EXPECT_NEAR(value, expect, 1e-15);
}

TEST(DistillLosses, KlMatchesDirectEvaluation) {
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    const Tensor teacher = random_logits(rng, 2, 3), student = random_logits(rng, 2, 3);
    EXPECT_NEAR(kl_loss_grad(teacher, student).value, oracle::kl(teacher, student), 1e-12);
  }
}

TEST(DistillLosses, KlVanishesForIdenticalInputs) {
  Rng rng(2);
  const Tensor logits = random_logits(rng, 3, 3);
  const auto r = kl_loss_grad(logits, logits);
  EXPECT_NEAR(r.value, 0.0, 1e-15);
  for (double g : r.grad.data()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(DistillLosses, PktTwoCellsIsExactlyZero) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const std::size_t hc = t % 2 ? 1 : 2, wc = t % 2 ? 2 : 1;
    EXPECT_EQ(pkt_loss_grad(random_logits(rng, hc, wc), random_logits(rng, hc, wc)).value, 0.0);
  }
}

TEST(DistillLosses, PktVanishesForIdenticalInputs) {
  Rng rng(4);
  for (auto [hc, wc] : {std::pair<std::size_t, std::size_t>{1, 3}, {2, 2}, {3, 4}, {5, 5}, {8, 8}}) {
    const Tensor logits = random_logits(rng, hc, wc);
    EXPECT_LT(std::abs(pkt_loss_grad(logits, logits).value), 1e-12);
  }
}

TEST(DistillLosses, PktMatchesBruteForce) {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const std::size_t hc = 1 + rng.index(3), wc = 3 + rng.index(3);
    const Tensor teacher = random_logits(rng, hc, wc), student = random_logits(rng, hc, wc);
    const double got = pkt_loss_grad(teacher, student).value;
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, oracle::pkt(teacher, student), 1e-12);
  }
}

TEST(DistillLosses, PktRejectsSingleCell) {
  EXPECT_THROW(pkt_loss_grad(Tensor({1, 1, kDetectorChannels}), Tensor({1, 1, kDetectorChannels})), Error);
}

TEST(DistillLosses, PktSubsetIsDeterministicAndSorted) {
  const PktOptions opt{10, 99};
  const auto a = pkt_cell_subset(50, opt), b = pkt_cell_subset(50, opt);
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_EQ(pkt_cell_subset(8, opt).size(), 8u);
}

TEST(DistillLosses, LpIsLinearInPktWeight) {
  Rng rng(6);
  const Tensor teacher = random_logits(rng, 2, 3), student = random_logits(rng, 2, 3);
  const double l0 = lp_loss(teacher, student, {1.0, 0.0}).value;
  const double l1 = lp_loss(teacher, student, {1.0, 1.0}).value;
  const double l3 = lp_loss(teacher, student, {1.0, 3.0}).value;
  EXPECT_NEAR(l0, kl_loss_grad(teacher, student).value, 1e-15);
  EXPECT_NEAR(l3 - l0, 3.0 * (l1 - l0), 1e-12);
}

TEST(DistillLosses, TotalLossCombinesTerms) {
  const LossValueGrad lp{0.5, Tensor({1, 1, kDetectorChannels}, 0.1)};
  const ScalarGrads ld{0.25, {Tensor({2, 4}, 1.0)}};
  const auto total = total_loss(lp, ld, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(total.value, 0.75);
  const auto scaled = total_loss(lp, ld, {2.0, 1.0});
  EXPECT_DOUBLE_EQ(scaled.value, 1.0);
  ASSERT_EQ(scaled.grads.size(), 2u);
  EXPECT_EQ(scaled.grads[1][0], 2.0);
  EXPECT_EQ(scaled.grads[0][0], 0.1);
  EXPECT_THROW(total_loss(lp, ld, {-1.0, 1.0}), Error);
}

TEST(DistillLosses, ShapeMismatchIsRejected) {
  EXPECT_THROW(kl_loss_grad(Tensor({1, 2, kDetectorChannels}), Tensor({2, 1, kDetectorChannels})), Error);
}

TEST(DistillLosses, GradientsMatchFiniteDifferences) {
  const gradcheck::Options opt{5, 31, false};
  for (const auto& r : {gradcheck::kl_suite(opt), gradcheck::pkt_suite(opt), gradcheck::lp_suite(opt)})
    EXPECT_TRUE(r.passed) << r.name << " worst " << r.worst_error;
}

TEST(DistillLosses, CorruptedGradientIsDetected) {
  const gradcheck::Options opt{3, 31, true};
  EXPECT_FALSE(gradcheck::kl_suite(opt).passed);
  EXPECT_FALSE(gradcheck::pkt_suite(opt).passed);
}
