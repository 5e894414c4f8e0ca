#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ufen/tensor_heads.hpp"

using namespace ufen;
using namespace ufen::heads;

TEST(TensorHeads, ZeroLogitsGiveUniformProbability) {
  const Tensor pmap = detector_probability_map(Tensor({2, 3, kDetectorChannels}));
  ASSERT_EQ(pmap.dim(0), 16u);
  ASSERT_EQ(pmap.dim(1), 24u);
  for (double v : pmap.data()) EXPECT_NEAR(v, 1.0 / 65.0, 1e-15);
}

TEST(TensorHeads, DustbinSaturationSuppressesPixels) {
  Tensor logits({1, 1, kDetectorChannels});
  logits[kDustbin] = 20.0;
  const Tensor prob = detector_probability_map(logits);
  for (double v : prob.data()) EXPECT_LT(v, 1e-7);
  EXPECT_GT(dustbin_probability(logits)(0, 0), 1.0 - 1e-6);
}

TEST(TensorHeads, SingleRaisedChannelLandsOnItsPixel) {
  Tensor logits({2, 2, kDetectorChannels});
  const std::size_t k = 19;  // row 2, column 3 of the cell
  logits(1, 0, k) = std::log(2.0);
  const Tensor pmap = detector_probability_map(logits);
  EXPECT_NEAR(pmap(8 + 2, 0 + 3), 2.0 / 66.0, 1e-12);
  EXPECT_NEAR(pmap(8 + 3, 0 + 2), 1.0 / 66.0, 1e-12);
  EXPECT_NEAR(pmap(2, 3), 1.0 / 65.0, 1e-12);
}

TEST(TensorHeads, CellProbabilitiesSumToOneAndIgnoreShifts) {
  Rng rng(11);
  Tensor logits({3, 2, kDetectorChannels});
  for (double& v : logits.data()) v = 4.0 * rng.normal();
  Tensor shifted = logits;
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t k = 0; k < kDetectorChannels; ++k) shifted[c * kDetectorChannels + k] += 3.0 * c - 7.0;
  const Tensor pmap = detector_probability_map(logits), pshift = detector_probability_map(shifted);
  const Tensor dust = dustbin_probability(logits);
  for (std::size_t cy = 0; cy < 3; ++cy)
    for (std::size_t cx = 0; cx < 2; ++cx) {
      double sum = dust(cy, cx);
      for (std::size_t k = 0; k < kCellPixels; ++k) sum += pmap(cy * 8 + k / 8, cx * 8 + k % 8);
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  for (std::size_t i = 0; i < pmap.size(); ++i) EXPECT_NEAR(pmap[i], pshift[i], 1e-12);
}

TEST(TensorHeads, RejectsMalformedLogits) {
  EXPECT_THROW(detector_probability_map(Tensor({2, 2, 64})), Error);
  Tensor bad({1, 1, kDetectorChannels});
  bad[3] = std::nan("");
  try {
    detector_probability_map(bad);
    ADD_FAILURE() << "expected a numerical error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Numerical);
  }
}

TEST(TensorHeads, BicubicMatchesDirectEvaluation) {
  Rng rng(5);
  Tensor coarse({3, 4, 6});
  for (double& v : coarse.data()) v = rng.normal();
  const auto dense = dense_descriptors(coarse);
  ASSERT_EQ(dense.field.dim(0), 24u);
  ASSERT_EQ(dense.field.dim(1), 32u);
  EXPECT_EQ(dense.degenerate, 0u);
  for (std::size_t y = 0; y < 24; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      const auto expect = oracle::bicubic_pixel(coarse, y, x);
      const auto got = dense.field.row(y, x);
      for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(got[c], expect[c], 1e-12);
    }
}

TEST(TensorHeads, DenseDescriptorsAreUnitWithOpenStraightThroughMask) {
  Rng rng(6);
  Tensor coarse({2, 2, 32});
  for (double& v : coarse.data()) v = 3.0 * rng.normal();
  const auto dense = dense_descriptors(coarse);
  for (std::size_t off = 0; off < dense.field.size(); off += 32) {
    double norm = 0.0;
    for (std::size_t c = 0; c < 32; ++c) norm += dense.field[off + c] * dense.field[off + c];
    EXPECT_NEAR(norm, 1.0, 1e-12);
  }
  for (double v : dense.field.data()) EXPECT_EQ(binarize_ste(v).mask, 1.0);
}

TEST(TensorHeads, ZeroDescriptorsBecomeFirstBasisVector) {
  const auto dense = dense_descriptors(Tensor({1, 1, 4}));
  EXPECT_EQ(dense.degenerate, 64u);
  EXPECT_EQ(dense.field(0, 0, 0), 1.0);
  EXPECT_EQ(dense.field(0, 0, 1), 0.0);
}

TEST(TensorHeads, StraightThroughExamples) {
  EXPECT_TRUE(binarize_ste(0.0).bit);
  EXPECT_FALSE(binarize_ste(-0.3).bit);
  EXPECT_EQ(binarize_ste(-0.3).mask, 1.0);
  EXPECT_TRUE(binarize_ste(1.5).bit);
  EXPECT_EQ(binarize_ste(1.5).mask, 0.0);
  EXPECT_EQ(binarize_ste(1.0).mask, 1.0);
}

TEST(TensorHeads, PackingRoundTripsAndUsesLittleEndianBitOrder) {
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    const auto d = oracle::random_descriptor(rng);
    const auto bytes = d.to_bytes();
    EXPECT_EQ(BinaryDescriptor::from_bytes(bytes), d);
  }
  BinaryDescriptor one;
  one.set(10, true);
  const auto bytes = one.to_bytes();
  EXPECT_EQ(bytes[1], 0x04);
  EXPECT_EQ(std::accumulate(bytes.begin(), bytes.end(), 0), 4);

  const std::vector<double> v{0.5, -0.1, 0.0, -2.0};
  const auto packed = pack_signs(v);
  EXPECT_TRUE(packed.get(0));
  EXPECT_FALSE(packed.get(1));
  EXPECT_TRUE(packed.get(2));
  EXPECT_FALSE(packed.get(3));
  EXPECT_FALSE(packed.get(200));
}

TEST(TensorHeads, EmptyMapGivesNoKeypoints) {
  EXPECT_TRUE(detect_keypoints(Tensor({16, 16}), 0.01, 4.0).empty());
}

TEST(TensorHeads, NmsKeepsTheStrongerPeak) {
  Tensor pmap({16, 16});
  pmap(5, 5) = 0.9;
  pmap(6, 7) = 0.8;
  pmap(14, 14) = 0.5;
  const auto kps = detect_keypoints(pmap, 0.01, 4.0);
  ASSERT_EQ(kps.size(), 2u);
  EXPECT_EQ(kps[0].x, 5.0);
  EXPECT_EQ(kps[0].y, 5.0);
  EXPECT_EQ(kps[1].x, 14.0);
}

TEST(TensorHeads, NmsMatchesBruteForce) {
  Rng rng(12);
  for (int t = 0; t < 50; ++t) {
    Tensor pmap({16, 16});
    for (double& v : pmap.data()) v = rng.uniform() < 0.3 ? std::round(rng.uniform() * 20.0) / 20.0 : 0.0;
    const double radius = rng.uniform(0.0, 5.0);
    const auto got = detect_keypoints(pmap, 0.01, radius);
    const auto want = oracle::nms(pmap, 0.01, radius);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].x, want[i].x);
      EXPECT_EQ(got[i].y, want[i].y);
      EXPECT_GE(got[i].score, 0.01);
      if (i > 0) {
        EXPECT_GE(got[i - 1].score, got[i].score);
      }
    }
  }
}
