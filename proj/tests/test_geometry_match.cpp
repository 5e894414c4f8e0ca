#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ufen/geometry_match.hpp"
#include "ufen/gradcheck.hpp"

using namespace ufen;
using namespace ufen::geometry;

namespace {

std::vector<Keypoint> random_keypoints(Rng& rng, std::size_t n, double size) {
  std::vector<Keypoint> out(n);
  for (auto& k : out) k = {std::floor(rng.uniform(0.0, size)), std::floor(rng.uniform(0.0, size)), 1.0};
  return out;
}

// Row of +-0.5 values, negative in the first `flips` entries.
void fill_row(Tensor& t, std::size_t row, std::size_t flips) {
  auto r = t.row(row);
  for (std::size_t k = 0; k < r.size(); ++k) r[k] = k < flips ? -0.5 : 0.5;
}

}  // namespace

TEST(GeometryMatch, HomographyBasics) {
  const Homography id;
  const auto p = id.apply({3.5, -2.0});
  EXPECT_EQ(p.x, 3.5);
  EXPECT_EQ(p.y, -2.0);

  const Homography rot = Homography::from_rows({0, -1, 0, 1, 0, 0, 0, 0, 1});
  const auto q = rot.apply({1.0, 0.0});
  EXPECT_NEAR(q.x, 0.0, 1e-15);
  EXPECT_NEAR(q.y, 1.0, 1e-15);

  EXPECT_THROW(Homography::from_rows({1, 2, 0, 2, 4, 0, 0, 0, 1}), Error);
  EXPECT_THROW(Homography::from_rows({1, 0, 0, 0, 1, 0, 0, 0, 0}), Error);
}

TEST(GeometryMatch, ZeroRangesGiveIdentity) {
  const auto h = sample_homography({64, 48}, {}, 5);
  EXPECT_TRUE(h.matrix().isApprox(Eigen::Matrix3d::Identity(), 1e-15));
}

TEST(GeometryMatch, RotationOnlySampleIsRigid) {
  const auto h = sample_homography({64, 64}, {0.5, 0.0, 0.0, 0.0}, 3);
  const Eigen::Matrix2d a = h.matrix().topLeftCorner<2, 2>();
  EXPECT_TRUE((a.transpose() * a).isApprox(Eigen::Matrix2d::Identity(), 1e-9));
  const auto c = h.apply({32.0, 32.0});
  EXPECT_NEAR(c.x, 32.0, 1e-9);
  EXPECT_NEAR(c.y, 32.0, 1e-9);
}

TEST(GeometryMatch, SampledHomographyInvertsCorners) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto h = sample_homography({64, 64}, {0.3, 0.2, 1e-3, 5.0}, seed);
    const auto inv = h.inverse();
    for (Point p : {Point{0, 0}, Point{63, 0}, Point{63, 63}, Point{0, 63}}) {
      const auto back = inv.apply(h.apply(p));
      EXPECT_NEAR(back.x, p.x, 1e-6);
      EXPECT_NEAR(back.y, p.y, 1e-6);
    }
  }
  EXPECT_EQ(sample_homography({64, 64}, {0.3, 0.2, 1e-3, 5.0}, 9).rows(),
            sample_homography({64, 64}, {0.3, 0.2, 1e-3, 5.0}, 9).rows());
}

TEST(GeometryMatch, IdentityCorrespondences) {
  const std::vector<Keypoint> kps{{2, 2, 1}, {5, 2, 1}, {30, 30, 1}, {60, 10, 1}};
  const auto set = build_correspondences(kps, Homography(), kps, {64, 64}, 8.0, 2.0);
  ASSERT_EQ(set.matches.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(set.matches[i].src, i);
    EXPECT_EQ(set.matches[i].dst, i);
  }
  EXPECT_EQ(set.nonmatch_dst[0], (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(set.nonmatch_src[1], (std::vector<std::size_t>{2, 3}));
  for (std::size_t m = 0; m < set.matches.size(); ++m)
    for (std::size_t j : set.nonmatch_dst[m])
      EXPECT_GT(distance({kps[j].x, kps[j].y}, set.matches[m].projected), set.threshold);
}

TEST(GeometryMatch, EmptyKeypointsGiveEmptySet) {
  const std::vector<Keypoint> none;
  EXPECT_TRUE(build_correspondences(none, Homography(), none, {8, 8}, 8.0, 2.0).matches.empty());
  EXPECT_THROW(build_correspondences(none, Homography(), none, {8, 8}, 2.0, 2.0), Error);
}

TEST(GeometryMatch, TranslationPairingMatchesBruteForce) {
  const Homography shift = Homography::from_rows({1, 0, 10, 0, 1, 0, 0, 0, 1});
  Rng rng(21);
  for (int t = 0; t < 30; ++t) {
    const auto kps = random_keypoints(rng, 12, 64.0);
    auto kps_t = random_keypoints(rng, 6, 64.0);
    for (std::size_t i = 0; i < 6; ++i) kps_t.push_back({kps[i].x + 10 + rng.uniform(-2, 2), kps[i].y, 1.0});
    const auto set = build_correspondences(kps, shift, kps_t, {64, 64}, 8.0, 2.0);
    const auto want = oracle::pairing(kps, shift, kps_t, 64, 64, 2.0);
    ASSERT_EQ(set.matches.size(), want.size());
    for (std::size_t m = 0; m < want.size(); ++m) {
      EXPECT_EQ(set.matches[m].src, want[m].first);
      EXPECT_EQ(set.matches[m].dst, want[m].second);
    }
  }
}

TEST(GeometryMatch, HammingIdentities) {
  Rng rng(22);
  for (int t = 0; t < 1000; ++t) {
    const auto a = oracle::random_descriptor(rng), b = oracle::random_descriptor(rng),
               c = oracle::random_descriptor(rng);
    EXPECT_EQ(hamming_distance(a, a), 0);
    EXPECT_EQ(hamming_distance(a, ~a), 256);
    EXPECT_EQ(hamming_distance(a, b), hamming_distance(b, a));
    EXPECT_LE(hamming_distance(a, c), hamming_distance(a, b) + hamming_distance(b, c));
    int dot = 0;
    for (std::size_t k = 0; k < 256; ++k) dot += a.get(k) == b.get(k) ? 1 : -1;
    EXPECT_EQ(256 - 2 * hamming_distance(a, b), dot);
  }
}

TEST(GeometryMatch, MatchingLossZeroCase) {
  CorrespondenceSet set;
  set.matches.push_back({0, 0, {}});
  set.nonmatch_dst.push_back({1});
  set.nonmatch_src.push_back({});
  Tensor src({1, 256}), dst({2, 256});
  fill_row(src, 0, 0);
  fill_row(dst, 0, 10);
  fill_row(dst, 1, 200);
  const auto r = ld_loss_grad(set, {20.0, 150.0}, src, dst);
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.grad_src.data()) EXPECT_EQ(g, 0.0);
  for (double g : r.grad_dst.data()) EXPECT_EQ(g, 0.0);
}

TEST(GeometryMatch, MatchingLossHandValue) {
  CorrespondenceSet set;
  set.matches.push_back({0, 0, {}});
  set.nonmatch_dst.push_back({1});
  set.nonmatch_src.push_back({});
  Tensor src({1, 256}), dst({2, 256});
  fill_row(src, 0, 0);
  fill_row(dst, 0, 24);
  fill_row(dst, 1, 150);
  EXPECT_EQ(ld_loss_grad(set, {20.0, 150.0}, src, dst).value, 16.0);
}

TEST(GeometryMatch, MatchingLossHingeMonotonicity) {
  Rng rng(23);
  for (int t = 0; t < 20; ++t) {
    const auto set = gradcheck::random_correspondences(rng, 8);
    Tensor src({8, 64}), dst({8, 64});
    for (double& v : src.data()) v = rng.uniform(-1, 1);
    for (double& v : dst.data()) v = rng.uniform(-1, 1);
    double prev = std::numeric_limits<double>::infinity();
    for (double p = 0.0; p <= 30.0; p += 5.0) {
      const double v = ld_loss_grad(set, {p, 40.0}, src, dst).value;
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, prev);
      prev = v;
    }
    prev = 0.0;
    for (double q = 31.0; q <= 64.0; q += 5.0) {
      const double v = ld_loss_grad(set, {30.0, q}, src, dst).value;
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(GeometryMatch, MatchingLossErrors) {
  CorrespondenceSet empty;
  EXPECT_THROW(ld_loss_grad(empty, {}, Tensor({1, 256}), Tensor({1, 256})), Error);
  CorrespondenceSet one;
  one.matches.push_back({0, 0, {}});
  one.nonmatch_dst.push_back({});
  one.nonmatch_src.push_back({});
  EXPECT_THROW(ld_loss_grad(one, {150.0, 20.0}, Tensor({1, 256}), Tensor({1, 256})), Error);
}

TEST(GeometryMatch, RelaxedMatchingGradient) {
  const auto r = gradcheck::ld_suite({20, 2024, false});
  EXPECT_TRUE(r.passed) << r.worst_error;
}

TEST(GeometryMatch, NearestNeighbourExamples) {
  Rng rng(24);
  std::vector<BinaryDescriptor> a(20);
  for (auto& d : a) d = oracle::random_descriptor(rng);
  const auto same = nn_match(a, a);
  ASSERT_EQ(same.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(same[i], (NnMatch{i, i, 0}));

  auto b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i].set(i * 7 % 256, !b[i].get(i * 7 % 256));
  const auto flipped = nn_match(a, b);
  ASSERT_EQ(flipped.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(flipped[i], (NnMatch{i, i, 1}));

  EXPECT_TRUE(nn_match(a, {}).empty());
  NnOptions strict;
  strict.max_distance = 0;
  EXPECT_TRUE(nn_match(a, b, strict).empty());
}

TEST(GeometryMatch, NearestNeighbourMatchesBruteForce) {
  Rng rng(25);
  for (int t = 0; t < 200; ++t) {
    std::vector<BinaryDescriptor> a(1 + rng.index(12)), b(1 + rng.index(12));
    for (auto& d : a) d = oracle::random_descriptor(rng);
    for (auto& d : b) {
      d = oracle::random_descriptor(rng);
      for (auto& w : d.words) w &= rng.next_u64() & rng.next_u64() & rng.next_u64();
    }
    for (auto& d : a)
      for (auto& w : d.words) w &= rng.next_u64() & rng.next_u64() & rng.next_u64();
    EXPECT_EQ(nn_match(a, b), oracle::mutual_nn(a, b));
  }
}
