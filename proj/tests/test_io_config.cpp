#include <filesystem>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ufen/config.hpp"
#include "ufen/io.hpp"

using namespace ufen;
namespace fs = std::filesystem;

TEST(IoConfig, TensorRoundTrip) {
  Rng rng(51);
  Tensor t({2, 3, 4});
  for (double& v : t.data()) v = static_cast<float>(rng.normal());
  const Tensor back = io::decode_tensor(io::encode_tensor(t));
  EXPECT_EQ(back.dims(), t.dims());
  EXPECT_EQ(back.storage(), t.storage());
  EXPECT_THROW(io::decode_tensor("UFT\x01"), Error);
  std::string bytes = io::encode_tensor(t);
  bytes.pop_back();
  EXPECT_THROW(io::decode_tensor(bytes), Error);
}

TEST(IoConfig, PpmRoundTrip) {
  Tensor img({3, 5, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i % 256) / 255.0;
  const Tensor back = io::decode_ppm(io::encode_ppm(img));
  EXPECT_EQ(back.dims(), img.dims());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 1e-12);
  EXPECT_THROW(io::decode_ppm("P3\n1 1\n255\n0 0 0\n"), Error);
}

TEST(IoConfig, KeypointDescriptorHomographyRoundTrip) {
  const std::vector<heads::Keypoint> kps{{1.5, 2.25, 0.125}, {100, 3, 0.9}};
  const auto back = io::decode_keypoints(io::encode_keypoints(kps));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].y, 2.25);
  EXPECT_EQ(back[1].score, 0.9);
  EXPECT_THROW(io::decode_keypoints("x,y,score\n1;2;3\n"), Error);

  Rng rng(52);
  std::vector<heads::BinaryDescriptor> d(5);
  for (auto& r : d) r = oracle::random_descriptor(rng);
  EXPECT_EQ(io::decode_descriptors(io::encode_descriptors(d)), d);
  EXPECT_THROW(io::decode_descriptors(std::string(33, '\0')), Error);

  const auto h = geometry::Homography::from_rows({1.1, 0.1, 3, -0.2, 0.9, 4, 1e-4, 2e-4, 1});
  EXPECT_EQ(io::decode_homography(io::encode_homography(h)).rows(), h.rows());
}

TEST(IoConfig, TumRoundTrip) {
  const std::string text =
      "# comment\n"
      "1.0 0 0 0 0 0 0 1\n"
      "1.5 1 2 3 0 0 0.7071067811865476 0.7071067811865476\n"
      "2.0 4 5 6\n";
  const auto traj = io::decode_tum(text);
  ASSERT_EQ(traj.samples.size(), 3u);
  EXPECT_EQ(traj.samples[1].p, trajectory::Vec3(1, 2, 3));
  EXPECT_FALSE(traj.samples[2].q.has_value());
  const auto again = io::decode_tum(io::encode_tum(traj));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(again.samples[i].t, traj.samples[i].t);
    EXPECT_EQ(again.samples[i].p, traj.samples[i].p);
  }
  EXPECT_THROW(io::decode_tum("2 0 0 0\n1 0 0 0\n"), Error);
  EXPECT_THROW(io::decode_tum("1 0 0 0 0 0 0 2\n"), Error);
}

TEST(IoConfig, AtomicWriteReplacesTarget) {
  const fs::path dir = fs::temp_directory_path() / "ufen_io_test";
  fs::create_directories(dir);
  io::write_file_atomic(dir / "a.txt", "first");
  io::write_file_atomic(dir / "a.txt", "second");
  EXPECT_EQ(io::read_file(dir / "a.txt"), "second");
  EXPECT_FALSE(fs::exists(dir / "a.txt.tmp"));
  fs::remove_all(dir);
}

TEST(IoConfig, DefaultConfigRoundTrips) {
  const auto j = config::default_config_json();
  EXPECT_EQ(config::to_json(config::from_json(j)), j);
}

TEST(IoConfig, ConfigOverridesApply) {
  const auto c = config::from_json(nlohmann::json::parse(R"({
    "seed": 9,
    "losses": {"alpha": 0.5},
    "matching": {"P": 10, "Q": 100, "nn_max_distance": 30},
    "train": {"steps": 20, "binarization": "hardtanh", "keypoints": "student"}
  })"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.weights.alpha, 0.5);
  EXPECT_EQ(c.margins.Q, 100.0);
  EXPECT_EQ(c.nn_max_distance, 30);
  EXPECT_EQ(c.train.steps, 20u);
  EXPECT_EQ(c.train.binarization, geometry::Binarization::HardTanh);
  EXPECT_EQ(c.train.keypoints, toy::KeypointSource::Student);
  const auto round = config::from_json(config::to_json(c));
  EXPECT_EQ(config::to_json(round), config::to_json(c));
}

TEST(IoConfig, UnknownKeysAreRejected) {
  EXPECT_THROW(config::from_json(nlohmann::json::parse(R"({"sed": 1})")), Error);
  EXPECT_THROW(config::from_json(nlohmann::json::parse(R"({"train": {"stepz": 1}})")), Error);
  EXPECT_THROW(config::from_json(nlohmann::json::parse(R"({"train": {"binarization": "round"}})")), Error);
}

TEST(IoConfig, ShippedBoundsAreValid) {
  const auto b = config::load_bounds(std::string(UFEN_DATA_DIR) + "/jerlov_open_ocean_I_III.json");
  b.validate();
  EXPECT_EQ(b.lower.beta[0], 0.632);
  EXPECT_EQ(b.upper.kd[2], 0.132);
  const auto again = config::bounds_from_json(config::bounds_to_json(b));
  EXPECT_EQ(again.upper.b, b.upper.b);
}
