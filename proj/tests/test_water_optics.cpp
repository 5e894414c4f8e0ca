#include <cmath>

#include <gtest/gtest.h>

#include "ufen/config.hpp"
#include "ufen/water_optics.hpp"

using namespace ufen;
using namespace ufen::water;

namespace {

SpectralWaterParams uniform_params(double b, double beta, double kd) {
  SpectralWaterParams p;
  p.b = {b, b, b};
  p.beta = {beta, beta, beta};
  p.kd = {kd, kd, kd};
  return p;
}

ScenePhysics quiet_scene(double water_depth = 5.0) {
  ScenePhysics s;
  s.water_depth = water_depth;
  s.noise_sigma = 0.0;
  return s;
}

RgbdFrame flat_frame(std::size_t h, std::size_t w, double value, double depth) {
  return {Tensor({h, w, 3}, value), Tensor({h, w}, depth)};
}

}  // namespace

TEST(WaterOptics, BackgroundLightPinnedValue) {
  const Rgb binf = background_light(uniform_params(0.1, 0.5, 0.2), quiet_scene(5.0));
  for (double v : binf) EXPECT_NEAR(v, 0.0735759, 1e-6);
}

TEST(WaterOptics, FormationPinnedValue) {
  const auto params = uniform_params(0.1, 0.5, 0.2);
  const Tensor out = synthesize_underwater(flat_frame(2, 2, 0.5, 2.0), params, quiet_scene(), 1);
  for (double v : out.data()) EXPECT_NEAR(v, 0.230449, 1e-6);
}

TEST(WaterOptics, ZeroDepthReproducesSceneExactly) {
  Rng rng(3);
  RgbdFrame frame{Tensor({4, 5, 3}), Tensor({4, 5}, 0.0)};
  for (double& v : frame.color.data()) v = rng.uniform();
  const Tensor out = synthesize_underwater(frame, uniform_params(0.05, 0.4, 0.1), quiet_scene(), 9);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], frame.color[i]);
}

TEST(WaterOptics, SaturatesToBackgroundLight) {
  const auto params = uniform_params(0.1, 0.5, 0.2);
  ScenePhysics scene = quiet_scene();
  scene.max_scene_depth = 100.0;
  const Rgb binf = background_light(params, scene);
  for (double z : {5.0, 10.0, 30.0}) {
    for (double j : {0.0, 1.0}) {
      const Tensor out = synthesize_underwater(flat_frame(1, 1, j, z), params, scene, 0);
      for (int c = 0; c < 3; ++c) EXPECT_LE(std::abs(out(0, 0, c) - binf[c]), std::exp(-0.5 * z) + 1e-15);
    }
  }
}

TEST(WaterOptics, OutputLiesBetweenSceneAndBackground) {
  const auto params = uniform_params(0.02, 0.3, 0.1);
  const ScenePhysics scene = quiet_scene();
  const Rgb binf = background_light(params, scene);
  double previous_gap = 1.0;
  for (double z = 0.0; z <= 3.0; z += 0.25) {
    const Tensor out = synthesize_underwater(flat_frame(1, 1, 0.8, z), params, scene, 0);
    const double v = out(0, 0, 0);
    EXPECT_LE(v, 0.8 + 1e-15);
    EXPECT_GE(v, binf[0] - 1e-15);
    const double gap = std::abs(v - binf[0]);
    EXPECT_LE(gap, previous_gap + 1e-15);
    previous_gap = gap;
  }
}

TEST(WaterOptics, RedAttenuatesFastestInClearOcean) {
  const auto bounds = config::load_bounds(std::string(UFEN_DATA_DIR) + "/jerlov_open_ocean_I_III.json");
  const ScenePhysics scene = quiet_scene();
  const Tensor out = synthesize_underwater(flat_frame(1, 1, 1.0, 2.0), bounds.lower, scene, 0);
  const Rgb binf = background_light(bounds.lower, scene);
  const double tr = (out(0, 0, 0) - binf[0]) / (1.0 - binf[0]);
  const double tg = (out(0, 0, 1) - binf[1]) / (1.0 - binf[1]);
  const double tb = (out(0, 0, 2) - binf[2]) / (1.0 - binf[2]);
  EXPECT_LT(tr, tg);
  EXPECT_LT(tg, tb);
}

TEST(WaterOptics, NoiseIsDeterministicPerSeed) {
  ScenePhysics scene = quiet_scene();
  scene.noise_sigma = 0.01;
  const auto params = uniform_params(0.1, 0.5, 0.2);
  const auto frame = flat_frame(6, 7, 0.5, 1.0);
  const Tensor a = synthesize_underwater(frame, params, scene, 42);
  const Tensor b = synthesize_underwater(frame, params, scene, 42);
  const Tensor c = synthesize_underwater(frame, params, scene, 43);
  EXPECT_EQ(a.storage(), b.storage());
  EXPECT_NE(a.storage(), c.storage());
}

TEST(WaterOptics, HolesUseMaximumDepth) {
  const auto params = uniform_params(0.1, 0.5, 0.2);
  ScenePhysics scene = quiet_scene();
  scene.zero_depth_is_hole = true;
  RgbdFrame frame = flat_frame(1, 3, 0.5, 0.0);
  frame.depth(0, 1) = std::nan("");
  frame.depth(0, 2) = scene.max_scene_depth;
  const Tensor out = synthesize_underwater(frame, params, scene, 0);
  EXPECT_EQ(out(0, 0, 0), out(0, 2, 0));
  EXPECT_EQ(out(0, 1, 0), out(0, 2, 0));
}

TEST(WaterOptics, SamplingRespectsBounds) {
  const auto bounds = config::load_bounds(std::string(UFEN_DATA_DIR) + "/jerlov_open_ocean_I_III.json");
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = sample_water_params(bounds, seed);
    p.validate();
    for (int c = 0; c < 3; ++c) {
      EXPECT_GE(p.beta[c], bounds.lower.beta[c]);
      EXPECT_LE(p.beta[c], bounds.upper.beta[c]);
      EXPECT_GE(p.kd[c], bounds.lower.kd[c]);
      EXPECT_LE(p.kd[c], bounds.upper.kd[c]);
    }
  }
  EXPECT_EQ(sample_water_params(bounds, 5).beta, sample_water_params(bounds, 5).beta);
}

TEST(WaterOptics, DegenerateBoundsReturnLowerExactly) {
  WaterTypeBounds bounds;
  bounds.lower = bounds.upper = uniform_params(0.01, 0.3, 0.1);
  const auto p = sample_water_params(bounds, 77);
  EXPECT_EQ(p.beta, bounds.lower.beta);
  EXPECT_EQ(p.kd, bounds.lower.kd);
  EXPECT_EQ(p.b, bounds.lower.b);
}

TEST(WaterOptics, RejectsUnphysicalParameters) {
  auto expect_domain = [](const SpectralWaterParams& p) {
    try {
      background_light(p, quiet_scene());
      ADD_FAILURE() << "expected a domain error";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Domain);
    }
  };
  expect_domain(uniform_params(0.1, 0.0, 0.2));
  expect_domain(uniform_params(0.1, -0.5, 0.2));
  expect_domain(uniform_params(0.6, 0.5, 0.2));

  RgbdFrame mismatched{Tensor({2, 2, 3}), Tensor({2, 3})};
  EXPECT_THROW(synthesize_underwater(mismatched, uniform_params(0.1, 0.5, 0.2), quiet_scene(), 0), Error);
}
