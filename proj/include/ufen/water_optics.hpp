#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "ufen/core.hpp"
#include "ufen/tensor.hpp"

// Synthetic underwater image formation from in-air RGBD frames.
//
// Per channel c and pixel depth z:
//   I_c = J_c exp(-beta_c z) + Binf_c (1 - exp(-beta_c z)) + W
//   Binf_c = b_c E0_c exp(-kd_c d) / beta_c
// where d is the water depth above the scene and W is Gaussian pixel noise.
// Channel order everywhere is R, G, B.

namespace ufen::water {

using Rgb = std::array<double, 3>;

struct SpectralWaterParams {
  Rgb beta{};                      // beam attenuation, 1/m
  Rgb kd{};                        // diffuse downwelling attenuation, 1/m
  Rgb b{};                         // beam scattering, 1/m
  Rgb wavelengths{700.0, 525.0, 450.0};  // nm

  void validate() const {
    for (int c = 0; c < 3; ++c) {
      require(beta[c] > 0.0 && std::isfinite(beta[c]), ErrorKind::Domain,
              "beam attenuation must be positive (channel " + std::to_string(c) + ")");
      require(kd[c] > 0.0 && std::isfinite(kd[c]), ErrorKind::Domain, "diffuse attenuation must be positive");
      require(b[c] > 0.0 && std::isfinite(b[c]), ErrorKind::Domain, "scattering coefficient must be positive");
      require(beta[c] >= b[c], ErrorKind::Domain, "beam attenuation must include scattering (beta >= b)");
      require(wavelengths[c] > 0.0, ErrorKind::Domain, "wavelengths must be positive");
    }
  }
};

struct ScenePhysics {
  double water_depth = 5.0;        // d, m
  Rgb surface_irradiance{1.0, 1.0, 1.0};  // E0, white light
  double max_scene_depth = 3.0;    // depth-map clamp, m
  double noise_sigma = 0.01;       // std-dev of W
  // Sensor datasets usually store missing depth as 0; when set, z == 0 is a
  // hole and is pushed to max_scene_depth like non-finite values are.
  bool zero_depth_is_hole = false;

  void validate() const {
    require(water_depth >= 0.0 && std::isfinite(water_depth), ErrorKind::Domain, "water depth must be >= 0");
    require(max_scene_depth > 0.0 && std::isfinite(max_scene_depth), ErrorKind::Domain,
            "max scene depth must be > 0");
    require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorKind::Domain, "noise sigma must be >= 0");
    for (double e : surface_irradiance)
      require(e >= 0.0 && std::isfinite(e), ErrorKind::Domain, "surface irradiance must be >= 0");
  }
};

// color: H x W x 3 in [0,1]; depth: H x W in metres.
struct RgbdFrame {
  Tensor color;
  Tensor depth;

  std::size_t height() const { return depth.dim(0); }
  std::size_t width() const { return depth.dim(1); }

  void validate() const {
    require(color.rank() == 3 && color.dim(2) == 3, ErrorKind::Data, "color image must be H x W x 3");
    require(depth.rank() == 2, ErrorKind::Data, "depth map must be H x W");
    require(color.dim(0) == depth.dim(0) && color.dim(1) == depth.dim(1), ErrorKind::Data,
            "color and depth dimensions differ: " + color.shape_string() + " vs " + depth.shape_string());
  }
};

struct WaterTypeBounds {
  SpectralWaterParams lower;
  SpectralWaterParams upper;

  void validate() const {
    lower.validate();
    upper.validate();
    for (int c = 0; c < 3; ++c) {
      require(lower.beta[c] <= upper.beta[c] && lower.kd[c] <= upper.kd[c] && lower.b[c] <= upper.b[c],
              ErrorKind::Domain, "water bounds: lower must not exceed upper");
      // Independent uniform draws stay physical only if every b fits under every beta.
      require(upper.b[c] <= lower.beta[c], ErrorKind::Domain,
              "water bounds: upper scattering exceeds lower attenuation, samples could violate beta >= b");
      require(lower.wavelengths[c] == upper.wavelengths[c], ErrorKind::Domain,
              "water bounds: wavelengths of lower and upper differ");
    }
  }
};

inline Rgb background_light(const SpectralWaterParams& params, const ScenePhysics& scene) {
  for (int c = 0; c < 3; ++c)
    require(params.beta[c] != 0.0, ErrorKind::Domain, "background light: beam attenuation is zero");
  params.validate();
  scene.validate();
  Rgb out{};
  for (int c = 0; c < 3; ++c)
    out[c] = params.b[c] * scene.surface_irradiance[c] * std::exp(-params.kd[c] * scene.water_depth) / params.beta[c];
  return out;
}

inline double effective_depth(double z, const ScenePhysics& scene) {
  if (!std::isfinite(z) || z < 0.0 || (z == 0.0 && scene.zero_depth_is_hole)) return scene.max_scene_depth;
  return std::min(z, scene.max_scene_depth);
}

// Formation with explicit transmission coefficients and background light.
// Used directly by the turbidity sweep, where beta is scaled but Binf is not.
inline Tensor apply_formation(const RgbdFrame& frame, const Rgb& beta, const Rgb& background,
                              const ScenePhysics& scene, std::uint64_t seed) {
  frame.validate();
  scene.validate();
  const std::size_t h = frame.height(), w = frame.width();
  Tensor out({h, w, 3});
  parallel_for(h, [&](std::size_t y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double z = effective_depth(frame.depth(y, x), scene);
      double noise[3] = {0.0, 0.0, 0.0};
      if (scene.noise_sigma > 0.0) {
        Rng rng(derive_seed(seed, y * w + x));
        for (double& n : noise) n = scene.noise_sigma * rng.normal();
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double t = std::exp(-beta[c] * z);
        const double v = frame.color(y, x, c) * t + background[c] * (1.0 - t) + noise[c];
        out(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  });
  return out;
}

inline Tensor synthesize_underwater(const RgbdFrame& frame, const SpectralWaterParams& params,
                                    const ScenePhysics& scene, std::uint64_t seed) {
  const Rgb background = background_light(params, scene);
  return apply_formation(frame, params.beta, background, scene, seed);
}

inline SpectralWaterParams sample_water_params(const WaterTypeBounds& bounds, std::uint64_t seed) {
  bounds.validate();
  Rng rng(seed);
  SpectralWaterParams p;
  p.wavelengths = bounds.lower.wavelengths;
  auto draw = [&rng](double lo, double hi) { return lo == hi ? lo : rng.uniform(lo, hi); };
  for (int c = 0; c < 3; ++c) {
    p.beta[c] = draw(bounds.lower.beta[c], bounds.upper.beta[c]);
    p.kd[c] = draw(bounds.lower.kd[c], bounds.upper.kd[c]);
    p.b[c] = draw(bounds.lower.b[c], bounds.upper.b[c]);
  }
  return p;
}

// ITU-R BT.601 luma.
inline Tensor to_grayscale(const Tensor& color) {
  require(color.rank() == 3 && color.dim(2) == 3, ErrorKind::Data, "grayscale conversion needs an H x W x 3 image");
  Tensor gray({color.dim(0), color.dim(1)});
  for (std::size_t y = 0; y < color.dim(0); ++y)
    for (std::size_t x = 0; x < color.dim(1); ++x)
      gray(y, x) = 0.299 * color(y, x, 0) + 0.587 * color(y, x, 1) + 0.114 * color(y, x, 2);
  return gray;
}

inline Tensor gray_to_color(const Tensor& gray) {
  Tensor color({gray.dim(0), gray.dim(1), 3});
  for (std::size_t i = 0; i < gray.size(); ++i)
    for (std::size_t c = 0; c < 3; ++c) color[i * 3 + c] = gray[i];
  return color;
}

}  // namespace ufen::water
