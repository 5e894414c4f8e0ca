#pragma once

#include <cstdint>

#include "ufen/core.hpp"
#include "ufen/tensor.hpp"
#include "ufen/water_optics.hpp"

namespace fixture {

// Random-intensity 8x8 block mosaic in gray with a depth ramp from 0.5 m
// (top) to 3 m (bottom).
inline ufen::water::RgbdFrame textured_frame(std::size_t size, std::uint64_t seed) {
  ufen::Rng rng(seed);
  const std::size_t blocks = (size + 7) / 8;
  std::vector<double> level(blocks * blocks);
  for (double& v : level) v = rng.uniform(0.1, 0.9);
  ufen::water::RgbdFrame frame{ufen::Tensor({size, size, 3}), ufen::Tensor({size, size})};
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double v = level[(y / 8) * blocks + x / 8];
      for (std::size_t c = 0; c < 3; ++c) frame.color(y, x, c) = v;
      frame.depth(y, x) = 0.5 + 2.5 * static_cast<double>(y) / static_cast<double>(size - 1);
    }
  return frame;
}

inline ufen::water::SpectralWaterParams coastal_params() {
  ufen::water::SpectralWaterParams p;
  p.beta = {0.8, 0.3, 0.33};
  p.kd = {0.6, 0.1, 0.12};
  p.b = {0.015, 0.02, 0.02};
  return p;
}

}  // namespace fixture
