#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_set>
#include <vector>

#include "ufen/core.hpp"
#include "ufen/tensor.hpp"
#include "ufen/tensor_heads.hpp"
#include "ufen/water_optics.hpp"

namespace ufen::eval {

using heads::Keypoint;

struct OverlapReport {
  std::size_t reference_count = 0;  // P_R
  std::size_t overlap_count = 0;    // P_c
  double rate = 0.0;                // R = P_c / P_R
  double degradation = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline std::int64_t pixel_key(long x, long y) {
  return (static_cast<std::int64_t>(y) << 32) ^ static_cast<std::int64_t>(static_cast<std::uint32_t>(x));
}

}  // namespace detail

// A reference point is overlapped when any turbid detection lies in the 3x3
// pixel block centred on it (Chebyshev distance <= 1 on rounded coordinates).
// Each reference point earns at most one credit.
inline OverlapReport overlap_rate(std::span<const Keypoint> reference, std::span<const Keypoint> turbid) {
  require(!reference.empty(), ErrorKind::Data, "overlap rate undefined without reference points");
  std::unordered_set<std::int64_t> occupied;
  occupied.reserve(turbid.size() * 2);
  for (const Keypoint& k : turbid) occupied.insert(detail::pixel_key(std::lround(k.x), std::lround(k.y)));

  OverlapReport r;
  r.reference_count = reference.size();
  for (const Keypoint& k : reference) {
    const long x = std::lround(k.x), y = std::lround(k.y);
    bool hit = false;
    for (long dy = -1; dy <= 1 && !hit; ++dy)
      for (long dx = -1; dx <= 1 && !hit; ++dx) hit = occupied.count(detail::pixel_key(x + dx, y + dy)) > 0;
    r.overlap_count += hit ? 1 : 0;
  }
  r.rate = static_cast<double>(r.overlap_count) / static_cast<double>(r.reference_count);
  return r;
}

// ---------------------------------------------------------------------------
// Structural similarity and the degradation proxy
// ---------------------------------------------------------------------------

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

// Mean SSIM over all fully-contained Gaussian windows.
inline double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {}) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::Data, "SSIM needs grayscale images");
  require(a.same_shape(b), ErrorKind::Data, "SSIM images differ in size");
  const std::size_t h = a.dim(0), w = a.dim(1), win = opt.window;
  require(h >= win && w >= win, ErrorKind::Data, "image smaller than the SSIM window");

  std::vector<double> g(win);
  double gsum = 0.0;
  const double c = 0.5 * static_cast<double>(win - 1);
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * opt.sigma * opt.sigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2), c2 = std::pow(opt.k2 * opt.dynamic_range, 2);
  const std::size_t oh = h - win + 1, ow = w - win + 1;
  std::vector<double> row_sum(oh, 0.0);
  parallel_for(oh, [&](std::size_t y) {
    double acc = 0.0;
    for (std::size_t x = 0; x < ow; ++x) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double wt = g[i] * g[j];
          const double va = a(y + i, x + j), vb = b(y + i, x + j);
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double var_a = saa - ma * ma, var_b = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    row_sum[y] = acc;
  });
  double total = 0.0;
  for (double v : row_sum) total += v;
  return total / static_cast<double>(oh * ow);
}

// Structural degradation proxy: 100 (1 - SSIM), clamped to [0, 100].
inline double degradation_index(const Tensor& clear, const Tensor& turbid) {
  return std::clamp(100.0 * (1.0 - ssim(clear, turbid)), 0.0, 100.0);
}

// ---------------------------------------------------------------------------
// Reference corner detector
// ---------------------------------------------------------------------------

struct HarrisOptions {
  double k = 0.04;
  std::size_t window_radius = 2;  // box window for the structure tensor
  double threshold = 1e-4;        // absolute response threshold
  double nms_radius = 4.0;
  std::size_t border = 4;
};

// Harris corners with an absolute threshold, so lost contrast costs detections.
inline std::vector<Keypoint> harris_keypoints(const Tensor& gray, const HarrisOptions& opt = {}) {
  require(gray.rank() == 2, ErrorKind::Data, "Harris detector needs a grayscale image");
  const std::size_t h = gray.dim(0), w = gray.dim(1);
  Tensor ixx({h, w}), iyy({h, w}), ixy({h, w});
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double gx = 0.5 * (gray(y, x + 1) - gray(y, x - 1));
      const double gy = 0.5 * (gray(y + 1, x) - gray(y - 1, x));
      ixx(y, x) = gx * gx;
      iyy(y, x) = gy * gy;
      ixy(y, x) = gx * gy;
    }
  Tensor response({h, w});
  const long r = static_cast<long>(opt.window_radius);
  for (std::size_t y = opt.border; y + opt.border < h; ++y)
    for (std::size_t x = opt.border; x + opt.border < w; ++x) {
      double a = 0, b = 0, c = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          const std::size_t yy = static_cast<std::size_t>(static_cast<long>(y) + dy);
          const std::size_t xx = static_cast<std::size_t>(static_cast<long>(x) + dx);
          a += ixx(yy, xx);
          b += iyy(yy, xx);
          c += ixy(yy, xx);
        }
      const double score = a * b - c * c - opt.k * (a + b) * (a + b);
      // monotone squash into [0, 1) so the shared threshold + NMS applies
      response(y, x) = score > 0.0 ? score / (1.0 + score) : 0.0;
    }
  return heads::detect_keypoints(response, opt.threshold / (1.0 + opt.threshold), opt.nms_radius);
}

// ---------------------------------------------------------------------------
// Turbidity sweep
// ---------------------------------------------------------------------------

using KeypointFunction = std::function<std::vector<Keypoint>(const Tensor& gray)>;

struct SweepRow {
  double beta_scale = 0.0;
  double degradation = 0.0;
  OverlapReport overlap;
};

// Renders the scene with attenuation scaled by each value on an even grid
// over [scale_min, scale_max], keeping the background light of the unscaled
// water, then scores the detector against its clear-image detections. Every
// step and the clear reference share one sensor noise realization.
inline std::vector<SweepRow> turbidity_sweep(const water::RgbdFrame& frame, const KeypointFunction& detector,
                                             std::size_t steps, double scale_min, double scale_max,
                                             const water::SpectralWaterParams& params,
                                             const water::ScenePhysics& scene, std::uint64_t seed) {
  require(steps >= 2, ErrorKind::Usage, "turbidity sweep needs at least 2 steps");
  require(scale_min >= 0.0 && scale_max >= scale_min, ErrorKind::Usage, "invalid beta scale range");
  frame.validate();
  const water::Rgb background = water::background_light(params, scene);
  const std::uint64_t noise_seed = derive_seed(seed, 0);
  const Tensor clear =
      water::to_grayscale(water::apply_formation(frame, water::Rgb{}, background, scene, noise_seed));
  const auto reference = detector(clear);

  std::vector<SweepRow> rows(steps);
  parallel_for(steps, [&](std::size_t k) {
    const double scale = scale_min + (scale_max - scale_min) * static_cast<double>(k) / static_cast<double>(steps - 1);
    water::Rgb beta = params.beta;
    for (double& v : beta) v *= scale;
    const Tensor turbid = water::to_grayscale(water::apply_formation(frame, beta, background, scene, noise_seed));
    rows[k].beta_scale = scale;
    rows[k].degradation = degradation_index(clear, turbid);
    rows[k].overlap = overlap_rate(reference, detector(turbid));
    rows[k].overlap.degradation = rows[k].degradation;
  });
  std::stable_sort(rows.begin(), rows.end(),
                   [](const SweepRow& a, const SweepRow& b) { return a.degradation < b.degradation; });
  return rows;
}

}  // namespace ufen::eval
