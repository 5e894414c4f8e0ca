#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "ufen/core.hpp"
#include "ufen/tensor.hpp"

// Post-processing of the detector and descriptor heads: cell softmax with the
// dustbin channel, bicubic descriptor upsampling, sign binarization with the
// straight-through gradient mask, and keypoint extraction.

namespace ufen::heads {

inline constexpr std::size_t kCell = 8;
inline constexpr std::size_t kCellPixels = kCell * kCell;
inline constexpr std::size_t kDetectorChannels = kCellPixels + 1;
inline constexpr std::size_t kDustbin = kCellPixels;
inline constexpr std::size_t kDescriptorDim = 256;

// Numerically stable log-softmax / softmax over one logit vector.
// Probabilities and log-probabilities from a single pass of exponentials.
inline void softmax_with_log(std::span<const double> x, std::span<double> prob, std::span<double> logp) {
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) sum += prob[k] = std::exp(x[k] - m);
  const double lse = m + std::log(sum), inv = 1.0 / sum;
  for (std::size_t k = 0; k < x.size(); ++k) {
    prob[k] *= inv;
    logp[k] = x[k] - lse;
  }
}

inline void log_softmax(std::span<const double> x, std::span<double> out) {
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (double v : x) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] - lse;
}

inline void softmax(std::span<const double> x, std::span<double> out) {
  const double m = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) sum += out[k] = std::exp(x[k] - m);
  for (double& v : out) v /= sum;
}

inline void check_logits(const Tensor& logits) {
  require(logits.rank() == 3 && logits.dim(2) == kDetectorChannels, ErrorKind::Data,
          "detector logits must be Hc x Wc x 65, got " + logits.shape_string());
  require(all_finite(logits), ErrorKind::Numerical, "detector logits contain non-finite values");
}

// Hc x Wc x 65 logits -> H x W probabilities (H = 8 Hc). Channel k < 64 lands
// on pixel (8 hc + k / 8, 8 wc + k % 8); channel 64 is the dustbin.
inline Tensor detector_probability_map(const Tensor& logits) {
  check_logits(logits);
  const std::size_t hc = logits.dim(0), wc = logits.dim(1);
  Tensor prob({hc * kCell, wc * kCell});
  parallel_for(hc, [&](std::size_t cy) {
    std::array<double, kDetectorChannels> p{};
    for (std::size_t cx = 0; cx < wc; ++cx) {
      softmax(logits.row(cy, cx), p);
      for (std::size_t k = 0; k < kCellPixels; ++k) prob(cy * kCell + k / kCell, cx * kCell + k % kCell) = p[k];
    }
  });
  return prob;
}

// Per-cell dustbin probabilities, Hc x Wc.
inline Tensor dustbin_probability(const Tensor& logits) {
  check_logits(logits);
  Tensor out({logits.dim(0), logits.dim(1)});
  std::array<double, kDetectorChannels> p{};
  for (std::size_t cy = 0; cy < logits.dim(0); ++cy)
    for (std::size_t cx = 0; cx < logits.dim(1); ++cx) {
      softmax(logits.row(cy, cx), p);
      out(cy, cx) = p[kDustbin];
    }
  return out;
}

// Catmull-Rom cubic convolution kernel (a = -0.5).
inline double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace detail {

struct CubicTaps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

// Half-pixel aligned source taps for output sample `o` of a `factor` upsampling.
inline CubicTaps cubic_taps(std::size_t o, std::size_t factor, std::size_t source_len) {
  const double s = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
  const double base = std::floor(s);
  const double t = s - base;
  CubicTaps taps{};
  for (int k = 0; k < 4; ++k) {
    const long i = static_cast<long>(base) - 1 + k;
    taps.index[k] = static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(source_len) - 1));
    taps.weight[k] = cubic_weight(t - static_cast<double>(k - 1));
  }
  return taps;
}

}  // namespace detail

struct DenseDescriptors {
  Tensor field;                  // H x W x D, unit rows
  std::size_t degenerate = 0;    // zero-norm pixels replaced by e_0
};

// L2-normalizes every innermost vector in place; zero vectors become e_0.
inline std::size_t normalize_rows(Tensor& t) {
  const std::size_t dim = t.dims().back();
  std::size_t degenerate = 0;
  for (std::size_t off = 0; off < t.size(); off += dim) {
    std::span<double> v = t.data().subspan(off, dim);
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      std::fill(v.begin(), v.end(), 0.0);
      v[0] = 1.0;
      ++degenerate;
      continue;
    }
    for (double& c : v) c /= norm;
  }
  return degenerate;
}

// Hc x Wc x D coarse descriptors -> H x W x D, separable 8x bicubic with edge
// clamping followed by per-pixel L2 normalization.
inline DenseDescriptors dense_descriptors(const Tensor& coarse) {
  require(coarse.rank() == 3 && coarse.dim(2) >= 1, ErrorKind::Data, "coarse descriptors must be Hc x Wc x D");
  require(all_finite(coarse), ErrorKind::Numerical, "coarse descriptors contain non-finite values");
  const std::size_t hc = coarse.dim(0), wc = coarse.dim(1), d = coarse.dim(2);
  const std::size_t h = hc * kCell, w = wc * kCell;

  Tensor horizontal({hc, w, d});
  for (std::size_t x = 0; x < w; ++x) {
    const auto taps = detail::cubic_taps(x, kCell, wc);
    for (std::size_t cy = 0; cy < hc; ++cy) {
      auto out = horizontal.row(cy, x);
      for (int k = 0; k < 4; ++k) {
        const auto src = coarse.row(cy, taps.index[k]);
        for (std::size_t c = 0; c < d; ++c) out[c] += taps.weight[k] * src[c];
      }
    }
  }

  DenseDescriptors result{Tensor({h, w, d}), 0};
  parallel_for(h, [&](std::size_t y) {
    const auto taps = detail::cubic_taps(y, kCell, hc);
    for (std::size_t x = 0; x < w; ++x) {
      auto out = result.field.row(y, x);
      for (int k = 0; k < 4; ++k) {
        const auto src = horizontal.row(taps.index[k], x);
        for (std::size_t c = 0; c < d; ++c) out[c] += taps.weight[k] * src[c];
      }
    }
  });
  result.degenerate = normalize_rows(result.field);
  return result;
}

// ---------------------------------------------------------------------------
// Binarization
// ---------------------------------------------------------------------------

struct SteOutput {
  bool bit;     // true for +1
  double mask;  // backward gradient gate, 1 if |x| <= 1
};

inline SteOutput binarize_ste(double x) { return {x >= 0.0, std::abs(x) <= 1.0 ? 1.0 : 0.0}; }

inline double sign_value(double x) { return x >= 0.0 ? 1.0 : -1.0; }

// Fixed-width bit string; bit k lives in byte k / 8 at position k % 8.
template <std::size_t Bits>
struct PackedBits {
  static_assert(Bits % 64 == 0);
  static constexpr std::size_t kBytes = Bits / 8;
  static constexpr std::size_t kWords = Bits / 64;

  std::array<std::uint64_t, kWords> words{};

  bool get(std::size_t k) const { return (words[k / 64] >> (k % 64)) & 1u; }
  void set(std::size_t k, bool v) {
    const std::uint64_t m = std::uint64_t{1} << (k % 64);
    words[k / 64] = v ? (words[k / 64] | m) : (words[k / 64] & ~m);
  }

  std::array<std::uint8_t, kBytes> to_bytes() const {
    std::array<std::uint8_t, kBytes> out{};
    for (std::size_t i = 0; i < kBytes; ++i) out[i] = static_cast<std::uint8_t>(words[i / 8] >> (8 * (i % 8)));
    return out;
  }
  static PackedBits from_bytes(std::span<const std::uint8_t> bytes) {
    require(bytes.size() == kBytes, ErrorKind::Data, "packed descriptor has the wrong byte count");
    PackedBits p;
    for (std::size_t i = 0; i < kBytes; ++i) p.words[i / 8] |= std::uint64_t{bytes[i]} << (8 * (i % 8));
    return p;
  }

  PackedBits operator~() const {
    PackedBits p;
    for (std::size_t i = 0; i < kWords; ++i) p.words[i] = ~words[i];
    return p;
  }
  bool operator==(const PackedBits&) const = default;
};

using BinaryDescriptor = PackedBits<kDescriptorDim>;

inline int hamming_distance(const BinaryDescriptor& a, const BinaryDescriptor& b) {
  int d = 0;
  for (std::size_t i = 0; i < BinaryDescriptor::kWords; ++i) d += std::popcount(a.words[i] ^ b.words[i]);
  return d;
}

// Packs the sign pattern of a real vector of up to 256 components; unused
// trailing bits stay 0.
inline BinaryDescriptor pack_signs(std::span<const double> v) {
  require(v.size() <= kDescriptorDim, ErrorKind::Data, "descriptor longer than 256 components");
  BinaryDescriptor p;
  for (std::size_t k = 0; k < v.size(); ++k) p.set(k, binarize_ste(v[k]).bit);
  return p;
}

// H x W x D field -> H*W packed records in row-major pixel order.
inline std::vector<BinaryDescriptor> binarize_field(const Tensor& dense) {
  require(dense.rank() == 3, ErrorKind::Data, "descriptor field must be H x W x D");
  const std::size_t d = dense.dim(2);
  std::vector<BinaryDescriptor> out(dense.dim(0) * dense.dim(1));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pack_signs(dense.data().subspan(i * d, d));
  return out;
}

// ---------------------------------------------------------------------------
// Keypoints
// ---------------------------------------------------------------------------

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double score = 0.0;
};

// Threshold, then greedy NMS in descending score order (ties: row-major).
// A candidate is suppressed when a kept point lies within nms_radius.
inline std::vector<Keypoint> detect_keypoints(const Tensor& pmap, double threshold, double nms_radius) {
  require(pmap.rank() == 2, ErrorKind::Data, "probability map must be H x W");
  require(threshold > 0.0 && threshold < 1.0, ErrorKind::Usage, "detection threshold must lie in (0, 1)");
  require(nms_radius >= 0.0, ErrorKind::Usage, "NMS radius must be >= 0");
  const std::size_t h = pmap.dim(0), w = pmap.dim(1);

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < pmap.size(); ++i)
    if (pmap[i] >= threshold) candidates.push_back(i);
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return pmap[a] > pmap[b]; });

  const long r = static_cast<long>(std::floor(nms_radius));
  const double r2 = nms_radius * nms_radius;
  std::vector<std::uint8_t> suppressed(pmap.size(), 0);
  std::vector<Keypoint> kept;
  for (std::size_t idx : candidates) {
    if (suppressed[idx]) continue;
    const long cy = static_cast<long>(idx / w), cx = static_cast<long>(idx % w);
    kept.push_back({static_cast<double>(cx), static_cast<double>(cy), pmap[idx]});
    for (long dy = -r; dy <= r; ++dy)
      for (long dx = -r; dx <= r; ++dx) {
        const long y = cy + dy, x = cx + dx;
        if (y < 0 || x < 0 || y >= static_cast<long>(h) || x >= static_cast<long>(w)) continue;
        if (static_cast<double>(dx * dx + dy * dy) <= r2) suppressed[static_cast<std::size_t>(y) * w + x] = 1;
      }
  }
  return kept;
}

}  // namespace ufen::heads
