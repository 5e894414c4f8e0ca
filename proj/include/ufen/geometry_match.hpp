#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "ufen/core.hpp"
#include "ufen/tensor.hpp"
#include "ufen/tensor_heads.hpp"

namespace ufen::geometry {

using heads::BinaryDescriptor;
using heads::hamming_distance;
using heads::Keypoint;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct ImageSize {
  std::size_t width = 0;
  std::size_t height = 0;
};

class Homography {
 public:
  Homography() : h_(Eigen::Matrix3d::Identity()) {}

  explicit Homography(const Eigen::Matrix3d& h) : h_(h) {
    require(h.allFinite(), ErrorKind::Numerical, "homography has non-finite entries");
    require(h(2, 2) != 0.0, ErrorKind::Domain, "homography h22 is zero");
    h_ /= h(2, 2);
    require(std::abs(h_.determinant()) > 1e-9, ErrorKind::Domain, "homography is not invertible");
  }

  static Homography from_rows(const std::array<double, 9>& v) {
    Eigen::Matrix3d m;
    m << v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8];
    return Homography(m);
  }

  std::array<double, 9> rows() const {
    return {h_(0, 0), h_(0, 1), h_(0, 2), h_(1, 0), h_(1, 1), h_(1, 2), h_(2, 0), h_(2, 1), h_(2, 2)};
  }

  const Eigen::Matrix3d& matrix() const { return h_; }

  Point apply(Point p) const {
    const double w = h_(2, 0) * p.x + h_(2, 1) * p.y + h_(2, 2);
    return {(h_(0, 0) * p.x + h_(0, 1) * p.y + h_(0, 2)) / w, (h_(1, 0) * p.x + h_(1, 1) * p.y + h_(1, 2)) / w};
  }

  Homography inverse() const { return Homography(h_.inverse()); }

 private:
  Eigen::Matrix3d h_;
};

// Ranges are symmetric half-widths: angle in radians, scale as +-fraction
// around 1, perspective coefficients in 1/px, translation in px.
struct HomographyRanges {
  double rotation = 0.0;
  double scale = 0.0;
  double perspective = 0.0;
  double translation = 0.0;
};

// H = Tr * C * R * S * P * C^-1, C translating the origin to the image centre.
inline Homography sample_homography(ImageSize size, const HomographyRanges& ranges, std::uint64_t seed) {
  require(ranges.rotation >= 0.0 && ranges.scale >= 0.0 && ranges.perspective >= 0.0 && ranges.translation >= 0.0,
          ErrorKind::Usage, "homography ranges must be non-negative");
  require(ranges.scale < 1.0, ErrorKind::Usage, "homography scale range must be < 1");
  Rng rng(seed);
  auto sym = [&rng](double r) { return r == 0.0 ? 0.0 : rng.uniform(-r, r); };
  const double cx = 0.5 * static_cast<double>(size.width), cy = 0.5 * static_cast<double>(size.height);

  for (int attempt = 0; attempt < 9; ++attempt) {
    const double angle = sym(ranges.rotation);
    const double s = 1.0 + sym(ranges.scale);
    const double px = sym(ranges.perspective), py = sym(ranges.perspective);
    const double tx = sym(ranges.translation), ty = sym(ranges.translation);

    Eigen::Matrix3d c = Eigen::Matrix3d::Identity(), ci = Eigen::Matrix3d::Identity();
    c(0, 2) = cx;
    c(1, 2) = cy;
    ci(0, 2) = -cx;
    ci(1, 2) = -cy;
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    rot(0, 0) = std::cos(angle);
    rot(0, 1) = -std::sin(angle);
    rot(1, 0) = std::sin(angle);
    rot(1, 1) = std::cos(angle);
    Eigen::Matrix3d sc = Eigen::Matrix3d::Identity();
    sc(0, 0) = sc(1, 1) = s;
    Eigen::Matrix3d persp = Eigen::Matrix3d::Identity();
    persp(2, 0) = px;
    persp(2, 1) = py;
    Eigen::Matrix3d tr = Eigen::Matrix3d::Identity();
    tr(0, 2) = tx;
    tr(1, 2) = ty;

    const Eigen::Matrix3d h = tr * c * rot * sc * persp * ci;
    if (h(2, 2) != 0.0 && std::abs((h / h(2, 2)).determinant()) > 1e-9) return Homography(h);
  }
  throw Error(ErrorKind::Numerical, "sampled homography stayed degenerate after 8 resamples");
}

// ---------------------------------------------------------------------------
// Correspondences
// ---------------------------------------------------------------------------

struct Match {
  std::size_t src = 0;  // index into the original-image keypoints
  std::size_t dst = 0;  // index into the transformed-image keypoints
  Point projected;      // H(x_src)
};

struct CorrespondenceSet {
  std::vector<Match> matches;
  // Per match: transformed keypoints farther than T from the projection.
  std::vector<std::vector<std::size_t>> nonmatch_dst;
  // Mirror for the transformed descriptor: original keypoints farther than T from x_src.
  std::vector<std::vector<std::size_t>> nonmatch_src;
  double threshold = 0.0;
};

inline CorrespondenceSet build_correspondences(std::span<const Keypoint> kps, const Homography& h,
                                               std::span<const Keypoint> kps_t, ImageSize transformed_size,
                                               double threshold, double match_radius) {
  require(threshold > match_radius && match_radius >= 0.0, ErrorKind::Usage,
          "non-match threshold must exceed the match radius");
  CorrespondenceSet set;
  set.threshold = threshold;

  std::vector<Point> proj(kps.size());
  std::vector<bool> inside(kps.size());
  for (std::size_t i = 0; i < kps.size(); ++i) {
    proj[i] = h.apply({kps[i].x, kps[i].y});
    inside[i] = std::isfinite(proj[i].x) && std::isfinite(proj[i].y) && proj[i].x >= 0.0 && proj[i].y >= 0.0 &&
                proj[i].x < static_cast<double>(transformed_size.width) &&
                proj[i].y < static_cast<double>(transformed_size.height);
  }

  // (distance, dst row, dst col, src, dst), greedy ascending.
  using Candidate = std::tuple<double, double, double, std::size_t, std::size_t>;
  std::vector<Candidate> cand;
  for (std::size_t i = 0; i < kps.size(); ++i) {
    if (!inside[i]) continue;
    for (std::size_t j = 0; j < kps_t.size(); ++j) {
      const double d = distance(proj[i], {kps_t[j].x, kps_t[j].y});
      if (d <= match_radius) cand.emplace_back(d, kps_t[j].y, kps_t[j].x, i, j);
    }
  }
  std::sort(cand.begin(), cand.end());
  std::vector<bool> used_src(kps.size(), false), used_dst(kps_t.size(), false);
  for (const auto& [d, row, col, i, j] : cand) {
    if (used_src[i] || used_dst[j]) continue;
    used_src[i] = used_dst[j] = true;
    set.matches.push_back({i, j, proj[i]});
  }
  std::sort(set.matches.begin(), set.matches.end(), [](const Match& a, const Match& b) { return a.src < b.src; });

  for (const Match& m : set.matches) {
    std::vector<std::size_t> neg_dst, neg_src;
    for (std::size_t j = 0; j < kps_t.size(); ++j)
      if (j != m.dst && distance({kps_t[j].x, kps_t[j].y}, m.projected) > threshold) neg_dst.push_back(j);
    const Point xs{kps[m.src].x, kps[m.src].y};
    for (std::size_t k = 0; k < kps.size(); ++k)
      if (k != m.src && distance({kps[k].x, kps[k].y}, xs) > threshold) neg_src.push_back(k);
    set.nonmatch_dst.push_back(std::move(neg_dst));
    set.nonmatch_src.push_back(std::move(neg_src));
  }
  return set;
}

// ---------------------------------------------------------------------------
// Matching loss
// ---------------------------------------------------------------------------

struct MatchMargins {
  double P = 20.0;   // matching margin, Hamming units
  double Q = 150.0;  // non-matching margin, Hamming units

  void validate(std::size_t dim = heads::kDescriptorDim) const {
    require(P >= 0.0 && P < Q && Q <= static_cast<double>(dim), ErrorKind::Domain,
            "margins must satisfy 0 <= P < Q <= descriptor length");
  }
};

// Forward map used inside the distance. Sign gives true Hamming distances;
// HardTanh is the continuous relaxation whose exact derivative equals the
// straight-through mask, used for finite-difference checks.
enum class Binarization { Sign, HardTanh };

struct DescriptorLossGrad {
  double value = 0.0;
  Tensor grad_src;  // like src descriptors
  Tensor grad_dst;  // like dst descriptors
  std::size_t matches = 0;
};

namespace detail {

inline double binarized(double x, Binarization mode) {
  return mode == Binarization::Sign ? heads::sign_value(x) : std::clamp(x, -1.0, 1.0);
}

// dist(a, b) = (D - sum_k f(a_k) f(b_k)) / 2
inline double relaxed_distance(std::span<const double> a, std::span<const double> b, Binarization mode) {
  double dot = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) dot += binarized(a[k], mode) * binarized(b[k], mode);
  return 0.5 * (static_cast<double>(a.size()) - dot);
}

// Accumulates coef * d dist(a, b) / d a into ga and the mirror term into gb.
inline void distance_backward(std::span<const double> a, std::span<const double> b, double coef, Binarization mode,
                              std::span<double> ga, std::span<double> gb) {
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double fa = binarized(a[k], mode), fb = binarized(b[k], mode);
    ga[k] += coef * -0.5 * fb * heads::binarize_ste(a[k]).mask;
    gb[k] += coef * -0.5 * fa * heads::binarize_ste(b[k]).mask;
  }
}

}  // namespace detail

// L_d = (1/N) sum_i p_i^2 + n_i^2 over pre-binarization descriptors
// (K_src x D and K_dst x D), with gradients through the straight-through
// estimator. Min/max subgradients follow the attained branch, lowest index
// on ties.
inline DescriptorLossGrad ld_loss_grad(const CorrespondenceSet& corr, const MatchMargins& margins,
                                       const Tensor& src_desc, const Tensor& dst_desc,
                                       Binarization mode = Binarization::Sign) {
  require(src_desc.rank() == 2 && dst_desc.rank() == 2 && src_desc.dim(1) == dst_desc.dim(1), ErrorKind::Data,
          "descriptor matrices must be K x D with equal D");
  const std::size_t dim = src_desc.dim(1);
  margins.validate(dim);
  require(!corr.matches.empty(), ErrorKind::Data, "matching loss: empty correspondence set");
  require(corr.nonmatch_dst.size() == corr.matches.size() && corr.nonmatch_src.size() == corr.matches.size(),
          ErrorKind::Data, "correspondence set is inconsistent");

  const double n_inv = 1.0 / static_cast<double>(corr.matches.size());
  DescriptorLossGrad out{0.0, Tensor(src_desc.dims()), Tensor(dst_desc.dims()), corr.matches.size()};
  constexpr double inf = std::numeric_limits<double>::infinity();

  for (std::size_t m = 0; m < corr.matches.size(); ++m) {
    const Match& match = corr.matches[m];
    const auto di = src_desc.row(match.src);
    const auto dt = dst_desc.row(match.dst);

    const double pos = detail::relaxed_distance(di, dt, mode);
    const double p = std::max(0.0, pos - margins.P);

    double best_src = inf, best_dst = inf;
    std::size_t arg_src = 0, arg_dst = 0;
    for (std::size_t j : corr.nonmatch_dst[m]) {
      const double d = detail::relaxed_distance(di, dst_desc.row(j), mode);
      if (d < best_src) best_src = d, arg_src = j;
    }
    for (std::size_t k : corr.nonmatch_src[m]) {
      const double d = detail::relaxed_distance(dt, src_desc.row(k), mode);
      if (d < best_dst) best_dst = d, arg_dst = k;
    }
    const double nearest = std::min(best_src, best_dst);
    const double n = std::isfinite(nearest) ? std::max(0.0, margins.Q - nearest) : 0.0;
    out.value += n_inv * (p * p + n * n);

    if (p > 0.0)
      detail::distance_backward(di, dt, 2.0 * n_inv * p, mode, out.grad_src.row(match.src),
                                out.grad_dst.row(match.dst));
    if (n > 0.0) {
      const double coef = -2.0 * n_inv * n;
      if (best_src <= best_dst)
        detail::distance_backward(di, dst_desc.row(arg_src), coef, mode, out.grad_src.row(match.src),
                                  out.grad_dst.row(arg_src));
      else
        detail::distance_backward(dt, src_desc.row(arg_dst), coef, mode, out.grad_dst.row(match.dst),
                                  out.grad_src.row(arg_dst));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour matching
// ---------------------------------------------------------------------------

struct NnMatch {
  std::size_t a = 0;
  std::size_t b = 0;
  int distance = 0;
  bool operator==(const NnMatch&) const = default;
};

struct NnOptions {
  std::optional<int> max_distance;  // keep matches with distance <= this
  std::optional<double> ratio;      // keep if best < ratio * second best (within b)
};

// Mutual nearest neighbours under Hamming distance, ties to the lowest index.
inline std::vector<NnMatch> nn_match(std::span<const BinaryDescriptor> a, std::span<const BinaryDescriptor> b,
                                     const NnOptions& opt = {}) {
  std::vector<NnMatch> out;
  if (a.empty() || b.empty()) return out;
  const std::size_t na = a.size(), nb = b.size();
  std::vector<int> dist(na * nb);
  parallel_for(na, [&](std::size_t i) {
    for (std::size_t j = 0; j < nb; ++j) dist[i * nb + j] = hamming_distance(a[i], b[j]);
  });

  constexpr int big = std::numeric_limits<int>::max();
  std::vector<std::size_t> best_b(na, 0), best_a(nb, 0);
  std::vector<int> best_b_d(na, big), second_b_d(na, big), best_a_d(nb, big);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const int d = dist[i * nb + j];
      if (d < best_b_d[i]) {
        second_b_d[i] = best_b_d[i];
        best_b_d[i] = d;
        best_b[i] = j;
      } else if (d < second_b_d[i]) {
        second_b_d[i] = d;
      }
      if (d < best_a_d[j]) best_a_d[j] = d, best_a[j] = i;
    }

  for (std::size_t i = 0; i < na; ++i) {
    const std::size_t j = best_b[i];
    if (best_a[j] != i) continue;
    const int d = best_b_d[i];
    if (opt.max_distance && d > *opt.max_distance) continue;
    if (opt.ratio && second_b_d[i] != big &&
        !(static_cast<double>(d) < *opt.ratio * static_cast<double>(second_b_d[i])))
      continue;
    out.push_back({i, j, d});
  }
  return out;
}

}  // namespace ufen::geometry
