#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "ufen/core.hpp"

// Trajectory evaluation: similarity alignment (Umeyama), absolute trajectory
// error, rate resampling by linear interpolation, and time-offset search.

namespace ufen::trajectory {

using Vec3 = Eigen::Vector3d;
using Positions = std::vector<Vec3>;

struct Sample {
  double t = 0.0;
  Vec3 p = Vec3::Zero();
  std::optional<Eigen::Quaterniond> q;  // carried, unused by ATE
};

struct Trajectory {
  std::vector<Sample> samples;

  void validate() const {
    for (std::size_t i = 1; i < samples.size(); ++i)
      require(samples[i].t > samples[i - 1].t, ErrorKind::Data, "trajectory timestamps must be strictly increasing");
    for (const Sample& s : samples)
      if (s.q) require(std::abs(s.q->norm() - 1.0) <= 1e-6, ErrorKind::Data, "trajectory quaternion is not unit");
  }

  Positions positions() const {
    Positions out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back(s.p);
    return out;
  }
  std::vector<double> timestamps() const {
    std::vector<double> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) out.push_back(s.t);
    return out;
  }
};

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// Closed-form least-squares similarity mapping est onto gt.
inline SimilarityTransform umeyama_align(std::span<const Vec3> est, std::span<const Vec3> gt) {
  require(est.size() == gt.size(), ErrorKind::Data, "alignment needs equally long position lists");
  require(est.size() >= 3, ErrorKind::Data, "alignment needs at least 3 positions");
  const double n = static_cast<double>(est.size());

  Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
  for (std::size_t i = 0; i < est.size(); ++i) {
    mu_e += est[i];
    mu_g += gt[i];
  }
  mu_e /= n;
  mu_g /= n;

  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_e = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const Vec3 de = est[i] - mu_e;
    cov += (gt[i] - mu_g) * de.transpose();
    var_e += de.squaredNorm();
  }
  cov /= n;
  var_e /= n;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  require(var_e > 0.0 && sv(1) > 1e-12 * std::max(sv(0), 1e-300), ErrorKind::Numerical,
          "alignment is degenerate: positions are collinear or coincident");

  Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;

  SimilarityTransform out;
  out.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  out.scale = (sv.asDiagonal() * s).trace() / var_e;
  out.translation = mu_g - out.scale * out.rotation * mu_e;
  return out;
}

inline double ate_rmse(std::span<const Vec3> est, std::span<const Vec3> gt, const SimilarityTransform& s) {
  require(est.size() == gt.size(), ErrorKind::Data, "ATE needs equally long position lists");
  require(!est.empty(), ErrorKind::Data, "ATE needs at least one position");
  double sum = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) sum += (gt[i] - s.apply(est[i])).squaredNorm();
  return std::sqrt(sum / static_cast<double>(est.size()));
}

inline Positions resample_trajectory(const Trajectory& traj, std::span<const double> queries) {
  require(traj.samples.size() >= 2, ErrorKind::Data, "resampling needs at least 2 samples");
  const auto& s = traj.samples;
  Positions out;
  out.reserve(queries.size());
  for (double q : queries) {
    require(q >= s.front().t && q <= s.back().t, ErrorKind::Data, "resampling query outside the trajectory time range");
    auto it = std::lower_bound(s.begin(), s.end(), q, [](const Sample& a, double t) { return a.t < t; });
    if (it->t == q) {
      out.push_back(it->p);
      continue;
    }
    const Sample& hi = *it;
    const Sample& lo = *(it - 1);
    const double w = (q - lo.t) / (hi.t - lo.t);
    out.push_back((1.0 - w) * lo.p + w * hi.p);
  }
  return out;
}

struct OffsetResult {
  double offset = 0.0;
  double ate = 0.0;
  SimilarityTransform transform;
  std::size_t associated = 0;  // samples used at the best offset
};

struct AlignmentResult {
  double ate = 0.0;
  SimilarityTransform transform;
  std::size_t associated = 0;
};

// Aligns est against gt sampled at est timestamps + offset. Returns nothing
// when fewer than 3 samples overlap; degenerate geometry throws.
inline std::optional<AlignmentResult> align_at_offset(const Trajectory& est, const Trajectory& gt, double offset) {
  if (gt.samples.size() < 2) return std::nullopt;
  std::vector<double> queries;
  Positions est_sel;
  for (const Sample& s : est.samples) {
    const double q = s.t + offset;
    if (q < gt.samples.front().t || q > gt.samples.back().t) continue;
    queries.push_back(q);
    est_sel.push_back(s.p);
  }
  if (queries.size() < 3) return std::nullopt;
  const Positions gt_sel = resample_trajectory(gt, queries);
  const SimilarityTransform tf = umeyama_align(est_sel, gt_sel);
  return AlignmentResult{ate_rmse(est_sel, gt_sel, tf), tf, queries.size()};
}

// Grid search over offsets -range, -range + step, ..., +range; every offset
// gets its own alignment. Ties resolve to the smallest offset.
inline OffsetResult time_offset_search(const Trajectory& est, const Trajectory& gt, double offset_range, double step) {
  require(step > 0.0, ErrorKind::Usage, "offset step must be > 0");
  require(offset_range >= 0.0, ErrorKind::Usage, "offset range must be >= 0");
  est.validate();
  gt.validate();
  const long count = static_cast<long>(std::floor(2.0 * offset_range / step + 1e-9));
  std::vector<double> offsets;
  for (long k = 0; k <= count; ++k) offsets.push_back(-offset_range + static_cast<double>(k) * step);

  std::vector<std::optional<AlignmentResult>> results(offsets.size());
  std::vector<char> degenerate(offsets.size(), 0);
  parallel_for(offsets.size(), [&](std::size_t k) {
    try {
      results[k] = align_at_offset(est, gt, offsets[k]);
    } catch (const Error&) {
      degenerate[k] = 1;
    }
  });

  std::optional<OffsetResult> best;
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    if (!results[k]) continue;
    if (!best || results[k]->ate < best->ate)
      best = OffsetResult{offsets[k], results[k]->ate, results[k]->transform, results[k]->associated};
  }
  const bool any_degenerate = std::find(degenerate.begin(), degenerate.end(), 1) != degenerate.end();
  require(best.has_value() || !any_degenerate, ErrorKind::Numerical,
          "alignment is degenerate at every offset: positions are collinear or coincident");
  require(best.has_value(), ErrorKind::Data, "no offset in range gives at least 3 overlapping samples");
  return *best;
}

}  // namespace ufen::trajectory
