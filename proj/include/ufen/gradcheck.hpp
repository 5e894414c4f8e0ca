#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ufen/core.hpp"
#include "ufen/distill_losses.hpp"
#include "ufen/geometry_match.hpp"
#include "ufen/tensor.hpp"
#include "ufen/toy_distill.hpp"
#include "ufen/water_optics.hpp"

// Central finite-difference checks of every analytic gradient. The error of
// one instance is max_k |analytic_k - numeric_k| / max(|analytic|_inf, |numeric|_inf).

namespace ufen::gradcheck {

inline constexpr double kStep = 1e-5;

struct SuiteResult {
  std::string name;
  std::size_t instances = 0;
  double worst_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct Options {
  std::size_t instances = 20;
  std::uint64_t seed = 2024;
  bool corrupt = false;  // test hook: perturbs one analytic entry per instance
};

inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return scale > 0.0 ? diff / scale : diff;
}

// Central differences of f with respect to every entry of the given tensors.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, const std::vector<Tensor*>& wrt,
                                            double h = kStep) {
  std::vector<double> out;
  for (Tensor* t : wrt)
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double saved = (*t)[i];
      (*t)[i] = saved + h;
      const double up = f();
      (*t)[i] = saved - h;
      const double down = f();
      (*t)[i] = saved;
      out.push_back((up - down) / (2.0 * h));
    }
  return out;
}

inline std::vector<double> flatten(const std::vector<const Tensor*>& ts) {
  std::vector<double> out;
  for (const Tensor* t : ts) out.insert(out.end(), t->data().begin(), t->data().end());
  return out;
}

namespace detail {

inline Tensor random_logits(Rng& rng, std::size_t hc, std::size_t wc, double scale = 2.0) {
  Tensor t({hc, wc, heads::kDetectorChannels});
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

inline void maybe_corrupt(std::vector<double>& g, const Options& opt) {
  if (opt.corrupt && !g.empty()) {
    const auto it = std::max_element(g.begin(), g.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });
    *it = *it * 1.5 + 1e-3;
  }
}

template <class Instance>
SuiteResult run_suite(const std::string& name, double tolerance, const Options& opt, Instance&& instance) {
  SuiteResult r{name, opt.instances, 0.0, tolerance, true};
  Rng rng(derive_seed(opt.seed, std::hash<std::string>{}(name) & 0xffff));
  for (std::size_t k = 0; k < opt.instances; ++k) {
    auto [analytic, numeric] = instance(rng, k);
    maybe_corrupt(analytic, opt);
    r.worst_error = std::max(r.worst_error, relative_error(analytic, numeric));
  }
  r.passed = r.worst_error <= tolerance;
  return r;
}

inline std::pair<std::size_t, std::size_t> logit_shape(Rng& rng, std::size_t k, std::size_t min_cells) {
  static constexpr std::pair<std::size_t, std::size_t> shapes[] = {{1, 2}, {1, 3}, {2, 2}, {2, 3}, {3, 3}, {3, 4}, {4, 4}};
  std::pair<std::size_t, std::size_t> s = shapes[(k + rng.index(7)) % 7];
  while (s.first * s.second < min_cells) s = {s.first + 1, s.second};
  return s;
}

}  // namespace detail

inline SuiteResult kl_suite(const Options& opt) {
  return detail::run_suite("L_KL", 1e-6, opt, [](Rng& rng, std::size_t k) {
    const auto [hc, wc] = detail::logit_shape(rng, k, 1);
    const Tensor teacher = detail::random_logits(rng, hc, wc);
    Tensor student = detail::random_logits(rng, hc, wc);
    auto analytic = distill::kl_loss_grad(teacher, student).grad.storage();
    auto numeric = numeric_gradient([&] { return distill::kl_loss_grad(teacher, student).value; }, {&student});
    return std::pair{analytic, numeric};
  });
}

inline SuiteResult pkt_suite(const Options& opt) {
  return detail::run_suite("L_PKT", 1e-6, opt, [](Rng& rng, std::size_t k) {
    const auto [hc, wc] = detail::logit_shape(rng, k, 3);
    const Tensor teacher = detail::random_logits(rng, hc, wc);
    Tensor student = detail::random_logits(rng, hc, wc);
    auto analytic = distill::pkt_loss_grad(teacher, student).grad.storage();
    auto numeric = numeric_gradient([&] { return distill::pkt_loss_grad(teacher, student).value; }, {&student});
    return std::pair{analytic, numeric};
  });
}

inline SuiteResult lp_suite(const Options& opt) {
  return detail::run_suite("L_p", 1e-6, opt, [](Rng& rng, std::size_t k) {
    const auto [hc, wc] = detail::logit_shape(rng, k, 2);
    const Tensor teacher = detail::random_logits(rng, hc, wc);
    Tensor student = detail::random_logits(rng, hc, wc);
    const distill::LossWeights w{1.0, rng.uniform(0.1, 2.0)};
    auto analytic = distill::lp_loss(teacher, student, w).grad.storage();
    auto numeric = numeric_gradient([&] { return distill::lp_loss(teacher, student, w).value; }, {&student});
    return std::pair{analytic, numeric};
  });
}

// Random correspondence structure over 8 + 8 descriptors of dimension 16.
inline geometry::CorrespondenceSet random_correspondences(Rng& rng, std::size_t count) {
  geometry::CorrespondenceSet set;
  set.threshold = 8.0;
  for (std::size_t i = 0; i < count; ++i) {
    if (rng.uniform() < 0.25 && i + 1 < count) continue;  // some unmatched points
    set.matches.push_back({i, i, {}});
    std::vector<std::size_t> nd, ns;
    for (std::size_t j = 0; j < count; ++j) {
      if (j == i) continue;
      if (rng.uniform() < 0.6) nd.push_back(j);
      if (rng.uniform() < 0.6) ns.push_back(j);
    }
    set.nonmatch_dst.push_back(nd);
    set.nonmatch_src.push_back(ns);
  }
  return set;
}

inline SuiteResult ld_suite(const Options& opt) {
  return detail::run_suite("L_d (relaxed)", 1e-6, opt, [](Rng& rng, std::size_t) {
    constexpr std::size_t count = 8, dim = 16;
    const auto corr = random_correspondences(rng, count);
    Tensor src({count, dim}), dst({count, dim});
    for (double& v : src.data()) v = rng.uniform(-0.9, 0.9);
    for (double& v : dst.data()) v = rng.uniform(-0.9, 0.9);
    const geometry::MatchMargins margins{2.0, 10.0};
    constexpr auto mode = geometry::Binarization::HardTanh;
    const auto res = geometry::ld_loss_grad(corr, margins, src, dst, mode);
    auto analytic = flatten({&res.grad_src, &res.grad_dst});
    auto numeric = numeric_gradient([&] { return geometry::ld_loss_grad(corr, margins, src, dst, mode).value; },
                                    {&src, &dst});
    return std::pair{analytic, numeric};
  });
}

// Small end-to-end configuration: 32x32 images, D = 16, margins scaled to D,
// at most 12 keypoints per image.
inline toy::TrainConfig tiny_toy_config(const water::WaterTypeBounds& bounds) {
  toy::TrainConfig cfg;
  cfg.image_size = 32;
  cfg.descriptor_dim = 16;
  cfg.margins = {2.0, 10.0};
  cfg.binarization = geometry::Binarization::HardTanh;
  cfg.water_bounds = bounds;
  cfg.homography = {0.1, 0.05, 0.0, 2.0};
  cfg.max_keypoints = 12;
  return cfg;
}

// Keypoints on the original image plus their rounded projections, so that the
// matching term is always active.
inline toy::KeypointPair projected_keypoints(const toy::ToyStudent& model, const toy::TrainSample& s,
                                             const toy::TrainConfig& cfg) {
  toy::KeypointPair kps;
  const auto orig = toy::student_keypoints(toy::student_forward(s.underwater, model), cfg);
  const double size = static_cast<double>(cfg.image_size);
  for (const auto& k : orig) {
    const auto p = s.homography.apply({k.x, k.y});
    const double x = std::round(p.x), y = std::round(p.y);
    if (x < 0 || y < 0 || x >= size || y >= size) continue;
    kps.original.push_back(k);
    kps.transformed.push_back({x, y, k.score});
  }
  return kps;
}

inline SuiteResult toy_suite(const Options& opt, const water::WaterTypeBounds& bounds) {
  return detail::run_suite("toy objective (end-to-end)", 1e-5, opt, [&bounds](Rng& rng, std::size_t) {
    toy::TrainConfig cfg = tiny_toy_config(bounds);
    cfg.weights = {rng.uniform(0.5, 2.0), rng.uniform(0.1, 1.0)};
    const std::uint64_t seed = rng.next_u64();
    const auto teacher = toy::synthetic_teacher(cfg.image_size, cfg.image_size, 3, derive_seed(seed, 1));
    const auto sample = toy::make_sample(teacher, cfg, derive_seed(seed, 2));
    toy::ToyStudent model = toy::ToyStudent::random(cfg.descriptor_dim, derive_seed(seed, 3), 0.3, 0.3);
    const auto kps = projected_keypoints(model, sample, cfg);
    const auto res = toy::objective(model, sample, kps, cfg);
    auto analytic = flatten({&res.grads.w_det, &res.grads.b_det, &res.grads.w_desc, &res.grads.b_desc});
    auto p = model.params();
    auto numeric = numeric_gradient([&] { return toy::objective(model, sample, kps, cfg).loss.total; },
                                    {p[0], p[1], p[2], p[3]});
    return std::pair{analytic, numeric};
  });
}

inline std::vector<SuiteResult> run_all(const Options& opt, const water::WaterTypeBounds& bounds) {
  return {kl_suite(opt), pkt_suite(opt), lp_suite(opt), ld_suite(opt), toy_suite(opt, bounds)};
}

}  // namespace ufen::gradcheck
