#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ufen/core.hpp"
#include "ufen/tensor.hpp"
#include "ufen/tensor_heads.hpp"

// Detector distillation: per-cell KL divergence between teacher and student
// softmax distributions, plus probabilistic knowledge transfer (PKT) over the
// cosine-similarity structure of the cells. Gradients are w.r.t. the student
// logits. Natural logarithms throughout.

namespace ufen::distill {

struct LossWeights {
  double alpha = 1.0;       // weight of the descriptor matching loss
  double pkt_weight = 1.0;  // multiplier on the PKT term inside L_p

  void validate() const {
    require(alpha >= 0.0 && pkt_weight >= 0.0, ErrorKind::Domain, "loss weights must be >= 0");
  }
};

struct LossValueGrad {
  double value = 0.0;
  Tensor grad;  // shaped like the student logits
};

struct PktOptions {
  // Cells beyond this count are uniformly subsampled (same subset for
  // teacher and student); 0 disables subsampling.
  std::size_t max_cells = 4800;
  std::uint64_t seed = 0;
};

inline constexpr double kLogFloor = 1e-12;

namespace detail {

inline void check_pair(const Tensor& teacher, const Tensor& student) {
  heads::check_logits(teacher);
  heads::check_logits(student);
  require(teacher.same_shape(student), ErrorKind::Data,
          "teacher and student logits differ in shape: " + teacher.shape_string() + " vs " + student.shape_string());
}

}  // namespace detail

inline LossValueGrad kl_loss_grad(const Tensor& teacher, const Tensor& student) {
  detail::check_pair(teacher, student);
  const std::size_t cells = teacher.dim(0) * teacher.dim(1);
  const std::size_t n = heads::kDetectorChannels;
  const double inv = 1.0 / static_cast<double>(cells);

  LossValueGrad out{0.0, Tensor(student.dims())};
  std::vector<double> per_cell(cells, 0.0);
  parallel_for(cells, [&](std::size_t i) {
    std::array<double, heads::kDetectorChannels> ps{}, ls{}, pu{}, lu{};
    heads::softmax_with_log(teacher.data().subspan(i * n, n), ps, ls);
    heads::softmax_with_log(student.data().subspan(i * n, n), pu, lu);
    double d = 0.0;
    auto g = out.grad.data().subspan(i * n, n);
    for (std::size_t k = 0; k < n; ++k) {
      if (ps[k] > 0.0) d += ps[k] * (ls[k] - lu[k]);
      g[k] = (pu[k] - ps[k]) * inv;
    }
    per_cell[i] = d;
  });
  for (double d : per_cell) out.value += d;
  out.value *= inv;
  return out;
}

// Cell subset used by PKT, ascending order.
inline std::vector<std::size_t> pkt_cell_subset(std::size_t cells, const PktOptions& opt) {
  std::vector<std::size_t> idx(cells);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opt.max_cells == 0 || cells <= opt.max_cells) return idx;
  Rng rng(opt.seed);
  for (std::size_t i = 0; i < opt.max_cells; ++i) std::swap(idx[i], idx[i + rng.index(cells - i)]);
  idx.resize(opt.max_cells);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace detail {

// Softmax -> L2-normalized feature per selected cell, plus the softmax and its norm.
struct PktFeatures {
  std::vector<std::array<double, heads::kDetectorChannels>> prob;
  std::vector<std::array<double, heads::kDetectorChannels>> unit;
  std::vector<double> norm;
};

inline PktFeatures pkt_features(const Tensor& logits, const std::vector<std::size_t>& cells) {
  constexpr std::size_t n = heads::kDetectorChannels;
  PktFeatures f;
  f.prob.resize(cells.size());
  f.unit.resize(cells.size());
  f.norm.resize(cells.size());
  for (std::size_t a = 0; a < cells.size(); ++a) {
    heads::softmax(logits.data().subspan(cells[a] * n, n), f.prob[a]);
    const double nrm = std::sqrt(std::inner_product(f.prob[a].begin(), f.prob[a].end(), f.prob[a].begin(), 0.0));
    f.norm[a] = nrm;
    for (std::size_t k = 0; k < n; ++k) f.unit[a][k] = f.prob[a][k] / nrm;
  }
  return f;
}

// K(a, b) = (cos(a, b) + 1) / 2, dense M x M.
inline std::vector<double> pkt_kernel(const PktFeatures& f) {
  const std::size_t m = f.unit.size();
  std::vector<double> k(m * m, 1.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double c = std::inner_product(f.unit[i].begin(), f.unit[i].end(), f.unit[j].begin(), 0.0);
      k[i * m + j] = k[j * m + i] = 0.5 * (c + 1.0);
    }
  return k;
}

}  // namespace detail

// Conditional s_{j|i} = K(x_j, x_i) / sum_{k != i} K(x_k, x_i);
// value = sum_i sum_{j != i} s_{j|i} log(s_{j|i} / u_{j|i}).
inline LossValueGrad pkt_loss_grad(const Tensor& teacher, const Tensor& student, const PktOptions& opt = {}) {
  detail::check_pair(teacher, student);
  constexpr std::size_t n = heads::kDetectorChannels;
  const std::size_t cells = teacher.dim(0) * teacher.dim(1);
  require(cells >= 2, ErrorKind::Data, "PKT loss needs at least 2 cells");

  const auto subset = pkt_cell_subset(cells, opt);
  const std::size_t m = subset.size();
  const auto ft = detail::pkt_features(teacher, subset);
  const auto fu = detail::pkt_features(student, subset);
  const auto kt = detail::pkt_kernel(ft);
  const auto ku = detail::pkt_kernel(fu);

  // Per conditioning cell i: loss term and dL/dK^U_{ji} = 1/Z_i - s_{j|i} / K_{ji}.
  std::vector<double> row_loss(m, 0.0);
  std::vector<double> gk(m * m, 0.0);
  parallel_for(m, [&](std::size_t i) {
    double zt = 0.0, zu = 0.0;
    for (std::size_t j = 0; j < m; ++j)
      if (j != i) {
        zt += kt[j * m + i];
        zu += ku[j * m + i];
      }
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      const double s = kt[j * m + i] / zt;
      const double u = ku[j * m + i] / zu;
      acc += s * (std::log(std::max(s, kLogFloor)) - std::log(std::max(u, kLogFloor)));
      gk[j * m + i] = 1.0 / zu - s / ku[j * m + i];
    }
    row_loss[i] = acc;
  });

  LossValueGrad out{0.0, Tensor(student.dims())};
  for (double v : row_loss) out.value += v;

  parallel_for(m, [&](std::size_t a) {
    // dL/dunit_a = 1/2 sum_{b != a} (G_{ab} + G_{ba}) unit_b
    std::array<double, n> gx{};
    for (std::size_t b = 0; b < m; ++b) {
      if (b == a) continue;
      const double coef = 0.5 * (gk[a * m + b] + gk[b * m + a]);
      for (std::size_t k = 0; k < n; ++k) gx[k] += coef * fu.unit[b][k];
    }
    // through L2 normalization
    const auto& xh = fu.unit[a];
    const double proj = std::inner_product(xh.begin(), xh.end(), gx.begin(), 0.0);
    std::array<double, n> gp{};
    for (std::size_t k = 0; k < n; ++k) gp[k] = (gx[k] - xh[k] * proj) / fu.norm[a];
    // through softmax
    const auto& p = fu.prob[a];
    const double pg = std::inner_product(p.begin(), p.end(), gp.begin(), 0.0);
    auto g = out.grad.data().subspan(subset[a] * n, n);
    for (std::size_t k = 0; k < n; ++k) g[k] = p[k] * (gp[k] - pg);
  });
  return out;
}

struct LpBreakdown {
  LossValueGrad total;
  double kl = 0.0;
  double pkt = 0.0;
};

inline LpBreakdown lp_loss_detailed(const Tensor& teacher, const Tensor& student, const LossWeights& weights,
                                    const PktOptions& opt = {}) {
  weights.validate();
  LossValueGrad kl = kl_loss_grad(teacher, student);
  LpBreakdown out{std::move(kl), 0.0, 0.0};
  out.kl = out.total.value;
  if (weights.pkt_weight == 0.0) return out;
  const LossValueGrad pkt = pkt_loss_grad(teacher, student, opt);
  out.pkt = pkt.value;
  out.total.value += weights.pkt_weight * pkt.value;
  for (std::size_t i = 0; i < out.total.grad.size(); ++i) out.total.grad[i] += weights.pkt_weight * pkt.grad[i];
  return out;
}

inline LossValueGrad lp_loss(const Tensor& teacher, const Tensor& student, const LossWeights& weights,
                             const PktOptions& opt = {}) {
  return lp_loss_detailed(teacher, student, weights, opt).total;
}

// A scalar together with gradients for one or more parameter tensors.
struct ScalarGrads {
  double value = 0.0;
  std::vector<Tensor> grads;
};

// L = L_p + alpha * L_d. Output grads: [dL/dlogits, alpha * dL_d/d(each)].
inline ScalarGrads total_loss(const LossValueGrad& lp, const ScalarGrads& ld, const LossWeights& weights) {
  weights.validate();
  ScalarGrads out{lp.value + weights.alpha * ld.value, {lp.grad}};
  for (const Tensor& g : ld.grads) {
    Tensor scaled = g;
    for (double& v : scaled.data()) v *= weights.alpha;
    out.grads.push_back(std::move(scaled));
  }
  return out;
}

}  // namespace ufen::distill
