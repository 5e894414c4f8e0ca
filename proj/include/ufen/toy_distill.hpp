#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "ufen/core.hpp"
#include "ufen/distill_losses.hpp"
#include "ufen/geometry_match.hpp"
#include "ufen/tensor.hpp"
#include "ufen/tensor_heads.hpp"
#include "ufen/water_optics.hpp"

// Desk-scale distillation harness. The student maps every 8x8 cell of a
// grayscale image linearly to 65 detector logits and a D-dimensional raw
// descriptor (constant over the cell), trained with L_p + alpha * L_d against
// a synthetic-shape teacher. Every backward step is written out by hand.

namespace ufen::toy {

using heads::kCell;
using heads::kCellPixels;
using heads::kDetectorChannels;

struct ToyStudent {
  Tensor w_det;   // 65 x 64
  Tensor b_det;   // 65
  Tensor w_desc;  // D x 64
  Tensor b_desc;  // D

  std::size_t descriptor_dim() const { return b_desc.dim(0); }

  static ToyStudent zeros(std::size_t dim) {
    require(dim >= 16 && dim <= heads::kDescriptorDim && dim % 8 == 0, ErrorKind::Usage,
            "toy descriptor dimension must be a multiple of 8 in [16, 256]");
    return {Tensor({kDetectorChannels, kCellPixels}), Tensor({kDetectorChannels}), Tensor({dim, kCellPixels}),
            Tensor({dim})};
  }

  static ToyStudent random(std::size_t dim, std::uint64_t seed, double det_scale = 0.05, double desc_scale = 0.1) {
    ToyStudent m = zeros(dim);
    Rng rng(seed);
    for (double& v : m.w_det.data()) v = det_scale * rng.normal();
    for (double& v : m.w_desc.data()) v = desc_scale * rng.normal();
    for (double& v : m.b_desc.data()) v = desc_scale * rng.normal();
    return m;
  }

  std::array<Tensor*, 4> params() { return {&w_det, &b_det, &w_desc, &b_desc}; }
  std::array<const Tensor*, 4> params() const { return {&w_det, &b_det, &w_desc, &b_desc}; }

  void validate() const {
    require(w_det.dims() == std::vector<std::size_t>{kDetectorChannels, kCellPixels} &&
                b_det.dims() == std::vector<std::size_t>{kDetectorChannels},
            ErrorKind::Data, "toy detector weights have the wrong shape");
    require(w_desc.rank() == 2 && w_desc.dim(1) == kCellPixels && b_desc.rank() == 1 &&
                b_desc.dim(0) == w_desc.dim(0),
            ErrorKind::Data, "toy descriptor weights have the wrong shape");
    for (const Tensor* t : params()) require(all_finite(*t), ErrorKind::Numerical, "toy parameters are not finite");
  }
};

// Gradients share the model's layout.
using ToyGradients = ToyStudent;

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct StudentOutput {
  Tensor logits;       // Hc x Wc x 65
  Tensor raw;          // Hc x Wc x D
  Tensor descriptors;  // Hc x Wc x D, unit rows
  std::vector<heads::BinaryDescriptor> cell_bits;  // Hc * Wc, row-major
  std::size_t degenerate = 0;

  std::size_t cells_y() const { return logits.dim(0); }
  std::size_t cells_x() const { return logits.dim(1); }

  // Dense H x W binary field (nearest upsampling of the per-cell descriptors).
  std::vector<heads::BinaryDescriptor> dense_bits() const {
    const std::size_t h = cells_y() * kCell, w = cells_x() * kCell;
    std::vector<heads::BinaryDescriptor> out(h * w);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[y * w + x] = cell_bits[(y / kCell) * cells_x() + x / kCell];
    return out;
  }

  // STE masks of the binarization inputs, Hc x Wc x D.
  Tensor ste_masks() const {
    Tensor m(descriptors.dims());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = heads::binarize_ste(descriptors[i]).mask;
    return m;
  }
};

namespace detail {

inline void check_image(const Tensor& img) {
  require(img.rank() == 2, ErrorKind::Data, "toy student expects a grayscale H x W image");
  require(img.dim(0) % kCell == 0 && img.dim(1) % kCell == 0 && img.dim(0) > 0 && img.dim(1) > 0, ErrorKind::Data,
          "image size must be divisible by 8, got " + img.shape_string());
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

inline ConstMatrixMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return {t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}
inline MatrixMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return {t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
}

// One row of 64 pixels per cell, cells in row-major order.
inline RowMatrix cell_pixels(const Tensor& img) {
  const std::size_t hc = img.dim(0) / kCell, wc = img.dim(1) / kCell;
  RowMatrix p(static_cast<Eigen::Index>(hc * wc), static_cast<Eigen::Index>(kCellPixels));
  for (std::size_t cy = 0; cy < hc; ++cy)
    for (std::size_t cx = 0; cx < wc; ++cx)
      for (std::size_t k = 0; k < kCellPixels; ++k)
        p(static_cast<Eigen::Index>(cy * wc + cx), static_cast<Eigen::Index>(k)) =
            img(cy * kCell + k / kCell, cx * kCell + k % kCell);
  return p;
}

}  // namespace detail

inline StudentOutput student_forward(const Tensor& img, const ToyStudent& model) {
  detail::check_image(img);
  model.validate();
  const std::size_t hc = img.dim(0) / kCell, wc = img.dim(1) / kCell, d = model.descriptor_dim();
  const std::size_t cells = hc * wc;
  StudentOutput out{Tensor({hc, wc, kDetectorChannels}), Tensor({hc, wc, d}), Tensor({hc, wc, d}), {}, 0};
  const detail::RowMatrix p = detail::cell_pixels(img);
  const auto bd = detail::as_matrix(model.b_det, 1, kDetectorChannels);
  const auto bq = detail::as_matrix(model.b_desc, 1, d);
  detail::as_matrix(out.logits, cells, kDetectorChannels).noalias() =
      (p * detail::as_matrix(model.w_det, kDetectorChannels, kCellPixels).transpose()).rowwise() + bd.row(0);
  detail::as_matrix(out.raw, cells, d).noalias() =
      (p * detail::as_matrix(model.w_desc, d, kCellPixels).transpose()).rowwise() + bq.row(0);
  out.descriptors = out.raw;
  out.degenerate = heads::normalize_rows(out.descriptors);
  out.cell_bits.resize(cells);
  for (std::size_t c = 0; c < cells; ++c) out.cell_bits[c] = heads::pack_signs(out.descriptors.data().subspan(c * d, d));
  return out;
}

// Accumulates parameter gradients given dL/dlogits and dL/d(unit descriptors).
inline void student_backward(const Tensor& img, const StudentOutput& fwd, const Tensor& grad_logits,
                             const Tensor& grad_desc, ToyGradients& grads) {
  const std::size_t cells = fwd.cells_y() * fwd.cells_x(), d = fwd.descriptors.dim(2);
  const detail::RowMatrix p = detail::cell_pixels(img);
  const auto gl = detail::as_matrix(grad_logits, cells, kDetectorChannels);
  detail::as_matrix(grads.w_det, kDetectorChannels, kCellPixels).noalias() += gl.transpose() * p;
  detail::as_matrix(grads.b_det, 1, kDetectorChannels).row(0) += gl.colwise().sum();

  // through L2 normalization; the e_0 substitute carries no gradient
  detail::RowMatrix graw = detail::RowMatrix::Zero(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(d));
  for (std::size_t c = 0; c < cells; ++c) {
    const auto gd = grad_desc.data().subspan(c * d, d);
    const auto raw = fwd.raw.data().subspan(c * d, d);
    const auto unit = fwd.descriptors.data().subspan(c * d, d);
    double norm = 0.0, proj = 0.0;
    for (std::size_t o = 0; o < d; ++o) {
      norm += raw[o] * raw[o];
      proj += unit[o] * gd[o];
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) continue;
    for (std::size_t o = 0; o < d; ++o)
      graw(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(o)) = (gd[o] - unit[o] * proj) / norm;
  }
  detail::as_matrix(grads.w_desc, d, kCellPixels).noalias() += graw.transpose() * p;
  detail::as_matrix(grads.b_desc, 1, d).row(0) += graw.colwise().sum();
}

// ---------------------------------------------------------------------------
// Synthetic-shape teacher
// ---------------------------------------------------------------------------

struct Rect {
  geometry::Point min, max;
};
struct Triangle {
  std::array<geometry::Point, 3> v;
};
struct Segment {
  geometry::Point a, b;
  double width = 2.0;
};
using Shape = std::variant<Rect, Triangle, Segment>;

struct ShapeScene {
  std::size_t width = 64;
  std::size_t height = 64;
  double background = 0.2;
  std::vector<Shape> shapes;
  std::vector<double> intensity;  // per shape
};

inline constexpr double kTeacherLogit = 10.0;

inline std::vector<geometry::Point> shape_corners(const Shape& s) {
  if (const auto* r = std::get_if<Rect>(&s))
    return {r->min, {r->max.x, r->min.y}, r->max, {r->min.x, r->max.y}};
  if (const auto* t = std::get_if<Triangle>(&s)) return {t->v.begin(), t->v.end()};
  const auto& l = std::get<Segment>(s);
  return {l.a, l.b};
}

inline std::vector<geometry::Point> scene_corners(const ShapeScene& scene) {
  std::vector<geometry::Point> out;
  for (const Shape& s : scene.shapes) {
    const auto c = shape_corners(s);
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

namespace detail {

inline double edge(geometry::Point a, geometry::Point b, geometry::Point p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

inline bool covers(const Shape& s, geometry::Point p) {
  if (const auto* r = std::get_if<Rect>(&s)) return p.x >= r->min.x && p.x <= r->max.x && p.y >= r->min.y && p.y <= r->max.y;
  if (const auto* t = std::get_if<Triangle>(&s)) {
    const double e0 = edge(t->v[0], t->v[1], p), e1 = edge(t->v[1], t->v[2], p), e2 = edge(t->v[2], t->v[0], p);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
  }
  const auto& l = std::get<Segment>(s);
  const double dx = l.b.x - l.a.x, dy = l.b.y - l.a.y;
  const double len2 = dx * dx + dy * dy;
  const double t = len2 > 0 ? std::clamp(((p.x - l.a.x) * dx + (p.y - l.a.y) * dy) / len2, 0.0, 1.0) : 0.0;
  return std::hypot(p.x - (l.a.x + t * dx), p.y - (l.a.y + t * dy)) <= 0.5 * l.width;
}

}  // namespace detail

// 4x4 supersampled painter's-algorithm rendering.
inline Tensor render_scene(const ShapeScene& scene) {
  require(scene.intensity.size() == scene.shapes.size(), ErrorKind::Data, "one intensity per shape required");
  constexpr int ss = 4;
  Tensor img({scene.height, scene.width});
  for (std::size_t y = 0; y < scene.height; ++y)
    for (std::size_t x = 0; x < scene.width; ++x) {
      double acc = 0.0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const geometry::Point p{static_cast<double>(x) + (sx + 0.5) / ss, static_cast<double>(y) + (sy + 0.5) / ss};
          double v = scene.background;
          for (std::size_t k = 0; k < scene.shapes.size(); ++k)
            if (detail::covers(scene.shapes[k], p)) v = scene.intensity[k];
          acc += v;
        }
      img(y, x) = acc / (ss * ss);
    }
  return img;
}

struct TeacherOutput {
  Tensor image;   // H x W grayscale
  Tensor logits;  // Hc x Wc x 65
};

// Corner cells are one-hot (logit 10) on the corner's sub-pixel channel, all
// other cells one-hot on the dustbin. The first corner in a cell wins.
inline TeacherOutput synthetic_teacher(const ShapeScene& scene) {
  require(scene.width % kCell == 0 && scene.height % kCell == 0 && scene.width > 0 && scene.height > 0,
          ErrorKind::Data, "teacher image size must be divisible by 8");
  const std::size_t hc = scene.height / kCell, wc = scene.width / kCell;
  TeacherOutput out{render_scene(scene), Tensor({hc, wc, kDetectorChannels})};
  std::vector<bool> labelled(hc * wc, false);
  for (const auto& c : scene_corners(scene)) {
    const long px = static_cast<long>(std::floor(c.x)), py = static_cast<long>(std::floor(c.y));
    if (px < 0 || py < 0 || px >= static_cast<long>(scene.width) || py >= static_cast<long>(scene.height)) continue;
    const std::size_t cell = static_cast<std::size_t>(py) / kCell * wc + static_cast<std::size_t>(px) / kCell;
    if (labelled[cell]) continue;
    labelled[cell] = true;
    out.logits[cell * kDetectorChannels + (static_cast<std::size_t>(py) % kCell) * kCell +
               static_cast<std::size_t>(px) % kCell] = kTeacherLogit;
  }
  for (std::size_t cell = 0; cell < hc * wc; ++cell)
    if (!labelled[cell]) out.logits[cell * kDetectorChannels + heads::kDustbin] = kTeacherLogit;
  return out;
}

// Random rectangles, triangles and line segments with vertices kept two
// pixels inside the border.
inline ShapeScene random_scene(std::size_t width, std::size_t height, std::size_t shape_count, std::uint64_t seed) {
  Rng rng(seed);
  ShapeScene scene{width, height, rng.uniform(0.05, 0.3), {}, {}};
  const double xmax = static_cast<double>(width) - 3.0, ymax = static_cast<double>(height) - 3.0;
  auto pt = [&] { return geometry::Point{rng.uniform(2.0, xmax), rng.uniform(2.0, ymax)}; };
  for (std::size_t k = 0; k < shape_count; ++k) {
    const std::size_t kind = rng.index(3);
    if (kind == 0) {
      const double w = rng.uniform(9.0, std::max(10.0, 0.5 * xmax)), h = rng.uniform(9.0, std::max(10.0, 0.5 * ymax));
      const double x0 = rng.uniform(2.0, std::max(2.0, xmax - w)), y0 = rng.uniform(2.0, std::max(2.0, ymax - h));
      scene.shapes.push_back(Rect{{x0, y0}, {std::min(x0 + w, xmax), std::min(y0 + h, ymax)}});
    } else if (kind == 1) {
      Triangle t{{pt(), pt(), pt()}};
      for (int tries = 0; tries < 16 && std::abs(detail::edge(t.v[0], t.v[1], t.v[2])) < 60.0; ++tries)
        t = Triangle{{pt(), pt(), pt()}};
      scene.shapes.push_back(t);
    } else {
      scene.shapes.push_back(Segment{pt(), pt(), 2.0});
    }
    scene.intensity.push_back(rng.uniform(0.55, 0.95));
  }
  return scene;
}

inline TeacherOutput synthetic_teacher(std::size_t width, std::size_t height, std::size_t shape_count,
                                       std::uint64_t seed) {
  return synthetic_teacher(random_scene(width, height, shape_count, seed));
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class KeypointSource { Teacher, Student };

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t steps = 200;
  std::uint64_t seed = 7;
  std::size_t image_size = 64;
  std::size_t dataset_size = 10;
  std::size_t shapes_per_image = 1;
  std::size_t descriptor_dim = 256;
  distill::LossWeights weights{};
  distill::PktOptions pkt{};
  geometry::MatchMargins margins{};
  double nonmatch_threshold = 8.0;
  double match_radius = 2.0;
  double detection_threshold = 0.01;
  double nms_radius = 4.0;
  std::size_t max_keypoints = 64;
  geometry::HomographyRanges homography{0.15, 0.1, 1e-4, 3.0};
  water::WaterTypeBounds water_bounds{};
  water::ScenePhysics scene{};
  geometry::Binarization binarization = geometry::Binarization::Sign;
  KeypointSource keypoints = KeypointSource::Teacher;

  void validate() const {
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::Usage, "learning rate must be >= 0");
    require(steps >= 1, ErrorKind::Usage, "steps must be >= 1");
    require(image_size >= kCell && image_size % kCell == 0, ErrorKind::Usage, "image size must be a multiple of 8");
    require(dataset_size >= 1, ErrorKind::Usage, "dataset must contain at least one image");
    weights.validate();
    margins.validate(descriptor_dim);
    water_bounds.validate();
    scene.validate();
  }
};

struct TrainSample {
  Tensor clear;           // in-air grayscale
  Tensor underwater;      // synthesized, grayscale
  Tensor warped;          // underwater image seen through the homography
  geometry::Homography homography;
  Tensor teacher_logits;  // teacher on the clear image
};

// Bilinear inverse warp; samples falling outside the source are 0.
inline Tensor warp_image(const Tensor& src, const geometry::Homography& h) {
  const std::size_t rows = src.dim(0), cols = src.dim(1);
  const geometry::Homography inv = h.inverse();
  Tensor out({rows, cols});
  for (std::size_t y = 0; y < rows; ++y)
    for (std::size_t x = 0; x < cols; ++x) {
      const auto p = inv.apply({static_cast<double>(x), static_cast<double>(y)});
      if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= static_cast<double>(cols - 1) && p.y <= static_cast<double>(rows - 1)))
        continue;
      const std::size_t x0 = std::min(static_cast<std::size_t>(p.x), cols - 1), y0 = std::min(static_cast<std::size_t>(p.y), rows - 1);
      const std::size_t x1 = std::min(x0 + 1, cols - 1), y1 = std::min(y0 + 1, rows - 1);
      const double fx = p.x - static_cast<double>(x0), fy = p.y - static_cast<double>(y0);
      out(y, x) = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) + fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
    }
  return out;
}

// Depth ramp from near (top) to the maximum scene depth (bottom).
inline Tensor ramp_depth(std::size_t height, std::size_t width, double near, double far) {
  Tensor depth({height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      depth(y, x) = near + (far - near) * static_cast<double>(y) / static_cast<double>(std::max<std::size_t>(1, height - 1));
  return depth;
}

inline TrainSample make_sample(const TeacherOutput& teacher, const TrainConfig& cfg, std::uint64_t seed) {
  const std::size_t h = teacher.image.dim(0), w = teacher.image.dim(1);
  water::RgbdFrame frame{water::gray_to_color(teacher.image), ramp_depth(h, w, 0.5, cfg.scene.max_scene_depth)};
  const auto params = water::sample_water_params(cfg.water_bounds, derive_seed(seed, 1));
  const Tensor underwater = water::to_grayscale(water::synthesize_underwater(frame, params, cfg.scene, derive_seed(seed, 2)));
  const auto hom = geometry::sample_homography({w, h}, cfg.homography, derive_seed(seed, 3));
  return {teacher.image, underwater, warp_image(underwater, hom), hom, teacher.logits};
}

inline std::vector<TrainSample> make_dataset(const TrainConfig& cfg) {
  cfg.validate();
  std::vector<TrainSample> data;
  for (std::size_t i = 0; i < cfg.dataset_size; ++i) {
    const auto teacher = synthetic_teacher(cfg.image_size, cfg.image_size, cfg.shapes_per_image, derive_seed(cfg.seed, 100 + i));
    data.push_back(make_sample(teacher, cfg, derive_seed(cfg.seed, 200 + i)));
  }
  return data;
}

struct KeypointPair {
  std::vector<heads::Keypoint> original;
  std::vector<heads::Keypoint> transformed;
};

inline std::vector<heads::Keypoint> student_keypoints(const StudentOutput& out, const TrainConfig& cfg) {
  auto kps = heads::detect_keypoints(heads::detector_probability_map(out.logits), cfg.detection_threshold, cfg.nms_radius);
  if (kps.size() > cfg.max_keypoints) kps.resize(cfg.max_keypoints);
  return kps;
}

// Pixels of the teacher's labelled corners (cells whose hot channel is not the dustbin).
inline std::vector<heads::Keypoint> teacher_corners(const Tensor& teacher_logits) {
  std::vector<heads::Keypoint> out;
  const std::size_t hc = teacher_logits.dim(0), wc = teacher_logits.dim(1);
  for (std::size_t cy = 0; cy < hc; ++cy)
    for (std::size_t cx = 0; cx < wc; ++cx) {
      const auto row = teacher_logits.row(cy, cx);
      const auto k = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (k == heads::kDustbin) continue;
      out.push_back({static_cast<double>(cx * kCell + k % kCell), static_cast<double>(cy * kCell + k / kCell), 1.0});
    }
  return out;
}

// Teacher mode: labelled corners and their rounded projections into the
// warped image. Student mode: the student's own detections on both images.
inline KeypointPair select_keypoints(const ToyStudent& model, const TrainSample& sample, const TrainConfig& cfg) {
  if (cfg.keypoints == KeypointSource::Student)
    return {student_keypoints(student_forward(sample.underwater, model), cfg),
            student_keypoints(student_forward(sample.warped, model), cfg)};
  KeypointPair kps;
  const double w = static_cast<double>(sample.warped.dim(1)), h = static_cast<double>(sample.warped.dim(0));
  for (const auto& k : teacher_corners(sample.teacher_logits)) {
    const auto p = sample.homography.apply({k.x, k.y});
    const double x = std::round(p.x), y = std::round(p.y);
    if (!(x >= 0 && y >= 0 && x < w && y < h)) continue;
    kps.original.push_back(k);
    kps.transformed.push_back({x, y, 1.0});
  }
  if (kps.original.size() > cfg.max_keypoints) {
    kps.original.resize(cfg.max_keypoints);
    kps.transformed.resize(cfg.max_keypoints);
  }
  return kps;
}

struct LossBreakdown {
  double kl = 0.0;
  double pkt = 0.0;
  double lp = 0.0;
  double ld = 0.0;
  double total = 0.0;
  std::size_t matches = 0;
  bool ld_skipped = false;
};

struct ObjectiveResult {
  LossBreakdown loss;
  ToyGradients grads;
};

namespace detail {

inline Tensor gather_descriptors(const StudentOutput& out, std::span<const heads::Keypoint> kps) {
  const std::size_t d = out.descriptors.dim(2);
  Tensor m({std::max<std::size_t>(kps.size(), 1), d});
  for (std::size_t i = 0; i < kps.size(); ++i) {
    const auto src = out.descriptors.row(static_cast<std::size_t>(kps[i].y) / kCell, static_cast<std::size_t>(kps[i].x) / kCell);
    std::copy(src.begin(), src.end(), m.row(i).begin());
  }
  return m;
}

inline void scatter_descriptor_grads(const Tensor& g, std::span<const heads::Keypoint> kps, Tensor& cell_grad) {
  for (std::size_t i = 0; i < kps.size(); ++i) {
    auto dst = cell_grad.row(static_cast<std::size_t>(kps[i].y) / kCell, static_cast<std::size_t>(kps[i].x) / kCell);
    const auto src = g.row(i);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

}  // namespace detail

// Full objective L = L_p + alpha L_d and its gradient for fixed keypoints.
inline ObjectiveResult objective(const ToyStudent& model, const TrainSample& sample, const KeypointPair& kps,
                                 const TrainConfig& cfg) {
  const StudentOutput orig = student_forward(sample.underwater, model);
  const StudentOutput warp = student_forward(sample.warped, model);

  const auto lp = distill::lp_loss_detailed(sample.teacher_logits, orig.logits, cfg.weights, cfg.pkt);
  ObjectiveResult res{{}, ToyStudent::zeros(model.descriptor_dim())};
  res.loss.kl = lp.kl;
  res.loss.pkt = lp.pkt;
  res.loss.lp = lp.total.value;

  Tensor grad_desc_orig(orig.descriptors.dims()), grad_desc_warp(warp.descriptors.dims());
  const std::size_t h = sample.warped.dim(0), w = sample.warped.dim(1);
  const auto corr = geometry::build_correspondences(kps.original, sample.homography, kps.transformed, {w, h},
                                                    cfg.nonmatch_threshold, cfg.match_radius);
  if (corr.matches.empty() || cfg.weights.alpha == 0.0) {
    res.loss.ld_skipped = corr.matches.empty();
  } else {
    const Tensor src = detail::gather_descriptors(orig, kps.original);
    const Tensor dst = detail::gather_descriptors(warp, kps.transformed);
    const auto ld = geometry::ld_loss_grad(corr, cfg.margins, src, dst, cfg.binarization);
    const auto total = distill::total_loss(lp.total, {ld.value, {ld.grad_src, ld.grad_dst}}, cfg.weights);
    res.loss.ld = ld.value;
    res.loss.matches = ld.matches;
    detail::scatter_descriptor_grads(total.grads[1], kps.original, grad_desc_orig);
    detail::scatter_descriptor_grads(total.grads[2], kps.transformed, grad_desc_warp);
  }
  res.loss.total = res.loss.lp + cfg.weights.alpha * res.loss.ld;

  student_backward(sample.underwater, orig, lp.total.grad, grad_desc_orig, res.grads);
  student_backward(sample.warped, warp, Tensor(warp.logits.dims()), grad_desc_warp, res.grads);
  return res;
}

// One SGD step on a sample: keypoints from the current student, then the
// analytic gradient of the joint objective.
inline LossBreakdown train_step(ToyStudent& model, const TrainSample& sample, const TrainConfig& cfg) {
  const KeypointPair kps = select_keypoints(model, sample, cfg);
  const ObjectiveResult res = objective(model, sample, kps, cfg);
  auto params = model.params();
  const auto grads = res.grads.params();
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t]->size(); ++i) (*params[t])[i] -= cfg.learning_rate * (*grads[t])[i];
  return res.loss;
}

inline ToyStudent initial_model(const TrainConfig& cfg) {
  return ToyStudent::random(cfg.descriptor_dim, derive_seed(cfg.seed, 1));
}

using StepCallback = std::function<void(std::size_t step, const LossBreakdown&)>;

// Cycles through the dataset in order, one sample per step.
inline ToyStudent train(const TrainConfig& cfg, const std::vector<TrainSample>& data, const StepCallback& on_step = {}) {
  cfg.validate();
  require(!data.empty(), ErrorKind::Usage, "training dataset is empty");
  ToyStudent model = initial_model(cfg);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const LossBreakdown loss = train_step(model, data[step % data.size()], cfg);
    if (on_step) on_step(step, loss);
  }
  return model;
}

// Mean L_p of a model over a dataset (no update).
inline double mean_lp(const ToyStudent& model, const std::vector<TrainSample>& data, const TrainConfig& cfg) {
  double acc = 0.0;
  for (const auto& s : data)
    acc += distill::lp_loss(s.teacher_logits, student_forward(s.underwater, model).logits, cfg.weights, cfg.pkt).value;
  return acc / static_cast<double>(data.size());
}

}  // namespace ufen::toy
