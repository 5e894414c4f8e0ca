#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "ufen/core.hpp"
#include "ufen/distill_losses.hpp"
#include "ufen/geometry_match.hpp"
#include "ufen/io.hpp"
#include "ufen/toy_distill.hpp"
#include "ufen/water_optics.hpp"

// JSON run configuration. Every section is optional; unknown keys anywhere
// are rejected. `default_config_json()` is the reference document.

namespace ufen::config {

using json = nlohmann::json;

namespace detail {

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  require(j.is_object(), ErrorKind::Data, "config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* a : keys) known = known || k == a;
    require(known, ErrorKind::Data, "config: unknown key '" + where + "." + k + "'");
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline water::Rgb read_rgb(const json& j, const char* key) {
  require(j.contains(key), ErrorKind::Data, std::string("water bounds: missing '") + key + "'");
  const json& a = j.at(key);
  require(a.is_array() && a.size() == 3, ErrorKind::Data, std::string("water bounds: '") + key + "' needs 3 numbers");
  water::Rgb out{};
  for (int c = 0; c < 3; ++c) {
    require(a[c].is_number(), ErrorKind::Data, std::string("water bounds: '") + key + "' must hold numbers");
    out[c] = a[c].get<double>();
  }
  return out;
}

}  // namespace detail

// --- water -----------------------------------------------------------------

inline water::SpectralWaterParams params_from_json(const json& j) {
  detail::allow_keys(j, "params", {"beta", "kd", "b", "wavelengths"});
  water::SpectralWaterParams p;
  p.beta = detail::read_rgb(j, "beta");
  p.kd = detail::read_rgb(j, "kd");
  p.b = detail::read_rgb(j, "b");
  if (j.contains("wavelengths")) p.wavelengths = detail::read_rgb(j, "wavelengths");
  return p;
}

inline json params_to_json(const water::SpectralWaterParams& p) {
  return {{"beta", p.beta}, {"kd", p.kd}, {"b", p.b}, {"wavelengths", p.wavelengths}};
}

inline water::WaterTypeBounds bounds_from_json(const json& j) {
  detail::allow_keys(j, "bounds", {"lower", "upper", "source"});
  require(j.contains("lower") && j.contains("upper"), ErrorKind::Data, "water bounds need 'lower' and 'upper'");
  water::WaterTypeBounds b{params_from_json(j.at("lower")), params_from_json(j.at("upper"))};
  b.validate();
  return b;
}

inline json bounds_to_json(const water::WaterTypeBounds& b) {
  return {{"lower", params_to_json(b.lower)}, {"upper", params_to_json(b.upper)}};
}

inline water::WaterTypeBounds load_bounds(const std::filesystem::path& path) {
  try {
    return bounds_from_json(json::parse(io::read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, "water bounds file " + path.string() + ": " + e.what());
  }
}

inline water::ScenePhysics scene_from_json(const json& j, water::ScenePhysics s = {}) {
  detail::allow_keys(j, "water.scene",
                     {"water_depth", "surface_irradiance", "max_scene_depth", "noise_sigma", "zero_depth_is_hole"});
  detail::read(j, "water_depth", s.water_depth);
  if (j.contains("surface_irradiance")) s.surface_irradiance = detail::read_rgb(j, "surface_irradiance");
  detail::read(j, "max_scene_depth", s.max_scene_depth);
  detail::read(j, "noise_sigma", s.noise_sigma);
  detail::read(j, "zero_depth_is_hole", s.zero_depth_is_hole);
  s.validate();
  return s;
}

inline json scene_to_json(const water::ScenePhysics& s) {
  return {{"water_depth", s.water_depth},
          {"surface_irradiance", s.surface_irradiance},
          {"max_scene_depth", s.max_scene_depth},
          {"noise_sigma", s.noise_sigma},
          {"zero_depth_is_hole", s.zero_depth_is_hole}};
}

// --- run config ------------------------------------------------------------

struct SweepConfig {
  std::size_t steps = 8;
  double beta_scale_min = 0.0;
  double beta_scale_max = 8.0;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::optional<water::WaterTypeBounds> water_bounds;
  std::string water_bounds_file;
  water::ScenePhysics scene = [] {
    water::ScenePhysics s;
    s.zero_depth_is_hole = true;
    return s;
  }();
  double detection_threshold = 0.01;
  double nms_radius = 4.0;
  distill::LossWeights weights{};
  distill::PktOptions pkt{};
  geometry::MatchMargins margins{};
  double nonmatch_threshold = 8.0;
  double match_radius = 2.0;
  std::optional<int> nn_max_distance;
  std::optional<double> nn_ratio;
  geometry::HomographyRanges homography{0.15, 0.1, 1e-4, 3.0};
  toy::TrainConfig train{};
  SweepConfig sweep{};

  // Bounds given inline win over bounds_file; relative files resolve against `base`.
  water::WaterTypeBounds resolve_bounds(const std::filesystem::path& base = {}) const {
    if (water_bounds) return *water_bounds;
    require(!water_bounds_file.empty(), ErrorKind::Usage,
            "no water bounds: set water.bounds or water.bounds_file in the config, or pass --bounds");
    std::filesystem::path p = water_bounds_file;
    if (p.is_relative() && !base.empty()) p = base / p;
    return load_bounds(p);
  }

  // TrainConfig with the shared sections folded in.
  toy::TrainConfig train_config(const water::WaterTypeBounds& bounds) const {
    toy::TrainConfig t = train;
    t.seed = seed;
    t.weights = weights;
    t.pkt = pkt;
    t.margins = margins;
    t.nonmatch_threshold = nonmatch_threshold;
    t.match_radius = match_radius;
    t.detection_threshold = detection_threshold;
    t.nms_radius = nms_radius;
    t.homography = homography;
    t.water_bounds = bounds;
    t.scene = scene;
    t.scene.zero_depth_is_hole = false;
    return t;
  }
};

inline RunConfig from_json(const json& j) {
  RunConfig c;
  detail::allow_keys(j, "", {"seed", "water", "detection", "losses", "matching", "homography", "train", "sweep"});
  detail::read(j, "seed", c.seed);

  if (j.contains("water")) {
    const json& w = j.at("water");
    detail::allow_keys(w, "water", {"bounds", "bounds_file", "scene"});
    if (w.contains("bounds") && !w.at("bounds").is_null()) c.water_bounds = bounds_from_json(w.at("bounds"));
    detail::read(w, "bounds_file", c.water_bounds_file);
    if (w.contains("scene")) c.scene = scene_from_json(w.at("scene"), c.scene);
  }
  if (j.contains("detection")) {
    const json& d = j.at("detection");
    detail::allow_keys(d, "detection", {"threshold", "nms_radius"});
    detail::read(d, "threshold", c.detection_threshold);
    detail::read(d, "nms_radius", c.nms_radius);
  }
  if (j.contains("losses")) {
    const json& l = j.at("losses");
    detail::allow_keys(l, "losses", {"alpha", "pkt_weight", "pkt_max_cells", "pkt_seed"});
    detail::read(l, "alpha", c.weights.alpha);
    detail::read(l, "pkt_weight", c.weights.pkt_weight);
    detail::read(l, "pkt_max_cells", c.pkt.max_cells);
    detail::read(l, "pkt_seed", c.pkt.seed);
    c.weights.validate();
  }
  if (j.contains("matching")) {
    const json& m = j.at("matching");
    detail::allow_keys(m, "matching", {"nonmatch_threshold", "match_radius", "P", "Q", "nn_max_distance", "nn_ratio"});
    detail::read(m, "nonmatch_threshold", c.nonmatch_threshold);
    detail::read(m, "match_radius", c.match_radius);
    detail::read(m, "P", c.margins.P);
    detail::read(m, "Q", c.margins.Q);
    if (m.contains("nn_max_distance") && !m.at("nn_max_distance").is_null()) {
      int v = 0;
      detail::read(m, "nn_max_distance", v);
      c.nn_max_distance = v;
    }
    if (m.contains("nn_ratio") && !m.at("nn_ratio").is_null()) {
      double v = 0;
      detail::read(m, "nn_ratio", v);
      c.nn_ratio = v;
    }
  }
  if (j.contains("homography")) {
    const json& h = j.at("homography");
    detail::allow_keys(h, "homography", {"rotation", "scale", "perspective", "translation"});
    detail::read(h, "rotation", c.homography.rotation);
    detail::read(h, "scale", c.homography.scale);
    detail::read(h, "perspective", c.homography.perspective);
    detail::read(h, "translation", c.homography.translation);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::allow_keys(t, "train",
                       {"learning_rate", "steps", "image_size", "dataset_size", "shapes_per_image", "descriptor_dim",
                        "max_keypoints", "binarization", "keypoints"});
    detail::read(t, "learning_rate", c.train.learning_rate);
    detail::read(t, "steps", c.train.steps);
    detail::read(t, "image_size", c.train.image_size);
    detail::read(t, "dataset_size", c.train.dataset_size);
    detail::read(t, "shapes_per_image", c.train.shapes_per_image);
    detail::read(t, "descriptor_dim", c.train.descriptor_dim);
    detail::read(t, "max_keypoints", c.train.max_keypoints);
    if (t.contains("binarization")) {
      std::string mode;
      detail::read(t, "binarization", mode);
      require(mode == "sign" || mode == "hardtanh", ErrorKind::Data, "train.binarization must be 'sign' or 'hardtanh'");
      c.train.binarization = mode == "sign" ? geometry::Binarization::Sign : geometry::Binarization::HardTanh;
    }
    if (t.contains("keypoints")) {
      std::string src;
      detail::read(t, "keypoints", src);
      require(src == "teacher" || src == "student", ErrorKind::Data, "train.keypoints must be 'teacher' or 'student'");
      c.train.keypoints = src == "teacher" ? toy::KeypointSource::Teacher : toy::KeypointSource::Student;
    }
  }
  if (j.contains("sweep")) {
    const json& s = j.at("sweep");
    detail::allow_keys(s, "sweep", {"steps", "beta_scale_min", "beta_scale_max"});
    detail::read(s, "steps", c.sweep.steps);
    detail::read(s, "beta_scale_min", c.sweep.beta_scale_min);
    detail::read(s, "beta_scale_max", c.sweep.beta_scale_max);
  }
  return c;
}

inline json to_json(const RunConfig& c) {
  json nn_max = c.nn_max_distance ? json(*c.nn_max_distance) : json(nullptr);
  json nn_ratio = c.nn_ratio ? json(*c.nn_ratio) : json(nullptr);
  return {
      {"seed", c.seed},
      {"water",
       {{"bounds", c.water_bounds ? bounds_to_json(*c.water_bounds) : json(nullptr)},
        {"bounds_file", c.water_bounds_file},
        {"scene", scene_to_json(c.scene)}}},
      {"detection", {{"threshold", c.detection_threshold}, {"nms_radius", c.nms_radius}}},
      {"losses",
       {{"alpha", c.weights.alpha},
        {"pkt_weight", c.weights.pkt_weight},
        {"pkt_max_cells", c.pkt.max_cells},
        {"pkt_seed", c.pkt.seed}}},
      {"matching",
       {{"nonmatch_threshold", c.nonmatch_threshold},
        {"match_radius", c.match_radius},
        {"P", c.margins.P},
        {"Q", c.margins.Q},
        {"nn_max_distance", nn_max},
        {"nn_ratio", nn_ratio}}},
      {"homography",
       {{"rotation", c.homography.rotation},
        {"scale", c.homography.scale},
        {"perspective", c.homography.perspective},
        {"translation", c.homography.translation}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"steps", c.train.steps},
        {"image_size", c.train.image_size},
        {"dataset_size", c.train.dataset_size},
        {"shapes_per_image", c.train.shapes_per_image},
        {"descriptor_dim", c.train.descriptor_dim},
        {"max_keypoints", c.train.max_keypoints},
        {"binarization", c.train.binarization == geometry::Binarization::Sign ? "sign" : "hardtanh"},
        {"keypoints", c.train.keypoints == toy::KeypointSource::Teacher ? "teacher" : "student"}}},
      {"sweep",
       {{"steps", c.sweep.steps}, {"beta_scale_min", c.sweep.beta_scale_min}, {"beta_scale_max", c.sweep.beta_scale_max}}},
  };
}

inline json default_config_json() { return to_json(RunConfig{}); }

inline RunConfig load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(io::read_file(path)));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Data, "config " + path.string() + ": " + e.what());
  }
}

}  // namespace ufen::config
