#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ufen/config.hpp"
#include "ufen/core.hpp"
#include "ufen/distill_losses.hpp"
#include "ufen/feature_eval.hpp"
#include "ufen/geometry_match.hpp"
#include "ufen/gradcheck.hpp"
#include "ufen/io.hpp"
#include "ufen/toy_distill.hpp"
#include "ufen/trajectory_eval.hpp"
#include "ufen/water_optics.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ufen;

namespace {

#ifndef UFEN_DATA_DIR
#define UFEN_DATA_DIR "data"
#endif

const char* const kDefaultBounds = UFEN_DATA_DIR "/jerlov_open_ocean_I_III.json";

struct Context {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string bounds_path;
  config::RunConfig cfg;
  fs::path config_dir;

  void load() {
    if (!config_path.empty()) {
      cfg = config::load(config_path);
      config_dir = fs::path(config_path).parent_path();
    }
    if (seed) cfg.seed = *seed;
  }

  // --bounds, then the config, then the shipped Type I / Type III table.
  water::WaterTypeBounds bounds() const {
    if (!bounds_path.empty()) return config::load_bounds(bounds_path);
    if (cfg.water_bounds || !cfg.water_bounds_file.empty()) return cfg.resolve_bounds(config_dir);
    return config::load_bounds(kDefaultBounds);
  }
};

std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty())
    std::cout << text;
  else
    io::write_file_atomic(out_path, text);
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string input, output;
};

int run_synth(Context& ctx, const SynthArgs& a) {
  ctx.load();
  const auto bounds = ctx.bounds();
  require(fs::is_directory(a.input), ErrorKind::Data, "input directory not found: " + a.input);
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(a.input))
    if (e.is_regular_file() && e.path().extension() == ".ppm") images.push_back(e.path());
  std::sort(images.begin(), images.end());
  require(!images.empty(), ErrorKind::Data, "no .ppm images in " + a.input);
  fs::create_directories(a.output);

  for (const fs::path& img : images) {
    const std::string stem = img.stem().string();
    const fs::path depth_path = img.parent_path() / (stem + ".depth.uft");
    water::RgbdFrame frame{io::read_ppm(img), io::read_tensor(depth_path)};
    frame.validate();
    const std::uint64_t seed = derive_seed(ctx.cfg.seed, name_hash(stem));
    const auto params = water::sample_water_params(bounds, derive_seed(seed, 1));
    const Tensor out = water::synthesize_underwater(frame, params, ctx.cfg.scene, derive_seed(seed, 2));
    io::write_ppm(fs::path(a.output) / (stem + ".ppm"), out);
    const json prov = {{"source", img.filename().string()},
                       {"depth", depth_path.filename().string()},
                       {"run_seed", ctx.cfg.seed},
                       {"seed", seed},
                       {"params", config::params_to_json(params)},
                       {"background_light", water::background_light(params, ctx.cfg.scene)},
                       {"scene", config::scene_to_json(ctx.cfg.scene)}};
    io::write_file_atomic(fs::path(a.output) / (stem + ".json"), prov.dump(2) + "\n");
    std::cout << stem << ".ppm\n";
  }
  return 0;
}

// --- losses ----------------------------------------------------------------

struct LossesArgs {
  std::string teacher, student, grad_out;
};

int run_losses(Context& ctx, const LossesArgs& a) {
  ctx.load();
  const Tensor teacher = io::read_tensor(a.teacher);
  const Tensor student = io::read_tensor(a.student);
  // single-cell inputs report only the KL term
  const bool single_cell = teacher.rank() == 3 && teacher.dim(0) * teacher.dim(1) < 2;
  distill::LossWeights weights = ctx.cfg.weights;
  if (single_cell) weights.pkt_weight = 0.0;
  const auto lp = distill::lp_loss_detailed(teacher, student, weights, ctx.cfg.pkt);
  require(std::isfinite(lp.total.value) && all_finite(lp.total.grad), ErrorKind::Numerical, "loss is not finite");
  if (!a.grad_out.empty()) io::write_tensor(a.grad_out, lp.total.grad);
  const json pkt = single_cell ? json(nullptr) : json(lp.pkt);
  std::cout << json{{"kl", lp.kl}, {"pkt", pkt}, {"lp", lp.total.value}}.dump() << "\n";
  return 0;
}

// --- gradcheck -------------------------------------------------------------

struct GradcheckArgs {
  std::size_t instances = 20;
  bool corrupt = false;
};

int run_gradcheck(Context& ctx, const GradcheckArgs& a) {
  ctx.load();
  require(a.instances >= 1, ErrorKind::Usage, "--instances must be >= 1");
  gradcheck::Options opt{a.instances, ctx.cfg.seed, a.corrupt};
  std::cout << "suite,instances,worst_relative_error,tolerance,status\n";
  std::string failed;
  for (const auto& r : gradcheck::run_all(opt, ctx.bounds())) {
    std::cout << r.name << ',' << r.instances << ',' << csv_number(r.worst_error) << ',' << csv_number(r.tolerance)
              << ',' << (r.passed ? "PASS" : "FAIL") << "\n";
    if (!r.passed) failed += (failed.empty() ? "" : ", ") + r.name;
  }
  require(failed.empty(), ErrorKind::Numerical, "gradient check failed: " + failed);
  return 0;
}

// --- train-toy -------------------------------------------------------------

struct TrainArgs {
  std::string out;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
};

int run_train(Context& ctx, const TrainArgs& a) {
  ctx.load();
  toy::TrainConfig tc = ctx.cfg.train_config(ctx.bounds());
  if (a.steps) tc.steps = *a.steps;
  if (a.lr) tc.learning_rate = *a.lr;
  tc.validate();
  const auto data = toy::make_dataset(tc);
  const double initial = toy::mean_lp(toy::initial_model(tc), data, tc);

  std::ostringstream log;
  log << std::setprecision(17) << "step,L_KL,L_PKT,L_d,L\n";
  const toy::ToyStudent model = toy::train(tc, data, [&log](std::size_t step, const toy::LossBreakdown& l) {
    require(std::isfinite(l.total), ErrorKind::Numerical, "training diverged at step " + std::to_string(step));
    log << step << ',' << l.kl << ',' << l.pkt << ',' << l.ld << ',' << l.total << '\n';
  });
  const double final_lp = toy::mean_lp(model, data, tc);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  io::write_tensor(dir / "w_det.uft", model.w_det);
  io::write_tensor(dir / "b_det.uft", model.b_det);
  io::write_tensor(dir / "w_desc.uft", model.w_desc);
  io::write_tensor(dir / "b_desc.uft", model.b_desc);
  io::write_file_atomic(dir / "train_log.csv", log.str());
  std::cout << json{{"steps", tc.steps},
                    {"learning_rate", tc.learning_rate},
                    {"initial_lp", initial},
                    {"final_lp", final_lp},
                    {"ratio", final_lp / initial}}
                   .dump()
            << "\n";
  return 0;
}

// --- match -----------------------------------------------------------------

struct MatchArgs {
  std::string a, b, out;
  std::optional<int> max_distance;
  std::optional<double> ratio;
};

int run_match(Context& ctx, const MatchArgs& a) {
  ctx.load();
  const auto da = io::read_descriptors(a.a);
  const auto db = io::read_descriptors(a.b);
  geometry::NnOptions opt{ctx.cfg.nn_max_distance, ctx.cfg.nn_ratio};
  if (a.max_distance) opt.max_distance = a.max_distance;
  if (a.ratio) opt.ratio = a.ratio;
  std::ostringstream os;
  os << "index_a,index_b,distance\n";
  for (const auto& m : geometry::nn_match(da, db, opt)) os << m.a << ',' << m.b << ',' << m.distance << '\n';
  emit(os.str(), a.out);
  return 0;
}

// --- eval-overlap ----------------------------------------------------------

struct OverlapArgs {
  std::string reference, turbid, clear_image, turbid_image, out;
  std::optional<double> degradation;
  bool sweep = false;
  std::string image, depth;
  std::optional<std::size_t> steps;
  std::optional<double> scale_min, scale_max;
};

int run_overlap(Context& ctx, const OverlapArgs& a) {
  ctx.load();
  std::ostringstream os;
  if (a.sweep) {
    require(!a.image.empty() && !a.depth.empty(), ErrorKind::Usage, "--sweep needs --image and --depth");
    const water::RgbdFrame frame{io::read_ppm(a.image), io::read_tensor(a.depth)};
    const auto params = water::sample_water_params(ctx.bounds(), derive_seed(ctx.cfg.seed, 0));
    const auto rows = eval::turbidity_sweep(
        frame, [](const Tensor& g) { return eval::harris_keypoints(g); }, a.steps.value_or(ctx.cfg.sweep.steps),
        a.scale_min.value_or(ctx.cfg.sweep.beta_scale_min), a.scale_max.value_or(ctx.cfg.sweep.beta_scale_max), params,
        ctx.cfg.scene, ctx.cfg.seed);
    os << "beta_scale,degradation_proxy,P_R,P_c,R\n";
    for (const auto& r : rows)
      os << csv_number(r.beta_scale) << ',' << csv_number(r.degradation) << ',' << r.overlap.reference_count << ','
         << r.overlap.overlap_count << ',' << csv_number(r.overlap.rate) << '\n';
  } else {
    require(!a.reference.empty() && !a.turbid.empty(), ErrorKind::Usage,
            "eval-overlap needs --reference and --turbid keypoint files, or --sweep");
    const auto ref = io::read_keypoints(a.reference);
    const auto tur = io::read_keypoints(a.turbid);
    auto report = eval::overlap_rate(ref, tur);
    if (a.degradation) {
      report.degradation = *a.degradation;
    } else if (!a.clear_image.empty() || !a.turbid_image.empty()) {
      require(!a.clear_image.empty() && !a.turbid_image.empty(), ErrorKind::Usage,
              "--clear-image and --turbid-image go together");
      report.degradation = eval::degradation_index(water::to_grayscale(io::read_ppm(a.clear_image)),
                                                   water::to_grayscale(io::read_ppm(a.turbid_image)));
    }
    os << "degradation_proxy,P_R,P_c,R\n"
       << csv_number(report.degradation) << ',' << report.reference_count << ',' << report.overlap_count << ','
       << csv_number(report.rate) << '\n';
  }
  emit(os.str(), a.out);
  return 0;
}

// --- eval-ate --------------------------------------------------------------

struct AteArgs {
  std::string est, gt, out;
  double offset_range = 0.0;
  double offset_step = 0.01;
};

int run_ate(Context& ctx, const AteArgs& a) {
  ctx.load();
  const auto est = io::read_tum(a.est);
  const auto gt = io::read_tum(a.gt);
  const auto r = trajectory::time_offset_search(est, gt, a.offset_range, a.offset_step);
  json rot = json::array();
  for (int i = 0; i < 3; ++i) rot.push_back({r.transform.rotation(i, 0), r.transform.rotation(i, 1), r.transform.rotation(i, 2)});
  const json report = {{"offset", r.offset},
                       {"scale", r.transform.scale},
                       {"rotation", rot},
                       {"translation", {r.transform.translation.x(), r.transform.translation.y(), r.transform.translation.z()}},
                       {"ate", r.ate},
                       {"associated", r.associated}};
  emit(report.dump(2) + "\n", a.out);
  return 0;
}

int run_config(Context& ctx) {
  ctx.load();
  std::cout << config::to_json(ctx.cfg).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ufen: underwater feature extraction toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Context ctx;
  app.add_option("--config", ctx.config_path, "JSON run configuration");
  app.add_option("--seed", ctx.seed, "master seed (overrides the config)");
  app.add_option("--bounds", ctx.bounds_path, "water-type bounds JSON (overrides the config)");

  int rc = 0;

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "RGBD directory -> synthetic underwater images + provenance JSON");
  s->add_option("--input", synth.input, "directory of name.ppm + name.depth.uft")->required();
  s->add_option("--output", synth.output, "output directory")->required();
  s->callback([&] { rc = run_synth(ctx, synth); });

  LossesArgs losses;
  auto* l = app.add_subcommand("losses", "teacher + student logits -> L_KL, L_PKT, L_p and dL_p/dstudent");
  l->add_option("--teacher", losses.teacher, "teacher logits (.uft, Hc x Wc x 65)")->required();
  l->add_option("--student", losses.student, "student logits (.uft, Hc x Wc x 65)")->required();
  l->add_option("--grad-out", losses.grad_out, "write the gradient tensor here");
  l->callback([&] { rc = run_losses(ctx, losses); });

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "finite-difference checks of every analytic gradient");
  g->add_option("--instances", gc.instances, "random instances per suite");
  g->add_flag("--corrupt-gradient", gc.corrupt, "test hook: perturb the analytic gradients");
  g->callback([&] { rc = run_gradcheck(ctx, gc); });

  TrainArgs train;
  auto* t = app.add_subcommand("train-toy", "train the toy student; writes checkpoint tensors and a CSV log");
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--steps", train.steps, "number of SGD steps");
  t->add_option("--lr", train.lr, "learning rate");
  t->callback([&] { rc = run_train(ctx, train); });

  MatchArgs match;
  auto* m = app.add_subcommand("match", "mutual nearest-neighbour matching of two descriptor files");
  m->add_option("--a", match.a, "descriptor file A (32-byte records)")->required();
  m->add_option("--b", match.b, "descriptor file B (32-byte records)")->required();
  m->add_option("--max-distance", match.max_distance, "keep matches with Hamming distance <= this");
  m->add_option("--ratio", match.ratio, "keep matches with best < ratio * second best");
  m->add_option("--out", match.out, "write CSV here instead of stdout");
  m->callback([&] { rc = run_match(ctx, match); });

  OverlapArgs ov;
  auto* o = app.add_subcommand("eval-overlap", "overlap detection rate from keypoint files or a turbidity sweep");
  o->add_option("--reference", ov.reference, "reference keypoints CSV");
  o->add_option("--turbid", ov.turbid, "turbid-image keypoints CSV");
  o->add_option("--degradation", ov.degradation, "degradation proxy to report");
  o->add_option("--clear-image", ov.clear_image, "clear PPM, for the degradation proxy");
  o->add_option("--turbid-image", ov.turbid_image, "turbid PPM, for the degradation proxy");
  o->add_flag("--sweep", ov.sweep, "synthesize a turbidity sweep from --image and --depth");
  o->add_option("--image", ov.image, "clear PPM for the sweep");
  o->add_option("--depth", ov.depth, "depth map (.uft) for the sweep");
  o->add_option("--steps", ov.steps, "sweep steps");
  o->add_option("--scale-min", ov.scale_min, "smallest attenuation scale");
  o->add_option("--scale-max", ov.scale_max, "largest attenuation scale");
  o->add_option("--out", ov.out, "write CSV here instead of stdout");
  o->callback([&] { rc = run_overlap(ctx, ov); });

  AteArgs ate;
  auto* e = app.add_subcommand("eval-ate", "ATE after similarity alignment, with optional time-offset search");
  e->add_option("--est", ate.est, "estimated trajectory (TUM)")->required();
  e->add_option("--gt", ate.gt, "ground-truth trajectory (TUM)")->required();
  e->add_option("--offset-range", ate.offset_range, "search offsets in [-range, +range] seconds");
  e->add_option("--offset-step", ate.offset_step, "offset grid step in seconds");
  e->add_option("--out", ate.out, "write JSON here instead of stdout");
  e->callback([&] { rc = run_ate(ctx, ate); });

  auto* c = app.add_subcommand("config", "print the effective configuration (defaults without --config)");
  c->callback([&] { rc = run_config(ctx); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    std::cerr << "E:1: " << err.what() << "\n";
    return 1;
  } catch (const Error& err) {
    const int code = exit_code(err.kind());
    std::cerr << "E:" << code << ": " << err.what() << "\n";
    return code;
  } catch (const std::exception& err) {
    std::cerr << "E:2: " << err.what() << "\n";
    return 2;
  }
  return rc;
}
