// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: synth / fit / render / eval / bench. Behavior is
// driven by a JSON config file with flag overrides (flags win); every field
// has a default and unknown config keys are hard errors. Exit codes: 0 on
// success, 2 for usage/config/IO problems, 3 for numerical failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "asplat/dataset.hpp"
#include "asplat/image_io.hpp"
#include "asplat/loss.hpp"
#include "asplat/model_io.hpp"
#include "asplat/optim.hpp"
#include "asplat/render.hpp"

using namespace asplat;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

// ---------------------------------------------------------------------------
// Resolved run configuration: one section per subcommand plus the shared
// seed/thread knobs. Defaults live in the C++ structs; the JSON layer only
// overrides what it mentions.

struct SynthSection {
  SynthConfig cfg;
  std::string out = "dataset";
};

struct FitSection {
  FitConfig cfg;
  std::string data = "dataset/manifest.json";
  std::string out = "run";
  std::vector<std::string> ablate;
};

struct RenderSection {
  std::string checkpoint = "run/model.asplat";
  std::string data;              // manifest for dataset-frame rendering
  std::string split = "test";
  int frame = 0;                 // index within the split or the pose file
  std::string pose_file;         // novel pose JSON; overrides the dataset pose
  int latent_row = -1;           // -1: identity latent bones for novel poses
  std::string out = "render.png";
  // Stand-alone camera for novel poses (mirrors the synth orbit at t = 0).
  int width = 128, height = 128;
  double fov_y_deg = 50.0, orbit_radius = 2.6, orbit_elevation = 0.35, orbit_angle = 0.25;
  bool bench = false;
  int bench_renders = 100, bench_warmup = 10;
};

struct EvalSection {
  std::string checkpoint = "run/model.asplat";
  std::string data = "dataset/manifest.json";
  std::string split = "test";
  std::string out = "eval.csv";
};

struct BenchSection {
  std::string checkpoint;  // empty: time a synthetic rest-pose scene
  int width = 256, height = 256;
  int count = 10000;       // synthetic scene component count
  int oracle_steps = 256;
  int repeat = 1;
  std::string out;         // optional CSV file; the table always goes to stdout
};

struct RunConfig {
  uint64_t seed = 0;
  int threads = 0;
  SynthSection synth;
  FitSection fit;
  RenderSection render;
  EvalSection eval;
  BenchSection bench;
};

// ---------------------------------------------------------------------------
// JSON <-> RunConfig. Unknown keys anywhere are configuration errors.

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw std::runtime_error("unknown config key '" + where + it.key() + "'");
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& value) {
  if (obj.contains(key)) value = obj.at(key).get<T>();
}

void read_vec3(const json& obj, const char* key, Vec3& value) {
  if (!obj.contains(key)) return;
  const json& a = obj.at(key);
  value = Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
}

void read_grid_res(const json& obj, const char* key, Eigen::Vector3i& value) {
  if (!obj.contains(key)) return;
  const json& a = obj.at(key);
  value = Eigen::Vector3i(a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>());
}

void load_synth(const json& j, SynthSection& s) {
  check_keys(j, "synth.",
             {"out", "frames", "width", "height", "fov_y_deg", "orbit_radius",
              "orbit_elevation", "orbit_turns", "root_sway", "hidden_appendage",
              "hidden_amplitude", "hidden_frequency", "gt_count", "gt_sh_degree",
              "gt_grid_res", "gt_delta_amp", "pose_noise", "sample_density", "motion"});
  read_field(j, "out", s.out);
  read_field(j, "frames", s.cfg.frames);
  read_field(j, "width", s.cfg.width);
  read_field(j, "height", s.cfg.height);
  read_field(j, "fov_y_deg", s.cfg.fov_y_deg);
  read_field(j, "orbit_radius", s.cfg.orbit_radius);
  read_field(j, "orbit_elevation", s.cfg.orbit_elevation);
  read_field(j, "orbit_turns", s.cfg.orbit_turns);
  read_field(j, "root_sway", s.cfg.root_sway);
  read_field(j, "hidden_appendage", s.cfg.hidden_appendage);
  read_field(j, "hidden_amplitude", s.cfg.hidden_amplitude);
  read_field(j, "hidden_frequency", s.cfg.hidden_frequency);
  read_field(j, "gt_count", s.cfg.gt_count);
  read_field(j, "gt_sh_degree", s.cfg.gt_sh_degree);
  read_field(j, "gt_grid_res", s.cfg.gt_grid_res);
  read_field(j, "gt_delta_amp", s.cfg.gt_delta_amp);
  read_field(j, "pose_noise", s.cfg.pose_noise);
  read_field(j, "sample_density", s.cfg.biped.sample_density);
  if (j.contains("motion")) {
    s.cfg.motion.clear();
    for (const json& jw : j.at("motion")) {
      check_keys(jw, "synth.motion[].", {"joint", "axis", "amplitude", "frequency", "phase"});
      MotionWave w;
      read_field(jw, "joint", w.joint);
      read_vec3(jw, "axis", w.axis);
      read_field(jw, "amplitude", w.amplitude);
      read_field(jw, "frequency", w.frequency);
      read_field(jw, "phase", w.phase);
      s.cfg.motion.push_back(w);
    }
  }
}

json dump_synth(const SynthSection& s) {
  json j;
  j["out"] = s.out;
  j["frames"] = s.cfg.frames;
  j["width"] = s.cfg.width;
  j["height"] = s.cfg.height;
  j["fov_y_deg"] = s.cfg.fov_y_deg;
  j["orbit_radius"] = s.cfg.orbit_radius;
  j["orbit_elevation"] = s.cfg.orbit_elevation;
  j["orbit_turns"] = s.cfg.orbit_turns;
  j["root_sway"] = s.cfg.root_sway;
  j["hidden_appendage"] = s.cfg.hidden_appendage;
  j["hidden_amplitude"] = s.cfg.hidden_amplitude;
  j["hidden_frequency"] = s.cfg.hidden_frequency;
  j["gt_count"] = s.cfg.gt_count;
  j["gt_sh_degree"] = s.cfg.gt_sh_degree;
  j["gt_grid_res"] = s.cfg.gt_grid_res;
  j["gt_delta_amp"] = s.cfg.gt_delta_amp;
  j["pose_noise"] = s.cfg.pose_noise;
  j["sample_density"] = s.cfg.biped.sample_density;
  json waves = json::array();
  for (const MotionWave& w : s.cfg.motion)
    waves.push_back({{"joint", w.joint},
                     {"axis", {w.axis.x(), w.axis.y(), w.axis.z()}},
                     {"amplitude", w.amplitude},
                     {"frequency", w.frequency},
                     {"phase", w.phase}});
  j["motion"] = std::move(waves);
  return j;
}

void load_fit(const json& j, FitSection& s) {
  check_keys(j, "fit.",
             {"data", "out", "iterations", "ablate", "lr", "densify", "weights", "model",
              "knn_refresh", "checkpoint_interval", "background"});
  read_field(j, "data", s.data);
  read_field(j, "out", s.out);
  read_field(j, "iterations", s.cfg.iterations);
  read_field(j, "ablate", s.ablate);
  read_field(j, "knn_refresh", s.cfg.knn_refresh);
  read_field(j, "checkpoint_interval", s.cfg.checkpoint_interval);
  read_vec3(j, "background", s.cfg.background);
  if (j.contains("lr")) {
    const json& lr = j.at("lr");
    check_keys(lr, "fit.lr.",
               {"means", "rotations", "log_scales", "opacity", "sh", "grid_delta",
                "grid_latent", "latent_table", "pose"});
    read_field(lr, "means", s.cfg.lr_means);
    read_field(lr, "rotations", s.cfg.lr_rotations);
    read_field(lr, "log_scales", s.cfg.lr_log_scales);
    read_field(lr, "opacity", s.cfg.lr_opacity);
    read_field(lr, "sh", s.cfg.lr_sh);
    read_field(lr, "grid_delta", s.cfg.lr_grid_delta);
    read_field(lr, "grid_latent", s.cfg.lr_grid_latent);
    read_field(lr, "latent_table", s.cfg.lr_latent_table);
    read_field(lr, "pose", s.cfg.lr_pose);
  }
  if (j.contains("densify")) {
    const json& d = j.at("densify");
    check_keys(d, "fit.densify.",
               {"interval", "start", "stop", "grad", "prune_opacity", "split_scale",
                "split_factor", "clone_nudge", "max_components"});
    read_field(d, "interval", s.cfg.densify_interval);
    read_field(d, "start", s.cfg.densify_start);
    read_field(d, "stop", s.cfg.densify_stop);
    read_field(d, "grad", s.cfg.densify_grad);
    read_field(d, "prune_opacity", s.cfg.prune_opacity);
    read_field(d, "split_scale", s.cfg.split_scale);
    read_field(d, "split_factor", s.cfg.split_factor);
    read_field(d, "clone_nudge", s.cfg.clone_nudge);
    read_field(d, "max_components", s.cfg.max_components);
  }
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    check_keys(w, "fit.weights.",
               {"ssim", "rot_std", "scale_std", "opacity_std", "sh_std", "delta_std",
                "latent_w_std", "delta_norm", "latent_w_norm", "scale_norm", "knn_k"});
    read_field(w, "ssim", s.cfg.weights.ssim);
    read_field(w, "rot_std", s.cfg.weights.rot_std);
    read_field(w, "scale_std", s.cfg.weights.scale_std);
    read_field(w, "opacity_std", s.cfg.weights.opacity_std);
    read_field(w, "sh_std", s.cfg.weights.sh_std);
    read_field(w, "delta_std", s.cfg.weights.delta_std);
    read_field(w, "latent_w_std", s.cfg.weights.latent_w_std);
    read_field(w, "delta_norm", s.cfg.weights.delta_norm);
    read_field(w, "latent_w_norm", s.cfg.weights.latent_w_norm);
    read_field(w, "scale_norm", s.cfg.weights.scale_norm);
    read_field(w, "knn_k", s.cfg.weights.knn_k);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "fit.model.",
               {"count", "sh_degree", "n_l", "grid_res", "grid_inflation", "init_opacity"});
    read_field(m, "count", s.cfg.model.count);
    read_field(m, "sh_degree", s.cfg.model.sh_degree);
    read_field(m, "n_l", s.cfg.model.n_l);
    read_grid_res(m, "grid_res", s.cfg.model.grid_res);
    read_field(m, "grid_inflation", s.cfg.model.grid_inflation);
    read_field(m, "init_opacity", s.cfg.model.init_opacity);
  }
}

json dump_fit(const FitSection& s) {
  json j;
  j["data"] = s.data;
  j["out"] = s.out;
  j["iterations"] = s.cfg.iterations;
  j["ablate"] = s.ablate;
  j["knn_refresh"] = s.cfg.knn_refresh;
  j["checkpoint_interval"] = s.cfg.checkpoint_interval;
  j["background"] = {s.cfg.background.x(), s.cfg.background.y(), s.cfg.background.z()};
  j["lr"] = {{"means", s.cfg.lr_means},
             {"rotations", s.cfg.lr_rotations},
             {"log_scales", s.cfg.lr_log_scales},
             {"opacity", s.cfg.lr_opacity},
             {"sh", s.cfg.lr_sh},
             {"grid_delta", s.cfg.lr_grid_delta},
             {"grid_latent", s.cfg.lr_grid_latent},
             {"latent_table", s.cfg.lr_latent_table},
             {"pose", s.cfg.lr_pose}};
  j["densify"] = {{"interval", s.cfg.densify_interval},
                  {"start", s.cfg.densify_start},
                  {"stop", s.cfg.densify_stop},
                  {"grad", s.cfg.densify_grad},
                  {"prune_opacity", s.cfg.prune_opacity},
                  {"split_scale", s.cfg.split_scale},
                  {"split_factor", s.cfg.split_factor},
                  {"clone_nudge", s.cfg.clone_nudge},
                  {"max_components", s.cfg.max_components}};
  j["weights"] = {{"ssim", s.cfg.weights.ssim},
                  {"rot_std", s.cfg.weights.rot_std},
                  {"scale_std", s.cfg.weights.scale_std},
                  {"opacity_std", s.cfg.weights.opacity_std},
                  {"sh_std", s.cfg.weights.sh_std},
                  {"delta_std", s.cfg.weights.delta_std},
                  {"latent_w_std", s.cfg.weights.latent_w_std},
                  {"delta_norm", s.cfg.weights.delta_norm},
                  {"latent_w_norm", s.cfg.weights.latent_w_norm},
                  {"scale_norm", s.cfg.weights.scale_norm},
                  {"knn_k", s.cfg.weights.knn_k}};
  j["model"] = {{"count", s.cfg.model.count},
                {"sh_degree", s.cfg.model.sh_degree},
                {"n_l", s.cfg.model.n_l},
                {"grid_res", {s.cfg.model.grid_res.x(), s.cfg.model.grid_res.y(),
                              s.cfg.model.grid_res.z()}},
                {"grid_inflation", s.cfg.model.grid_inflation},
                {"init_opacity", s.cfg.model.init_opacity}};
  return j;
}

void load_render(const json& j, RenderSection& s) {
  check_keys(j, "render.",
             {"checkpoint", "data", "split", "frame", "pose", "latent_row", "out", "width",
              "height", "fov_y_deg", "orbit_radius", "orbit_elevation", "orbit_angle",
              "bench", "bench_renders", "bench_warmup"});
  read_field(j, "checkpoint", s.checkpoint);
  read_field(j, "data", s.data);
  read_field(j, "split", s.split);
  read_field(j, "frame", s.frame);
  read_field(j, "pose", s.pose_file);
  read_field(j, "latent_row", s.latent_row);
  read_field(j, "out", s.out);
  read_field(j, "width", s.width);
  read_field(j, "height", s.height);
  read_field(j, "fov_y_deg", s.fov_y_deg);
  read_field(j, "orbit_radius", s.orbit_radius);
  read_field(j, "orbit_elevation", s.orbit_elevation);
  read_field(j, "orbit_angle", s.orbit_angle);
  read_field(j, "bench", s.bench);
  read_field(j, "bench_renders", s.bench_renders);
  read_field(j, "bench_warmup", s.bench_warmup);
}

json dump_render(const RenderSection& s) {
  json j;
  j["checkpoint"] = s.checkpoint;
  j["data"] = s.data;
  j["split"] = s.split;
  j["frame"] = s.frame;
  j["pose"] = s.pose_file;
  j["latent_row"] = s.latent_row;
  j["out"] = s.out;
  j["width"] = s.width;
  j["height"] = s.height;
  j["fov_y_deg"] = s.fov_y_deg;
  j["orbit_radius"] = s.orbit_radius;
  j["orbit_elevation"] = s.orbit_elevation;
  j["orbit_angle"] = s.orbit_angle;
  j["bench"] = s.bench;
  j["bench_renders"] = s.bench_renders;
  j["bench_warmup"] = s.bench_warmup;
  return j;
}

void load_eval(const json& j, EvalSection& s) {
  check_keys(j, "eval.", {"checkpoint", "data", "split", "out"});
  read_field(j, "checkpoint", s.checkpoint);
  read_field(j, "data", s.data);
  read_field(j, "split", s.split);
  read_field(j, "out", s.out);
}

json dump_eval(const EvalSection& s) {
  return json{{"checkpoint", s.checkpoint}, {"data", s.data}, {"split", s.split}, {"out", s.out}};
}

void load_bench(const json& j, BenchSection& s) {
  check_keys(j, "bench.",
             {"checkpoint", "width", "height", "count", "oracle_steps", "repeat", "out"});
  read_field(j, "checkpoint", s.checkpoint);
  read_field(j, "width", s.width);
  read_field(j, "height", s.height);
  read_field(j, "count", s.count);
  read_field(j, "oracle_steps", s.oracle_steps);
  read_field(j, "repeat", s.repeat);
  read_field(j, "out", s.out);
}

json dump_bench(const BenchSection& s) {
  return json{{"checkpoint", s.checkpoint}, {"width", s.width},   {"height", s.height},
              {"count", s.count},           {"oracle_steps", s.oracle_steps},
              {"repeat", s.repeat},         {"out", s.out}};
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed config '" + path + "': " + e.what());
  }
  check_keys(j, "", {"seed", "threads", "synth", "fit", "render", "eval", "bench"});
  RunConfig rc;
  read_field(j, "seed", rc.seed);
  read_field(j, "threads", rc.threads);
  if (j.contains("synth")) load_synth(j.at("synth"), rc.synth);
  if (j.contains("fit")) load_fit(j.at("fit"), rc.fit);
  if (j.contains("render")) load_render(j.at("render"), rc.render);
  if (j.contains("eval")) load_eval(j.at("eval"), rc.eval);
  if (j.contains("bench")) load_bench(j.at("bench"), rc.bench);
  return rc;
}

json dump_run_config(const RunConfig& rc) {
  json j;
  j["seed"] = rc.seed;
  j["threads"] = rc.threads;
  j["synth"] = dump_synth(rc.synth);
  j["fit"] = dump_fit(rc.fit);
  j["render"] = dump_render(rc.render);
  j["eval"] = dump_eval(rc.eval);
  j["bench"] = dump_bench(rc.bench);
  return j;
}

// ---------------------------------------------------------------------------
// Shared helpers.

bool all_finite(const Image& img) {
  for (double v : img.data)
    if (!std::isfinite(v)) return false;
  return true;
}

json pose_to_json(const VecX& params) {
  json j;
  j["root"] = {params[0], params[1], params[2]};
  json joints = json::array();
  for (Eigen::Index k = 3; k + 2 < params.size(); k += 3)
    joints.push_back({params[k], params[k + 1], params[k + 2]});
  j["joint_axis_angles"] = std::move(joints);
  return j;
}

Pose pose_from_json(const json& j) {
  const json& joints = j.at("joint_axis_angles");
  VecX params(3 + 3 * joints.size());
  for (int c = 0; c < 3; ++c) params[c] = j.at("root").at(c).get<double>();
  for (size_t k = 0; k < joints.size(); ++k)
    for (int c = 0; c < 3; ++c) params[3 + 3 * k + c] = joints.at(k).at(c).get<double>();
  return pose_from_params(params);
}

/// Orbit camera around a template's sample bounds, same parameterization the
/// synthetic generator uses.
PinholeCamera orbit_camera(const KinematicTemplate& tpl, const RenderSection& s) {
  Vec3 lo, hi;
  tpl.sample_bounds(lo, hi);
  const Vec3 center = 0.5 * (lo + hi);
  const Vec3 eye = center + Vec3(s.orbit_radius * std::sin(s.orbit_angle), s.orbit_elevation,
                                 s.orbit_radius * std::cos(s.orbit_angle));
  return look_at_camera(s.width, s.height, s.fov_y_deg, eye, center);
}

struct MetricMean {
  double psnr_sum = 0.0, ssim_sum = 0.0;
  int n = 0;
  void add(double p, double s) {
    psnr_sum += p;
    ssim_sum += s;
    n += 1;
  }
  double mean_psnr() const { return n ? psnr_sum / n : 0.0; }
  double mean_ssim() const { return n ? ssim_sum / n : 0.0; }
};

/// Renders one catalogued frame and scores it against its stored image in the
/// 8-bit domain the files live in.
void score_frame(const AvatarModel& model, const DatasetFrame& df, const std::string& root,
                 int threads, double& out_psnr, double& out_ssim) {
  RenderOptions opts;
  opts.threads = threads;
  const Image render = render_splat(articulate(model, df.pose, df.latent_row), df.cam, opts);
  if (!all_finite(render)) throw std::domain_error("non-finite render");
  const Image q = quantize8(render);
  const Image ref = read_image(root + "/" + df.image_path);
  out_psnr = psnr(q, ref);
  out_ssim = ssim(q, ref);
}

void require_pose_compatible(const AvatarModel& model, const Pose& pose) {
  if (static_cast<int>(pose.joint_rotations.size()) != model.bone_count())
    throw std::runtime_error("pose has " + std::to_string(pose.joint_rotations.size()) +
                             " joints but the checkpoint expects " +
                             std::to_string(model.bone_count()));
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Subcommands.

int cmd_synth(RunConfig& rc) {
  SynthSection& s = rc.synth;
  s.cfg.seed = rc.seed;
  s.cfg.threads = rc.threads;
  s.cfg.biped.seed = rc.seed;  // one seed drives sampling, appearance and noise
  const SynthResult res = generate_synthetic_sequence(s.cfg, s.out);
  std::printf("synth: frames=%d gt_components=%d train=%zu test=%zu out=%s\n", s.cfg.frames,
              res.gt_model.gaussians.count(), res.train.frames.size(), res.test.frames.size(),
              s.out.c_str());
  return 0;
}

void apply_ablations(FitSection& s, bool& per_gaussian) {
  for (const std::string& a : s.ablate) {
    if (a == "no-latent") {
      s.cfg.model.n_l = 0;
    } else if (a == "no-knn") {
      LossWeights& w = s.cfg.weights;
      w.rot_std = w.scale_std = w.opacity_std = w.sh_std = w.delta_std = w.latent_w_std = 0.0;
    } else if (a == "no-skinning") {
      // Weight fields frozen at the template prior; latent weights frozen at
      // zero leave the latent bones inert as well.
      s.cfg.lr_grid_delta = 0.0;
      s.cfg.lr_grid_latent = 0.0;
    } else if (a == "no-vox") {
      per_gaussian = true;
    } else {
      throw std::runtime_error("unknown ablation '" + a +
                               "' (expected no-latent, no-knn, no-skinning or no-vox)");
    }
  }
}

int cmd_fit(RunConfig& rc) {
  FitSection& s = rc.fit;
  bool per_gaussian = false;
  apply_ablations(s, per_gaussian);
  s.cfg.seed = rc.seed;
  s.cfg.threads = rc.threads;
  s.cfg.model.seed = rc.seed;

  const FrameDataset train = load_dataset(s.data, "train");
  const FrameDataset test = load_dataset(s.data, "test");
  std::error_code ec;
  std::filesystem::create_directories(s.out, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + s.out + "'");
  s.cfg.checkpoint_dir = s.out;

  AvatarModel init;
  const AvatarModel* init_ptr = nullptr;
  if (per_gaussian) {
    int rows = 0;
    for (const DatasetFrame& df : train.frames) rows = std::max(rows, df.latent_row + 1);
    ModelConfig mc = s.cfg.model;
    mc.latent_frames = rows;
    init = init_from_template(train.tpl, mc);
    init.skinning_mode = SkinningMode::kPerGaussian;
    init_ptr = &init;
  }

  const auto t0 = std::chrono::steady_clock::now();
  const FitResult res = fit_dataset(train, s.cfg, init_ptr);
  const double elapsed = seconds_since(t0);

  save_model(res.model, s.out + "/model.asplat");
  {
    json jframes = json::array();
    for (size_t i = 0; i < train.frames.size(); ++i)
      jframes.push_back({{"sequence", train.frames[i].sequence},
                         {"latent_row", train.frames[i].latent_row},
                         {"pose", pose_to_json(pose_to_params(res.poses[i]))}});
    std::ofstream out(s.out + "/fitted_poses.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + s.out + "/fitted_poses.json'");
    out << json{{"frames", std::move(jframes)}}.dump(2) << '\n';
  }

  MetricMean train_m, test_m;
  for (size_t i = 0; i < train.frames.size(); ++i) {
    DatasetFrame df = train.frames[i];
    df.pose = res.poses[i];  // score against the optimized pose, as trained
    double p, q;
    score_frame(res.model, df, train.root, rc.threads, p, q);
    train_m.add(p, q);
  }
  for (const DatasetFrame& df : test.frames) {
    double p, q;
    score_frame(res.model, df, test.root, rc.threads, p, q);
    test_m.add(p, q);
  }

  std::printf(
      "fit: iterations=%d components=%d train_psnr=%.4f train_ssim=%.6f test_psnr=%.4f "
      "test_ssim=%.6f diverged=%d seconds=%.1f\n",
      s.cfg.iterations, res.model.gaussians.count(), train_m.mean_psnr(), train_m.mean_ssim(),
      test_m.mean_psnr(), test_m.mean_ssim(), res.diverged ? 1 : 0, elapsed);
  if (res.diverged) {
    std::cerr << "fit diverged: " << res.message << "\n";
    return kExitNumerical;
  }
  return 0;
}

int cmd_render(RunConfig& rc) {
  const RenderSection& s = rc.render;
  const AvatarModel model = load_model(s.checkpoint);

  // Resolve pose, latent row, camera, and (when available) a reference image.
  Pose pose = Pose::rest(model.bone_count());
  int latent = s.latent_row;
  PinholeCamera cam;
  bool have_cam = false;
  std::string ref_path;

  if (!s.data.empty()) {
    const FrameDataset ds = load_dataset(s.data, s.split);
    if (s.frame < 0 || s.frame >= static_cast<int>(ds.frames.size()))
      throw std::runtime_error("frame " + std::to_string(s.frame) + " outside the " + s.split +
                               " split (" + std::to_string(ds.frames.size()) + " frames)");
    const DatasetFrame& df = ds.frames[s.frame];
    pose = df.pose;
    latent = df.latent_row;
    cam = df.cam;
    have_cam = true;
    ref_path = ds.root + "/" + df.image_path;
  }
  if (!s.pose_file.empty()) {
    std::ifstream in(s.pose_file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open pose file '" + s.pose_file + "'");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw std::runtime_error("malformed pose file '" + s.pose_file + "': " + e.what());
    }
    if (j.contains("frames")) {  // a fitted_poses.json; pick one entry
      const json& arr = j.at("frames");
      if (s.frame < 0 || s.frame >= static_cast<int>(arr.size()))
        throw std::runtime_error("frame " + std::to_string(s.frame) +
                                 " outside the pose file (" + std::to_string(arr.size()) +
                                 " entries)");
      pose = pose_from_json(arr.at(s.frame).at("pose"));
      latent = arr.at(s.frame).at("latent_row").get<int>();
    } else {
      pose = pose_from_json(j);
      latent = s.latent_row;
    }
  }
  if (!have_cam) cam = orbit_camera(model.tpl, s);
  require_pose_compatible(model, pose);
  if (latent >= 0 && model.latent_count() > 0 && latent >= model.latent.frame_count())
    throw std::runtime_error("latent row " + std::to_string(latent) +
                             " outside the checkpoint's table");

  RenderOptions opts;
  opts.threads = rc.threads;
  const ArticulatedGaussians proxy = articulate(model, pose, latent);
  const Image img = render_splat(proxy, cam, opts);
  if (!all_finite(img)) throw std::domain_error("non-finite render");

  if (s.bench) {
    const int warm = std::max(0, s.bench_warmup);
    const int n = std::max(1, s.bench_renders);
    for (int i = 0; i < warm; ++i) (void)render_splat(proxy, cam, opts);
    std::vector<double> times(n);
    for (int i = 0; i < n; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)render_splat(proxy, cam, opts);
      times[i] = seconds_since(t0);
    }
    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= n;
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    const double cv = mean > 0.0 ? std::sqrt(var / n) / mean : 0.0;
    std::printf("fps=%.3f cv=%.4f renders=%d\n", 1.0 / mean, cv, n);
  }

  if (!s.out.empty()) write_image(img, s.out);
  if (!ref_path.empty()) {
    const double p = psnr(quantize8(img), read_image(ref_path));
    std::printf("render: out=%s psnr=%.4f\n", s.out.c_str(), p);
  } else {
    std::printf("render: out=%s\n", s.out.c_str());
  }
  return 0;
}

int cmd_eval(RunConfig& rc) {
  const EvalSection& s = rc.eval;
  const AvatarModel model = load_model(s.checkpoint);
  const FrameDataset ds = load_dataset(s.data, s.split);
  if (ds.frames.empty()) throw std::runtime_error("no " + s.split + " frames to evaluate");

  std::string csv = "sequence,psnr,ssim\n";
  MetricMean m;
  for (const DatasetFrame& df : ds.frames) {
    require_pose_compatible(model, df.pose);
    double p, q;
    score_frame(model, df, ds.root, rc.threads, p, q);
    m.add(p, q);
    char row[96];
    std::snprintf(row, sizeof(row), "%d,%.6f,%.6f\n", df.sequence, p, q);
    csv += row;
    std::printf("frame %6d  psnr %8.4f  ssim %.6f\n", df.sequence, p, q);
  }
  std::printf("eval: split=%s frames=%d mean_psnr=%.4f mean_ssim=%.6f\n", s.split.c_str(), m.n,
              m.mean_psnr(), m.mean_ssim());
  if (!s.out.empty()) {
    std::ofstream out(s.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + s.out + "'");
    out << csv;
  }
  return 0;
}

int cmd_bench(RunConfig& rc) {
  const BenchSection& s = rc.bench;
  if (s.width < 8 || s.height < 8 || s.count < 1 || s.oracle_steps < 2 || s.repeat < 1)
    throw std::runtime_error("bench: invalid scene or repeat configuration");

  AvatarModel model;
  if (!s.checkpoint.empty()) {
    model = load_model(s.checkpoint);
  } else {
    const Biped body = build_synthetic_biped(BipedConfig{});
    ModelConfig mc;
    mc.count = s.count;
    mc.sh_degree = 1;
    mc.n_l = 0;
    mc.latent_frames = 1;
    mc.grid_res = {2, 2, 2};
    mc.seed = rc.seed;
    model = init_from_template(body.tpl, mc);
  }
  const ArticulatedGaussians proxy =
      articulate(model, Pose::rest(model.bone_count()), kIdentityLatents);

  RenderSection view;  // default orbit framing at the bench resolution
  view.width = s.width;
  view.height = s.height;
  const PinholeCamera cam = orbit_camera(model.tpl, view);

  std::string csv =
      "renderer,width,height,components,oracle_steps,repeat,seconds,fps,"
      "project_seconds,sort_seconds,composite_seconds\n";
  char row[256];
  for (int r = 0; r < s.repeat; ++r) {
    RenderStageTimes stages;
    RenderOptions opts;
    opts.threads = rc.threads;
    opts.stage_times = &stages;
    auto t0 = std::chrono::steady_clock::now();
    (void)render_splat(proxy, cam, opts);
    const double splat_s = seconds_since(t0);
    std::snprintf(row, sizeof(row), "splat,%d,%d,%d,0,%d,%.6f,%.3f,%.6f,%.6f,%.6f\n", s.width,
                  s.height, proxy.count(), r, splat_s, 1.0 / splat_s, stages.project,
                  stages.sort, stages.composite);
    csv += row;

    RenderOptions oopts;
    oopts.threads = rc.threads;
    t0 = std::chrono::steady_clock::now();
    (void)render_volume_oracle(proxy, cam, oopts, s.oracle_steps);
    const double oracle_s = seconds_since(t0);
    std::snprintf(row, sizeof(row), "oracle,%d,%d,%d,%d,%d,%.6f,%.3f,0,0,0\n", s.width,
                  s.height, proxy.count(), s.oracle_steps, r, oracle_s, 1.0 / oracle_s);
    csv += row;
  }
  std::fputs(csv.c_str(), stdout);
  if (!s.out.empty()) {
    std::ofstream out(s.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + s.out + "'");
    out << csv;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"articulated gaussian-splat avatar toolkit"};
  app.require_subcommand(1);

  // Shared options live on the app; subcommands pass unmatched flags up.
  std::string config_path;
  uint64_t seed = 0;
  int threads = 0;
  bool print_config = false;
  app.add_option("--config", config_path, "JSON config file");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "seed for all randomness");
  CLI::Option* threads_opt =
      app.add_option("--threads", threads, "worker threads (0: default, 1: deterministic)");
  app.add_flag("--print-config", print_config, "print the resolved config and exit");

  // synth ---------------------------------------------------------------
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->fallthrough();
  std::string sy_out;
  int sy_frames = 0, sy_width = 0, sy_height = 0, sy_gt_count = 0;
  double sy_noise = 0.0;
  bool sy_hidden = false;
  CLI::Option* o_sy_out = synth->add_option("--out", sy_out, "output directory");
  CLI::Option* o_sy_frames = synth->add_option("--frames", sy_frames, "sequence length");
  CLI::Option* o_sy_width = synth->add_option("--width", sy_width, "image width");
  CLI::Option* o_sy_height = synth->add_option("--height", sy_height, "image height");
  CLI::Option* o_sy_gt = synth->add_option("--gt-count", sy_gt_count, "truth component count");
  CLI::Option* o_sy_noise = synth->add_option("--pose-noise", sy_noise, "exported joint noise, radians");
  CLI::Option* o_sy_hidden =
      synth->add_flag("--hidden-appendage", sy_hidden, "add a skirt driven by a hidden bone");

  // fit -----------------------------------------------------------------
  CLI::App* fit = app.add_subcommand("fit", "reconstruct a model from a dataset");
  fit->fallthrough();
  std::string ft_data, ft_out;
  int ft_iters = 0, ft_count = 0;
  std::vector<std::string> ft_ablate;
  CLI::Option* o_ft_data = fit->add_option("--data", ft_data, "dataset manifest");
  CLI::Option* o_ft_out = fit->add_option("--out", ft_out, "output directory");
  CLI::Option* o_ft_iters = fit->add_option("--iterations", ft_iters, "optimization steps");
  CLI::Option* o_ft_count = fit->add_option("--components", ft_count, "initial component count");
  CLI::Option* o_ft_ablate = fit->add_option(
      "--ablate", ft_ablate, "disable a mechanism: no-latent, no-knn, no-skinning, no-vox");

  // render --------------------------------------------------------------
  CLI::App* render = app.add_subcommand("render", "render a checkpoint");
  render->fallthrough();
  std::string rd_ckpt, rd_data, rd_split, rd_pose, rd_out;
  int rd_frame = 0, rd_latent = 0;
  bool rd_bench = false;
  CLI::Option* o_rd_ckpt = render->add_option("--checkpoint", rd_ckpt, "model file");
  CLI::Option* o_rd_data = render->add_option("--data", rd_data, "dataset manifest (pose + camera source)");
  CLI::Option* o_rd_split = render->add_option("--split", rd_split, "dataset split");
  CLI::Option* o_rd_frame = render->add_option("--frame", rd_frame, "frame index in the split or pose file");
  CLI::Option* o_rd_pose = render->add_option("--pose", rd_pose, "novel pose JSON file");
  CLI::Option* o_rd_latent = render->add_option("--latent-row", rd_latent,
                                                "latent row for novel poses (-1: identity)");
  CLI::Option* o_rd_out = render->add_option("--out", rd_out, "output PNG");
  int rd_width = 0, rd_height = 0;
  CLI::Option* o_rd_width = render->add_option("--width", rd_width, "stand-alone camera width");
  CLI::Option* o_rd_height = render->add_option("--height", rd_height, "stand-alone camera height");
  CLI::Option* o_rd_bench = render->add_flag("--bench", rd_bench, "time repeated renders and print fps");

  // eval ----------------------------------------------------------------
  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against a split");
  eval->fallthrough();
  std::string ev_ckpt, ev_data, ev_split, ev_out;
  CLI::Option* o_ev_ckpt = eval->add_option("--checkpoint", ev_ckpt, "model file");
  CLI::Option* o_ev_data = eval->add_option("--data", ev_data, "dataset manifest");
  CLI::Option* o_ev_split = eval->add_option("--split", ev_split, "dataset split");
  CLI::Option* o_ev_out = eval->add_option("--out", ev_out, "metrics CSV path");

  // bench ---------------------------------------------------------------
  CLI::App* bench = app.add_subcommand("bench", "time the splat renderer against the volume oracle");
  bench->fallthrough();
  std::string bc_ckpt, bc_out;
  int bc_width = 0, bc_height = 0, bc_count = 0, bc_steps = 0, bc_repeat = 0;
  CLI::Option* o_bc_ckpt = bench->add_option("--checkpoint", bc_ckpt, "scene from a model file");
  CLI::Option* o_bc_width = bench->add_option("--width", bc_width, "image width");
  CLI::Option* o_bc_height = bench->add_option("--height", bc_height, "image height");
  CLI::Option* o_bc_count = bench->add_option("--count", bc_count, "synthetic component count");
  CLI::Option* o_bc_steps = bench->add_option("--oracle-steps", bc_steps, "oracle ray subdivisions");
  CLI::Option* o_bc_repeat = bench->add_option("--repeat", bc_repeat, "timing rows per configuration");
  CLI::Option* o_bc_out = bench->add_option("--out", bc_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    RunConfig rc;
    if (!config_path.empty()) rc = load_run_config(config_path);
    if (seed_opt->count()) rc.seed = seed;
    if (threads_opt->count()) rc.threads = threads;

    if (o_sy_out->count()) rc.synth.out = sy_out;
    if (o_sy_frames->count()) rc.synth.cfg.frames = sy_frames;
    if (o_sy_width->count()) rc.synth.cfg.width = sy_width;
    if (o_sy_height->count()) rc.synth.cfg.height = sy_height;
    if (o_sy_gt->count()) rc.synth.cfg.gt_count = sy_gt_count;
    if (o_sy_noise->count()) rc.synth.cfg.pose_noise = sy_noise;
    if (o_sy_hidden->count()) rc.synth.cfg.hidden_appendage = sy_hidden;

    if (o_ft_data->count()) rc.fit.data = ft_data;
    if (o_ft_out->count()) rc.fit.out = ft_out;
    if (o_ft_iters->count()) rc.fit.cfg.iterations = ft_iters;
    if (o_ft_count->count()) rc.fit.cfg.model.count = ft_count;
    if (o_ft_ablate->count()) rc.fit.ablate = ft_ablate;

    if (o_rd_ckpt->count()) rc.render.checkpoint = rd_ckpt;
    if (o_rd_data->count()) rc.render.data = rd_data;
    if (o_rd_split->count()) rc.render.split = rd_split;
    if (o_rd_frame->count()) rc.render.frame = rd_frame;
    if (o_rd_pose->count()) rc.render.pose_file = rd_pose;
    if (o_rd_latent->count()) rc.render.latent_row = rd_latent;
    if (o_rd_out->count()) rc.render.out = rd_out;
    if (o_rd_width->count()) rc.render.width = rd_width;
    if (o_rd_height->count()) rc.render.height = rd_height;
    if (o_rd_bench->count()) rc.render.bench = rd_bench;

    if (o_ev_ckpt->count()) rc.eval.checkpoint = ev_ckpt;
    if (o_ev_data->count()) rc.eval.data = ev_data;
    if (o_ev_split->count()) rc.eval.split = ev_split;
    if (o_ev_out->count()) rc.eval.out = ev_out;

    if (o_bc_ckpt->count()) rc.bench.checkpoint = bc_ckpt;
    if (o_bc_width->count()) rc.bench.width = bc_width;
    if (o_bc_height->count()) rc.bench.height = bc_height;
    if (o_bc_count->count()) rc.bench.count = bc_count;
    if (o_bc_steps->count()) rc.bench.oracle_steps = bc_steps;
    if (o_bc_repeat->count()) rc.bench.repeat = bc_repeat;
    if (o_bc_out->count()) rc.bench.out = bc_out;

    if (print_config) {
      std::cout << dump_run_config(rc).dump(2) << "\n";
      return 0;
    }
    if (synth->parsed()) return cmd_synth(rc);
    if (fit->parsed()) return cmd_fit(rc);
    if (render->parsed()) return cmd_render(rc);
    if (eval->parsed()) return cmd_eval(rc);
    if (bench->parsed()) return cmd_bench(rc);
    return kExitConfig;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
