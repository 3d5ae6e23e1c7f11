// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "asplat/image_io.hpp"
#include "asplat/model_io.hpp"
#include "asplat/render.hpp"

namespace asplat {

namespace {

using nlohmann::json;

constexpr int kManifestSchema = 1;
constexpr double kTwoPi = 6.283185307179586476925286766559;

// The constant band of the real spherical-harmonics basis; divides color
// targets into DC coefficients.
constexpr double kSH0 = 0.28209479177387814;

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

json template_json(const KinematicTemplate& tpl) {
  json j;
  j["parents"] = tpl.parents;
  j["joint_names"] = tpl.joint_names;
  json rots = json::array(), trans = json::array();
  for (const RigidTransform& rt : tpl.rest_global) {
    json r = json::array();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) r.push_back(rt.rotation(a, b));
    rots.push_back(std::move(r));
    trans.push_back(vec3_json(rt.translation));
  }
  j["rest_rotations"] = std::move(rots);
  j["rest_translations"] = std::move(trans);
  json pos = json::array();
  for (const Vec3& p : tpl.sample_positions) pos.push_back(vec3_json(p));
  j["sample_positions"] = std::move(pos);
  json weights = json::array();
  for (Eigen::Index s = 0; s < tpl.sample_weights.rows(); ++s) {
    json row = json::array();
    for (Eigen::Index b = 0; b < tpl.sample_weights.cols(); ++b)
      row.push_back(tpl.sample_weights(s, b));
    weights.push_back(std::move(row));
  }
  j["sample_weights"] = std::move(weights);
  j["skinning_sigma"] = tpl.skinning_sigma;
  return j;
}

KinematicTemplate template_from_json(const json& j) {
  KinematicTemplate tpl;
  tpl.parents = j.at("parents").get<std::vector<int>>();
  tpl.joint_names = j.at("joint_names").get<std::vector<std::string>>();
  const json& rots = j.at("rest_rotations");
  const json& trans = j.at("rest_translations");
  tpl.rest_global.resize(tpl.parents.size());
  for (size_t k = 0; k < tpl.rest_global.size(); ++k) {
    const json& r = rots.at(k);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        tpl.rest_global[k].rotation(a, b) = r.at(3 * a + b).get<double>();
    tpl.rest_global[k].translation = vec3_from(trans.at(k));
  }
  for (const json& p : j.at("sample_positions")) tpl.sample_positions.push_back(vec3_from(p));
  const json& weights = j.at("sample_weights");
  tpl.sample_weights.resize(static_cast<Eigen::Index>(weights.size()),
                            static_cast<Eigen::Index>(tpl.parents.size()));
  for (Eigen::Index s = 0; s < tpl.sample_weights.rows(); ++s)
    for (Eigen::Index b = 0; b < tpl.sample_weights.cols(); ++b)
      tpl.sample_weights(s, b) = weights.at(s).at(b).get<double>();
  tpl.skinning_sigma = j.at("skinning_sigma").get<double>();
  return tpl;
}

json camera_json(const PinholeCamera& cam) {
  json j;
  j["width"] = cam.width;
  j["height"] = cam.height;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  json r = json::array();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) r.push_back(cam.world_to_cam.rotation(a, b));
  j["world_to_cam_rotation"] = std::move(r);
  j["world_to_cam_translation"] = vec3_json(cam.world_to_cam.translation);
  return j;
}

PinholeCamera camera_from_json(const json& j) {
  PinholeCamera cam;
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  const json& r = j.at("world_to_cam_rotation");
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) cam.world_to_cam.rotation(a, b) = r.at(3 * a + b).get<double>();
  cam.world_to_cam.translation = vec3_from(j.at("world_to_cam_translation"));
  return cam;
}

// Poses travel as the flat axis-angle encoding so that what the manifest
// stores is exactly what the renderer consumed.
json pose_json(const VecX& params) {
  json j;
  j["root"] = json::array({params[0], params[1], params[2]});
  json joints = json::array();
  for (Eigen::Index k = 3; k + 2 < params.size(); k += 3)
    joints.push_back(json::array({params[k], params[k + 1], params[k + 2]}));
  j["joint_axis_angles"] = std::move(joints);
  return j;
}

VecX pose_params_from_json(const json& j, int joint_count) {
  const json& joints = j.at("joint_axis_angles");
  if (static_cast<int>(joints.size()) != joint_count)
    throw std::runtime_error("manifest pose has " + std::to_string(joints.size()) +
                             " joints, template has " + std::to_string(joint_count));
  VecX params(3 + 3 * joint_count);
  params.head<3>() = vec3_from(j.at("root"));
  for (int k = 0; k < joint_count; ++k)
    params.segment<3>(3 + 3 * k) = vec3_from(joints.at(k));
  return params;
}

std::vector<MotionWave> default_motion(int joint_count) {
  std::vector<MotionWave> waves;
  for (int j = 1; j < joint_count; ++j) {
    MotionWave w;
    w.joint = j;
    w.axis = (j % 2 == 0) ? Vec3::UnitX() : Vec3::UnitZ();
    w.amplitude = 0.18 + 0.04 * (j % 4);
    w.frequency = 1.0 + 0.5 * (j % 3);
    w.phase = 0.7 * j;
    waves.push_back(w);
  }
  return waves;
}

AvatarModel make_gt_model(const KinematicTemplate& tpl, const SynthConfig& cfg,
                          std::mt19937_64& rng) {
  ModelConfig mc;
  mc.count = cfg.gt_count;
  mc.sh_degree = cfg.gt_sh_degree;
  mc.n_l = 0;  // hidden motion is driven by a bone, not by latent codes
  mc.latent_frames = cfg.frames;
  mc.grid_res = Eigen::Vector3i::Constant(cfg.gt_grid_res);
  mc.seed = cfg.seed;
  AvatarModel m = init_from_template(tpl, mc);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> nd;
  auto& g = m.gaussians;
  for (int i = 0; i < g.count(); ++i) {
    for (int c = 0; c < 3; ++c) g.sh(i, c) = (0.25 + 0.7 * u01(rng)) / kSH0;
    for (Eigen::Index c = 3; c < g.sh.cols(); ++c) g.sh(i, c) = 0.08 * nd(rng);
    g.opacity_logits[i] = 0.8 + 1.4 * u01(rng);
    for (int c = 0; c < 3; ++c) g.log_scales(i, c) += 0.2 * (2.0 * u01(rng) - 1.0);
  }
  // Weight corrections redistribute mass between bones without disturbing the
  // prior's partition of unity, so the ground-truth motion stays rigid-ish no
  // matter the amplitude: each cell's correction vector is centered to sum 0.
  const int n_b = m.grid.n_b;
  for (Eigen::Index v = 0; v < m.grid.delta.size(); v += n_b) {
    double mean = 0.0;
    for (int k = 0; k < n_b; ++k) {
      m.grid.delta[v + k] = cfg.gt_delta_amp * (2.0 * u01(rng) - 1.0);
      mean += m.grid.delta[v + k];
    }
    mean /= n_b;
    for (int k = 0; k < n_b; ++k) m.grid.delta[v + k] -= mean;
  }
  return m;
}

std::string frame_image_name(int f) {
  char name[64];
  std::snprintf(name, sizeof(name), "images/frame_%06d.png", f);
  return name;
}

}  // namespace

void SynthConfig::validate() const {
  if (frames < 2) throw std::invalid_argument("synth: need at least 2 frames");
  if (width < 8 || height < 8) throw std::invalid_argument("synth: image size too small");
  if (!(fov_y_deg > 0.0) || !(orbit_radius > 0.0))
    throw std::invalid_argument("synth: camera parameters must be positive");
  if (pose_noise < 0.0) throw std::invalid_argument("synth: pose noise must be >= 0");
  if (gt_count < 1) throw std::invalid_argument("synth: ground truth needs components");
  if (gt_grid_res < 2) throw std::invalid_argument("synth: grid resolution must be >= 2");
  if (gt_sh_degree < 0) throw std::invalid_argument("synth: negative sh degree");
  if (threads < 0) throw std::invalid_argument("synth: negative thread count");
}

int nearest_train_row(int sequence, const std::vector<int>& train_sequences) {
  if (train_sequences.empty())
    throw std::invalid_argument("latent-row lookup without train frames");
  int best = 0;
  int best_d = std::abs(train_sequences[0] - sequence);
  for (size_t i = 1; i < train_sequences.size(); ++i) {
    const int d = std::abs(train_sequences[i] - sequence);
    if (d < best_d) {  // strict: ties keep the earlier frame
      best = static_cast<int>(i);
      best_d = d;
    }
  }
  return best;
}

SynthResult generate_synthetic_sequence(const SynthConfig& cfg, const std::string& out_dir) {
  cfg.validate();

  // The ground-truth flavor of the body may articulate the skirt through a
  // bone the exported flavor does not have; surface samples are identical.
  BipedConfig body = cfg.biped;
  body.skirt = cfg.hidden_appendage;
  body.skirt_hidden_bone = cfg.hidden_appendage;
  const Biped gt_body = build_synthetic_biped(body);
  body.skirt_hidden_bone = false;
  const Biped ex_body = build_synthetic_biped(body);
  const int n_gt = gt_body.tpl.joint_count();
  const int n_ex = ex_body.tpl.joint_count();
  if (gt_body.hidden_joint >= 0 && gt_body.hidden_joint != n_gt - 1)
    throw std::logic_error("hidden joint is expected to be the last ground-truth joint");

  const std::vector<MotionWave> waves =
      cfg.motion.empty() ? default_motion(n_ex) : cfg.motion;
  for (const MotionWave& w : waves) {
    if (w.joint < 0 || w.joint >= n_ex)
      throw std::invalid_argument("motion wave drives a joint outside the exported template");
    if (!(w.axis.norm() > 0.0))
      throw std::invalid_argument("motion wave axis must be nonzero");
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> nd;
  AvatarModel gt = make_gt_model(gt_body.tpl, cfg, rng);

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec)
    throw std::runtime_error("cannot create output directory '" + out_dir +
                             "': " + ec.message());

  const int M = cfg.frames;
  Vec3 lo, hi;
  ex_body.tpl.sample_bounds(lo, hi);
  const Vec3 center = 0.5 * (lo + hi);
  RenderOptions ropts;
  ropts.threads = cfg.threads;

  std::vector<int> train_seq;
  for (int f = 0; f < M; f += 4) train_seq.push_back(f);

  SynthResult result;
  result.gt_template = gt_body.tpl;
  result.train.tpl = ex_body.tpl;
  result.train.split = "train";
  result.train.root = out_dir;
  result.test.tpl = ex_body.tpl;
  result.test.split = "test";
  result.test.root = out_dir;

  json jframes = json::array();
  json jgt_poses = json::array();
  for (int f = 0; f < M; ++f) {
    const double t = static_cast<double>(f) / static_cast<double>(M);

    // Clean generating pose on the ground-truth skeleton, authored directly
    // in the axis-angle encoding the manifest stores.
    VecX gt_aa = VecX::Zero(3 + 3 * n_gt);
    gt_aa.head<3>() =
        cfg.root_sway * Vec3(std::sin(kTwoPi * t), 0.0, std::cos(kTwoPi * t));
    for (const MotionWave& w : waves)
      gt_aa.segment<3>(3 + 3 * w.joint) +=
          (w.amplitude * std::sin(kTwoPi * w.frequency * t + w.phase)) *
          w.axis.normalized();
    if (gt_body.hidden_joint >= 0)
      gt_aa.segment<3>(3 + 3 * gt_body.hidden_joint) =
          (cfg.hidden_amplitude * std::sin(kTwoPi * cfg.hidden_frequency * t)) *
          Vec3::UnitX();

    const Pose gt_pose = pose_from_params(gt_aa);
    result.gt_poses.push_back(gt_pose);

    const double angle = kTwoPi * cfg.orbit_turns * t + 0.25;
    const PinholeCamera cam = look_at_camera(
        cfg.width, cfg.height, cfg.fov_y_deg,
        center + Vec3(cfg.orbit_radius * std::sin(angle), cfg.orbit_elevation,
                      cfg.orbit_radius * std::cos(angle)),
        center);

    const std::string image_name = frame_image_name(f);
    const Image img = render_splat(articulate(gt, gt_pose, f), cam, ropts);
    write_image(img, out_dir + "/" + image_name);

    // Exported pose: the hidden joint is dropped, the rest optionally
    // corrupted to stand in for imperfect pose estimation.
    VecX ex_aa = gt_aa.head(3 + 3 * n_ex);
    if (cfg.pose_noise > 0.0)
      for (Eigen::Index k = 3; k < ex_aa.size(); ++k) ex_aa[k] += cfg.pose_noise * nd(rng);

    const char* split = (f % 4 == 0) ? "train" : ((f % 4 == 2) ? "test" : "none");
    FrameDataset* ds =
        (f % 4 == 0) ? &result.train : ((f % 4 == 2) ? &result.test : nullptr);
    const int index = ds ? static_cast<int>(ds->frames.size()) : -1;
    const int latent_row =
        (f % 4 == 0) ? index : nearest_train_row(f, train_seq);

    json jf;
    jf["index"] = index;
    jf["sequence"] = f;
    jf["split"] = split;
    jf["image"] = image_name;
    jf["latent_row"] = latent_row;
    jf["camera"] = camera_json(cam);
    jf["pose"] = pose_json(ex_aa);
    jframes.push_back(std::move(jf));
    jgt_poses.push_back(pose_json(gt_aa));

    if (ds) {
      DatasetFrame df;
      df.image_path = image_name;
      df.cam = cam;
      df.pose = pose_from_params(ex_aa);
      df.index = index;
      df.sequence = f;
      df.latent_row = latent_row;
      ds->frames.push_back(std::move(df));
    }
  }

  save_model(gt, out_dir + "/gt_model.asplat");
  result.gt_model = std::move(gt);

  json manifest;
  manifest["schema_version"] = kManifestSchema;
  manifest["seed"] = cfg.seed;
  manifest["frames_total"] = M;
  manifest["image_size"] = json::array({cfg.width, cfg.height});
  manifest["pose_noise"] = cfg.pose_noise;
  manifest["hidden_appendage"] = cfg.hidden_appendage;
  manifest["template"] = template_json(ex_body.tpl);
  manifest["ground_truth"] = {{"model", "gt_model.asplat"}, {"poses", std::move(jgt_poses)}};
  manifest["frames"] = std::move(jframes);

  const std::string manifest_path = out_dir + "/manifest.json";
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest '" + manifest_path + "'");
  out << manifest.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing manifest '" + manifest_path + "'");
  return result;
}

FrameDataset load_dataset(const std::string& manifest_path, const std::string& split) {
  if (split != "train" && split != "test")
    throw std::invalid_argument("split must be 'train' or 'test'");
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest '" + manifest_path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest '" + manifest_path + "': " + e.what());
  }

  FrameDataset ds;
  ds.split = split;
  const std::string parent = std::filesystem::path(manifest_path).parent_path().string();
  ds.root = parent.empty() ? "." : parent;
  try {
    const int schema = j.at("schema_version").get<int>();
    if (schema != kManifestSchema)
      throw std::runtime_error("unsupported manifest schema version " +
                               std::to_string(schema));
    ds.tpl = template_from_json(j.at("template"));
    ds.tpl.validate();
    for (const json& jf : j.at("frames")) {
      if (jf.at("split").get<std::string>() != split) continue;
      DatasetFrame df;
      df.image_path = jf.at("image").get<std::string>();
      df.sequence = jf.at("sequence").get<int>();
      df.index = jf.at("index").get<int>();
      df.latent_row = jf.at("latent_row").get<int>();
      df.cam = camera_from_json(jf.at("camera"));
      df.pose = pose_from_params(pose_params_from_json(jf.at("pose"), ds.tpl.joint_count()));
      if (df.index != static_cast<int>(ds.frames.size()))
        throw std::runtime_error("manifest " + split + " indices are not contiguous");
      if (df.latent_row < 0) throw std::runtime_error("manifest latent row is negative");
      ds.frames.push_back(std::move(df));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed manifest '" + manifest_path + "': " + e.what());
  }
  return ds;
}

std::vector<FrameSample> load_samples(const FrameDataset& ds) {
  std::vector<FrameSample> out;
  out.reserve(ds.frames.size());
  for (const DatasetFrame& df : ds.frames) {
    FrameSample fs;
    fs.image = read_image(ds.root + "/" + df.image_path);
    if (fs.image.width != df.cam.width || fs.image.height != df.cam.height)
      throw std::runtime_error("image '" + df.image_path + "' is " +
                               std::to_string(fs.image.width) + "x" +
                               std::to_string(fs.image.height) +
                               " but its camera expects " + std::to_string(df.cam.width) +
                               "x" + std::to_string(df.cam.height));
    fs.cam = df.cam;
    fs.pose = df.pose;
    fs.latent_row = df.latent_row;
    out.push_back(std::move(fs));
  }
  return out;
}

FitResult fit_dataset(const FrameDataset& train, const FitConfig& cfg,
                      const AvatarModel* init) {
  return fit_samples(load_samples(train), train.tpl, cfg, init);
}

}  // namespace asplat
