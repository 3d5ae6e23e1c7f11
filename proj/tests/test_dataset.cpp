// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "asplat/dataset.hpp"
#include "asplat/image_io.hpp"
#include "asplat/model_io.hpp"
#include "asplat/render.hpp"

using namespace asplat;
using nlohmann::json;

namespace {

namespace stdfs = std::filesystem;

// Scratch directory that cleans up after itself.
struct TempDir {
  std::string path;
  explicit TempDir(const std::string& name) : path("ds_test_" + name) {
    stdfs::remove_all(path);
  }
  ~TempDir() { stdfs::remove_all(path); }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

json parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  json j;
  in >> j;
  return j;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

bool same_pose(const Pose& a, const Pose& b) {
  if (a.joint_rotations.size() != b.joint_rotations.size()) return false;
  if ((a.root_translation - b.root_translation).norm() != 0.0) return false;
  for (size_t k = 0; k < a.joint_rotations.size(); ++k) {
    const Quaternion &qa = a.joint_rotations[k], &qb = b.joint_rotations[k];
    if (qa.w != qb.w || qa.x != qb.x || qa.y != qb.y || qa.z != qb.z) return false;
  }
  return true;
}

bool same_camera(const PinholeCamera& a, const PinholeCamera& b) {
  return a.width == b.width && a.height == b.height && a.fx == b.fx && a.fy == b.fy &&
         a.cx == b.cx && a.cy == b.cy &&
         (a.world_to_cam.rotation - b.world_to_cam.rotation).cwiseAbs().maxCoeff() == 0.0 &&
         (a.world_to_cam.translation - b.world_to_cam.translation).norm() == 0.0;
}

// Small and fast: nine 48x48 frames of an 80-component truth.
SynthConfig tiny_config(uint64_t seed) {
  SynthConfig cfg;
  cfg.frames = 9;
  cfg.width = 48;
  cfg.height = 48;
  cfg.gt_count = 80;
  cfg.gt_grid_res = 4;
  cfg.seed = seed;
  cfg.threads = 1;
  cfg.biped.sample_density = 250;
  return cfg;
}

std::string frame_file(const std::string& dir, int f) {
  char name[64];
  std::snprintf(name, sizeof(name), "%s/images/frame_%06d.png", dir.c_str(), f);
  return name;
}

}  // namespace

TEST_CASE("synthetic sequences lay out splits, latent rows and files as promised") {
  TempDir dir("layout");
  const SynthResult res = generate_synthetic_sequence(tiny_config(5), dir.path);

  REQUIRE(res.train.frames.size() == 3);  // sequences 0, 4, 8
  REQUIRE(res.test.frames.size() == 2);   // sequences 2, 6
  for (size_t i = 0; i < res.train.frames.size(); ++i) {
    CHECK(res.train.frames[i].index == static_cast<int>(i));
    CHECK(res.train.frames[i].sequence == static_cast<int>(4 * i));
    CHECK(res.train.frames[i].latent_row == static_cast<int>(i));
  }
  CHECK(res.test.frames[0].sequence == 2);
  CHECK(res.test.frames[1].sequence == 6);
  CHECK(res.test.frames[0].latent_row == 0);  // tie 0 vs 4 resolves downward
  CHECK(res.test.frames[1].latent_row == 1);  // tie 4 vs 8 resolves downward
  CHECK(res.train.split == "train");
  CHECK(res.test.split == "test");
  CHECK(res.train.root == dir.path);
  CHECK(res.gt_model.gaussians.count() == 80);
  CHECK(res.gt_template.joint_count() == res.train.tpl.joint_count());
  CHECK(res.gt_poses.size() == 9);

  CHECK(stdfs::exists(dir.path + "/manifest.json"));
  CHECK(stdfs::exists(dir.path + "/gt_model.asplat"));
  for (int f = 0; f < 9; ++f) CHECK(stdfs::exists(frame_file(dir.path, f)));

  // The manifest round-trips to exactly what the generator returned.
  for (const std::string split : {"train", "test"}) {
    const FrameDataset& mem = split == "train" ? res.train : res.test;
    const FrameDataset ds = load_dataset(dir.path + "/manifest.json", split);
    REQUIRE(ds.frames.size() == mem.frames.size());
    CHECK(ds.tpl.joint_count() == mem.tpl.joint_count());
    CHECK(ds.tpl.sample_count() == mem.tpl.sample_count());
    for (size_t i = 0; i < ds.frames.size(); ++i) {
      CHECK(ds.frames[i].image_path == mem.frames[i].image_path);
      CHECK(ds.frames[i].sequence == mem.frames[i].sequence);
      CHECK(ds.frames[i].latent_row == mem.frames[i].latent_row);
      CHECK(same_pose(ds.frames[i].pose, mem.frames[i].pose));
      CHECK(same_camera(ds.frames[i].cam, mem.frames[i].cam));
    }
  }

  // Skipped frames keep their place in the manifest without a split index.
  const json manifest = parse_file(dir.path + "/manifest.json");
  const json& f3 = manifest.at("frames").at(3);
  CHECK(f3.at("split") == "none");
  CHECK(f3.at("index") == -1);
  CHECK(f3.at("latent_row") == 1);  // sequence 3 sits closest to train frame 4
  REQUIRE(manifest.at("ground_truth").at("poses").size() == 9);

  // The stored generating poses reproduce the in-memory ones exactly.
  for (int f = 0; f < 9; ++f) {
    const json& jp = manifest.at("ground_truth").at("poses").at(f);
    VecX aa(3 + 3 * jp.at("joint_axis_angles").size());
    for (int c = 0; c < 3; ++c) aa[c] = jp.at("root").at(c).get<double>();
    for (size_t k = 0; k < jp.at("joint_axis_angles").size(); ++k)
      for (int c = 0; c < 3; ++c)
        aa[3 + 3 * k + c] = jp.at("joint_axis_angles").at(k).at(c).get<double>();
    CHECK(same_pose(pose_from_params(aa), res.gt_poses[f]));
  }
}

TEST_CASE("identical configs produce byte-identical datasets and seeds change them") {
  TempDir a("rep_a"), b("rep_b"), c("rep_c");
  generate_synthetic_sequence(tiny_config(5), a.path);
  generate_synthetic_sequence(tiny_config(5), b.path);
  generate_synthetic_sequence(tiny_config(6), c.path);

  CHECK(slurp(a.path + "/manifest.json") == slurp(b.path + "/manifest.json"));
  CHECK(slurp(a.path + "/gt_model.asplat") == slurp(b.path + "/gt_model.asplat"));
  for (int f = 0; f < 9; ++f) CHECK(slurp(frame_file(a.path, f)) == slurp(frame_file(b.path, f)));

  CHECK(slurp(a.path + "/manifest.json") != slurp(c.path + "/manifest.json"));
  CHECK(slurp(frame_file(a.path, 0)) != slurp(frame_file(c.path, 0)));
}

TEST_CASE("stored frames re-render bit-exactly from the manifest and checkpoint") {
  TempDir dir("rerender");
  generate_synthetic_sequence(tiny_config(5), dir.path);
  const AvatarModel gt = load_model(dir.path + "/gt_model.asplat");

  for (const std::string split : {"train", "test"}) {
    const FrameDataset ds = load_dataset(dir.path + "/manifest.json", split);
    for (const DatasetFrame& df : ds.frames) {
      const Image re = render_splat(articulate(gt, df.pose, df.sequence), df.cam);
      const Image stored = read_image(ds.root + "/" + df.image_path);
      CHECK(image_linf(quantize8(re), stored) == 0.0);

      // All the way down to the file bytes.
      const std::string again = dir.path + "/again.png";
      write_image(re, again);
      CHECK(slurp(again) == slurp(ds.root + "/" + df.image_path));
    }
  }
}

TEST_CASE("a hidden appendage moves pixels the exported skeleton cannot explain") {
  TempDir dir("hidden");
  SynthConfig cfg = tiny_config(7);
  cfg.frames = 4;
  cfg.hidden_appendage = true;
  cfg.orbit_turns = 0.0;  // static camera: every change below is the skirt
  cfg.root_sway = 0.0;
  MotionWave still;
  still.joint = 1;
  still.amplitude = 0.0;
  cfg.motion = {still};
  const SynthResult res = generate_synthetic_sequence(cfg, dir.path);

  CHECK(res.train.tpl.joint_count() == 11);
  CHECK(res.gt_template.joint_count() == 12);
  REQUIRE(res.gt_poses.size() == 4);
  for (const Pose& p : res.gt_poses) CHECK(p.joint_rotations.size() == 12);

  // Exported poses are frozen while the skirt bone swings the pixels.
  const json manifest = parse_file(dir.path + "/manifest.json");
  for (int f = 1; f < 4; ++f)
    CHECK(manifest.at("frames").at(f).at("pose") == manifest.at("frames").at(0).at("pose"));
  CHECK(slurp(frame_file(dir.path, 0)) != slurp(frame_file(dir.path, 1)));

  // The 12-joint truth still explains every stored frame exactly.
  const AvatarModel gt = load_model(dir.path + "/gt_model.asplat");
  const PinholeCamera cam = res.train.frames[0].cam;
  for (int f = 0; f < 4; ++f) {
    const Image re = render_splat(articulate(gt, res.gt_poses[f], f), cam);
    CHECK(image_linf(quantize8(re), read_image(frame_file(dir.path, f))) == 0.0);
  }
}

TEST_CASE("pose noise corrupts the exported joints but not the rendered truth") {
  TempDir dir("noise");
  SynthConfig cfg = tiny_config(9);
  cfg.frames = 5;
  cfg.pose_noise = 0.05;
  const SynthResult res = generate_synthetic_sequence(cfg, dir.path);

  const DatasetFrame& df = res.train.frames[0];
  const Pose& truth = res.gt_poses[0];
  CHECK((df.pose.root_translation - truth.root_translation).norm() == 0.0);
  CHECK(!same_pose(df.pose, truth));

  const AvatarModel gt = load_model(dir.path + "/gt_model.asplat");
  const Image clean = render_splat(articulate(gt, truth, 0), df.cam);
  const Image stored = read_image(dir.path + "/" + df.image_path);
  CHECK(image_linf(quantize8(clean), stored) == 0.0);
  const Image noisy = render_splat(articulate(gt, df.pose, 0), df.cam);
  CHECK(image_linf(quantize8(noisy), stored) > 0.0);

  // Noise is drawn from the seeded stream: the dataset stays reproducible.
  TempDir dir2("noise2");
  generate_synthetic_sequence(cfg, dir2.path);
  CHECK(slurp(dir.path + "/manifest.json") == slurp(dir2.path + "/manifest.json"));
}

TEST_CASE("manifest loading rejects what it cannot trust") {
  TempDir dir("reject");
  SynthConfig cfg = tiny_config(3);
  cfg.frames = 5;
  generate_synthetic_sequence(cfg, dir.path);
  const std::string good = dir.path + "/manifest.json";

  CHECK_THROWS_AS((void)load_dataset(good, "validation"), std::invalid_argument);
  CHECK(message_of([&] { (void)load_dataset("no_such_dir/manifest.json", "train"); })
            .find("cannot open manifest") != std::string::npos);

  const std::string bad = dir.path + "/broken.json";
  {
    std::ofstream out(bad, std::ios::binary);
    out << "{ this is not json";
  }
  CHECK(message_of([&] { (void)load_dataset(bad, "train"); }).find("malformed manifest") !=
        std::string::npos);

  json patched = parse_file(good);
  patched["schema_version"] = 99;
  const std::string vnext = dir.path + "/manifest_v99.json";
  {
    std::ofstream out(vnext, std::ios::binary);
    out << patched.dump(2);
  }
  CHECK(message_of([&] { (void)load_dataset(vnext, "train"); }).find("schema version") !=
        std::string::npos);
}

TEST_CASE("images that disagree with their cameras are caught at load") {
  TempDir dir("mismatch");
  SynthConfig cfg = tiny_config(3);
  cfg.frames = 5;
  generate_synthetic_sequence(cfg, dir.path);

  json patched = parse_file(dir.path + "/manifest.json");
  patched["frames"][0]["camera"]["width"] = 47;
  const std::string path = dir.path + "/manifest_patched.json";
  {
    std::ofstream out(path, std::ios::binary);
    out << patched.dump(2);
  }
  const FrameDataset ds = load_dataset(path, "train");
  CHECK(message_of([&] { (void)load_samples(ds); }).find("camera expects") !=
        std::string::npos);
}

TEST_CASE("nearest train row prefers the earlier frame on ties") {
  const std::vector<int> train = {0, 4, 8};
  CHECK(nearest_train_row(0, train) == 0);
  CHECK(nearest_train_row(2, train) == 0);
  CHECK(nearest_train_row(3, train) == 1);
  CHECK(nearest_train_row(6, train) == 1);
  CHECK(nearest_train_row(100, train) == 2);
  CHECK_THROWS_AS(nearest_train_row(1, {}), std::invalid_argument);
}

TEST_CASE("fitting a dataset split is reproducible") {
  TempDir dir("fit");
  generate_synthetic_sequence(tiny_config(5), dir.path);
  const FrameDataset train = load_dataset(dir.path + "/manifest.json", "train");

  FitConfig cfg;
  cfg.iterations = 6;
  cfg.seed = 3;
  cfg.threads = 1;
  cfg.model.count = 24;
  cfg.model.sh_degree = 1;
  cfg.model.n_l = 1;
  cfg.model.grid_res = {2, 2, 2};
  cfg.model.seed = 4;

  const FitResult r1 = fit_dataset(train, cfg);
  const FitResult r2 = fit_dataset(train, cfg);
  CHECK(!r1.diverged);
  REQUIRE(r1.log.size() == r2.log.size());
  REQUIRE(!r1.log.empty());
  for (size_t i = 0; i < r1.log.size(); ++i) {
    CHECK(r1.log[i].step == r2.log[i].step);
    CHECK(r1.log[i].l1 == r2.log[i].l1);
    CHECK(r1.log[i].total == r2.log[i].total);
  }
  REQUIRE(r1.poses.size() == r2.poses.size());
  for (size_t i = 0; i < r1.poses.size(); ++i) CHECK(same_pose(r1.poses[i], r2.poses[i]));

  save_model(r1.model, dir.path + "/fit_a.asplat");
  save_model(r2.model, dir.path + "/fit_b.asplat");
  CHECK(slurp(dir.path + "/fit_a.asplat") == slurp(dir.path + "/fit_b.asplat"));
}

TEST_CASE("generation validates its inputs") {
  TempDir dir("invalid");
  auto expect_invalid = [&](const std::function<void(SynthConfig&)>& tweak) {
    SynthConfig cfg = tiny_config(1);
    tweak(cfg);
    CHECK_THROWS_AS(generate_synthetic_sequence(cfg, dir.path), std::invalid_argument);
  };
  expect_invalid([](SynthConfig& c) { c.frames = 1; });
  expect_invalid([](SynthConfig& c) { c.width = 4; });
  expect_invalid([](SynthConfig& c) { c.fov_y_deg = 0.0; });
  expect_invalid([](SynthConfig& c) { c.orbit_radius = -1.0; });
  expect_invalid([](SynthConfig& c) { c.pose_noise = -0.1; });
  expect_invalid([](SynthConfig& c) { c.gt_count = 0; });
  expect_invalid([](SynthConfig& c) { c.gt_grid_res = 1; });
  expect_invalid([](SynthConfig& c) { c.gt_sh_degree = -1; });
  expect_invalid([](SynthConfig& c) { c.threads = -1; });
  expect_invalid([](SynthConfig& c) {
    c.motion = {MotionWave{}};
    c.motion[0].joint = 99;
  });
  expect_invalid([](SynthConfig& c) {
    c.motion = {MotionWave{}};
    c.motion[0].joint = -1;
  });
  expect_invalid([](SynthConfig& c) {
    c.motion = {MotionWave{}};
    c.motion[0].axis = Vec3::Zero();
  });

  // An output path blocked by a plain file fails with a clear error.
  const std::string blocker = "ds_test_blocker";
  {
    std::ofstream out(blocker, std::ios::binary);
    out << "in the way";
  }
  CHECK(message_of([&] {
          generate_synthetic_sequence(tiny_config(1), blocker + "/sub");
        }).find("cannot create output directory") != std::string::npos);
  std::remove(blocker.c_str());
}
