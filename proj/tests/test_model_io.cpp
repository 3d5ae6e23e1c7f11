// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "asplat/model.hpp"
#include "asplat/model_io.hpp"
#include "helpers.hpp"

using namespace asplat;
using test::max_abs_diff;

namespace {

KinematicTemplate io_template(uint64_t seed) {
  KinematicTemplate tpl;
  tpl.parents = {-1, 0, 1};
  tpl.joint_names = {"root", "mid", "tip"};
  tpl.rest_global.resize(3);
  tpl.rest_global[1].translation = Vec3(0.0, 0.4, 0.0);
  tpl.rest_global[2].translation = Vec3(0.0, 0.8, 0.1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  tpl.sample_weights.resize(50, 3);
  for (int s = 0; s < 50; ++s) {
    tpl.sample_positions.push_back(Vec3(u(rng), 0.4 + u(rng) * 2.0, u(rng)));
    Vec3 raw(u(rng) + 0.5, u(rng) + 0.5, u(rng) + 0.5);
    tpl.sample_weights.row(s) = (raw / raw.sum()).transpose();
  }
  tpl.skinning_sigma = 0.11;
  tpl.validate();
  return tpl;
}

AvatarModel io_model(uint64_t seed, SkinningMode mode = SkinningMode::kGrid) {
  ModelConfig cfg;
  cfg.count = 17;
  cfg.sh_degree = 2;
  cfg.n_l = 2;
  cfg.latent_frames = 3;
  cfg.grid_res = {3, 2, 4};
  cfg.seed = seed;
  AvatarModel model = init_from_template(io_template(seed), cfg);
  model.skinning_mode = mode;
  if (mode == SkinningMode::kPerGaussian) {
    model.pg_delta = MatX::Zero(cfg.count, model.bone_count());
    model.pg_latent = MatX::Zero(cfg.count, cfg.n_l);
  }
  // Irregular values everywhere so a lossy round trip cannot hide.
  std::mt19937_64 rng(seed + 99);
  std::normal_distribution<double> nd;
  auto scribble = [&](auto& m) {
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) m(r, c) = nd(rng);
  };
  scribble(model.gaussians.means);
  scribble(model.gaussians.rotations);
  scribble(model.gaussians.log_scales);
  scribble(model.gaussians.sh);
  for (int i = 0; i < model.gaussians.count(); ++i) model.gaussians.opacity_logits[i] = nd(rng);
  for (int j = 0; j < model.grid.delta.size(); ++j) model.grid.delta[j] = nd(rng);
  for (int j = 0; j < model.grid.latent.size(); ++j) model.grid.latent[j] = nd(rng);
  scribble(model.latent.params);
  if (mode == SkinningMode::kPerGaussian) {
    scribble(model.pg_delta);
    scribble(model.pg_latent);
  }
  return model;
}

std::string temp_path(const std::string& name) { return "io_test_" + name; }

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(bool(out));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::string thrown_message(const std::string& path) {
  try {
    load_model(path);
  } catch (const std::runtime_error& e) {
    return e.what();
  }
  return "";
}

void check_equal(const AvatarModel& a, const AvatarModel& b) {
  CHECK(a.tpl.parents == b.tpl.parents);
  CHECK(a.tpl.joint_names == b.tpl.joint_names);
  REQUIRE(a.tpl.rest_global.size() == b.tpl.rest_global.size());
  for (size_t k = 0; k < a.tpl.rest_global.size(); ++k) {
    CHECK(max_abs_diff(a.tpl.rest_global[k].rotation, b.tpl.rest_global[k].rotation) == 0.0);
    CHECK(max_abs_diff(a.tpl.rest_global[k].translation, b.tpl.rest_global[k].translation) == 0.0);
  }
  REQUIRE(a.tpl.sample_count() == b.tpl.sample_count());
  for (int s = 0; s < a.tpl.sample_count(); ++s)
    CHECK(max_abs_diff(a.tpl.sample_positions[s], b.tpl.sample_positions[s]) == 0.0);
  CHECK(max_abs_diff(a.tpl.sample_weights, b.tpl.sample_weights) == 0.0);
  CHECK(a.tpl.skinning_sigma == b.tpl.skinning_sigma);

  CHECK(a.gaussians.sh_degree == b.gaussians.sh_degree);
  CHECK(max_abs_diff(a.gaussians.means, b.gaussians.means) == 0.0);
  CHECK(max_abs_diff(a.gaussians.rotations, b.gaussians.rotations) == 0.0);
  CHECK(max_abs_diff(a.gaussians.log_scales, b.gaussians.log_scales) == 0.0);
  CHECK(max_abs_diff(a.gaussians.opacity_logits, b.gaussians.opacity_logits) == 0.0);
  CHECK(max_abs_diff(a.gaussians.sh, b.gaussians.sh) == 0.0);

  CHECK((a.grid.res.array() == b.grid.res.array()).all());
  CHECK(max_abs_diff(a.grid.lo, b.grid.lo) == 0.0);
  CHECK(max_abs_diff(a.grid.hi, b.grid.hi) == 0.0);
  CHECK(a.grid.n_b == b.grid.n_b);
  CHECK(a.grid.n_l == b.grid.n_l);
  CHECK(max_abs_diff(a.grid.delta, b.grid.delta) == 0.0);
  CHECK(max_abs_diff(a.grid.latent, b.grid.latent) == 0.0);

  CHECK(a.latent.n_l == b.latent.n_l);
  CHECK(max_abs_diff(a.latent.params, b.latent.params) == 0.0);

  CHECK(a.skinning_mode == b.skinning_mode);
  CHECK(a.pg_delta.rows() == b.pg_delta.rows());
  CHECK(a.pg_latent.rows() == b.pg_latent.rows());
  if (a.pg_delta.size() > 0) CHECK(max_abs_diff(a.pg_delta, b.pg_delta) == 0.0);
  if (a.pg_latent.size() > 0) CHECK(max_abs_diff(a.pg_latent, b.pg_latent) == 0.0);
}

}  // namespace

TEST_CASE("checkpoints round-trip bit for bit") {
  for (SkinningMode mode : {SkinningMode::kGrid, SkinningMode::kPerGaussian}) {
    const AvatarModel model = io_model(41, mode);
    const std::string path = temp_path(mode == SkinningMode::kGrid ? "grid.asplat" : "pg.asplat");
    save_model(model, path);
    const AvatarModel back = load_model(path);
    check_equal(model, back);

    // Saving the loaded copy must reproduce the file byte for byte.
    const std::string path2 = temp_path("again.asplat");
    save_model(back, path2);
    CHECK(slurp(path) == slurp(path2));
    std::remove(path.c_str());
    std::remove(path2.c_str());
  }
}

TEST_CASE("header summarizes the model without the payload") {
  const AvatarModel model = io_model(7);
  const std::string path = temp_path("header.asplat");
  save_model(model, path);
  const ModelHeaderInfo info = read_model_header(path);
  CHECK(info.version == 1);
  CHECK(info.count == 17);
  CHECK(info.sh_degree == 2);
  CHECK(info.n_b == 3);
  CHECK(info.n_l == 2);
  CHECK(info.latent_frames == 3);
  CHECK(info.skinning_mode == "grid");

  const AvatarModel pg = io_model(7, SkinningMode::kPerGaussian);
  save_model(pg, path);
  CHECK(read_model_header(path).skinning_mode == "per_gaussian");
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints fail loudly") {
  const AvatarModel model = io_model(13);
  const std::string good = temp_path("good.asplat");
  save_model(model, good);
  const std::vector<char> bytes = slurp(good);
  const std::string bad = temp_path("bad.asplat");

  SUBCASE("missing file") {
    const std::string msg = thrown_message("no_such_dir/nope.asplat");
    CHECK(msg.find("cannot open") != std::string::npos);
  }

  SUBCASE("foreign magic") {
    std::vector<char> mut = bytes;
    mut[0] = 'X';
    spit(bad, mut);
    const std::string msg = thrown_message(bad);
    CHECK(msg.find("magic") != std::string::npos);
  }

  SUBCASE("unsupported version") {
    std::vector<char> mut = bytes;
    // Patch the version field inside the JSON header text.
    const std::string hdr(mut.begin() + 16, mut.end());
    const size_t at = hdr.find("\"version\":1");
    REQUIRE(at != std::string::npos);
    mut[16 + at + 10] = '9';
    spit(bad, mut);
    const std::string msg = thrown_message(bad);
    CHECK(msg.find("version") != std::string::npos);
  }

  SUBCASE("truncated payload reports the byte offset") {
    std::vector<char> mut = bytes;
    mut.resize(mut.size() - 64);
    spit(bad, mut);
    const std::string msg = thrown_message(bad);
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("byte offset") != std::string::npos);
  }

  SUBCASE("non-finite payload reports the byte offset") {
    std::vector<char> mut = bytes;
    uint64_t header_len = 0;
    std::memcpy(&header_len, mut.data() + 8, 8);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    // Fifth double of the first payload section.
    std::memcpy(mut.data() + 16 + header_len + 4 * 8, &nan, 8);
    spit(bad, mut);
    const std::string msg = thrown_message(bad);
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("byte offset") != std::string::npos);
  }

  SUBCASE("garbage header") {
    std::vector<char> mut = bytes;
    mut[20] = '}';  // break the JSON text
    spit(bad, mut);
    const std::string msg = thrown_message(bad);
    CHECK(msg.find("malformed model header") != std::string::npos);
  }

  std::remove(good.c_str());
  std::remove(bad.c_str());
}

TEST_CASE("save refuses non-finite parameters and bad paths") {
  AvatarModel model = io_model(29);
  CHECK_THROWS_AS(save_model(model, "no_such_dir/out.asplat"), std::runtime_error);
  model.gaussians.means(3, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(save_model(model, temp_path("never.asplat")), std::runtime_error);
}
