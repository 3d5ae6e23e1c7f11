// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "asplat/biped.hpp"
#include "asplat/model.hpp"
#include "asplat/so3.hpp"
#include "helpers.hpp"

using namespace asplat;
using test::max_abs_diff;

namespace {

// Independent trilinear oracle: product of 1D hat functions over all nodes.
double tri_oracle(const SkinningGrid& g, const VecX& values, const Vec3& x) {
  Vec3 u;
  for (int a = 0; a < 3; ++a) {
    const double raw = (x[a] - g.lo[a]) / (g.hi[a] - g.lo[a]) * (g.res[a] - 1);
    u[a] = std::min(std::max(raw, 0.0), double(g.res[a] - 1));
  }
  double acc = 0.0;
  for (int ix = 0; ix < g.res.x(); ++ix)
    for (int iy = 0; iy < g.res.y(); ++iy)
      for (int iz = 0; iz < g.res.z(); ++iz) {
        const double w = std::max(0.0, 1.0 - std::abs(u.x() - ix)) *
                         std::max(0.0, 1.0 - std::abs(u.y() - iy)) *
                         std::max(0.0, 1.0 - std::abs(u.z() - iz));
        acc += w * values[(ix * g.res.y() + iy) * g.res.z() + iz];
      }
  return acc;
}

// Small chain template with scattered surface samples, used by the model
// round-trip and gradient tests.
KinematicTemplate test_template(uint64_t seed) {
  KinematicTemplate tpl;
  tpl.parents = {-1, 0, 1};
  tpl.rest_global.resize(3);
  tpl.rest_global[1].translation = Vec3(0.0, 0.4, 0.0);
  tpl.rest_global[2].translation = Vec3(0.0, 0.8, 0.1);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  const int s_count = 90;
  tpl.sample_weights.resize(s_count, 3);
  for (int s = 0; s < s_count; ++s) {
    tpl.sample_positions.push_back(Vec3(u(rng), 0.4 + u(rng) * 2.0, u(rng)));
    Vec3 raw(u(rng) + 0.5, u(rng) + 0.5, u(rng) + 0.5);
    tpl.sample_weights.row(s) = (raw / raw.sum()).transpose();
  }
  tpl.skinning_sigma = 0.12;
  tpl.validate();
  return tpl;
}

AvatarModel test_model(uint64_t seed, bool randomize) {
  ModelConfig cfg;
  cfg.count = 8;
  cfg.sh_degree = 1;
  cfg.n_l = 2;
  cfg.latent_frames = 2;
  cfg.grid_res = {3, 3, 3};
  cfg.seed = seed;
  AvatarModel model = init_from_template(test_template(seed), cfg);
  if (randomize) {
    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> nd;
    for (int i = 0; i < model.gaussians.count(); ++i) {
      for (int c = 0; c < 4; ++c) model.gaussians.rotations(i, c) = nd(rng);
      for (int c = 0; c < 3; ++c) model.gaussians.log_scales(i, c) = -2.0 + 0.3 * nd(rng);
      model.gaussians.opacity_logits[i] = 0.5 * nd(rng);
      for (int c = 0; c < model.gaussians.sh.cols(); ++c)
        model.gaussians.sh(i, c) = 0.3 * nd(rng);
    }
    for (int j = 0; j < model.grid.delta.size(); ++j) model.grid.delta[j] = 0.05 * nd(rng);
    for (int j = 0; j < model.grid.latent.size(); ++j) model.grid.latent[j] = 0.05 * nd(rng);
    for (int f = 0; f < model.latent.frame_count(); ++f)
      for (int c = 0; c < model.latent.params.cols(); ++c)
        model.latent.params(f, c) = 0.2 * nd(rng);
  }
  return model;
}

Pose test_pose(int joints, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Pose pose;
  for (int k = 0; k < joints; ++k)
    pose.joint_rotations.push_back(quat_from_axis_angle(
        0.4 * Vec3(nd(rng), nd(rng), nd(rng))));
  pose.root_translation = 0.3 * Vec3(nd(rng), nd(rng), nd(rng));
  return pose;
}

}  // namespace

TEST_CASE("synthetic biped construction") {
  BipedConfig cfg;
  const Biped plain = build_synthetic_biped(cfg);
  CHECK(plain.tpl.joint_count() == 11);
  CHECK(plain.hidden_joint == -1);
  CHECK(plain.tpl.sample_count() > 500);
  CHECK(plain.tpl.sample_count() == static_cast<int>(plain.sample_owner.size()));

  // Every limb capsule owns samples; the root owns none without a skirt.
  std::set<int> owners(plain.sample_owner.begin(), plain.sample_owner.end());
  for (int k = 1; k <= 10; ++k) CHECK(owners.count(k) == 1);
  CHECK(owners.count(0) == 0);

  // Deterministic rebuild.
  const Biped again = build_synthetic_biped(cfg);
  REQUIRE(again.tpl.sample_count() == plain.tpl.sample_count());
  for (int s = 0; s < plain.tpl.sample_count(); ++s)
    CHECK(max_abs_diff(again.tpl.sample_positions[s], plain.tpl.sample_positions[s]) == 0.0);

  BipedConfig bad = cfg;
  bad.height = 0.0;
  CHECK_THROWS_AS(build_synthetic_biped(bad), std::invalid_argument);
}

TEST_CASE("skirt flavors share geometry but differ in rig") {
  BipedConfig cfg;
  cfg.skirt = true;
  const Biped rigid = build_synthetic_biped(cfg);
  cfg.skirt_hidden_bone = true;
  const Biped hidden = build_synthetic_biped(cfg);

  CHECK(rigid.tpl.joint_count() == 11);
  CHECK(hidden.tpl.joint_count() == 12);
  CHECK(hidden.hidden_joint == 11);
  REQUIRE(rigid.tpl.sample_count() == hidden.tpl.sample_count());
  for (int s = 0; s < rigid.tpl.sample_count(); ++s)
    CHECK(max_abs_diff(rigid.tpl.sample_positions[s], hidden.tpl.sample_positions[s]) == 0.0);

  // Skirt samples hang off the pelvis in one flavor, the extra joint in the other.
  int pelvis_owned = 0, skirt_owned = 0;
  for (int s = 0; s < rigid.tpl.sample_count(); ++s) {
    if (rigid.sample_owner[s] == 0) ++pelvis_owned;
    if (hidden.sample_owner[s] == 11) ++skirt_owned;
  }
  CHECK(pelvis_owned > 0);
  CHECK(pelvis_owned == skirt_owned);

  // No skirt, no extra samples.
  BipedConfig off;
  const Biped plain = build_synthetic_biped(off);
  CHECK(rigid.tpl.sample_count() > plain.tpl.sample_count());
}

TEST_CASE("trilinear cell matches frozen reference and brute force") {
  SkinningGrid g;
  g.res = {3, 2, 2};
  g.lo = Vec3(0, 0, 0);
  g.hi = Vec3(2, 1, 1);
  g.n_b = 1;
  g.n_l = 0;
  g.delta.resize(12);
  for (int j = 0; j < 12; ++j) g.delta[j] = j / 10.0;
  g.latent.resize(0);
  g.validate();

  auto eval = [&](const Vec3& x) {
    const TriCell c = grid_cell(g, x);
    double acc = 0.0;
    for (int j = 0; j < 8; ++j) acc += c.w[j] * g.delta[c.node[j]];
    return acc;
  };
  // Frozen values from an independent implementation.
  CHECK(eval(Vec3(0.7, 0.3, 0.6)) == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(eval(Vec3(2.5, -0.2, 0.5)) == doctest::Approx(0.85).epsilon(1e-12));

  std::mt19937_64 rng(19);
  std::uniform_real_distribution<double> u(-0.5, 2.5);
  for (int t = 0; t < 200; ++t) {
    const Vec3 x(u(rng), u(rng) * 0.6, u(rng) * 0.6);
    const TriCell c = grid_cell(g, x);
    double wsum = 0.0;
    for (double w : c.w) wsum += w;
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(eval(x) == doctest::Approx(tri_oracle(g, g.delta, x)).epsilon(1e-12));
  }
}

TEST_CASE("trilinear weight gradients") {
  SkinningGrid g;
  g.res = {4, 3, 3};
  g.lo = Vec3(-1, -1, -1);
  g.hi = Vec3(1, 1, 1);
  g.n_b = 1;
  g.n_l = 0;
  g.delta.resize(g.node_count());
  std::mt19937_64 rng(23);
  std::normal_distribution<double> nd;
  for (int j = 0; j < g.delta.size(); ++j) g.delta[j] = nd(rng);
  g.validate();

  auto eval = [&](const Vec3& x) {
    const TriCell c = grid_cell(g, x);
    double acc = 0.0;
    for (int j = 0; j < 8; ++j) acc += c.w[j] * g.delta[c.node[j]];
    return acc;
  };

  // Interior points: finite differences agree with the stencil gradients.
  const double h = 1e-7;
  std::uniform_real_distribution<double> u(-0.95, 0.95);
  for (int t = 0; t < 50; ++t) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const TriCell c = grid_cell(g, x);
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 xp = x, xm = x;
      xp[axis] += h;
      xm[axis] -= h;
      double grad = 0.0;
      for (int j = 0; j < 8; ++j) grad += c.dw[j][axis] * g.delta[c.node[j]];
      CHECK(grad == doctest::Approx((eval(xp) - eval(xm)) / (2 * h)).epsilon(1e-4).scale(1.0));
    }
  }

  // Clamped dimensions report zero gradient, matching the flat extrapolation.
  const TriCell c = grid_cell(g, Vec3(5.0, 0.2, -3.0));
  for (int j = 0; j < 8; ++j) {
    CHECK(c.dw[j].x() == 0.0);
    CHECK(c.dw[j].z() == 0.0);
  }
}

TEST_CASE("latent bone table decodes axis-angle plus translation") {
  LatentBoneTable table;
  table.n_l = 2;
  table.params = MatX::Zero(2, 12);
  table.params.row(1) << 0.3, -0.2, 0.5, 1.0, 2.0, 3.0, 0, 0, 0, -0.5, 0.25, 0.125;

  const RigidTransform id = table.decode(0, 0);
  CHECK(max_abs_diff(id.rotation, Mat3::Identity()) == 0.0);
  CHECK(id.translation.norm() == 0.0);

  const RigidTransform t = table.decode(1, 0);
  CHECK(max_abs_diff(t.rotation, so3_exp(Vec3(0.3, -0.2, 0.5))) == 0.0);
  CHECK(max_abs_diff(t.translation, Vec3(1, 2, 3)) == 0.0);
  const RigidTransform t2 = table.decode(1, 1);
  CHECK(max_abs_diff(t2.rotation, Mat3::Identity()) == 0.0);
  CHECK(max_abs_diff(t2.translation, Vec3(-0.5, 0.25, 0.125)) == 0.0);
}

TEST_CASE("model initialization") {
  const KinematicTemplate tpl = test_template(3);
  ModelConfig cfg;
  cfg.count = 60;  // fewer than the 90 samples: every mean sits on a sample
  cfg.sh_degree = 2;
  cfg.n_l = 3;
  cfg.latent_frames = 5;
  cfg.grid_res = {4, 5, 6};
  cfg.seed = 99;
  const AvatarModel model = init_from_template(tpl, cfg);

  CHECK(model.gaussians.count() == 60);
  CHECK(model.gaussians.sh.cols() == 3 * 9);
  std::set<int> used;
  for (int i = 0; i < 60; ++i) {
    const Vec3 mu = model.gaussians.means.row(i).transpose();
    bool on_sample = false;
    for (int s = 0; s < tpl.sample_count(); ++s)
      if ((mu - tpl.sample_positions[s]).norm() == 0.0) {
        on_sample = true;
        used.insert(s);
      }
    CHECK(on_sample);
  }
  CHECK(used.size() == 60);  // distinct samples, no repeats below the sample count

  for (int i = 0; i < 60; ++i) {
    const Vec3 s = model.gaussians.scale(i);
    CHECK(s.minCoeff() > 0.0);
    CHECK(s.maxCoeff() < 1.0);
    CHECK(s.x() == s.y());  // isotropic init
    CHECK(model.gaussians.opacity(i) == doctest::Approx(0.5).epsilon(1e-12));
  }

  // Mid-gray DC color regardless of viewing direction.
  const ArticulatedGaussians proxy = canonical_proxy(model.gaussians);
  const Vec3 rgb = component_color(proxy, 0, Vec3(0, 0, 1));
  CHECK(max_abs_diff(rgb, Vec3(0.5, 0.5, 0.5)) < 1e-12);

  CHECK(model.grid.delta.size() == 4 * 5 * 6 * 3);
  CHECK(model.grid.delta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(model.grid.latent.cwiseAbs().maxCoeff() == 0.0);
  CHECK(model.latent.params.rows() == 5);
  CHECK(model.latent.params.cols() == 3 * 6);

  // The grid box contains all samples with margin on every side.
  Vec3 lo, hi;
  tpl.sample_bounds(lo, hi);
  for (int a = 0; a < 3; ++a) {
    CHECK(model.grid.lo[a] < lo[a]);
    CHECK(model.grid.hi[a] > hi[a]);
  }

  // More components than samples: the extras are jittered duplicates.
  ModelConfig big = cfg;
  big.count = 200;
  const AvatarModel wide = init_from_template(tpl, big);
  CHECK(wide.gaussians.count() == 200);

  // Deterministic for a fixed seed.
  const AvatarModel a = init_from_template(tpl, cfg);
  const AvatarModel b = init_from_template(tpl, cfg);
  CHECK(max_abs_diff(a.gaussians.means, b.gaussians.means) == 0.0);
  CHECK(max_abs_diff(a.gaussians.log_scales, b.gaussians.log_scales) == 0.0);

  ModelConfig bad = cfg;
  bad.count = 0;
  CHECK_THROWS_AS(init_from_template(tpl, bad), std::invalid_argument);
  bad = cfg;
  bad.init_opacity = 1.0;
  CHECK_THROWS_AS(init_from_template(tpl, bad), std::invalid_argument);
}

TEST_CASE("skinning weights reduce to the prior on a zero grid") {
  const AvatarModel model = test_model(7, false);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-0.4, 0.9);
  for (int t = 0; t < 20; ++t) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const auto [w_hat, w_lat] = skinning_weights_at(model, x);
    CHECK(max_abs_diff(w_hat, prior_skinning_query(model.tpl, x)) == 0.0);
    CHECK(w_lat.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("skinning weights add the interpolated grid corrections") {
  AvatarModel model = test_model(9, true);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-0.2, 0.8);
  for (int t = 0; t < 20; ++t) {
    const Vec3 x(u(rng), u(rng), u(rng));
    const auto [w_hat, w_lat] = skinning_weights_at(model, x);
    const VecX prior = prior_skinning_query(model.tpl, x);
    for (int k = 0; k < model.bone_count(); ++k) {
      VecX channel(model.grid.node_count());
      for (int j = 0; j < model.grid.node_count(); ++j)
        channel[j] = model.grid.delta[j * model.grid.n_b + k];
      CHECK(w_hat[k] ==
            doctest::Approx(prior[k] + tri_oracle(model.grid, channel, x)).epsilon(1e-10));
    }
    for (int q = 0; q < model.latent_count(); ++q) {
      VecX channel(model.grid.node_count());
      for (int j = 0; j < model.grid.node_count(); ++j)
        channel[j] = model.grid.latent[j * model.grid.n_l + q];
      CHECK(w_lat[q] == doctest::Approx(tri_oracle(model.grid, channel, x)).epsilon(1e-10));
    }
  }

  model.skinning_mode = SkinningMode::kPerGaussian;
  CHECK_THROWS_AS(skinning_weights_at(model, Vec3::Zero()), std::logic_error);
}

TEST_CASE("rest pose articulation is the identity") {
  AvatarModel model = test_model(11, false);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> nd;
  for (int i = 0; i < model.gaussians.count(); ++i) {
    for (int c = 0; c < 4; ++c) model.gaussians.rotations(i, c) = nd(rng);
    for (int c = 0; c < 3; ++c) model.gaussians.log_scales(i, c) = -2.0 + 0.3 * nd(rng);
  }
  const ArticulatedGaussians posed =
      articulate(model, Pose::rest(model.bone_count()), kIdentityLatents);
  const ArticulatedGaussians canon = canonical_proxy(model.gaussians);
  CHECK(max_abs_diff(posed.means, canon.means) < 1e-12);
  for (int i = 0; i < posed.count(); ++i) {
    CHECK(max_abs_diff(posed.cov_factors[i], canon.cov_factors[i]) < 1e-12);
    CHECK(max_abs_diff(posed.sh_rotations[i], canon.sh_rotations[i]) < 1e-12);
    CHECK(posed.opacities[i] == canon.opacities[i]);
  }
}

TEST_CASE("articulation is equivariant under rigid motions") {
  // Fresh init (zero grids) so the blended weights partition unity exactly.
  AvatarModel model = test_model(13, false);
  std::mt19937_64 rng(14);
  std::normal_distribution<double> nd;
  for (int i = 0; i < model.gaussians.count(); ++i)
    for (int c = 0; c < 4; ++c) model.gaussians.rotations(i, c) = nd(rng);

  const Vec3 p0 = model.tpl.rest_global[0].translation;
  for (int t = 0; t < 20; ++t) {
    const Pose pose = test_pose(model.bone_count(), 100 + t);
    const Quaternion qg = test::random_quat(rng);
    const Mat3 rg = quat_to_rotation(qg);
    const Vec3 tg = Vec3(nd(rng), nd(rng), nd(rng));

    Pose moved = pose;
    moved.joint_rotations[0] = quat_mul(qg, pose.joint_rotations[0]);
    moved.root_translation = rg * (pose.root_translation + p0) + tg - p0;

    const ArticulatedGaussians a = articulate(model, pose, kIdentityLatents);
    const ArticulatedGaussians b = articulate(model, moved, kIdentityLatents);
    for (int i = 0; i < a.count(); ++i) {
      const Vec3 expect = rg * a.means.row(i).transpose() + tg;
      CHECK(max_abs_diff(Vec3(b.means.row(i).transpose()), expect) < 1e-10);
      CHECK(max_abs_diff(b.cov_factors[i], rg * a.cov_factors[i]) < 1e-10);
    }
  }
}

TEST_CASE("sh rotation frames are orthonormal") {
  AvatarModel model = test_model(15, true);
  const Pose pose = test_pose(model.bone_count(), 16);
  const ArticulatedGaussians posed = articulate(model, pose, 1);
  for (int i = 0; i < posed.count(); ++i) {
    const Mat3& r = posed.sh_rotations[i];
    CHECK(max_abs_diff(r * r.transpose(), Mat3::Identity()) < 1e-10);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("articulation backward matches finite differences") {
  AvatarModel model = test_model(17, true);
  const Pose pose = test_pose(model.bone_count(), 18);
  const int frame = 1;
  const int n = model.gaussians.count();

  // Fixed random coefficients define a scalar loss over the proxy outputs.
  std::mt19937_64 rng(19);
  std::normal_distribution<double> nd;
  MatX cm(n, 3);
  std::vector<Mat3> cf(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) cm(i, c) = nd(rng);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) cf[i](a, b) = nd(rng);
  }
  auto loss = [&](const AvatarModel& m, const Pose& p) {
    const ArticulatedGaussians out = articulate(m, p, frame);
    double acc = out.means.cwiseProduct(cm).sum();
    for (int i = 0; i < n; ++i) acc += cf[i].cwiseProduct(out.cov_factors[i]).sum();
    return acc;
  };

  const WeightsEval weights = eval_skinning_weights(model, true);
  ParamGrads grads;
  grads.init_zero(model);
  articulate_backward(model, pose, frame, weights, cm, cf, grads);

  const double h = 1e-6;
  auto fd_param = [&](double* slot) {
    const double keep = *slot;
    *slot = keep + h;
    const double lp = loss(model, pose);
    *slot = keep - h;
    const double lm = loss(model, pose);
    *slot = keep;
    return (lp - lm) / (2.0 * h);
  };

  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      const double fd = fd_param(&model.gaussians.means(i, c));
      CHECK(grads.means(i, c) == doctest::Approx(fd).epsilon(2e-4).scale(1.0));
    }
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 4; ++c) {
      const double fd = fd_param(&model.gaussians.rotations(i, c));
      CHECK(grads.rotations(i, c) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      const double fd = fd_param(&model.gaussians.log_scales(i, c));
      CHECK(grads.log_scales(i, c) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
  for (int j = 0; j < model.grid.delta.size(); j += 7) {
    const double fd = fd_param(&model.grid.delta[j]);
    CHECK(grads.grid_delta[j] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
  for (int j = 0; j < model.grid.latent.size(); j += 5) {
    const double fd = fd_param(&model.grid.latent[j]);
    CHECK(grads.grid_latent[j] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
  }
  for (int c = 0; c < model.latent.params.cols(); ++c) {
    const double fd = fd_param(&model.latent.params(frame, c));
    CHECK(grads.latent_table(frame, c) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    // The other frame is untouched by this articulation.
    CHECK(grads.latent_table(0, c) == 0.0);
  }

  // Pose gradients, pulled back to axis-angle through the exp-map adjoint.
  for (int k = 0; k < model.bone_count(); ++k) {
    Vec3 w = Vec3::Zero();
    {
      const Quaternion& q = pose.joint_rotations[k];
      w = so3_log(quat_to_rotation(q));
    }
    const Vec3 g = so3_exp_backward(w, grads.d_joint_rot[k]);
    for (int axis = 0; axis < 3; ++axis) {
      Pose pp = pose, pm = pose;
      Vec3 wp = w, wm = w;
      wp[axis] += h;
      wm[axis] -= h;
      pp.joint_rotations[k] = quat_from_axis_angle(wp);
      pm.joint_rotations[k] = quat_from_axis_angle(wm);
      const double fd = (loss(model, pp) - loss(model, pm)) / (2.0 * h);
      CHECK(g[axis] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }
  for (int axis = 0; axis < 3; ++axis) {
    Pose pp = pose, pm = pose;
    pp.root_translation[axis] += h;
    pm.root_translation[axis] -= h;
    const double fd = (loss(model, pp) - loss(model, pm)) / (2.0 * h);
    CHECK(grads.d_root[axis] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("articulation backward in per-component skinning mode") {
  AvatarModel model = test_model(21, true);
  model.skinning_mode = SkinningMode::kPerGaussian;
  const int n = model.gaussians.count();
  std::mt19937_64 rng(22);
  std::normal_distribution<double> nd;
  model.pg_delta.resize(n, model.bone_count());
  model.pg_latent.resize(n, model.latent_count());
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < model.bone_count(); ++k) model.pg_delta(i, k) = 0.05 * nd(rng);
    for (int q = 0; q < model.latent_count(); ++q) model.pg_latent(i, q) = 0.05 * nd(rng);
  }
  const Pose pose = test_pose(model.bone_count(), 23);
  const int frame = 0;

  MatX cm(n, 3);
  std::vector<Mat3> cf(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) cm(i, c) = nd(rng);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) cf[i](a, b) = nd(rng);
  }
  auto loss = [&]() {
    const ArticulatedGaussians out = articulate(model, pose, frame);
    double acc = out.means.cwiseProduct(cm).sum();
    for (int i = 0; i < n; ++i) acc += cf[i].cwiseProduct(out.cov_factors[i]).sum();
    return acc;
  };

  const WeightsEval weights = eval_skinning_weights(model, true);
  ParamGrads grads;
  grads.init_zero(model);
  articulate_backward(model, pose, frame, weights, cm, cf, grads);

  const double h = 1e-6;
  auto fd_param = [&](double* slot) {
    const double keep = *slot;
    *slot = keep + h;
    const double lp = loss();
    *slot = keep - h;
    const double lm = loss();
    *slot = keep;
    return (lp - lm) / (2.0 * h);
  };
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < model.bone_count(); ++k) {
      const double fd = fd_param(&model.pg_delta(i, k));
      CHECK(grads.pg_delta(i, k) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
    for (int q = 0; q < model.latent_count(); ++q) {
      const double fd = fd_param(&model.pg_latent(i, q));
      CHECK(grads.pg_latent(i, q) == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
    }
    for (int c = 0; c < 3; ++c) {
      const double fd = fd_param(&model.gaussians.means(i, c));
      CHECK(grads.means(i, c) == doctest::Approx(fd).epsilon(2e-4).scale(1.0));
    }
  }
  // Grid gradients stay zero in this mode.
  CHECK(grads.grid_delta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.grid_latent.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("density and emission evaluate the gaussian mixture") {
  GaussianMixture g;
  g.sh_degree = 0;
  g.means = MatX::Zero(1, 3);
  g.means.row(0) << 0.2, -0.1, 0.4;
  g.rotations = MatX::Zero(1, 4);
  g.rotations.row(0) << 0.9, 0.1, -0.3, 0.2;
  g.log_scales = MatX::Zero(1, 3);
  g.log_scales.row(0) << std::log(0.2), std::log(0.4), std::log(0.1);
  g.opacity_logits = VecX::Constant(1, logit(0.7));
  g.sh = MatX::Zero(1, 3);
  g.sh.row(0) << 1.2, 0.8, 0.4;

  const ArticulatedGaussians proxy = canonical_proxy(g);
  const Vec3 mu = g.means.row(0).transpose();
  CHECK(eval_density(proxy, mu) == doctest::Approx(0.7).epsilon(1e-12));

  // One principal-axis standard deviation out: density drops by exp(-1/2).
  const Mat3 r = quat_to_rotation(g.rotation(0));
  const Vec3 x1 = mu + r.col(0) * 0.2;
  CHECK(eval_density(proxy, x1) == doctest::Approx(0.7 * std::exp(-0.5)).epsilon(1e-12));

  // Quadratic form agrees with an independent dense solve of Sigma.
  const Mat3 sigma = covariance_from_rotation_scale(r, Vec3(0.2, 0.4, 0.1));
  std::mt19937_64 rng(29);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 10; ++t) {
    const Vec3 x = mu + 0.3 * Vec3(nd(rng), nd(rng), nd(rng));
    const double q = (x - mu).dot(sigma.ldlt().solve(x - mu));
    CHECK(eval_density(proxy, x) == doctest::Approx(0.7 * std::exp(-0.5 * q)).epsilon(1e-10));
  }

  // Emission is density times the clamped per-component color.
  const double c0 = 0.28209479177387814;
  const Vec3 dir = Vec3(1, 2, 3).normalized();
  const Vec3 col = eval_color(proxy, x1, dir);
  const Vec3 expect = 0.7 * std::exp(-0.5) * c0 * Vec3(1.2, 0.8, 0.4);
  CHECK(max_abs_diff(col, expect) < 1e-12);

  // Negative DC clamps to black, not negative light.
  GaussianMixture dark = g;
  dark.sh.row(0) << -1.0, 0.5, -0.2;
  const ArticulatedGaussians dproxy = canonical_proxy(dark);
  const Vec3 dcol = component_color(dproxy, 0, dir);
  CHECK(dcol.x() == 0.0);
  CHECK(dcol.y() == doctest::Approx(0.5 * c0));
  CHECK(dcol.z() == 0.0);

  // A singular factor contributes nothing rather than NaNs.
  ArticulatedGaussians singular = proxy;
  singular.cov_factors[0].col(0).setZero();
  CHECK(eval_density(singular, mu) == 0.0);
}
