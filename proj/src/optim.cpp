// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "asplat/model_io.hpp"
#include "asplat/so3.hpp"

namespace asplat {

namespace {

void ensure_slot(AdamSlot& slot, Eigen::Index rows, Eigen::Index cols) {
  if (slot.m.size() == 0) {
    slot.m = MatX::Zero(rows, cols);
    slot.v = MatX::Zero(rows, cols);
  } else if (slot.m.rows() != rows || slot.m.cols() != cols) {
    throw std::invalid_argument("adam moments do not match the parameter shape");
  }
}

template <typename Param, typename Grad>
void adam_core(AdamSlot& slot, const Grad& grad, double lr, long long step, double b1,
               double b2, double eps, Param& param) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols())
    throw std::invalid_argument("adam gradient does not match the parameter shape");
  if (step < 1) throw std::invalid_argument("adam step counter must be >= 1");
  ensure_slot(slot, param.rows(), param.cols());
  slot.m.array() = b1 * slot.m.array() + (1.0 - b1) * grad.array();
  slot.v.array() = b2 * slot.v.array() + (1.0 - b2) * grad.array().square();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  param.array() -=
      (lr / c1) * slot.m.array() / ((slot.v.array() / c2).sqrt() + eps);
}

// Sparse per-row variant for the per-frame pose table: only the visited row
// moves, with its own bias-correction counter.
void adam_row(AdamSlot& slot, int row, const VecX& grad, double lr, long long row_step,
              double b1, double b2, double eps, MatX& params) {
  ensure_slot(slot, params.rows(), params.cols());
  slot.m.row(row) = b1 * slot.m.row(row) + (1.0 - b1) * grad.transpose();
  slot.v.row(row).array() =
      b2 * slot.v.row(row).array() + (1.0 - b2) * grad.transpose().array().square();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(row_step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(row_step));
  params.row(row).array() -= (lr / c1) * slot.m.row(row).array() /
                             ((slot.v.row(row).array() / c2).sqrt() + eps);
}

void remap_slot(AdamSlot& slot, const std::vector<int>& source) {
  if (slot.m.size() == 0) return;  // never touched; stays lazily initialized
  const Eigen::Index cols = slot.m.cols();
  MatX m = MatX::Zero(static_cast<Eigen::Index>(source.size()), cols);
  MatX v = MatX::Zero(static_cast<Eigen::Index>(source.size()), cols);
  for (size_t r = 0; r < source.size(); ++r)
    if (source[r] >= 0) {
      m.row(static_cast<Eigen::Index>(r)) = slot.m.row(source[r]);
      v.row(static_cast<Eigen::Index>(r)) = slot.v.row(source[r]);
    }
  slot.m = std::move(m);
  slot.v = std::move(v);
}

}  // namespace

void adam_update(AdamSlot& slot, const MatX& grad, double lr, long long step,
                 double beta1, double beta2, double eps, MatX& param) {
  adam_core(slot, grad, lr, step, beta1, beta2, eps, param);
}

void adam_update(AdamSlot& slot, const VecX& grad, double lr, long long step,
                 double beta1, double beta2, double eps, VecX& param) {
  adam_core(slot, grad, lr, step, beta1, beta2, eps, param);
}

void DensifyStats::reset(int n) {
  grad2d = VecX::Zero(n);
  hits = VecX::Zero(n);
  world = MatX::Zero(n, 3);
}

void DensifyStats::add(const MatX& d_mean2d, const MatX& d_means_world, int width,
                       int height) {
  const Eigen::Index n = grad2d.size();
  if (d_mean2d.rows() != n || d_means_world.rows() != n)
    throw std::invalid_argument("densify stats misaligned with the gradient arrays");
  const double norm_px = 0.5 * std::max(width, height);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = d_mean2d.row(i).norm();
    if (g == 0.0) continue;  // no footprint this iteration
    grad2d[i] += g * norm_px;
    hits[i] += 1.0;
    world.row(i) += d_means_world.row(i);
  }
}

DensifyResult densify_and_prune(AvatarModel& model, const DensifyStats& stats,
                                const DensifyConfig& cfg, AdamState* adam,
                                std::mt19937_64& rng) {
  GaussianMixture& g = model.gaussians;
  const int n = g.count();
  if (stats.grad2d.size() != n || stats.world.rows() != n)
    throw std::invalid_argument("densify stats misaligned with the components");
  if (!(cfg.grad_threshold > 0.0) || !(cfg.prune_opacity > 0.0) ||
      !(cfg.split_scale > 0.0) || !(cfg.split_factor > 1.0))
    throw std::invalid_argument("densify thresholds must be positive (factor > 1)");
  const bool pg_mode = model.skinning_mode == SkinningMode::kPerGaussian;
  if (pg_mode && (model.pg_delta.rows() != n || model.pg_latent.rows() != n))
    throw std::invalid_argument("per-component skinning rows misaligned");

  enum Action { kDrop, kKeep, kClone, kSplit };
  std::vector<Action> action(n, kKeep);
  DensifyResult res;
  int kept = 0;
  for (int i = 0; i < n; ++i) {
    if (g.opacity(i) < cfg.prune_opacity) {
      action[i] = kDrop;
      ++res.pruned;
    } else {
      ++kept;
    }
  }
  if (kept == 0) throw std::runtime_error("densify: pruning removed every component");

  // Clone and split both add one net row; stop handing out rows at the budget.
  long long budget = cfg.max_components > 0
                         ? static_cast<long long>(cfg.max_components) - kept
                         : std::numeric_limits<long long>::max();
  for (int i = 0; i < n && budget > 0; ++i) {
    if (action[i] == kDrop || stats.hits[i] == 0.0) continue;
    if (stats.grad2d[i] / stats.hits[i] <= cfg.grad_threshold) continue;
    action[i] = g.scale(i).maxCoeff() < cfg.split_scale ? kClone : kSplit;
    --budget;
  }

  Eigen::Index new_n = 0;
  for (int i = 0; i < n; ++i)
    new_n += action[i] == kDrop ? 0 : (action[i] == kKeep ? 1 : 2);

  const Eigen::Index sh_cols = g.sh.cols();
  std::vector<int> source;  // per new row: the old row whose moments carry over
  source.reserve(static_cast<size_t>(new_n));
  MatX means(new_n, 3), rotations(new_n, 4), log_scales(new_n, 3), sh(new_n, sh_cols);
  MatX pg_delta(pg_mode ? new_n : 0, model.pg_delta.cols());
  MatX pg_latent(pg_mode ? new_n : 0, model.pg_latent.cols());
  VecX logits(new_n);
  Eigen::Index next = 0;
  auto append = [&](int from, const Vec3& mean, const Eigen::RowVector3d& log_scale,
                    int moment_source) {
    const Eigen::Index r = next++;
    means.row(r) = mean.transpose();
    rotations.row(r) = g.rotations.row(from);
    log_scales.row(r) = log_scale;
    sh.row(r) = g.sh.row(from);
    logits[r] = g.opacity_logits[from];
    if (pg_mode) {
      pg_delta.row(r) = model.pg_delta.row(from);
      pg_latent.row(r) = model.pg_latent.row(from);
    }
    source.push_back(moment_source);
  };

  std::normal_distribution<double> unit_normal(0.0, 1.0);
  auto sample_inside = [&](int i) -> Vec3 {
    const Mat3 rot = quat_to_rotation(g.rotation(i));
    const Vec3 s = g.scale(i);
    Vec3 z;
    for (int d = 0; d < 3; ++d) z[d] = std::clamp(unit_normal(rng), -2.0, 2.0);
    return Vec3(g.means.row(i).transpose()) + rot * (s.cwiseProduct(z));
  };

  const double log_shrink = std::log(cfg.split_factor);
  for (int i = 0; i < n; ++i) {
    switch (action[i]) {
      case kDrop:
        break;
      case kKeep:
        append(i, g.means.row(i).transpose(), g.log_scales.row(i), i);
        break;
      case kClone: {
        append(i, g.means.row(i).transpose(), g.log_scales.row(i), i);
        Vec3 mean = g.means.row(i).transpose();
        const double dir_norm = stats.world.row(i).norm();
        if (dir_norm > 1e-30) {
          // Step the copy down the accumulated gradient, one percent of the
          // component size, so the pair starts separating immediately.
          mean -= (cfg.clone_nudge * g.scale(i).maxCoeff() / dir_norm) *
                  Vec3(stats.world.row(i).transpose());
        }
        append(i, mean, g.log_scales.row(i), -1);
        ++res.cloned;
        break;
      }
      case kSplit: {
        const Eigen::RowVector3d child_ls = g.log_scales.row(i).array() - log_shrink;
        append(i, sample_inside(i), child_ls, -1);
        append(i, sample_inside(i), child_ls, -1);
        ++res.split;
        break;
      }
    }
  }

  g.means = std::move(means);
  g.rotations = std::move(rotations);
  g.log_scales = std::move(log_scales);
  g.sh = std::move(sh);
  g.opacity_logits = std::move(logits);
  if (pg_mode) {
    model.pg_delta = std::move(pg_delta);
    model.pg_latent = std::move(pg_latent);
  }

  if (adam) {
    remap_slot(adam->means, source);
    remap_slot(adam->rotations, source);
    remap_slot(adam->log_scales, source);
    remap_slot(adam->opacity_logits, source);
    remap_slot(adam->sh, source);
    remap_slot(adam->pg_delta, source);
    remap_slot(adam->pg_latent, source);
  }

  res.count = g.count();
  return res;
}

LossRow loss_and_grads(const AvatarModel& model, const Pose& pose, int latent_frame,
                       const Image& ref, const PinholeCamera& cam,
                       const LossWeights& weights, const RenderOptions& opts,
                       const std::vector<std::vector<int>>* neighbors, ParamGrads& grads,
                       MatX* d_mean2d) {
  const WeightsEval eval = eval_skinning_weights(model, true);
  const ArticulatedGaussians prox = articulate(model, pose, latent_frame, eval);
  const Image render = render_splat(prox, cam, opts);

  // With every attribute-std weight off the neighborhoods are never
  // dereferenced; an empty list then skips the KNN build entirely.
  static const std::vector<std::vector<int>> kNoNeighbors;
  const bool any_std = weights.rot_std > 0.0 || weights.scale_std > 0.0 ||
                       weights.opacity_std > 0.0 || weights.sh_std > 0.0 ||
                       weights.delta_std > 0.0 || weights.latent_w_std > 0.0;
  RegContext ctx;
  ctx.weights = &eval;
  ctx.neighbors = neighbors ? neighbors : (any_std ? nullptr : &kNoNeighbors);
  const TotalLoss tl = total_loss(render, ref, model, weights, &grads, ctx);

  const RenderGrads rg = render_splat_backward(prox, cam, opts, tl.d_render, false);
  grads.sh += rg.d_sh;
  for (int i = 0; i < prox.count(); ++i) {
    const double eta = prox.opacities[i];
    grads.opacity_logits[i] += rg.d_opacities[i] * eta * (1.0 - eta);
  }
  articulate_backward(model, pose, latent_frame, eval, rg.d_means, rg.d_factors, grads);
  if (d_mean2d) *d_mean2d = rg.d_mean2d;

  LossRow row;
  row.l1 = tl.l1_term;
  row.ssim = tl.ssim_term;
  row.knn_std = tl.std_term;
  row.norm = tl.norm_term;
  row.total = tl.value;
  return row;
}

VecX pose_param_grads(const VecX& pose_params, const ParamGrads& grads) {
  const int n = static_cast<int>(grads.d_joint_rot.size());
  if (pose_params.size() != 3 + 3 * n)
    throw std::invalid_argument("pose parameter vector does not match joint count");
  VecX g(3 + 3 * n);
  g.head<3>() = grads.d_root;
  for (int k = 0; k < n; ++k)
    g.segment<3>(3 + 3 * k) =
        so3_exp_backward(pose_params.segment<3>(3 + 3 * k), grads.d_joint_rot[k]);
  return g;
}

void FitConfig::validate(int resolved_stop) const {
  weights.validate();
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  const double rates[] = {lr_means,      lr_rotations,    lr_log_scales,
                          lr_opacity,    lr_sh,           lr_grid_delta,
                          lr_grid_latent, lr_latent_table, lr_pose};
  for (double r : rates)
    if (!(r >= 0.0)) throw std::invalid_argument("learning rates must be non-negative");
  if (densify_interval < 1 || densify_start < 1)
    throw std::invalid_argument("densify interval and start must be positive");
  if (densify_stop > 0 && densify_stop < densify_start)
    throw std::invalid_argument("densify window is inverted");
  (void)resolved_stop;
  if (!(densify_grad > 0.0) || !(prune_opacity > 0.0))
    throw std::invalid_argument("densify thresholds must be positive");
  if (split_scale < 0.0 || !(split_factor > 1.0) || clone_nudge < 0.0)
    throw std::invalid_argument("split/clone parameters out of range");
  if (max_components < 0) throw std::invalid_argument("max_components must be >= 0");
  if (knn_refresh < 1 || checkpoint_interval < 1)
    throw std::invalid_argument("refresh and checkpoint intervals must be positive");
}

namespace {

std::string checkpoint_path(const std::string& dir, int iteration) {
  char name[48];
  std::snprintf(name, sizeof(name), "checkpoint_%06d.asplat", iteration);
  return dir + "/" + name;
}

}  // namespace

FitResult fit_samples(const std::vector<FrameSample>& frames, const KinematicTemplate& tpl,
                      const FitConfig& cfg, const AvatarModel* init) {
  if (frames.empty()) throw std::invalid_argument("fit needs at least one frame");
  int latent_rows = 0;
  for (const FrameSample& f : frames) {
    if (f.latent_row < 0) throw std::invalid_argument("negative latent row");
    latent_rows = std::max(latent_rows, f.latent_row + 1);
    if (f.image.width != f.cam.width || f.image.height != f.cam.height)
      throw std::invalid_argument("frame image does not match its camera size");
  }
  const int stop =
      cfg.densify_stop > 0 ? cfg.densify_stop : (cfg.iterations * 4) / 5;
  cfg.validate(stop);

  FitResult result;
  AvatarModel& model = result.model;
  if (init) {
    model = *init;
    if (model.latent_count() > 0 && model.latent.frame_count() < latent_rows)
      throw std::invalid_argument("initial model's latent table is too short");
  } else {
    ModelConfig mc = cfg.model;
    mc.latent_frames = latent_rows;
    model = init_from_template(tpl, mc);
  }
  if (model.skinning_mode == SkinningMode::kPerGaussian) {
    if (model.pg_delta.rows() != model.gaussians.count())
      model.pg_delta = MatX::Zero(model.gaussians.count(), model.bone_count());
    if (model.pg_latent.rows() != model.gaussians.count())
      model.pg_latent = MatX::Zero(model.gaussians.count(), model.latent_count());
  }

  const int joint_count = model.bone_count();
  const int f_count = static_cast<int>(frames.size());
  const int pose_dim = 3 + 3 * joint_count;
  MatX pose_params(f_count, pose_dim);
  for (int f = 0; f < f_count; ++f) {
    if (static_cast<int>(frames[f].pose.joint_rotations.size()) != joint_count)
      throw std::invalid_argument("frame pose joint count does not match the template");
    pose_params.row(f) = pose_to_params(frames[f].pose).transpose();
  }

  Vec3 lo, hi;
  model.tpl.sample_bounds(lo, hi);
  DensifyConfig dc;
  dc.grad_threshold = cfg.densify_grad;
  dc.prune_opacity = cfg.prune_opacity;
  dc.split_scale = cfg.split_scale > 0.0 ? cfg.split_scale : 0.01 * (hi - lo).norm();
  dc.split_factor = cfg.split_factor;
  dc.clone_nudge = cfg.clone_nudge;
  dc.max_components = cfg.max_components;

  RenderOptions opts;
  opts.background = cfg.background;
  opts.threads = cfg.threads;

  const LossWeights& w = cfg.weights;
  const bool any_std = w.rot_std > 0.0 || w.scale_std > 0.0 || w.opacity_std > 0.0 ||
                       w.sh_std > 0.0 || w.delta_std > 0.0 || w.latent_w_std > 0.0;
  std::vector<std::vector<int>> nb;
  auto refresh_nb = [&] {
    if (any_std) nb = knn_neighborhoods(model.gaussians.means, w.knn_k);
  };
  refresh_nb();

  AdamState adam;
  AdamSlot pose_slot;
  VecX pose_steps = VecX::Zero(f_count);
  DensifyStats stats;
  stats.reset(model.gaussians.count());

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(f_count);
  std::iota(order.begin(), order.end(), 0);
  int cursor = f_count;  // forces a shuffle before the first draw

  AvatarModel ck_model = model;
  MatX ck_poses = pose_params;
  int ck_iter = 0;

  auto finish_poses = [&](const MatX& rows) {
    result.poses.resize(f_count);
    for (int f = 0; f < f_count; ++f)
      result.poses[f] = pose_from_params(rows.row(f).transpose());
  };

  for (int it = 1; it <= cfg.iterations; ++it) {
    if (cursor == f_count) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const int f = order[cursor++];

    ParamGrads grads;
    grads.init_zero(model);
    MatX d_mean2d;
    const Pose pose = pose_from_params(pose_params.row(f).transpose());
    LossRow row = loss_and_grads(model, pose, frames[f].latent_row, frames[f].image,
                                 frames[f].cam, w, opts, any_std ? &nb : nullptr, grads,
                                 &d_mean2d);
    row.step = it;
    result.log.push_back(row);
    if (!std::isfinite(row.total)) {
      result.diverged = true;
      result.message = "non-finite loss at iteration " + std::to_string(it) +
                       "; returning checkpoint from iteration " + std::to_string(ck_iter);
      model = ck_model;
      pose_params = ck_poses;
      break;
    }
    stats.add(d_mean2d, grads.means, frames[f].cam.width, frames[f].cam.height);

    adam.step += 1;
    const long long t = adam.step;
    GaussianMixture& g = model.gaussians;
    const double b1 = adam.beta1, b2 = adam.beta2, eps = adam.eps;
    if (cfg.lr_means > 0.0) adam_update(adam.means, grads.means, cfg.lr_means, t, b1, b2, eps, g.means);
    if (cfg.lr_rotations > 0.0)
      adam_update(adam.rotations, grads.rotations, cfg.lr_rotations, t, b1, b2, eps, g.rotations);
    if (cfg.lr_log_scales > 0.0)
      adam_update(adam.log_scales, grads.log_scales, cfg.lr_log_scales, t, b1, b2, eps, g.log_scales);
    if (cfg.lr_opacity > 0.0)
      adam_update(adam.opacity_logits, grads.opacity_logits, cfg.lr_opacity, t, b1, b2, eps,
                  g.opacity_logits);
    if (cfg.lr_sh > 0.0) adam_update(adam.sh, grads.sh, cfg.lr_sh, t, b1, b2, eps, g.sh);
    if (model.skinning_mode == SkinningMode::kGrid) {
      if (cfg.lr_grid_delta > 0.0 && model.grid.delta.size() > 0)
        adam_update(adam.grid_delta, grads.grid_delta, cfg.lr_grid_delta, t, b1, b2, eps,
                    model.grid.delta);
      if (cfg.lr_grid_latent > 0.0 && model.grid.latent.size() > 0)
        adam_update(adam.grid_latent, grads.grid_latent, cfg.lr_grid_latent, t, b1, b2, eps,
                    model.grid.latent);
    } else {
      if (cfg.lr_grid_delta > 0.0 && model.pg_delta.size() > 0)
        adam_update(adam.pg_delta, grads.pg_delta, cfg.lr_grid_delta, t, b1, b2, eps,
                    model.pg_delta);
      if (cfg.lr_grid_latent > 0.0 && model.pg_latent.size() > 0)
        adam_update(adam.pg_latent, grads.pg_latent, cfg.lr_grid_latent, t, b1, b2, eps,
                    model.pg_latent);
    }
    if (cfg.lr_latent_table > 0.0 && model.latent.params.size() > 0)
      adam_update(adam.latent_table, grads.latent_table, cfg.lr_latent_table, t, b1, b2, eps,
                  model.latent.params);
    if (cfg.lr_pose > 0.0) {
      const VecX pg = pose_param_grads(pose_params.row(f).transpose(), grads);
      pose_steps[f] += 1.0;
      adam_row(pose_slot, f, pg, cfg.lr_pose, static_cast<long long>(pose_steps[f]), b1,
               b2, eps, pose_params);
    }

    if (it >= cfg.densify_start && it <= stop &&
        (it - cfg.densify_start) % cfg.densify_interval == 0) {
      try {
        densify_and_prune(model, stats, dc, &adam, rng);
      } catch (const std::runtime_error& e) {
        result.diverged = true;
        result.message = std::string(e.what()) + " at iteration " + std::to_string(it) +
                         "; returning checkpoint from iteration " + std::to_string(ck_iter);
        model = ck_model;
        pose_params = ck_poses;
        break;
      }
      stats.reset(model.gaussians.count());
      refresh_nb();
    } else if (any_std && it % cfg.knn_refresh == 0) {
      refresh_nb();
    }

    if (it % cfg.checkpoint_interval == 0 || it == cfg.iterations) {
      ck_model = model;
      ck_poses = pose_params;
      ck_iter = it;
      if (!cfg.checkpoint_dir.empty())
        save_model(model, checkpoint_path(cfg.checkpoint_dir, it));
    }
  }

  finish_poses(pose_params);
  if (!cfg.checkpoint_dir.empty())
    write_loss_csv(result.log, cfg.checkpoint_dir + "/loss.csv");
  return result;
}

Pose refine_pose(const AvatarModel& model, const Image& target, const PinholeCamera& cam,
                 const Pose& init, int steps, double lr, int latent_frame,
                 const LossWeights& weights, const RenderOptions& opts) {
  if (steps < 0) throw std::invalid_argument("refinement steps must be non-negative");
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  if (static_cast<int>(init.joint_rotations.size()) != model.bone_count())
    throw std::invalid_argument("pose joint count does not match the model template");
  if (target.width != cam.width || target.height != cam.height)
    throw std::invalid_argument("target image does not match the camera size");
  if (steps == 0) return init;

  // The canonical parameters never move, so the skinning evaluation (and with
  // it the weight field) is constant across refinement steps.
  const WeightsEval eval = eval_skinning_weights(model, true);
  VecX params = pose_to_params(init);
  AdamSlot slot;
  MatX param_rows = params.transpose();  // 1 x dim; reuses the row updater

  for (int t = 1; t <= steps; ++t) {
    const Pose pose = pose_from_params(param_rows.row(0).transpose());
    const ArticulatedGaussians prox = articulate(model, pose, latent_frame, eval);
    const Image render = render_splat(prox, cam, opts);

    Image d_l1, d_ssim(render.width, render.height);
    const double l1_term = l1_with_grad(render, target, d_l1);
    double loss = l1_term;
    if (weights.ssim > 0.0)
      loss += weights.ssim * (1.0 - ssim_with_grad(render, target, d_ssim));
    if (!std::isfinite(loss))
      throw std::runtime_error("pose refinement: non-finite loss at step " +
                               std::to_string(t));
    Image d_render(render.width, render.height);
    for (size_t i = 0; i < d_render.data.size(); ++i)
      d_render.data[i] = d_l1.data[i] - weights.ssim * d_ssim.data[i];

    const RenderGrads rg = render_splat_backward(prox, cam, opts, d_render, false);
    ParamGrads grads;
    grads.init_zero(model);
    articulate_backward(model, pose, latent_frame, eval, rg.d_means, rg.d_factors, grads);
    const VecX pg = pose_param_grads(param_rows.row(0).transpose(), grads);
    adam_row(slot, 0, pg, lr, t, 0.9, 0.999, 1e-15, param_rows);
  }
  return pose_from_params(param_rows.row(0).transpose());
}

void write_loss_csv(const std::vector<LossRow>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out.precision(17);
  out << "step,l1,ssim,std,norm,total\n";
  for (const LossRow& r : log)
    out << r.step << ',' << r.l1 << ',' << r.ssim << ',' << r.knn_std << ',' << r.norm
        << ',' << r.total << '\n';
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace asplat
