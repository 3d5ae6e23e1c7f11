// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "asplat/loss.hpp"
#include "asplat/render.hpp"

namespace asplat {

/// First/second moment buffers for one parameter array, shaped like it.
/// Vector parameters are stored as n x 1.
struct AdamSlot {
  MatX m, v;
};

/// Bias-corrected Adam over the model's parameter groups. One shared step
/// counter; densify_and_prune keeps the per-component slots row-aligned with
/// the mixture.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
  long long step = 0;  // completed updates
  AdamSlot means, rotations, log_scales, opacity_logits, sh;
  AdamSlot grid_delta, grid_latent, latent_table, pg_delta, pg_latent;
};

/// One bias-corrected update of param in place:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   param -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
/// Empty moments are zero-initialized to the parameter shape; any later shape
/// disagreement throws std::invalid_argument (densify/prune realigns moments
/// explicitly rather than silently resetting them).
void adam_update(AdamSlot& slot, const MatX& grad, double lr, long long step,
                 double beta1, double beta2, double eps, MatX& param);
void adam_update(AdamSlot& slot, const VecX& grad, double lr, long long step,
                 double beta1, double beta2, double eps, VecX& param);

/// Running statistics between densify calls. grad2d accumulates the
/// screen-space mean-gradient magnitude normalized by half the larger image
/// dimension; hits counts iterations with a nonzero footprint; world sums the
/// parameter-space mean gradients (direction for the clone nudge).
struct DensifyStats {
  VecX grad2d;
  VecX hits;
  MatX world;  // n x 3

  void reset(int n);
  void add(const MatX& d_mean2d, const MatX& d_means_world, int width, int height);
};

struct DensifyConfig {
  double grad_threshold = 2e-4;  // on the normalized mean screen gradient
  double prune_opacity = 0.005;  // activated-opacity floor
  double split_scale = 0.05;     // world units: clone below, split at/above
  double split_factor = 1.6;     // children scales = parent scale / this
  double clone_nudge = 0.01;     // fraction of the component size
  int max_components = 0;        // 0: unlimited
};

struct DensifyResult {
  int pruned = 0, cloned = 0, split = 0;
  int count = 0;  // resulting component count
};

/// Prunes components whose activated opacity falls below the floor, then
/// clones small / splits large components whose mean screen-space gradient
/// exceeds the threshold. Adam moment rows (when a state is given) follow the
/// surviving rows; new components start with zero moments. The rng drives the
/// split-child placement. Throws std::runtime_error when pruning would empty
/// the model.
DensifyResult densify_and_prune(AvatarModel& model, const DensifyStats& stats,
                                const DensifyConfig& cfg, AdamState* adam,
                                std::mt19937_64& rng);

/// One in-memory training view.
struct FrameSample {
  Image image;
  PinholeCamera cam;
  Pose pose;
  int latent_row = 0;  // latent-table row driving this frame
};

/// Per-iteration loss breakdown; also one row of the loss log / CSV.
struct LossRow {
  int step = 0;
  double l1 = 0.0, ssim = 0.0, knn_std = 0.0, norm = 0.0, total = 0.0;
};

struct FitConfig {
  int iterations = 3000;
  uint64_t seed = 0;
  int threads = 0;

  // Per-group learning rates; zero freezes a group.
  double lr_means = 5e-4;
  double lr_rotations = 2e-3;
  double lr_log_scales = 5e-3;
  double lr_opacity = 5e-2;
  double lr_sh = 5e-3;
  double lr_grid_delta = 5e-3;
  double lr_grid_latent = 5e-3;
  double lr_latent_table = 2e-3;
  double lr_pose = 5e-5;  // in-loop pose refinement; 0 freezes poses

  // Densification schedule and thresholds.
  int densify_interval = 300;
  int densify_start = 500;
  int densify_stop = 0;        // 0: 80% of iterations
  double densify_grad = 2e-4;  // normalized screen-gradient threshold
  double prune_opacity = 0.005;
  double split_scale = 0.0;  // 0: 1% of the template extent
  double split_factor = 1.6;
  double clone_nudge = 0.01;
  int max_components = 0;  // 0: unlimited

  LossWeights weights;
  int knn_refresh = 100;  // neighborhood recompute cadence (iterations)

  int checkpoint_interval = 500;
  std::string checkpoint_dir;  // when set, checkpoints and the loss CSV land here

  Vec3 background = Vec3::Zero();
  ModelConfig model;  // initialization spec; latent_frames is derived

  /// Throws std::invalid_argument on negative rates, non-positive intervals,
  /// non-positive thresholds, or an inverted densify window.
  void validate(int resolved_stop) const;
};

struct FitResult {
  AvatarModel model;
  std::vector<Pose> poses;   // refined per-sample poses
  std::vector<LossRow> log;  // one row per iteration
  bool diverged = false;
  std::string message;
};

/// One full forward/backward evaluation on a single frame: articulate, render,
/// image loss plus regularizers, with gradients accumulated into grads (which
/// must be init_zero'd by the caller). neighbors may be null when no attribute
/// std weight is active. d_mean2d (when non-null) receives the renderer's
/// screen-space mean gradients for densification bookkeeping.
LossRow loss_and_grads(const AvatarModel& model, const Pose& pose, int latent_frame,
                       const Image& ref, const PinholeCamera& cam,
                       const LossWeights& weights, const RenderOptions& opts,
                       const std::vector<std::vector<int>>* neighbors, ParamGrads& grads,
                       MatX* d_mean2d = nullptr);

/// Chains dL/d(local joint rotation matrices) and dL/d(root) onto the flat
/// axis-angle encoding of pose_to_params.
VecX pose_param_grads(const VecX& pose_params, const ParamGrads& grads);

/// Stochastic reconstruction loop: visits frames in seeded random permutation
/// epochs, one frame per iteration, and Adam-updates every parameter group
/// (and, with lr_pose > 0, the per-frame poses). Densifies and prunes on the
/// configured schedule. A non-finite loss aborts with the last checkpoint.
/// Deterministic for a fixed seed and thread count.
FitResult fit_samples(const std::vector<FrameSample>& frames, const KinematicTemplate& tpl,
                      const FitConfig& cfg, const AvatarModel* init = nullptr);

/// Test-time pose refinement: Adam on the image loss (L1 + weights.ssim
/// weighted SSIM) w.r.t. the pose alone; the model is frozen. Throws
/// std::runtime_error on a non-finite loss.
Pose refine_pose(const AvatarModel& model, const Image& target, const PinholeCamera& cam,
                 const Pose& init, int steps, double lr,
                 int latent_frame = kIdentityLatents, const LossWeights& weights = {},
                 const RenderOptions& opts = {});

/// Writes the loss log as CSV with header step,l1,ssim,std,norm,total.
void write_loss_csv(const std::vector<LossRow>& log, const std::string& path);

}  // namespace asplat
