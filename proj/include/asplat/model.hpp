// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <vector>

#include "asplat/skeleton.hpp"

namespace asplat {

/// Activated scales never drop below this; keeps covariances invertible.
constexpr double kScaleFloor = 1e-6;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Canonical-space Gaussian component soup. Parameters are stored raw
/// (unnormalized quaternions, log scales, opacity logits); activations happen
/// at use sites. SH layout per row: basis-major, channels adjacent
/// (coefficient b of channel c sits at column 3*b + c).
struct GaussianMixture {
  int sh_degree = 1;
  MatX means;           // N x 3
  MatX rotations;       // N x 4, (w,x,y,z)
  MatX log_scales;      // N x 3
  VecX opacity_logits;  // N
  MatX sh;              // N x 3*(sh_degree+1)^2

  int count() const { return static_cast<int>(means.rows()); }
  Vec3 scale(int i) const {
    return log_scales.row(i).array().exp().max(kScaleFloor).matrix().transpose();
  }
  double opacity(int i) const { return sigmoid(opacity_logits[i]); }
  Quaternion rotation(int i) const {
    return {rotations(i, 0), rotations(i, 1), rotations(i, 2), rotations(i, 3)};
  }
};

/// Trilinear voxel field over an axis-aligned box holding per-node skinning
/// corrections: n_b delta channels for the template bones and n_l channels of
/// latent bone weights. Node layout is ((ix*ny + iy)*nz + iz)*channels + c.
struct SkinningGrid {
  Eigen::Vector3i res = {2, 2, 2};  // node counts per axis, each >= 2
  Vec3 lo = Vec3::Zero(), hi = Vec3::Ones();
  int n_b = 0, n_l = 0;
  VecX delta;   // res.prod() * n_b
  VecX latent;  // res.prod() * n_l

  int node_count() const { return res.x() * res.y() * res.z(); }
  void validate() const;
};

/// Interpolation stencil at a query point: 8 node ids, their trilinear weights
/// and the weight gradients w.r.t. the query (zero in clamped dimensions).
struct TriCell {
  int node[8];
  double w[8];
  Vec3 dw[8];
};

TriCell grid_cell(const SkinningGrid& grid, const Vec3& x);

/// Per-frame latent bone transforms, parameterized as axis-angle + translation
/// (6 numbers per bone per frame).
struct LatentBoneTable {
  int n_l = 0;
  MatX params;  // frames x (n_l * 6): [w0 t0 w1 t1 ...]

  int frame_count() const { return static_cast<int>(params.rows()); }
  RigidTransform decode(int frame, int q) const;
};

enum class SkinningMode {
  kGrid,         // corrections read from the voxel field (default)
  kPerGaussian,  // corrections stored per component (ablation flag)
};

/// The full animatable subject: template + canonical Gaussians + learned
/// skinning corrections + latent bones.
struct AvatarModel {
  KinematicTemplate tpl;
  GaussianMixture gaussians;
  SkinningGrid grid;
  LatentBoneTable latent;
  SkinningMode skinning_mode = SkinningMode::kGrid;
  MatX pg_delta;   // N x n_b, only used in kPerGaussian mode
  MatX pg_latent;  // N x n_l

  int bone_count() const { return tpl.joint_count(); }
  int latent_count() const { return latent.n_l; }
};

struct ModelConfig {
  int count = 5000;
  int sh_degree = 1;
  int n_l = 8;
  int latent_frames = 0;  // rows of the latent table (dataset frame count)
  Eigen::Vector3i grid_res = {32, 32, 32};
  double grid_inflation = 0.2;  // bbox inflation fraction per side
  double init_opacity = 0.5;
  uint64_t seed = 0;
};

/// Seeds component means from the template surface samples, sets isotropic
/// scales to half the mean distance to each mean's 3 nearest neighbors,
/// mid-gray DC color, zero grids and identity latent table.
/// Throws std::invalid_argument for count < 1 or bad grid shape.
AvatarModel init_from_template(const KinematicTemplate& tpl, const ModelConfig& config);

/// Prior + interpolated corrections at x: (W_hat (n_b), W_tilde (n_l)).
/// Grid mode only; throws std::logic_error in per-Gaussian mode.
std::pair<VecX, VecX> skinning_weights_at(const AvatarModel& model, const Vec3& x);

/// Skinning weights for every component, with optional derivative context for
/// the backward passes (interpolation stencils and prior query Jacobians).
struct WeightsEval {
  MatX w_hat;       // N x n_b (prior + delta)
  MatX delta_only;  // N x n_b (correction term alone)
  MatX w_lat;       // N x n_l
  std::vector<TriCell> cells;     // with_grads only (grid mode)
  std::vector<MatX> prior_grads;  // with_grads only, each n_b x 3
};

WeightsEval eval_skinning_weights(const AvatarModel& model, bool with_grads);

/// Routes gradients w.r.t. component i's weights back onto the parameters:
/// grid nodes (or per-Gaussian rows) and the mean position. d_mu may be null
/// when the position path is not needed.
void scatter_weight_grads(const AvatarModel& model, const WeightsEval& eval, int i,
                          const VecX* d_w_hat, const VecX* d_delta_only,
                          const VecX* d_w_lat, VecX& d_grid_delta, VecX& d_grid_latent,
                          MatX* d_pg_delta, MatX* d_pg_latent, Vec3* d_mu);

/// Per-component articulation transforms A_i = sum_k What_ik B_k +
/// sum_q Wtilde_iq Blat_q. frame indexes the latent table; pass
/// kIdentityLatents to blend identity latent transforms instead (novel poses).
constexpr int kIdentityLatents = -1;
std::vector<Affine> articulation_transforms(const AvatarModel& model, const Pose& pose,
                                            int frame);

/// Renderer-facing articulated snapshot of the mixture.
struct ArticulatedGaussians {
  int sh_degree = 1;
  MatX means;                    // N x 3 (articulated)
  std::vector<Mat3> cov_factors; // F with Sigma = F F^T
  VecX opacities;                // activated
  std::vector<Mat3> sh_rotations;// orthonormal frame for SH lookup
  MatX sh;                       // N x 3*basis

  int count() const { return static_cast<int>(means.rows()); }
};

ArticulatedGaussians articulate(const AvatarModel& model, const Pose& pose, int frame);
ArticulatedGaussians articulate(const AvatarModel& model, const Pose& pose, int frame,
                                const WeightsEval& weights);

/// Canonical (identity articulation) snapshot of a bare mixture.
ArticulatedGaussians canonical_proxy(const GaussianMixture& mixture);

/// Parameter-space gradients, shaped like the model parameters.
struct ParamGrads {
  MatX means, rotations, log_scales, sh;
  VecX opacity_logits;
  VecX grid_delta, grid_latent;
  MatX latent_table;               // frames x (n_l*6)
  std::vector<Mat3> d_joint_rot;   // dL/d(local joint rotation matrix)
  Vec3 d_root = Vec3::Zero();
  MatX pg_delta, pg_latent;

  void init_zero(const AvatarModel& model);
  void accumulate(const ParamGrads& other);
};

/// Adjoint of articulate() for the mean / covariance-factor outputs. The SH
/// lookup frame is treated as constant (its gradient is not part of the
/// renderer contract). d_means/d_factors are dL/d(proxy.means),
/// dL/d(proxy.cov_factors). Results are accumulated into grads.
void articulate_backward(const AvatarModel& model, const Pose& pose, int frame,
                         const WeightsEval& weights, const MatX& d_means,
                         const std::vector<Mat3>& d_factors, ParamGrads& grads);

/// Mixture density sigma(x) = sum_i eta_i exp(-0.5 (x-mu)^T Sigma_i^{-1} (x-mu)).
double eval_density(const ArticulatedGaussians& g, const Vec3& x);

/// Emission at x toward view direction d: sum_i sigma_i(x) * max(0, sh_i(R_i^T d)).
Vec3 eval_color(const ArticulatedGaussians& g, const Vec3& x, const Vec3& dir);

/// Per-component color toward dir (SH evaluation with per-channel floor at 0).
Vec3 component_color(const ArticulatedGaussians& g, int i, const Vec3& dir);

}  // namespace asplat
