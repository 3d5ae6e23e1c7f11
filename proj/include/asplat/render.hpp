// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "asplat/camera.hpp"
#include "asplat/image.hpp"
#include "asplat/model.hpp"

namespace asplat {

// Rasterization constants. These are contract values: the tests pin them, and
// the forward/backward passes and the volume oracle all share them.
constexpr int kTileSize = 16;
constexpr double kAlphaMin = 1.0 / 255.0;   // contributions below this are skipped
constexpr double kAlphaClamp = 0.99;         // per-splat alpha ceiling
constexpr double kTransmittanceStop = 1e-4;  // pixel saturation cutoff
constexpr double kCovDilation = 0.3;         // px^2 added to both 2D variances
constexpr double kRadiusSigmas = 3.7;        // conservative screen bbox radius
constexpr double kDefaultNearClip = 0.01;

/// Wall-clock seconds spent in each splat pipeline stage. Accumulates across
/// renders so a benchmark can sum over repeats; the caller resets it.
struct RenderStageTimes {
  double project = 0.0;    // projection + per-component color evaluation
  double sort = 0.0;       // tile binning + per-tile depth sort
  double composite = 0.0;  // per-pixel alpha compositing
};

struct RenderOptions {
  Vec3 background = Vec3::Zero();
  double near_clip = kDefaultNearClip;
  int threads = 0;  // 0: process default
  RenderStageTimes* stage_times = nullptr;  // optional instrumentation
};

/// Screen-space footprint of one component: perspective-projected mean plus
/// the linearized (EWA) projection of its covariance, dilated by kCovDilation.
struct ProjectedGaussian {
  bool visible = false;
  Vec2 mean = Vec2::Zero();  // pixel coordinates
  double depth = 0.0;        // camera-space z
  Mat2 cov = Mat2::Zero();   // dilated 2D covariance
  Mat2 conic = Mat2::Zero(); // inverse of cov
  double radius = 0.0;       // kRadiusSigmas * sqrt(largest eigenvalue)
};

ProjectedGaussian project_gaussian(const Vec3& mean_world, const Mat3& cov_factor,
                                   const PinholeCamera& cam,
                                   double near_clip = kDefaultNearClip);

/// Per-component emitted colors: SH evaluated toward each component's mean
/// from the camera center, clamped at zero per channel. Shared by the splat
/// renderer and the volume oracle so both routes use the same emission model.
MatX per_component_colors(const ArticulatedGaussians& g, const Vec3& cam_center);

/// Tile-based alpha compositing front to back; components are depth sorted
/// per tile with index as the tie breaker. Deterministic: the output is
/// byte-identical for any thread count.
Image render_splat(const ArticulatedGaussians& g, const PinholeCamera& cam,
                   const RenderOptions& opts = {});

/// Gradients of a scalar image loss w.r.t. the articulated proxy (and
/// optionally the camera pose).
struct RenderGrads {
  MatX d_means;                 // N x 3, world space
  std::vector<Mat3> d_factors;  // dL/d(cov factor)
  VecX d_opacities;             // activated-opacity domain
  MatX d_sh;                    // N x 3*basis
  MatX d_mean2d;                // N x 2, accumulated screen-space mean gradient
  // Camera pose gradient, left perturbation: world_to_cam.rotation is
  // so3_exp(eps) * R and translation is t + dt; layout (eps, dt).
  Eigen::Matrix<double, 6, 1> d_camera = Eigen::Matrix<double, 6, 1>::Zero();
};

/// Adjoint of render_splat for upstream per-pixel gradients d_pixels (same
/// shape as the rendered image). Re-runs the per-pixel composition, so the
/// skip/saturation decisions match the forward pass exactly. Clamped alphas
/// and skipped contributions propagate zero gradient.
RenderGrads render_splat_backward(const ArticulatedGaussians& g, const PinholeCamera& cam,
                                  const RenderOptions& opts, const Image& d_pixels,
                                  bool with_camera = false);

/// Reference renderer: per-pixel numerical integration of the volume
/// rendering equation through the 3D mixture (midpoint rule over the union of
/// per-component support intervals). Independent of the splat path; used as
/// the agreement oracle. Components with singular factors carry no density.
Image render_volume_oracle(const ArticulatedGaussians& g, const PinholeCamera& cam,
                           const RenderOptions& opts = {}, int steps = 1024);

}  // namespace asplat
