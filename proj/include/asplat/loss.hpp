// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "asplat/image.hpp"
#include "asplat/model.hpp"

namespace asplat {

/// Weights of the training objective. The *_std family scales the penalty on
/// per-neighborhood spread of each component attribute; the *_norm family
/// scales magnitude penalties on the skinning corrections and scales.
struct LossWeights {
  double ssim = 0.2;

  double rot_std = 0.01;       // quaternion components, sign-aligned per neighborhood
  double scale_std = 0.01;     // activated scales
  double opacity_std = 0.01;   // activated opacities
  double sh_std = 0.01;        // raw SH coefficients
  double delta_std = 0.01;     // corrected bone weights at the component mean
  double latent_w_std = 0.01;  // latent bone weights at the component mean

  double delta_norm = 0.1;    // L2 of the weight correction alone
  double latent_w_norm = 0.1; // L2 of the latent weights
  double scale_norm = 1.0;    // largest activated scale

  int knn_k = 8;

  /// Throws std::invalid_argument when a weight is negative or knn_k < 2.
  void validate() const;
};

/// Mean absolute difference over pixels and channels; throws on shape
/// mismatch. The backward form writes the subgradient (sign / count, zero at
/// exact ties) into d_img.
double l1(const Image& img, const Image& ref);
double l1_with_grad(const Image& img, const Image& ref, Image& d_img);

/// Mean structural similarity: 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2, windows fully inside the image, per channel then
/// averaged. Throws std::invalid_argument when either side is smaller than
/// the window. The _with_grad form accumulates nothing; it overwrites d_img.
double ssim(const Image& img, const Image& ref);
double ssim_with_grad(const Image& img, const Image& ref, Image& d_img);

/// 10 log10(1 / MSE) decibels, capped at 100 when MSE < 1e-10.
double psnr(const Image& img, const Image& ref);

/// k nearest components of each component mean, self included first, then by
/// (distance, index).
std::vector<std::vector<int>> knn_neighborhoods(const MatX& means, int k);

/// Optional shared state for the regularizers; the fit loop caches both and
/// refreshes the neighborhoods on its own schedule.
struct RegContext {
  const WeightsEval* weights = nullptr;  // must carry gradients when grads are requested
  const std::vector<std::vector<int>>* neighbors = nullptr;
};

/// Neighborhood-spread penalty: for each component, the population standard
/// deviation of every attribute over its knn_k nearest neighbors (vector
/// attributes average their per-dimension deviations), weighted and summed,
/// then averaged over components. Neighborhood membership is held fixed by
/// the gradient. Throws std::logic_error with fewer than knn_k components.
double knn_std_reg(const AvatarModel& model, const LossWeights& weights,
                   ParamGrads* grads = nullptr, const RegContext& ctx = {});

/// Magnitude penalty: mean over components of the weighted L2 norms of the
/// skinning correction and latent weights at the mean, plus the weighted
/// largest activated scale.
double norm_reg(const AvatarModel& model, const LossWeights& weights,
                ParamGrads* grads = nullptr, const RegContext& ctx = {});

struct TotalLoss {
  double value = 0.0;
  double l1_term = 0.0;
  double ssim_term = 0.0;  // already scaled: ssim weight * (1 - SSIM)
  double std_term = 0.0;
  double norm_term = 0.0;
  Image d_render;  // gradient of `value` w.r.t. the rendered image
};

/// Full training objective: L1 + weighted (1 - SSIM) + both regularizers.
/// Parameter-space gradients of the regularizers accumulate into reg_grads
/// when non-null.
TotalLoss total_loss(const Image& render, const Image& ref, const AvatarModel& model,
                     const LossWeights& weights, ParamGrads* reg_grads = nullptr,
                     const RegContext& ctx = {});

}  // namespace asplat
