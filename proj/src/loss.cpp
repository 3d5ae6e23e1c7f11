// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/loss.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

#include "asplat/knn.hpp"
#include "asplat/threading.hpp"

namespace asplat {

namespace {

constexpr int kWin = 11;
constexpr double kWinSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;
constexpr double kStdEps = 1e-12;  // spread below this carries no gradient

const double* window2d() {
  static const std::array<double, kWin * kWin> w = [] {
    std::array<double, kWin> k1;
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
      const double t = i - (kWin - 1) / 2.0;
      k1[i] = std::exp(-t * t / (2.0 * kWinSigma * kWinSigma));
      sum += k1[i];
    }
    for (double& v : k1) v /= sum;
    std::array<double, kWin * kWin> w2;
    for (int i = 0; i < kWin; ++i)
      for (int j = 0; j < kWin; ++j) w2[i * kWin + j] = k1[i] * k1[j];
    return w2;
  }();
  return w.data();
}

void check_shapes(const Image& a, const Image& b, const char* who) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument(std::string(who) + ": image shapes differ");
}

// Per-window SSIM statistics and the partials needed by the backward pass.
struct SsimMaps {
  MatX coef_mx, coef_ex2, coef_exy;  // per output location, one channel
};

// Runs the windowed pass for one channel. Returns the sum of the SSIM map;
// when maps is non-null also stores the backward coefficients (scaled by the
// caller's per-window weight `gw`).
double ssim_channel(const Image& img, const Image& ref, int c, SsimMaps* maps, double gw,
                    int threads) {
  const int oh = img.height - kWin + 1;
  const int ow = img.width - kWin + 1;
  const double* w2 = window2d();
  if (maps) {
    maps->coef_mx = MatX::Zero(oh, ow);
    maps->coef_ex2 = MatX::Zero(oh, ow);
    maps->coef_exy = MatX::Zero(oh, ow);
  }
  std::vector<double> row_sums(oh, 0.0);
  parallel_for(
      oh,
      [&](int64_t begin, int64_t end) {
        for (int64_t oy = begin; oy < end; ++oy) {
          double rs = 0.0;
          for (int ox = 0; ox < ow; ++ox) {
            double mx = 0, my = 0, ex2 = 0, ey2 = 0, exy = 0;
            for (int dy = 0; dy < kWin; ++dy)
              for (int dx = 0; dx < kWin; ++dx) {
                const double wv = w2[dy * kWin + dx];
                const double xv = img.at(ox + dx, static_cast<int>(oy) + dy, c);
                const double yv = ref.at(ox + dx, static_cast<int>(oy) + dy, c);
                mx += wv * xv;
                my += wv * yv;
                ex2 += wv * xv * xv;
                ey2 += wv * yv * yv;
                exy += wv * xv * yv;
              }
            const double sx = ex2 - mx * mx, sy = ey2 - my * my, sxy = exy - mx * my;
            const double a1 = 2.0 * mx * my + kSsimC1, a2 = 2.0 * sxy + kSsimC2;
            const double b1 = mx * mx + my * my + kSsimC1, b2 = sx + sy + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            rs += s;
            if (maps) {
              const double da1 = gw * a2 / (b1 * b2);
              const double da2 = gw * a1 / (b1 * b2);
              const double db1 = -gw * s / b1;
              const double db2 = -gw * s / b2;
              maps->coef_mx(oy, ox) =
                  da1 * 2.0 * my + db1 * 2.0 * mx - da2 * 2.0 * my - db2 * 2.0 * mx;
              maps->coef_ex2(oy, ox) = db2;
              maps->coef_exy(oy, ox) = 2.0 * da2;
            }
          }
          row_sums[oy] = rs;
        }
      },
      threads);
  double total = 0.0;
  for (double v : row_sums) total += v;  // ordered reduce: thread-count invariant
  return total;
}

// Adjoint of the window gathers: routes the per-window coefficients back to
// the input pixels of one channel.
void ssim_scatter(const Image& img, const Image& ref, int c, const SsimMaps& maps, Image& d_img,
                  int threads) {
  const int oh = img.height - kWin + 1;
  const int ow = img.width - kWin + 1;
  const double* w2 = window2d();
  parallel_for(
      img.height,
      [&](int64_t begin, int64_t end) {
        for (int64_t y = begin; y < end; ++y) {
          const int oy0 = std::max(0, static_cast<int>(y) - kWin + 1);
          const int oy1 = std::min(oh - 1, static_cast<int>(y));
          for (int x = 0; x < img.width; ++x) {
            const int ox0 = std::max(0, x - kWin + 1);
            const int ox1 = std::min(ow - 1, x);
            const double xv = img.at(x, static_cast<int>(y), c);
            const double yv = ref.at(x, static_cast<int>(y), c);
            double acc = 0.0;
            for (int oy = oy0; oy <= oy1; ++oy)
              for (int ox = ox0; ox <= ox1; ++ox) {
                const double wv = w2[(y - oy) * kWin + (x - ox)];
                acc += wv * (maps.coef_mx(oy, ox) + 2.0 * xv * maps.coef_ex2(oy, ox) +
                             yv * maps.coef_exy(oy, ox));
              }
            d_img.at(x, static_cast<int>(y), c) += acc;
          }
        }
      },
      threads);
}

double ssim_impl(const Image& img, const Image& ref, Image* d_img) {
  check_shapes(img, ref, "ssim");
  if (img.width < kWin || img.height < kWin)
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  const int oh = img.height - kWin + 1;
  const int ow = img.width - kWin + 1;
  const double gw = 1.0 / (static_cast<double>(oh) * ow * 3);
  if (d_img) *d_img = Image(img.width, img.height);
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    SsimMaps maps;
    total += ssim_channel(img, ref, c, d_img ? &maps : nullptr, gw, 0);
    if (d_img) ssim_scatter(img, ref, c, maps, *d_img, 0);
  }
  return total * gw;
}

// Population standard deviation of each column of `attr` over every
// neighborhood, averaged over dimensions and components and scaled by
// lambda. Gradients w.r.t. the attribute entries accumulate into d_attr.
double std_block(double lambda, const Eigen::Ref<const MatX>& attr,
                 const std::vector<std::vector<int>>& nb, MatX* d_attr) {
  if (lambda <= 0.0) return 0.0;
  const int n = static_cast<int>(nb.size());
  const int dims = static_cast<int>(attr.cols());
  const double norm = lambda / (static_cast<double>(n) * dims);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& ids = nb[i];
    const double inv_k = 1.0 / ids.size();
    for (int d = 0; d < dims; ++d) {
      double m = 0.0;
      for (int j : ids) m += attr(j, d);
      m *= inv_k;
      double var = 0.0;
      for (int j : ids) {
        const double e = attr(j, d) - m;
        var += e * e;
      }
      var *= inv_k;
      const double sd = std::sqrt(var);
      acc += sd;
      if (d_attr && sd > kStdEps) {
        const double coef = norm * inv_k / sd;
        for (int j : ids) (*d_attr)(j, d) += coef * (attr(j, d) - m);
      }
    }
  }
  return norm * acc;
}

}  // namespace

void LossWeights::validate() const {
  const double all[] = {ssim,      rot_std,     scale_std,     opacity_std, sh_std,
                        delta_std, latent_w_std, delta_norm,   latent_w_norm, scale_norm};
  for (double v : all)
    if (!(v >= 0.0)) throw std::invalid_argument("LossWeights: negative weight");
  if (knn_k < 2) throw std::invalid_argument("LossWeights: knn_k must be at least 2");
}

double l1(const Image& img, const Image& ref) {
  check_shapes(img, ref, "l1");
  double acc = 0.0;
  for (size_t i = 0; i < img.data.size(); ++i) acc += std::abs(img.data[i] - ref.data[i]);
  return acc / img.data.size();
}

double l1_with_grad(const Image& img, const Image& ref, Image& d_img) {
  check_shapes(img, ref, "l1");
  d_img = Image(img.width, img.height);
  const double inv = 1.0 / img.data.size();
  double acc = 0.0;
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double d = img.data[i] - ref.data[i];
    acc += std::abs(d);
    d_img.data[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
  }
  return acc * inv;
}

double ssim(const Image& img, const Image& ref) { return ssim_impl(img, ref, nullptr); }

double ssim_with_grad(const Image& img, const Image& ref, Image& d_img) {
  return ssim_impl(img, ref, &d_img);
}

double psnr(const Image& img, const Image& ref) {
  check_shapes(img, ref, "psnr");
  double acc = 0.0;
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double d = img.data[i] - ref.data[i];
    acc += d * d;
  }
  const double mse = acc / img.data.size();
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

std::vector<std::vector<int>> knn_neighborhoods(const MatX& means, int k) {
  const int n = static_cast<int>(means.rows());
  std::vector<Vec3> pts(n);
  for (int i = 0; i < n; ++i) pts[i] = means.row(i).transpose();
  KdTree3 tree(std::move(pts));
  std::vector<std::vector<int>> nb(n);
  parallel_for(n, [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i)
      tree.knn(means.row(i).transpose(), k, nb[i]);
  });
  return nb;
}

double knn_std_reg(const AvatarModel& model, const LossWeights& weights, ParamGrads* grads,
                   const RegContext& ctx) {
  weights.validate();
  const GaussianMixture& mix = model.gaussians;
  const int n = mix.count();
  if (n < weights.knn_k)
    throw std::logic_error("knn_std_reg: fewer components than knn_k");

  std::optional<std::vector<std::vector<int>>> nb_local;
  if (!ctx.neighbors) nb_local.emplace(knn_neighborhoods(mix.means, weights.knn_k));
  const auto& nb = ctx.neighbors ? *ctx.neighbors : *nb_local;

  const bool need_weights = weights.delta_std > 0.0 || weights.latent_w_std > 0.0;
  std::optional<WeightsEval> eval_local;
  if (need_weights && !ctx.weights)
    eval_local.emplace(eval_skinning_weights(model, grads != nullptr));
  const WeightsEval* eval = ctx.weights ? ctx.weights : (eval_local ? &*eval_local : nullptr);
  if (need_weights && grads && eval->prior_grads.empty())
    throw std::invalid_argument("knn_std_reg: shared WeightsEval lacks gradient context");

  double total = 0.0;

  // Activated scales and opacities.
  if (weights.scale_std > 0.0) {
    MatX s(n, 3), ds;
    for (int i = 0; i < n; ++i) s.row(i) = mix.scale(i).transpose();
    if (grads) ds = MatX::Zero(n, 3);
    total += std_block(weights.scale_std, s, nb, grads ? &ds : nullptr);
    if (grads)
      for (int i = 0; i < n; ++i)
        for (int d = 0; d < 3; ++d)
          if (std::exp(mix.log_scales(i, d)) > kScaleFloor)
            grads->log_scales(i, d) += ds(i, d) * s(i, d);
  }
  if (weights.opacity_std > 0.0) {
    MatX h(n, 1), dh;
    for (int i = 0; i < n; ++i) h(i, 0) = mix.opacity(i);
    if (grads) dh = MatX::Zero(n, 1);
    total += std_block(weights.opacity_std, h, nb, grads ? &dh : nullptr);
    if (grads)
      for (int i = 0; i < n; ++i)
        grads->opacity_logits[i] += dh(i, 0) * h(i, 0) * (1.0 - h(i, 0));
  }
  if (weights.sh_std > 0.0) {
    MatX dsh;
    if (grads) dsh = MatX::Zero(n, mix.sh.cols());
    total += std_block(weights.sh_std, mix.sh, nb, grads ? &dsh : nullptr);
    if (grads) grads->sh += dsh;
  }
  if (need_weights) {
    MatX d_w_hat, d_w_lat;
    if (grads) {
      d_w_hat = MatX::Zero(n, eval->w_hat.cols());
      d_w_lat = MatX::Zero(n, eval->w_lat.cols());
    }
    total += std_block(weights.delta_std, eval->w_hat, nb, grads ? &d_w_hat : nullptr);
    if (eval->w_lat.cols() > 0)
      total += std_block(weights.latent_w_std, eval->w_lat, nb, grads ? &d_w_lat : nullptr);
    if (grads) {
      for (int i = 0; i < n; ++i) {
        const VecX dh = d_w_hat.row(i).transpose();
        const VecX dl = d_w_lat.row(i).transpose();
        Vec3 d_mu = Vec3::Zero();
        scatter_weight_grads(model, *eval, i, &dh, nullptr, &dl, grads->grid_delta,
                             grads->grid_latent, &grads->pg_delta, &grads->pg_latent, &d_mu);
        grads->means.row(i) += d_mu.transpose();
      }
    }
  }

  // Rotations need per-neighborhood sign alignment, so they bypass std_block.
  if (weights.rot_std > 0.0) {
    MatX nq(n, 4);
    VecX qlen(n);
    for (int i = 0; i < n; ++i) {
      qlen[i] = mix.rotations.row(i).norm();
      if (qlen[i] < 1e-12) throw std::invalid_argument("knn_std_reg: zero quaternion");
      nq.row(i) = mix.rotations.row(i) / qlen[i];
    }
    MatX dnq = grads ? MatX::Zero(n, 4) : MatX();
    const double norm = weights.rot_std / (4.0 * n);
    double acc = 0.0;
    std::vector<double> sign;
    for (int i = 0; i < n; ++i) {
      const auto& ids = nb[i];
      const double inv_k = 1.0 / ids.size();
      sign.resize(ids.size());
      for (size_t t = 0; t < ids.size(); ++t)
        sign[t] = nq.row(ids[t]).dot(nq.row(i)) < 0.0 ? -1.0 : 1.0;
      for (int d = 0; d < 4; ++d) {
        double m = 0.0;
        for (size_t t = 0; t < ids.size(); ++t) m += sign[t] * nq(ids[t], d);
        m *= inv_k;
        double var = 0.0;
        for (size_t t = 0; t < ids.size(); ++t) {
          const double e = sign[t] * nq(ids[t], d) - m;
          var += e * e;
        }
        var *= inv_k;
        const double sd = std::sqrt(var);
        acc += sd;
        if (grads && sd > kStdEps) {
          const double coef = norm * inv_k / sd;
          for (size_t t = 0; t < ids.size(); ++t)
            dnq(ids[t], d) += coef * sign[t] * (sign[t] * nq(ids[t], d) - m);
        }
      }
    }
    total += norm * acc;
    if (grads)
      for (int i = 0; i < n; ++i) {
        const Eigen::Vector4d u = nq.row(i).transpose();
        const Eigen::Vector4d g = dnq.row(i).transpose();
        grads->rotations.row(i) += ((g - u * u.dot(g)) / qlen[i]).transpose();
      }
  }

  return total;
}

double norm_reg(const AvatarModel& model, const LossWeights& weights, ParamGrads* grads,
                const RegContext& ctx) {
  weights.validate();
  const GaussianMixture& mix = model.gaussians;
  const int n = mix.count();
  if (n == 0) return 0.0;

  const bool need_weights = weights.delta_norm > 0.0 || weights.latent_w_norm > 0.0;
  std::optional<WeightsEval> eval_local;
  if (need_weights && !ctx.weights)
    eval_local.emplace(eval_skinning_weights(model, grads != nullptr));
  const WeightsEval* eval = ctx.weights ? ctx.weights : (eval_local ? &*eval_local : nullptr);

  double total = 0.0;
  MatX d_delta, d_lat;
  if (grads && need_weights) {
    d_delta = MatX::Zero(n, eval->delta_only.cols());
    d_lat = MatX::Zero(n, eval->w_lat.cols());
  }
  for (int i = 0; i < n; ++i) {
    if (need_weights) {
      const double nd = eval->delta_only.row(i).norm();
      const double nl = eval->w_lat.row(i).norm();
      total += weights.delta_norm * nd + weights.latent_w_norm * nl;
      if (grads) {
        if (nd > kStdEps)
          d_delta.row(i) = (weights.delta_norm / n / nd) * eval->delta_only.row(i);
        if (nl > kStdEps) d_lat.row(i) = (weights.latent_w_norm / n / nl) * eval->w_lat.row(i);
      }
    }
    if (weights.scale_norm > 0.0) {
      const Vec3 s = mix.scale(i);
      int dmax = 0;
      const double smax = s.maxCoeff(&dmax);
      total += weights.scale_norm * smax;
      if (grads && std::exp(mix.log_scales(i, dmax)) > kScaleFloor)
        grads->log_scales(i, dmax) += (weights.scale_norm / n) * smax;
    }
  }
  if (grads && need_weights) {
    for (int i = 0; i < n; ++i) {
      const VecX dd = d_delta.row(i).transpose();
      const VecX dl = d_lat.row(i).transpose();
      Vec3 d_mu = Vec3::Zero();
      scatter_weight_grads(model, *eval, i, nullptr, &dd, &dl, grads->grid_delta,
                           grads->grid_latent, &grads->pg_delta, &grads->pg_latent, &d_mu);
      grads->means.row(i) += d_mu.transpose();
    }
  }
  return total / n;
}

TotalLoss total_loss(const Image& render, const Image& ref, const AvatarModel& model,
                     const LossWeights& weights, ParamGrads* reg_grads, const RegContext& ctx) {
  weights.validate();
  TotalLoss out;
  Image d_l1, d_ssim;
  out.l1_term = l1_with_grad(render, ref, d_l1);
  if (weights.ssim > 0.0) {
    out.ssim_term = weights.ssim * (1.0 - ssim_with_grad(render, ref, d_ssim));
  } else {
    d_ssim = Image(render.width, render.height);
  }
  out.std_term = knn_std_reg(model, weights, reg_grads, ctx);
  out.norm_term = norm_reg(model, weights, reg_grads, ctx);
  out.value = out.l1_term + out.ssim_term + out.std_term + out.norm_term;
  out.d_render = Image(render.width, render.height);
  for (size_t i = 0; i < out.d_render.data.size(); ++i)
    out.d_render.data[i] = d_l1.data[i] - weights.ssim * d_ssim.data[i];
  return out;
}

}  // namespace asplat
