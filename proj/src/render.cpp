// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/render.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "asplat/so3.hpp"
#include "asplat/threading.hpp"

namespace asplat {

namespace {

// Density beyond this Mahalanobis-squared value is treated as zero by the
// volume oracle (exp(-20) is far below any image tolerance).
constexpr double kOracleQMax = 40.0;

struct TileLayout {
  int tiles_x = 0, tiles_y = 0;
  int count() const { return tiles_x * tiles_y; }
};

TileLayout tile_layout(const PinholeCamera& cam) {
  TileLayout t;
  t.tiles_x = (cam.width + kTileSize - 1) / kTileSize;
  t.tiles_y = (cam.height + kTileSize - 1) / kTileSize;
  return t;
}

// Everything the per-pixel passes need, identical for forward and backward.
struct FramePrep {
  std::vector<ProjectedGaussian> proj;
  MatX colors;  // N x 3
  TileLayout tiles;
  std::vector<std::vector<std::pair<double, int>>> lists;  // (depth, index), sorted
};

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FramePrep prepare_frame(const ArticulatedGaussians& g, const PinholeCamera& cam,
                        const RenderOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = g.count();
  FramePrep prep;
  prep.proj.resize(n);
  parallel_for(
      n,
      [&](int64_t begin, int64_t end) {
        for (int64_t i = begin; i < end; ++i)
          prep.proj[i] = project_gaussian(g.means.row(i).transpose(), g.cov_factors[i], cam,
                                          opts.near_clip);
      },
      opts.threads);
  prep.colors = per_component_colors(g, cam.center());
  const double project_s = seconds_since(t0);
  const auto t1 = std::chrono::steady_clock::now();
  prep.tiles = tile_layout(cam);
  prep.lists.resize(prep.tiles.count());

  for (int i = 0; i < n; ++i) {
    const ProjectedGaussian& p = prep.proj[i];
    // A splat whose peak alpha cannot reach the contribution threshold is
    // dropped up front; the backward pass then never sees it either.
    if (!p.visible || g.opacities[i] < kAlphaMin) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor((p.mean.x() - p.radius) / kTileSize)));
    const int y0 = std::max(0, static_cast<int>(std::floor((p.mean.y() - p.radius) / kTileSize)));
    const int x1 = std::min(prep.tiles.tiles_x - 1,
                            static_cast<int>(std::floor((p.mean.x() + p.radius) / kTileSize)));
    const int y1 = std::min(prep.tiles.tiles_y - 1,
                            static_cast<int>(std::floor((p.mean.y() + p.radius) / kTileSize)));
    for (int ty = y0; ty <= y1; ++ty)
      for (int tx = x0; tx <= x1; ++tx)
        prep.lists[ty * prep.tiles.tiles_x + tx].emplace_back(p.depth, i);
  }
  parallel_for(
      prep.tiles.count(),
      [&](int64_t begin, int64_t end) {
        for (int64_t t = begin; t < end; ++t) std::sort(prep.lists[t].begin(), prep.lists[t].end());
      },
      opts.threads);
  if (opts.stage_times) {
    opts.stage_times->project += project_s;
    opts.stage_times->sort += seconds_since(t1);
  }
  return prep;
}

inline double gaussian_weight(const Mat2& conic, const Vec2& d) {
  const double q =
      conic(0, 0) * d.x() * d.x() + 2.0 * conic(0, 1) * d.x() * d.y() + conic(1, 1) * d.y() * d.y();
  return std::exp(-0.5 * q);
}

// One composited splat at one pixel, recorded so the backward pass can walk
// the list in reverse.
struct Contribution {
  int index;
  double alpha;
  double gval;
  Vec2 offset;
};

}  // namespace

ProjectedGaussian project_gaussian(const Vec3& mean_world, const Mat3& cov_factor,
                                   const PinholeCamera& cam, double near_clip) {
  ProjectedGaussian out;
  const Vec3 p = cam.to_camera(mean_world);
  if (!(p.z() > near_clip)) return out;

  out.depth = p.z();
  out.mean = cam.project(p);

  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0.0, -cam.fx * p.x() * iz * iz,
      0.0, cam.fy * iz, -cam.fy * p.y() * iz * iz;
  const Mat3 wf = cam.world_to_cam.rotation * cov_factor;
  const Mat3 m = wf * wf.transpose();
  out.cov = j * m * j.transpose() + kCovDilation * Mat2::Identity();

  const double det = out.cov.determinant();
  out.conic << out.cov(1, 1), -out.cov(0, 1), -out.cov(0, 1), out.cov(0, 0);
  out.conic /= det;

  const double mid = 0.5 * (out.cov(0, 0) + out.cov(1, 1));
  const double lam_max =
      mid + std::sqrt(std::max(0.0, mid * mid - det));
  out.radius = kRadiusSigmas * std::sqrt(lam_max);

  // Reject splats whose footprint cannot touch the image.
  if (out.mean.x() + out.radius < 0.0 || out.mean.x() - out.radius > cam.width ||
      out.mean.y() + out.radius < 0.0 || out.mean.y() - out.radius > cam.height)
    return out;
  out.visible = true;
  return out;
}

MatX per_component_colors(const ArticulatedGaussians& g, const Vec3& cam_center) {
  const int n = g.count();
  const int basis_n = sh_basis_size(g.sh_degree);
  MatX colors(n, 3);
  for (int i = 0; i < n; ++i) {
    const Vec3 v = g.means.row(i).transpose() - cam_center;
    const double len = v.norm();
    const Vec3 dir = len > 0.0 ? Vec3(v / len) : Vec3(0, 0, 1);
    const Vec3 local = g.sh_rotations[i].transpose() * dir;
    double basis[kShMaxBasis];
    sh_eval(g.sh_degree, local, basis);
    for (int c = 0; c < 3; ++c) {
      double acc = 0.0;
      for (int b = 0; b < basis_n; ++b) acc += basis[b] * g.sh(i, 3 * b + c);
      colors(i, c) = std::max(0.0, acc);
    }
  }
  return colors;
}

Image render_splat(const ArticulatedGaussians& g, const PinholeCamera& cam,
                   const RenderOptions& opts) {
  const FramePrep prep = prepare_frame(g, cam, opts);
  Image img(cam.width, cam.height);

  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(
      prep.tiles.count(),
      [&](int64_t begin, int64_t end) {
        for (int64_t t = begin; t < end; ++t) {
          const auto& list = prep.lists[t];
          const int px0 = static_cast<int>(t % prep.tiles.tiles_x) * kTileSize;
          const int py0 = static_cast<int>(t / prep.tiles.tiles_x) * kTileSize;
          const int px1 = std::min(px0 + kTileSize, cam.width);
          const int py1 = std::min(py0 + kTileSize, cam.height);
          for (int y = py0; y < py1; ++y) {
            for (int x = px0; x < px1; ++x) {
              const Vec2 pix(x + 0.5, y + 0.5);
              double trans = 1.0;
              Vec3 rgb = Vec3::Zero();
              for (const auto& [depth, i] : list) {
                const ProjectedGaussian& p = prep.proj[i];
                const double gval = gaussian_weight(p.conic, pix - p.mean);
                const double alpha = std::min(kAlphaClamp, g.opacities[i] * gval);
                if (alpha < kAlphaMin) continue;
                rgb += (trans * alpha) * prep.colors.row(i).transpose();
                trans *= 1.0 - alpha;
                if (trans < kTransmittanceStop) break;
              }
              rgb += trans * opts.background;
              img.set_pixel(x, y, rgb);
            }
          }
        }
      },
      opts.threads);
  if (opts.stage_times) opts.stage_times->composite += seconds_since(t0);
  return img;
}

RenderGrads render_splat_backward(const ArticulatedGaussians& g, const PinholeCamera& cam,
                                  const RenderOptions& opts, const Image& d_pixels,
                                  bool with_camera) {
  const int n = g.count();
  const FramePrep prep = prepare_frame(g, cam, opts);

  // Per-worker accumulators over the pixel pass, merged in worker order so a
  // fixed thread count always produces the same sums. The tiles are split
  // into one contiguous range per worker index explicitly, which keeps the
  // accumulators collision free without assuming how parallel_for chunks.
  struct PixelAcc {
    MatX d_mean2d, d_color;
    std::vector<Mat2> d_conic;
    VecX d_opac;
  };
  const int64_t tile_count = prep.tiles.count();
  const int workers = static_cast<int>(std::min<int64_t>(
      opts.threads > 0 ? opts.threads : default_thread_count(), std::max<int64_t>(1, tile_count)));
  std::vector<PixelAcc> accs(workers);
  for (auto& a : accs) {
    a.d_mean2d = MatX::Zero(n, 2);
    a.d_color = MatX::Zero(n, 3);
    a.d_conic.assign(n, Mat2::Zero());
    a.d_opac = VecX::Zero(n);
  }

  parallel_for(
      workers,
      [&](int64_t w_begin, int64_t w_end) {
        for (int64_t w = w_begin; w < w_end; ++w) {
          PixelAcc& acc = accs[w];
          std::vector<Contribution> stack;
          stack.reserve(256);
          const int64_t t_begin = tile_count * w / workers;
          const int64_t t_end = tile_count * (w + 1) / workers;
          for (int64_t t = t_begin; t < t_end; ++t) {
            const auto& list = prep.lists[t];
            if (list.empty()) continue;
            const int px0 = static_cast<int>(t % prep.tiles.tiles_x) * kTileSize;
            const int py0 = static_cast<int>(t / prep.tiles.tiles_x) * kTileSize;
            const int px1 = std::min(px0 + kTileSize, cam.width);
            const int py1 = std::min(py0 + kTileSize, cam.height);
            for (int y = py0; y < py1; ++y) {
              for (int x = px0; x < px1; ++x) {
                const Vec3 dpix(d_pixels.at(x, y, 0), d_pixels.at(x, y, 1), d_pixels.at(x, y, 2));
                const Vec2 pix(x + 0.5, y + 0.5);

                // Forward walk, recording what composited.
                stack.clear();
                double trans = 1.0;
                for (const auto& [depth, i] : list) {
                  const ProjectedGaussian& p = prep.proj[i];
                  const Vec2 d = pix - p.mean;
                  const double gval = gaussian_weight(p.conic, d);
                  const double alpha = std::min(kAlphaClamp, g.opacities[i] * gval);
                  if (alpha < kAlphaMin) continue;
                  stack.push_back({i, alpha, gval, d});
                  trans *= 1.0 - alpha;
                  if (trans < kTransmittanceStop) break;
                }
                if (stack.empty()) continue;

                // Reverse walk: rebuild each contribution's incoming
                // transmittance and the composited suffix behind it.
                Vec3 suffix = trans * opts.background;
                double t_i = trans;
                for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
                  const Contribution& c = *it;
                  t_i /= 1.0 - c.alpha;
                  const Vec3 color = prep.colors.row(c.index).transpose();
                  double d_alpha = 0.0;
                  for (int ch = 0; ch < 3; ++ch)
                    d_alpha += dpix[ch] * (color[ch] * t_i - suffix[ch] / (1.0 - c.alpha));
                  acc.d_color.row(c.index) += (c.alpha * t_i) * dpix.transpose();

                  if (g.opacities[c.index] * c.gval < kAlphaClamp) {
                    acc.d_opac[c.index] += d_alpha * c.gval;
                    const double dg = d_alpha * g.opacities[c.index];
                    const ProjectedGaussian& p = prep.proj[c.index];
                    const Vec2 cd = p.conic * c.offset;
                    acc.d_mean2d.row(c.index) += (dg * c.gval) * cd.transpose();
                    acc.d_conic[c.index] +=
                        (-0.5 * dg * c.gval) * (c.offset * c.offset.transpose());
                  }
                  suffix += (c.alpha * t_i) * color;
                }
              }
            }
          }
        }
      },
      workers);

  RenderGrads grads;
  grads.d_means = MatX::Zero(n, 3);
  grads.d_factors.assign(n, Mat3::Zero());
  grads.d_opacities = VecX::Zero(n);
  grads.d_sh = MatX::Zero(n, g.sh.cols());
  grads.d_mean2d = MatX::Zero(n, 2);

  MatX d_color = MatX::Zero(n, 3);
  std::vector<Mat2> d_conic(n, Mat2::Zero());
  for (const auto& a : accs) {
    grads.d_mean2d += a.d_mean2d;
    grads.d_opacities += a.d_opac;
    d_color += a.d_color;
    for (int i = 0; i < n; ++i) d_conic[i] += a.d_conic[i];
  }

  // Pull the screen-space gradients back to world space, component by
  // component. Single threaded: this is O(n) small-matrix work.
  const Mat3 w_rot = cam.world_to_cam.rotation;
  const Vec3 cam_t = cam.world_to_cam.translation;
  const Vec3 center = cam.center();
  const int basis_n = sh_basis_size(g.sh_degree);
  Mat3 d_w_rot = Mat3::Zero();
  Vec3 d_w_t = Vec3::Zero();

  for (int i = 0; i < n; ++i) {
    const ProjectedGaussian& p = prep.proj[i];
    if (!p.visible || g.opacities[i] < kAlphaMin) continue;
    const Vec3 mu = g.means.row(i).transpose();
    const Vec3 pc = cam.to_camera(mu);
    const double iz = 1.0 / pc.z();

    Eigen::Matrix<double, 2, 3> j;
    j << cam.fx * iz, 0.0, -cam.fx * pc.x() * iz * iz,
        0.0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
    const Mat3 wf = w_rot * g.cov_factors[i];
    const Mat3 m = wf * wf.transpose();

    // conic = cov^{-1}: dL/dcov = -conic dL/dconic conic (all symmetric).
    const Mat2 d_cov = -p.conic * d_conic[i] * p.conic;
    const Mat3 d_m = j.transpose() * d_cov * j;
    const Eigen::Matrix<double, 2, 3> d_j = 2.0 * d_cov * j * m;
    grads.d_factors[i] += 2.0 * w_rot.transpose() * d_m * wf;

    // Screen mean and the Jacobian both depend on the camera-space point.
    const Vec2 d_m2d = grads.d_mean2d.row(i).transpose();
    Vec3 dp;
    dp.x() = d_m2d.x() * cam.fx * iz + d_j(0, 2) * (-cam.fx * iz * iz);
    dp.y() = d_m2d.y() * cam.fy * iz + d_j(1, 2) * (-cam.fy * iz * iz);
    dp.z() = -d_m2d.x() * cam.fx * pc.x() * iz * iz - d_m2d.y() * cam.fy * pc.y() * iz * iz +
             d_j(0, 0) * (-cam.fx * iz * iz) + d_j(1, 1) * (-cam.fy * iz * iz) +
             d_j(0, 2) * (2.0 * cam.fx * pc.x() * iz * iz * iz) +
             d_j(1, 2) * (2.0 * cam.fy * pc.y() * iz * iz * iz);
    grads.d_means.row(i) += (w_rot.transpose() * dp).transpose();

    // Emission: SH coefficients, and the view direction's pull on the mean.
    const Vec3 dcol = d_color.row(i).transpose();
    if (dcol.cwiseAbs().sum() > 0.0) {
      const Vec3 v = mu - center;
      const double len = v.norm();
      const Vec3 dir = len > 0.0 ? Vec3(v / len) : Vec3(0, 0, 1);
      const Vec3 local = g.sh_rotations[i].transpose() * dir;
      double basis[kShMaxBasis];
      Vec3 dbasis[kShMaxBasis];
      sh_eval_grad(g.sh_degree, local, basis, dbasis);

      Vec3 d_local = Vec3::Zero();
      for (int c = 0; c < 3; ++c) {
        double raw = 0.0;
        for (int b = 0; b < basis_n; ++b) raw += basis[b] * g.sh(i, 3 * b + c);
        if (raw <= 0.0) continue;  // clamped channel, no gradient
        for (int b = 0; b < basis_n; ++b) {
          grads.d_sh(i, 3 * b + c) += dcol[c] * basis[b];
          d_local += (dcol[c] * g.sh(i, 3 * b + c)) * dbasis[b];
        }
      }
      if (len > 0.0) {
        const Vec3 d_dir = g.sh_rotations[i] * d_local;
        const Vec3 d_v = (d_dir - dir * dir.dot(d_dir)) / len;
        grads.d_means.row(i) += d_v.transpose();
        if (with_camera) {
          // center = -R^T t, so both pose parameters feel the view shift.
          d_w_rot += -cam_t * (-d_v).transpose();
          d_w_t += -(w_rot * (-d_v));
        }
      }
    }

    if (with_camera) {
      d_w_rot += dp * mu.transpose() + 2.0 * d_m * wf * g.cov_factors[i].transpose();
      d_w_t += dp;
    }
  }

  if (with_camera) {
    grads.d_camera.head<3>() = 2.0 * axial_of_skew_part(d_w_rot * w_rot.transpose());
    grads.d_camera.tail<3>() = d_w_t;
  }
  return grads;
}

Image render_volume_oracle(const ArticulatedGaussians& g, const PinholeCamera& cam,
                           const RenderOptions& opts, int steps) {
  const int n = g.count();
  const MatX colors = per_component_colors(g, cam.center());
  const Vec3 origin = cam.center();
  const Mat3 cam_to_world = cam.world_to_cam.rotation.transpose();

  // Precompute inverse factors; singular components carry no density.
  std::vector<Mat3> finv(n);
  std::vector<bool> alive(n, false);
  for (int i = 0; i < n; ++i) {
    if (std::abs(g.cov_factors[i].determinant()) < 1e-30) continue;
    finv[i] = g.cov_factors[i].inverse();
    alive[i] = true;
  }

  Image img(cam.width, cam.height);
  struct Segment {
    int index;
    double a, b, c;  // Mahalanobis^2 along the ray: a t^2 + b t + c
    double t0, t1;
  };

  parallel_for(
      static_cast<int64_t>(cam.height),
      [&](int64_t y_begin, int64_t y_end) {
        std::vector<Segment> segs;
        for (int64_t y = y_begin; y < y_end; ++y) {
          for (int x = 0; x < cam.width; ++x) {
            // Direction scaled so the parameter t equals camera-space depth.
            const Vec3 dir_cam((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
            const Vec3 v = cam_to_world * dir_cam;
            const double arc = v.norm();  // ds = arc * dt

            segs.clear();
            double t_lo = std::numeric_limits<double>::infinity(), t_hi = opts.near_clip;
            for (int i = 0; i < n; ++i) {
              if (!alive[i]) continue;
              const Vec3 y0 = finv[i] * (origin - g.means.row(i).transpose());
              const Vec3 y1 = finv[i] * v;
              const double a = y1.squaredNorm();
              if (a < 1e-30) continue;
              const double b = 2.0 * y0.dot(y1);
              const double c = y0.squaredNorm();
              const double disc = b * b - 4.0 * a * (c - kOracleQMax);
              if (disc <= 0.0) continue;
              const double sq = std::sqrt(disc);
              double t0 = (-b - sq) / (2.0 * a);
              double t1 = (-b + sq) / (2.0 * a);
              t0 = std::max(t0, opts.near_clip);
              if (t1 <= t0) continue;
              segs.push_back({i, a, b, c, t0, t1});
              t_lo = std::min(t_lo, t0);
              t_hi = std::max(t_hi, t1);
            }

            Vec3 rgb = Vec3::Zero();
            double trans = 1.0;
            if (!segs.empty()) {
              const double h = (t_hi - t_lo) / steps;
              for (int s = 0; s < steps; ++s) {
                const double t = t_lo + (s + 0.5) * h;
                double sigma = 0.0;
                Vec3 emission = Vec3::Zero();
                for (const Segment& sg : segs) {
                  if (t < sg.t0 || t > sg.t1) continue;
                  const double q = (sg.a * t + sg.b) * t + sg.c;
                  if (q > kOracleQMax) continue;
                  const double dens = g.opacities[sg.index] * std::exp(-0.5 * q);
                  sigma += dens;
                  emission += dens * colors.row(sg.index).transpose();
                }
                if (sigma <= 0.0) continue;
                const double alpha = 1.0 - std::exp(-sigma * arc * h);
                rgb += (trans * alpha / sigma) * emission;
                trans *= 1.0 - alpha;
                if (trans < 1e-7) break;
              }
            }
            rgb += trans * opts.background;
            img.set_pixel(x, static_cast<int>(y), rgb);
          }
        }
      },
      opts.threads);
  return img;
}

}  // namespace asplat
