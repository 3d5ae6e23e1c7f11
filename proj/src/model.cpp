// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/model.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "asplat/so3.hpp"
#include "asplat/threading.hpp"

namespace asplat {

void SkinningGrid::validate() const {
  for (int a = 0; a < 3; ++a)
    if (res[a] < 2) throw std::invalid_argument("grid needs at least 2 nodes per axis");
  for (int a = 0; a < 3; ++a)
    if (!(hi[a] > lo[a])) throw std::invalid_argument("grid bounds must have positive extent");
  if (delta.size() != static_cast<Eigen::Index>(node_count()) * n_b ||
      latent.size() != static_cast<Eigen::Index>(node_count()) * n_l)
    throw std::invalid_argument("grid payload size does not match resolution/channels");
}

TriCell grid_cell(const SkinningGrid& grid, const Vec3& x) {
  TriCell cell;
  int i0[3];
  double f[3], slope[3];
  for (int a = 0; a < 3; ++a) {
    const double span = grid.hi[a] - grid.lo[a];
    const double u_raw = (x[a] - grid.lo[a]) / span * (grid.res[a] - 1);
    const double u = std::min(std::max(u_raw, 0.0), double(grid.res[a] - 1));
    i0[a] = std::min(static_cast<int>(u), grid.res[a] - 2);
    f[a] = u - i0[a];
    const bool clamped = u_raw < 0.0 || u_raw > double(grid.res[a] - 1);
    slope[a] = clamped ? 0.0 : (grid.res[a] - 1) / span;
  }
  const int ny = grid.res.y(), nz = grid.res.z();
  int c = 0;
  for (int a = 0; a < 2; ++a) {
    const double wx = a ? f[0] : 1.0 - f[0];
    for (int b = 0; b < 2; ++b) {
      const double wy = b ? f[1] : 1.0 - f[1];
      for (int d = 0; d < 2; ++d, ++c) {
        const double wz = d ? f[2] : 1.0 - f[2];
        cell.node[c] = ((i0[0] + a) * ny + (i0[1] + b)) * nz + (i0[2] + d);
        cell.w[c] = wx * wy * wz;
        cell.dw[c] = Vec3((a ? 1.0 : -1.0) * slope[0] * wy * wz,
                          (b ? 1.0 : -1.0) * slope[1] * wx * wz,
                          (d ? 1.0 : -1.0) * slope[2] * wx * wy);
      }
    }
  }
  return cell;
}

RigidTransform LatentBoneTable::decode(int frame, int q) const {
  RigidTransform t;
  const auto seg = params.row(frame).segment(q * 6, 6);
  t.rotation = so3_exp(Vec3(seg[0], seg[1], seg[2]));
  t.translation = Vec3(seg[3], seg[4], seg[5]);
  return t;
}

AvatarModel init_from_template(const KinematicTemplate& tpl, const ModelConfig& config) {
  if (config.count < 1) throw std::invalid_argument("component count must be >= 1");
  if (config.n_l < 0 || config.latent_frames < 0)
    throw std::invalid_argument("latent sizes must be non-negative");
  if (!(config.init_opacity > 0.0 && config.init_opacity < 1.0))
    throw std::invalid_argument("init opacity must lie strictly inside (0, 1)");
  tpl.validate();
  if (tpl.sample_count() == 0)
    throw std::invalid_argument("template has no surface samples to seed from");

  AvatarModel model;
  model.tpl = tpl;
  const int n = config.count;
  const int n_b = tpl.joint_count();
  const int basis = sh_basis_size(config.sh_degree);

  std::mt19937_64 rng(config.seed);
  std::vector<int> perm(tpl.sample_count());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  GaussianMixture& g = model.gaussians;
  g.sh_degree = config.sh_degree;
  g.means.resize(n, 3);
  std::normal_distribution<double> jitter(0.0, 0.5 * tpl.skinning_sigma);
  std::vector<Vec3> means(n);
  for (int i = 0; i < n; ++i) {
    Vec3 p = tpl.sample_positions[perm[i % perm.size()]];
    if (i >= static_cast<int>(perm.size()))
      p += Vec3(jitter(rng), jitter(rng), jitter(rng));  // wrapped draws get spread out
    means[i] = p;
    g.means.row(i) = p.transpose();
  }

  // Isotropic scale: half the mean distance to the 3 nearest other means.
  KdTree3 tree(means);
  g.log_scales.resize(n, 3);
  std::vector<int> nn;
  for (int i = 0; i < n; ++i) {
    tree.knn(means[i], 4, nn);
    double acc = 0.0;
    int found = 0;
    for (int j : nn)
      if (j != i && found < 3) {
        acc += (means[i] - means[j]).norm();
        ++found;
      }
    const double s = found > 0 ? 0.5 * acc / found : kScaleFloor;
    g.log_scales.row(i).setConstant(std::log(std::max(s, kScaleFloor)));
  }

  g.rotations = MatX::Zero(n, 4);
  g.rotations.col(0).setOnes();
  g.opacity_logits = VecX::Constant(n, logit(config.init_opacity));
  g.sh = MatX::Zero(n, 3 * basis);
  constexpr double kSH_C0 = 0.28209479177387814;
  g.sh.leftCols<3>().setConstant(0.5 / kSH_C0);  // mid-gray DC

  SkinningGrid& grid = model.grid;
  grid.res = config.grid_res;
  Vec3 lo, hi;
  tpl.sample_bounds(lo, hi);
  const Vec3 center = 0.5 * (lo + hi);
  const Vec3 half = 0.5 * (hi - lo) * (1.0 + config.grid_inflation);
  grid.lo = center - half;
  grid.hi = center + half;
  grid.n_b = n_b;
  grid.n_l = config.n_l;
  grid.delta = VecX::Zero(static_cast<Eigen::Index>(grid.node_count()) * n_b);
  grid.latent = VecX::Zero(static_cast<Eigen::Index>(grid.node_count()) * config.n_l);
  grid.validate();

  model.latent.n_l = config.n_l;
  model.latent.params = MatX::Zero(config.latent_frames, config.n_l * 6);
  return model;
}

std::pair<VecX, VecX> skinning_weights_at(const AvatarModel& model, const Vec3& x) {
  if (model.skinning_mode != SkinningMode::kGrid)
    throw std::logic_error("positional skinning query is undefined in per-component mode");
  VecX w_hat = prior_skinning_query(model.tpl, x);
  VecX w_lat = VecX::Zero(model.grid.n_l);
  const TriCell cell = grid_cell(model.grid, x);
  for (int c = 0; c < 8; ++c) {
    const int base_d = cell.node[c] * model.grid.n_b;
    for (int k = 0; k < model.grid.n_b; ++k) w_hat[k] += cell.w[c] * model.grid.delta[base_d + k];
    const int base_l = cell.node[c] * model.grid.n_l;
    for (int q = 0; q < model.grid.n_l; ++q) w_lat[q] += cell.w[c] * model.grid.latent[base_l + q];
  }
  return {w_hat, w_lat};
}

WeightsEval eval_skinning_weights(const AvatarModel& model, bool with_grads) {
  const int n = model.gaussians.count();
  const int n_b = model.bone_count();
  const int n_l = model.latent_count();
  const bool grid_mode = model.skinning_mode == SkinningMode::kGrid;

  WeightsEval eval;
  eval.w_hat.resize(n, n_b);
  eval.delta_only.resize(n, n_b);
  eval.w_lat.resize(n, n_l);
  if (with_grads) {
    eval.prior_grads.resize(n);
    if (grid_mode) eval.cells.resize(n);
  }
  model.tpl.sample_index();  // warm before the parallel section

  parallel_for(n, [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) {
      const Vec3 mu = model.gaussians.means.row(i).transpose();
      MatX* pg = with_grads ? &eval.prior_grads[i] : nullptr;
      const VecX prior = prior_skinning_query(model.tpl, mu, pg);
      if (grid_mode) {
        const TriCell cell = grid_cell(model.grid, mu);
        VecX delta = VecX::Zero(n_b), lat = VecX::Zero(n_l);
        for (int c = 0; c < 8; ++c) {
          const int base_d = cell.node[c] * n_b;
          for (int k = 0; k < n_b; ++k) delta[k] += cell.w[c] * model.grid.delta[base_d + k];
          const int base_l = cell.node[c] * n_l;
          for (int q = 0; q < n_l; ++q) lat[q] += cell.w[c] * model.grid.latent[base_l + q];
        }
        eval.delta_only.row(i) = delta.transpose();
        eval.w_hat.row(i) = (prior + delta).transpose();
        eval.w_lat.row(i) = lat.transpose();
        if (with_grads) eval.cells[i] = cell;
      } else {
        eval.delta_only.row(i) = model.pg_delta.row(i);
        eval.w_hat.row(i) = prior.transpose() + model.pg_delta.row(i);
        eval.w_lat.row(i) = model.pg_latent.row(i);
      }
    }
  });
  return eval;
}

void scatter_weight_grads(const AvatarModel& model, const WeightsEval& eval, int i,
                          const VecX* d_w_hat, const VecX* d_delta_only,
                          const VecX* d_w_lat, VecX& d_grid_delta, VecX& d_grid_latent,
                          MatX* d_pg_delta, MatX* d_pg_latent, Vec3* d_mu) {
  const int n_b = model.bone_count();
  const int n_l = model.latent_count();
  const bool grid_mode = model.skinning_mode == SkinningMode::kGrid;

  VecX d_delta = VecX::Zero(n_b);  // gradient on the interpolated correction
  if (d_w_hat) d_delta += *d_w_hat;
  if (d_delta_only) d_delta += *d_delta_only;

  if (d_w_hat && d_mu)  // prior term moves with the query point
    *d_mu += eval.prior_grads[i].transpose() * (*d_w_hat);

  if (grid_mode) {
    const TriCell& cell = eval.cells[i];
    for (int c = 0; c < 8; ++c) {
      const int base_d = cell.node[c] * n_b;
      double dot_d = 0.0;
      for (int k = 0; k < n_b; ++k) {
        d_grid_delta[base_d + k] += cell.w[c] * d_delta[k];
        dot_d += d_delta[k] * model.grid.delta[base_d + k];
      }
      const int base_l = cell.node[c] * n_l;
      double dot_l = 0.0;
      for (int q = 0; q < n_l; ++q) {
        if (d_w_lat) d_grid_latent[base_l + q] += cell.w[c] * (*d_w_lat)[q];
        if (d_w_lat) dot_l += (*d_w_lat)[q] * model.grid.latent[base_l + q];
      }
      if (d_mu) *d_mu += cell.dw[c] * (dot_d + dot_l);
    }
  } else {
    if (d_pg_delta) d_pg_delta->row(i) += d_delta.transpose();
    if (d_w_lat && d_pg_latent) d_pg_latent->row(i) += d_w_lat->transpose();
  }
}

namespace {

std::vector<RigidTransform> decode_latents(const AvatarModel& model, int frame) {
  const int n_l = model.latent_count();
  std::vector<RigidTransform> latents(n_l);
  if (n_l == 0) return latents;
  if (frame == kIdentityLatents) return latents;  // identities
  if (frame < 0 || frame >= model.latent.frame_count())
    throw std::invalid_argument("latent frame index out of range");
  for (int q = 0; q < n_l; ++q) latents[q] = model.latent.decode(frame, q);
  return latents;
}

Affine blend_transforms(const Eigen::Ref<const Eigen::RowVectorXd>& w_hat,
                        const Eigen::Ref<const Eigen::RowVectorXd>& w_lat,
                        const std::vector<RigidTransform>& bones,
                        const std::vector<RigidTransform>& latents) {
  Affine a;
  a.linear.setZero();
  a.translation.setZero();
  for (size_t k = 0; k < bones.size(); ++k) {
    const double w = w_hat[static_cast<Eigen::Index>(k)];
    a.linear += w * bones[k].rotation;
    a.translation += w * bones[k].translation;
  }
  for (size_t q = 0; q < latents.size(); ++q) {
    const double w = w_lat[static_cast<Eigen::Index>(q)];
    a.linear += w * latents[q].rotation;
    a.translation += w * latents[q].translation;
  }
  return a;
}

// Orthonormal polar factor of m. Near-orthonormal inputs short-circuit so the
// common zero-correction case stays bit-exact.
Mat3 polar_rotation(const Mat3& m) {
  if ((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12) return m;
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

// d(R)/d(q_c) of quat_to_rotation at the normalized quaternion, contracted
// with dl_dr, then pulled through the normalization.
Vec4 quat_rotation_backward(const Vec4& q_raw, const Mat3& dl_dr) {
  const double n = q_raw.norm();
  const Vec4 q = q_raw / n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 dw, dx, dy, dz;
  dw << 0, -z, y, z, 0, -x, -y, x, 0;
  dx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
  dy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
  dz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
  Vec4 d_unit(2.0 * dw.cwiseProduct(dl_dr).sum(), 2.0 * dx.cwiseProduct(dl_dr).sum(),
              2.0 * dy.cwiseProduct(dl_dr).sum(), 2.0 * dz.cwiseProduct(dl_dr).sum());
  return (d_unit - q * q.dot(d_unit)) / n;
}

}  // namespace

std::vector<Affine> articulation_transforms(const AvatarModel& model, const Pose& pose,
                                            int frame) {
  const auto bones = bone_transforms(model.tpl, pose);
  const auto latents = decode_latents(model, frame);
  const WeightsEval weights = eval_skinning_weights(model, false);
  const int n = model.gaussians.count();
  std::vector<Affine> out(n);
  for (int i = 0; i < n; ++i)
    out[i] = blend_transforms(weights.w_hat.row(i), weights.w_lat.row(i), bones, latents);
  return out;
}

ArticulatedGaussians articulate(const AvatarModel& model, const Pose& pose, int frame) {
  const WeightsEval weights = eval_skinning_weights(model, false);
  return articulate(model, pose, frame, weights);
}

ArticulatedGaussians articulate(const AvatarModel& model, const Pose& pose, int frame,
                                const WeightsEval& weights) {
  const auto bones = bone_transforms(model.tpl, pose);
  const auto latents = decode_latents(model, frame);
  const GaussianMixture& g = model.gaussians;
  const int n = g.count();

  ArticulatedGaussians out;
  out.sh_degree = g.sh_degree;
  out.means.resize(n, 3);
  out.cov_factors.resize(n);
  out.opacities.resize(n);
  out.sh_rotations.resize(n);
  out.sh = g.sh;

  parallel_for(n, [&](int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) {
      const Affine a = blend_transforms(weights.w_hat.row(i), weights.w_lat.row(i), bones, latents);
      const Vec3 mu = g.means.row(i).transpose();
      out.means.row(i) = (a.linear * mu + a.translation).transpose();
      const Mat3 rq = quat_to_rotation(g.rotation(i));
      out.cov_factors[i] = a.linear * rq * g.scale(i).asDiagonal();
      out.opacities[i] = g.opacity(i);
      out.sh_rotations[i] = polar_rotation(a.linear) * rq;
    }
  });
  return out;
}

ArticulatedGaussians canonical_proxy(const GaussianMixture& g) {
  const int n = g.count();
  ArticulatedGaussians out;
  out.sh_degree = g.sh_degree;
  out.means = g.means;
  out.cov_factors.resize(n);
  out.opacities.resize(n);
  out.sh_rotations.resize(n);
  out.sh = g.sh;
  for (int i = 0; i < n; ++i) {
    const Mat3 rq = quat_to_rotation(g.rotation(i));
    out.cov_factors[i] = rq * g.scale(i).asDiagonal();
    out.opacities[i] = g.opacity(i);
    out.sh_rotations[i] = rq;
  }
  return out;
}

void ParamGrads::init_zero(const AvatarModel& model) {
  const GaussianMixture& g = model.gaussians;
  means = MatX::Zero(g.means.rows(), 3);
  rotations = MatX::Zero(g.rotations.rows(), 4);
  log_scales = MatX::Zero(g.log_scales.rows(), 3);
  sh = MatX::Zero(g.sh.rows(), g.sh.cols());
  opacity_logits = VecX::Zero(g.count());
  grid_delta = VecX::Zero(model.grid.delta.size());
  grid_latent = VecX::Zero(model.grid.latent.size());
  latent_table = MatX::Zero(model.latent.params.rows(), model.latent.params.cols());
  d_joint_rot.assign(model.bone_count(), Mat3::Zero());
  d_root = Vec3::Zero();
  pg_delta = MatX::Zero(model.pg_delta.rows(), model.pg_delta.cols());
  pg_latent = MatX::Zero(model.pg_latent.rows(), model.pg_latent.cols());
}

void ParamGrads::accumulate(const ParamGrads& o) {
  means += o.means;
  rotations += o.rotations;
  log_scales += o.log_scales;
  sh += o.sh;
  opacity_logits += o.opacity_logits;
  grid_delta += o.grid_delta;
  grid_latent += o.grid_latent;
  latent_table += o.latent_table;
  for (size_t k = 0; k < d_joint_rot.size(); ++k) d_joint_rot[k] += o.d_joint_rot[k];
  d_root += o.d_root;
  pg_delta += o.pg_delta;
  pg_latent += o.pg_latent;
}

void articulate_backward(const AvatarModel& model, const Pose& pose, int frame,
                         const WeightsEval& weights, const MatX& d_means,
                         const std::vector<Mat3>& d_factors, ParamGrads& grads) {
  const auto bones = bone_transforms(model.tpl, pose);
  const auto latents = decode_latents(model, frame);
  const GaussianMixture& g = model.gaussians;
  const int n = g.count();
  const int n_b = model.bone_count();
  const int n_l = model.latent_count();

  std::vector<Mat3> d_bone_rot(n_b, Mat3::Zero());
  std::vector<Vec3> d_bone_t(n_b, Vec3::Zero());
  std::vector<Mat3> d_lat_rot(n_l, Mat3::Zero());
  std::vector<Vec3> d_lat_t(n_l, Vec3::Zero());

  VecX dw_hat(n_b), dw_lat(n_l);
  for (int i = 0; i < n; ++i) {
    const Affine a = blend_transforms(weights.w_hat.row(i), weights.w_lat.row(i), bones, latents);
    const Vec3 mu = g.means.row(i).transpose();
    const Mat3 rq = quat_to_rotation(g.rotation(i));
    const Vec3 s = g.scale(i);
    const Vec3 d_mu_art = d_means.row(i).transpose();
    const Mat3& d_f = d_factors[i];

    const Mat3 d_a_lin = d_mu_art * mu.transpose() + d_f * (rq * s.asDiagonal()).transpose();
    const Vec3 d_a_t = d_mu_art;

    Vec3 d_mu = a.linear.transpose() * d_mu_art;

    const Mat3 d_rq = a.linear.transpose() * d_f * s.asDiagonal();
    grads.rotations.row(i) += quat_rotation_backward(g.rotations.row(i).transpose(), d_rq).transpose();

    const Mat3 arq = a.linear * rq;
    for (int j = 0; j < 3; ++j) {
      const double ds = arq.col(j).dot(d_f.col(j));
      const bool active = std::exp(g.log_scales(i, j)) > kScaleFloor;
      grads.log_scales(i, j) += active ? ds * s[j] : 0.0;
    }

    for (int k = 0; k < n_b; ++k)
      dw_hat[k] = d_a_lin.cwiseProduct(bones[k].rotation).sum() + d_a_t.dot(bones[k].translation);
    for (int q = 0; q < n_l; ++q)
      dw_lat[q] = d_a_lin.cwiseProduct(latents[q].rotation).sum() + d_a_t.dot(latents[q].translation);

    scatter_weight_grads(model, weights, i, &dw_hat, nullptr, &dw_lat, grads.grid_delta,
                         grads.grid_latent, &grads.pg_delta, &grads.pg_latent, &d_mu);
    grads.means.row(i) += d_mu.transpose();

    for (int k = 0; k < n_b; ++k) {
      const double w = weights.w_hat(i, k);
      d_bone_rot[k] += w * d_a_lin;
      d_bone_t[k] += w * d_a_t;
    }
    for (int q = 0; q < n_l; ++q) {
      const double w = weights.w_lat(i, q);
      d_lat_rot[q] += w * d_a_lin;
      d_lat_t[q] += w * d_a_t;
    }
  }

  std::vector<Mat3> d_joint(n_b);
  Vec3 d_root;
  bone_transforms_backward(model.tpl, pose, d_bone_rot, d_bone_t, d_joint, d_root);
  for (int k = 0; k < n_b; ++k) grads.d_joint_rot[k] += d_joint[k];
  grads.d_root += d_root;

  if (n_l > 0 && frame != kIdentityLatents) {
    for (int q = 0; q < n_l; ++q) {
      const Vec3 w = model.latent.params.row(frame).segment(q * 6, 3).transpose();
      grads.latent_table.row(frame).segment(q * 6, 3) +=
          so3_exp_backward(w, d_lat_rot[q]).transpose();
      grads.latent_table.row(frame).segment(q * 6 + 3, 3) += d_lat_t[q].transpose();
    }
  }
}

double eval_density(const ArticulatedGaussians& g, const Vec3& x) {
  double sigma = 0.0;
  for (int i = 0; i < g.count(); ++i) {
    const Mat3& f = g.cov_factors[i];
    if (std::abs(f.determinant()) < 1e-30) continue;  // degenerate, no mass
    const Vec3 y = f.inverse() * (x - g.means.row(i).transpose());
    sigma += g.opacities[i] * std::exp(-0.5 * y.squaredNorm());
  }
  return sigma;
}

Vec3 component_color(const ArticulatedGaussians& g, int i, const Vec3& dir) {
  double basis[kShMaxBasis];
  const Vec3 local = g.sh_rotations[i].transpose() * dir;
  sh_eval(g.sh_degree, local, basis);
  const int nb = sh_basis_size(g.sh_degree);
  Vec3 rgb = Vec3::Zero();
  for (int b = 0; b < nb; ++b)
    rgb += basis[b] * g.sh.row(i).segment(3 * b, 3).transpose();
  return rgb.cwiseMax(0.0);  // negative lobes are clamped per channel
}

Vec3 eval_color(const ArticulatedGaussians& g, const Vec3& x, const Vec3& dir) {
  Vec3 out = Vec3::Zero();
  for (int i = 0; i < g.count(); ++i) {
    const Mat3& f = g.cov_factors[i];
    if (std::abs(f.determinant()) < 1e-30) continue;
    const Vec3 y = f.inverse() * (x - g.means.row(i).transpose());
    const double sigma_i = g.opacities[i] * std::exp(-0.5 * y.squaredNorm());
    if (sigma_i > 0.0) out += sigma_i * component_color(g, i, dir);
  }
  return out;
}

}  // namespace asplat
