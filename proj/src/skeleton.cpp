// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/skeleton.hpp"

#include <cmath>
#include <stdexcept>

#include "asplat/so3.hpp"

namespace asplat {

void KinematicTemplate::validate() const {
  const int n = joint_count();
  if (n == 0) throw std::invalid_argument("template has no joints");
  int roots = 0;
  for (int k = 0; k < n; ++k) {
    if (parents[k] < 0) {
      ++roots;
    } else if (parents[k] >= k) {
      throw std::invalid_argument("template parents must be topologically ordered");
    }
  }
  if (roots != 1) throw std::invalid_argument("template must have exactly one root joint");
  if (static_cast<int>(rest_global.size()) != n)
    throw std::invalid_argument("rest transform count does not match joint count");
  if (sample_weights.rows() != sample_count() ||
      (sample_count() > 0 && sample_weights.cols() != n))
    throw std::invalid_argument("sample weight shape does not match samples/joints");
  for (int s = 0; s < sample_count(); ++s) {
    double sum = 0.0;
    for (int k = 0; k < n; ++k) {
      const double w = sample_weights(s, k);
      if (!(w >= 0.0)) throw std::invalid_argument("sample weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("sample weights must sum to 1");
  }
}

void KinematicTemplate::sample_bounds(Vec3& lo, Vec3& hi) const {
  if (sample_positions.empty())
    throw std::runtime_error("template has no surface samples");
  lo = hi = sample_positions[0];
  for (const Vec3& p : sample_positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
}

const KdTree3& KinematicTemplate::sample_index() const {
  if (!sample_index_)
    sample_index_ = std::make_shared<const KdTree3>(sample_positions);
  return *sample_index_;
}

std::vector<RigidTransform> bone_transforms(const KinematicTemplate& tpl, const Pose& pose) {
  const int n = tpl.joint_count();
  if (static_cast<int>(pose.joint_rotations.size()) != n)
    throw std::invalid_argument("pose joint count does not match template");

  // Forward kinematics: each joint applies its posed local rotation about its
  // own rest frame; the bone transform maps rest-frame points to posed points.
  std::vector<RigidTransform> fk(n);
  std::vector<RigidTransform> bones(n);
  for (int k = 0; k < n; ++k) {
    const int p = tpl.parents[k];
    RigidTransform local =
        p < 0 ? tpl.rest_global[k] : tpl.rest_global[p].inverse() * tpl.rest_global[k];
    RigidTransform rot;
    rot.rotation = quat_to_rotation(pose.joint_rotations[k]);
    local = local * rot;
    fk[k] = p < 0 ? local : fk[p] * local;

    bones[k] = fk[k] * tpl.rest_global[k].inverse();
    bones[k].translation += pose.root_translation;
  }
  return bones;
}

void bone_transforms_backward(const KinematicTemplate& tpl, const Pose& pose,
                              const std::vector<Mat3>& dl_rot,
                              const std::vector<Vec3>& dl_trans,
                              std::vector<Mat3>& dl_joint_rot, Vec3& dl_root) {
  const int n = tpl.joint_count();
  if (static_cast<int>(pose.joint_rotations.size()) != n)
    throw std::invalid_argument("pose joint count does not match template");

  // Recompute the forward pass.
  std::vector<RigidTransform> local(n), fk(n);
  std::vector<Mat3> joint_rot(n);
  for (int k = 0; k < n; ++k) {
    const int p = tpl.parents[k];
    joint_rot[k] = quat_to_rotation(pose.joint_rotations[k]);
    local[k] = p < 0 ? tpl.rest_global[k] : tpl.rest_global[p].inverse() * tpl.rest_global[k];
    RigidTransform rot;
    rot.rotation = joint_rot[k];
    local[k] = local[k] * rot;
    fk[k] = p < 0 ? local[k] : fk[p] * local[k];
  }

  // B_k = (R_fk Rrest^T, u_fk - R_fk Rrest^T trest + root). Fold the bone
  // gradients onto (R_fk, u_fk), then walk the tree in reverse.
  std::vector<Mat3> d_r(n, Mat3::Zero());
  std::vector<Vec3> d_u(n, Vec3::Zero());
  dl_root = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    const Mat3& rrest = tpl.rest_global[k].rotation;
    const Vec3& trest = tpl.rest_global[k].translation;
    dl_root += dl_trans[k];
    d_u[k] += dl_trans[k];
    const Mat3 d_bone_rot = dl_rot[k] - dl_trans[k] * trest.transpose();
    d_r[k] += d_bone_rot * rrest;
  }

  dl_joint_rot.assign(n, Mat3::Zero());
  for (int k = n - 1; k >= 0; --k) {
    const int p = tpl.parents[k];
    const Mat3 parent_rot = p < 0 ? Mat3::Identity() : fk[p].rotation;
    // fk_k = fk_p * local_k: R_k = R_p L_k, u_k = u_p + R_p t_loc.
    if (p >= 0) {
      d_r[p] += d_r[k] * local[k].rotation.transpose();
      d_r[p] += d_u[k] * local[k].translation.transpose();
      d_u[p] += d_u[k];
    }
    // local rotation enters as L_k = Lrest_k * E_k with fixed translation.
    const Mat3 d_local_rot = parent_rot.transpose() * d_r[k];
    const Mat3 lrest = p < 0 ? tpl.rest_global[k].rotation
                             : (tpl.rest_global[p].inverse() * tpl.rest_global[k]).rotation;
    dl_joint_rot[k] = lrest.transpose() * d_local_rot;
  }
}

Vec3 lbs_point(const Vec3& x, const VecX& weights, const std::vector<RigidTransform>& bones) {
  if (weights.size() != static_cast<Eigen::Index>(bones.size()))
    throw std::invalid_argument("lbs weight count does not match bone count");
  Vec3 out = Vec3::Zero();
  for (size_t k = 0; k < bones.size(); ++k)
    out += weights[static_cast<Eigen::Index>(k)] * bones[k].apply(x);
  return out;
}

VecX prior_skinning_query(const KinematicTemplate& tpl, const Vec3& x, MatX* grad) {
  const int s_count = tpl.sample_count();
  if (s_count == 0)
    throw std::runtime_error("prior skinning query on a template without samples");
  const int n_b = tpl.joint_count();
  const double inv_two_sigma2 = 1.0 / (2.0 * tpl.skinning_sigma * tpl.skinning_sigma);

  thread_local std::vector<int> nn;
  tpl.sample_index().knn(x, std::min(kPriorQueryKnn, s_count), nn);

  // Shift the exponent so the nearest sample has kernel value 1; the ratio is
  // shift-invariant and this keeps the denominator well away from underflow.
  double d2_min = std::numeric_limits<double>::infinity();
  for (int j : nn) d2_min = std::min(d2_min, (x - tpl.sample_positions[j]).squaredNorm());

  VecX out = VecX::Zero(n_b);
  double denom = 0.0;
  thread_local std::vector<double> kernel;
  kernel.resize(nn.size());
  for (size_t a = 0; a < nn.size(); ++a) {
    const int j = nn[a];
    const double d2 = (x - tpl.sample_positions[j]).squaredNorm();
    const double k = std::exp(-(d2 - d2_min) * inv_two_sigma2);
    kernel[a] = k;
    denom += k;
    out += k * tpl.sample_weights.row(j).transpose();
  }
  out /= denom;

  if (grad) {
    // d out / d x = sum_j (k_j / denom) * (w_j - out) ((s_j - x) / sigma^2)^T
    grad->setZero(n_b, 3);
    const double inv_sigma2 = 2.0 * inv_two_sigma2;
    for (size_t a = 0; a < nn.size(); ++a) {
      const int j = nn[a];
      const Vec3 dir = (tpl.sample_positions[j] - x) * inv_sigma2;
      const VecX residual = tpl.sample_weights.row(j).transpose() - out;
      grad->noalias() += (kernel[a] / denom) * residual * dir.transpose();
    }
  }

  // Renormalize exactly; the kernel average already sums to 1 up to rounding.
  out /= out.sum();
  return out;
}

VecX pose_to_params(const Pose& pose) {
  const int n = static_cast<int>(pose.joint_rotations.size());
  VecX params(3 + 3 * n);
  params.head<3>() = pose.root_translation;
  for (int k = 0; k < n; ++k)
    params.segment<3>(3 + 3 * k) = so3_log(quat_to_rotation(pose.joint_rotations[k]));
  return params;
}

Pose pose_from_params(const VecX& params) {
  if (params.size() < 3 || params.size() % 3 != 0)
    throw std::invalid_argument("pose parameter vector must have size 3 + 3*joints");
  const int n = static_cast<int>(params.size() / 3) - 1;
  Pose pose;
  pose.root_translation = params.head<3>();
  pose.joint_rotations.resize(n);
  for (int k = 0; k < n; ++k)
    pose.joint_rotations[k] = quat_from_axis_angle(params.segment<3>(3 + 3 * k));
  return pose;
}

}  // namespace asplat
