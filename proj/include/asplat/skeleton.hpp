// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "asplat/geom.hpp"
#include "asplat/knn.hpp"

namespace asplat {

/// Number of nearest surface samples blended by the prior skinning query.
constexpr int kPriorQueryKnn = 32;

/// Rigged body template: a joint tree with canonical (rest) joint frames plus
/// surface samples carrying rigid prior skinning weights. The samples stand in
/// for a surface mesh; smooth weights come out of the kernel query below.
struct KinematicTemplate {
  std::vector<int> parents;                 // parent[k] < k; root has -1
  std::vector<RigidTransform> rest_global;  // canonical global joint frames
  std::vector<std::string> joint_names;     // optional, same length as parents

  std::vector<Vec3> sample_positions;
  MatX sample_weights;      // S x n_b, rows on the simplex
  double skinning_sigma = 0.05;

  int joint_count() const { return static_cast<int>(parents.size()); }
  int sample_count() const { return static_cast<int>(sample_positions.size()); }

  /// Throws std::invalid_argument on malformed trees or weights.
  void validate() const;

  /// Axis-aligned bounds of the surface samples.
  void sample_bounds(Vec3& lo, Vec3& hi) const;

  /// kd-tree over sample_positions, built on first use. Not thread-safe on
  /// the building call; query paths warm it up before going parallel.
  const KdTree3& sample_index() const;
  void invalidate_sample_index() { sample_index_.reset(); }

 private:
  mutable std::shared_ptr<const KdTree3> sample_index_;
};

/// Articulation state: one local rotation per joint plus a root translation.
struct Pose {
  std::vector<Quaternion> joint_rotations;
  Vec3 root_translation = Vec3::Zero();

  static Pose rest(int joint_count) {
    Pose p;
    p.joint_rotations.resize(joint_count);
    return p;
  }
};

/// Per-bone world transforms B_k mapping canonical points to posed points.
/// The rest pose yields identities exactly. Throws std::invalid_argument when
/// the pose joint count does not match the template.
std::vector<RigidTransform> bone_transforms(const KinematicTemplate& tpl, const Pose& pose);

/// Adjoint of bone_transforms: folds per-bone gradients (dl_rot[k], dl_trans[k])
/// back onto the local joint rotation matrices and the root translation.
/// dl_joint_rot[k] is dL/d(local rotation matrix of joint k).
void bone_transforms_backward(const KinematicTemplate& tpl, const Pose& pose,
                              const std::vector<Mat3>& dl_rot,
                              const std::vector<Vec3>& dl_trans,
                              std::vector<Mat3>& dl_joint_rot, Vec3& dl_root);

/// Linear blend skinning of a single point: the weight-blended homogeneous
/// bone matrix applied to x (no divide; the blend's last row is unused).
Vec3 lbs_point(const Vec3& x, const VecX& weights, const std::vector<RigidTransform>& bones);

/// Smooth prior skinning weights at x: Gaussian-kernel weighted average of the
/// prior weights of the kPriorQueryKnn nearest surface samples, renormalized.
/// When grad is non-null it receives d weights / d x as an n_b x 3 matrix.
/// Throws std::runtime_error if the template has no samples.
VecX prior_skinning_query(const KinematicTemplate& tpl, const Vec3& x, MatX* grad = nullptr);

/// Flat optimization encoding of a pose:
/// [root_translation (3), axis-angle of joint 0 (3), joint 1, ...].
VecX pose_to_params(const Pose& pose);
Pose pose_from_params(const VecX& params);

}  // namespace asplat
