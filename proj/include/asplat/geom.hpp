// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

namespace asplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Unit-length rotation, scalar-first storage (w, x, y, z), Hamilton product
/// convention. Stored components are not required to be normalized; consumers
/// normalize where the math needs a unit quaternion.
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  Quaternion() = default;
  Quaternion(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  /// Throws std::invalid_argument on (near-)zero norm.
  Quaternion normalized() const;
};

Quaternion quat_mul(const Quaternion& a, const Quaternion& b);

/// Rotation matrix of the normalized quaternion. q and -q map to the same
/// matrix. Throws std::invalid_argument if |q| is zero.
Mat3 quat_to_rotation(const Quaternion& q);

/// Inverse of quat_to_rotation; returns the hemisphere with w >= 0.
Quaternion quat_from_rotation(const Mat3& r);

/// Rigid body transform x -> R x + t.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  RigidTransform inverse() const {
    RigidTransform out;
    out.rotation = rotation.transpose();
    out.translation = -(out.rotation * translation);
    return out;
  }
};

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
  RigidTransform out;
  out.rotation = a.rotation * b.rotation;
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

/// General affine map x -> L x + t. Linear blends of rigid transforms land
/// here: L is not necessarily orthonormal, or even invertible.
struct Affine {
  Mat3 linear = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
};

inline Vec3 affine_apply(const Affine& a, const Vec3& p) {
  return a.linear * p + a.translation;
}

/// Sigma = R diag(s^2) R^T. Throws std::invalid_argument unless all scales
/// are strictly positive.
Mat3 covariance_from_rotation_scale(const Mat3& r, const Vec3& s);

// ----- Real spherical harmonics, degrees 0..3 -------------------------------
//
// Standard real SH table (no Condon-Shortley sign flips), band-major ordering
// m = -l..l. Directions are assumed unit length.

constexpr int kShMaxDegree = 3;
constexpr int kShMaxBasis = 16;

inline constexpr int sh_basis_size(int degree) { return (degree + 1) * (degree + 1); }

/// Fills out[0..sh_basis_size(degree)) with basis values at unit direction d.
/// Throws std::invalid_argument for degree outside [0, 3].
void sh_eval(int degree, const Vec3& d, double* out);

/// Same as sh_eval but also fills dout[b] with the Euclidean gradient of each
/// basis polynomial at d. The gradients are those of the polynomial extension;
/// callers composing with a normalization project out the radial part.
void sh_eval_grad(int degree, const Vec3& d, double* out, Vec3* dout);

}  // namespace asplat
