// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal axis-angle rotation parameterization: just what pose refinement and
// the per-frame bone tables need (exp map, log map, right Jacobian, and the
// adjoint of the exp map for backprop). Deliberately not a general Lie-group
// toolkit.

#include "asplat/geom.hpp"

namespace asplat {

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

/// Axial vector of the antisymmetric part of a: axial(skew(v)) == v.
inline Vec3 axial_of_skew_part(const Mat3& a) {
  return 0.5 * Vec3(a(2, 1) - a(1, 2), a(0, 2) - a(2, 0), a(1, 0) - a(0, 1));
}

/// Rodrigues formula with a Taylor branch near zero.
Mat3 so3_exp(const Vec3& w);

/// Inverse of so3_exp; returns the angle-in-[0, pi] representative.
Vec3 so3_log(const Mat3& r);

/// Right Jacobian J_r of so3_exp: exp(w + dw) ~= exp(w) exp(J_r(w) dw).
Mat3 so3_right_jacobian(const Vec3& w);

/// Adjoint of so3_exp: given dL/dR for R = so3_exp(w), returns dL/dw.
Vec3 so3_exp_backward(const Vec3& w, const Mat3& dl_dr);

Quaternion quat_from_axis_angle(const Vec3& w);

}  // namespace asplat
