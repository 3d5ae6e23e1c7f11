// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/so3.hpp"

#include <cmath>

namespace asplat {

namespace {
constexpr double kTaylorSwitch = 1e-6;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 k = skew(w);
  double a, b;  // R = I + a K + b K^2
  if (theta2 < kTaylorSwitch * kTaylorSwitch) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * k + b * (k * k);
}

Vec3 so3_log(const Mat3& r) {
  const double cos_theta = std::min(1.0, std::max(-1.0, (r.trace() - 1.0) * 0.5));
  const double theta = std::acos(cos_theta);
  const Vec3 ax = axial_of_skew_part(r);
  if (theta < kTaylorSwitch) {
    // R ~= I + skew(w): axial part is w to first order.
    return ax * (1.0 + theta * theta / 6.0);
  }
  if (theta > M_PI - 1e-4) {
    // Near pi the axial part vanishes; recover the axis from the symmetric part.
    const Mat3 s = 0.5 * (r + Mat3::Identity().eval());  // == axis axis^T near pi
    int i = 0;
    if (s(1, 1) > s(i, i)) i = 1;
    if (s(2, 2) > s(i, i)) i = 2;
    Vec3 axis = s.col(i) / std::sqrt(std::max(s(i, i), 1e-12));
    // Fix the sign so exp(log(R)) reproduces R's antisymmetric residue.
    if (axial_of_skew_part(r).dot(axis) < 0.0) axis = -axis;
    return axis * theta;
  }
  return ax * (theta / std::sin(theta));
}

Mat3 so3_right_jacobian(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 k = skew(w);
  double c1, c2;  // J_r = I - c1 K + c2 K^2
  if (theta2 < kTaylorSwitch * kTaylorSwitch) {
    c1 = 0.5 - theta2 / 24.0;
    c2 = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    const double theta = std::sqrt(theta2);
    c1 = (1.0 - std::cos(theta)) / theta2;
    c2 = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() - c1 * k + c2 * (k * k);
}

Vec3 so3_exp_backward(const Vec3& w, const Mat3& dl_dr) {
  // dR = R [J_r dw]x, so <G, dR> = <R^T G, [J_r dw]x> = 2 axial(skew(R^T G)) . J_r dw.
  const Mat3 r = so3_exp(w);
  const Vec3 a = 2.0 * axial_of_skew_part(r.transpose() * dl_dr);
  return so3_right_jacobian(w).transpose() * a;
}

Quaternion quat_from_axis_angle(const Vec3& w) {
  const double theta = w.norm();
  if (theta < kTaylorSwitch) {
    // sin(t/2)/t ~= 1/2 - t^2/48
    const double f = 0.5 - theta * theta / 48.0;
    return Quaternion(std::cos(theta * 0.5), w.x() * f, w.y() * f, w.z() * f);
  }
  const double half = 0.5 * theta;
  const double f = std::sin(half) / theta;
  return Quaternion(std::cos(half), w.x() * f, w.y() * f, w.z() * f);
}

}  // namespace asplat
