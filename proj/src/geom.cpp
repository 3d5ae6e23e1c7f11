// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/geom.hpp"

#include <cmath>
#include <stdexcept>

namespace asplat {

namespace {

// ----- SH constants, full double precision ----------------------------------
constexpr double kSH_C0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))
constexpr double kSH_C1 = 0.4886025119029199;   // sqrt(3 / (4 pi))
constexpr double kSH_C2[5] = {
    1.0925484305920792,   // xy
    1.0925484305920792,   // yz
    0.31539156525252005,  // 3z^2 - 1
    1.0925484305920792,   // xz
    0.5462742152960396,   // x^2 - y^2
};
constexpr double kSH_C3[7] = {
    0.5900435899266435,  // y (3x^2 - y^2)
    2.890611442640554,   // xyz
    0.4570457994644658,  // y (5z^2 - 1)
    0.3731763325901154,  // z (5z^2 - 3)
    0.4570457994644658,  // x (5z^2 - 1)
    1.4453057213202769,  // z (x^2 - y^2)
    0.5900435899266435,  // x (x^2 - 3y^2)
};

void check_degree(int degree) {
  if (degree < 0 || degree > kShMaxDegree)
    throw std::invalid_argument("sh degree must be in [0, 3], got " + std::to_string(degree));
}

}  // namespace

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (!(n > 1e-12))
    throw std::invalid_argument("cannot normalize zero-norm quaternion");
  return {w / n, x / n, y / n, z / n};
}

Quaternion quat_mul(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Mat3 quat_to_rotation(const Quaternion& q_in) {
  const Quaternion q = q_in.normalized();
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

Quaternion quat_from_rotation(const Mat3& r) {
  // Shepperd's method: pick the largest diagonal combination for stability.
  Quaternion q;
  const double tr = r.trace();
  if (tr > 0.0) {
    double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (r(2, 1) - r(1, 2)) / s;
    q.y = (r(0, 2) - r(2, 0)) / s;
    q.z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q.w = (r(2, 1) - r(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (r(0, 1) + r(1, 0)) / s;
    q.z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q.w = (r(0, 2) - r(2, 0)) / s;
    q.x = (r(0, 1) + r(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (r(1, 2) + r(2, 1)) / s;
  } else {
    double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q.w = (r(1, 0) - r(0, 1)) / s;
    q.x = (r(0, 2) + r(2, 0)) / s;
    q.y = (r(1, 2) + r(2, 1)) / s;
    q.z = 0.25 * s;
  }
  if (q.w < 0.0) {
    q.w = -q.w;
    q.x = -q.x;
    q.y = -q.y;
    q.z = -q.z;
  }
  return q;
}

Mat3 covariance_from_rotation_scale(const Mat3& r, const Vec3& s) {
  for (int i = 0; i < 3; ++i)
    if (!(s[i] > 0.0))
      throw std::invalid_argument("covariance scales must be strictly positive");
  const Mat3 rs = r * s.asDiagonal();
  return rs * rs.transpose();
}

void sh_eval(int degree, const Vec3& d, double* out) {
  check_degree(degree);
  const double x = d.x(), y = d.y(), z = d.z();
  out[0] = kSH_C0;
  if (degree < 1) return;
  out[1] = kSH_C1 * y;
  out[2] = kSH_C1 * z;
  out[3] = kSH_C1 * x;
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  out[4] = kSH_C2[0] * x * y;
  out[5] = kSH_C2[1] * y * z;
  out[6] = kSH_C2[2] * (3.0 * zz - 1.0);
  out[7] = kSH_C2[3] * x * z;
  out[8] = kSH_C2[4] * (xx - yy);
  if (degree < 3) return;
  out[9] = kSH_C3[0] * y * (3.0 * xx - yy);
  out[10] = kSH_C3[1] * x * y * z;
  out[11] = kSH_C3[2] * y * (5.0 * zz - 1.0);
  out[12] = kSH_C3[3] * z * (5.0 * zz - 3.0);
  out[13] = kSH_C3[4] * x * (5.0 * zz - 1.0);
  out[14] = kSH_C3[5] * z * (xx - yy);
  out[15] = kSH_C3[6] * x * (xx - 3.0 * yy);
}

void sh_eval_grad(int degree, const Vec3& d, double* out, Vec3* dout) {
  sh_eval(degree, d, out);
  const double x = d.x(), y = d.y(), z = d.z();
  dout[0] = Vec3::Zero();
  if (degree < 1) return;
  dout[1] = Vec3(0.0, kSH_C1, 0.0);
  dout[2] = Vec3(0.0, 0.0, kSH_C1);
  dout[3] = Vec3(kSH_C1, 0.0, 0.0);
  if (degree < 2) return;
  const double xx = x * x, yy = y * y, zz = z * z;
  dout[4] = kSH_C2[0] * Vec3(y, x, 0.0);
  dout[5] = kSH_C2[1] * Vec3(0.0, z, y);
  dout[6] = kSH_C2[2] * Vec3(0.0, 0.0, 6.0 * z);
  dout[7] = kSH_C2[3] * Vec3(z, 0.0, x);
  dout[8] = kSH_C2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
  if (degree < 3) return;
  dout[9] = kSH_C3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
  dout[10] = kSH_C3[1] * Vec3(y * z, x * z, x * y);
  dout[11] = kSH_C3[2] * Vec3(0.0, 5.0 * zz - 1.0, 10.0 * y * z);
  dout[12] = kSH_C3[3] * Vec3(0.0, 0.0, 15.0 * zz - 3.0);
  dout[13] = kSH_C3[4] * Vec3(5.0 * zz - 1.0, 0.0, 10.0 * x * z);
  dout[14] = kSH_C3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
  dout[15] = kSH_C3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
}

}  // namespace asplat
