// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "asplat/so3.hpp"
#include "helpers.hpp"

using namespace asplat;
using test::max_abs_diff;

TEST_CASE("exp map frozen value") {
  // Reference computed with an independent rotation library.
  Mat3 expect;
  expect << 0.8595338985586632, -0.4979915370029221, -0.11491695393636675,
      0.43986763295823095, 0.8353156052067087, -0.3297943376922552,
      0.2602267140480945, 0.23292116428443665, 0.937032437284918;
  CHECK(max_abs_diff(so3_exp(Vec3(0.3, -0.2, 0.5)), expect) < 1e-14);
  CHECK(max_abs_diff(so3_exp(Vec3::Zero()), Mat3::Identity()) == 0.0);
}

TEST_CASE("log inverts exp") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> angle(0.0, M_PI - 1e-4);
  for (int t = 0; t < 200; ++t) {
    const Vec3 w = test::random_unit(rng) * angle(rng);
    CHECK(max_abs_diff(so3_log(so3_exp(w)), w) < 1e-8);
  }
  // Tiny angles hit the Taylor branch.
  const Vec3 tiny(1e-9, -2e-9, 3e-10);
  CHECK(max_abs_diff(so3_log(so3_exp(tiny)), tiny) < 1e-15);
  // Near pi.
  const Vec3 wpi(1.3706670059140431, -2.7413340118280862, 0.6853335029570216);
  CHECK(max_abs_diff(so3_log(so3_exp(wpi)), wpi) < 1e-6);
}

TEST_CASE("exp is a rotation and matches the quaternion path") {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const Vec3 w = test::random_unit(rng) * (3.0 * t / 50.0);
    const Mat3 r = so3_exp(w);
    CHECK(max_abs_diff(r * r.transpose(), Mat3::Identity()) < 1e-13);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(max_abs_diff(quat_to_rotation(quat_from_axis_angle(w)), r) < 1e-12);
  }
}

TEST_CASE("right jacobian matches finite differences") {
  // exp(w + dw) ~= exp(w) exp(Jr(w) dw), so Jr(w) dw ~= log(exp(w)^T exp(w + dw)).
  std::mt19937_64 rng(9);
  const double h = 1e-6;
  for (int t = 0; t < 30; ++t) {
    const Vec3 w = test::random_unit(rng) * (0.01 + 2.5 * t / 30.0);
    const Mat3 jr = so3_right_jacobian(w);
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 dw = Vec3::Zero();
      dw[axis] = h;
      const Vec3 fd = so3_log(so3_exp(w).transpose() * so3_exp(w + dw)) / h;
      CHECK(max_abs_diff(jr.col(axis), fd) < 1e-5);
    }
  }
  CHECK(max_abs_diff(so3_right_jacobian(Vec3::Zero()), Mat3::Identity()) < 1e-15);
}

TEST_CASE("exp backward matches finite differences") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n;
  const double h = 1e-6;
  for (int t = 0; t < 30; ++t) {
    const Vec3 w = test::random_unit(rng) * (0.01 + 2.5 * t / 30.0);
    Mat3 dl;  // random upstream gradient
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) dl(i, j) = n(rng);
    const Vec3 g = so3_exp_backward(w, dl);
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 dw = Vec3::Zero();
      dw[axis] = h;
      const double lp = so3_exp(w + dw).cwiseProduct(dl).sum();
      const double lm = so3_exp(w - dw).cwiseProduct(dl).sum();
      CHECK(g[axis] == doctest::Approx((lp - lm) / (2.0 * h)).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("skew and axial are inverse on antisymmetric parts") {
  const Vec3 v(0.4, -1.2, 2.5);
  CHECK(max_abs_diff(axial_of_skew_part(skew(v)), v) == 0.0);
  const Mat3 sym = Vec3(1, 2, 3).asDiagonal();
  CHECK(max_abs_diff(axial_of_skew_part(skew(v) + sym), v) == 0.0);
  CHECK(max_abs_diff(skew(v) * Vec3(1, 0, 0), v.cross(Vec3(1, 0, 0))) == 0.0);
}
