// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "asplat/geom.hpp"
#include "helpers.hpp"

using namespace asplat;
using test::max_abs_diff;

TEST_CASE("quaternion normalization") {
  Quaternion q(2.0, 0.0, 0.0, 0.0);
  Quaternion n = q.normalized();
  CHECK(n.w == doctest::Approx(1.0));
  CHECK_THROWS_AS(Quaternion(0, 0, 0, 0).normalized(), std::invalid_argument);
  CHECK_THROWS_AS(quat_to_rotation(Quaternion(0, 0, 0, 0)), std::invalid_argument);
}

TEST_CASE("quaternion product matches rotation composition") {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 50; ++t) {
    const Quaternion a = test::random_quat(rng);
    const Quaternion b = test::random_quat(rng);
    const Mat3 lhs = quat_to_rotation(quat_mul(a, b));
    const Mat3 rhs = quat_to_rotation(a) * quat_to_rotation(b);
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("rotation matrix frozen value") {
  // Reference computed with an independent quaternion implementation for
  // q = normalize(0.9, 0.1, -0.3, 0.2), scalar first.
  const Quaternion q(0.9, 0.1, -0.3, 0.2);
  Mat3 expect;
  expect << 0.7263157894736842, -0.4421052631578947, -0.5263157894736842,
      0.31578947368421056, 0.8947368421052632, -0.3157894736842105,
      0.6105263157894737, 0.06315789473684214, 0.7894736842105263;
  CHECK(max_abs_diff(quat_to_rotation(q), expect) < 1e-15);
  // q and -q describe the same rotation.
  const Quaternion qn(-0.9, -0.1, 0.3, -0.2);
  CHECK(max_abs_diff(quat_to_rotation(qn), expect) < 1e-15);
}

TEST_CASE("quaternion from rotation round trip") {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    const Quaternion q = test::random_quat(rng);
    const Mat3 r = quat_to_rotation(q);
    const Quaternion back = quat_from_rotation(r);
    CHECK(back.w >= 0.0);
    CHECK(max_abs_diff(quat_to_rotation(back), r) < 1e-12);
  }
  // Trace < 0 branches: 180-degree rotations about each axis.
  for (int axis = 0; axis < 3; ++axis) {
    const Quaternion q(0, axis == 0 ? 1.0 : 0.0, axis == 1 ? 1.0 : 0.0,
                       axis == 2 ? 1.0 : 0.0);
    const Mat3 r = quat_to_rotation(q);
    CHECK(max_abs_diff(quat_to_rotation(quat_from_rotation(r)), r) < 1e-12);
  }
}

TEST_CASE("rigid transform algebra") {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 20; ++t) {
    RigidTransform a{quat_to_rotation(test::random_quat(rng)), test::random_unit(rng)};
    RigidTransform b{quat_to_rotation(test::random_quat(rng)), test::random_unit(rng)};
    const Vec3 x = test::random_unit(rng) * 2.0;
    CHECK(max_abs_diff((a * b).apply(x), a.apply(b.apply(x))) < 1e-12);
    CHECK(max_abs_diff(a.inverse().apply(a.apply(x)), x) < 1e-12);
  }
}

TEST_CASE("covariance from rotation and scale") {
  const Quaternion q(0.9, 0.1, -0.3, 0.2);
  const Mat3 r = quat_to_rotation(q);
  // Reference computed independently for s = (0.5, 1, 2).
  Mat3 expect;
  expect << 1.4353739612188365, 0.32659279778393346, -1.5791135734072022,
      0.32659279778393346, 1.224376731301939, -0.8925207756232686,
      -1.5791135734072022, -0.8925207756232686, 2.5902493074792243;
  const Mat3 cov = covariance_from_rotation_scale(r, Vec3(0.5, 1.0, 2.0));
  CHECK(max_abs_diff(cov, expect) < 1e-14);
  CHECK(max_abs_diff(cov, cov.transpose()) == 0.0);
  CHECK_THROWS_AS(covariance_from_rotation_scale(r, Vec3(1.0, 0.0, 1.0)),
                  std::invalid_argument);
  CHECK_THROWS_AS(covariance_from_rotation_scale(r, Vec3(1.0, -2.0, 1.0)),
                  std::invalid_argument);
}

TEST_CASE("sh values match independent reference") {
  // References computed from associated Legendre functions (scipy.special.lpmv),
  // not from the Cartesian table used by the implementation.
  const Vec3 d1 = Vec3(0.3, -0.5, 0.81).normalized();
  const double ref1[16] = {
      0.28209479177387814,  -0.24477904137802065, 0.39654204703239343,
      0.14686742482681236,  -0.16452390782934637, -0.4442145511392352,
      0.30782419409547257,  0.2665287306835411,   -0.08774608417565141,
      -0.005935122491349567, -0.35327392645275785, -0.5251065886656492,
      0.08884334726146753,  0.3150639531993895,   -0.1884127607748042,
      -0.11751542532872172};
  const Vec3 d2 = Vec3(-0.7, 0.1, 0.2).normalized();
  const double ref2[16] = {
      0.28209479177387814,  0.06649038006690555,  0.13298076013381088,
      -0.46543266046833814, -0.14162664841008454, 0.04046475668859559,
      -0.24530455075196,    -0.28325329682016864, 0.4855770802631462,
      0.2170932462065436,   -0.10198284270337066, -0.039160479345876374,
      -0.2670802614154491,  0.2741233554211342,   0.3496554606972702,
      -0.47879469368840466};
  double out[kShMaxBasis];
  sh_eval(3, d1, out);
  for (int b = 0; b < 16; ++b) CHECK(out[b] == doctest::Approx(ref1[b]).epsilon(1e-12));
  sh_eval(3, d2, out);
  for (int b = 0; b < 16; ++b) CHECK(out[b] == doctest::Approx(ref2[b]).epsilon(1e-12));

  // Lower degrees are prefixes of the full evaluation.
  double out1[kShMaxBasis];
  sh_eval(1, d1, out1);
  sh_eval(3, d1, out);
  for (int b = 0; b < 4; ++b) CHECK(out1[b] == out[b]);
  CHECK_THROWS_AS(sh_eval(4, d1, out), std::invalid_argument);
  CHECK_THROWS_AS(sh_eval(-1, d1, out), std::invalid_argument);
}

TEST_CASE("sh basis is orthonormal under spherical quadrature") {
  // 16-node Gauss-Legendre in cos(theta) x 32-node trapezoid in phi integrates
  // products of degree <= 3 polynomials on the sphere exactly.
  static const double gl[16][2] = {
      {-0.9894009349916499, 0.027152459411754037},
      {-0.9445750230732326, 0.062253523938647706},
      {-0.8656312023878318, 0.09515851168249259},
      {-0.755404408355003, 0.12462897125553403},
      {-0.6178762444026438, 0.14959598881657676},
      {-0.45801677765722737, 0.16915651939500262},
      {-0.2816035507792589, 0.1826034150449236},
      {-0.09501250983763745, 0.18945061045506859},
      {0.09501250983763745, 0.18945061045506859},
      {0.2816035507792589, 0.1826034150449236},
      {0.45801677765722737, 0.16915651939500262},
      {0.6178762444026438, 0.14959598881657676},
      {0.755404408355003, 0.12462897125553403},
      {0.8656312023878318, 0.09515851168249259},
      {0.9445750230732326, 0.062253523938647706},
      {0.9894009349916499, 0.027152459411754037}};
  const int nphi = 32;
  MatX gram = MatX::Zero(16, 16);
  double y[kShMaxBasis];
  for (const auto& node : gl) {
    const double ct = node[0], st = std::sqrt(1.0 - ct * ct);
    for (int p = 0; p < nphi; ++p) {
      const double phi = 2.0 * M_PI * p / nphi;
      const Vec3 d(st * std::cos(phi), st * std::sin(phi), ct);
      sh_eval(3, d, y);
      const double w = node[1] * 2.0 * M_PI / nphi;
      for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) gram(i, j) += w * y[i] * y[j];
    }
  }
  CHECK(max_abs_diff(gram, MatX::Identity(16, 16)) < 1e-12);
}

TEST_CASE("sh gradients match central differences") {
  std::mt19937_64 rng(17);
  double yp[kShMaxBasis], ym[kShMaxBasis], y[kShMaxBasis];
  Vec3 dy[kShMaxBasis];
  const double h = 1e-6;
  for (int t = 0; t < 20; ++t) {
    const Vec3 d = test::random_unit(rng);
    sh_eval_grad(3, d, y, dy);
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 dp = d, dm = d;
      dp[axis] += h;
      dm[axis] -= h;
      // The gradient is of the polynomial extension, so probe off-sphere too.
      sh_eval(3, dp, yp);
      sh_eval(3, dm, ym);
      for (int b = 0; b < 16; ++b) {
        const double fd = (yp[b] - ym[b]) / (2.0 * h);
        CHECK(dy[b][axis] == doctest::Approx(fd).epsilon(1e-5).scale(1.0));
      }
    }
  }
}
