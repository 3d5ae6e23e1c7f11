// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>

#include "asplat/geom.hpp"

namespace asplat::test {

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Vec3 v(n(rng), n(rng), n(rng));
  while (v.norm() < 1e-6) v = Vec3(n(rng), n(rng), n(rng));
  return v.normalized();
}

inline Quaternion random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Quaternion q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

}  // namespace asplat::test
