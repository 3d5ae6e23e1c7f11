// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/biped.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace asplat {

namespace {

struct Capsule {
  int joint;
  Vec3 a, b;
  double radius;
};

// Uniform sample on a capsule surface (cylindrical side plus two hemispherical
// caps, which together form a full sphere).
Vec3 sample_capsule(const Capsule& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Vec3 axis_raw = c.b - c.a;
  const double len = axis_raw.norm();
  const Vec3 axis = len > 0.0 ? Vec3(axis_raw / len) : Vec3(0, 1, 0);
  Vec3 u = axis.cross(Vec3(1, 0, 0));
  if (u.squaredNorm() < 1e-12) u = axis.cross(Vec3(0, 0, 1));
  u.normalize();
  const Vec3 v = axis.cross(u);

  const double side_area = 2.0 * M_PI * c.radius * len;
  const double cap_area = 4.0 * M_PI * c.radius * c.radius;
  if (uni(rng) * (side_area + cap_area) < side_area) {
    const double t = uni(rng) * len;
    const double phi = uni(rng) * 2.0 * M_PI;
    return c.a + axis * t + (u * std::cos(phi) + v * std::sin(phi)) * c.radius;
  }
  // Sphere point, shifted to whichever cap its axial component points at.
  const double z = 2.0 * uni(rng) - 1.0;
  const double phi = uni(rng) * 2.0 * M_PI;
  const double r_xy = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Vec3 dir = u * (r_xy * std::cos(phi)) + v * (r_xy * std::sin(phi)) + axis * z;
  return (z >= 0.0 ? c.b : c.a) + dir * c.radius;
}

double capsule_area(const Capsule& c) {
  const double len = (c.b - c.a).norm();
  return 2.0 * M_PI * c.radius * len + 4.0 * M_PI * c.radius * c.radius;
}

}  // namespace

Biped build_synthetic_biped(const BipedConfig& config) {
  if (!(config.height > 0.0) || !(config.limb_radius > 0.0) ||
      !(config.sample_density > 0.0) || !(config.skinning_sigma > 0.0))
    throw std::invalid_argument("biped dimensions and density must be positive");

  const double s = config.height / 1.7;
  const double r = config.limb_radius * s;
  auto at = [&](double x, double y, double z) { return Vec3(x * s, y * s, z * s); };

  Biped out;
  KinematicTemplate& tpl = out.tpl;
  tpl.skinning_sigma = config.skinning_sigma * s;

  tpl.joint_names = {"pelvis",      "spine",       "head",       "l_upper_arm",
                     "l_fore_arm",  "r_upper_arm", "r_fore_arm", "l_thigh",
                     "l_shin",      "r_thigh",     "r_shin"};
  tpl.parents = {-1, 0, 1, 1, 3, 1, 5, 0, 7, 0, 9};
  std::vector<Vec3> joints = {
      at(0.00, 0.95, 0), at(0.00, 1.00, 0), at(0.00, 1.46, 0), at(0.16, 1.38, 0),
      at(0.44, 1.38, 0), at(-0.16, 1.38, 0), at(-0.44, 1.38, 0), at(0.09, 0.90, 0),
      at(0.11, 0.50, 0), at(-0.09, 0.90, 0), at(-0.11, 0.50, 0)};

  std::vector<Capsule> capsules = {
      {1, at(0.00, 1.00, 0), at(0.00, 1.42, 0), 0.13 * r},
      {2, at(0.00, 1.46, 0), at(0.00, 1.66, 0), 0.10 * r},
      {3, at(0.16, 1.38, 0), at(0.44, 1.38, 0), 0.055 * r},
      {4, at(0.44, 1.38, 0), at(0.70, 1.38, 0), 0.045 * r},
      {5, at(-0.16, 1.38, 0), at(-0.44, 1.38, 0), 0.055 * r},
      {6, at(-0.44, 1.38, 0), at(-0.70, 1.38, 0), 0.045 * r},
      {7, at(0.09, 0.90, 0), at(0.11, 0.50, 0), 0.075 * r},
      {8, at(0.11, 0.50, 0), at(0.13, 0.12, 0), 0.055 * r},
      {9, at(-0.09, 0.90, 0), at(-0.11, 0.50, 0), 0.075 * r},
      {10, at(-0.11, 0.50, 0), at(-0.13, 0.12, 0), 0.055 * r},
  };

  const bool hidden = config.skirt && config.skirt_hidden_bone;
  if (hidden) {
    tpl.joint_names.push_back("skirt");
    tpl.parents.push_back(0);
    joints.push_back(at(0.0, 0.93, 0));
  }
  const int skirt_joint = hidden ? 11 : 0;  // rigid flavor hangs off the pelvis

  const int n_b = static_cast<int>(tpl.parents.size());
  tpl.rest_global.resize(n_b);
  for (int k = 0; k < n_b; ++k) tpl.rest_global[k].translation = joints[k];

  // Body samples first, then skirt samples from an independent RNG stream so
  // both skirt flavors generate identical positions.
  std::mt19937_64 rng(config.seed);
  std::vector<Vec3> positions;
  std::vector<int> owner;
  for (const Capsule& c : capsules) {
    const int count = std::max(1, static_cast<int>(std::lround(capsule_area(c) * config.sample_density)));
    for (int i = 0; i < count; ++i) {
      positions.push_back(sample_capsule(c, rng));
      owner.push_back(c.joint);
    }
  }

  if (config.skirt) {
    // Truncated cone from the waist flaring down and out.
    std::mt19937_64 skirt_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double y_top = 0.93 * s, y_bot = 0.60 * s;
    const double r_top = 0.16 * s, r_bot = 0.33 * s;
    const double slant = std::hypot(r_bot - r_top, y_top - y_bot);
    const double area = M_PI * (r_top + r_bot) * slant;
    const int count = std::max(1, static_cast<int>(std::lround(area * config.sample_density)));
    for (int i = 0; i < count; ++i) {
      // Uniform in area over the cone: radius grows with sqrt of the mix.
      const double m = std::sqrt(r_top * r_top + (r_bot * r_bot - r_top * r_top) * uni(skirt_rng));
      const double frac = (m - r_top) / (r_bot - r_top);
      const double y = y_top + (y_bot - y_top) * frac;
      const double phi = uni(skirt_rng) * 2.0 * M_PI;
      positions.emplace_back(m * std::cos(phi), y, m * std::sin(phi));
      owner.push_back(skirt_joint);
    }
  }

  const int s_count = static_cast<int>(positions.size());
  tpl.sample_positions = std::move(positions);
  tpl.sample_weights = MatX::Zero(s_count, n_b);
  for (int i = 0; i < s_count; ++i) tpl.sample_weights(i, owner[i]) = 1.0;
  out.sample_owner = std::move(owner);
  out.hidden_joint = hidden ? 11 : -1;

  tpl.validate();
  return out;
}

}  // namespace asplat
