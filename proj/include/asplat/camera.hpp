// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "asplat/geom.hpp"

namespace asplat {

/// Pinhole camera. Camera space is x-right, y-down, z-forward (right handed);
/// pixel (px, py) = (fx * x/z + cx, fy * y/z + cy), with pixel centers at
/// half-integer coordinates.
struct PinholeCamera {
  int width = 0, height = 0;
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  RigidTransform world_to_cam;

  Vec3 center() const { return world_to_cam.inverse().translation; }
  Vec3 to_camera(const Vec3& p_world) const { return world_to_cam.apply(p_world); }
  Vec2 project(const Vec3& p_cam) const {
    return Vec2(fx * p_cam.x() / p_cam.z() + cx, fy * p_cam.y() / p_cam.z() + cy);
  }
};

/// Camera at eye looking toward target, vertical field of view in degrees,
/// square pixels, principal point at the image center. Throws
/// std::invalid_argument when the view direction is parallel to up or the
/// sizes/fov are non-positive.
PinholeCamera look_at_camera(int width, int height, double fov_y_deg, const Vec3& eye,
                             const Vec3& target, const Vec3& up = Vec3(0, 1, 0));

}  // namespace asplat
