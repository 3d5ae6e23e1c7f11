// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/camera.hpp"

#include <cmath>
#include <stdexcept>

namespace asplat {

PinholeCamera look_at_camera(int width, int height, double fov_y_deg, const Vec3& eye,
                             const Vec3& target, const Vec3& up) {
  if (width < 1 || height < 1 || !(fov_y_deg > 0.0) || !(fov_y_deg < 180.0))
    throw std::invalid_argument("bad camera size or field of view");
  const Vec3 fwd_raw = target - eye;
  if (fwd_raw.norm() < 1e-12) throw std::invalid_argument("camera eye coincides with target");
  const Vec3 z = fwd_raw.normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) throw std::invalid_argument("view direction is parallel to up");
  x.normalize();
  const Vec3 y = z.cross(x);  // y-down for the x-right z-forward frame

  PinholeCamera cam;
  cam.width = width;
  cam.height = height;
  cam.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * M_PI / 180.0);
  cam.fx = cam.fy;
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.world_to_cam.rotation.row(0) = x.transpose();
  cam.world_to_cam.rotation.row(1) = y.transpose();
  cam.world_to_cam.rotation.row(2) = z.transpose();
  cam.world_to_cam.translation = -(cam.world_to_cam.rotation * eye);
  return cam;
}

}  // namespace asplat
