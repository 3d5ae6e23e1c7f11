// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "asplat/skeleton.hpp"

namespace asplat {

/// Procedural capsule biped used by the synthetic data pipeline. The body is
/// 11 joints (pelvis root, torso, head, two 2-segment arms, two 2-segment
/// legs) with one capsule per non-root joint. An optional skirt adds a cone
/// of extra surface samples: rigidly attached to the pelvis in the exported
/// flavor, or driven by a 12th (hidden) joint in the ground-truth flavor.
struct BipedConfig {
  double height = 1.7;          // overall scale, meters
  double limb_radius = 1.0;     // multiplier on capsule radii
  double sample_density = 700;  // surface samples per unit area
  uint64_t seed = 1234;
  bool skirt = false;
  bool skirt_hidden_bone = false;  // only meaningful with skirt = true
  double skinning_sigma = 0.05;
};

struct Biped {
  KinematicTemplate tpl;
  std::vector<int> sample_owner;  // owning joint per surface sample
  int hidden_joint = -1;          // skirt joint index, or -1
};

/// Deterministic for a fixed config. Throws std::invalid_argument on
/// non-positive dimensions or densities. The two skirt flavors produce
/// identical sample positions for the same seed; only joint count and
/// ownership differ.
Biped build_synthetic_biped(const BipedConfig& config);

}  // namespace asplat
