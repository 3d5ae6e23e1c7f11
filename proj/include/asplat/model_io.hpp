// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "asplat/model.hpp"

namespace asplat {

/// Checkpoint signature; the first 8 bytes of every model file.
inline constexpr char kModelMagic[] = "ASPLATM1";

/// Header fields of a checkpoint, readable without touching the payload.
struct ModelHeaderInfo {
  int version = 0;
  int count = 0;
  int sh_degree = 0;
  int n_b = 0;
  int n_l = 0;
  int latent_frames = 0;
  std::string skinning_mode;
};

/// Writes the complete model (template included, so a checkpoint is
/// self-contained) as: magic, little-endian u64 header length, JSON header,
/// then raw little-endian f64 payload sections in the order the header
/// declares them. Throws std::runtime_error on IO failure or non-finite
/// parameter values.
void save_model(const AvatarModel& model, const std::string& path);

/// Reads a checkpoint in a single forward pass (no seeks). Throws
/// std::runtime_error on magic/version mismatch, malformed headers,
/// truncation, or non-finite payload values; truncation and non-finite
/// errors report the absolute byte offset.
AvatarModel load_model(const std::string& path);

/// Parses only the header of a checkpoint (magic + JSON block).
ModelHeaderInfo read_model_header(const std::string& path);

}  // namespace asplat
