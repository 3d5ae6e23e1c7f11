// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asplat/biped.hpp"
#include "asplat/camera.hpp"
#include "asplat/model.hpp"
#include "asplat/optim.hpp"
#include "asplat/skeleton.hpp"

namespace asplat {

/// One catalogued view: everything needed to pose and score a frame except
/// the pixels, which stay on disk until load_samples.
struct DatasetFrame {
  std::string image_path;  // relative to the manifest directory
  PinholeCamera cam;
  Pose pose;
  int index = 0;       // position within this split, contiguous from 0
  int sequence = 0;    // frame number in the generating sequence
  int latent_row = 0;  // latent-table row driving this frame
};

struct FrameDataset {
  KinematicTemplate tpl;
  std::vector<DatasetFrame> frames;
  std::string split;  // "train" or "test"
  std::string root;   // directory all image paths are relative to
};

/// Sinusoidal joint swing: angle(t) = amplitude * sin(2 pi frequency t + phase)
/// about axis in the joint's local frame, with t running 0..1 over the clip.
/// Several waves on one joint add their rotation vectors.
struct MotionWave {
  int joint = 1;
  Vec3 axis = Vec3::UnitX();
  double amplitude = 0.3;  // radians
  double frequency = 1.0;  // cycles per clip
  double phase = 0.0;
};

struct SynthConfig {
  int frames = 60;  // sequence length
  int width = 128, height = 128;
  double fov_y_deg = 50.0;
  double orbit_radius = 2.6;
  double orbit_elevation = 0.35;  // eye height above the body center, meters
  double orbit_turns = 1.0;       // camera revolutions over the clip
  std::vector<MotionWave> motion;  // empty: the default limb-swing script
  double root_sway = 0.03;         // lateral root oscillation, meters

  // A skirt whose pendulum swing is driven by a bone that the exported
  // template does not contain: deformation the skeleton cannot explain.
  bool hidden_appendage = false;
  double hidden_amplitude = 0.8;  // radians
  double hidden_frequency = 1.0;  // cycles per clip

  int gt_count = 500;  // ground-truth component count
  int gt_sh_degree = 1;
  int gt_grid_res = 8;         // ground-truth skinning-correction grid
  double gt_delta_amp = 0.25;  // strength of the ground-truth corrections

  double pose_noise = 0.0;  // sigma of the exported joint angles, radians
  uint64_t seed = 0;
  int threads = 0;
  BipedConfig biped;  // body shape and sampling; skirt flags are derived

  /// Throws std::invalid_argument: frames < 2, non-positive image or camera
  /// numbers, or negative noise. Motion waves are checked against the
  /// exported skeleton when the sequence is generated.
  void validate() const;
};

struct SynthResult {
  FrameDataset train, test;
  AvatarModel gt_model;           // lives on gt_template
  KinematicTemplate gt_template;  // includes the hidden bone when enabled
  std::vector<Pose> gt_poses;     // clean generating poses, every frame
};

/// Renders a synthetic clip of the procedural biped with a randomized
/// ground-truth model and writes it out: out_dir/manifest.json,
/// out_dir/gt_model.asplat, out_dir/images/frame_NNNNNN.png for every frame.
/// Train frames are 0,4,8,...; test frames 2,6,10,.... Byte-identical for a
/// fixed config. Throws std::runtime_error when out_dir cannot be created or
/// written.
SynthResult generate_synthetic_sequence(const SynthConfig& cfg, const std::string& out_dir);

/// Loads one split ("train" or "test") from a manifest written by
/// generate_synthetic_sequence. Throws std::runtime_error on missing or
/// malformed manifests and unsupported schema versions.
FrameDataset load_dataset(const std::string& manifest_path, const std::string& split);

/// Latent-table row for a probe frame: the train frame with the nearest
/// sequence number, ties resolved toward the earlier train frame.
int nearest_train_row(int sequence, const std::vector<int>& train_sequences);

/// Reads the images off disk and pairs them with cameras, poses and latent
/// rows. Throws std::runtime_error when an image disagrees with its camera's
/// size.
std::vector<FrameSample> load_samples(const FrameDataset& ds);

/// fit_samples over a dataset split: loads the images and forwards the
/// dataset's template.
FitResult fit_dataset(const FrameDataset& train, const FitConfig& cfg,
                      const AvatarModel* init = nullptr);

}  // namespace asplat
