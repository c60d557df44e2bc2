#pragma once

#include "tunnelrec/core/geometry.hpp"

#include <cstdint>
#include <vector>

namespace tunnelrec::sim {

/// Spiral capture: the camera turns about the tunnel axis by
/// `rotation_step` per image while advancing `forward_step` along it.
/// Frame k sits at start_offset + k * forward_step * y with rotation
/// R_y(k * rotation_step), then receives independent Gaussian jitter.
struct TrajectorySpec {
  int images_per_rotation = 10;
  int rotation_count = 10;
  double forward_step = 0.15;          // m per image
  double rotation_step = 2 * M_PI / 10;  // rad per image
  Vec3 start_offset = Vec3::Zero();    // camera center of frame 0
  Vec3 translation_noise_sd{0.02, 0.01, 0.02};  // m, per world axis
  double rotation_noise_sd = 2.0 * M_PI / 180.0;  // rad, per axis-angle component

  int frame_count() const { return images_per_rotation * rotation_count; }
  /// Full-coverage spiral step 2 pi / n for the current images_per_rotation.
  double full_turn_step() const { return 2.0 * M_PI / images_per_rotation; }
  /// Throws InvalidArgument on non-positive counts or negative deviations.
  void validate() const;
  TrajectorySpec noiseless() const;
};

/// Deterministic per seed. Jitter is applied in the camera frame for the
/// rotation (R = R_spiral * exp(w)) and in the world frame for the translation.
std::vector<PoseSE3> generate_trajectory(const TrajectorySpec& spec, std::uint64_t seed);

}  // namespace tunnelrec::sim
