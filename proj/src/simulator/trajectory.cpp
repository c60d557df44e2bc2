#include "tunnelrec/simulator/trajectory.hpp"

#include "tunnelrec/core/error.hpp"

#include <random>

namespace tunnelrec::sim {

void TrajectorySpec::validate() const {
  if (images_per_rotation < 1 || rotation_count < 1) {
    throw InvalidArgument("trajectory needs at least one image and one rotation");
  }
  if (!(translation_noise_sd.minCoeff() >= 0.0) || !(rotation_noise_sd >= 0.0)) {
    throw InvalidArgument("trajectory noise deviations must be non-negative");
  }
  if (!std::isfinite(forward_step) || !std::isfinite(rotation_step)) {
    throw InvalidArgument("trajectory steps must be finite");
  }
}

TrajectorySpec TrajectorySpec::noiseless() const {
  TrajectorySpec s = *this;
  s.translation_noise_sd.setZero();
  s.rotation_noise_sd = 0.0;
  return s;
}

std::vector<PoseSE3> generate_trajectory(const TrajectorySpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<PoseSE3> poses;
  poses.reserve(spec.frame_count());
  for (int k = 0; k < spec.frame_count(); ++k) {
    PoseSE3 p;
    p.rotation = rotation_about_y(k * spec.rotation_step);
    p.translation = spec.start_offset + Vec3(0.0, k * spec.forward_step, 0.0);
    // Draws happen unconditionally so a given seed yields the same noise
    // sequence whatever the deviations are.
    Vec3 dt, dw;
    for (int i = 0; i < 3; ++i) dt[i] = gauss(rng);
    for (int i = 0; i < 3; ++i) dw[i] = gauss(rng);
    p.translation += spec.translation_noise_sd.cwiseProduct(dt);
    if (spec.rotation_noise_sd > 0.0) p.rotation = p.rotation * so3_exp(spec.rotation_noise_sd * dw);
    poses.push_back(p);
  }
  return poses;
}

}  // namespace tunnelrec::sim
