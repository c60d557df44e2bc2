#pragma once

#include "tunnelrec/simulator/renderer.hpp"
#include "tunnelrec/simulator/trajectory.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tunnelrec::sim {

std::string frame_filename(int index);  // frame_0007.png

struct DatasetSummary {
  std::vector<PoseSE3> poses;
  int frames_written = 0;
};

/// Generates the trajectory, renders every frame and writes frame_%04d.png,
/// groundtruth.csv and, when the rig occluder is enabled, mask.png into
/// out_dir (created if needed).
DatasetSummary simulate_dataset(const TrajectorySpec& spec, const Scene& scene,
                                const CameraIntrinsics& K, std::uint64_t seed,
                                const std::filesystem::path& out_dir, int threads = 1);

/// Loads frame_%04d.png for one frame index.
Image load_frame(const std::filesystem::path& dir, int index);

}  // namespace tunnelrec::sim
