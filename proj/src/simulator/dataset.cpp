#include "tunnelrec/simulator/dataset.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/io/pose_csv.hpp"

#include <fmt/format.h>

namespace tunnelrec::sim {

std::string frame_filename(int index) { return fmt::format("frame_{:04d}.png", index); }

DatasetSummary simulate_dataset(const TrajectorySpec& spec, const Scene& scene,
                                const CameraIntrinsics& K, std::uint64_t seed,
                                const std::filesystem::path& out_dir, int threads) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", out_dir.string(), ec.message()));
  DatasetSummary out;
  out.poses = generate_trajectory(spec, seed);
  const PixelRays rays(K);
  for (std::size_t k = 0; k < out.poses.size(); ++k) {
    const Image img = render_view(scene, rays, out.poses[k], threads);
    write_png(out_dir / frame_filename(static_cast<int>(k)), img);
    ++out.frames_written;
  }
  write_poses_csv(out_dir / "groundtruth.csv", out.poses);
  if (scene.occluder.enabled) write_png(out_dir / "mask.png", scene.occluder.mask(K.width, K.height));
  return out;
}

Image load_frame(const std::filesystem::path& dir, int index) {
  return read_png(dir / frame_filename(index), 3);
}

}  // namespace tunnelrec::sim
