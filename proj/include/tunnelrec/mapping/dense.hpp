#pragma once

#include "tunnelrec/core/geometry.hpp"
#include "tunnelrec/io/image.hpp"
#include "tunnelrec/io/ply.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace tunnelrec {

struct DensePoint {
  Vec3 position = Vec3::Zero();
  std::array<std::uint8_t, 3> color{};
  int source_frame = 0;
  int source_x = 0, source_y = 0;  // pixel indices; the ray passes through the pixel center
  SurfaceId surface = SurfaceId::Wall;
  double incidence_cos = 0.0;  // |ray . surface normal|
  double distance = 0.0;       // camera center to position, m
};

/// Camera-frame unit rays through every pixel center, row-major. Shared by
/// all frames of a sequence.
struct RayTable {
  int width = 0, height = 0;
  std::vector<double> x, y, z;
  explicit RayTable(const CameraIntrinsics& K);
};

/// One point per unmasked pixel of `image`, intersecting each pixel ray with
/// the prior. `mask` may be empty; otherwise nonzero mask pixels are
/// skipped. Points come out in row-major pixel order. Throws GeometryError
/// when the camera center is not inside the prior and InvalidArgument on
/// size mismatches.
std::vector<DensePoint> reconstruct_frame(const Image& image, int frame, const PoseSE3& pose,
                                          const RayTable& rays, const ScenePrior& prior,
                                          const Image& mask = {}, int threads = 1);

using FrameSource = std::function<Image(int frame)>;
using PointSink = std::function<void(int frame, std::span<const DensePoint> points)>;

/// Streams the dense reconstruction frame by frame into `sink`, so the full
/// cloud is never held in memory. Returns the total number of points.
std::uint64_t reconstruct_dense(const FrameSource& frames, const std::vector<PoseSE3>& poses,
                                const CameraIntrinsics& K, const ScenePrior& prior,
                                const Image& mask, const PointSink& sink, int threads = 1);

PlyVertex to_ply_vertex(const DensePoint& p);

/// Writes points as a PLY with x, y, z, red, green, blue.
void export_pointcloud(std::span<const DensePoint> points, const std::filesystem::path& path,
                       PlyFormat format = PlyFormat::BinaryLittleEndian);

}  // namespace tunnelrec
