#pragma once

#include "tunnelrec/core/geometry.hpp"
#include "tunnelrec/io/image.hpp"
#include "tunnelrec/simulator/texture.hpp"

#include <memory>
#include <vector>

namespace tunnelrec::sim {

/// Light that stays fixed while the camera turns, so views rotated away from
/// frame 0 (which looks straight up) come out darker. A view at angle phi
/// from vertical is scaled by 1 - strength * (1 - cos phi) / 2.
struct DownwardLight {
  bool enabled = false;
  double strength = 0.6;
};

/// Rig part rigidly attached to the camera, covering a fixed pixel
/// rectangle [x0, x1) x [y0, y1) in every frame.
struct RigOccluder {
  bool enabled = false;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  Color color{90, 200, 60};

  bool covers(int x, int y) const { return enabled && x >= x0 && x < x1 && y >= y0 && y < y1; }
  /// Mask raster (255 inside the rectangle) of the given size.
  Image mask(int width, int height) const;
};

struct Scene {
  ScenePrior prior = ScenePrior::cylinder(3.0);
  std::shared_ptr<const Texture> texture;
  DownwardLight light;
  RigOccluder occluder;
};

/// Unit camera-frame ray directions through every pixel center, stored as
/// structure of arrays in row-major pixel order. Computing these once per
/// camera avoids repeating the distortion inversion for every frame.
struct PixelRays {
  int width = 0, height = 0;
  std::vector<double> x, y, z;
  explicit PixelRays(const CameraIntrinsics& K);
};

/// Ray-cast render of the scene from a camera-to-world pose. Pure and
/// deterministic for any thread count. Throws GeometryError when the camera
/// is not inside the prior.
Image render_view(const Scene& scene, const CameraIntrinsics& K, const PoseSE3& pose,
                  int threads = 1);
Image render_view(const Scene& scene, const PixelRays& rays, const PoseSE3& pose,
                  int threads = 1);

/// Brightness factor of the downward light for a camera pose.
double light_factor(const DownwardLight& light, const PoseSE3& pose);

}  // namespace tunnelrec::sim
