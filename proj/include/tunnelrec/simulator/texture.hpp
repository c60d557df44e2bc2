#pragma once

#include "tunnelrec/core/geometry.hpp"
#include "tunnelrec/io/image.hpp"

#include <cstdint>
#include <memory>
#include <string>

namespace tunnelrec::sim {

using Color = Eigen::Vector3d;  // RGB in [0, 255]

/// Wall appearance as a function of surface coordinates in meters (see
/// surface_coordinates). Implementations are immutable and thread safe.
class Texture {
 public:
  virtual ~Texture() = default;
  virtual Color sample(SurfaceId surface, const Vec2& coords) const = 0;
};

enum class TextureKind { Checkerboard, Brick, Noise, Raster };

struct TextureSpec {
  TextureKind kind = TextureKind::Noise;
  /// Checker cell size, brick length, or noise feature size, in meters.
  double scale = 0.25;
  std::uint64_t seed = 1;
  /// Raster mode: image file tiled over the wall.
  std::string raster_path;
  double raster_meters_per_pixel = 0.002;
};

TextureKind parse_texture_kind(const std::string& name);

/// Alternating dark and light squares of side `cell`.
std::shared_ptr<const Texture> make_checkerboard(double cell, Color dark = {40, 40, 40},
                                                 Color light = {220, 220, 220});

/// Running-bond brickwork, brick length x 0.4 length, with 8% mortar joints.
/// Brick colors vary per brick from a hash of the seed and brick index.
std::shared_ptr<const Texture> make_brick(double length, std::uint64_t seed);

/// Smooth colored value noise: three octaves starting at `feature` meters.
std::shared_ptr<const Texture> make_noise(double feature, std::uint64_t seed);

/// Raster tiled over the wall with bilinear filtering.
std::shared_ptr<const Texture> make_raster(Image image, double meters_per_pixel);

std::shared_ptr<const Texture> make_texture(const TextureSpec& spec);

}  // namespace tunnelrec::sim
