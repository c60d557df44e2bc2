#pragma once

#include "tunnelrec/core/geometry.hpp"
#include "tunnelrec/io/image.hpp"
#include "tunnelrec/mapping/dense.hpp"
#include "tunnelrec/mapping/surface.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tunnelrec {

struct AtlasSpec {
  /// Texels per full turn of the cylinder unwrap.
  int cylinder_width = 7500;
  /// Along the tunnel axis, and across box planes.
  double texels_per_meter = 1.0 / 0.0017;
  /// Axial range of the atlas; points outside it are ignored.
  double y_min = 0.0;
  double y_max = 1.0;
  /// Average all contributions instead of keeping the most perpendicular one.
  bool averaging = false;

  void validate() const;
  int rows() const;
};

/// Texel coordinates of a cylinder wall point (continuous; the texel index
/// is the floor). u = (atan2(x, z) / 2 pi mod 1) * width,
/// v = (y - y_min) * texels_per_meter. Throws GeometryError when the point is
/// farther than 1e-6 r from the wall.
Vec2 cylindrical_uv(const Vec3& position, double radius, const AtlasSpec& spec);

/// Largest spacing, in surface meters, between the wall hits of adjacent
/// pixels over all frames (sampled every `stride` pixels). First component
/// is circumferential / across the plane, second axial.
Vec2 max_pixel_spacing(const CameraIntrinsics& K, const ScenePrior& prior,
                       const std::vector<PoseSE3>& poses, int stride = 8);

/// Axial interval that every viewing direction of a full-coverage spiral has
/// seen: from the latest lower edge of the first turn to the earliest upper
/// edge of the last turn, using the narrowest axial footprint of the view
/// (the view edge). Throws InvalidArgument with fewer than one full turn.
Interval covered_axial_range(const CameraIntrinsics& K, const ScenePrior& prior,
                             const std::vector<PoseSE3>& poses, int images_per_rotation);

/// Atlas whose texels are `margin` times the largest pixel spacing on the
/// wall, so a gap-free capture fills every texel, over covered_axial_range.
AtlasSpec atlas_spec_for(const CameraIntrinsics& K, const ScenePrior& prior,
                         const std::vector<PoseSE3>& poses, int images_per_rotation,
                         double margin = 1.3);

struct AtlasSurface {
  SurfaceId surface = SurfaceId::Wall;
  double u_origin = 0.0;  // surface coordinate (m) of texel column 0 on box planes
  Image color;            // RGB
  Image holes;            // 255 where no point landed
  std::vector<std::int32_t> source_frame;  // -1 for holes
  std::size_t hole_count = 0;
};

struct TextureAtlas {
  AtlasSpec spec;
  std::vector<AtlasSurface> surfaces;
  std::size_t hole_count() const;
  const AtlasSurface& surface(SurfaceId id) const;
};

/// Per-texel accumulation. Without averaging a texel keeps the point with
/// the largest incidence_cos; ties go to the smaller camera distance, then
/// the lower frame, then the lower pixel index. Every rule is a pure max, so
/// the result does not depend on insertion order and partial accumulators
/// merge commutatively.
class AtlasAccumulator {
 public:
  AtlasAccumulator(const ScenePrior& prior, const AtlasSpec& spec);

  void add(std::span<const DensePoint> points);
  void merge(const AtlasAccumulator& other);
  TextureAtlas finish() const;

  /// Texel (surface index, column, row) a point maps to, or false when it
  /// falls outside the atlas.
  bool locate(const DensePoint& p, std::size_t& surface, int& col, int& row) const;

 private:
  struct Texel {
    float incidence = -1.0f;
    float distance = 0.0f;
    std::int32_t frame = -1;
    std::int32_t pixel = 0;
    std::array<std::uint8_t, 3> color{};
    std::uint32_t count = 0;
    std::array<std::uint32_t, 3> sum{};
  };
  struct Layer {
    SurfaceId surface;
    double u_origin = 0.0;
    int width = 0, height = 0;
    std::vector<Texel> texels;
  };
  static bool better(const Texel& a, const Texel& b);
  void put(Texel& t, const Texel& candidate) const;

  ScenePrior prior_;
  AtlasSpec spec_;
  std::vector<Layer> layers_;
};

/// Accumulates a point collection in one go.
TextureAtlas stitch(std::span<const DensePoint> points, const ScenePrior& prior,
                    const AtlasSpec& spec);

/// atlas_<surface>.png and holes_<surface>.png for each surface.
void write_atlas(const TextureAtlas& atlas, const std::filesystem::path& dir);

}  // namespace tunnelrec
