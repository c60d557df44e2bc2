#include "tunnelrec/mapping/atlas.hpp"

#include "tunnelrec/core/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace tunnelrec {

namespace {

constexpr SurfaceId kBoxSurfaces[] = {SurfaceId::Floor, SurfaceId::Left, SurfaceId::Right,
                                      SurfaceId::Ceiling};

std::optional<SurfaceHit> hit_of(const CameraIntrinsics& K, const ScenePrior& prior,
                                 const PoseSE3& pose, double px, double py) {
  const Vec2 n = undistort_normalized(K, Vec2(px, py));
  try {
    return intersect_ray_prior(Ray(pose.translation, pose.rotation * Vec3(n.x(), n.y(), 1.0)),
                               prior);
  } catch (const GeometryError&) {
    return std::nullopt;
  }
}

}  // namespace

void AtlasSpec::validate() const {
  if (cylinder_width < 1) throw InvalidArgument("atlas width must be at least one texel");
  if (!(texels_per_meter > 0.0)) throw InvalidArgument("texels per meter must be positive");
  if (!(y_max > y_min)) {
    throw InvalidArgument(fmt::format("empty atlas axial range [{}, {}]", y_min, y_max));
  }
}

int AtlasSpec::rows() const {
  return static_cast<int>(std::ceil((y_max - y_min) * texels_per_meter - 1e-9));
}

Vec2 cylindrical_uv(const Vec3& position, double radius, const AtlasSpec& spec) {
  const double rho = std::hypot(position.x(), position.z());
  if (std::abs(rho - radius) > 1e-6 * radius) {
    throw GeometryError(fmt::format("point at radius {} is not on the {} m wall", rho, radius));
  }
  double a = std::atan2(position.x(), position.z()) / (2.0 * M_PI);
  a -= std::floor(a);
  return {a * spec.cylinder_width, (position.y() - spec.y_min) * spec.texels_per_meter};
}

Vec2 max_pixel_spacing(const CameraIntrinsics& K, const ScenePrior& prior,
                       const std::vector<PoseSE3>& poses, int stride) {
  if (stride < 1) throw InvalidArgument("stride must be positive");
  const double circumference =
      prior.is_cylinder() ? 2.0 * M_PI * prior.as_cylinder().radius : 0.0;
  Vec2 worst = Vec2::Zero();
  auto diff = [&](const SurfaceHit& a, const SurfaceHit& b) {
    Vec2 d = (surface_coordinates(prior, b.surface, b.position) -
              surface_coordinates(prior, a.surface, a.position))
                 .cwiseAbs();
    if (circumference > 0.0) d.x() = std::min(d.x(), circumference - d.x());
    return d;
  };
  for (const PoseSE3& pose : poses) {
    for (int r = 0; r + 1 < K.height; r += stride) {
      for (int c = 0; c + 1 < K.width; c += stride) {
        const auto h = hit_of(K, prior, pose, c + 0.5, r + 0.5);
        if (!h) continue;
        for (const auto& [dc, dr] : {std::pair{1, 0}, std::pair{0, 1}}) {
          const auto n = hit_of(K, prior, pose, c + dc + 0.5, r + dr + 0.5);
          if (!n || n->surface != h->surface) continue;
          worst = worst.cwiseMax(diff(*h, *n));
        }
      }
    }
  }
  return worst;
}

Interval covered_axial_range(const CameraIntrinsics& K, const ScenePrior& prior,
                             const std::vector<PoseSE3>& poses, int images_per_rotation) {
  const int n = images_per_rotation;
  if (n < 1 || static_cast<int>(poses.size()) < n) {
    throw InvalidArgument("covered range needs at least one full turn of frames");
  }
  // Per frame: the axial interval seen by every column (narrowest is at the
  // view edges).
  auto frame_interval = [&](const PoseSE3& pose) {
    Interval iv{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
    for (double x : {0.5, 0.5 * K.width, K.width - 0.5}) {
      const auto top = hit_of(K, prior, pose, x, 0.5);
      const auto bottom = hit_of(K, prior, pose, x, K.height - 0.5);
      if (!top || !bottom) throw GeometryError("view corner ray misses the prior");
      iv.lo = std::max(iv.lo, std::min(top->position.y(), bottom->position.y()));
      iv.hi = std::min(iv.hi, std::max(top->position.y(), bottom->position.y()));
    }
    return iv;
  };
  Interval out{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  for (int k = 0; k < n; ++k) out.lo = std::max(out.lo, frame_interval(poses[k]).lo);
  for (std::size_t k = poses.size() - n; k < poses.size(); ++k) {
    out.hi = std::min(out.hi, frame_interval(poses[k]).hi);
  }
  if (!(out.hi > out.lo)) {
    throw InvalidArgument(fmt::format("no axial range is covered by every direction ([{}, {}])",
                                      out.lo, out.hi));
  }
  return out;
}

AtlasSpec atlas_spec_for(const CameraIntrinsics& K, const ScenePrior& prior,
                         const std::vector<PoseSE3>& poses, int images_per_rotation,
                         double margin) {
  if (!(margin > 0.0)) throw InvalidArgument("margin must be positive");
  const Vec2 spacing = max_pixel_spacing(K, prior, poses);
  if (!(spacing.minCoeff() > 0.0)) throw GeometryError("pixel footprint on the wall is zero");
  const Interval range = covered_axial_range(K, prior, poses, images_per_rotation);
  AtlasSpec spec;
  spec.texels_per_meter = 1.0 / (margin * spacing.y());
  if (prior.is_cylinder()) {
    const double circumference = 2.0 * M_PI * prior.as_cylinder().radius;
    spec.cylinder_width = std::max(1, static_cast<int>(std::floor(circumference / (margin * spacing.x()))));
  } else {
    // Box planes share one resolution; use the coarser of the two axes.
    spec.texels_per_meter = 1.0 / (margin * spacing.maxCoeff());
  }
  spec.y_min = range.lo;
  spec.y_max = range.hi;
  return spec;
}

std::size_t TextureAtlas::hole_count() const {
  std::size_t n = 0;
  for (const auto& s : surfaces) n += s.hole_count;
  return n;
}

const AtlasSurface& TextureAtlas::surface(SurfaceId id) const {
  for (const auto& s : surfaces)
    if (s.surface == id) return s;
  throw InvalidArgument(fmt::format("atlas has no '{}' surface", surface_name(id)));
}

AtlasAccumulator::AtlasAccumulator(const ScenePrior& prior, const AtlasSpec& spec)
    : prior_(prior), spec_(spec) {
  prior.validate();
  spec.validate();
  const int rows = spec.rows();
  if (prior.is_cylinder()) {
    Layer l{SurfaceId::Wall, 0.0, spec.cylinder_width, rows, {}};
    l.texels.resize(static_cast<std::size_t>(l.width) * rows);
    layers_.push_back(std::move(l));
    return;
  }
  for (SurfaceId id : kBoxSurfaces) {
    const Interval e = box_plane_extent(prior.as_box(), id);
    Layer l{id, e.lo, std::max(1, static_cast<int>(std::ceil((e.hi - e.lo) * spec.texels_per_meter - 1e-9))),
            rows, {}};
    l.texels.resize(static_cast<std::size_t>(l.width) * rows);
    layers_.push_back(std::move(l));
  }
}

bool AtlasAccumulator::locate(const DensePoint& p, std::size_t& surface, int& col,
                              int& row) const {
  double u = 0.0, v = 0.0;
  if (prior_.is_cylinder()) {
    const Vec2 uv = cylindrical_uv(p.position, prior_.as_cylinder().radius, spec_);
    u = uv.x();
    v = uv.y();
    surface = 0;
  } else {
    surface = layers_.size();
    for (std::size_t i = 0; i < layers_.size(); ++i)
      if (layers_[i].surface == p.surface) surface = i;
    if (surface == layers_.size()) return false;
    const Vec2 sc = surface_coordinates(prior_, p.surface, p.position);
    u = (sc.x() - layers_[surface].u_origin) * spec_.texels_per_meter;
    v = (sc.y() - spec_.y_min) * spec_.texels_per_meter;
  }
  const Layer& l = layers_[surface];
  col = static_cast<int>(std::floor(u));
  row = static_cast<int>(std::floor(v));
  if (prior_.is_cylinder() && col == l.width) col = 0;  // u rounded up to exactly W
  return col >= 0 && col < l.width && row >= 0 && row < l.height;
}

bool AtlasAccumulator::better(const Texel& a, const Texel& b) {
  if (a.incidence != b.incidence) return a.incidence > b.incidence;
  if (a.distance != b.distance) return a.distance < b.distance;
  if (a.frame != b.frame) return a.frame < b.frame;
  return a.pixel < b.pixel;
}

void AtlasAccumulator::put(Texel& t, const Texel& c) const {
  if (t.count == 0 || better(c, t)) {
    t.incidence = c.incidence;
    t.distance = c.distance;
    t.frame = c.frame;
    t.pixel = c.pixel;
    t.color = c.color;
  }
  t.count += c.count;
  for (int ch = 0; ch < 3; ++ch) t.sum[ch] += c.sum[ch];
}

void AtlasAccumulator::add(std::span<const DensePoint> points) {
  for (const DensePoint& p : points) {
    std::size_t s = 0;
    int col = 0, row = 0;
    if (!locate(p, s, col, row)) continue;
    Layer& l = layers_[s];
    Texel c;
    c.incidence = static_cast<float>(p.incidence_cos);
    c.distance = static_cast<float>(p.distance);
    c.frame = p.source_frame;
    c.pixel = p.source_y * 65536 + p.source_x;
    c.color = p.color;
    c.count = 1;
    for (int ch = 0; ch < 3; ++ch) c.sum[ch] = p.color[ch];
    put(l.texels[static_cast<std::size_t>(row) * l.width + col], c);
  }
}

void AtlasAccumulator::merge(const AtlasAccumulator& other) {
  if (other.layers_.size() != layers_.size()) throw InvalidArgument("atlas layouts differ");
  for (std::size_t s = 0; s < layers_.size(); ++s) {
    auto& mine = layers_[s].texels;
    const auto& theirs = other.layers_[s].texels;
    if (mine.size() != theirs.size()) throw InvalidArgument("atlas layouts differ");
    for (std::size_t i = 0; i < mine.size(); ++i) {
      if (theirs[i].count > 0) put(mine[i], theirs[i]);
    }
  }
}

TextureAtlas AtlasAccumulator::finish() const {
  TextureAtlas atlas;
  atlas.spec = spec_;
  for (const Layer& l : layers_) {
    AtlasSurface s;
    s.surface = l.surface;
    s.u_origin = l.u_origin;
    s.color = Image(l.width, l.height, 3, 0);
    s.holes = Image(l.width, l.height, 1, 0);
    s.source_frame.assign(l.texels.size(), -1);
    for (std::size_t i = 0; i < l.texels.size(); ++i) {
      const Texel& t = l.texels[i];
      if (t.count == 0) {
        s.holes.data[i] = 255;
        ++s.hole_count;
        continue;
      }
      s.source_frame[i] = t.frame;
      for (int ch = 0; ch < 3; ++ch) {
        s.color.data[i * 3 + ch] =
            spec_.averaging
                ? static_cast<std::uint8_t>((t.sum[ch] + t.count / 2) / t.count)
                : t.color[ch];
      }
    }
    atlas.surfaces.push_back(std::move(s));
  }
  return atlas;
}

TextureAtlas stitch(std::span<const DensePoint> points, const ScenePrior& prior,
                    const AtlasSpec& spec) {
  AtlasAccumulator acc(prior, spec);
  acc.add(points);
  return acc.finish();
}

void write_atlas(const TextureAtlas& atlas, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : atlas.surfaces) {
    const std::string name = surface_name(s.surface);
    write_png(dir / fmt::format("atlas_{}.png", name), s.color);
    write_png(dir / fmt::format("holes_{}.png", name), s.holes);
  }
}

}  // namespace tunnelrec
