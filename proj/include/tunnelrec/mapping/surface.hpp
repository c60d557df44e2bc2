#pragma once

#include "tunnelrec/core/geometry.hpp"

namespace tunnelrec {

struct SurfaceHit {
  Vec3 position = Vec3::Zero();
  SurfaceId surface = SurfaceId::Wall;
  double distance = 0.0;       // along the unit ray direction
  double incidence_cos = 0.0;  // |direction . surface normal|
};

/// Nearest positive intersection of a world-frame ray with the prior.
/// Throws GeometryError when the origin is not strictly inside the prior or
/// the ray escapes (a ray parallel to the tunnel axis).
SurfaceHit intersect_ray_prior(const Ray& ray, const ScenePrior& prior);

/// Which box plane a surface point lies on. Points on an edge resolve in the
/// order floor, left, right, ceiling. Throws GeometryError when the point is
/// farther than tol from every plane or outside the cross-section.
SurfaceId classify_surface(const Vec3& position, const BoxSection& box, double tol = 1e-6);

/// 2D coordinates of a surface point, in meters: (circumferential or
/// in-plane horizontal position, axial y). Cylinder: (r * atan2(x, z), y).
/// Box plane: (position . h, y), where h = normal x (0, 1, 0).
Vec2 surface_coordinates(const ScenePrior& prior, SurfaceId surface, const Vec3& position);

/// Inverse of surface_coordinates.
Vec3 surface_point(const ScenePrior& prior, SurfaceId surface, const Vec2& coords);

/// Range of the horizontal surface coordinate covered by a box plane, i.e.
/// the segment between its two neighbouring planes.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};
Interval box_plane_extent(const BoxSection& box, SurfaceId surface);

/// Plane of a box surface; its normal points into the interior.
const Plane& box_plane(const BoxSection& box, SurfaceId surface);

}  // namespace tunnelrec
