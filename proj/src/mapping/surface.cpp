#include "tunnelrec/mapping/surface.hpp"

#include "tunnelrec/core/error.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace tunnelrec {

namespace {

constexpr SurfaceId kBoxOrder[] = {SurfaceId::Floor, SurfaceId::Left, SurfaceId::Right,
                                   SurfaceId::Ceiling};

Vec3 plane_horizontal(const Plane& p) { return p.normal.cross(Vec3::UnitY()); }

}  // namespace

const Plane& box_plane(const BoxSection& box, SurfaceId surface) {
  switch (surface) {
    case SurfaceId::Floor: return box.floor;
    case SurfaceId::Left: return box.left;
    case SurfaceId::Right: return box.right;
    case SurfaceId::Ceiling: return box.ceiling;
    case SurfaceId::Wall: break;
  }
  throw InvalidArgument("the cylinder wall is not a box plane");
}

SurfaceHit intersect_ray_prior(const Ray& ray, const ScenePrior& prior) {
  if (!prior.contains(ray.origin)) {
    throw GeometryError(fmt::format("ray origin ({}, {}, {}) is not inside the prior",
                                    ray.origin.x(), ray.origin.y(), ray.origin.z()));
  }
  const Vec3& o = ray.origin;
  const Vec3& d = ray.direction;
  SurfaceHit hit;
  if (prior.is_cylinder()) {
    const double r = prior.as_cylinder().radius;
    const double a = d.x() * d.x() + d.z() * d.z();
    const double b = o.x() * d.x() + o.z() * d.z();
    const double c = o.x() * o.x() + o.z() * o.z() - r * r;
    const double disc = b * b - a * c;
    if (!(a > 0.0) || !(disc >= 0.0)) {
      throw GeometryError("ray runs parallel to the tunnel axis and never meets the wall");
    }
    hit.distance = (std::sqrt(disc) - b) / a;
    hit.position = ray.at(hit.distance);
    hit.surface = SurfaceId::Wall;
    hit.incidence_cos = std::abs(d.x() * hit.position.x() + d.z() * hit.position.z()) / r;
    return hit;
  }
  const BoxSection& box = prior.as_box();
  double best = std::numeric_limits<double>::infinity();
  for (SurfaceId id : kBoxOrder) {
    const Plane& p = box_plane(box, id);
    const double nd = p.normal.dot(d);
    if (!(nd < 0.0)) continue;  // moving away from or parallel to this plane
    const double t = -p.signed_distance(o) / nd;
    // Strict comparison keeps the earlier plane in the priority order on edges.
    if (t < best) {
      best = t;
      hit.surface = id;
      hit.incidence_cos = -nd;
    }
  }
  if (!std::isfinite(best)) {
    throw GeometryError("ray runs parallel to the tunnel axis and never meets a wall");
  }
  hit.distance = best;
  hit.position = ray.at(best);
  return hit;
}

SurfaceId classify_surface(const Vec3& position, const BoxSection& box, double tol) {
  for (SurfaceId id : kBoxOrder) {
    if (box_plane(box, id).signed_distance(position) < -tol) {
      throw GeometryError("point lies outside the box section");
    }
  }
  for (SurfaceId id : kBoxOrder) {
    if (std::abs(box_plane(box, id).signed_distance(position)) <= tol) return id;
  }
  throw GeometryError(fmt::format("point ({}, {}, {}) is not on any box surface", position.x(),
                                  position.y(), position.z()));
}

Vec2 surface_coordinates(const ScenePrior& prior, SurfaceId surface, const Vec3& position) {
  if (prior.is_cylinder()) {
    const double r = prior.as_cylinder().radius;
    return {r * std::atan2(position.x(), position.z()), position.y()};
  }
  return {position.dot(plane_horizontal(box_plane(prior.as_box(), surface))), position.y()};
}

Vec3 surface_point(const ScenePrior& prior, SurfaceId surface, const Vec2& coords) {
  if (prior.is_cylinder()) {
    const double r = prior.as_cylinder().radius;
    const double phi = coords.x() / r;
    return {r * std::sin(phi), coords.y(), r * std::cos(phi)};
  }
  const Plane& p = box_plane(prior.as_box(), surface);
  const Vec3 h = plane_horizontal(p);
  // In-plane point with the given horizontal coordinate, then along y.
  Vec3 q = p.offset * p.normal + coords.x() * h;
  q.y() = coords.y();
  return q;
}

Interval box_plane_extent(const BoxSection& box, SurfaceId surface) {
  const Plane& p = box_plane(box, surface);
  const Vec3 h = plane_horizontal(p);
  const Vec3 base = p.offset * p.normal;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (SurfaceId other : kBoxOrder) {
    if (other == surface) continue;
    const Plane& q = box_plane(box, other);
    const double nh = q.normal.dot(h);
    if (std::abs(nh) < 1e-12) continue;  // the opposing plane
    const double s = -q.signed_distance(base) / nh;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return {lo, hi};
}

}  // namespace tunnelrec
