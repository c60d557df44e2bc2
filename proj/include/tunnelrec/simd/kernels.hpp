#pragma once

// Data-parallel inner loops shared by the renderer, dense reconstruction,
// RANSAC scoring and bundle adjustment. Every kernel has a scalar reference
// and an AVX2 variant that performs the same IEEE operations in the same
// order (no FMA contraction), so the two agree bit for bit. The variant is
// picked at runtime from the CPU features; set TUNNELREC_SIMD=scalar to
// force the reference path.

#include "tunnelrec/core/geometry.hpp"

#include <cstddef>
#include <span>

namespace tunnelrec::simd {

enum class Level { Scalar, Avx2 };

/// Best level supported by both the build and the running CPU.
Level detected_level();
/// Level used by the dispatching overloads.
Level active_level();
/// Selects the dispatch level; requests above detected_level() are clamped.
void set_active_level(Level level);
const char* level_name(Level level);

/// Structure-of-arrays view of n 3-vectors.
struct ConstSoa3 {
  std::span<const double> x, y, z;
  std::size_t size() const { return x.size(); }
};
struct Soa3 {
  std::span<double> x, y, z;
  std::size_t size() const { return x.size(); }
  operator ConstSoa3() const { return {x, y, z}; }
};

/// out = R * in.
void rotate(Level level, const Mat3& R, ConstSoa3 in, Soa3 out);

/// Casts rays from one origin against the cylinder x^2 + z^2 = radius^2 and
/// returns the far (exit) root, which is the only positive one for origins
/// inside. Directions must be unit length. Rays parallel to the axis yield
/// NaN in every output.
struct CylinderHits {
  std::span<double> t;
  Soa3 position;
  std::span<double> incidence;  // |direction . outward normal|
};
void intersect_cylinder(Level level, const Vec3& origin, double radius, ConstSoa3 directions,
                        CylinderHits out);

/// Camera-frame points to distorted pixels; z <= 0 yields NaN.
struct ProjectionParams {
  double f, cx, cy, k1, k2;
  static ProjectionParams from(const CameraIntrinsics& K) { return {K.f, K.cx, K.cy, K.k1, K.k2}; }
};
void project(Level level, const ProjectionParams& K, ConstSoa3 points, std::span<double> u,
             std::span<double> v);

/// Squared Sampson distance of x2^T F x1 = 0 for each correspondence.
/// F is row-major.
void sampson_squared(Level level, const double* F, std::span<const double> x1,
                     std::span<const double> y1, std::span<const double> x2,
                     std::span<const double> y2, std::span<double> out);

// Overloads that use active_level().
inline void rotate(const Mat3& R, ConstSoa3 in, Soa3 out) { rotate(active_level(), R, in, out); }
inline void intersect_cylinder(const Vec3& origin, double radius, ConstSoa3 directions,
                               CylinderHits out) {
  intersect_cylinder(active_level(), origin, radius, directions, out);
}
inline void project(const ProjectionParams& K, ConstSoa3 points, std::span<double> u,
                    std::span<double> v) {
  project(active_level(), K, points, u, v);
}
inline void sampson_squared(const double* F, std::span<const double> x1,
                            std::span<const double> y1, std::span<const double> x2,
                            std::span<const double> y2, std::span<double> out) {
  sampson_squared(active_level(), F, x1, y1, x2, y2, out);
}

}  // namespace tunnelrec::simd
