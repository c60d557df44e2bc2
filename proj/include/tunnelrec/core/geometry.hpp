#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <variant>

namespace tunnelrec {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Frames: camera +z is the optical axis, +x right, +y down (image rows).
// World +y runs along the tunnel axis and +z is up, so a camera with the
// identity rotation looks straight up with its rows along the tunnel.

/// Pinhole camera with two-term Brown radial distortion applied to
/// normalized image coordinates. Pixel (col, row) covers [col, col+1) x
/// [row, row+1), so the image spans [0, width] x [0, height] and the
/// default principal point is the image center.
struct CameraIntrinsics {
  double f = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  double omega_h = 0.0;  // radians
  double omega_v = 0.0;  // radians
  double k1 = 0.0;
  double k2 = 0.0;

  /// Builds intrinsics and derives the fields of view from the image size.
  static CameraIntrinsics pinhole(double f, double cx, double cy, int width, int height,
                                  double k1 = 0.0, double k2 = 0.0);
  /// Centered principal point, focal length chosen for the horizontal FoV.
  static CameraIntrinsics from_horizontal_fov(double omega_h, int width, int height,
                                              double k1 = 0.0, double k2 = 0.0);

  /// Throws InvalidArgument when an invariant does not hold.
  void validate() const;

  double distortion_factor(double r2) const { return 1.0 + r2 * (k1 + k2 * r2); }
  bool has_distortion() const { return k1 != 0.0 || k2 != 0.0; }
  bool contains(const Vec2& pixel) const {
    return pixel.x() >= 0.0 && pixel.y() >= 0.0 && pixel.x() <= width && pixel.y() <= height;
  }
};

/// Rigid camera-to-world transform: p_world = rotation * p_cam + translation.
/// The translation is therefore the camera center in world coordinates.
struct PoseSE3 {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static PoseSE3 identity() { return {}; }
  static PoseSE3 from_axis_angle(const Vec3& axis_angle, const Vec3& translation);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  PoseSE3 inverse() const;
  Vec3 axis_angle() const;
  void validate(double tol = 1e-9) const;
};

/// compose(a, b) applies b first, then a.
PoseSE3 compose(const PoseSE3& a, const PoseSE3& b);
PoseSE3 invert(const PoseSE3& p);

Mat3 so3_exp(const Vec3& w);
Vec3 so3_log(const Mat3& R);
Mat3 skew(const Vec3& v);
/// Re-orthonormalizes a nearly orthonormal matrix (nearest rotation).
Mat3 nearest_rotation(const Mat3& M);
/// Angle of the relative rotation a^T b in radians.
double rotation_angle_between(const Mat3& a, const Mat3& b);
Mat3 rotation_about_y(double angle);

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Ray() = default;
  /// Normalizes the direction; throws on a zero vector.
  Ray(const Vec3& origin, const Vec3& direction);
  Vec3 at(double t) const { return origin + t * direction; }
};

/// Plane {x : normal . x = offset} with the unit normal pointing into the
/// tunnel interior.
struct Plane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  double signed_distance(const Vec3& p) const { return normal.dot(p) - offset; }
};

/// Circular tunnel of the given radius around the world y axis.
struct Cylinder {
  double radius = 3.0;
};

/// Rectangular underpass cross-section, extruded along world y.
struct BoxSection {
  Plane floor;
  Plane ceiling;
  Plane left;
  Plane right;

  /// Axis-aligned box: floor at z = -floor_depth, ceiling at z = ceiling_height,
  /// left wall at x = -left_width, right wall at x = right_width.
  static BoxSection axis_aligned(double floor_depth, double ceiling_height, double left_width,
                                 double right_width);
};

enum class SurfaceId { Wall = 0, Floor = 1, Left = 2, Right = 3, Ceiling = 4 };
const char* surface_name(SurfaceId id);

struct ScenePrior {
  std::variant<Cylinder, BoxSection> shape;

  static ScenePrior cylinder(double radius) { return {Cylinder{radius}}; }
  static ScenePrior box(const BoxSection& box) { return {box}; }

  bool is_cylinder() const { return std::holds_alternative<Cylinder>(shape); }
  const Cylinder& as_cylinder() const { return std::get<Cylinder>(shape); }
  const BoxSection& as_box() const { return std::get<BoxSection>(shape); }

  void validate() const;
  /// True when p lies strictly inside the prior volume.
  bool contains(const Vec3& p) const;
  /// Unsigned distance from p to the prior surface in meters.
  double distance_to_surface(const Vec3& p) const;
  /// Returns a copy with every length multiplied by s.
  ScenePrior scaled(double s) const;
};

/// Pinhole projection of a camera-frame point followed by radial distortion.
/// Throws PointBehindCamera when p_cam.z <= 0.
Vec2 project(const CameraIntrinsics& K, const Vec3& p_cam);

/// Normalized, distortion-free coordinates of a pixel (inverse of the
/// distortion step). Throws ConvergenceError if the fixed-point inversion
/// does not settle within 20 iterations.
Vec2 undistort_normalized(const CameraIntrinsics& K, const Vec2& pixel);

/// Camera-frame ray through a pixel. Throws InvalidArgument outside the image.
Ray pixel_ray(const CameraIntrinsics& K, const Vec2& pixel);

}  // namespace tunnelrec
