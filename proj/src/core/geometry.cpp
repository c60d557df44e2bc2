#include "tunnelrec/core/geometry.hpp"

#include "tunnelrec/core/error.hpp"

#include <Eigen/SVD>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace tunnelrec {

namespace {
constexpr int kUndistortIterations = 20;
constexpr double kUndistortTolerancePx = 1e-10;
}  // namespace

CameraIntrinsics CameraIntrinsics::pinhole(double f, double cx, double cy, int width, int height,
                                           double k1, double k2) {
  CameraIntrinsics K;
  K.f = f;
  K.cx = cx;
  K.cy = cy;
  K.width = width;
  K.height = height;
  K.k1 = k1;
  K.k2 = k2;
  K.omega_h = 2.0 * std::atan(width / (2.0 * f));
  K.omega_v = 2.0 * std::atan(height / (2.0 * f));
  K.validate();
  return K;
}

CameraIntrinsics CameraIntrinsics::from_horizontal_fov(double omega_h, int width, int height,
                                                       double k1, double k2) {
  if (!(omega_h > 0.0 && omega_h < M_PI)) {
    throw InvalidArgument("horizontal field of view must lie in (0, pi)");
  }
  const double f = width / (2.0 * std::tan(0.5 * omega_h));
  return pinhole(f, 0.5 * width, 0.5 * height, width, height, k1, k2);
}

void CameraIntrinsics::validate() const {
  if (!(f > 0.0)) throw InvalidArgument("focal length must be positive");
  if (width <= 0 || height <= 0) throw InvalidArgument("image dimensions must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw InvalidArgument(
        fmt::format("principal point ({}, {}) outside {}x{} image", cx, cy, width, height));
  }
  const double expect_h = 2.0 * std::atan(width / (2.0 * f));
  const double expect_v = 2.0 * std::atan(height / (2.0 * f));
  if (std::abs(omega_h - expect_h) > 1e-9 || std::abs(omega_v - expect_v) > 1e-9) {
    throw InvalidArgument("field of view inconsistent with focal length and image size");
  }
}

PoseSE3 PoseSE3::from_axis_angle(const Vec3& axis_angle, const Vec3& translation) {
  PoseSE3 p;
  p.rotation = so3_exp(axis_angle);
  p.translation = translation;
  return p;
}

PoseSE3 PoseSE3::inverse() const {
  PoseSE3 inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Vec3 PoseSE3::axis_angle() const { return so3_log(rotation); }

void PoseSE3::validate(double tol) const {
  const double orth = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (orth > tol || std::abs(rotation.determinant() - 1.0) > tol) {
    throw InvalidArgument("pose rotation is not a proper rotation");
  }
  if (!translation.allFinite()) throw InvalidArgument("pose translation is not finite");
}

PoseSE3 compose(const PoseSE3& a, const PoseSE3& b) {
  PoseSE3 c;
  c.rotation = a.rotation * b.rotation;
  c.translation = a.rotation * b.translation + a.translation;
  return c;
}

PoseSE3 invert(const PoseSE3& p) { return p.inverse(); }

Mat3 skew(const Vec3& v) {
  Mat3 S;
  S << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return S;
}

Mat3 so3_exp(const Vec3& w) {
  const double theta2 = w.squaredNorm();
  const Mat3 W = skew(w);
  if (theta2 < 1e-16) {
    return Mat3::Identity() + W + 0.5 * W * W;
  }
  const double theta = std::sqrt(theta2);
  return Mat3::Identity() + (std::sin(theta) / theta) * W +
         ((1.0 - std::cos(theta)) / theta2) * W * W;
}

Vec3 so3_log(const Mat3& R) {
  const Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

Mat3 nearest_rotation(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 D = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) D(2, 2) = -1.0;
  return svd.matrixU() * D * svd.matrixV().transpose();
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
  return so3_log(a.transpose() * b).norm();
}

Mat3 rotation_about_y(double angle) {
  return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
}

Ray::Ray(const Vec3& o, const Vec3& d) : origin(o) {
  const double n = d.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw InvalidArgument("ray direction must be nonzero");
  direction = d / n;
}

BoxSection BoxSection::axis_aligned(double floor_depth, double ceiling_height, double left_width,
                                    double right_width) {
  BoxSection b;
  b.floor = {Vec3::UnitZ(), -floor_depth};
  b.ceiling = {-Vec3::UnitZ(), -ceiling_height};
  b.left = {Vec3::UnitX(), -left_width};
  b.right = {-Vec3::UnitX(), -right_width};
  return b;
}

const char* surface_name(SurfaceId id) {
  switch (id) {
    case SurfaceId::Wall: return "wall";
    case SurfaceId::Floor: return "floor";
    case SurfaceId::Left: return "left";
    case SurfaceId::Right: return "right";
    case SurfaceId::Ceiling: return "ceiling";
  }
  return "unknown";
}

void ScenePrior::validate() const {
  if (is_cylinder()) {
    if (!(as_cylinder().radius > 0.0)) throw InvalidArgument("cylinder radius must be positive");
    return;
  }
  const BoxSection& b = as_box();
  for (const Plane* p : {&b.floor, &b.ceiling, &b.left, &b.right}) {
    if (std::abs(p->normal.norm() - 1.0) > 1e-9) {
      throw InvalidArgument("box-section plane normals must be unit length");
    }
    if (std::abs(p->normal.y()) > 1e-9) {
      throw InvalidArgument("box-section planes must contain the tunnel axis");
    }
  }
  if (std::abs(b.floor.normal.dot(b.ceiling.normal) + 1.0) > 1e-9 ||
      std::abs(b.left.normal.dot(b.right.normal) + 1.0) > 1e-9) {
    throw InvalidArgument("opposing box-section planes must have antiparallel normals");
  }
  if (!(b.floor.offset + b.ceiling.offset < 0.0) || !(b.left.offset + b.right.offset < 0.0)) {
    throw InvalidArgument("box-section planes bound an empty cross-section");
  }
}

bool ScenePrior::contains(const Vec3& p) const {
  if (is_cylinder()) {
    const double r = as_cylinder().radius;
    return p.x() * p.x() + p.z() * p.z() < r * r;
  }
  const BoxSection& b = as_box();
  return b.floor.signed_distance(p) > 0.0 && b.ceiling.signed_distance(p) > 0.0 &&
         b.left.signed_distance(p) > 0.0 && b.right.signed_distance(p) > 0.0;
}

double ScenePrior::distance_to_surface(const Vec3& p) const {
  if (is_cylinder()) {
    return std::abs(std::hypot(p.x(), p.z()) - as_cylinder().radius);
  }
  const BoxSection& b = as_box();
  const std::array<double, 4> s = {b.floor.signed_distance(p), b.ceiling.signed_distance(p),
                                   b.left.signed_distance(p), b.right.signed_distance(p)};
  double outside2 = 0.0;
  for (double v : s) {
    if (v < 0.0) outside2 += v * v;
  }
  if (outside2 > 0.0) return std::sqrt(outside2);
  return *std::min_element(s.begin(), s.end());
}

ScenePrior ScenePrior::scaled(double s) const {
  if (is_cylinder()) return cylinder(as_cylinder().radius * s);
  BoxSection b = as_box();
  for (Plane* p : {&b.floor, &b.ceiling, &b.left, &b.right}) p->offset *= s;
  return box(b);
}

Vec2 project(const CameraIntrinsics& K, const Vec3& p_cam) {
  if (!(p_cam.z() > 0.0)) {
    throw PointBehindCamera(fmt::format("point z = {} is not in front of the camera", p_cam.z()));
  }
  const double x = p_cam.x() / p_cam.z();
  const double y = p_cam.y() / p_cam.z();
  const double d = K.distortion_factor(x * x + y * y);
  return {K.f * x * d + K.cx, K.f * y * d + K.cy};
}

Vec2 undistort_normalized(const CameraIntrinsics& K, const Vec2& pixel) {
  const double xd = (pixel.x() - K.cx) / K.f;
  const double yd = (pixel.y() - K.cy) / K.f;
  if (!K.has_distortion()) return {xd, yd};
  double x = xd;
  double y = yd;
  for (int it = 0; it < kUndistortIterations; ++it) {
    const double d = K.distortion_factor(x * x + y * y);
    x = xd / d;
    y = yd / d;
    const double dn = K.distortion_factor(x * x + y * y);
    const double err_px = K.f * std::hypot(x * dn - xd, y * dn - yd);
    if (err_px <= kUndistortTolerancePx) return {x, y};
  }
  throw ConvergenceError(
      fmt::format("distortion inversion did not converge at pixel ({}, {})", pixel.x(), pixel.y()));
}

Ray pixel_ray(const CameraIntrinsics& K, const Vec2& pixel) {
  if (!K.contains(pixel)) {
    throw InvalidArgument(fmt::format("pixel ({}, {}) outside the image", pixel.x(), pixel.y()));
  }
  const Vec2 n = undistort_normalized(K, pixel);
  return Ray(Vec3::Zero(), Vec3(n.x(), n.y(), 1.0));
}

}  // namespace tunnelrec
