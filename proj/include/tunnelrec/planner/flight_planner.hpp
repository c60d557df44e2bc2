#pragma once

#include "tunnelrec/core/geometry.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace tunnelrec::planner {

/// Two horizontal and one upward range reading, in meters. A missing value
/// models a failed sensor. The downward sensor is never used because the
/// tunnel floor may carry water or sludge.
struct RangeReadings {
  std::optional<double> d1;  // towards +x
  std::optional<double> d2;  // towards -x
  std::optional<double> d3;  // towards +z (up)

  int count() const { return d1.has_value() + d2.has_value() + d3.has_value(); }
  /// Throws InvalidArgument unless every present reading is in (0, 2r).
  void validate(double radius) const;
};

/// Sensor directions in the (x, z) cross-section plane.
struct SensorLayout {
  Vec2 d1{1.0, 0.0};
  Vec2 d2{-1.0, 0.0};
  Vec2 d3{0.0, 1.0};
};

/// Solution of the sectional-location system. theta, alpha, beta and gamma
/// parameterize the wall points hit by the sensors in the lower-half frame
/// of the model; tx and tz are the UAV offset from the tunnel center with
/// the sign of tz restored from the upward sensor.
struct CrossSectionState {
  double tx = 0.0;
  double tz = 0.0;
  double theta = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;
  /// False when d3 is missing: the horizontal readings cannot tell a UAV
  /// above the center from its mirror image below it, and tz <= 0 is returned.
  bool tz_sign_observable = true;

  double offset_norm() const { return std::hypot(tx, tz); }
};

/// Exact readings for a UAV at (tx, 0, tz) in a tunnel of the given radius.
RangeReadings simulate_range_readings(const Vec2& offset, double radius,
                                      const SensorLayout& sensors = {});

/// Residual norm above which readings are reported as inconsistent with any
/// interior position. Centimeter-level sensor noise stays well below it.
inline constexpr double kDefaultMaxResidual = 0.05;

/// Least-squares solve of the six-row sectional-location system.
/// Requires all three readings. Throws DegenerateConfiguration when the best
/// fit leaves a residual above max_residual and ConvergenceError when no
/// start converges.
CrossSectionState solve_uav_offset(const RangeReadings& readings, double radius,
                                   double max_residual = kDefaultMaxResidual);

/// Same system with the rows that depend on a missing reading removed.
/// Requires at least two readings.
CrossSectionState solve_uav_offset_degraded(const RangeReadings& readings, double radius,
                                            double max_residual = kDefaultMaxResidual);

/// Residual rows of the system at parameters (theta, alpha, beta, gamma);
/// rows whose reading is missing are omitted. Exposed for tests.
std::vector<double> offset_residuals(const Eigen::Vector4d& params,
                                     const RangeReadings& readings, double radius);

// Coverage speed bounds. omega_h spans the tunnel circumference, omega_v the
// tunnel axis. r1 is the UAV distance from the tunnel center.

/// Central angle of the wall point seen at the horizontal edge of the view.
double view_angle_theta(double omega_h, double r1, double radius);

/// Largest forward motion per full camera rotation without coverage gaps.
double max_move_per_rotation(double omega_v, double radius, double r1, double theta);

/// Pixel-count form of the same bound, (rows - 1)(r cos(theta) - r1) / f.
double max_move_per_rotation_pixels(double f, int rows, double radius, double r1, double theta);

/// max_move_per_rotation / images_per_rotation.
double max_move_per_image(double omega_v, double radius, double r1, double theta,
                          int images_per_rotation);

struct SpeedPlan {
  double r1 = 0.0;
  double theta_view = 0.0;
  double d_max_rotation = 0.0;
  double d_max_image = 0.0;
  int n = 1;
};

SpeedPlan plan_speed(double omega_h, double omega_v, double radius, double r1,
                     int images_per_rotation);

/// Speed plans for r1 = 0 .. r1_max in `steps` equal increments.
std::vector<SpeedPlan> speed_sweep(double omega_h, double omega_v, double radius,
                                   int images_per_rotation, double r1_max, int steps);

}  // namespace tunnelrec::planner
