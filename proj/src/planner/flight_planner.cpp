#include "tunnelrec/planner/flight_planner.hpp"

#include "tunnelrec/core/error.hpp"

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include <algorithm>
#include <bitset>
#include <cmath>
#include <limits>

namespace tunnelrec::planner {

namespace {

constexpr int kMaxIterations = 100;
constexpr double kResidualTolerance = 1e-10;

// Rows: 0..2 range to wall points, 3 chord law of cosines, 4 chord
// orientation, 5 vertical alignment of the upward sensor.
using RowMask = std::bitset<6>;

RowMask rows_for(const RangeReadings& rd) {
  RowMask rows;
  rows[0] = rd.d1.has_value();
  rows[1] = rd.d2.has_value();
  rows[2] = rd.d3.has_value();
  rows[3] = rd.d1.has_value() && rd.d2.has_value();
  rows[4] = true;
  rows[5] = true;
  return rows;
}

struct Geometry {
  Vec2 p1, p2, p3, p;
};

Geometry wall_points(const Eigen::Vector4d& q, double r) {
  const double theta = q[0], alpha = q[1], beta = q[2], gamma = q[3];
  Geometry g;
  g.p1 = r * Vec2(std::sin(alpha), std::cos(alpha));
  g.p2 = r * Vec2(std::sin(alpha + theta), std::cos(alpha + theta));
  g.p3 = r * Vec2(std::sin(alpha + beta), std::cos(alpha + beta));
  g.p = gamma * g.p1 + (1.0 - gamma) * g.p2;
  return g;
}

// Residuals and analytic Jacobian with respect to (theta, alpha, beta, gamma).
// Points are (x, z) pairs in the cross-section.
void evaluate(const Eigen::Vector4d& q, const RangeReadings& rd, double r, const RowMask& rows,
              Eigen::VectorXd& res, Eigen::MatrixXd* jac) {
  const double theta = q[0], alpha = q[1], beta = q[2], gamma = q[3];
  const Geometry g = wall_points(q, r);
  const Vec2 dp1_da = r * Vec2(std::cos(alpha), -std::sin(alpha));
  const Vec2 dp2_da = r * Vec2(std::cos(alpha + theta), -std::sin(alpha + theta));
  const Vec2 dp3_da = r * Vec2(std::cos(alpha + beta), -std::sin(alpha + beta));
  // dp/d(theta, alpha, beta, gamma) as columns.
  Eigen::Matrix<double, 2, 4> dp;
  dp.col(0) = (1.0 - gamma) * dp2_da;
  dp.col(1) = gamma * dp1_da + (1.0 - gamma) * dp2_da;
  dp.col(2).setZero();
  dp.col(3) = g.p1 - g.p2;
  Eigen::Matrix<double, 2, 4> dp1 = Eigen::Matrix<double, 2, 4>::Zero();
  dp1.col(1) = dp1_da;
  Eigen::Matrix<double, 2, 4> dp2 = Eigen::Matrix<double, 2, 4>::Zero();
  dp2.col(0) = dp2_da;
  dp2.col(1) = dp2_da;
  Eigen::Matrix<double, 2, 4> dp3 = Eigen::Matrix<double, 2, 4>::Zero();
  dp3.col(1) = dp3_da;
  dp3.col(2) = dp3_da;

  res.resize(static_cast<Eigen::Index>(rows.count()));
  if (jac != nullptr) jac->setZero(res.size(), 4);
  Eigen::Index row = 0;

  auto range_row = [&](const Vec2& wall, const Eigen::Matrix<double, 2, 4>& dwall, double d) {
    const Vec2 u = g.p - wall;
    const double n = u.norm();
    res[row] = n - d;
    if (jac != nullptr && n > 0.0) jac->row(row) = (u / n).transpose() * (dp - dwall);
    ++row;
  };

  if (rows[0]) range_row(g.p1, dp1, *rd.d1);
  if (rows[1]) range_row(g.p2, dp2, *rd.d2);
  if (rows[2]) range_row(g.p3, dp3, *rd.d3);
  if (rows[3]) {
    const double chord = *rd.d1 + *rd.d2;
    res[row] = std::cos(theta) - (2.0 * r * r - chord * chord) / (2.0 * r * r);
    if (jac != nullptr) (*jac)(row, 0) = -std::sin(theta);
    ++row;
  }
  if (rows[4]) {
    res[row] = 0.5 * theta + alpha - M_PI;
    if (jac != nullptr) {
      (*jac)(row, 0) = 0.5;
      (*jac)(row, 1) = 1.0;
    }
    ++row;
  }
  if (rows[5]) {
    // y component of (p - p3) x m, where m is the unit direction of p1 + p2.
    // Dividing the raw cross product by |p1 + p2| = 2r cos(theta/2) keeps the
    // row informative when the chord passes through the center.
    const double phi = alpha + 0.5 * theta;
    const Vec2 a = g.p - g.p3;
    const double s = std::sin(phi), c = std::cos(phi);
    res[row] = a.y() * s - a.x() * c;
    if (jac != nullptr) {
      const Eigen::Matrix<double, 2, 4> da = dp - dp3;
      Eigen::RowVector4d dphi(0.5, 1.0, 0.0, 0.0);
      jac->row(row) = da.row(1) * s - da.row(0) * c + (a.y() * c + a.x() * s) * dphi;
    }
    ++row;
  }
}

struct LmResult {
  Eigen::Vector4d q;
  double residual_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

LmResult levenberg_marquardt(Eigen::Vector4d q, const RangeReadings& rd, double r,
                             const RowMask& rows) {
  Eigen::VectorXd res, trial_res;
  Eigen::MatrixXd J;
  evaluate(q, rd, r, rows, res, &J);
  double cost = res.squaredNorm();
  double lambda = -1.0;
  LmResult out;
  for (int it = 0; it < kMaxIterations; ++it) {
    out.iterations = it;
    if (std::sqrt(cost) <= kResidualTolerance) {
      out.converged = true;
      break;
    }
    const Eigen::Matrix4d H = J.transpose() * J;
    const Eigen::Vector4d grad = J.transpose() * res;
    if (grad.lpNorm<Eigen::Infinity>() < 1e-15) {
      out.converged = true;
      break;
    }
    if (lambda < 0.0) lambda = 1e-3 * std::max(H.diagonal().maxCoeff(), 1e-12);
    bool accepted = false;
    bool stalled = false;
    while (!accepted) {
      Eigen::Matrix4d A = H;
      A.diagonal().array() += lambda;
      const Eigen::Vector4d step = A.ldlt().solve(-grad);
      const Eigen::Vector4d trial = q + step;
      evaluate(trial, rd, r, rows, trial_res, nullptr);
      const double trial_cost = trial_res.squaredNorm();
      if (std::isfinite(trial_cost) && trial_cost < cost) {
        const double decrease = cost - trial_cost;
        q = trial;
        cost = trial_cost;
        lambda = std::max(lambda / 3.0, 1e-15);
        accepted = true;
        if (step.norm() <= 1e-15 * (1.0 + q.norm()) || decrease <= 1e-30) stalled = true;
      } else {
        lambda *= 4.0;
        if (lambda > 1e16) {
          stalled = true;
          break;
        }
      }
    }
    if (accepted) evaluate(q, rd, r, rows, res, &J);
    if (stalled) {
      out.converged = true;
      out.iterations = it + 1;
      break;
    }
    out.iterations = it + 1;
  }
  if (std::sqrt(cost) <= kResidualTolerance) out.converged = true;
  out.q = q;
  out.residual_norm = std::sqrt(cost);
  return out;
}

bool admissible(const Eigen::Vector4d& q, double r) {
  const Vec2 p = wall_points(q, r).p;
  return q[0] > 0.0 && q[0] <= M_PI + 1e-9 && q[3] >= -1e-9 && q[3] <= 1.0 + 1e-9 &&
         p.norm() < r;
}

// beta that places the third wall point straight above (or below) p.
double vertical_beta(const Eigen::Vector4d& q, double r, bool above) {
  const double tx = std::clamp(wall_points(q, r).p.x(), -r, r);
  const double h = std::sqrt(std::max(r * r - tx * tx, 0.0));
  return std::atan2(tx, above ? h : -h) - q[1];
}

std::vector<Eigen::Vector4d> initial_guesses(const RangeReadings& rd, double r,
                                             const RowMask& rows) {
  std::vector<Eigen::Vector4d> starts;
  auto add_vertical_pair = [&](double theta, double gamma) {
    Eigen::Vector4d q(theta, M_PI - 0.5 * theta, 0.0, gamma);
    for (bool above : {true, false}) {
      q[2] = vertical_beta(q, r, above);
      starts.push_back(q);
    }
  };
  if (rows[3]) {
    const double chord = *rd.d1 + *rd.d2;
    const double c = std::clamp((2.0 * r * r - chord * chord) / (2.0 * r * r), -1.0, 1.0);
    const double theta0 = std::acos(c);
    starts.emplace_back(theta0, M_PI - 0.5 * theta0, M_PI, 0.5);
    // Rows 1 and 2 give the interpolant in closed form once the chord is known.
    add_vertical_pair(theta0, *rd.d2 / chord);
  } else {
    for (int i = 0; i < 6; ++i) {
      const double theta = 0.3 + i * ((M_PI - 0.35) / 5.0);
      for (double gamma : {0.2, 0.5, 0.8}) add_vertical_pair(theta, gamma);
    }
  }
  return starts;
}

CrossSectionState solve_rows(const RangeReadings& rd, double r, const RowMask& rows,
                             double max_residual) {
  if (!(r > 0.0)) throw InvalidArgument("tunnel radius must be positive");
  rd.validate(r);
  const std::vector<Eigen::Vector4d> starts = initial_guesses(rd, r, rows);
  const LmResult* best = nullptr;
  std::vector<LmResult> runs;
  runs.reserve(starts.size());
  for (const auto& s : starts) runs.push_back(levenberg_marquardt(s, rd, r, rows));
  double best_unconverged = std::numeric_limits<double>::infinity();
  for (const auto& run : runs) {
    if (!admissible(run.q, r)) continue;
    if (!run.converged) {
      best_unconverged = std::min(best_unconverged, run.residual_norm);
      continue;
    }
    if (best == nullptr || run.residual_norm < best->residual_norm - 1e-14) best = &run;
  }
  if (best == nullptr) {
    if (std::isfinite(best_unconverged)) {
      throw ConvergenceError(fmt::format(
          "sectional location did not converge in {} iterations (residual {})", kMaxIterations,
          best_unconverged));
    }
    double any = std::numeric_limits<double>::infinity();
    for (const auto& run : runs) any = std::min(any, run.residual_norm);
    throw DegenerateConfiguration(fmt::format(
        "range readings are inconsistent with any interior position (residual {})", any));
  }

  if (best->residual_norm > max_residual) {
    throw DegenerateConfiguration(fmt::format(
        "range readings are inconsistent with any interior position (residual {})",
        best->residual_norm));
  }

  const Geometry g = wall_points(best->q, r);
  CrossSectionState st;
  st.theta = best->q[0];
  st.alpha = best->q[1];
  st.beta = best->q[2];
  st.gamma = best->q[3];
  st.residual_norm = best->residual_norm;
  st.iterations = best->iterations;
  st.tx = g.p.x();
  st.tz = g.p.y();
  // The model places the horizontal chord below the center. When the upward
  // sensor's wall point ends up below the UAV the real UAV is the mirror image.
  st.tz_sign_observable = rows[2] && rows[5];
  if (st.tz_sign_observable && g.p3.y() < g.p.y()) st.tz = -st.tz;
  return st;
}

}  // namespace

void RangeReadings::validate(double radius) const {
  for (const auto* d : {&d1, &d2, &d3}) {
    if (!d->has_value()) continue;
    if (!(**d > 0.0) || !(**d < 2.0 * radius)) {
      throw InvalidArgument(
          fmt::format("range reading {} outside (0, {}) for radius {}", **d, 2.0 * radius, radius));
    }
  }
}

RangeReadings simulate_range_readings(const Vec2& offset, double radius,
                                      const SensorLayout& sensors) {
  if (!(radius > 0.0)) throw InvalidArgument("tunnel radius must be positive");
  if (!(offset.norm() < radius)) {
    throw GeometryError(fmt::format("offset ({}, {}) lies outside the tunnel of radius {}",
                                    offset.x(), offset.y(), radius));
  }
  auto cast = [&](const Vec2& dir) {
    const Vec2 u = dir.normalized();
    const double b = offset.dot(u);
    return -b + std::sqrt(b * b - (offset.squaredNorm() - radius * radius));
  };
  return {cast(sensors.d1), cast(sensors.d2), cast(sensors.d3)};
}

CrossSectionState solve_uav_offset(const RangeReadings& readings, double radius,
                                   double max_residual) {
  if (readings.count() != 3) {
    throw InvalidArgument("solve_uav_offset needs all three range readings");
  }
  return solve_rows(readings, radius, rows_for(readings), max_residual);
}

CrossSectionState solve_uav_offset_degraded(const RangeReadings& readings, double radius,
                                            double max_residual) {
  if (readings.count() < 2) {
    throw InvalidArgument("at least two range readings are required");
  }
  return solve_rows(readings, radius, rows_for(readings), max_residual);
}

std::vector<double> offset_residuals(const Eigen::Vector4d& params,
                                     const RangeReadings& readings, double radius) {
  Eigen::VectorXd res;
  evaluate(params, readings, radius, rows_for(readings), res, nullptr);
  return {res.data(), res.data() + res.size()};
}

double view_angle_theta(double omega_h, double r1, double radius) {
  if (!(omega_h > 0.0 && omega_h < M_PI)) {
    throw InvalidArgument("horizontal field of view must lie in (0, pi)");
  }
  if (!(r1 >= 0.0) || !(r1 < radius)) {
    throw InvalidArgument(fmt::format("r1 = {} must lie in [0, {})", r1, radius));
  }
  const double half = 0.5 * omega_h;
  return half - std::asin((r1 / radius) * std::sin(half));
}

double max_move_per_rotation(double omega_v, double radius, double r1, double theta) {
  const double depth = radius * std::cos(theta) - r1;
  if (depth < 0.0) {
    throw GeometryError(fmt::format(
        "r1 = {} exceeds r cos(theta) = {}: the view edge never reaches the wall in front",
        r1, radius * std::cos(theta)));
  }
  return 2.0 * std::tan(0.5 * omega_v) * depth;
}

double max_move_per_rotation_pixels(double f, int rows, double radius, double r1, double theta) {
  const double depth = radius * std::cos(theta) - r1;
  if (depth < 0.0) throw GeometryError("view edge never reaches the wall in front");
  return (rows - 1) * depth / f;
}

double max_move_per_image(double omega_v, double radius, double r1, double theta,
                          int images_per_rotation) {
  if (images_per_rotation < 1) throw InvalidArgument("images per rotation must be at least 1");
  return max_move_per_rotation(omega_v, radius, r1, theta) / images_per_rotation;
}

SpeedPlan plan_speed(double omega_h, double omega_v, double radius, double r1,
                     int images_per_rotation) {
  SpeedPlan plan;
  plan.r1 = r1;
  plan.n = images_per_rotation;
  plan.theta_view = view_angle_theta(omega_h, r1, radius);
  plan.d_max_rotation = max_move_per_rotation(omega_v, radius, r1, plan.theta_view);
  plan.d_max_image = max_move_per_image(omega_v, radius, r1, plan.theta_view, images_per_rotation);
  return plan;
}

std::vector<SpeedPlan> speed_sweep(double omega_h, double omega_v, double radius,
                                   int images_per_rotation, double r1_max, int steps) {
  if (steps < 1) throw InvalidArgument("sweep needs at least one step");
  std::vector<SpeedPlan> out;
  for (int i = 0; i <= steps; ++i) {
    const double r1 = r1_max * i / steps;
    const double theta = view_angle_theta(omega_h, r1, radius);
    if (radius * std::cos(theta) - r1 < 0.0) break;
    out.push_back(plan_speed(omega_h, omega_v, radius, r1, images_per_rotation));
  }
  return out;
}

}  // namespace tunnelrec::planner
