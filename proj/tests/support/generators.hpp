#pragma once

// Small random generators for property tests.

#include "tunnelrec/core/geometry.hpp"

#include <cmath>
#include <random>

namespace tunnelrec::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal(double sd) { return std::normal_distribution<double>(0.0, sd)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  Vec3 vec3(double lo, double hi) { return {uniform(lo, hi), uniform(lo, hi), uniform(lo, hi)}; }

  Vec3 unit3() {
    Vec3 v(normal(1.0), normal(1.0), normal(1.0));
    while (v.norm() < 1e-6) v = Vec3(normal(1.0), normal(1.0), normal(1.0));
    return v.normalized();
  }

  Mat3 rotation(double max_angle = M_PI) {
    return Eigen::AngleAxisd(uniform(0.0, max_angle), unit3()).toRotationMatrix();
  }

  PoseSE3 pose(double max_angle = M_PI, double max_t = 5.0) {
    PoseSE3 p;
    p.rotation = rotation(max_angle);
    p.translation = vec3(-max_t, max_t);
    return p;
  }

  /// Uniform point in the open disc of the given radius.
  Vec2 disc(double radius) {
    const double rr = radius * std::sqrt(uniform(0.0, 1.0));
    const double a = uniform(0.0, 2.0 * M_PI);
    return {rr * std::cos(a), rr * std::sin(a)};
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

}  // namespace tunnelrec::testing
