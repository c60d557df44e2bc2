#include "kernels_impl.hpp"

#include "tunnelrec/core/error.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace tunnelrec::simd {

namespace {

Level probe() {
#if defined(__x86_64__) || defined(__i386__)
  if (avx2::compiled()) {
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx2")) return Level::Avx2;
  }
#endif
  return Level::Scalar;
}

Level initial_level() {
  const char* env = std::getenv("TUNNELREC_SIMD");
  if (env != nullptr && std::strcmp(env, "scalar") == 0) return Level::Scalar;
  return detected_level();
}

std::atomic<Level>& active() {
  static std::atomic<Level> level{initial_level()};
  return level;
}

void check_sizes(std::size_t n, std::initializer_list<std::size_t> others) {
  for (std::size_t s : others) {
    if (s != n) throw InvalidArgument("kernel input and output spans differ in length");
  }
}

Level usable(Level level) {
  return level == Level::Avx2 && detected_level() == Level::Avx2 ? Level::Avx2 : Level::Scalar;
}

}  // namespace

Level detected_level() {
  static const Level level = probe();
  return level;
}

Level active_level() { return active().load(std::memory_order_relaxed); }

void set_active_level(Level level) {
  active().store(usable(level), std::memory_order_relaxed);
}

const char* level_name(Level level) { return level == Level::Avx2 ? "avx2" : "scalar"; }

void rotate(Level level, const Mat3& R, ConstSoa3 in, Soa3 out) {
  const std::size_t n = in.size();
  check_sizes(n, {in.y.size(), in.z.size(), out.x.size(), out.y.size(), out.z.size()});
  double r[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[3 * i + j] = R(i, j);
  if (usable(level) == Level::Avx2) {
    avx2::rotate(r, in.x.data(), in.y.data(), in.z.data(), out.x.data(), out.y.data(),
                 out.z.data(), n);
  } else {
    scalar::rotate(r, in.x.data(), in.y.data(), in.z.data(), out.x.data(), out.y.data(),
                   out.z.data(), 0, n);
  }
}

void intersect_cylinder(Level level, const Vec3& origin, double radius, ConstSoa3 directions,
                        CylinderHits out) {
  const std::size_t n = directions.size();
  check_sizes(n, {directions.y.size(), directions.z.size(), out.t.size(), out.position.x.size(),
                  out.position.y.size(), out.position.z.size(), out.incidence.size()});
  const double o[3] = {origin.x(), origin.y(), origin.z()};
  if (usable(level) == Level::Avx2) {
    avx2::intersect_cylinder(o, radius, directions.x.data(), directions.y.data(),
                             directions.z.data(), out.t.data(), out.position.x.data(),
                             out.position.y.data(), out.position.z.data(), out.incidence.data(),
                             n);
  } else {
    scalar::intersect_cylinder(o, radius, directions.x.data(), directions.y.data(),
                               directions.z.data(), out.t.data(), out.position.x.data(),
                               out.position.y.data(), out.position.z.data(),
                               out.incidence.data(), 0, n);
  }
}

void project(Level level, const ProjectionParams& K, ConstSoa3 points, std::span<double> u,
             std::span<double> v) {
  const std::size_t n = points.size();
  check_sizes(n, {points.y.size(), points.z.size(), u.size(), v.size()});
  if (usable(level) == Level::Avx2) {
    avx2::project(K, points.x.data(), points.y.data(), points.z.data(), u.data(), v.data(), n);
  } else {
    scalar::project(K, points.x.data(), points.y.data(), points.z.data(), u.data(), v.data(), 0,
                    n);
  }
}

void sampson_squared(Level level, const double* F, std::span<const double> x1,
                     std::span<const double> y1, std::span<const double> x2,
                     std::span<const double> y2, std::span<double> out) {
  const std::size_t n = x1.size();
  check_sizes(n, {y1.size(), x2.size(), y2.size(), out.size()});
  if (usable(level) == Level::Avx2) {
    avx2::sampson_squared(F, x1.data(), y1.data(), x2.data(), y2.data(), out.data(), n);
  } else {
    scalar::sampson_squared(F, x1.data(), y1.data(), x2.data(), y2.data(), out.data(), 0, n);
  }
}

}  // namespace tunnelrec::simd
