#include "tunnelrec/simulator/renderer.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/core/parallel.hpp"
#include "tunnelrec/mapping/surface.hpp"
#include "tunnelrec/simd/kernels.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace tunnelrec::sim {

Image RigOccluder::mask(int width, int height) const {
  Image m(width, height, 1, 0);
  if (!enabled) return m;
  for (int y = std::max(0, y0); y < std::min(height, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(width, x1); ++x) m.at(x, y) = 255;
  return m;
}

PixelRays::PixelRays(const CameraIntrinsics& K) : width(K.width), height(K.height) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  x.resize(n);
  y.resize(n);
  z.resize(n);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Vec3 d = pixel_ray(K, Vec2(c + 0.5, r + 0.5)).direction;
      const std::size_t i = static_cast<std::size_t>(r) * width + c;
      x[i] = d.x();
      y[i] = d.y();
      z[i] = d.z();
    }
  }
}

double light_factor(const DownwardLight& light, const PoseSE3& pose) {
  if (!light.enabled) return 1.0;
  const double c = std::clamp(pose.rotation(2, 2), -1.0, 1.0);
  return 1.0 - light.strength * 0.5 * (1.0 - c);
}

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

Image render_view(const Scene& scene, const CameraIntrinsics& K, const PoseSE3& pose,
                  int threads) {
  return render_view(scene, PixelRays(K), pose, threads);
}

Image render_view(const Scene& scene, const PixelRays& rays, const PoseSE3& pose, int threads) {
  if (!scene.texture) throw InvalidArgument("scene has no texture");
  const Vec3& c = pose.translation;
  if (!scene.prior.contains(c)) {
    throw GeometryError(
        fmt::format("camera at ({}, {}, {}) is outside the tunnel prior", c.x(), c.y(), c.z()));
  }
  const int W = rays.width, H = rays.height;
  Image img(W, H, 3);
  const double gain = light_factor(scene.light, pose);
  const bool cylinder = scene.prior.is_cylinder();
  const double radius = cylinder ? scene.prior.as_cylinder().radius : 0.0;

  parallel_for(static_cast<std::size_t>(H), threads, [&](std::size_t r0, std::size_t r1) {
    const std::size_t begin = r0 * W, end = r1 * W, n = end - begin;
    std::vector<double> wx(n), wy(n), wz(n);
    const simd::ConstSoa3 cam{std::span(rays.x).subspan(begin, n),
                              std::span(rays.y).subspan(begin, n),
                              std::span(rays.z).subspan(begin, n)};
    simd::rotate(pose.rotation, cam, {wx, wy, wz});
    std::vector<double> t, px, py, pz, inc;
    if (cylinder) {
      t.resize(n), px.resize(n), py.resize(n), pz.resize(n), inc.resize(n);
      simd::intersect_cylinder(c, radius, {wx, wy, wz}, {t, {px, py, pz}, inc});
    }
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = begin + k;
      const int x = static_cast<int>(i % W), y = static_cast<int>(i / W);
      Color color;
      if (scene.occluder.covers(x, y)) {
        color = scene.occluder.color;
      } else {
        Vec3 p;
        SurfaceId surface = SurfaceId::Wall;
        if (cylinder) {
          if (!std::isfinite(t[k])) throw GeometryError("camera ray missed the tunnel wall");
          p = Vec3(px[k], py[k], pz[k]);
        } else {
          const SurfaceHit hit =
              intersect_ray_prior(Ray(c, Vec3(wx[k], wy[k], wz[k])), scene.prior);
          p = hit.position;
          surface = hit.surface;
        }
        color = scene.texture->sample(surface, surface_coordinates(scene.prior, surface, p)) * gain;
      }
      for (int ch = 0; ch < 3; ++ch) img.data[i * 3 + ch] = to_byte(color[ch]);
    }
  });
  return img;
}

}  // namespace tunnelrec::sim
