#include "tunnelrec/mapping/dense.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/core/parallel.hpp"
#include "tunnelrec/mapping/surface.hpp"
#include "tunnelrec/simd/kernels.hpp"

#include <fmt/format.h>

#include <cmath>

namespace tunnelrec {

RayTable::RayTable(const CameraIntrinsics& K) : width(K.width), height(K.height) {
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

std::vector<DensePoint> reconstruct_frame(const Image& image, int frame, const PoseSE3& pose,
                                          const RayTable& rays, const ScenePrior& prior,
                                          const Image& mask, int threads) {
  const int W = rays.width, H = rays.height;
  if (image.width != W || image.height != H) {
    throw InvalidArgument(fmt::format("frame {} is {}x{} but the camera is {}x{}", frame,
                                      image.width, image.height, W, H));
  }
  if (image.channels != 3 && image.channels != 1) {
    throw InvalidArgument("frames must have 1 or 3 channels");
  }
  const bool masked = !mask.data.empty();
  if (masked && (mask.width != W || mask.height != H)) {
    throw InvalidArgument("mask size does not match the camera");
  }
  const Vec3& c = pose.translation;
  if (!prior.contains(c)) {
    throw GeometryError(fmt::format("frame {}: camera at ({}, {}, {}) is outside the prior", frame,
                                    c.x(), c.y(), c.z()));
  }

  // Per-row point counts first so rows can be filled in parallel in place.
  std::vector<std::size_t> row_start(H + 1, 0);
  for (int r = 0; r < H; ++r) {
    std::size_t n = W;
    if (masked) {
      n = 0;
      for (int x = 0; x < W; ++x) n += mask.at(x, r) == 0;
    }
    row_start[r + 1] = row_start[r] + n;
  }
  std::vector<DensePoint> out(row_start[H]);
  const bool cylinder = prior.is_cylinder();
  const double radius = cylinder ? prior.as_cylinder().radius : 0.0;

  parallel_for(static_cast<std::size_t>(H), threads, [&](std::size_t r0, std::size_t r1) {
    const std::size_t begin = r0 * W, n = (r1 - r0) * W;
    std::vector<double> wx(n), wy(n), wz(n);
    simd::rotate(pose.rotation,
                 {std::span(rays.x).subspan(begin, n), std::span(rays.y).subspan(begin, n),
                  std::span(rays.z).subspan(begin, n)},
                 {wx, wy, wz});
    std::vector<double> t, px, py, pz, inc;
    if (cylinder) {
      t.resize(n), px.resize(n), py.resize(n), pz.resize(n), inc.resize(n);
      simd::intersect_cylinder(c, radius, {wx, wy, wz}, {t, {px, py, pz}, inc});
    }
    for (std::size_t r = r0; r < r1; ++r) {
      std::size_t o = row_start[r];
      for (int x = 0; x < W; ++x) {
        if (masked && mask.at(x, static_cast<int>(r)) != 0) continue;
        const std::size_t k = (r - r0) * W + x;
        DensePoint& p = out[o++];
        if (cylinder) {
          if (!std::isfinite(t[k])) throw GeometryError("pixel ray missed the tunnel wall");
          p.position = Vec3(px[k], py[k], pz[k]);
          p.surface = SurfaceId::Wall;
          p.incidence_cos = inc[k];
          p.distance = t[k];
        } else {
          const SurfaceHit hit = intersect_ray_prior(Ray(c, Vec3(wx[k], wy[k], wz[k])), prior);
          p.position = hit.position;
          p.surface = hit.surface;
          p.incidence_cos = hit.incidence_cos;
          p.distance = hit.distance;
        }
        p.source_frame = frame;
        p.source_x = x;
        p.source_y = static_cast<int>(r);
        for (int ch = 0; ch < 3; ++ch) {
          p.color[ch] = image.at(x, static_cast<int>(r), image.channels == 3 ? ch : 0);
        }
      }
    }
  });
  return out;
}

std::uint64_t reconstruct_dense(const FrameSource& frames, const std::vector<PoseSE3>& poses,
                                const CameraIntrinsics& K, const ScenePrior& prior,
                                const Image& mask, const PointSink& sink, int threads) {
  const RayTable rays(K);
  std::uint64_t total = 0;
  for (std::size_t f = 0; f < poses.size(); ++f) {
    const int frame = static_cast<int>(f);
    const auto points = reconstruct_frame(frames(frame), frame, poses[f], rays, prior, mask, threads);
    total += points.size();
    sink(frame, points);
  }
  return total;
}

PlyVertex to_ply_vertex(const DensePoint& p) {
  PlyVertex v;
  v.position = {static_cast<float>(p.position.x()), static_cast<float>(p.position.y()),
                static_cast<float>(p.position.z())};
  v.color = p.color;
  return v;
}

void export_pointcloud(std::span<const DensePoint> points, const std::filesystem::path& path,
                       PlyFormat format) {
  PlyWriter w(path, format);
  for (const auto& p : points) w.add(to_ply_vertex(p));
  w.close();
}

}  // namespace tunnelrec
