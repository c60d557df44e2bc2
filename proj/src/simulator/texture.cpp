#include "tunnelrec/simulator/texture.hpp"

#include "tunnelrec/core/error.hpp"

#include <fmt/format.h>

#include <cmath>

namespace tunnelrec::sim {

namespace {

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash3(std::uint64_t seed, std::int64_t a, std::int64_t b, std::int64_t c) {
  std::uint64_t h = mix(seed);
  h = mix(h ^ static_cast<std::uint64_t>(a));
  h = mix(h ^ static_cast<std::uint64_t>(b));
  return mix(h ^ static_cast<std::uint64_t>(c));
}

double unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

class Checkerboard final : public Texture {
 public:
  Checkerboard(double cell, Color dark, Color light) : cell_(cell), dark_(dark), light_(light) {}
  Color sample(SurfaceId, const Vec2& c) const override {
    const auto i = static_cast<std::int64_t>(std::floor(c.x() / cell_));
    const auto j = static_cast<std::int64_t>(std::floor(c.y() / cell_));
    return ((i + j) & 1) == 0 ? dark_ : light_;
  }

 private:
  double cell_;
  Color dark_, light_;
};

class Brick final : public Texture {
 public:
  Brick(double length, std::uint64_t seed) : length_(length), height_(0.4 * length), seed_(seed) {}
  Color sample(SurfaceId surface, const Vec2& c) const override {
    const double row_f = c.y() / height_;
    const auto row = static_cast<std::int64_t>(std::floor(row_f));
    const double shift = (row & 1) ? 0.5 * length_ : 0.0;
    const double col_f = (c.x() + shift) / length_;
    const auto col = static_cast<std::int64_t>(std::floor(col_f));
    const double fu = col_f - std::floor(col_f);
    const double fv = row_f - std::floor(row_f);
    const double joint_u = 0.04 * height_ / length_;
    if (fu < joint_u || fu > 1.0 - joint_u || fv < 0.04 || fv > 0.96) return {185, 180, 170};
    const std::uint64_t h = hash3(seed_ + static_cast<std::uint64_t>(surface), col, row, 0);
    const double shade = 0.75 + 0.5 * unit(h);
    return Color(150, 70, 50) * shade;
  }

 private:
  double length_, height_;
  std::uint64_t seed_;
};

class Noise final : public Texture {
 public:
  Noise(double feature, std::uint64_t seed) : feature_(feature), seed_(seed) {}
  Color sample(SurfaceId surface, const Vec2& c) const override {
    Color out;
    for (int ch = 0; ch < 3; ++ch) {
      double v = 0.0, amp = 1.0, norm = 0.0, scale = feature_;
      for (int octave = 0; octave < 3; ++octave) {
        const std::uint64_t s =
            seed_ * 131 + static_cast<std::uint64_t>(surface) * 17 + ch * 5 + octave;
        v += amp * lattice(s, c.x() / scale, c.y() / scale);
        norm += amp;
        amp *= 0.5;
        scale *= 0.5;
      }
      out[ch] = 25.0 + 205.0 * (v / norm);
    }
    return out;
  }

 private:
  static double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

  static double lattice(std::uint64_t seed, double x, double y) {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx);
    const auto iy = static_cast<std::int64_t>(fy);
    const double u = fade(x - fx), v = fade(y - fy);
    const double a = unit(hash3(seed, ix, iy, 1));
    const double b = unit(hash3(seed, ix + 1, iy, 1));
    const double c = unit(hash3(seed, ix, iy + 1, 1));
    const double d = unit(hash3(seed, ix + 1, iy + 1, 1));
    return (a + (b - a) * u) + ((c + (d - c) * u) - (a + (b - a) * u)) * v;
  }

  double feature_;
  std::uint64_t seed_;
};

class Raster final : public Texture {
 public:
  Raster(Image img, double mpp) : img_(std::move(img)), mpp_(mpp) {}
  Color sample(SurfaceId, const Vec2& c) const override {
    // Texel centers sit at half-integer positions.
    const double x = c.x() / mpp_ - 0.5;
    const double y = c.y() / mpp_ - 0.5;
    const double fx = std::floor(x), fy = std::floor(y);
    const double u = x - fx, v = y - fy;
    const auto x0 = static_cast<std::int64_t>(fx), y0 = static_cast<std::int64_t>(fy);
    Color out;
    for (int ch = 0; ch < 3; ++ch) {
      const double a = at(x0, y0, ch), b = at(x0 + 1, y0, ch);
      const double cc = at(x0, y0 + 1, ch), d = at(x0 + 1, y0 + 1, ch);
      out[ch] = (a * (1 - u) + b * u) * (1 - v) + (cc * (1 - u) + d * u) * v;
    }
    return out;
  }

 private:
  double at(std::int64_t x, std::int64_t y, int ch) const {
    const auto wrap = [](std::int64_t i, int n) { return static_cast<int>(((i % n) + n) % n); };
    return img_.at(wrap(x, img_.width), wrap(y, img_.height), ch);
  }

  Image img_;
  double mpp_;
};

void require_positive(double v, const char* what) {
  if (!(v > 0.0)) throw InvalidArgument(fmt::format("{} must be positive", what));
}

}  // namespace

TextureKind parse_texture_kind(const std::string& name) {
  if (name == "checkerboard") return TextureKind::Checkerboard;
  if (name == "brick") return TextureKind::Brick;
  if (name == "noise") return TextureKind::Noise;
  if (name == "raster") return TextureKind::Raster;
  throw InvalidArgument(
      fmt::format("unknown texture '{}' (expected checkerboard, brick, noise or raster)", name));
}

std::shared_ptr<const Texture> make_checkerboard(double cell, Color dark, Color light) {
  require_positive(cell, "checker cell size");
  return std::make_shared<Checkerboard>(cell, dark, light);
}

std::shared_ptr<const Texture> make_brick(double length, std::uint64_t seed) {
  require_positive(length, "brick length");
  return std::make_shared<Brick>(length, seed);
}

std::shared_ptr<const Texture> make_noise(double feature, std::uint64_t seed) {
  require_positive(feature, "noise feature size");
  return std::make_shared<Noise>(feature, seed);
}

std::shared_ptr<const Texture> make_raster(Image image, double meters_per_pixel) {
  require_positive(meters_per_pixel, "raster texel size");
  if (image.empty() || image.channels != 3) throw InvalidArgument("raster texture must be RGB");
  return std::make_shared<Raster>(std::move(image), meters_per_pixel);
}

std::shared_ptr<const Texture> make_texture(const TextureSpec& spec) {
  switch (spec.kind) {
    case TextureKind::Checkerboard: return make_checkerboard(spec.scale);
    case TextureKind::Brick: return make_brick(spec.scale, spec.seed);
    case TextureKind::Noise: return make_noise(spec.scale, spec.seed);
    case TextureKind::Raster:
      return make_raster(read_png(spec.raster_path, 3), spec.raster_meters_per_pixel);
  }
  throw InvalidArgument("unknown texture kind");
}

}  // namespace tunnelrec::sim
