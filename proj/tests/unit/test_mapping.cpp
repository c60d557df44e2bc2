#include "generators.hpp"
#include "temp_dir.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/io/ply.hpp"
#include "tunnelrec/mapping/atlas.hpp"
#include "tunnelrec/mapping/dense.hpp"
#include "tunnelrec/mapping/surface.hpp"
#include "tunnelrec/planner/flight_planner.hpp"
#include "tunnelrec/simulator/renderer.hpp"
#include "tunnelrec/simulator/trajectory.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace tunnelrec;
using tunnelrec::testing::Gen;

namespace {

constexpr double kDeg = M_PI / 180.0;

CameraIntrinsics camera() { return CameraIntrinsics::from_horizontal_fov(60 * kDeg, 640, 480); }

ScenePrior trolley_box() { return ScenePrior::box(BoxSection::axis_aligned(1.2, 1.8, 1.5, 1.5)); }

Vec3 random_interior(Gen& g, const ScenePrior& prior) {
  for (;;) {
    const Vec3 p(g.uniform(-3, 3), g.uniform(-5, 5), g.uniform(-3, 3));
    if (prior.contains(p) && prior.distance_to_surface(p) > 1e-3) return p;
  }
}

// Algebraic residual of the surface equation the hit claims to satisfy.
double surface_residual(const ScenePrior& prior, const SurfaceHit& h) {
  if (prior.is_cylinder()) {
    const double r = prior.as_cylinder().radius;
    return std::abs(h.position.x() * h.position.x() + h.position.z() * h.position.z() - r * r) / r;
  }
  return std::abs(box_plane(prior.as_box(), h.surface).signed_distance(h.position));
}

sim::Scene noise_scene() {
  sim::Scene s;
  s.texture = sim::make_noise(0.25, 7);
  return s;
}

// Wall coordinates of cylinder texel centers, in the renderer's convention.
Vec2 texel_center_coords(int col, int row, double radius, const AtlasSpec& spec) {
  double a = (col + 0.5) / spec.cylinder_width * 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return {radius * a, spec.y_min + (row + 0.5) / spec.texels_per_meter};
}

std::vector<PoseSE3> spiral(int per_rotation, int rotations, double step) {
  sim::TrajectorySpec t;
  t.images_per_rotation = per_rotation;
  t.rotation_count = rotations;
  t.rotation_step = 2 * M_PI / per_rotation;
  t.forward_step = step;
  return sim::generate_trajectory(t.noiseless(), 1);
}

// Resolution from `reference`, axial window seen by every run.
AtlasSpec common_spec(const std::vector<PoseSE3>& reference,
                      const std::vector<std::vector<PoseSE3>>& runs, int per_rotation) {
  AtlasSpec spec = atlas_spec_for(camera(), ScenePrior::cylinder(3.0), reference, per_rotation);
  for (const auto& r : runs) {
    const Interval iv = covered_axial_range(camera(), ScenePrior::cylinder(3.0), r, per_rotation);
    spec.y_min = std::max(spec.y_min, iv.lo);
    spec.y_max = std::min(spec.y_max, iv.hi);
  }
  return spec;
}

// Hole count of a geometry-only stitch of a noiseless spiral.
std::size_t coverage_holes(const std::vector<PoseSE3>& poses, const AtlasSpec& spec,
                           TextureAtlas* keep = nullptr) {
  const auto K = camera();
  const auto prior = ScenePrior::cylinder(3.0);
  const RayTable rays(K);
  const Image blank(K.width, K.height, 3, 128);
  AtlasAccumulator acc(prior, spec);
  for (std::size_t f = 0; f < poses.size(); ++f) {
    acc.add(reconstruct_frame(blank, static_cast<int>(f), poses[f], rays, prior));
  }
  TextureAtlas atlas = acc.finish();
  const std::size_t holes = atlas.hole_count();
  if (keep) *keep = std::move(atlas);
  return holes;
}

}  // namespace

TEST_SUITE("mapping") {

TEST_CASE("intersect_ray_prior examples") {
  const auto cyl = ScenePrior::cylinder(3.0);
  auto h = intersect_ray_prior(Ray(Vec3(0, 0.7, 0), Vec3::UnitX()), cyl);
  CHECK((h.position - Vec3(3, 0.7, 0)).norm() < 1e-12);
  CHECK(h.incidence_cos == doctest::Approx(1.0));
  h = intersect_ray_prior(Ray(Vec3(1, 0, 0), Vec3::UnitX()), cyl);
  CHECK((h.position - Vec3(3, 0, 0)).norm() < 1e-12);
  CHECK(h.distance == doctest::Approx(2.0));
  CHECK_THROWS_AS(intersect_ray_prior(Ray(Vec3(4, 0, 0), Vec3::UnitX()), cyl), GeometryError);
  CHECK_THROWS_AS(intersect_ray_prior(Ray(Vec3(0, 0, 0), Vec3::UnitY()), cyl), GeometryError);

  const auto box = trolley_box();
  h = intersect_ray_prior(Ray(Vec3(0, 0, 0), -Vec3::UnitZ()), box);
  CHECK(h.surface == SurfaceId::Floor);
  CHECK(h.position.z() == doctest::Approx(-1.2));
}

TEST_CASE("intersect_ray_prior: 1e5 random interior rays satisfy the surface equation") {
  Gen g(31);
  for (const auto& prior : {ScenePrior::cylinder(3.0), trolley_box()}) {
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
      const Vec3 o = random_interior(g, prior);
      Vec3 d = g.unit3();
      if (std::hypot(d.x(), d.z()) < 1e-6) d.x() += 1e-3;
      const SurfaceHit h = intersect_ray_prior(Ray(o, d), prior);
      worst = std::max(worst, surface_residual(prior, h));
      CHECK_MESSAGE(h.distance > 0.0, "ray " << i);
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("classify_surface examples") {
  const BoxSection b = trolley_box().as_box();
  CHECK(classify_surface(Vec3(0.3, 2, -1.2), b) == SurfaceId::Floor);
  CHECK(classify_surface(Vec3(-1.5, 2, 0.1), b) == SurfaceId::Left);
  CHECK(classify_surface(Vec3(1.5, 2, 0.1), b) == SurfaceId::Right);
  CHECK(classify_surface(Vec3(0, 2, 1.8), b) == SurfaceId::Ceiling);
  CHECK(classify_surface(Vec3(-1.5, 0, -1.2), b) == SurfaceId::Floor);  // corner
  CHECK(classify_surface(Vec3(1.5, 0, 1.8), b) == SurfaceId::Right);
  CHECK_THROWS_AS(classify_surface(Vec3(0, 0, 0), b), GeometryError);
}

TEST_CASE("reconstruct_frame: centered camera puts every pixel on the wall") {
  const auto K = camera();
  const RayTable rays(K);
  const Image img(K.width, K.height, 3, 90);
  PoseSE3 pose;
  pose.rotation = rotation_about_y(0.4);
  pose.translation = Vec3(0, 1.2, 0);
  const auto pts = reconstruct_frame(img, 3, pose, rays, ScenePrior::cylinder(3.0));
  REQUIRE(pts.size() == static_cast<std::size_t>(K.width) * K.height);
  double worst = 0.0;
  for (const auto& p : pts) worst = std::max(worst, std::abs(std::hypot(p.position.x(), p.position.z()) - 3.0));
  CHECK(worst < 1e-9);
  CHECK(pts[0].source_x == 0);
  CHECK(pts[0].source_y == 0);
  CHECK(pts.back().source_x == K.width - 1);
  CHECK(pts.back().source_frame == 3);
  // Each point lies on its pixel's ray.
  for (std::size_t i = 0; i < pts.size(); i += 997) {
    const Vec3 Xc = pose.rotation.transpose() * (pts[i].position - pose.translation);
    const Vec2 px = project(K, Xc);
    CHECK(std::abs(px.x() - (pts[i].source_x + 0.5)) < 1e-6);
    CHECK(std::abs(px.y() - (pts[i].source_y + 0.5)) < 1e-6);
  }
}

TEST_CASE("reconstruct_frame: masks, threads and errors") {
  const auto K = camera();
  const RayTable rays(K);
  Gen g(32);
  Image img(K.width, K.height, 3);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(g.integer(0, 255));
  Image mask(K.width, K.height, 1, 0);
  std::size_t masked = 0;
  for (int y = 360; y < 480; ++y)
    for (int x = 100; x < 540; ++x) mask.at(x, y) = 255, ++masked;
  PoseSE3 pose;
  pose.translation = Vec3(0.3, 0, -0.2);
  for (const auto& prior : {ScenePrior::cylinder(3.0), trolley_box()}) {
    const auto all = reconstruct_frame(img, 0, pose, rays, prior);
    const auto some = reconstruct_frame(img, 0, pose, rays, prior, mask);
    const auto some4 = reconstruct_frame(img, 0, pose, rays, prior, mask, 4);
    CHECK(all.size() == static_cast<std::size_t>(K.width) * K.height);
    CHECK(some.size() == all.size() - masked);
    REQUIRE(some4.size() == some.size());
    bool same = true, none_masked = true;
    for (std::size_t i = 0; i < some.size(); ++i) {
      same = same && some[i].position == some4[i].position && some[i].color == some4[i].color;
      none_masked = none_masked && mask.at(some[i].source_x, some[i].source_y) == 0;
    }
    CHECK(same);
    CHECK(none_masked);
    for (std::size_t i = 0; i < all.size(); i += 1009) {
      const auto& p = all[i];
      for (int ch = 0; ch < 3; ++ch) CHECK(p.color[ch] == img.at(p.source_x, p.source_y, ch));
    }
  }
  PoseSE3 outside;
  outside.translation = Vec3(5, 0, 0);
  CHECK_THROWS_AS(reconstruct_frame(img, 0, outside, rays, ScenePrior::cylinder(3.0)), GeometryError);
  CHECK_THROWS_AS(reconstruct_frame(Image(10, 10, 3), 0, pose, rays, ScenePrior::cylinder(3.0)),
                  InvalidArgument);
  CHECK_THROWS_AS(reconstruct_frame(img, 0, pose, rays, ScenePrior::cylinder(3.0), Image(4, 4, 1)),
                  InvalidArgument);
}

TEST_CASE("reconstruct_frame: colors match the simulator texture at the surface point") {
  const auto K = camera();
  const RayTable rays(K);
  for (const auto& prior : {ScenePrior::cylinder(3.0), trolley_box()}) {
    sim::Scene scene = noise_scene();
    scene.prior = prior;
    PoseSE3 pose;
    pose.rotation = rotation_about_y(1.1) * so3_exp(Vec3(0.02, -0.03, 0.01));
    pose.translation = Vec3(0.1, 0.5, -0.05);
    const Image img = sim::render_view(scene, K, pose);
    const auto pts = reconstruct_frame(img, 0, pose, rays, prior);
    int worst = 0;
    for (const auto& p : pts) {
      const auto c = scene.texture->sample(p.surface, surface_coordinates(prior, p.surface, p.position));
      for (int ch = 0; ch < 3; ++ch) {
        worst = std::max(worst, static_cast<int>(std::abs(c[ch] - p.color[ch]) + 0.5));
      }
    }
    CHECK(worst <= 1);
  }
}

TEST_CASE("reconstruct_dense streams frames and counts every pixel") {
  const auto K = camera();
  const auto poses = spiral(10, 1, 0.15);
  const Image blank(K.width, K.height, 3, 7);
  std::vector<int> seen;
  std::uint64_t streamed = 0;
  const auto total = reconstruct_dense([&](int) { return blank; }, poses, K,
                                       ScenePrior::cylinder(3.0), {},
                                       [&](int f, std::span<const DensePoint> pts) {
                                         seen.push_back(f);
                                         streamed += pts.size();
                                       });
  CHECK(total == poses.size() * K.width * K.height);
  CHECK(streamed == total);
  CHECK(seen == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("cylindrical_uv examples") {
  AtlasSpec spec;
  spec.y_min = -1.0;
  spec.y_max = 4.0;
  CHECK(spec.cylinder_width == 7500);  // 7500 texels per full turn
  CHECK(spec.texels_per_meter == doctest::Approx(1.0 / 0.0017));
  const Vec2 a0 = cylindrical_uv(Vec3(0, 0, 3), 3.0, spec);
  CHECK(a0.x() == doctest::Approx(0.0));
  CHECK(a0.y() == doctest::Approx(spec.texels_per_meter));
  const Vec2 a180 = cylindrical_uv(Vec3(0, 0, -3), 3.0, spec);
  CHECK(a180.x() == doctest::Approx(3750.0));
  const Vec2 a90 = cylindrical_uv(Vec3(3, 0, 0), 3.0, spec);
  CHECK(a90.x() == doctest::Approx(1875.0));
  const Vec2 a270 = cylindrical_uv(Vec3(-3, 0, 0), 3.0, spec);
  CHECK(a270.x() == doctest::Approx(5625.0));
  const Vec2 step = cylindrical_uv(Vec3(3, 1.0 + 1.0 / spec.texels_per_meter, 0), 3.0, spec) -
                    cylindrical_uv(Vec3(3, 1.0, 0), 3.0, spec);
  CHECK(step.y() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(cylindrical_uv(Vec3(2, 0, 0), 3.0, spec), GeometryError);
}

TEST_CASE("stitch: single centered frame fills a band of the field of view") {
  const auto K = camera();
  const RayTable rays(K);
  const Image img(K.width, K.height, 3, 200);
  const auto pts = reconstruct_frame(img, 0, PoseSE3{}, rays, ScenePrior::cylinder(3.0));
  AtlasSpec spec;
  spec.cylinder_width = 360;
  spec.texels_per_meter = 50;
  spec.y_min = -0.5;
  spec.y_max = 0.5;
  const TextureAtlas atlas = stitch(pts, ScenePrior::cylinder(3.0), spec);
  const AtlasSurface& s = atlas.surface(SurfaceId::Wall);
  CHECK(s.color.width == 360);
  CHECK(s.color.height == 50);
  // Central row: columns within +-30 degrees filled, the rest holes.
  const int row = 25;
  int filled = 0;
  for (int c = 0; c < 360; ++c) {
    const bool hole = s.holes.at(c, row) != 0;
    filled += !hole;
    const double deg = c < 180 ? c + 0.5 : c + 0.5 - 360;
    if (std::abs(deg) < 29) CHECK_MESSAGE(!hole, "column " << c);
    if (std::abs(deg) > 31) CHECK_MESSAGE(hole, "column " << c);
  }
  CHECK(filled == doctest::Approx(60).epsilon(0.05));
  CHECK(atlas.hole_count() == s.hole_count);
  for (std::size_t i = 0; i < s.source_frame.size(); ++i) {
    CHECK((s.source_frame[i] == -1) == (s.holes.data[i] != 0));
  }
}

TEST_CASE("stitch: hole mask marks exactly the texels no point maps to") {
  const auto K = camera();
  const RayTable rays(K);
  const Image img(K.width, K.height, 3, 50);
  const auto prior = trolley_box();
  PoseSE3 pose;
  pose.rotation = rotation_about_y(2.0);
  const auto pts = reconstruct_frame(img, 0, pose, rays, prior);
  AtlasSpec spec;
  spec.texels_per_meter = 40;
  spec.y_min = -1;
  spec.y_max = 1;
  AtlasAccumulator acc(prior, spec);
  acc.add(pts);
  const TextureAtlas atlas = acc.finish();
  REQUIRE(atlas.surfaces.size() == 4);
  std::vector<std::vector<std::uint8_t>> hit(4);
  for (std::size_t s = 0; s < 4; ++s) hit[s].assign(atlas.surfaces[s].source_frame.size(), 0);
  for (const auto& p : pts) {
    std::size_t s = 0;
    int c = 0, r = 0;
    if (acc.locate(p, s, c, r)) hit[s][static_cast<std::size_t>(r) * atlas.surfaces[s].color.width + c] = 1;
  }
  for (std::size_t s = 0; s < 4; ++s) {
    const auto& surf = atlas.surfaces[s];
    for (std::size_t i = 0; i < hit[s].size(); ++i) CHECK((surf.holes.data[i] != 0) == (hit[s][i] == 0));
  }
  CHECK(atlas.hole_count() > 0);
}

TEST_CASE("stitch: selection rules and order independence") {
  const auto prior = ScenePrior::cylinder(3.0);
  AtlasSpec spec;
  spec.cylinder_width = 100;
  spec.texels_per_meter = 10;
  spec.y_min = 0;
  spec.y_max = 1;
  auto pt = [](double inc, double dist, int frame, int x, std::uint8_t v) {
    DensePoint p;
    p.position = Vec3(0, 0.55, 3);
    p.incidence_cos = inc;
    p.distance = dist;
    p.source_frame = frame;
    p.source_x = x;
    p.color = {v, v, v};
    return p;
  };
  auto texel = [&](const std::vector<DensePoint>& pts, bool averaging = false) {
    AtlasSpec s = spec;
    s.averaging = averaging;
    const auto a = stitch(pts, prior, s);
    return a.surfaces[0].color.at(0, 5);
  };
  CHECK(texel({pt(0.9, 3, 0, 0, 10), pt(0.95, 3, 1, 0, 20)}) == 20);  // most perpendicular
  CHECK(texel({pt(0.9, 3, 0, 0, 10), pt(0.9, 2.5, 1, 0, 20)}) == 20);  // nearer camera
  CHECK(texel({pt(0.9, 3, 4, 0, 10), pt(0.9, 3, 2, 0, 20)}) == 20);    // lower frame
  CHECK(texel({pt(0.9, 3, 2, 9, 10), pt(0.9, 3, 2, 3, 20)}) == 20);    // lower pixel
  CHECK(texel({pt(0.9, 3, 0, 0, 10), pt(0.95, 3, 1, 0, 21)}, true) == 16);  // averaged, rounded

  // Random stream: shuffles and split-merge give the identical atlas.
  const auto K = camera();
  const RayTable rays(K);
  Gen g(33);
  std::vector<DensePoint> pts;
  for (int f = 0; f < 4; ++f) {
    Image img(K.width, K.height, 3);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(g.integer(0, 255));
    PoseSE3 pose;
    pose.rotation = rotation_about_y(f * 0.3);
    pose.translation = Vec3(0.1 * f, 0.05 * f, 0);
    const auto fp = reconstruct_frame(img, f, pose, rays, prior);
    pts.insert(pts.end(), fp.begin(), fp.end());
  }
  AtlasSpec big;
  big.cylinder_width = 2000;
  big.texels_per_meter = 200;
  big.y_min = -1;
  big.y_max = 1.5;
  for (bool averaging : {false, true}) {
    big.averaging = averaging;
    const TextureAtlas ref = stitch(pts, prior, big);
    auto shuffled = pts;
    std::shuffle(shuffled.begin(), shuffled.end(), g.engine());
    const TextureAtlas sh = stitch(shuffled, prior, big);
    AtlasAccumulator a(prior, big), b(prior, big);
    const std::size_t half = shuffled.size() / 2;
    a.add(std::span(shuffled).first(half));
    b.add(std::span(shuffled).subspan(half));
    AtlasAccumulator ab = a, ba = b;
    ab.merge(b);
    ba.merge(a);
    const TextureAtlas m1 = ab.finish(), m2 = ba.finish();
    CHECK(sh.surfaces[0].color.data == ref.surfaces[0].color.data);
    CHECK(m1.surfaces[0].color.data == ref.surfaces[0].color.data);
    CHECK(m2.surfaces[0].color.data == ref.surfaces[0].color.data);
    CHECK(m1.surfaces[0].source_frame == ref.surfaces[0].source_frame);
    CHECK(m1.surfaces[0].holes.data == ref.surfaces[0].holes.data);
  }
}

TEST_CASE("atlas spec validation and automatic resolution") {
  AtlasSpec bad;
  bad.y_max = bad.y_min;
  CHECK_THROWS_AS(AtlasAccumulator(ScenePrior::cylinder(3.0), bad), InvalidArgument);
  bad = AtlasSpec{};
  bad.cylinder_width = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);

  const auto K = camera();
  const auto poses = spiral(10, 3, 0.2);
  const Vec2 s = max_pixel_spacing(K, ScenePrior::cylinder(3.0), poses);
  // Independent bounds: a pixel at the optical center spans r / f, and the
  // view edges stretch that by at most 1 / cos^2 of the half field of view.
  const double base = 3.0 / K.f;
  CHECK(s.x() >= 0.99 * base);
  CHECK(s.y() >= 0.99 * base);
  CHECK(s.maxCoeff() <= base / std::pow(std::cos(30 * kDeg), 2) * 1.01);
  const AtlasSpec spec = atlas_spec_for(K, ScenePrior::cylinder(3.0), poses, 10);
  CHECK(spec.cylinder_width == static_cast<int>(2 * M_PI * 3.0 / (1.3 * s.x())));
  CHECK(spec.texels_per_meter == doctest::Approx(1.0 / (1.3 * s.y())));
  // Axial half footprint of the outermost pixel centers: the ray
  // (x, y, 1) reaches the wall after r / sqrt(1 + x^2) along z.
  const double half = 3.0 * (239.5 / K.f) / std::hypot(1.0, 319.5 / K.f);
  CHECK(spec.y_min == doctest::Approx(9 * 0.2 - half).epsilon(1e-6));
  CHECK(spec.y_max == doctest::Approx(20 * 0.2 + half).epsilon(1e-6));
  CHECK_THROWS_AS(covered_axial_range(K, ScenePrior::cylinder(3.0), spiral(10, 1, 0.2), 20),
                  InvalidArgument);
}

TEST_CASE("coverage: spiral at the planned speed has no holes, 1.11x has banded holes") {
  const auto K = camera();
  const int n = 6;  // 60 degree steps tile the 60 degree view exactly
  const auto plan = planner::plan_speed(K.omega_h, K.omega_v, 3.0, 0.0, n);
  const auto base_poses = spiral(n, 10, plan.d_max_image);
  const auto fast_poses = spiral(n, 10, 1.11 * plan.d_max_image);
  const AtlasSpec spec = common_spec(base_poses, {base_poses, fast_poses}, n);
  MESSAGE("d_max per image " << plan.d_max_image << " m, atlas " << spec.cylinder_width << "x"
                             << spec.rows());
  CHECK(coverage_holes(base_poses, spec) == 0);

  // Same atlas window, faster flight.
  TextureAtlas fast_atlas;
  const std::size_t fast = coverage_holes(fast_poses, spec, &fast_atlas);
  MESSAGE("holes at 1.11x: " << fast);
  CHECK(fast > 0);
  // A view's axial footprint at angle phi from its center is
  // 2 r (239.5 / f) / sqrt(1 + tan^2 phi) = h0 cos phi. Holes open where that
  // drops below the advance per turn, i.e. beyond phi* of every view center
  // (views are centered on multiples of 60 degrees).
  const double h0 = 2.0 * 3.0 * 239.5 / K.f;
  const double advance = n * 1.11 * plan.d_max_image;
  const double phi_star = std::acos(advance / h0) / kDeg;
  const AtlasSurface& s = fast_atlas.surface(SurfaceId::Wall);
  double nearest = 180.0;
  std::vector<int> hole_columns(s.holes.width, 0);
  for (int r = 0; r < s.holes.height; ++r) {
    for (int c = 0; c < s.holes.width; ++c) {
      if (!s.holes.at(c, r)) continue;
      const double deg = (c + 0.5) * 360.0 / s.holes.width;
      nearest = std::min(nearest, std::abs(std::remainder(deg, 60.0)));
      hole_columns[c] = 1;
    }
  }
  MESSAGE("holes start " << nearest << " deg from a view center, predicted " << phi_star);
  CHECK(nearest >= phi_star - 0.5);
  CHECK(nearest <= phi_star + 1.0);
  // Every sector between neighbouring view centers has holes.
  for (int j = 0; j < 6; ++j) {
    int count = 0;
    for (int c = 0; c < s.holes.width; ++c) {
      const double deg = (c + 0.5) * 360.0 / s.holes.width;
      count += hole_columns[c] && deg > 60.0 * j && deg < 60.0 * (j + 1);
    }
    CHECK_MESSAGE(count > 0, "sector " << j);
  }
}

TEST_CASE("coverage: hole count never decreases with forward speed") {
  const auto K = camera();
  const int n = 6;
  const auto plan = planner::plan_speed(K.omega_h, K.omega_v, 3.0, 0.0, n);
  const std::vector<double> factors{0.7, 0.9, 1.0, 1.05, 1.11, 1.2, 1.35};
  std::vector<std::vector<PoseSE3>> runs;
  for (double factor : factors) runs.push_back(spiral(n, 6, factor * plan.d_max_image));
  const AtlasSpec spec = common_spec(runs[2], runs, n);
  std::size_t prev = 0;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const double factor = factors[i];
    const std::size_t holes = coverage_holes(runs[i], spec);
    MESSAGE("speed " << factor << "x: " << holes << " holes");
    CHECK(holes >= prev);
    prev = holes;
  }
  CHECK(prev > 0);
}

TEST_CASE("round trip: render, reconstruct and stitch reproduce the wall texture") {
  const auto K = camera();
  const auto prior = ScenePrior::cylinder(3.0);
  const sim::Scene scene = noise_scene();
  const auto poses = spiral(10, 3, 0.15);
  const AtlasSpec spec = atlas_spec_for(K, prior, poses, 10);
  AtlasAccumulator acc(prior, spec);
  const RayTable rays(K);
  for (std::size_t f = 0; f < poses.size(); ++f) {
    acc.add(reconstruct_frame(sim::render_view(scene, K, poses[f]), static_cast<int>(f), poses[f],
                              rays, prior));
  }
  const TextureAtlas atlas = acc.finish();
  const AtlasSurface& s = atlas.surface(SurfaceId::Wall);
  double se = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < s.color.height; ++r) {
    for (int c = 0; c < s.color.width; ++c) {
      if (s.holes.at(c, r)) continue;
      const auto truth = scene.texture->sample(SurfaceId::Wall, texel_center_coords(c, r, 3.0, spec));
      for (int ch = 0; ch < 3; ++ch) {
        const double d = truth[ch] - s.color.at(c, r, ch);
        se += d * d;
      }
      n += 3;
    }
  }
  const double psnr = 10.0 * std::log10(255.0 * 255.0 / (se / n));
  MESSAGE("PSNR " << psnr << " dB over " << n / 3 << " texels, holes " << atlas.hole_count());
  CHECK(atlas.hole_count() == 0);
  CHECK(psnr >= 30.0);
}

TEST_CASE("export_pointcloud round trips") {
  testing::TempDir dir("mapping");
  export_pointcloud({}, dir / "empty.ply");
  CHECK(read_ply(dir / "empty.ply").empty());
  std::vector<DensePoint> pts(3);
  pts[0].position = Vec3(1, 2, 3);
  pts[0].color = {1, 2, 3};
  pts[1].position = Vec3(-0.5, 0.25, 1e3);
  pts[1].color = {255, 0, 128};
  pts[2].position = Vec3(0.1, 0.2, 0.3);
  for (auto fmt : {PlyFormat::BinaryLittleEndian, PlyFormat::Ascii}) {
    export_pointcloud(pts, dir / "three.ply", fmt);
    const auto back = read_ply(dir / "three.ply");
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(back[i] == to_ply_vertex(pts[i]));
  }
}

TEST_CASE("write_atlas names files by surface") {
  testing::TempDir dir("atlas");
  AtlasSpec spec;
  spec.texels_per_meter = 10;
  spec.y_max = 1;
  const auto atlas = AtlasAccumulator(trolley_box(), spec).finish();
  write_atlas(atlas, dir.path());
  for (const char* name : {"floor", "left", "right", "ceiling"}) {
    CHECK(std::filesystem::exists(dir / (std::string("atlas_") + name + ".png")));
    CHECK(std::filesystem::exists(dir / (std::string("holes_") + name + ".png")));
  }
  CHECK(atlas.hole_count() == [&] {
    std::size_t n = 0;
    for (const auto& s : atlas.surfaces) n += static_cast<std::size_t>(s.color.width) * s.color.height;
    return n;
  }());
}

}  // TEST_SUITE
