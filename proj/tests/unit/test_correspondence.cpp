#include "generators.hpp"
#include "temp_dir.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/matching/correspondence.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

using namespace tunnelrec;
using tunnelrec::testing::Gen;
using tunnelrec::testing::TempDir;

namespace {

constexpr double kDeg = M_PI / 180.0;

CameraIntrinsics camera() { return CameraIntrinsics::from_horizontal_fov(60 * kDeg, 640, 480); }

PoseSE3 spiral(int k) {
  PoseSE3 p;
  p.rotation = rotation_about_y(k * 36 * kDeg);
  p.translation = Vec3(0, 0.15 * k, 0);
  return p;
}

// Distance in pixels from x_j to the groundtruth epipolar line of x_i
// (pinhole camera, no distortion).
double epipolar_line_distance(const Match& m, const PoseSE3& a, const PoseSE3& b,
                              const CameraIntrinsics& K) {
  const Mat3 R = b.rotation.transpose() * a.rotation;
  const Vec3 t = b.rotation.transpose() * (a.translation - b.translation);
  Mat3 Km;
  Km << K.f, 0, K.cx, 0, K.f, K.cy, 0, 0, 1;
  const Mat3 F = Km.inverse().transpose() * skew(t) * R * Km.inverse();
  const Vec3 l = F * Vec3(m.x_i, m.y_i, 1.0);
  return std::abs(Vec3(m.x_j, m.y_j, 1.0).dot(l)) / l.head<2>().norm();
}

// First-order distance of the 4D point (x_i, y_i, x_j, y_j) to the
// epipolar variety; with isotropic pixel noise it is distributed like one
// noise coordinate.
double sampson_distance(const Match& m, const PoseSE3& a, const PoseSE3& b,
                        const CameraIntrinsics& K) {
  const Mat3 R = b.rotation.transpose() * a.rotation;
  const Vec3 t = b.rotation.transpose() * (a.translation - b.translation);
  Mat3 Km;
  Km << K.f, 0, K.cx, 0, K.f, K.cy, 0, 0, 1;
  const Mat3 F = Km.inverse().transpose() * skew(t) * R * Km.inverse();
  const Vec3 p(m.x_i, m.y_i, 1.0), q(m.x_j, m.y_j, 1.0);
  const Vec3 l1 = F * p, l2 = F.transpose() * q;
  return std::abs(q.dot(l1)) / std::sqrt(l1.head<2>().squaredNorm() + l2.head<2>().squaredNorm());
}

std::vector<Match> random_matches(Gen& g, int n, int w, int h) {
  std::vector<Match> out;
  for (int k = 0; k < n; ++k) {
    const int i = g.integer(0, 5);
    out.push_back({i, i + g.integer(1, 3), g.uniform(0, w), g.uniform(0, h), g.uniform(0, w),
                   g.uniform(0, h), g.uniform(0, 1)});
  }
  return out;
}

}  // namespace

TEST_SUITE("correspondence") {

TEST_CASE("match file round trip") {
  TempDir dir("m");
  Gen g(1);
  const auto m = random_matches(g, 500, 640, 480);
  write_matches(dir / "m.txt", m);
  CHECK(read_matches(dir / "m.txt") == m);
}

TEST_CASE("match file parsing") {
  TempDir dir("mp");
  std::ofstream(dir / "a.txt") << "# header\n0 1 10 20 30 40 0.5  # trailing comment\n\n 2\t3 1 2 3 4 1\n";
  const auto m = read_matches(dir / "a.txt");
  REQUIRE(m.size() == 2);
  CHECK(m[0].x_j == 30.0);
  CHECK(m[1].frame_i == 2);
  std::ofstream(dir / "b.txt") << "0 1 10 20 30\n";
  CHECK_THROWS_AS(read_matches(dir / "b.txt"), IoError);
  std::ofstream(dir / "c.txt") << "0 1 10 20 30 40 1 7\n";
  CHECK_THROWS_AS(read_matches(dir / "c.txt"), IoError);
  CHECK_THROWS_AS(read_matches(dir / "missing.txt"), IoError);
}

TEST_CASE("match validation") {
  std::vector<Match> m{{0, 1, 1, 1, 2, 2, 1}};
  CHECK_NOTHROW(validate_matches(m, 640, 480));
  m[0].frame_j = 0;
  CHECK_THROWS_AS(validate_matches(m, 640, 480), InvalidArgument);
  m[0] = {0, 1, 640, 1, 2, 2, 1};
  CHECK_THROWS_AS(validate_matches(m, 640, 480), InvalidArgument);
  m[0] = {0, 1, 1, 1, 2, 2, 1.5};
  CHECK_THROWS_AS(validate_matches(m, 640, 480), InvalidArgument);
}

TEST_CASE("static mask: empty, full and bottom quarter") {
  Gen g(2);
  const auto m = random_matches(g, 2000, 640, 480);
  const Image empty(640, 480, 1, 0), full(640, 480, 1, 255);
  CHECK(apply_static_mask(m, empty).matches == m);
  CHECK(apply_static_mask(m, empty).removed == 0);
  CHECK(apply_static_mask(m, full).matches.empty());
  CHECK(apply_static_mask(m, full).removed == m.size());

  Image quarter(640, 480, 1, 0);
  for (int y = 360; y < 480; ++y)
    for (int x = 0; x < 640; ++x) quarter.at(x, y) = 1;
  std::vector<Match> expect;
  for (const auto& x : m)
    if (x.y_i < 360 && x.y_j < 360) expect.push_back(x);
  const auto r = apply_static_mask(m, quarter);
  CHECK(r.matches == expect);
  CHECK(r.removed == m.size() - expect.size());
  // Idempotent.
  CHECK(apply_static_mask(r.matches, quarter).matches == r.matches);
  CHECK_THROWS_AS(apply_static_mask(m, Image(320, 240, 1)), InvalidArgument);
}

TEST_CASE("match graph") {
  CHECK(build_match_graph(3, 10) == std::vector<Edge>{{0, 1}, {1, 2}});
  const auto g12 = build_match_graph(12, 10);
  CHECK(std::find(g12.begin(), g12.end(), Edge{0, 10}) != g12.end());
  CHECK(std::find(g12.begin(), g12.end(), Edge{1, 11}) != g12.end());
  for (int frames = 2; frames < 40; ++frames) {
    for (int n = 1; n < 15; ++n) {
      const auto e = build_match_graph(frames, n);
      const std::size_t expected = n == 1 ? frames - 1 : (frames - 1) + std::max(0, frames - n);
      CHECK(e.size() == expected);
      CHECK(std::is_sorted(e.begin(), e.end()));
      for (const auto& [a, b] : e) CHECK((a >= 0 && a < b && b < frames));
    }
  }
  CHECK_THROWS_AS(build_match_graph(1, 10), InvalidArgument);
}

TEST_CASE("identical poses give identical pixels") {
  sim::Scene s;
  SynthesisOptions o;
  const auto r = synthesize_matches(0, spiral(0), 1, spiral(0), s, camera(), 200, o);
  REQUIRE(r.matches.size() == 200);
  for (const auto& m : r.matches) {
    CHECK(m.x_i == m.x_j);
    CHECK(m.y_i == m.y_j);
  }
}

TEST_CASE("noiseless 36 degree pair satisfies the epipolar constraint") {
  sim::Scene s;
  SynthesisOptions o;
  const auto K = camera();
  const auto r = synthesize_matches(0, spiral(0), 1, spiral(1), s, K, 1000, o);
  for (const auto& m : r.matches) CHECK(epipolar_line_distance(m, spiral(0), spiral(1), K) < 1e-6);
  CHECK_NOTHROW(validate_matches(r.matches, K.width, K.height));
}

TEST_CASE("outlier fraction 0.3 gives 29-31% epipolar violations above 5 px") {
  sim::Scene s;
  SynthesisOptions o;
  o.outlier_fraction = 0.3;
  o.pixel_noise_sd = 0.5;
  o.seed = 3;
  const auto K = camera();
  const auto r = synthesize_matches(0, spiral(0), 1, spiral(1), s, K, 10000, o);
  int violating = 0, flagged = 0;
  for (std::size_t k = 0; k < r.matches.size(); ++k) {
    violating += epipolar_line_distance(r.matches[k], spiral(0), spiral(1), K) > 5.0;
    flagged += r.outlier[k];
  }
  CHECK(flagged == 3000);
  CHECK(violating >= 2900);
  CHECK(violating <= 3100);
}

TEST_CASE("noisy inliers stay within three sigma of the epipolar line") {
  sim::Scene s;
  SynthesisOptions o;
  o.pixel_noise_sd = 0.5;
  o.seed = 4;
  const auto K = camera();
  const auto r = synthesize_matches(0, spiral(2), 3, spiral(3), s, K, 5000, o);
  int within = 0;
  for (const auto& m : r.matches) within += sampson_distance(m, spiral(2), spiral(3), K) <= 1.5;
  CHECK(within >= 0.99 * r.matches.size());
}

TEST_CASE("synthesis is deterministic per seed and rejects empty overlap") {
  sim::Scene s;
  SynthesisOptions o;
  o.pixel_noise_sd = 0.3;
  o.outlier_fraction = 0.2;
  const auto K = camera();
  const auto a = synthesize_matches(0, spiral(0), 1, spiral(1), s, K, 300, o);
  const auto b = synthesize_matches(0, spiral(0), 1, spiral(1), s, K, 300, o);
  CHECK(a.matches == b.matches);
  PoseSE3 away = spiral(5);  // facing the opposite wall
  CHECK_THROWS_AS(synthesize_matches(0, spiral(0), 1, away, s, K, 100, o), DegenerateConfiguration);
}

TEST_CASE("static outliers repeat the occluder pixel across every edge") {
  sim::Scene s;
  s.occluder = {true, 0, 420, 640, 480, {90, 200, 60}};
  SynthesisOptions o;
  o.outlier_fraction = 0.15;
  o.static_outlier_share = 1.0;
  const auto K = camera();
  std::vector<PoseSE3> poses;
  for (int k = 0; k < 12; ++k) poses.push_back(spiral(k));
  const auto graph = build_match_graph(12, 10);
  const auto r = synthesize_dataset_matches(poses, graph, s, K, 80, o);
  int outliers = 0;
  for (std::size_t k = 0; k < r.matches.size(); ++k) {
    const auto& m = r.matches[k];
    if (!r.outlier[k]) {
      CHECK_FALSE(s.occluder.covers(static_cast<int>(m.x_i), static_cast<int>(m.y_i)));
      continue;
    }
    ++outliers;
    CHECK(m.x_i == m.x_j);
    CHECK(m.y_i == m.y_j);
    CHECK(s.occluder.covers(static_cast<int>(m.x_i), static_cast<int>(m.y_i)));
  }
  const double frac = static_cast<double>(outliers) / r.matches.size();
  CHECK(frac == doctest::Approx(0.15).epsilon(0.01));
  // Masking removes exactly the static outliers.
  const auto masked = apply_static_mask(r.matches, s.occluder.mask(K.width, K.height));
  CHECK(masked.removed == static_cast<std::size_t>(outliers));
}

TEST_CASE("dataset matches chain into tracks") {
  sim::Scene s;
  SynthesisOptions o;
  const auto K = camera();
  std::vector<PoseSE3> poses;
  for (int k = 0; k < 25; ++k) poses.push_back(spiral(k));
  const auto graph = build_match_graph(25, 10);
  const auto r = synthesize_dataset_matches(poses, graph, s, K, 60, o);
  const auto edges = group_by_edge(r.matches);
  for (const auto& [e, ms] : edges) {
    CHECK(std::find(graph.begin(), graph.end(), e) != graph.end());
    for (const auto& m : ms) CHECK((m.frame_i == e.first && m.frame_j == e.second));
  }
  const TrackSet ts = build_tracks(r.matches, &r.outlier);
  CHECK(ts.conflicting == 0);
  std::size_t obs = 0;
  for (const auto& t : ts.tracks) {
    CHECK(t.observations.size() >= 2);
    CHECK(t.status == TrackStatus::Active);
    std::set<int> frames;
    for (const auto& ob : t.observations) frames.insert(ob.frame);
    CHECK(frames.size() == t.observations.size());
    obs += t.observations.size();
  }
  CHECK(obs > ts.tracks.size() * 2);  // some tracks span three or more frames
  // Deterministic and independent of the input order.
  auto shuffled = r.matches;
  std::reverse(shuffled.begin(), shuffled.end());
  const TrackSet again = build_tracks(shuffled);
  REQUIRE(again.tracks.size() == ts.tracks.size());
  for (std::size_t k = 0; k < ts.tracks.size(); ++k) {
    REQUIRE(again.tracks[k].observations.size() == ts.tracks[k].observations.size());
    for (std::size_t q = 0; q < ts.tracks[k].observations.size(); ++q) {
      CHECK(again.tracks[k].observations[q].frame == ts.tracks[k].observations[q].frame);
      CHECK(again.tracks[k].observations[q].pixel == ts.tracks[k].observations[q].pixel);
    }
  }
}

TEST_CASE("tracks that revisit a frame are dropped as conflicting") {
  const std::vector<Match> m = {
      {0, 1, 10, 10, 20, 20, 1},
      {1, 2, 20, 20, 30, 30, 1},
      {0, 2, 11, 11, 30, 30, 1},  // joins a second frame-0 pixel
      {3, 4, 1, 1, 2, 2, 1},
  };
  const auto ts = build_tracks(m);
  CHECK(ts.conflicting == 1);
  REQUIRE(ts.tracks.size() == 1);
  CHECK(ts.tracks[0].observations.size() == 2);
  CHECK(std::string(track_status_name(TrackStatus::PrunedGeometry)) == "pruned_geometry");
}

}  // TEST_SUITE
