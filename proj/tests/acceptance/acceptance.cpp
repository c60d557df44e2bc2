// Acceptance run. One PASS/FAIL line per criterion; exit status 1 if any
// fails. Pass criterion numbers as arguments to run a subset.

#include "generators.hpp"
#include "temp_dir.hpp"

#include "tunnelrec/ba/bundle_adjustment.hpp"
#include "tunnelrec/mapping/atlas.hpp"
#include "tunnelrec/mapping/dense.hpp"
#include "tunnelrec/matching/correspondence.hpp"
#include "tunnelrec/pipeline/pipeline.hpp"
#include "tunnelrec/planner/flight_planner.hpp"
#include "tunnelrec/pose/pose_estimation.hpp"
#include "tunnelrec/simulator/renderer.hpp"
#include "tunnelrec/simulator/texture.hpp"
#include "tunnelrec/simulator/trajectory.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <string>
#include <vector>

using namespace tunnelrec;
using tunnelrec::testing::Gen;
using tunnelrec::testing::TempDir;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = M_PI / 180.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

CameraIntrinsics camera() { return CameraIntrinsics::from_horizontal_fov(60 * kDeg, 640, 480); }

// ---------------------------------------------------------------------------
// 1. Planner round trip

// Closed-form distances from (tx, tz) to the circle x^2 + z^2 = r^2 along
// +x, -x and +z.
planner::RangeReadings circle_readings(double tx, double tz, double r) {
  const double hx = std::sqrt(r * r - tz * tz);
  const double hz = std::sqrt(r * r - tx * tx);
  return {hx - tx, hx + tx, hz - tz};
}

Outcome planner_round_trip() {
  const double r = 3.0;
  Gen g(101);
  const Stopwatch sw;
  double worst_full = 0.0, worst_dropped = 0.0;
  int dropped_solves = 0;
  for (int i = 0; i < 1000; ++i) {
    // Uniform in the disc, clear of the wall by 5 cm.
    const double rho = (r - 0.05) * std::sqrt(g.uniform(0.0, 1.0));
    const double a = g.uniform(0.0, 2 * M_PI);
    const double tx = rho * std::cos(a), tz = rho * std::sin(a);
    const auto full = circle_readings(tx, tz, r);
    const auto s = planner::solve_uav_offset(full, r);
    worst_full = std::max(worst_full, std::hypot(s.tx - tx, s.tz - tz));
    for (int drop = 0; drop < 3; ++drop) {
      // Without the upward sensor the mirror offset is indistinguishable.
      if (drop == 2 && tz > 0.0) continue;
      auto rd = full;
      if (drop == 0) rd.d1.reset();
      if (drop == 1) rd.d2.reset();
      if (drop == 2) rd.d3.reset();
      const auto d = planner::solve_uav_offset_degraded(rd, r);
      worst_dropped = std::max(worst_dropped, std::hypot(d.tx - tx, d.tz - tz));
      ++dropped_solves;
    }
  }
  const double t = sw.seconds();
  return {worst_full < 1e-6 && worst_dropped < 1e-4 && t < 5.0,
          fmt::format("1000 offsets: max error {:.2e} m (< 1e-6); one sensor dropped, {} solves: max "
                      "{:.2e} m (< 1e-4); {:.2f} s (< 5 s)",
                      worst_full, dropped_solves, worst_dropped, t)};
}

// ---------------------------------------------------------------------------
// 2. Speed-law shape

Outcome speed_law() {
  const auto K = camera();
  const double r = 3.0;
  bool decreasing = true;
  double prev = std::numeric_limits<double>::infinity();
  const int steps = 2000;
  for (int i = 0; i <= steps; ++i) {
    const double r1 = 0.95 * r * i / steps;
    const double d = planner::plan_speed(K.omega_h, K.omega_v, r, r1, 10).d_max_rotation;
    if (!(d < prev)) decreasing = false;
    prev = d;
  }
  bool exact = true;
  for (double w : {10.0, 45.0, 60.0, 90.0, 120.0}) {
    exact = exact && planner::view_angle_theta(w * kDeg, 0.0, r) == w * kDeg / 2.0;
  }
  return {decreasing && exact,
          fmt::format("d_max(r1) strictly decreasing over {} steps of r1 in [0, {:.2f}] m: {}; "
                      "theta(0) == omega_h/2 bit-exact for 5 FoVs: {}",
                      steps, 0.95 * r, decreasing ? "yes" : "no", exact ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 3. Coverage

std::vector<PoseSE3> spiral(int per_rotation, int rotations, double step) {
  sim::TrajectorySpec t;
  t.images_per_rotation = per_rotation;
  t.rotation_count = rotations;
  t.rotation_step = 2 * M_PI / per_rotation;
  t.forward_step = step;
  return sim::generate_trajectory(t.noiseless(), 1);
}

sim::Scene noise_scene() {
  sim::Scene s;
  s.texture = sim::make_noise(0.25, 7);
  return s;
}

TextureAtlas render_and_stitch(const sim::Scene& scene, const std::vector<PoseSE3>& poses,
                               const AtlasSpec& spec, std::size_t* points_mismatch = nullptr) {
  const auto K = camera();
  const sim::PixelRays pixel_rays(K);
  const RayTable rays(K);
  AtlasAccumulator acc(scene.prior, spec);
  for (std::size_t f = 0; f < poses.size(); ++f) {
    const auto pts =
        reconstruct_frame(sim::render_view(scene, pixel_rays, poses[f]), static_cast<int>(f), poses[f], rays,
                          scene.prior);
    if (points_mismatch && pts.size() != static_cast<std::size_t>(K.width) * K.height) ++*points_mismatch;
    acc.add(pts);
  }
  return acc.finish();
}

Outcome coverage() {
  const Stopwatch sw;
  const auto K = camera();
  const int n = 6;
  const auto plan = planner::plan_speed(K.omega_h, K.omega_v, 3.0, 0.0, n);
  const auto base = spiral(n, 10, plan.d_max_image);
  const auto fast = spiral(n, 10, 1.11 * plan.d_max_image);
  // Both runs are stitched into the same atlas window.
  AtlasSpec spec = atlas_spec_for(K, ScenePrior::cylinder(3.0), base, n);
  for (const auto* poses : {&base, &fast}) {
    const Interval iv = covered_axial_range(K, ScenePrior::cylinder(3.0), *poses, n);
    spec.y_min = std::max(spec.y_min, iv.lo);
    spec.y_max = std::min(spec.y_max, iv.hi);
  }
  const auto scene = noise_scene();
  const std::size_t h0 = render_and_stitch(scene, base, spec).hole_count();
  const std::size_t h1 = render_and_stitch(scene, fast, spec).hole_count();
  const double t = sw.seconds();
  return {h0 == 0 && h1 > 0 && t < 120.0,
          fmt::format("n = {}, 640x480, 10 rotations, d_max {:.4f} m/image; holes at d_max: {} (== 0), at "
                      "1.11x: {} (> 0); {:.1f} s (< 120 s)",
                      n, plan.d_max_image, h0, h1, t)};
}

// ---------------------------------------------------------------------------
// 4. Pose accuracy

double angle_between_deg(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) / kDeg;
}

Outcome pose_accuracy() {
  const auto K = camera();
  const sim::Scene scene = noise_scene();
  Gen g(404);
  double rot_clean = 0.0, dir_clean = 0.0, rot_out = 0.0, dir_out = 0.0;
  const int pairs = 20;
  for (int i = 0; i < pairs; ++i) {
    // A 36 degree step of a spiral with a random position inside the tunnel.
    PoseSE3 a, b;
    const double yaw = g.uniform(0.0, 2 * M_PI);
    const Vec3 c(g.uniform(-0.3, 0.3), g.uniform(-1, 1), g.uniform(-0.3, 0.3));
    a.rotation = rotation_about_y(yaw);
    a.translation = c;
    b.rotation = rotation_about_y(yaw + 36 * kDeg);
    b.translation = c + Vec3(g.uniform(-0.05, 0.05), g.uniform(0.1, 0.2), g.uniform(-0.05, 0.05));
    // X_b = R X_a + t
    const Mat3 R = b.rotation.transpose() * a.rotation;
    const Vec3 t = b.rotation.transpose() * (a.translation - b.translation);
    for (const double outliers : {0.0, 0.3}) {
      SynthesisOptions o;
      o.outlier_fraction = outliers;
      o.seed = 1000 + 2 * i + (outliers > 0);
      const auto m = synthesize_matches(0, a, 1, b, scene, K, outliers > 0 ? 800 : 300, o);
      const auto est = estimate_essential_ransac(m.matches, K, K);
      const auto rel = recover_relative_pose(est, m.matches, K, K);
      const double dr = std::abs(so3_log(R.transpose() * rel.rotation).norm()) / kDeg;
      const double dt = angle_between_deg(t, rel.translation_direction);
      if (outliers > 0) {
        rot_out = std::max(rot_out, dr);
        dir_out = std::max(dir_out, dt);
      } else {
        rot_clean = std::max(rot_clean, dr);
        dir_clean = std::max(dir_clean, dt);
      }
    }
  }
  return {rot_clean < 0.1 && dir_clean < 0.5 && rot_out < 1.0 && dir_out < 1.0,
          fmt::format("{} noiseless 36 deg pairs: max rotation error {:.2e} deg (< 0.1), translation "
                      "direction {:.2e} deg (< 0.5); 30% outliers: {:.3f} deg / {:.3f} deg (< 1)",
                      pairs, rot_clean, dir_clean, rot_out, dir_out)};
}

// ---------------------------------------------------------------------------
// 5. BA ablation

Outcome ba_ablation() {
  TempDir dir("accept5");
  const auto config =
      load_config("", {"run.output_dir=" + dir.path().string(), "matches.outlier_fraction=0.15"});
  const Stopwatch total;
  stage_simulate(config);
  stage_matches(config);
  const Stopwatch sw;
  stage_pose(config);
  const auto rows = stage_ablate(config);
  const double t = sw.seconds();
  fmt::print("{}", format_ablation_table(rows));
  const BAReport* sba = nullptr;
  const BAReport* pruned = nullptr;
  for (const auto& row : rows) {
    if (row.config == AblationConfig::SBA) sba = &row.result.report;
    if (row.config == AblationConfig::P1P2P3) pruned = &row.result.report;
  }
  if (!sba || !pruned) return {false, "ablation table lacks SBA or P1+P2+P3"};
  const double ratio = sba->after_px / pruned->after_px;
  return {pruned->after_px <= 1.0 && ratio >= 5.0 && t < 300.0,
          fmt::format("{} frames, {} tracks after pruning; P1+P2+P3 {:.4f} px (<= 1.0), SBA {:.4f} px = "
                      "{:.1f}x (>= 5x); pose + ablation {:.1f} s (< 300 s), with rendering {:.1f} s",
                      config.images_per_rotation * config.rotations, pruned->active_tracks,
                      pruned->after_px, sba->after_px, ratio, t, total.seconds())};
}

// ---------------------------------------------------------------------------
// 6. Jacobian correctness

Outcome jacobians() {
  Gen g(606);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto K = CameraIntrinsics::pinhole(g.uniform(300, 900), g.uniform(280, 360), g.uniform(200, 280),
                                             640, 480, g.uniform(-0.05, 0.05), g.uniform(-0.01, 0.01));
    const Mat3 R = g.rotation();
    const Vec3 t = g.vec3(-2, 2);
    const Vec3 Xc(g.uniform(-1, 1), g.uniform(-1, 1), g.uniform(1.0, 6.0));
    const Vec3 X = R.transpose() * (Xc - t);
    const Vec2 obs(g.uniform(0, 640), g.uniform(0, 480));
    const auto J = reprojection_jacobian(R, t, X, obs, K);
    // Residual for the perturbation R <- exp(w) R, t <- t + v, X <- X + p.
    auto residual = [&](const Eigen::Matrix<double, 9, 1>& d) {
      const Mat3 R2 = Eigen::AngleAxisd(d.head<3>().norm(), d.head<3>().norm() > 0
                                                                 ? Vec3(d.head<3>().normalized())
                                                                 : Vec3::UnitX())
                          .toRotationMatrix() *
                      R;
      const Vec3 q = R2 * (X + d.tail<3>()) + t + d.segment<3>(3);
      const double x = q.x() / q.z(), y = q.y() / q.z();
      const double r2 = x * x + y * y;
      const double s = 1.0 + K.k1 * r2 + K.k2 * r2 * r2;
      return Vec2(K.f * s * x + K.cx - obs.x(), K.f * s * y + K.cy - obs.y());
    };
    Eigen::Matrix<double, 2, 9> numeric;
    const double h = 1e-6;
    for (int k = 0; k < 9; ++k) {
      Eigen::Matrix<double, 9, 1> d = Eigen::Matrix<double, 9, 1>::Zero();
      d[k] = h;
      numeric.col(k) = (residual(d) - residual(-d)) / (2 * h);
    }
    Eigen::Matrix<double, 2, 9> analytic;
    analytic << J.d_pose, J.d_point;
    worst = std::max(worst, (analytic - numeric).norm() / numeric.norm());
    worst = std::max(worst, (J.residual - residual(Eigen::Matrix<double, 9, 1>::Zero())).norm() /
                                std::max(1.0, J.residual.norm()));
  }
  return {worst < 1e-5,
          fmt::format("100 random cameras (with radial distortion), poses and points: max relative "
                      "difference {:.2e} (< 1e-5)",
                      worst)};
}

// ---------------------------------------------------------------------------
// 7. Dense round trip

Outcome dense_round_trip() {
  const auto K = camera();
  const auto scene = noise_scene();
  const auto poses = spiral(10, 3, 0.15);
  const AtlasSpec spec = atlas_spec_for(K, scene.prior, poses, 10);
  std::size_t wrong_counts = 0;
  const TextureAtlas atlas = render_and_stitch(scene, poses, spec, &wrong_counts);
  const AtlasSurface& s = atlas.surface(SurfaceId::Wall);
  const double radius = scene.prior.as_cylinder().radius;
  double se = 0.0;
  std::size_t n = 0;
  for (int row = 0; row < s.color.height; ++row) {
    for (int col = 0; col < s.color.width; ++col) {
      if (s.holes.at(col, row)) continue;
      // Texel center -> wall coordinates (arc length, axial position).
      double a = (col + 0.5) / spec.cylinder_width * 2.0 * M_PI;
      if (a > M_PI) a -= 2.0 * M_PI;
      const Vec2 uv(radius * a, spec.y_min + (row + 0.5) / spec.texels_per_meter);
      const auto truth = scene.texture->sample(SurfaceId::Wall, uv);
      for (int ch = 0; ch < 3; ++ch) {
        const double d = truth[ch] - s.color.at(col, row, ch);
        se += d * d;
      }
      n += 3;
    }
  }
  const double psnr = n ? 10.0 * std::log10(255.0 * 255.0 / (se / n)) : 0.0;
  return {n > 0 && psnr >= 30.0 && wrong_counts == 0,
          fmt::format("{} frames: PSNR {:.2f} dB (>= 30) over {} non-hole texels ({} holes); frames with "
                      "point count != {} pixels: {}",
                      poses.size(), psnr, n / 3, atlas.hole_count(), K.width * K.height, wrong_counts)};
}

// ---------------------------------------------------------------------------
// 8. Determinism

std::map<std::string, std::string> numeric_outputs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).string();
    if (rel == "config.ini") continue;  // records the thread count
    std::ifstream in(e.path(), std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (rel == "summary.json") {
      auto j = nlohmann::json::parse(bytes);
      j["config"].erase("run.threads");
      j["config"].erase("run.output_dir");
      bytes = j.dump();
    }
    files[rel] = std::move(bytes);
  }
  return files;
}

Outcome determinism() {
  TempDir a("accept8a"), b("accept8b"), c("accept8c");
  auto config = [](const fs::path& out, int threads) {
    return load_config("", {"run.output_dir=" + out.string(), fmt::format("run.threads={}", threads),
                            "run.seed=8", "camera.width=320", "camera.height=240", "trajectory.rotations=3",
                            "trajectory.speed_factor=0.9", "matches.points_per_frame=400",
                            "matches.outlier_fraction=0.15"});
  };
  run_pipeline(config(a.path(), 1));
  run_pipeline(config(b.path(), 1));
  run_pipeline(config(c.path(), 4));
  const auto fa = numeric_outputs(a.path()), fb = numeric_outputs(b.path()), fc = numeric_outputs(c.path());
  std::set<std::string> differing;
  for (const auto* other : {&fb, &fc}) {
    for (const auto& [name, bytes] : fa) {
      const auto it = other->find(name);
      if (it == other->end() || it->second != bytes) differing.insert(name);
    }
    for (const auto& [name, bytes] : *other) {
      if (!fa.count(name)) differing.insert(name);
    }
  }
  std::string list;
  for (const auto& d : differing) list += " " + d;
  return {differing.empty() && fa.size() > 10,
          fmt::format("seed 8, 30 frames with outliers, runs with 1, 1 and 4 threads: {} files compared, {} "
                      "differ{}",
                      fa.size(), differing.size(), list)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"planner round trip", planner_round_trip},
      {"speed-law shape", speed_law},
      {"coverage at d_max and 1.11x", coverage},
      {"pose accuracy on 36 deg pairs", pose_accuracy},
      {"BA ablation", ba_ablation},
      {"Jacobian correctness", jacobians},
      {"dense round trip", dense_round_trip},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(number)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    fmt::print("criterion {} {}: {} - {}\n", number, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
