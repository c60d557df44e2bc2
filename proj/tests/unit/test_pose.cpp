#include "generators.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/matching/correspondence.hpp"
#include "tunnelrec/pose/pose_estimation.hpp"
#include "tunnelrec/simulator/trajectory.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

using namespace tunnelrec;
using tunnelrec::testing::Gen;

namespace {

constexpr double kDeg = M_PI / 180.0;

CameraIntrinsics camera() { return CameraIntrinsics::from_horizontal_fov(60 * kDeg, 640, 480); }

sim::Scene scene(double r = 3.0) {
  sim::Scene s;
  s.prior = ScenePrior::cylinder(r);
  return s;
}

// Spiral pose k of a centered, noiseless trajectory.
PoseSE3 spiral_pose(int k, double step = 0.15, double turn = 36 * kDeg) {
  PoseSE3 p;
  p.rotation = rotation_about_y(k * turn);
  p.translation = Vec3(0, k * step, 0);
  return p;
}

// Groundtruth relative motion X_j = R X_i + t between camera-to-world poses.
std::pair<Mat3, Vec3> relative(const PoseSE3& a, const PoseSE3& b) {
  const Mat3 R = b.rotation.transpose() * a.rotation;
  const Vec3 t = b.rotation.transpose() * (a.translation - b.translation);
  return {R, t};
}

double angle_deg(const Vec3& a, const Vec3& b) {
  return std::acos(std::clamp(a.normalized().dot(b.normalized()), -1.0, 1.0)) / kDeg;
}

SyntheticMatches pair_matches(const PoseSE3& a, const PoseSE3& b, int count, double noise,
                              double outliers, std::uint64_t seed) {
  SynthesisOptions o;
  o.pixel_noise_sd = noise;
  o.outlier_fraction = outliers;
  o.seed = seed;
  return synthesize_matches(0, a, 1, b, scene(), camera(), count, o);
}

}  // namespace

TEST_SUITE("pose") {

TEST_CASE("noiseless 36 degree pair: every match is an inlier with vanishing Sampson error") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(1), 400, 0.0, 0.0, 3);
  const auto est = estimate_essential_ransac(m.matches, K, K);
  CHECK(est.inlier_ratio == 1.0);
  double worst = 0.0;
  for (double d2 : sampson_distances_squared(est.E, m.matches, K, K)) worst = std::max(worst, d2);
  CHECK(std::sqrt(worst) < 1e-6);
  Eigen::JacobiSVD<Mat3> svd(est.E);
  const auto s = svd.singularValues();
  CHECK(std::abs(s[0] - s[1]) <= 1e-6 * s[0]);
  CHECK(s[2] <= 1e-6 * s[0]);
}

TEST_CASE("Sampson distances vanish under the groundtruth essential matrix") {
  const auto K = camera();
  const auto a = spiral_pose(3), b = spiral_pose(4);
  const auto m = pair_matches(a, b, 200, 0.0, 0.0, 4);
  const auto [R, t] = relative(a, b);
  const Mat3 E = skew(t) * R;
  for (double d2 : sampson_distances_squared(E, m.matches, K, K)) CHECK(std::sqrt(d2) < 1e-8);
}

TEST_CASE("30% outliers: true inliers are kept") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(1), 1000, 0.25, 0.3, 5);
  const auto est = estimate_essential_ransac(m.matches, K, K);
  std::vector<std::uint8_t> is_inlier(m.matches.size(), 0);
  for (int k : est.inliers) is_inlier[k] = 1;
  int truth = 0, kept = 0, false_pos = 0;
  for (std::size_t k = 0; k < m.matches.size(); ++k) {
    if (!m.outlier[k]) {
      ++truth;
      kept += is_inlier[k];
    } else {
      false_pos += is_inlier[k];
    }
  }
  MESSAGE("kept " << kept << " of " << truth << " inliers, " << false_pos << " outliers accepted");
  CHECK(kept >= 0.99 * truth);
  CHECK(false_pos <= 0.01 * (m.matches.size() - truth));
}

TEST_CASE("fewer than 8 matches is rejected") {
  const auto K = camera();
  auto m = pair_matches(spiral_pose(0), spiral_pose(1), 7, 0.0, 0.0, 6);
  CHECK_THROWS_AS(estimate_essential_ransac(m.matches, K, K), InvalidArgument);
  std::vector<Vec2> pts(7, Vec2::Zero());
  CHECK_THROWS_AS(fit_essential(pts, pts), InvalidArgument);
}

TEST_CASE("RANSAC is deterministic per seed") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(1), 500, 0.5, 0.3, 7);
  RansacOptions o;
  o.seed = 99;
  const auto a = estimate_essential_ransac(m.matches, K, K, o);
  const auto b = estimate_essential_ransac(m.matches, K, K, o);
  CHECK(a.inliers == b.inliers);
  CHECK(a.E == b.E);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("inlier set is invariant under uniform pixel scaling") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(1), 600, 0.3, 0.3, 8);
  const auto K2 = CameraIntrinsics::pinhole(2 * K.f, 2 * K.cx, 2 * K.cy, 2 * K.width, 2 * K.height);
  auto scaled = m.matches;
  for (auto& x : scaled) x.x_i *= 2, x.y_i *= 2, x.x_j *= 2, x.y_j *= 2;
  RansacOptions o1, o2;
  o2.threshold_px = 2.0 * o1.threshold_px;
  const auto a = estimate_essential_ransac(m.matches, K, K, o1);
  const auto b = estimate_essential_ransac(scaled, K2, K2, o2);
  CHECK(a.inliers == b.inliers);
}

TEST_CASE("project_to_essential gives equal singular values and a zero one") {
  Gen g(10);
  for (int i = 0; i < 100; ++i) {
    Mat3 M = Mat3::NullaryExpr([&] { return g.uniform(-1, 1); });
    Eigen::JacobiSVD<Mat3> svd(project_to_essential(M));
    const auto s = svd.singularValues();
    CHECK(std::abs(s[0] - s[1]) <= 1e-12);
    CHECK(s[2] <= 1e-12);
  }
}

TEST_CASE("recovered relative pose matches groundtruth on noiseless pairs") {
  const auto K = camera();
  Gen g(11);
  for (int k = 0; k < 10; ++k) {
    const auto a = spiral_pose(k), b = spiral_pose(k + 1);
    const auto m = pair_matches(a, b, 300, 0.0, 0.0, 100 + k);
    const auto est = estimate_essential_ransac(m.matches, K, K);
    const auto rel = recover_relative_pose(est, m.matches, K, K);
    const auto [R, t] = relative(a, b);
    CHECK(rotation_angle_between(R, rel.rotation) / kDeg < 0.1);
    CHECK(angle_deg(t, rel.translation_direction) < 0.5);
    CHECK(std::abs(rel.translation_direction.norm() - 1.0) < 1e-12);
    CHECK(rel.cheirality_support * 2 >= static_cast<int>(est.inliers.size()));
  }
}

TEST_CASE("recovered relative pose with 30% outliers stays within a degree") {
  const auto K = camera();
  for (int k = 0; k < 10; ++k) {
    const auto a = spiral_pose(k), b = spiral_pose(k + 1);
    const auto m = pair_matches(a, b, 800, 0.0, 0.3, 200 + k);
    const auto est = estimate_essential_ransac(m.matches, K, K);
    const auto rel = recover_relative_pose(est, m.matches, K, K);
    const auto [R, t] = relative(a, b);
    CHECK(rotation_angle_between(R, rel.rotation) / kDeg < 1.0);
    CHECK(angle_deg(t, rel.translation_direction) < 1.0);
  }
}

TEST_CASE("off-axis pairs with 30% outliers: a wrong motion that also fits every inlier loses") {
  // Seed 404 draws include pairs where a translation ~60 deg off explains all
  // noiseless inliers within 1 px and captures a few outliers besides.
  const auto K = camera();
  Gen g(404);
  for (int k = 0; k < 20; ++k) {
    PoseSE3 a, b;
    const double yaw = g.uniform(0.0, 2 * M_PI);
    const Vec3 c(g.uniform(-0.3, 0.3), g.uniform(-1, 1), g.uniform(-0.3, 0.3));
    a.rotation = rotation_about_y(yaw);
    a.translation = c;
    b.rotation = rotation_about_y(yaw + 36 * kDeg);
    b.translation = c + Vec3(g.uniform(-0.05, 0.05), g.uniform(0.1, 0.2), g.uniform(-0.05, 0.05));
    const auto m = pair_matches(a, b, 800, 0.0, 0.3, 300 + k);
    const auto est = estimate_essential_ransac(m.matches, K, K);
    const auto rel = recover_relative_pose(est, m.matches, K, K);
    const auto [R, t] = relative(a, b);
    CHECK(rotation_angle_between(R, rel.rotation) / kDeg < 1.0);
    CHECK(angle_deg(t, rel.translation_direction) < 1.0);
    int true_inliers = 0;
    for (int i : est.inliers) true_inliers += !m.outlier[i];
    CHECK(true_inliers == 560);
  }
}

TEST_CASE("loop edges one rotation apart have a long baseline and recover well under noise") {
  const auto K = camera();
  const auto a = spiral_pose(0), b = spiral_pose(10);
  const auto m = pair_matches(a, b, 800, 0.5, 0.3, 12);
  const auto est = estimate_essential_ransac(m.matches, K, K);
  const auto rel = recover_relative_pose(est, m.matches, K, K);
  const auto [R, t] = relative(a, b);
  CHECK(rotation_angle_between(R, rel.rotation) / kDeg < 1.0);
  CHECK(angle_deg(t, rel.translation_direction) < 2.0);
}

TEST_CASE("rotation axis of a spiral step is the tunnel axis") {
  const auto K = camera();
  const auto a = spiral_pose(0), b = spiral_pose(1);
  const auto m = pair_matches(a, b, 300, 0.0, 0.0, 13);
  const auto rel = recover_relative_pose(estimate_essential_ransac(m.matches, K, K), m.matches, K, K);
  const Eigen::AngleAxisd aa(rel.rotation);
  const Vec3 axis_cam = a.rotation.transpose() * Vec3::UnitY();
  CHECK(std::min(angle_deg(aa.axis(), axis_cam), angle_deg(-aa.axis(), axis_cam)) < 0.5);
  CHECK(aa.angle() / kDeg == doctest::Approx(36.0).epsilon(1e-3));
}

TEST_CASE("identical poses are degenerate") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(0), 300, 0.0, 0.0, 14);
  CHECK_THROWS_AS(
      recover_relative_pose(estimate_essential_ransac(m.matches, K, K), m.matches, K, K),
      DegenerateConfiguration);
}

TEST_CASE("triangulated inliers reproject into both views") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(1), 500, 0.4, 0.2, 15);
  const auto est = estimate_essential_ransac(m.matches, K, K);
  const auto rel = recover_relative_pose(est, m.matches, K, K);
  int checked = 0;
  for (int k : est.inliers) {
    const auto& x = m.matches[k];
    const auto X = triangulate_pair(rel.rotation, rel.translation_direction,
                                    undistort_normalized(K, x.pixel_i()),
                                    undistort_normalized(K, x.pixel_j()));
    REQUIRE(X.has_value());
    const Vec3 Xj = rel.rotation * *X + rel.translation_direction;
    if (X->z() <= 0 || Xj.z() <= 0) continue;
    ++checked;
    CHECK((project(K, *X) - x.pixel_i()).norm() < est.threshold_px);
    CHECK((project(K, Xj) - x.pixel_j()).norm() < est.threshold_px);
  }
  CHECK(checked * 2 >= static_cast<int>(est.inliers.size()));
}

TEST_CASE("triangulate_pair returns nothing for parallel rays") {
  const Vec2 n(0.1, -0.2);
  CHECK_FALSE(triangulate_pair(Mat3::Identity(), Vec3::Zero(), n, n).has_value());
}

TEST_CASE("scale of a single edge recovers the groundtruth baseline") {
  const auto K = camera();
  const auto a = spiral_pose(0), b = spiral_pose(1);
  const auto m = pair_matches(a, b, 400, 0.0, 0.0, 16);
  const EdgePose e = estimate_edge({0, 1}, m.matches, K, {});
  const auto chain = chain_and_scale(2, {e}, ScenePrior::cylinder(3.0), K);
  REQUIRE(chain.edge_scales.size() == 1);
  CHECK(chain.edge_scales[0] == doctest::Approx(0.15).epsilon(0.01));
  CHECK((chain.poses[1].translation - b.translation).norm() < 0.0015);
  // The recovered scale puts the median triangulated point on the wall.
  CHECK(edge_prior_cost(chain.edge_scales[0], e, a, ScenePrior::cylinder(3.0), K) < 0.03);
}

TEST_CASE("doubling the prior radius doubles recovered translations") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(1), 400, 0.3, 0.0, 17);
  const EdgePose e = estimate_edge({0, 1}, m.matches, K, {});
  const auto c3 = chain_and_scale(2, {e}, ScenePrior::cylinder(3.0), K);
  const auto c6 = chain_and_scale(2, {e}, ScenePrior::cylinder(6.0), K);
  CHECK(c6.poses[1].translation.norm() ==
        doctest::Approx(2.0 * c3.poses[1].translation.norm()).epsilon(1e-6));
}

TEST_CASE("scale search reports a minimum on the bracket edge") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(1), 200, 0.0, 0.0, 18);
  const EdgePose e = estimate_edge({0, 1}, m.matches, K, {});
  ChainOptions o;
  o.min_scale = 1.0;
  o.max_scale = 10.0;
  CHECK_THROWS_AS(chain_and_scale(2, {e}, ScenePrior::cylinder(3.0), K, o), ConvergenceError);
}

TEST_CASE("a frame without an edge is rejected") {
  const auto K = camera();
  const auto m = pair_matches(spiral_pose(0), spiral_pose(1), 200, 0.0, 0.0, 19);
  const EdgePose e = estimate_edge({0, 1}, m.matches, K, {});
  CHECK_THROWS_AS(chain_and_scale(3, {e}, ScenePrior::cylinder(3.0), K), DegenerateConfiguration);
}

TEST_CASE("zero-noise 100-frame spiral chains to within 2% of path length") {
  const auto K = camera();
  sim::TrajectorySpec spec;
  spec = spec.noiseless();
  const auto poses = sim::generate_trajectory(spec, 1);
  const auto graph = build_match_graph(spec.frame_count(), spec.images_per_rotation);
  SynthesisOptions o;
  o.seed = 20;
  const auto synth = synthesize_dataset_matches(poses, graph, scene(), K, 150, o);
  std::vector<EdgePose> edges;
  for (const auto& [edge, ms] : group_by_edge(synth.matches)) {
    edges.push_back(estimate_edge(edge, ms, K, {}));
  }
  ChainOptions c;
  c.anchor = poses[0];
  const auto chain = chain_and_scale(spec.frame_count(), edges, ScenePrior::cylinder(3.0), K, c);
  const double path = spec.forward_step * (spec.frame_count() - 1);
  const double err = (chain.poses.back().translation - poses.back().translation).norm();
  MESSAGE("final-frame position error " << err << " m over a " << path << " m path");
  CHECK(err < 0.02 * path);
}

}  // TEST_SUITE

namespace {

struct ResectCase {
  std::vector<PoseSE3> truth;
  std::vector<PoseSE3> chained;
  std::vector<EdgePose> edges;
};

ResectCase resect_case(const sim::TrajectorySpec& spec, const sim::Scene& sc, double noise,
                       double outliers, std::uint64_t seed) {
  ResectCase c;
  const auto K = camera();
  c.truth = sim::generate_trajectory(spec, seed);
  const auto graph = build_match_graph(spec.frame_count(), spec.images_per_rotation);
  SynthesisOptions o;
  o.pixel_noise_sd = noise;
  o.outlier_fraction = outliers;
  o.seed = seed + 1;
  const auto synth = synthesize_dataset_matches(c.truth, graph, sc, K, 300, o);
  for (const auto& [edge, ms] : group_by_edge(synth.matches)) c.edges.push_back(estimate_edge(edge, ms, K, {}));
  ChainOptions co;
  co.anchor = c.truth[0];
  c.chained = chain_and_scale(spec.frame_count(), c.edges, sc.prior, K, co).poses;
  return c;
}

std::pair<double, double> max_errors(const std::vector<PoseSE3>& a, const std::vector<PoseSE3>& b) {
  double dt = 0.0, dr = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dt = std::max(dt, (a[k].translation - b[k].translation).norm());
    dr = std::max(dr, so3_log(a[k].rotation.transpose() * b[k].rotation).norm() / kDeg);
  }
  return {dt, dr};
}

}  // namespace

TEST_SUITE("resection") {

TEST_CASE("noise-free matches resect to the groundtruth poses") {
  sim::TrajectorySpec spec;
  spec.rotation_count = 3;
  const auto c = resect_case(spec, scene(), 0.0, 0.0, 31);
  const auto r = resect_with_prior(c.chained, c.edges, ScenePrior::cylinder(3.0), camera());
  const auto [dt, dr] = max_errors(r.poses, c.truth);
  CHECK(dt < 1e-6);
  CHECK(dr < 1e-5);
  for (int k = 1; k < spec.frame_count(); ++k) CHECK(r.support[k] >= 6);
}

TEST_CASE("jittered spiral with noise and outliers: joint refinement removes the chain drift") {
  sim::TrajectorySpec spec;
  spec.rotation_count = 4;
  const auto c = resect_case(spec, scene(), 0.5, 0.15, 32);
  const auto [chain_dt, chain_dr] = max_errors(c.chained, c.truth);
  const auto r = resect_with_prior(c.chained, c.edges, ScenePrior::cylinder(3.0), camera());
  const auto [dt, dr] = max_errors(r.poses, c.truth);
  MESSAGE("chain " << chain_dt << " m " << chain_dr << " deg, resected " << dt << " m " << dr << " deg");
  CHECK(dt < 0.02);
  CHECK(dr < 0.3);
  CHECK(dt < 0.1 * chain_dt);
}

TEST_CASE("without joint refinement the single-frame placement drifts more") {
  sim::TrajectorySpec spec;
  spec.rotation_count = 4;
  const auto c = resect_case(spec, scene(), 0.5, 0.0, 33);
  ResectionOptions single;
  single.joint_every = 0;
  const auto a = resect_with_prior(c.chained, c.edges, ScenePrior::cylinder(3.0), camera(), single);
  const auto b = resect_with_prior(c.chained, c.edges, ScenePrior::cylinder(3.0), camera());
  CHECK(max_errors(b.poses, c.truth).first < max_errors(a.poses, c.truth).first);
}

TEST_CASE("box prior resects with the plane normals") {
  sim::TrajectorySpec spec;
  spec.rotation_count = 2;
  spec.translation_noise_sd = Vec3(0.01, 0.005, 0.01);
  sim::Scene sc;
  sc.prior = ScenePrior::box(BoxSection::axis_aligned(1.2, 1.8, 1.5, 1.5));
  const auto c = resect_case(spec, sc, 0.3, 0.0, 34);
  const auto r = resect_with_prior(c.chained, c.edges, sc.prior, camera());
  const auto [dt, dr] = max_errors(r.poses, c.truth);
  CHECK(dt < 0.01);
  CHECK(dr < 0.2);
}

TEST_CASE("frame 0 keeps the anchor") {
  sim::TrajectorySpec spec;
  spec.rotation_count = 2;
  const auto c = resect_case(spec, scene(), 0.5, 0.1, 35);
  const auto r = resect_with_prior(c.chained, c.edges, ScenePrior::cylinder(3.0), camera());
  CHECK((r.poses[0].translation - c.chained[0].translation).norm() == 0.0);
  CHECK((r.poses[0].rotation - c.chained[0].rotation).norm() == 0.0);
}

TEST_CASE("resection input errors") {
  const auto K = camera();
  CHECK_THROWS_AS(resect_with_prior({}, {}, ScenePrior::cylinder(3.0), K), InvalidArgument);
  EdgePose e;
  e.edge = {0, 5};
  CHECK_THROWS_AS(resect_with_prior(std::vector<PoseSE3>(3), {e}, ScenePrior::cylinder(3.0), K),
                  InvalidArgument);
}

TEST_CASE("frames without links keep the chained prediction") {
  sim::TrajectorySpec spec;
  spec.rotation_count = 1;
  spec = spec.noiseless();
  const auto c = resect_case(spec, scene(), 0.0, 0.0, 36);
  // Drop everything into frame 5: it follows frame 4 by the chained motion.
  std::vector<EdgePose> edges;
  for (const auto& e : c.edges) if (e.edge.second != 5) edges.push_back(e);
  ResectionOptions o;
  o.joint_every = 0;
  const auto r = resect_with_prior(c.chained, edges, ScenePrior::cylinder(3.0), camera(), o);
  CHECK(r.support[5] == 0);
  const PoseSE3 expect = compose(r.poses[4], compose(invert(c.chained[4]), c.chained[5]));
  CHECK((r.poses[5].translation - expect.translation).norm() < 1e-12);
}

}  // TEST_SUITE
