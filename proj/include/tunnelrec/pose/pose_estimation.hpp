#pragma once

#include "tunnelrec/core/geometry.hpp"
#include "tunnelrec/matching/correspondence.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace tunnelrec {

// Relative poses follow X_j = R * X_i + t for a point in the camera frames
// of views i and j; the essential matrix satisfies x_j^T E x_i = 0 on
// normalized, undistorted coordinates.

struct RansacOptions {
  double threshold_px = 1.0;  // Sampson distance
  double confidence = 0.999;
  int max_iterations = 10000;
  /// Estimates with a lower inlier ratio are rejected as degenerate pairs.
  double min_inlier_ratio = 0.2;
  std::uint64_t seed = 1;
};

struct EssentialEstimate {
  Mat3 E = Mat3::Zero();
  std::vector<int> inliers;  // indices into the input matches
  double inlier_ratio = 0.0;
  double threshold_px = 0.0;
  int iterations = 0;
};

/// Normalized 8-point RANSAC on Sampson distances in undistorted pixels.
/// Hypotheses are ranked by an a-contrario score (the most significant
/// inlier set at any threshold up to threshold_px); inliers are the matches
/// within threshold_px of the chosen model.
/// The winner is re-fitted on all its inliers and projected onto the
/// essential manifold. Throws InvalidArgument with fewer than 8 matches and
/// DegenerateConfiguration when the inlier ratio stays below the floor or
/// the correspondences do not determine E (for instance a zero baseline).
EssentialEstimate estimate_essential_ransac(const std::vector<Match>& matches,
                                            const CameraIntrinsics& K_i,
                                            const CameraIntrinsics& K_j,
                                            const RansacOptions& options = {});

/// Squared Sampson distances in pixels for every match under E.
std::vector<double> sampson_distances_squared(const Mat3& E, const std::vector<Match>& matches,
                                              const CameraIntrinsics& K_i,
                                              const CameraIntrinsics& K_j);

/// Linear 8-point fit on normalized coordinates with Hartley conditioning,
/// projected onto the essential manifold. Needs at least 8 points.
Mat3 fit_essential(const std::vector<Vec2>& x_i, const std::vector<Vec2>& x_j);

/// Closest essential matrix (singular values s, s, 0) in Frobenius norm.
Mat3 project_to_essential(const Mat3& M);

struct RelativePose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation_direction = Vec3::UnitZ();
  int cheirality_support = 0;
  double median_parallax = 0.0;  // radians, over the supporting points
};

/// Picks the (R, +-t) decomposition of E that places the most inliers in
/// front of both cameras; ties go to the smaller mean reprojection error.
/// Throws DegenerateConfiguration when no decomposition puts a majority of
/// inliers in front, or when the median parallax is below min_parallax
/// (no usable baseline).
RelativePose recover_relative_pose(const EssentialEstimate& estimate,
                                   const std::vector<Match>& matches,
                                   const CameraIntrinsics& K_i, const CameraIntrinsics& K_j,
                                   double min_parallax = 0.1 * M_PI / 180.0);

/// Two-view linear triangulation in the frame of camera i from normalized
/// coordinates. Returns nullopt when the rays are parallel.
std::optional<Vec3> triangulate_pair(const Mat3& R, const Vec3& t, const Vec2& n_i,
                                     const Vec2& n_j);

/// Relative pose of one graph edge with the inlier matches it was fitted on.
struct EdgePose {
  Edge edge;
  RelativePose pose;
  std::vector<Match> inliers;
};

struct ChainOptions {
  /// Camera-to-world pose of the first frame; fixes the world frame.
  PoseSE3 anchor = PoseSE3::identity();
  /// Bracket of the per-edge scale search, in meters of baseline.
  double min_scale = 1e-4;
  double max_scale = 1e2;
};

struct ChainResult {
  std::vector<PoseSE3> poses;
  std::vector<double> edge_scales;  // per edge used, in frame order of placement
  std::vector<Edge> edges_used;
};

/// Places frames in index order, each through an edge to an already placed
/// frame (preferring the edge from its predecessor). The baseline of each
/// edge is the scale that minimizes the median distance of the edge's
/// triangulated inliers to the prior surface. Throws DegenerateConfiguration
/// for a frame with no usable edge and ConvergenceError when the scale
/// minimum sits on the search bracket.
ChainResult chain_and_scale(int frame_count, const std::vector<EdgePose>& edges,
                            const ScenePrior& prior, const CameraIntrinsics& K,
                            const ChainOptions& options = {});

struct ResectionOptions {
  int max_iterations = 20;
  double cauchy_px = 2.0;   // robust scale of the first pass
  double outlier_px = 3.0;  // residual gate before the final pass
  int min_points = 6;
  /// Joint refinement of all placed frames after every this many frames
  /// (and after the last); 0 disables.
  int joint_every = 10;
};

struct ResectionResult {
  std::vector<PoseSE3> poses;
  std::vector<int> support;  // correspondences used per frame; 0 for frame 0 and fallbacks
};

/// Re-places frames 1..m-1 in index order. Every inlier of an edge (i, k)
/// with i < k gives a 2D-3D correspondence: the point where frame i's pixel
/// ray meets the prior, observed at the pixel in frame k. Frame k starts
/// from the refined frame k-1 composed with the chained relative motion and
/// is solved by Gauss-Newton on the reprojection error (Cauchy weighted
/// with the scale shrinking from 64 px to cauchy_px, then gated at
/// outlier_px). Frames with too few correspondences keep the
/// prediction. Every joint_every frames all placed poses are refined
/// together on the same residuals, with the source frame's hit moving with
/// its pose, which removes the drift that single-frame placement accumulates.
/// The world frame of `chained[0]` is kept.
ResectionResult resect_with_prior(const std::vector<PoseSE3>& chained,
                                  const std::vector<EdgePose>& edges, const ScenePrior& prior,
                                  const CameraIntrinsics& K, const ResectionOptions& options = {});

/// Median distance to the prior of an edge's triangulated inliers when the
/// baseline is `scale`, given the pose of camera i.
double edge_prior_cost(double scale, const EdgePose& edge, const PoseSE3& pose_i,
                       const ScenePrior& prior, const CameraIntrinsics& K);

/// Estimates one edge: RANSAC, then pose recovery on the inliers.
EdgePose estimate_edge(const Edge& edge, const std::vector<Match>& matches,
                       const CameraIntrinsics& K, const RansacOptions& options);

}  // namespace tunnelrec
