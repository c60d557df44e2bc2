#pragma once

#include "tunnelrec/core/geometry.hpp"
#include "tunnelrec/io/image.hpp"
#include "tunnelrec/matching/correspondence.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace tunnelrec {

struct PruningConfig {
  /// Points farther than this from the prior surface are pruned (P2). A
  /// non-positive value means 10% of the tunnel radius (or of the smaller
  /// half-width of a box section).
  double geometry_tolerance = 0.0;
  double reprojection_threshold = 3.0;  // px, P3

  double resolved_geometry_tolerance(const ScenePrior& prior) const;
};

struct BAOptions {
  int max_iterations = 200;
  double relative_decrease = 1e-10;
  double gradient_tolerance = 1e-12;
  double initial_lambda = 1e-4;
  /// Apply P3 once after this many iterations and restart; negative disables.
  int reprojection_prune_after = 10;
  /// Huber width in px; zero keeps the plain squared cost.
  double huber_px = 0.0;
  int threads = 1;
};

struct BAProblem {
  std::vector<PoseSE3> poses;  // camera-to-world; pose 0 is held fixed
  std::vector<Track> tracks;
  CameraIntrinsics K;
  ScenePrior prior = ScenePrior::cylinder(3.0);
  PruningConfig pruning;
};

struct BAReport {
  double before_px = 0.0;  // mean reprojection error of active tracks at the start
  double after_px = 0.0;
  std::size_t pruned_p1 = 0;
  std::size_t pruned_p2 = 0;
  std::size_t pruned_p3 = 0;
  std::size_t degenerate = 0;
  std::size_t active_tracks = 0;
  std::size_t observations = 0;
  int iterations = 0;
  bool converged = false;
  std::string termination;
  double geometry_tolerance = 0.0;
  double reprojection_threshold = 0.0;
};

struct BAResult {
  std::vector<PoseSE3> poses;
  std::vector<Track> tracks;
  BAReport report;
};

/// Multi-view DLT on undistorted normalized coordinates followed by one
/// Gauss-Newton step on the reprojection error. Throws InvalidArgument with
/// fewer than two observations and DegenerateConfiguration when every pair
/// of rays is within 0.5 degrees of parallel.
Vec3 triangulate(const Track& track, const std::vector<PoseSE3>& poses, const CameraIntrinsics& K);

/// Triangulates every active track. Tracks whose rays are near parallel or
/// whose point lands behind an observing camera get status Degenerate.
/// Returns the number of tracks marked degenerate.
std::size_t triangulate_tracks(std::vector<Track>& tracks, const std::vector<PoseSE3>& poses,
                               const CameraIntrinsics& K, int threads = 1);

/// P2: active tracks farther than tolerance from the prior surface become
/// PrunedGeometry. Returns the number pruned.
std::size_t prune_geometry(std::vector<Track>& tracks, const ScenePrior& prior, double tolerance);

/// P3: active tracks with any observation reprojecting worse than
/// threshold_px become PrunedReprojection. Returns the number pruned.
std::size_t prune_reprojection(std::vector<Track>& tracks, const std::vector<PoseSE3>& poses,
                               const CameraIntrinsics& K, double threshold_px);

/// Mean pixel distance between observations and projected points over all
/// observations of active tracks (0 when there are none).
double mean_reprojection_error(const std::vector<Track>& tracks, const std::vector<PoseSE3>& poses,
                               const CameraIntrinsics& K);

/// Residual (projected - observed, px) and its derivatives with respect to
/// a left-multiplied rotation increment and translation increment of the
/// world-to-camera pose, X_c = exp(dw) R X + t + dt, and the world point.
struct ReprojectionJacobian {
  Vec2 residual = Vec2::Zero();
  Eigen::Matrix<double, 2, 6> d_pose = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 3> d_point = Eigen::Matrix<double, 2, 3>::Zero();
};
ReprojectionJacobian reprojection_jacobian(const Mat3& R_cw, const Vec3& t_cw, const Vec3& X,
                                           const Vec2& observed, const CameraIntrinsics& K);

/// Levenberg-Marquardt over poses 1..m-1 and all active points, with the
/// point blocks eliminated by the Schur complement. Pose 0 is fixed; the
/// global scale is fixed by holding the largest world-to-camera translation
/// coordinate of the initialization constant. P3 is applied once after
/// BAOptions::reprojection_prune_after iterations (negative disables) and
/// the optimization restarts. Points whose viewing rays collapse below the
/// triangulation limit become Degenerate and the optimization restarts
/// without them. The result is identical for any thread count. Throws
/// DegenerateConfiguration when a pose has no active observations.
BAResult optimize(const BAProblem& problem, const BAOptions& options = {});

// ---------------------------------------------------------------------------
// Pruning ablation

enum class AblationConfig { SBA, P1, P2, P1P2, P1P2P3 };
const char* ablation_name(AblationConfig c);
AblationConfig parse_ablation_config(const std::string& name);
std::vector<AblationConfig> all_ablation_configs();

struct AblationInput {
  std::vector<Match> matches;
  Image static_mask;  // may be empty when no mask is available
  std::vector<PoseSE3> initial_poses;
  CameraIntrinsics K;
  ScenePrior prior = ScenePrior::cylinder(3.0);
  PruningConfig pruning;
};

struct AblationRow {
  AblationConfig config = AblationConfig::SBA;
  BAResult result;
};

/// Runs the full track building, pruning and BA chain once per config.
std::vector<AblationRow> ablation_report(const AblationInput& input,
                                         const std::vector<AblationConfig>& configs,
                                         const BAOptions& options = {});

/// Runs one configuration: P1 (mask) if requested, tracks, triangulation,
/// P2, then BA with or without P3.
BAResult run_ba_config(const AblationInput& input, AblationConfig config, const BAOptions& options);

/// ba-report.csv: config,before_px,after_px,pruned_p1,pruned_p2,pruned_p3,iterations
void write_ba_report_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
/// Aligned plain-text table of the same rows.
std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace tunnelrec
