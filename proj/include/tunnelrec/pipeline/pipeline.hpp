#pragma once

#include "tunnelrec/ba/bundle_adjustment.hpp"
#include "tunnelrec/core/error.hpp"
#include "tunnelrec/mapping/atlas.hpp"
#include "tunnelrec/pipeline/config.hpp"
#include "tunnelrec/planner/flight_planner.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tunnelrec {

enum class Stage { Config, Simulate, Plan, Matches, Pose, BA, Reconstruct, Stitch, IO };
const char* stage_name(Stage s);
/// Process exit code for a failure in the stage: config 2, simulate 3,
/// plan 4, matches 5, pose 6, ba 7, reconstruct 8, stitch 9, io 10.
int stage_exit_code(Stage s);

/// A stage failed. what() is "<stage>: <cause>".
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& cause);
  Stage stage() const { return stage_; }
  const std::string& cause() const { return cause_; }

 private:
  Stage stage_;
  std::string cause_;
};

/// File locations of one run. Inputs of ingest mode come from input_dir;
/// everything the pipeline writes goes to output_dir.
struct RunLayout {
  std::filesystem::path out;
  std::filesystem::path frames;       // frame_%04d.png (+ mask.png, groundtruth.csv)
  std::filesystem::path matches;      // matches.txt
  std::filesystem::path groundtruth;  // may not exist in ingest mode
  std::filesystem::path mask;         // may not exist

  explicit RunLayout(const PipelineConfig& config);
  std::filesystem::path operator/(const std::string& name) const { return out / name; }
};

/// Writes `path.partial` through `write`, then renames it to `path`. On an
/// exception the `.partial` file (or directory) is left behind.
template <class Fn>
void write_artifact(const std::filesystem::path& path, Fn&& write) {
  std::filesystem::path partial = path;
  partial += ".partial";
  std::filesystem::remove_all(partial);
  write(partial);
  std::filesystem::remove_all(path);
  std::filesystem::rename(partial, path);
}

struct PoseErrors {
  double translation_rms_m = 0.0;
  double rotation_rms_deg = 0.0;
  double max_translation_m = 0.0;
};
/// Per-frame camera center and rotation angle differences, no alignment.
PoseErrors compare_poses(const std::vector<PoseSE3>& estimate, const std::vector<PoseSE3>& truth);

// Stages. Each reads its inputs from the layout (so it can run on the output
// of a previous invocation) and writes its artifacts atomically. Failures
// are reported as StageError.

/// frames/frame_%04d.png, frames/groundtruth.csv, frames/mask.png (occluder).
int stage_simulate(const PipelineConfig& config);
/// plan.json: speed plan for the configured camera, prior and r1.
planner::SpeedPlan stage_plan(const PipelineConfig& config);
/// matches.txt (and match_outliers.txt, one 0/1 flag per match).
std::size_t stage_matches(const PipelineConfig& config);
/// poses_initial.csv from essential matrices chained along the match graph.
std::vector<PoseSE3> stage_pose(const PipelineConfig& config);
/// poses.csv and ba-report.csv for the configured pruning.
BAResult stage_ba(const PipelineConfig& config);
/// cloud.ply from poses.csv.
std::uint64_t stage_reconstruct(const PipelineConfig& config);
/// atlas_<surface>.png, holes_<surface>.png and atlas.json from poses.csv.
TextureAtlas stage_stitch(const PipelineConfig& config);
/// ba-report.csv and ba-report.txt for every pruning configuration.
std::vector<AblationRow> stage_ablate(const PipelineConfig& config);

struct RunSummary {
  int frames = 0;
  std::size_t matches = 0;
  std::optional<PoseErrors> initial_pose_error;
  std::optional<PoseErrors> pose_error;
  BAReport ba;
  std::uint64_t dense_points = 0;
  std::size_t hole_texels = 0;
  std::size_t atlas_texels = 0;
  planner::SpeedPlan plan;
  double forward_step = 0.0;
};

/// Every stage in order, then summary.json and config.ini. In ingest mode
/// the simulate and synth-matches stages are skipped.
RunSummary run_pipeline(const PipelineConfig& config);

}  // namespace tunnelrec
