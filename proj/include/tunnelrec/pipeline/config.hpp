#pragma once

#include "tunnelrec/ba/bundle_adjustment.hpp"
#include "tunnelrec/core/error.hpp"
#include "tunnelrec/core/geometry.hpp"
#include "tunnelrec/io/ply.hpp"
#include "tunnelrec/matching/correspondence.hpp"
#include "tunnelrec/pose/pose_estimation.hpp"
#include "tunnelrec/simulator/renderer.hpp"
#include "tunnelrec/simulator/texture.hpp"
#include "tunnelrec/simulator/trajectory.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tunnelrec {

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

/// Everything one pipeline run needs. Field names mirror the `[section]`
/// `key = value` layout of the config file (see config_keys()).
struct PipelineConfig {
  // [run]
  std::string mode = "simulate";  // simulate | ingest
  std::filesystem::path input_dir;  // ingest: frame_%04d.png, matches.txt, optional mask.png, groundtruth.csv
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 1;
  int threads = 0;  // 0 = all cores

  // [camera]
  double hfov_deg = 60.0;
  double focal_px = 0.0;  // > 0 overrides hfov_deg
  int width = 640;
  int height = 480;
  double k1 = 0.0, k2 = 0.0;

  // [prior]
  std::string prior_shape = "cylinder";  // cylinder | box
  double radius = 3.0;
  double box_floor = 1.2, box_ceiling = 1.8, box_left = 1.5, box_right = 1.5;

  // [trajectory]
  int images_per_rotation = 10;
  int rotations = 10;
  double forward_step = 0.15;  // m per image, used when speed_factor is 0
  double speed_factor = 0.0;   // > 0: forward_step = speed_factor * planned d_max per image
  double planner_r1 = 0.0;     // lateral offset used for the speed plan
  Vec3 start_offset = Vec3::Zero();
  Vec3 translation_noise_sd{0.02, 0.01, 0.02};  // m
  double rotation_noise_deg = 2.0;

  // [scene]
  std::string texture = "noise";  // checkerboard | brick | noise | raster
  double texture_scale = 0.25;
  std::uint64_t texture_seed = 7;
  std::filesystem::path raster_path;
  double raster_meters_per_pixel = 0.002;
  bool light = false;
  double light_strength = 0.6;
  bool occluder = false;
  int occluder_x0 = 0, occluder_y0 = 0, occluder_x1 = 0, occluder_y1 = 0;

  // [matches]
  int points_per_frame = 500;
  double pixel_noise_sd = 0.5;
  double outlier_fraction = 0.0;
  double static_outlier_share = 0.0;
  double outlier_min_epipolar_px = 10.0;

  // [ransac]
  double ransac_threshold_px = 1.0;
  double ransac_confidence = 0.999;
  int ransac_max_iterations = 10000;
  double ransac_min_inlier_ratio = 0.2;

  // [pose] used when no groundtruth fixes the first camera
  Vec3 anchor_translation = Vec3::Zero();
  Vec3 anchor_axis_angle = Vec3::Zero();
  bool resect = true;  // refine the chained poses against the prior

  // [pruning]
  std::string pruning_config = "P1+P2+P3";
  double geometry_tolerance = 0.0;
  double reprojection_threshold = 3.0;

  // [ba]
  int ba_max_iterations = 200;
  double ba_relative_decrease = 1e-10;
  double ba_gradient_tolerance = 1e-12;
  double ba_initial_lambda = 1e-4;
  int ba_prune_after = 10;
  double ba_huber_px = 0.0;

  // [atlas]
  bool atlas_auto = true;  // resolution and axial window from the poses
  double atlas_margin = 1.3;
  int cylinder_width = 7500;
  double texels_per_meter = 1.0 / 0.0017;
  double y_min = 0.0, y_max = 1.0;
  bool averaging = false;

  // [reconstruct]
  int cloud_stride = 1;  // keep every k-th point in cloud.ply
  std::string ply_format = "binary";  // binary | ascii

  /// Throws ConfigError naming the offending key.
  void validate() const;

  bool simulate() const { return mode == "simulate"; }
  CameraIntrinsics intrinsics() const;
  ScenePrior prior() const;
  /// Trajectory with the forward step resolved against the speed plan.
  sim::TrajectorySpec trajectory() const;
  sim::Scene scene() const;
  SynthesisOptions synthesis() const;
  RansacOptions ransac() const;
  PruningConfig pruning() const;
  AblationConfig ablation() const;
  BAOptions ba_options(int threads) const;
  PlyFormat ply() const;
  PoseSE3 anchor() const;
};

/// All `section.key` names in file order.
std::vector<std::string> config_keys();

/// Sets one key from its text form. Throws ConfigError for unknown keys and
/// unparsable values.
void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const PipelineConfig& config, const std::string& key);

/// Reads an INI file (sections and key = value lines). Every key must be
/// known; missing keys keep their defaults. An empty path yields defaults.
/// `overrides` are `section.key=value` strings applied afterwards.
PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides = {});

/// Full resolved config as INI text, every key present, values in shortest
/// round-trip form. load of the result gives back the same config.
std::string config_to_ini(const PipelineConfig& config);

/// key -> value for every key.
std::map<std::string, std::string> config_values(const PipelineConfig& config);

}  // namespace tunnelrec
