#include "tunnelrec/pipeline/config.hpp"

#include "tunnelrec/core/error.hpp"
#include "tunnelrec/planner/flight_planner.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace tunnelrec {

namespace {

constexpr double kDeg = M_PI / 180.0;

// Every config field, in file order. C is PipelineConfig or its const.
template <class C, class V>
void visit_fields(C& c, V&& v) {
  v("run.mode", c.mode);
  v("run.input_dir", c.input_dir);
  v("run.output_dir", c.output_dir);
  v("run.seed", c.seed);
  v("run.threads", c.threads);

  v("camera.hfov_deg", c.hfov_deg);
  v("camera.focal_px", c.focal_px);
  v("camera.width", c.width);
  v("camera.height", c.height);
  v("camera.k1", c.k1);
  v("camera.k2", c.k2);

  v("prior.shape", c.prior_shape);
  v("prior.radius", c.radius);
  v("prior.floor", c.box_floor);
  v("prior.ceiling", c.box_ceiling);
  v("prior.left", c.box_left);
  v("prior.right", c.box_right);

  v("trajectory.images_per_rotation", c.images_per_rotation);
  v("trajectory.rotations", c.rotations);
  v("trajectory.forward_step", c.forward_step);
  v("trajectory.speed_factor", c.speed_factor);
  v("trajectory.planner_r1", c.planner_r1);
  v("trajectory.start_offset", c.start_offset);
  v("trajectory.translation_noise_sd", c.translation_noise_sd);
  v("trajectory.rotation_noise_deg", c.rotation_noise_deg);

  v("scene.texture", c.texture);
  v("scene.texture_scale", c.texture_scale);
  v("scene.texture_seed", c.texture_seed);
  v("scene.raster_path", c.raster_path);
  v("scene.raster_meters_per_pixel", c.raster_meters_per_pixel);
  v("scene.light", c.light);
  v("scene.light_strength", c.light_strength);
  v("scene.occluder", c.occluder);
  v("scene.occluder_x0", c.occluder_x0);
  v("scene.occluder_y0", c.occluder_y0);
  v("scene.occluder_x1", c.occluder_x1);
  v("scene.occluder_y1", c.occluder_y1);

  v("matches.points_per_frame", c.points_per_frame);
  v("matches.pixel_noise_sd", c.pixel_noise_sd);
  v("matches.outlier_fraction", c.outlier_fraction);
  v("matches.static_outlier_share", c.static_outlier_share);
  v("matches.outlier_min_epipolar_px", c.outlier_min_epipolar_px);

  v("ransac.threshold_px", c.ransac_threshold_px);
  v("ransac.confidence", c.ransac_confidence);
  v("ransac.max_iterations", c.ransac_max_iterations);
  v("ransac.min_inlier_ratio", c.ransac_min_inlier_ratio);

  v("pose.anchor_translation", c.anchor_translation);
  v("pose.anchor_axis_angle", c.anchor_axis_angle);
  v("pose.resect", c.resect);

  v("pruning.config", c.pruning_config);
  v("pruning.geometry_tolerance", c.geometry_tolerance);
  v("pruning.reprojection_threshold", c.reprojection_threshold);

  v("ba.max_iterations", c.ba_max_iterations);
  v("ba.relative_decrease", c.ba_relative_decrease);
  v("ba.gradient_tolerance", c.ba_gradient_tolerance);
  v("ba.initial_lambda", c.ba_initial_lambda);
  v("ba.prune_after", c.ba_prune_after);
  v("ba.huber_px", c.ba_huber_px);

  v("atlas.auto", c.atlas_auto);
  v("atlas.margin", c.atlas_margin);
  v("atlas.cylinder_width", c.cylinder_width);
  v("atlas.texels_per_meter", c.texels_per_meter);
  v("atlas.y_min", c.y_min);
  v("atlas.y_max", c.y_max);
  v("atlas.averaging", c.averaging);

  v("reconstruct.cloud_stride", c.cloud_stride);
  v("reconstruct.ply_format", c.ply_format);
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
  throw ConfigError(fmt::format("config key '{}': cannot parse '{}' as {}", key, value, what));
}

template <class T>
T parse_number(const std::string& key, const std::string& text, const char* what) {
  const std::string s = trim(text);
  T out{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) bad_value(key, text, what);
  return out;
}

void parse_into(const std::string&, const std::string& s, std::string& out) { out = trim(s); }
void parse_into(const std::string&, const std::string& s, std::filesystem::path& out) { out = trim(s); }
void parse_into(const std::string& key, const std::string& s, double& out) {
  out = parse_number<double>(key, s, "a number");
  if (!std::isfinite(out)) bad_value(key, s, "a finite number");
}
void parse_into(const std::string& key, const std::string& s, int& out) {
  out = parse_number<int>(key, s, "an integer");
}
void parse_into(const std::string& key, const std::string& s, std::uint64_t& out) {
  out = parse_number<std::uint64_t>(key, s, "an unsigned integer");
}
void parse_into(const std::string& key, const std::string& s, bool& out) {
  std::string v = trim(s);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") {
    out = true;
  } else if (v == "false" || v == "0" || v == "no" || v == "off") {
    out = false;
  } else {
    bad_value(key, s, "a boolean");
  }
}
void parse_into(const std::string& key, const std::string& s, Vec3& out) {
  std::string v = s;
  std::replace(v.begin(), v.end(), ',', ' ');
  std::istringstream in(v);
  std::string part;
  int i = 0;
  while (in >> part) {
    if (i == 3) bad_value(key, s, "three numbers");
    parse_into(key, part, out[i++]);
  }
  if (i != 3) bad_value(key, s, "three numbers");
}

std::string format_value(const std::string& v) { return v; }
std::string format_value(const std::filesystem::path& v) { return v.string(); }
std::string format_value(double v) { return fmt::format("{}", v); }
std::string format_value(int v) { return fmt::format("{}", v); }
std::string format_value(std::uint64_t v) { return fmt::format("{}", v); }
std::string format_value(bool v) { return v ? "true" : "false"; }
std::string format_value(const Vec3& v) { return fmt::format("{} {} {}", v.x(), v.y(), v.z()); }

void require(bool ok, const char* key, const std::string& what) {
  if (!ok) throw ConfigError(fmt::format("config key '{}': {}", key, what));
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  const PipelineConfig c;
  visit_fields(c, [&](const char* k, const auto&) { keys.emplace_back(k); });
  return keys;
}

void set_config_value(PipelineConfig& config, const std::string& key, const std::string& value) {
  bool found = false;
  visit_fields(config, [&](const char* k, auto& field) {
    if (key == k) {
      parse_into(key, value, field);
      found = true;
    }
  });
  if (!found) throw ConfigError(fmt::format("unknown config key '{}'", key));
}

std::string get_config_value(const PipelineConfig& config, const std::string& key) {
  std::string out;
  bool found = false;
  visit_fields(config, [&](const char* k, const auto& field) {
    if (key == k) {
      out = format_value(field);
      found = true;
    }
  });
  if (!found) throw ConfigError(fmt::format("unknown config key '{}'", key));
  return out;
}

std::map<std::string, std::string> config_values(const PipelineConfig& config) {
  std::map<std::string, std::string> out;
  visit_fields(config, [&](const char* k, const auto& field) { out[k] = format_value(field); });
  return out;
}

PipelineConfig load_config(const std::filesystem::path& path,
                           const std::vector<std::string>& overrides) {
  PipelineConfig config;
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) {
      throw ConfigError(fmt::format("config file '{}' does not exist", path.string()));
    }
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(fmt::format("config file '{}': {}", path.string(), e.what()));
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) {
        throw ConfigError(fmt::format("config file '{}': key '{}' outside a section",
                                      path.string(), section));
      }
      for (const auto& [key, value] : body) {
        set_config_value(config, section + "." + key, value.data());
      }
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("override '{}' is not of the form section.key=value", o));
    }
    set_config_value(config, trim(o.substr(0, eq)), o.substr(eq + 1));
  }
  config.validate();
  return config;
}

std::string config_to_ini(const PipelineConfig& config) {
  std::string out;
  std::string section;
  visit_fields(config, [&](const char* k, const auto& field) {
    const std::string key = k;
    const auto dot = key.find('.');
    const std::string s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += "\n";
      out += "[" + s + "]\n";
      section = s;
    }
    out += key.substr(dot + 1) + " = " + format_value(field) + "\n";
  });
  return out;
}

void PipelineConfig::validate() const {
  require(mode == "simulate" || mode == "ingest", "run.mode", "must be simulate or ingest");
  if (mode == "ingest") {
    require(!input_dir.empty(), "run.input_dir", "required in ingest mode");
    require(std::filesystem::is_directory(input_dir), "run.input_dir",
            fmt::format("input directory '{}' does not exist", input_dir.string()));
  }
  require(!output_dir.empty(), "run.output_dir", "must not be empty");
  require(threads >= 0, "run.threads", "must be >= 0");

  require(hfov_deg > 0.0 && hfov_deg < 180.0, "camera.hfov_deg", "must be in (0, 180)");
  require(focal_px >= 0.0, "camera.focal_px", "must be >= 0");
  require(width > 0 && width <= 65536, "camera.width", "must be in [1, 65536]");
  require(height > 0 && height <= 65536, "camera.height", "must be in [1, 65536]");

  require(prior_shape == "cylinder" || prior_shape == "box", "prior.shape", "must be cylinder or box");
  require(radius > 0.0, "prior.radius", "must be positive");
  require(box_floor > 0.0 && box_ceiling > 0.0 && box_left > 0.0 && box_right > 0.0, "prior.floor",
          "box distances must be positive");

  require(images_per_rotation >= 1, "trajectory.images_per_rotation", "must be >= 1");
  require(rotations >= 1, "trajectory.rotations", "must be >= 1");
  require(forward_step >= 0.0, "trajectory.forward_step", "must be >= 0");
  require(speed_factor >= 0.0, "trajectory.speed_factor", "must be >= 0");
  require(translation_noise_sd.minCoeff() >= 0.0, "trajectory.translation_noise_sd", "must be >= 0");
  require(rotation_noise_deg >= 0.0, "trajectory.rotation_noise_deg", "must be >= 0");

  require(texture == "checkerboard" || texture == "brick" || texture == "noise" || texture == "raster",
          "scene.texture", "must be checkerboard, brick, noise or raster");
  require(texture_scale > 0.0, "scene.texture_scale", "must be positive");
  if (texture == "raster" && simulate()) {
    require(std::filesystem::exists(raster_path), "scene.raster_path",
            fmt::format("raster '{}' does not exist", raster_path.string()));
  }
  require(light_strength >= 0.0 && light_strength <= 1.0, "scene.light_strength", "must be in [0, 1]");
  if (occluder) {
    require(occluder_x0 >= 0 && occluder_x0 < occluder_x1 && occluder_x1 <= width && occluder_y0 >= 0 &&
                occluder_y0 < occluder_y1 && occluder_y1 <= height,
            "scene.occluder_x0", "occluder rectangle must be non-empty and inside the image");
  }

  require(points_per_frame >= 1, "matches.points_per_frame", "must be >= 1");
  require(pixel_noise_sd >= 0.0, "matches.pixel_noise_sd", "must be >= 0");
  require(outlier_fraction >= 0.0 && outlier_fraction < 1.0, "matches.outlier_fraction",
          "must be in [0, 1)");
  require(static_outlier_share >= 0.0 && static_outlier_share <= 1.0, "matches.static_outlier_share",
          "must be in [0, 1]");
  require(static_outlier_share == 0.0 || occluder, "matches.static_outlier_share",
          "needs scene.occluder");

  require(ransac_threshold_px > 0.0, "ransac.threshold_px", "must be positive");
  require(ransac_confidence > 0.0 && ransac_confidence < 1.0, "ransac.confidence", "must be in (0, 1)");
  require(ransac_max_iterations >= 1, "ransac.max_iterations", "must be >= 1");
  require(ransac_min_inlier_ratio >= 0.0 && ransac_min_inlier_ratio <= 1.0, "ransac.min_inlier_ratio",
          "must be in [0, 1]");

  try {
    parse_ablation_config(pruning_config);
  } catch (const InvalidArgument& e) {
    require(false, "pruning.config", e.what());
  }
  require(reprojection_threshold > 0.0, "pruning.reprojection_threshold", "must be positive");

  require(ba_max_iterations >= 0, "ba.max_iterations", "must be >= 0");
  require(ba_relative_decrease >= 0.0, "ba.relative_decrease", "must be >= 0");
  require(ba_gradient_tolerance >= 0.0, "ba.gradient_tolerance", "must be >= 0");
  require(ba_initial_lambda > 0.0, "ba.initial_lambda", "must be positive");
  require(ba_huber_px >= 0.0, "ba.huber_px", "must be >= 0");

  require(atlas_margin > 0.0, "atlas.margin", "must be positive");
  if (!atlas_auto) {
    require(cylinder_width >= 1, "atlas.cylinder_width", "must be >= 1");
    require(texels_per_meter > 0.0, "atlas.texels_per_meter", "must be positive");
    require(y_max > y_min, "atlas.y_max", "must exceed atlas.y_min");
  }
  require(cloud_stride >= 1, "reconstruct.cloud_stride", "must be >= 1");
  require(ply_format == "binary" || ply_format == "ascii", "reconstruct.ply_format",
          "must be binary or ascii");
}

CameraIntrinsics PipelineConfig::intrinsics() const {
  if (focal_px > 0.0) return CameraIntrinsics::pinhole(focal_px, 0.5 * width, 0.5 * height, width, height, k1, k2);
  return CameraIntrinsics::from_horizontal_fov(hfov_deg * kDeg, width, height, k1, k2);
}

ScenePrior PipelineConfig::prior() const {
  if (prior_shape == "cylinder") return ScenePrior::cylinder(radius);
  return ScenePrior::box(BoxSection::axis_aligned(box_floor, box_ceiling, box_left, box_right));
}

sim::TrajectorySpec PipelineConfig::trajectory() const {
  sim::TrajectorySpec t;
  t.images_per_rotation = images_per_rotation;
  t.rotation_count = rotations;
  t.rotation_step = 2.0 * M_PI / images_per_rotation;
  t.forward_step = forward_step;
  if (speed_factor > 0.0) {
    const CameraIntrinsics K = intrinsics();
    const double r = prior_shape == "cylinder" ? radius : std::min(box_left, box_right);
    t.forward_step =
        speed_factor * planner::plan_speed(K.omega_h, K.omega_v, r, planner_r1, images_per_rotation).d_max_image;
  }
  t.start_offset = start_offset;
  t.translation_noise_sd = translation_noise_sd;
  t.rotation_noise_sd = rotation_noise_deg * kDeg;
  return t;
}

sim::Scene PipelineConfig::scene() const {
  sim::Scene s;
  s.prior = prior();
  sim::TextureSpec ts;
  ts.kind = sim::parse_texture_kind(texture);
  ts.scale = texture_scale;
  ts.seed = texture_seed;
  ts.raster_path = raster_path.string();
  ts.raster_meters_per_pixel = raster_meters_per_pixel;
  s.texture = sim::make_texture(ts);
  s.light.enabled = light;
  s.light.strength = light_strength;
  s.occluder.enabled = occluder;
  s.occluder.x0 = occluder_x0;
  s.occluder.y0 = occluder_y0;
  s.occluder.x1 = occluder_x1;
  s.occluder.y1 = occluder_y1;
  return s;
}

SynthesisOptions PipelineConfig::synthesis() const {
  SynthesisOptions o;
  o.pixel_noise_sd = pixel_noise_sd;
  o.outlier_fraction = outlier_fraction;
  o.static_outlier_share = static_outlier_share;
  o.outlier_min_epipolar_px = outlier_min_epipolar_px;
  o.seed = seed;
  return o;
}

RansacOptions PipelineConfig::ransac() const {
  RansacOptions o;
  o.threshold_px = ransac_threshold_px;
  o.confidence = ransac_confidence;
  o.max_iterations = ransac_max_iterations;
  o.min_inlier_ratio = ransac_min_inlier_ratio;
  o.seed = seed;
  return o;
}

PruningConfig PipelineConfig::pruning() const {
  PruningConfig p;
  p.geometry_tolerance = geometry_tolerance;
  p.reprojection_threshold = reprojection_threshold;
  return p;
}

AblationConfig PipelineConfig::ablation() const { return parse_ablation_config(pruning_config); }

BAOptions PipelineConfig::ba_options(int thread_count) const {
  BAOptions o;
  o.max_iterations = ba_max_iterations;
  o.relative_decrease = ba_relative_decrease;
  o.gradient_tolerance = ba_gradient_tolerance;
  o.initial_lambda = ba_initial_lambda;
  o.reprojection_prune_after = ba_prune_after;
  o.huber_px = ba_huber_px;
  o.threads = thread_count;
  return o;
}

PlyFormat PipelineConfig::ply() const {
  return ply_format == "ascii" ? PlyFormat::Ascii : PlyFormat::BinaryLittleEndian;
}

PoseSE3 PipelineConfig::anchor() const {
  return PoseSE3::from_axis_angle(anchor_axis_angle, anchor_translation);
}

}  // namespace tunnelrec
