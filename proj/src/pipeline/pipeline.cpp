#include "tunnelrec/pipeline/pipeline.hpp"

#include "tunnelrec/core/parallel.hpp"
#include "tunnelrec/io/image.hpp"
#include "tunnelrec/io/ply.hpp"
#include "tunnelrec/io/pose_csv.hpp"
#include "tunnelrec/mapping/dense.hpp"
#include "tunnelrec/simulator/dataset.hpp"

#include <fmt/format.h>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace tunnelrec {

namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

template <class... Args>
void log(Stage s, fmt::format_string<Args...> f, Args&&... args) {
  fmt::print(stderr, "[{}] {}\n", stage_name(s), fmt::format(f, std::forward<Args>(args)...));
}

// Runs fn, turning any failure into a StageError for `stage`. I/O problems
// get their own exit code but keep the stage name in the message.
template <class Fn>
auto guarded(Stage stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const IoError& e) {
    throw StageError(Stage::IO, fmt::format("{}: {}", stage_name(stage), e.what()));
  } catch (const fs::filesystem_error& e) {
    throw StageError(Stage::IO, fmt::format("{}: {}", stage_name(stage), e.what()));
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot open '{}' for writing", path.string()));
  out << text;
  if (!out) throw IoError(fmt::format("error writing '{}'", path.string()));
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw InvalidArgument(fmt::format("missing {} '{}' (run the earlier stage first)", what, path.string()));
  }
}

void prepare(const PipelineConfig& config) {
  const RunLayout layout(config);
  fs::create_directories(layout.out);
  write_text(layout / "config.ini", config_to_ini(config));
}

int count_frames(const RunLayout& layout) {
  if (!fs::is_directory(layout.frames)) {
    throw InvalidArgument(fmt::format("frame directory '{}' does not exist", layout.frames.string()));
  }
  int n = 0;
  while (fs::exists(layout.frames / sim::frame_filename(n))) ++n;
  if (n == 0) throw InvalidArgument(fmt::format("no frame_0000.png in '{}'", layout.frames.string()));
  return n;
}

Image load_mask(const RunLayout& layout, const CameraIntrinsics& K) {
  if (!fs::exists(layout.mask)) return {};
  Image m = read_png(layout.mask, 1);
  if (m.width != K.width || m.height != K.height) {
    throw InvalidArgument(fmt::format("mask '{}' is {}x{}, frames are {}x{}", layout.mask.string(),
                                      m.width, m.height, K.width, K.height));
  }
  return m;
}

std::optional<std::vector<PoseSE3>> load_groundtruth(const RunLayout& layout) {
  if (!fs::exists(layout.groundtruth)) return std::nullopt;
  return read_poses_csv(layout.groundtruth);
}

std::vector<PoseSE3> load_poses(const fs::path& path, int frames) {
  require_file(path, "pose file");
  auto poses = read_poses_csv(path);
  if (static_cast<int>(poses.size()) != frames) {
    throw InvalidArgument(
        fmt::format("'{}' has {} poses for {} frames", path.string(), poses.size(), frames));
  }
  return poses;
}

json pose_errors_json(const PoseErrors& e) {
  return {{"translation_rms_m", e.translation_rms_m},
          {"rotation_rms_deg", e.rotation_rms_deg},
          {"max_translation_m", e.max_translation_m}};
}

json plan_json(const planner::SpeedPlan& p) {
  return {{"r1", p.r1},
          {"theta_view_rad", p.theta_view},
          {"d_max_rotation_m", p.d_max_rotation},
          {"d_max_image_m", p.d_max_image},
          {"images_per_rotation", p.n}};
}

AtlasSpec atlas_spec(const PipelineConfig& config, const std::vector<PoseSE3>& poses) {
  const CameraIntrinsics K = config.intrinsics();
  if (config.atlas_auto) {
    AtlasSpec s = atlas_spec_for(K, config.prior(), poses, config.images_per_rotation, config.atlas_margin);
    s.averaging = config.averaging;
    return s;
  }
  AtlasSpec s;
  s.cylinder_width = config.cylinder_width;
  s.texels_per_meter = config.texels_per_meter;
  s.y_min = config.y_min;
  s.y_max = config.y_max;
  s.averaging = config.averaging;
  return s;
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::Config: return "config";
    case Stage::Simulate: return "simulate";
    case Stage::Plan: return "plan";
    case Stage::Matches: return "synth-matches";
    case Stage::Pose: return "pose";
    case Stage::BA: return "ba";
    case Stage::Reconstruct: return "reconstruct";
    case Stage::Stitch: return "stitch";
    case Stage::IO: return "io";
  }
  return "?";
}

int stage_exit_code(Stage s) { return 2 + static_cast<int>(s); }

StageError::StageError(Stage stage, const std::string& cause)
    : Error(fmt::format("{}: {}", stage_name(stage), cause)), stage_(stage), cause_(cause) {}

RunLayout::RunLayout(const PipelineConfig& config) : out(config.output_dir) {
  if (config.simulate()) {
    frames = out / "frames";
    matches = out / "matches.txt";
  } else {
    frames = config.input_dir;
    matches = config.input_dir / "matches.txt";
  }
  groundtruth = frames / "groundtruth.csv";
  mask = frames / "mask.png";
}

PoseErrors compare_poses(const std::vector<PoseSE3>& estimate, const std::vector<PoseSE3>& truth) {
  if (estimate.size() != truth.size() || estimate.empty()) {
    throw InvalidArgument(fmt::format("cannot compare {} poses with {}", estimate.size(), truth.size()));
  }
  PoseErrors e;
  double st = 0.0, sr = 0.0;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    const double dt = (estimate[k].translation - truth[k].translation).norm();
    const double dr = so3_log(truth[k].rotation.transpose() * estimate[k].rotation).norm() * 180.0 / M_PI;
    st += dt * dt;
    sr += dr * dr;
    e.max_translation_m = std::max(e.max_translation_m, dt);
  }
  e.translation_rms_m = std::sqrt(st / truth.size());
  e.rotation_rms_deg = std::sqrt(sr / truth.size());
  return e;
}

int stage_simulate(const PipelineConfig& config) {
  return guarded(Stage::Simulate, [&] {
    if (!config.simulate()) throw InvalidArgument("simulate needs run.mode = simulate");
    const Timer timer;
    prepare(config);
    const RunLayout layout(config);
    const auto trajectory = config.trajectory();
    int written = 0;
    write_artifact(layout.frames, [&](const fs::path& dir) {
      written = sim::simulate_dataset(trajectory, config.scene(), config.intrinsics(), config.seed, dir,
                                      config.threads)
                    .frames_written;
    });
    log(Stage::Simulate, "{} frames, {:.3f} m per image, {:.2f} s", written, trajectory.forward_step,
        timer.seconds());
    return written;
  });
}

planner::SpeedPlan stage_plan(const PipelineConfig& config) {
  return guarded(Stage::Plan, [&] {
    prepare(config);
    const RunLayout layout(config);
    const CameraIntrinsics K = config.intrinsics();
    const double r = config.prior_shape == "cylinder" ? config.radius
                                                      : std::min(config.box_left, config.box_right);
    const auto plan = planner::plan_speed(K.omega_h, K.omega_v, r, config.planner_r1,
                                          config.images_per_rotation);
    json j = plan_json(plan);
    j["radius_m"] = r;
    j["forward_step_m"] = config.trajectory().forward_step;
    write_artifact(layout / "plan.json", [&](const fs::path& p) { write_text(p, j.dump(2) + "\n"); });
    log(Stage::Plan, "d_max {:.4f} m per image ({:.4f} m per rotation)", plan.d_max_image,
        plan.d_max_rotation);
    return plan;
  });
}

std::size_t stage_matches(const PipelineConfig& config) {
  return guarded(Stage::Matches, [&] {
    if (!config.simulate()) throw InvalidArgument("synth-matches needs run.mode = simulate");
    const Timer timer;
    prepare(config);
    const RunLayout layout(config);
    const int frames = count_frames(layout);
    require_file(layout.groundtruth, "groundtruth");
    const auto poses = load_poses(layout.groundtruth, frames);
    const auto edges = build_match_graph(frames, config.images_per_rotation);
    const auto synth = synthesize_dataset_matches(poses, edges, config.scene(), config.intrinsics(),
                                                  config.points_per_frame, config.synthesis());
    write_artifact(layout.matches, [&](const fs::path& p) { write_matches(p, synth.matches); });
    write_artifact(layout / "match_outliers.txt", [&](const fs::path& p) {
      std::string s;
      s.reserve(2 * synth.outlier.size());
      for (auto f : synth.outlier) s += f ? "1\n" : "0\n";
      write_text(p, s);
    });
    log(Stage::Matches, "{} matches over {} edges, {:.2f} s", synth.matches.size(), edges.size(),
        timer.seconds());
    return synth.matches.size();
  });
}

std::vector<PoseSE3> stage_pose(const PipelineConfig& config) {
  return guarded(Stage::Pose, [&] {
    const Timer timer;
    prepare(config);
    const RunLayout layout(config);
    const int frames = count_frames(layout);
    const CameraIntrinsics K = config.intrinsics();
    require_file(layout.matches, "match file");
    const auto matches = read_matches(layout.matches);
    validate_matches(matches, K.width, K.height);
    const auto groups = group_by_edge(matches);

    std::vector<std::optional<EdgePose>> estimates(groups.size());
    std::vector<std::string> failures(groups.size());
    const RansacOptions ransac = config.ransac();
    parallel_for(groups.size(), config.threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        try {
          estimates[i] = estimate_edge(groups[i].first, groups[i].second, K, ransac);
        } catch (const Error& err) {
          failures[i] = err.what();
        }
      }
    });
    std::vector<EdgePose> edges;
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (estimates[i]) {
        edges.push_back(std::move(*estimates[i]));
      } else {
        log(Stage::Pose, "edge ({}, {}) skipped: {}", groups[i].first.first, groups[i].first.second,
            failures[i]);
      }
    }
    ChainOptions chain;
    const auto truth = load_groundtruth(layout);
    chain.anchor = truth && !truth->empty() ? truth->front() : config.anchor();
    const ChainResult result = chain_and_scale(frames, edges, config.prior(), K, chain);
    std::vector<PoseSE3> poses = result.poses;
    if (config.resect) {
      ResectionOptions ro;
      ro.joint_every = config.images_per_rotation;
      const ResectionResult r = resect_with_prior(result.poses, edges, config.prior(), K, ro);
      const auto weak = std::count_if(r.support.begin() + 1, r.support.end(), [](int n) { return n == 0; });
      if (weak > 0) log(Stage::Pose, "{} frames kept their chained pose (too few correspondences)", weak);
      poses = r.poses;
    }
    write_artifact(layout / "poses_chained.csv", [&](const fs::path& p) { write_poses_csv(p, result.poses); });
    write_artifact(layout / "poses_initial.csv", [&](const fs::path& p) { write_poses_csv(p, poses); });
    log(Stage::Pose, "{} of {} edges estimated, {} frames placed, {:.2f} s", edges.size(), groups.size(),
        poses.size(), timer.seconds());
    return poses;
  });
}

BAResult stage_ba(const PipelineConfig& config) {
  return guarded(Stage::BA, [&] {
    const Timer timer;
    prepare(config);
    const RunLayout layout(config);
    const int frames = count_frames(layout);
    AblationInput input;
    input.K = config.intrinsics();
    input.prior = config.prior();
    input.pruning = config.pruning();
    require_file(layout.matches, "match file");
    input.matches = read_matches(layout.matches);
    input.static_mask = load_mask(layout, input.K);
    input.initial_poses = load_poses(layout / "poses_initial.csv", frames);
    const int threads = resolve_threads(config.threads);
    AblationRow row{config.ablation(), run_ba_config(input, config.ablation(), config.ba_options(threads))};
    write_artifact(layout / "poses.csv", [&](const fs::path& p) { write_poses_csv(p, row.result.poses); });
    write_artifact(layout / "ba-report.csv", [&](const fs::path& p) { write_ba_report_csv(p, {row}); });
    const BAReport& r = row.result.report;
    log(Stage::BA, "{}: {:.4f} px -> {:.4f} px, {} active tracks, {} iterations ({}), {:.2f} s",
        ablation_name(row.config), r.before_px, r.after_px, r.active_tracks, r.iterations, r.termination,
        timer.seconds());
    return std::move(row.result);
  });
}

std::vector<AblationRow> stage_ablate(const PipelineConfig& config) {
  return guarded(Stage::BA, [&] {
    const Timer timer;
    prepare(config);
    const RunLayout layout(config);
    const int frames = count_frames(layout);
    AblationInput input;
    input.K = config.intrinsics();
    input.prior = config.prior();
    input.pruning = config.pruning();
    require_file(layout.matches, "match file");
    input.matches = read_matches(layout.matches);
    input.static_mask = load_mask(layout, input.K);
    input.initial_poses = load_poses(layout / "poses_initial.csv", frames);
    const int threads = resolve_threads(config.threads);
    auto rows = ablation_report(input, all_ablation_configs(), config.ba_options(threads));
    write_artifact(layout / "ba-report.csv", [&](const fs::path& p) { write_ba_report_csv(p, rows); });
    write_artifact(layout / "ba-report.txt",
                   [&](const fs::path& p) { write_text(p, format_ablation_table(rows)); });
    log(Stage::BA, "ablation of {} configurations, {:.2f} s", rows.size(), timer.seconds());
    return rows;
  });
}

std::uint64_t stage_reconstruct(const PipelineConfig& config) {
  return guarded(Stage::Reconstruct, [&] {
    const Timer timer;
    prepare(config);
    const RunLayout layout(config);
    const int frames = count_frames(layout);
    const CameraIntrinsics K = config.intrinsics();
    const auto poses = load_poses(layout / "poses.csv", frames);
    const Image mask = load_mask(layout, K);
    std::uint64_t total = 0, kept = 0;
    write_artifact(layout / "cloud.ply", [&](const fs::path& p) {
      PlyWriter ply(p, config.ply());
      std::uint64_t index = 0;
      const auto stride = static_cast<std::uint64_t>(config.cloud_stride);
      total = reconstruct_dense([&](int f) { return sim::load_frame(layout.frames, f); }, poses, K,
                                config.prior(), mask,
                                [&](int, std::span<const DensePoint> pts) {
                                  for (const auto& pt : pts) {
                                    if (index++ % stride == 0) ply.add(to_ply_vertex(pt));
                                  }
                                },
                                config.threads);
      ply.close();
      kept = ply.count();
    });
    log(Stage::Reconstruct, "{} points ({} written), {:.2f} s", total, kept, timer.seconds());
    return total;
  });
}

TextureAtlas stage_stitch(const PipelineConfig& config) {
  return guarded(Stage::Stitch, [&] {
    const Timer timer;
    prepare(config);
    const RunLayout layout(config);
    const int frames = count_frames(layout);
    const CameraIntrinsics K = config.intrinsics();
    const auto poses = load_poses(layout / "poses.csv", frames);
    const Image mask = load_mask(layout, K);
    const AtlasSpec spec = atlas_spec(config, poses);
    AtlasAccumulator acc(config.prior(), spec);
    reconstruct_dense([&](int f) { return sim::load_frame(layout.frames, f); }, poses, K, config.prior(),
                      mask, [&](int, std::span<const DensePoint> pts) { acc.add(pts); }, config.threads);
    TextureAtlas atlas = acc.finish();
    write_artifact(layout / "atlas", [&](const fs::path& dir) {
      fs::create_directories(dir);
      write_atlas(atlas, dir);
      json j = {{"cylinder_width", spec.cylinder_width},
                {"texels_per_meter", spec.texels_per_meter},
                {"y_min", spec.y_min},
                {"y_max", spec.y_max},
                {"averaging", spec.averaging},
                {"hole_texels", atlas.hole_count()}};
      json surfaces = json::array();
      for (const auto& s : atlas.surfaces) {
        surfaces.push_back({{"surface", surface_name(s.surface)},
                            {"width", s.color.width},
                            {"height", s.color.height},
                            {"u_origin", s.u_origin},
                            {"holes", s.hole_count}});
      }
      j["surfaces"] = surfaces;
      write_text(dir / "atlas.json", j.dump(2) + "\n");
    });
    log(Stage::Stitch, "{} surfaces, {} hole texels, {:.2f} s", atlas.surfaces.size(), atlas.hole_count(),
        timer.seconds());
    return atlas;
  });
}

RunSummary run_pipeline(const PipelineConfig& config) {
  const Timer timer;
  const RunLayout layout(config);
  RunSummary s;
  s.plan = stage_plan(config);
  s.forward_step = config.trajectory().forward_step;
  if (config.simulate()) {
    stage_simulate(config);
    s.matches = stage_matches(config);
  }
  const auto initial = stage_pose(config);
  const BAResult ba = stage_ba(config);
  s.ba = ba.report;
  s.frames = static_cast<int>(ba.poses.size());
  if (!config.simulate()) s.matches = read_matches(layout.matches).size();
  s.dense_points = stage_reconstruct(config);
  const TextureAtlas atlas = stage_stitch(config);
  s.hole_texels = atlas.hole_count();
  for (const auto& a : atlas.surfaces) s.atlas_texels += static_cast<std::size_t>(a.color.width) * a.color.height;

  guarded(Stage::IO, [&] {
    if (const auto truth = load_groundtruth(layout)) {
      s.initial_pose_error = compare_poses(initial, *truth);
      s.pose_error = compare_poses(ba.poses, *truth);
    }
    json j;
    j["frames"] = s.frames;
    j["matches"] = s.matches;
    j["forward_step_m"] = s.forward_step;
    j["plan"] = plan_json(s.plan);
    if (s.initial_pose_error) j["initial_pose_error"] = pose_errors_json(*s.initial_pose_error);
    if (s.pose_error) j["pose_error"] = pose_errors_json(*s.pose_error);
    j["ba"] = {{"config", config.pruning_config},
               {"before_px", s.ba.before_px},
               {"after_px", s.ba.after_px},
               {"pruned_p1", s.ba.pruned_p1},
               {"pruned_p2", s.ba.pruned_p2},
               {"pruned_p3", s.ba.pruned_p3},
               {"degenerate", s.ba.degenerate},
               {"active_tracks", s.ba.active_tracks},
               {"observations", s.ba.observations},
               {"iterations", s.ba.iterations},
               {"converged", s.ba.converged},
               {"termination", s.ba.termination}};
    j["dense_points"] = s.dense_points;
    j["atlas_texels"] = s.atlas_texels;
    j["hole_texels"] = s.hole_texels;
    j["config"] = config_values(config);
    write_artifact(layout / "summary.json", [&](const fs::path& p) { write_text(p, j.dump(2) + "\n"); });
    return 0;
  });
  fmt::print(stderr, "[run] done in {:.2f} s\n", timer.seconds());
  return s;
}

}  // namespace tunnelrec
