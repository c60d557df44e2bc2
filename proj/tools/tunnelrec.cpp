#include "tunnelrec/pipeline/pipeline.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <functional>
#include <map>

using namespace tunnelrec;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output;
  int threads = -1;
  long long seed = -1;
};

PipelineConfig resolve(const Common& c) {
  std::vector<std::string> o = c.overrides;
  if (!c.output.empty()) o.push_back("run.output_dir=" + c.output);
  if (c.threads >= 0) o.push_back(fmt::format("run.threads={}", c.threads));
  if (c.seed >= 0) o.push_back(fmt::format("run.seed={}", c.seed));
  return load_config(c.config_path, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tunnel reconstruction from spiral image sequences"};
  app.require_subcommand(1);
  Common common;

  std::map<std::string, std::function<void(const PipelineConfig&)>> actions{
      {"simulate", [](const PipelineConfig& c) { stage_simulate(c); }},
      {"plan",
       [](const PipelineConfig& c) {
         const auto p = stage_plan(c);
         fmt::print("theta {:.6f} rad, d_max {:.6f} m per rotation, {:.6f} m per image (n = {})\n",
                    p.theta_view, p.d_max_rotation, p.d_max_image, p.n);
       }},
      {"synth-matches", [](const PipelineConfig& c) { stage_matches(c); }},
      {"pose", [](const PipelineConfig& c) { stage_pose(c); }},
      {"ba", [](const PipelineConfig& c) { stage_ba(c); }},
      {"reconstruct", [](const PipelineConfig& c) { stage_reconstruct(c); }},
      {"stitch", [](const PipelineConfig& c) { stage_stitch(c); }},
      {"ablate", [](const PipelineConfig& c) { fmt::print("{}", format_ablation_table(stage_ablate(c))); }},
      {"run",
       [](const PipelineConfig& c) {
         const RunSummary s = run_pipeline(c);
         fmt::print("frames {}, BA {:.4f} px -> {:.4f} px, {} dense points, {} hole texels\n", s.frames,
                    s.ba.before_px, s.ba.after_px, s.dense_points, s.hole_texels);
         if (s.pose_error) {
           fmt::print("pose error vs groundtruth: {:.6f} m RMS, {:.6f} deg RMS\n",
                      s.pose_error->translation_rms_m, s.pose_error->rotation_rms_deg);
         }
       }},
      {"config", [](const PipelineConfig& c) { fmt::print("{}", config_to_ini(c)); }},
  };
  const std::map<std::string, std::string> help{
      {"simulate", "Render a synthetic spiral dataset into <output>/frames"},
      {"plan", "Compute the maximum forward speed for full coverage"},
      {"synth-matches", "Synthesize correspondences from the groundtruth poses"},
      {"pose", "Estimate initial poses from the matches"},
      {"ba", "Prune and bundle adjust; writes poses.csv and ba-report.csv"},
      {"reconstruct", "Dense point cloud from poses.csv (cloud.ply)"},
      {"stitch", "Texture atlas and hole masks from poses.csv"},
      {"ablate", "Pruning ablation over SBA, P1, P2, P1+P2, P1+P2+P3"},
      {"run", "Full pipeline and summary.json"},
      {"config", "Print the resolved configuration"},
  };

  std::string chosen;
  for (const auto& [name, action] : actions) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("-c,--config", common.config_path, "INI config file")->check(CLI::ExistingFile);
    sub->add_option("--set", common.overrides, "Override a config key: section.key=value")
        ->allow_extra_args(false);
    sub->add_option("-o,--output", common.output, "Output directory (run.output_dir)");
    sub->add_option("--threads", common.threads, "Worker threads, 0 = all cores (run.threads)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", common.seed, "Random seed (run.seed)")->check(CLI::NonNegativeNumber);
    sub->callback([&chosen, n = name] { chosen = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return stage_exit_code(Stage::Config);
  }

  PipelineConfig config;
  try {
    config = resolve(common);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: config: {}\n", e.what());
    return stage_exit_code(Stage::Config);
  }
  try {
    actions.at(chosen)(config);
  } catch (const StageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return stage_exit_code(e.stage());
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
