// Command-line front end for the world-model pipeline.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "wm/core/array.hpp"
#include "wm/core/io.hpp"
#include "wm/core/parallel.hpp"
#include "wm/pipeline/run.hpp"

namespace fs = std::filesystem;
using namespace wm;
using namespace wm::pipeline;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kMissing = 3, kNumerical = 4 };

struct Common {
  std::string run_dir;
  std::string config_file;
  std::string preset_name;
  std::vector<std::string> overrides;
  std::size_t workers = 0;
  bool force = false;
};

void add_source_options(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_file, "Experiment config (JSON)");
  cmd->add_option("--preset", c.preset_name, "Built-in preset instead of --config");
  cmd->add_option("--set", c.overrides, "Override a config value, e.g. --set evolve.generations=10");
}

void add_run_options(CLI::App* cmd, Common& c) {
  cmd->add_option("--run", c.run_dir, "Run directory")->required();
  add_source_options(cmd, c);
  cmd->add_option("--workers", c.workers, "Rollout worker threads (default: WM_WORKERS or all cores)");
  cmd->add_flag("--force", c.force, "Redo the stage even if its outputs are current");
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config_file.empty() && !c.preset_name.empty()) throw ConfigError("give either --config or --preset, not both");
  if (!c.config_file.empty()) {
    cfg = load_config(c.config_file);
  } else if (!c.preset_name.empty()) {
    cfg = preset(c.preset_name);
  } else if (!c.run_dir.empty() && fs::exists(fs::path(c.run_dir) / "config.json")) {
    cfg = load_config(fs::path(c.run_dir) / "config.json");
  } else {
    throw ConfigError("no configuration: pass --config FILE or --preset NAME");
  }
  return c.overrides.empty() ? cfg : apply_overrides(cfg, c.overrides);
}

Run open_run(const Common& c) {
  return Run(c.run_dir, resolve_config(c), c.workers ? c.workers : core::default_worker_count());
}

void print_summary(const EvaluationSummary& s) {
  std::printf("%s: %.2f +- %.2f (se %.2f, n %zu)\n", s.name.c_str(), s.mean, s.stddev, s.standard_error, s.n);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  CLI::App app{"World-model pipeline: collect, train V and M, evolve C, evaluate."};
  app.require_subcommand(1);
  Common common;

  auto* init = app.add_subcommand("init", "Write a preset config to a file");
  std::string init_out;
  init->add_option("--preset", common.preset_name, "Preset name")->required();
  init->add_option("--out", init_out, "Output file")->required();
  init->add_option("--set", common.overrides, "Override a config value");

  auto* params = app.add_subcommand("params", "Parameter counts of V, M and C");
  add_source_options(params, common);

  auto* collect = app.add_subcommand("collect", "Collect random-policy rollouts");
  add_run_options(collect, common);
  auto* train_vae = app.add_subcommand("train-vae", "Train the VAE on collected frames");
  add_run_options(train_vae, common);
  auto* train_rnn = app.add_subcommand("train-rnn", "Encode episodes and train the MDN-RNN");
  add_run_options(train_rnn, common);

  EvolveRequest req;
  std::string features;
  std::optional<double> temperature;
  auto* evolve = app.add_subcommand("evolve", "Train a controller with CMA-ES");
  add_run_options(evolve, common);
  evolve->add_option("--name", req.name, "Controller name (default derived from the settings)");
  evolve->add_option("--features", features, "z_only, z_h or z_h_c (default from config)");
  evolve->add_option("--hidden-width", req.hidden_width, "Hidden tanh layer width (0 = linear)");
  bool dream_flag = false;
  evolve->add_flag("--dream", dream_flag, "Train inside M instead of the real environment");
  evolve->add_option("--temperature", temperature, "Dream temperature");

  std::string controller_name;
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a controller (or 'random') over fresh rollouts");
  add_run_options(evaluate, common);
  evaluate->add_option("--controller", controller_name, "Controller name or 'random'")->required();
  evaluate->add_flag("--dream", dream_flag, "Evaluate inside M");
  evaluate->add_option("--temperature", temperature, "Dream temperature");

  std::uint64_t seed = 0;
  bool decode = false;
  auto* dream_cmd = app.add_subcommand("dream-rollout", "Trace one dream episode");
  add_run_options(dream_cmd, common);
  dream_cmd->add_option("--controller", controller_name, "Controller name or 'zero'")->required();
  dream_cmd->add_option("--seed", seed, "Episode seed");
  dream_cmd->add_flag("--decode", decode, "Also write V-decoded frames as PPM images");
  dream_cmd->add_option("--temperature", temperature, "Dream temperature");

  auto* sweep = app.add_subcommand("sweep-temperature", "Train one dream controller per temperature; virtual vs actual");
  add_run_options(sweep, common);
  auto* ablation = app.add_subcommand("ablation", "z-only, z-only + hidden layer and z+h controllers vs random");
  add_run_options(ablation, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (init->parsed()) {
      ExperimentConfig cfg = preset(common.preset_name);
      if (!common.overrides.empty()) cfg = apply_overrides(cfg, common.overrides);
      fs::path out(init_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      core::write_file_atomic(out, [&](std::ostream& os) { os << to_json_text(cfg); });
      std::printf("wrote %s (config %s)\n", init_out.c_str(), config_hash(cfg).c_str());
    } else if (params->parsed()) {
      std::fputs(params_report(resolve_config(common)).c_str(), stdout);
    } else if (collect->parsed()) {
      open_run(common).collect(common.force);
    } else if (train_vae->parsed()) {
      open_run(common).train_vae(common.force);
    } else if (train_rnn->parsed()) {
      open_run(common).train_rnn(common.force);
    } else if (evolve->parsed()) {
      Run run = open_run(common);
      EvolveRequest r = run.default_request();
      r.name = req.name;
      if (!features.empty()) r.features = controller::parse_feature_mode(features);
      if (evolve->count("--hidden-width")) r.hidden_width = req.hidden_width;
      if (dream_flag) r.in_dream = true;
      if (temperature) r.temperature = *temperature;
      std::printf("%s\n", run.controller_path(run.evolve(r, common.force)).c_str());
    } else if (evaluate->parsed()) {
      print_summary(open_run(common).evaluate(controller_name, dream_flag, temperature, common.force));
    } else if (dream_cmd->parsed()) {
      std::printf("%s\n", open_run(common).dream_rollout(controller_name, seed, decode, temperature).c_str());
    } else if (sweep->parsed()) {
      for (const auto& row : open_run(common).sweep_temperature(common.force))
        std::printf("tau %.2f  virtual %.1f +- %.1f  actual %.1f +- %.1f\n", row.temperature, row.virtual_score.mean,
                    row.virtual_score.stddev, row.actual_score.mean, row.actual_score.stddev);
    } else if (ablation->parsed()) {
      for (const auto& row : open_run(common).ablation(common.force))
        std::printf("%-28s %.2f +- %.2f\n", row.label.c_str(), row.score.mean, row.score.stddev);
    }
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return kConfig;
  } catch (const RefusedRerun& e) {
    spdlog::error("{}", e.what());
    return kConfig;
  } catch (const MissingArtifact& e) {
    spdlog::error("{}", e.what());
    return kMissing;
  } catch (const core::NumericalError& e) {
    spdlog::error("numerical abort: {}", e.what());
    return kNumerical;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kFailure;
  }
  return kOk;
}
