#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wm/dream/agent.hpp"
#include "wm/pipeline/config.hpp"
#include "wm/pipeline/manifest.hpp"

namespace wm::pipeline {

struct EvolveRequest {
  std::string name;  // output directory under evolve/; empty = derived from the settings
  controller::FeatureMode features = controller::FeatureMode::z_h;
  std::size_t hidden_width = 0;
  bool in_dream = false;
  double temperature = 1.0;  // dream only
};

struct EvaluationSummary {
  std::string name;
  std::size_t n = 0;
  double mean = 0;
  double stddev = 0;
  double standard_error = 0;
  std::size_t param_count = 0;
};

struct SweepRow {
  double temperature = 0;
  EvaluationSummary virtual_score;
  EvaluationSummary actual_score;
};

struct AblationRow {
  std::string label;
  EvaluationSummary score;
};

/// One experiment directory. Stage layout:
///   collect/episodes.wmep  collect/returns.csv
///   vae/vae.ckpt  vae/metrics.csv
///   rnn/latents.wmlz  rnn/mdnrnn.ckpt  rnn/metrics.csv
///   evolve/<name>/controller.ckpt  evolve/<name>/es.csv
///   evaluate/<name>/{returns.csv, histogram.csv, summary.json}
///   dream/<name>/trace_<seed>.csv (+ frames)
///   sweep/table.{csv,md}  ablation/report.{csv,md}
class Run {
 public:
  /// Creates the directory and writes config.json, or checks that an existing
  /// directory holds the same config.
  Run(std::filesystem::path dir, ExperimentConfig config, std::size_t workers);

  const ExperimentConfig& config() const noexcept { return config_; }
  const std::string& hash() const noexcept { return hash_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }
  const RunManifest& manifest() const noexcept { return manifest_; }

  std::filesystem::path episodes_path() const { return dir_ / "collect" / "episodes.wmep"; }
  std::filesystem::path vae_path() const { return dir_ / "vae" / "vae.ckpt"; }
  std::filesystem::path latents_path() const { return dir_ / "rnn" / "latents.wmlz"; }
  std::filesystem::path mdn_path() const { return dir_ / "rnn" / "mdnrnn.ckpt"; }
  std::filesystem::path controller_path(const std::string& name) const {
    return dir_ / "evolve" / name / "controller.ckpt";
  }

  // Non-evolve stages skip when already up to date unless force is set.
  void collect(bool force = false);
  void train_vae(bool force = false);
  void train_rnn(bool force = false);
  /// Throws RefusedRerun when the controller already exists, unless force.
  std::string evolve(const EvolveRequest& request, bool force = false);
  /// name "random" evaluates the random policy; in_dream evaluates in M at temperature.
  EvaluationSummary evaluate(const std::string& name, bool in_dream = false, std::optional<double> temperature = {},
                             bool force = false);
  /// Writes a z/action/done trace of one dream episode; name "zero" uses an all-zero controller.
  std::filesystem::path dream_rollout(const std::string& name, std::uint64_t seed, bool decode_frames,
                                      std::optional<double> temperature = {});
  std::vector<SweepRow> sweep_temperature(bool force = false);
  std::vector<AblationRow> ablation(bool force = false);

  EvolveRequest default_request() const;
  static std::string request_name(const EvolveRequest& r);

 private:
  void require(const std::filesystem::path& p, const std::string& stage) const;
  vae::Vae load_vae() const;
  mdn::MdnRnn load_mdn() const;
  dream::InitialPool load_pool() const;

  std::filesystem::path dir_;
  ExperimentConfig config_;
  std::string hash_;
  std::size_t workers_;
  RunManifest manifest_;
};

/// Parameter counts of V, M and C for a config, with the paper's reference
/// totals for the two full-scale presets and the 1,088 / 1,089 note.
std::string params_report(const ExperimentConfig& config);

}  // namespace wm::pipeline
