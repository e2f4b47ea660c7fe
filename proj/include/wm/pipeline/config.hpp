#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "wm/cmaes/cmaes.hpp"
#include "wm/controller/controller.hpp"
#include "wm/dream/dream_env.hpp"
#include "wm/envs/factory.hpp"
#include "wm/mdn/mdnrnn.hpp"
#include "wm/mdn/train.hpp"
#include "wm/vae/train.hpp"
#include "wm/vae/vae.hpp"

namespace wm::pipeline {

/// Bad or inconsistent configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An upstream artifact is missing (exit code 3). The message names the stage to run.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A stage was asked to redo finished work without --force (exit code 2).
class RefusedRerun : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CollectConfig {
  std::size_t rollouts = 10000;
  std::size_t action_repeat = 1;
};

struct ControllerSettings {
  controller::FeatureMode features = controller::FeatureMode::z_h;
  std::size_t hidden_width = 0;
  bool use_bias = true;
};

struct EvolveSettings {
  std::size_t generations = 100;
  std::size_t population = 64;
  std::size_t rollouts_per_candidate = 16;
  std::size_t eval_every = 25;
  std::size_t eval_rollouts = 1024;
  double sigma0 = 0.1;
  cmaes::EvalTarget eval_target = cmaes::EvalTarget::mean;
  bool in_dream = false;
};

struct ExperimentConfig {
  std::string preset = "custom";
  std::uint64_t seed = 1;
  envs::EnvConfig env;
  CollectConfig collect;
  vae::VaeConfig vae;
  vae::VaeTrainConfig vae_train;
  mdn::MdnRnnConfig rnn;  // n_z and action_dim are taken from vae / env
  mdn::MdnTrainConfig rnn_train;
  ControllerSettings controller;
  EvolveSettings evolve;
  dream::DreamConfig dream;
  std::size_t evaluate_rollouts = 100;
  std::vector<double> sweep_temperatures{0.10, 0.50, 1.00, 1.15, 1.30};
  std::size_t ablation_hidden_width = 40;

  /// Fills derived fields (rnn.n_z, rnn.action_dim, stage seeds) and checks ranges. Throws ConfigError.
  void validate();
  std::size_t action_dim() const;
  envs::ActionSpec action_spec() const;
};

std::string to_json_text(const ExperimentConfig& c);
ExperimentConfig from_json_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies "dotted.key=value" overrides, value parsed as JSON (bare words as strings).
ExperimentConfig apply_overrides(const ExperimentConfig& c, const std::vector<std::string>& overrides);

/// 16 hex digits of FNV-1a over the canonical (sorted-key) JSON text.
std::string config_hash(const ExperimentConfig& c);

std::vector<std::string> preset_names();
/// trackworld-desk, dodgeworld-desk, car-paper, doom-paper.
ExperimentConfig preset(const std::string& name);

}  // namespace wm::pipeline
