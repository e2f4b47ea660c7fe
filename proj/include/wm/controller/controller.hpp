#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "wm/core/checkpoint.hpp"
#include "wm/envs/env.hpp"
#include "wm/mdn/mdnrnn.hpp"

namespace wm::controller {

enum class FeatureMode { z_only, z_h, z_h_c };

FeatureMode parse_feature_mode(const std::string& name);
std::string to_string(FeatureMode mode);
std::size_t feature_dim(FeatureMode mode, std::size_t n_z, std::size_t n_hidden);

/// Concatenation in the order [z, h, c], truncated per mode.
std::vector<double> build_features(std::span<const double> z, const mdn::RnnState& state, FeatureMode mode);

struct ControllerConfig {
  std::size_t feature_dim = 0;
  std::size_t action_dim = 0;
  std::size_t hidden_width = 0;  // 0 = linear map
  bool use_bias = true;

  void validate() const;
  std::size_t param_count() const;
};

/// Flat parameter layout, row-major weights then biases per layer:
/// linear  [W (action x feature) | b]
/// hidden  [W1 (width x feature) | b1 | W2 (action x width) | b2]
/// a = tanh(...) in [-1, 1], then rescaled affinely to the action bounds.
class Controller {
 public:
  Controller(ControllerConfig config, envs::ActionSpec bounds);

  const ControllerConfig& config() const noexcept { return config_; }
  const envs::ActionSpec& bounds() const noexcept { return bounds_; }
  std::size_t param_count() const { return config_.param_count(); }

  std::vector<double> act(std::span<const double> features, std::span<const double> params) const;

 private:
  ControllerConfig config_;
  envs::ActionSpec bounds_;
};

/// Search starting point. Linear: all zeros. Hidden layer: W1 uniform with
/// unit pre-activation variance for unit-variance features, everything else
/// zero, so the start is a random-features linear controller instead of the
/// flat saddle at the origin.
std::vector<double> initial_params(const ControllerConfig& config, std::uint64_t seed);

/// Stores the parameter vector with the controller config and action bounds embedded.
void save_controller(const std::filesystem::path& path, const Controller& c, std::span<const double> params,
                     const std::map<std::string, std::string>& extra_meta = {});
struct LoadedController {
  Controller controller;
  std::vector<double> params;
  std::map<std::string, std::string> meta;
};
LoadedController load_controller(const std::filesystem::path& path);

}  // namespace wm::controller
