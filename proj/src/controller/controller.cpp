#include "wm/controller/controller.hpp"

#include <cmath>
#include <sstream>

#include "wm/core/io.hpp"
#include "wm/core/rng.hpp"

namespace wm::controller {

FeatureMode parse_feature_mode(const std::string& name) {
  if (name == "z_only") return FeatureMode::z_only;
  if (name == "z_h") return FeatureMode::z_h;
  if (name == "z_h_c") return FeatureMode::z_h_c;
  throw std::invalid_argument("unknown feature mode '" + name + "' (expected z_only, z_h or z_h_c)");
}

std::string to_string(FeatureMode mode) {
  switch (mode) {
    case FeatureMode::z_only:
      return "z_only";
    case FeatureMode::z_h:
      return "z_h";
    case FeatureMode::z_h_c:
      return "z_h_c";
  }
  return "?";
}

std::size_t feature_dim(FeatureMode mode, std::size_t n_z, std::size_t n_hidden) {
  switch (mode) {
    case FeatureMode::z_only:
      return n_z;
    case FeatureMode::z_h:
      return n_z + n_hidden;
    case FeatureMode::z_h_c:
      return n_z + 2 * n_hidden;
  }
  return 0;
}

std::vector<double> build_features(std::span<const double> z, const mdn::RnnState& state, FeatureMode mode) {
  std::vector<double> f(z.begin(), z.end());
  if (mode != FeatureMode::z_only) f.insert(f.end(), state.h.begin(), state.h.end());
  if (mode == FeatureMode::z_h_c) f.insert(f.end(), state.c.begin(), state.c.end());
  return f;
}

void ControllerConfig::validate() const {
  if (feature_dim == 0 || action_dim == 0) throw std::invalid_argument("ControllerConfig: dims must be positive");
}

std::size_t ControllerConfig::param_count() const {
  const std::size_t bias = use_bias ? 1 : 0;
  if (hidden_width == 0) return (feature_dim + bias) * action_dim;
  return (feature_dim + bias) * hidden_width + (hidden_width + bias) * action_dim;
}

std::vector<double> initial_params(const ControllerConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<double> p(config.param_count(), 0.0);
  if (config.hidden_width == 0) return p;
  core::RngStream rng(seed, "controller_init");
  const double a = std::sqrt(3.0 / static_cast<double>(config.feature_dim));
  for (std::size_t i = 0; i < config.hidden_width * config.feature_dim; ++i) p[i] = rng.uniform(-a, a);
  return p;
}

Controller::Controller(ControllerConfig config, envs::ActionSpec bounds) : config_(config), bounds_(std::move(bounds)) {
  config_.validate();
  if (bounds_.dim() != config_.action_dim)
    throw std::invalid_argument("Controller: action bounds have " + std::to_string(bounds_.dim()) + " dims, config has " +
                                std::to_string(config_.action_dim));
}

namespace {

// out = tanh(W x + b), W row-major [rows, cols].
void dense_tanh(const double* w, const double* b, std::span<const double> x, std::size_t rows, std::vector<double>& out) {
  out.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = b ? b[r] : 0.0;
    const double* wr = w + r * x.size();
    for (std::size_t c = 0; c < x.size(); ++c) s += wr[c] * x[c];
    out[r] = std::tanh(s);
  }
}

}  // namespace

std::vector<double> Controller::act(std::span<const double> features, std::span<const double> params) const {
  if (features.size() != config_.feature_dim)
    core::throw_shape_mismatch("controller act (features vs feature_dim)", {features.size()}, {config_.feature_dim});
  if (params.size() != param_count())
    core::throw_shape_mismatch("controller act (params vs param_count)", {params.size()}, {param_count()});
  const std::size_t fd = config_.feature_dim, ad = config_.action_dim, hw = config_.hidden_width;
  const double* p = params.data();
  std::vector<double> a;
  if (hw == 0) {
    dense_tanh(p, config_.use_bias ? p + ad * fd : nullptr, features, ad, a);
  } else {
    std::vector<double> hidden;
    dense_tanh(p, config_.use_bias ? p + hw * fd : nullptr, features, hw, hidden);
    const double* p2 = p + hw * fd + (config_.use_bias ? hw : 0);
    dense_tanh(p2, config_.use_bias ? p2 + ad * hw : nullptr, hidden, ad, a);
  }
  for (std::size_t i = 0; i < ad; ++i) a[i] = bounds_.lo[i] + 0.5 * (a[i] + 1.0) * (bounds_.hi[i] - bounds_.lo[i]);
  return a;
}

namespace {
std::string join_doubles(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}
std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}
}  // namespace

void save_controller(const std::filesystem::path& path, const Controller& c, std::span<const double> params,
                     const std::map<std::string, std::string>& extra_meta) {
  core::Checkpoint ckpt;
  ckpt.meta = extra_meta;
  ckpt.meta["model"] = "controller";
  ckpt.meta["feature_dim"] = std::to_string(c.config().feature_dim);
  ckpt.meta["action_dim"] = std::to_string(c.config().action_dim);
  ckpt.meta["hidden_width"] = std::to_string(c.config().hidden_width);
  ckpt.meta["use_bias"] = c.config().use_bias ? "1" : "0";
  ckpt.meta["action_lo"] = join_doubles(c.bounds().lo);
  ckpt.meta["action_hi"] = join_doubles(c.bounds().hi);
  core::Array a({params.size()}, std::vector<double>(params.begin(), params.end()));
  core::round_to_f32(a);
  ckpt.add("params", std::move(a));
  core::save_checkpoint(path, ckpt);
}

LoadedController load_controller(const std::filesystem::path& path) {
  const auto ckpt = core::load_checkpoint(path);
  if (ckpt.meta_value("model") != "controller") throw core::FormatError(path.string() + " is not a controller checkpoint");
  ControllerConfig cfg;
  cfg.feature_dim = std::stoul(ckpt.meta_value("feature_dim"));
  cfg.action_dim = std::stoul(ckpt.meta_value("action_dim"));
  cfg.hidden_width = std::stoul(ckpt.meta_value("hidden_width"));
  cfg.use_bias = ckpt.meta_value("use_bias") == "1";
  envs::ActionSpec bounds(split_doubles(ckpt.meta_value("action_lo")), split_doubles(ckpt.meta_value("action_hi")));
  const auto& t = ckpt.tensor("params");
  return {Controller(cfg, bounds), t.storage(), ckpt.meta};
}

}  // namespace wm::controller
