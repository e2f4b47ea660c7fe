#include "wm/envs/factory.hpp"

namespace wm::envs {

std::unique_ptr<Environment> make_environment(const EnvConfig& config) {
  if (config.kind == "trackworld") return std::make_unique<TrackWorld>(config.track);
  if (config.kind == "dodgeworld") return std::make_unique<DodgeWorld>(config.dodge);
  throw std::invalid_argument("unknown environment kind '" + config.kind + "' (expected trackworld or dodgeworld)");
}

EnvFactory environment_factory(const EnvConfig& config) {
  return [config] { return make_environment(config); };
}

}  // namespace wm::envs
