#pragma once

#include <memory>
#include <string>

#include "wm/envs/dodgeworld.hpp"
#include "wm/envs/episode.hpp"
#include "wm/envs/trackworld.hpp"

namespace wm::envs {

struct EnvConfig {
  std::string kind = "trackworld";  // "trackworld" or "dodgeworld"
  TrackWorldConfig track;
  DodgeWorldConfig dodge;
};

std::unique_ptr<Environment> make_environment(const EnvConfig& config);
EnvFactory environment_factory(const EnvConfig& config);

}  // namespace wm::envs
