#pragma once

#include <vector>

#include "wm/core/rng.hpp"
#include "wm/envs/env.hpp"

namespace wm::envs {

/// Survival game on a unit arena: an agent strip at the bottom dodges
/// projectiles that monsters along the top fire at it. Coordinates are in
/// arena units (x right, y down, both in [0, 1]). Monsters are spread evenly
/// from wall to wall, so with straight-down fire the safe ground is the gaps
/// between their columns.
struct DodgeWorldConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t max_steps = 2100;
  std::size_t n_monsters = 4;
  double fire_prob = 0.006;  // per idle monster per step
  double projectile_speed = 0.05;
  double projectile_size = 0.1;
  double agent_speed = 0.04;
  double agent_width = 0.2;
  double agent_height = 0.08;
  double monster_size = 0.1;
  bool aim_at_agent = false;  // otherwise projectiles fall straight down
  bool random_start = true;   // agent x drawn uniformly at reset, else centred
};

class DodgeWorld final : public Environment {
 public:
  explicit DodgeWorld(DodgeWorldConfig config);

  std::string id() const override { return "dodgeworld"; }
  const ActionSpec& action_spec() const override { return spec_; }
  std::size_t height() const override { return config_.height; }
  std::size_t width() const override { return config_.width; }
  std::size_t max_steps() const override { return config_.max_steps; }
  double min_return() const override { return 0.0; }

  const DodgeWorldConfig& config() const noexcept { return config_; }
  double agent_x() const noexcept { return agent_x_; }
  std::size_t projectiles_in_flight() const noexcept { return projectiles_.size(); }
  /// Steps a projectile needs to fall from a monster to the agent's top edge.
  std::size_t traversal_steps() const;

  /// Maps a continuous action in [-1, 1] to -1 (left), 0 (stay) or +1 (right).
  static int discretize(double action);

 protected:
  Observation do_reset(std::uint64_t seed) override;
  StepResult do_step(std::span<const double> action) override;

 private:
  struct Projectile {
    double x, y, vx, vy;
    std::size_t owner;
  };
  double monster_x(std::size_t k) const;
  double monster_y() const { return 0.5 * config_.monster_size + 0.02; }
  double agent_y() const { return 1.0 - 0.5 * config_.agent_height - 0.02; }
  Observation render() const;

  DodgeWorldConfig config_;
  ActionSpec spec_;
  std::vector<Projectile> projectiles_;
  std::vector<std::uint8_t> armed_;
  double agent_x_ = 0.5;
  core::RngStream rng_{0};
};

}  // namespace wm::envs
