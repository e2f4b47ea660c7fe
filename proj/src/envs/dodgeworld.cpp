#include "wm/envs/dodgeworld.hpp"

#include <algorithm>
#include <cmath>

namespace wm::envs {

namespace {
constexpr std::uint8_t kBackground[3] = {34, 34, 51};
constexpr std::uint8_t kMonster[3] = {170, 51, 51};
constexpr std::uint8_t kProjectile[3] = {255, 204, 51};
constexpr std::uint8_t kAgent[3] = {51, 153, 255};
}  // namespace

DodgeWorld::DodgeWorld(DodgeWorldConfig config) : config_(config), spec_({-1.0}, {1.0}) {
  if (config_.height < 16 || config_.width < 16) throw std::invalid_argument("DodgeWorld: frames must be at least 16x16");
  if (config_.max_steps == 0) throw std::invalid_argument("DodgeWorld: max_steps must be positive");
  if (config_.projectile_speed <= 0 && config_.n_monsters > 0 && config_.fire_prob > 0)
    throw std::invalid_argument("DodgeWorld: projectile_speed must be positive");
}

int DodgeWorld::discretize(double action) {
  if (action < -1.0 / 3.0) return -1;
  if (action > 1.0 / 3.0) return 1;
  return 0;
}

double DodgeWorld::monster_x(std::size_t k) const {
  if (config_.n_monsters == 1) return 0.5;
  const double margin = 0.5 * config_.monster_size;
  return margin + (1.0 - 2.0 * margin) * static_cast<double>(k) / static_cast<double>(config_.n_monsters - 1);
}

std::size_t DodgeWorld::traversal_steps() const {
  const double distance = (agent_y() - 0.5 * config_.agent_height) - (monster_y() + 0.5 * config_.projectile_size);
  return static_cast<std::size_t>(std::ceil(distance / config_.projectile_speed));
}

Observation DodgeWorld::do_reset(std::uint64_t seed) {
  rng_ = core::RngStream(seed, "dodgeworld");
  projectiles_.clear();
  armed_.assign(config_.n_monsters, 1);
  const double half_w = 0.5 * config_.agent_width;
  agent_x_ = config_.random_start ? rng_.uniform(half_w, 1.0 - half_w) : 0.5;
  return render();
}

StepResult DodgeWorld::do_step(std::span<const double> action) {
  const double half_w = 0.5 * config_.agent_width;
  agent_x_ = std::clamp(agent_x_ + config_.agent_speed * discretize(action[0]), half_w, 1.0 - half_w);

  for (auto& p : projectiles_) {
    p.x += p.vx;
    p.y += p.vy;
  }
  const double ps = 0.5 * config_.projectile_size;
  std::erase_if(projectiles_, [&](const Projectile& p) {
    const bool gone = p.y - ps > 1.0 || p.x + ps < 0.0 || p.x - ps > 1.0;
    if (gone) armed_[p.owner] = 1;
    return gone;
  });

  for (std::size_t k = 0; k < config_.n_monsters; ++k) {
    if (!armed_[k] || rng_.uniform() >= config_.fire_prob) continue;
    Projectile p{monster_x(k), monster_y(), 0.0, config_.projectile_speed, k};
    if (config_.aim_at_agent) {
      const double tx = agent_x_ - p.x, ty = agent_y() - p.y;
      const double norm = std::hypot(tx, ty);
      p.vx = config_.projectile_speed * tx / norm;
      p.vy = config_.projectile_speed * ty / norm;
    }
    projectiles_.push_back(p);
    armed_[k] = 0;
  }

  StepResult r;
  const double ay = agent_y(), ah = 0.5 * config_.agent_height;
  const bool hit = std::any_of(projectiles_.begin(), projectiles_.end(), [&](const Projectile& p) {
    return std::abs(p.x - agent_x_) < half_w + ps && std::abs(p.y - ay) < ah + ps;
  });
  r.reward = hit ? 0.0 : 1.0;
  r.done = hit;
  r.observation = render();
  return r;
}

Observation DodgeWorld::render() const {
  const std::size_t h = config_.height, w = config_.width;
  Observation obs(h, w);
  for (std::size_t row = 0; row < h; ++row)
    for (std::size_t col = 0; col < w; ++col) obs.set(row, col, kBackground);
  auto fill_box = [&](double cx, double cy, double hw, double hh, const std::uint8_t rgb[3]) {
    for (std::size_t row = 0; row < h; ++row) {
      const double py = (static_cast<double>(row) + 0.5) / static_cast<double>(h);
      if (std::abs(py - cy) > hh) continue;
      for (std::size_t col = 0; col < w; ++col) {
        const double px = (static_cast<double>(col) + 0.5) / static_cast<double>(w);
        if (std::abs(px - cx) <= hw) obs.set(row, col, rgb);
      }
    }
  };
  const double ms = 0.5 * config_.monster_size;
  for (std::size_t k = 0; k < config_.n_monsters; ++k) fill_box(monster_x(k), monster_y(), ms, ms, kMonster);
  fill_box(agent_x_, agent_y(), 0.5 * config_.agent_width, 0.5 * config_.agent_height, kAgent);
  const double ps = 0.5 * config_.projectile_size;
  for (const auto& p : projectiles_) fill_box(p.x, p.y, ps, ps, kProjectile);
  return obs;
}

}  // namespace wm::envs
