#include "wm/dream/dream_env.hpp"

#include <cmath>
#include <stdexcept>

namespace wm::dream {

InitialPool InitialPool::from_latents(const mdn::LatentDataset& data) {
  InitialPool pool;
  pool.n_z = data.n_z;
  for (const auto& e : data.episodes) {
    if (e.mu.size() < data.n_z) continue;
    pool.mu.emplace_back(e.mu.begin(), e.mu.begin() + static_cast<std::ptrdiff_t>(data.n_z));
    pool.sigma.emplace_back(e.sigma.begin(), e.sigma.begin() + static_cast<std::ptrdiff_t>(data.n_z));
  }
  return pool;
}

DreamEnv::DreamEnv(const mdn::MdnRnn& model, InitialPool pool, DreamConfig config)
    : model_(model), pool_(std::move(pool)), config_(config) {
  if (pool_.size() == 0) throw std::invalid_argument("DreamEnv: the initial-frame pool is empty");
  if (pool_.n_z != model_.config().n_z) throw std::invalid_argument("DreamEnv: pool n_z does not match the model");
  if (config_.max_steps == 0) throw std::invalid_argument("DreamEnv: max_steps must be positive");
  set_temperature(config_.temperature);
}

void DreamEnv::set_temperature(double tau) {
  if (!(tau > 0) || !std::isfinite(tau)) throw std::invalid_argument("DreamEnv: temperature must be positive");
  config_.temperature = tau;
}

const std::vector<double>& DreamEnv::reset(std::uint64_t seed) {
  rng_ = core::RngStream(seed, "dream");
  initial_ = static_cast<std::size_t>(rng_.below(pool_.size()));
  z_.resize(pool_.n_z);
  for (std::size_t d = 0; d < pool_.n_z; ++d) z_[d] = pool_.mu[initial_][d] + pool_.sigma[initial_][d] * rng_.normal();
  state_ = model_.initial_state();
  steps_ = 0;
  done_ = false;
  return z_;
}

DreamStepResult DreamEnv::step(std::span<const double> action) {
  if (done_) throw std::logic_error("DreamEnv: step after done; call reset first");
  if (action.size() != model_.config().action_dim) throw std::invalid_argument("DreamEnv: action has the wrong size");
  const mdn::MdnOutput out = model_.step(z_, action, state_);
  z_ = mdn::sample_z(out, config_.temperature, rng_);
  ++steps_;
  // Without a done head only the step cap ends the dream (visualization use).
  const bool death = model_.config().predict_done && mdn::predict_done(out, config_.done_threshold);
  DreamStepResult r;
  r.done = death || steps_ >= config_.max_steps;
  r.truncated = r.done && !death;
  r.reward = death ? config_.terminal_reward : config_.step_reward;
  r.z_next = z_;
  r.rnn = state_;
  done_ = r.done;
  return r;
}

}  // namespace wm::dream
