#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wm/core/rng.hpp"
#include "wm/mdn/latent.hpp"
#include "wm/mdn/mdnrnn.hpp"

namespace wm::dream {

struct DreamConfig {
  double temperature = 1.0;
  std::size_t max_steps = 2100;
  double done_threshold = 0.5;
  double step_reward = 1.0;      // paid for every step that does not end in death
  double terminal_reward = 0.0;  // paid on the death step
};

/// Posterior (mu, sigma) of recorded first frames; reset draws from these.
struct InitialPool {
  std::size_t n_z = 0;
  std::vector<std::vector<double>> mu;
  std::vector<std::vector<double>> sigma;

  static InitialPool from_latents(const mdn::LatentDataset& data);
  std::size_t size() const noexcept { return mu.size(); }
};

struct DreamStepResult {
  std::vector<double> z_next;
  mdn::RnnState rnn;
  double reward = 0;
  bool done = false;
  bool truncated = false;  // done only because of the step cap
};

/// M stepped in latent space behind a reset/step interface. Holds a reference
/// to the model (read-only) and its own recurrent state; use one per worker.
class DreamEnv {
 public:
  DreamEnv(const mdn::MdnRnn& model, InitialPool pool, DreamConfig config);

  const DreamConfig& config() const noexcept { return config_; }
  const mdn::MdnRnn& model() const noexcept { return model_; }
  void set_temperature(double tau);

  /// New z from a uniformly chosen pool entry, h = c = 0. Returns z.
  const std::vector<double>& reset(std::uint64_t seed);
  DreamStepResult step(std::span<const double> action);

  const std::vector<double>& z() const noexcept { return z_; }
  const mdn::RnnState& rnn_state() const noexcept { return state_; }
  std::size_t step_count() const noexcept { return steps_; }
  bool done() const noexcept { return done_; }
  /// Pool entry used by the last reset.
  std::size_t initial_index() const noexcept { return initial_; }

 private:
  const mdn::MdnRnn& model_;
  InitialPool pool_;
  DreamConfig config_;
  core::RngStream rng_{0};
  std::vector<double> z_;
  mdn::RnnState state_;
  std::size_t steps_ = 0;
  std::size_t initial_ = 0;
  bool done_ = true;
};

}  // namespace wm::dream
