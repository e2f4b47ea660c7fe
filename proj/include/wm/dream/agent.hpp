#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wm/cmaes/cmaes.hpp"
#include "wm/controller/controller.hpp"
#include "wm/dream/dream_env.hpp"
#include "wm/envs/episode.hpp"
#include "wm/vae/vae.hpp"

namespace wm::dream {

/// V, M and C wired together. The models are borrowed, not owned; M may be
/// null for the z-only controller.
struct Agent {
  const vae::Vae* vae = nullptr;
  const mdn::MdnRnn* mdn = nullptr;
  controller::Controller controller;
  controller::FeatureMode mode = controller::FeatureMode::z_h;

  std::size_t param_count() const { return controller.param_count(); }
};

struct EpisodeOutcome {
  double total_return = 0;
  std::size_t steps = 0;
};

/// One real episode: each frame is encoded by V with a fresh z sample, C acts
/// on [z, h(, c)], then M advances its state on (z, a).
EpisodeOutcome run_real_episode(const Agent& agent, envs::Environment& env, std::span<const double> params,
                                std::uint64_t seed);

/// The same loop inside the dream; z comes from M's own samples.
EpisodeOutcome run_dream_episode(const controller::Controller& controller, controller::FeatureMode mode,
                                 DreamEnv& dream, std::span<const double> params, std::uint64_t seed);

/// Uniform random actions per bound, as in data collection.
EpisodeOutcome run_random_episode(envs::Environment& env, std::uint64_t seed);

struct ReturnStats {
  std::vector<std::uint64_t> seeds;
  std::vector<double> returns;
  std::vector<std::size_t> steps;

  double mean() const;
  double stddev() const;  // population
  double standard_error() const;
};

/// Seed of evaluation rollout i (distinct from collection and training seeds).
std::uint64_t evaluation_episode_seed(std::uint64_t base_seed, std::size_t i);

/// n consecutive real rollouts of (agent, params). One environment per worker.
ReturnStats evaluate_real(const Agent& agent, const envs::EnvFactory& make_env, std::span<const double> params,
                          std::size_t n_rollouts, std::uint64_t base_seed, std::size_t workers);
ReturnStats evaluate_random(const envs::EnvFactory& make_env, std::size_t n_rollouts, std::uint64_t base_seed,
                            std::size_t workers);
ReturnStats evaluate_dream(const controller::Controller& controller, controller::FeatureMode mode,
                           const mdn::MdnRnn& model, const InitialPool& pool, const DreamConfig& config,
                           std::span<const double> params, std::size_t n_rollouts, std::uint64_t base_seed,
                           std::size_t workers);

/// Alias kept for the transfer experiment: a dream-trained controller run in the real environment.
inline ReturnStats transfer_evaluate(const Agent& agent, const envs::EnvFactory& make_env,
                                     std::span<const double> params, std::size_t n_rollouts, std::uint64_t base_seed,
                                     std::size_t workers) {
  return evaluate_real(agent, make_env, params, n_rollouts, base_seed, workers);
}

/// rollout,seed,return,steps per episode.
void write_returns_csv(const std::filesystem::path& path, const ReturnStats& stats, const std::string& config_hash);
/// bin_lo,bin_hi,count with n_bins equal-width bins over [lo, hi].
void write_histogram_csv(const std::filesystem::path& path, const std::vector<double>& values, double lo, double hi,
                         std::size_t n_bins, const std::string& config_hash);

/// Rollout functions for cmaes::evolve, with one environment or dream per worker.
class RealRolloutPool {
 public:
  RealRolloutPool(const Agent& agent, envs::EnvFactory make_env, std::size_t workers);
  double operator()(std::span<const double> params, std::uint64_t seed, std::size_t worker);
  cmaes::RolloutFn fn();
  double min_return() const { return min_return_; }

 private:
  const Agent& agent_;
  std::vector<std::unique_ptr<envs::Environment>> envs_;
  double min_return_ = 0;
};

class DreamRolloutPool {
 public:
  DreamRolloutPool(const controller::Controller& controller, controller::FeatureMode mode, const mdn::MdnRnn& model,
                   const InitialPool& pool, const DreamConfig& config, std::size_t workers);
  double operator()(std::span<const double> params, std::uint64_t seed, std::size_t worker);
  cmaes::RolloutFn fn();

 private:
  const controller::Controller& controller_;
  controller::FeatureMode mode_;
  std::vector<DreamEnv> dreams_;
};

}  // namespace wm::dream
