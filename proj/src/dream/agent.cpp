#include "wm/dream/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "wm/core/csv.hpp"
#include "wm/core/parallel.hpp"

namespace wm::dream {

using controller::build_features;

EpisodeOutcome run_real_episode(const Agent& agent, envs::Environment& env, std::span<const double> params,
                                std::uint64_t seed) {
  const bool needs_memory = agent.mode != controller::FeatureMode::z_only;
  if (!agent.vae || (needs_memory && !agent.mdn)) throw std::invalid_argument("run_real_episode: agent is missing V or M");
  core::RngStream rng(seed, "agent");
  envs::Observation obs = env.reset(seed);
  mdn::RnnState state = needs_memory ? agent.mdn->initial_state() : mdn::RnnState{};
  EpisodeOutcome out;
  while (!env.done()) {
    const vae::LatentCode code = agent.vae->encode(obs, rng);
    const auto action = agent.controller.act(build_features(code.z, state, agent.mode), params);
    envs::StepResult r = env.step(action);
    out.total_return += r.reward;
    ++out.steps;
    if (needs_memory) agent.mdn->step(code.z, action, state);
    obs = std::move(r.observation);
  }
  return out;
}

EpisodeOutcome run_dream_episode(const controller::Controller& controller, controller::FeatureMode mode,
                                 DreamEnv& dream, std::span<const double> params, std::uint64_t seed) {
  dream.reset(seed);
  EpisodeOutcome out;
  while (!dream.done()) {
    const auto action = controller.act(build_features(dream.z(), dream.rnn_state(), mode), params);
    const DreamStepResult r = dream.step(action);
    out.total_return += r.reward;
    ++out.steps;
  }
  return out;
}

EpisodeOutcome run_random_episode(envs::Environment& env, std::uint64_t seed) {
  core::RngStream rng(seed, "random_agent");
  env.reset(seed);
  const envs::ActionSpec& spec = env.action_spec();
  std::vector<double> action(spec.dim());
  EpisodeOutcome out;
  while (!env.done()) {
    for (std::size_t k = 0; k < action.size(); ++k) action[k] = rng.uniform(spec.lo[k], spec.hi[k]);
    out.total_return += env.step(action).reward;
    ++out.steps;
  }
  return out;
}

double ReturnStats::mean() const {
  if (returns.empty()) return NAN;
  return std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(returns.size());
}

double ReturnStats::stddev() const {
  if (returns.empty()) return NAN;
  const double m = mean();
  double s = 0;
  for (double r : returns) s += (r - m) * (r - m);
  return std::sqrt(s / static_cast<double>(returns.size()));
}

double ReturnStats::standard_error() const {
  if (returns.size() < 2) return NAN;
  const double n = static_cast<double>(returns.size());
  return stddev() * std::sqrt(n / (n - 1.0)) / std::sqrt(n);
}

std::uint64_t evaluation_episode_seed(std::uint64_t base_seed, std::size_t i) {
  return core::mix_seed(core::mix_seed(base_seed, core::hash_name("evaluate")), i);
}

namespace {

template <class Run>
ReturnStats run_many(std::size_t n, std::uint64_t base_seed, std::size_t workers, Run&& run) {
  ReturnStats st;
  st.seeds.resize(n);
  st.returns.resize(n);
  st.steps.resize(n);
  for (std::size_t i = 0; i < n; ++i) st.seeds[i] = evaluation_episode_seed(base_seed, i);
  core::parallel_for(n, workers, [&](std::size_t i, std::size_t w) {
    const EpisodeOutcome o = run(st.seeds[i], w);
    st.returns[i] = o.total_return;
    st.steps[i] = o.steps;
  });
  return st;
}

std::vector<std::unique_ptr<envs::Environment>> make_envs(const envs::EnvFactory& make_env, std::size_t workers) {
  std::vector<std::unique_ptr<envs::Environment>> out;
  for (std::size_t w = 0; w < std::max<std::size_t>(workers, 1); ++w) out.push_back(make_env());
  return out;
}

}  // namespace

ReturnStats evaluate_real(const Agent& agent, const envs::EnvFactory& make_env, std::span<const double> params,
                          std::size_t n_rollouts, std::uint64_t base_seed, std::size_t workers) {
  auto envs = make_envs(make_env, workers);
  return run_many(n_rollouts, base_seed, envs.size(),
                  [&](std::uint64_t seed, std::size_t w) { return run_real_episode(agent, *envs[w], params, seed); });
}

ReturnStats evaluate_random(const envs::EnvFactory& make_env, std::size_t n_rollouts, std::uint64_t base_seed,
                            std::size_t workers) {
  auto envs = make_envs(make_env, workers);
  return run_many(n_rollouts, base_seed, envs.size(),
                  [&](std::uint64_t seed, std::size_t w) { return run_random_episode(*envs[w], seed); });
}

ReturnStats evaluate_dream(const controller::Controller& controller, controller::FeatureMode mode,
                           const mdn::MdnRnn& model, const InitialPool& pool, const DreamConfig& config,
                           std::span<const double> params, std::size_t n_rollouts, std::uint64_t base_seed,
                           std::size_t workers) {
  std::vector<DreamEnv> dreams;
  for (std::size_t w = 0; w < std::max<std::size_t>(workers, 1); ++w) dreams.emplace_back(model, pool, config);
  return run_many(n_rollouts, base_seed, dreams.size(), [&](std::uint64_t seed, std::size_t w) {
    return run_dream_episode(controller, mode, dreams[w], params, seed);
  });
}

void write_returns_csv(const std::filesystem::path& path, const ReturnStats& stats, const std::string& config_hash) {
  core::CsvWriter csv(path, {"rollout", "seed", "return", "steps"}, {{"config_hash", config_hash}});
  for (std::size_t i = 0; i < stats.returns.size(); ++i)
    csv.row({std::to_string(i), std::to_string(stats.seeds[i]), core::format_number(stats.returns[i]),
             std::to_string(stats.steps[i])});
}

void write_histogram_csv(const std::filesystem::path& path, const std::vector<double>& values, double lo, double hi,
                         std::size_t n_bins, const std::string& config_hash) {
  if (n_bins == 0 || !(hi > lo)) throw std::invalid_argument("write_histogram_csv: need n_bins > 0 and hi > lo");
  std::vector<std::size_t> counts(n_bins, 0);
  const double width = (hi - lo) / static_cast<double>(n_bins);
  for (double v : values) {
    const double pos = std::floor((v - lo) / width);
    const auto b = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(n_bins - 1)));
    ++counts[b];
  }
  core::CsvWriter csv(path, {"bin_lo", "bin_hi", "count"}, {{"config_hash", config_hash}});
  for (std::size_t b = 0; b < n_bins; ++b)
    csv.row({core::format_number(lo + width * static_cast<double>(b)),
             core::format_number(lo + width * static_cast<double>(b + 1)), std::to_string(counts[b])});
}

RealRolloutPool::RealRolloutPool(const Agent& agent, envs::EnvFactory make_env, std::size_t workers)
    : agent_(agent), envs_(make_envs(make_env, workers)), min_return_(envs_.front()->min_return()) {}

double RealRolloutPool::operator()(std::span<const double> params, std::uint64_t seed, std::size_t worker) {
  return run_real_episode(agent_, *envs_.at(worker), params, seed).total_return;
}

cmaes::RolloutFn RealRolloutPool::fn() {
  return [this](std::span<const double> p, std::uint64_t s, std::size_t w) { return (*this)(p, s, w); };
}

DreamRolloutPool::DreamRolloutPool(const controller::Controller& controller, controller::FeatureMode mode,
                                   const mdn::MdnRnn& model, const InitialPool& pool, const DreamConfig& config,
                                   std::size_t workers)
    : controller_(controller), mode_(mode) {
  for (std::size_t w = 0; w < std::max<std::size_t>(workers, 1); ++w) dreams_.emplace_back(model, pool, config);
}

double DreamRolloutPool::operator()(std::span<const double> params, std::uint64_t seed, std::size_t worker) {
  return run_dream_episode(controller_, mode_, dreams_.at(worker), params, seed).total_return;
}

cmaes::RolloutFn DreamRolloutPool::fn() {
  return [this](std::span<const double> p, std::uint64_t s, std::size_t w) { return (*this)(p, s, w); };
}

}  // namespace wm::dream
