#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wm/core/rng.hpp"

namespace wm::cmaes {

struct CmaConfig {
  std::size_t dim = 0;
  std::size_t popsize = 0;  // 0 = 4 + floor(3 ln dim)
  double sigma0 = 0.1;
  std::vector<double> mean0;  // empty = zeros
};

/// Full-covariance (mu/mu_w, lambda) CMA-ES with cumulative step-size
/// adaptation, using the standard tutorial constants. Maximizes fitness.
class CmaEs {
 public:
  explicit CmaEs(CmaConfig config);
  ~CmaEs();
  CmaEs(CmaEs&&) noexcept;
  CmaEs& operator=(CmaEs&&) noexcept;

  std::size_t dim() const noexcept;
  std::size_t popsize() const noexcept;
  std::size_t mu() const noexcept;
  std::size_t generation() const noexcept;
  double sigma() const noexcept;
  const std::vector<double>& mean() const noexcept;
  const std::vector<double>& weights() const noexcept;
  double mu_eff() const noexcept;
  /// Row-major copy of C.
  std::vector<double> covariance() const;
  std::vector<double> covariance_eigenvalues() const;
  /// Times the eigensolver found eigenvalues below 1e-12 and clamped them.
  std::size_t eigen_repairs() const noexcept;

  /// popsize() candidates mean + sigma B D eps, eps ~ N(0, I).
  std::vector<std::vector<double>> ask(core::RngStream& rng);
  /// Candidates need not come from the latest ask(); non-finite fitness ranks
  /// worst. Ties keep presentation order.
  void tell(const std::vector<std::vector<double>>& candidates, const std::vector<double>& fitness);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct CandidateSolution {
  std::vector<double> params;
  double fitness = 0;  // mean return over its rollouts
  std::vector<double> returns;
};

struct GenerationStats {
  std::size_t generation = 0;
  double best = 0;
  double worst = 0;
  double mean = 0;
  double sigma = 0;
  std::optional<double> eval_score;
};

/// What the periodic evaluation scores: the search distribution's mean (the
/// optimizer's current estimate, free of the selection bias of a noisy
/// generation winner) or that generation's best candidate.
enum class EvalTarget { mean, generation_best };

struct EvolveConfig {
  std::size_t generations = 0;
  std::size_t popsize = 64;
  std::size_t n_rollouts = 16;
  std::size_t eval_every = 25;
  std::size_t eval_rollouts = 1024;
  EvalTarget eval_target = EvalTarget::mean;
  double sigma0 = 0.1;
  /// Starting mean; empty = all zeros.
  std::vector<double> mean0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  /// Score given to a rollout that throws (the environment's minimum return).
  double crash_score = 0;
};

/// Returns one rollout's return, given the rollout seed and the worker
/// index (for per-worker environments).
using RolloutFn = std::function<double(std::span<const double> params, std::uint64_t rollout_seed, std::size_t worker)>;

struct EvolveResult {
  CandidateSolution best;
  std::vector<GenerationStats> history;
  std::vector<double> best_ever;  // running maximum of generation-best fitness
  std::size_t crashed_rollouts = 0;
  std::size_t eigen_repairs = 0;
};

struct EvolveOutputs {
  std::filesystem::path metrics_csv;  // generation,best,worst,mean,sigma,eval_score
  std::string config_hash;
};

/// Evolves dim parameters starting from config.mean0. Rollout r of candidate i
/// in generation g uses rollout_seed(seed, g, i, r); periodic evaluations of
/// config.eval_target reuse one fixed set of scenario seeds. With at least one evaluation, the
/// returned candidate is the evaluated one with the highest evaluation score;
/// otherwise the best candidate seen (the initial mean when generations = 0).
EvolveResult evolve(std::size_t dim, const RolloutFn& rollout, const EvolveConfig& config,
                    const EvolveOutputs& outputs = {});

std::uint64_t rollout_seed(std::uint64_t seed, std::size_t generation, std::size_t candidate, std::size_t rollout);
std::uint64_t evaluation_seed(std::uint64_t seed, std::size_t rollout);

/// Mean return of params over n scenario seeds derived from base_seed, in parallel.
std::vector<double> evaluate_params(std::span<const double> params, const RolloutFn& rollout, std::size_t n,
                                    const std::function<std::uint64_t(std::size_t)>& seed_of, std::size_t workers,
                                    double crash_score, std::size_t* crashes = nullptr);

}  // namespace wm::cmaes
