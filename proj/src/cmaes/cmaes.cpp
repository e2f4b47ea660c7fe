#include "wm/cmaes/cmaes.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "wm/core/csv.hpp"
#include "wm/core/parallel.hpp"

namespace wm::cmaes {

namespace {
constexpr double kMinEigenvalue = 1e-12;
}

struct CmaEs::Impl {
  std::size_t n = 0, lambda = 0, mu = 0;
  std::vector<double> weights;
  double mu_eff = 0, c_sigma = 0, d_sigma = 0, c_c = 0, c_1 = 0, c_mu = 0, chi_n = 0;

  std::vector<double> mean;
  double sigma = 0;
  Eigen::VectorXd p_sigma, p_c;
  Eigen::MatrixXd C, B;
  Eigen::VectorXd D;  // sqrt of eigenvalues
  std::size_t generation = 0;
  std::size_t eigen_generation = 0;
  std::size_t repairs = 0;

  void decompose() {
    C = 0.5 * (C + C.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(C);
    Eigen::VectorXd ev = solver.eigenvalues();
    B = solver.eigenvectors();
    if (solver.info() != Eigen::Success || !ev.allFinite()) throw std::runtime_error("CmaEs: eigendecomposition failed");
    if (ev.minCoeff() < kMinEigenvalue) {
      ++repairs;
      spdlog::warn("cmaes: covariance not positive definite (min eigenvalue {}), clamping at {}", ev.minCoeff(),
                   kMinEigenvalue);
      ev = ev.cwiseMax(kMinEigenvalue);
      C = B * ev.asDiagonal() * B.transpose();
      C = 0.5 * (C + C.transpose());
    }
    D = ev.cwiseSqrt();
    eigen_generation = generation;
  }

  bool decomposition_stale() const {
    const double gap = 1.0 / ((c_1 + c_mu) * static_cast<double>(n) * 10.0);
    return static_cast<double>(generation - eigen_generation) > gap;
  }
};

CmaEs::CmaEs(CmaConfig config) : impl_(std::make_unique<Impl>()) {
  auto& s = *impl_;
  if (config.dim == 0) throw std::invalid_argument("CmaEs: dim must be positive");
  if (!(config.sigma0 > 0) || !std::isfinite(config.sigma0)) throw std::invalid_argument("CmaEs: sigma0 must be positive");
  s.n = config.dim;
  const double n = static_cast<double>(s.n);
  s.lambda = config.popsize ? config.popsize : 4 + static_cast<std::size_t>(std::floor(3.0 * std::log(n)));
  if (s.lambda < 2) throw std::invalid_argument("CmaEs: population size must be at least 2");
  s.mu = s.lambda / 2;
  s.weights.resize(s.mu);
  for (std::size_t i = 0; i < s.mu; ++i)
    s.weights[i] = std::log((static_cast<double>(s.lambda) + 1.0) / 2.0) - std::log(static_cast<double>(i + 1));
  const double wsum = std::accumulate(s.weights.begin(), s.weights.end(), 0.0);
  for (auto& w : s.weights) w /= wsum;
  double w2 = 0;
  for (double w : s.weights) w2 += w * w;
  s.mu_eff = 1.0 / w2;

  s.c_sigma = (s.mu_eff + 2.0) / (n + s.mu_eff + 5.0);
  s.d_sigma = 1.0 + 2.0 * std::max(0.0, std::sqrt((s.mu_eff - 1.0) / (n + 1.0)) - 1.0) + s.c_sigma;
  s.c_c = (4.0 + s.mu_eff / n) / (n + 4.0 + 2.0 * s.mu_eff / n);
  s.c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + s.mu_eff);
  s.c_mu = std::min(1.0 - s.c_1, 2.0 * (s.mu_eff - 2.0 + 1.0 / s.mu_eff) / ((n + 2.0) * (n + 2.0) + s.mu_eff));
  s.chi_n = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

  if (config.mean0.empty()) config.mean0.assign(s.n, 0.0);
  if (config.mean0.size() != s.n) throw std::invalid_argument("CmaEs: mean0 has the wrong length");
  s.mean = config.mean0;
  s.sigma = config.sigma0;
  s.p_sigma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.n));
  s.p_c = s.p_sigma;
  s.C = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(s.n));
  s.B = s.C;
  s.D = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(s.n));
}

CmaEs::~CmaEs() = default;
CmaEs::CmaEs(CmaEs&&) noexcept = default;
CmaEs& CmaEs::operator=(CmaEs&&) noexcept = default;

std::size_t CmaEs::dim() const noexcept { return impl_->n; }
std::size_t CmaEs::popsize() const noexcept { return impl_->lambda; }
std::size_t CmaEs::mu() const noexcept { return impl_->mu; }
std::size_t CmaEs::generation() const noexcept { return impl_->generation; }
double CmaEs::sigma() const noexcept { return impl_->sigma; }
const std::vector<double>& CmaEs::mean() const noexcept { return impl_->mean; }
const std::vector<double>& CmaEs::weights() const noexcept { return impl_->weights; }
double CmaEs::mu_eff() const noexcept { return impl_->mu_eff; }
std::size_t CmaEs::eigen_repairs() const noexcept { return impl_->repairs; }

std::vector<double> CmaEs::covariance() const {
  const auto n = static_cast<Eigen::Index>(impl_->n);
  std::vector<double> out(impl_->n * impl_->n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out[static_cast<std::size_t>(i * n + j)] = impl_->C(i, j);
  return out;
}

std::vector<double> CmaEs::covariance_eigenvalues() const {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(impl_->C, Eigen::EigenvaluesOnly);
  const auto& ev = solver.eigenvalues();
  return {ev.data(), ev.data() + ev.size()};
}

std::vector<std::vector<double>> CmaEs::ask(core::RngStream& rng) {
  auto& s = *impl_;
  if (s.decomposition_stale()) s.decompose();
  const auto n = static_cast<Eigen::Index>(s.n);
  std::vector<std::vector<double>> out(s.lambda, std::vector<double>(s.n));
  Eigen::VectorXd eps(n);
  for (auto& x : out) {
    for (Eigen::Index j = 0; j < n; ++j) eps[j] = rng.normal();
    const Eigen::VectorXd y = s.B * s.D.cwiseProduct(eps);
    for (Eigen::Index j = 0; j < n; ++j) x[static_cast<std::size_t>(j)] = s.mean[static_cast<std::size_t>(j)] + s.sigma * y[j];
  }
  return out;
}

void CmaEs::tell(const std::vector<std::vector<double>>& candidates, const std::vector<double>& fitness) {
  auto& s = *impl_;
  if (candidates.size() != fitness.size()) throw std::invalid_argument("CmaEs::tell: candidate and fitness counts differ");
  if (candidates.size() != s.lambda) throw std::invalid_argument("CmaEs::tell: expected one fitness per population member");
  for (const auto& c : candidates)
    if (c.size() != s.n) throw std::invalid_argument("CmaEs::tell: candidate has the wrong dimension");

  const std::size_t nan_count =
      static_cast<std::size_t>(std::count_if(fitness.begin(), fitness.end(), [](double f) { return std::isnan(f); }));
  if (nan_count) spdlog::warn("cmaes: {} NaN fitness value(s) ranked worst", nan_count);

  // Best first; NaN after everything else.
  std::vector<std::size_t> order(s.lambda);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double fa = fitness[a], fb = fitness[b];
    if (std::isnan(fb)) return !std::isnan(fa);
    if (std::isnan(fa)) return false;
    return fa > fb;
  });

  const auto n = static_cast<Eigen::Index>(s.n);
  Eigen::Map<const Eigen::VectorXd> m_old(s.mean.data(), n);
  Eigen::MatrixXd Y(n, static_cast<Eigen::Index>(s.mu));
  for (std::size_t r = 0; r < s.mu; ++r) {
    Eigen::Map<const Eigen::VectorXd> x(candidates[order[r]].data(), n);
    Y.col(static_cast<Eigen::Index>(r)) = (x - m_old) / s.sigma;
  }
  Eigen::Map<const Eigen::VectorXd> w(s.weights.data(), static_cast<Eigen::Index>(s.mu));
  const Eigen::VectorXd y_w = Y * w;
  const Eigen::VectorXd m_new = m_old + s.sigma * y_w;

  const Eigen::VectorXd c_inv_half_yw = s.B * (s.B.transpose() * y_w).cwiseQuotient(s.D);
  s.p_sigma = (1.0 - s.c_sigma) * s.p_sigma + std::sqrt(s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff) * c_inv_half_yw;
  const double g1 = static_cast<double>(s.generation + 1);
  const double ps_norm = s.p_sigma.norm();
  const bool h_sigma = ps_norm / std::sqrt(1.0 - std::pow(1.0 - s.c_sigma, 2.0 * g1)) <
                       (1.4 + 2.0 / (static_cast<double>(s.n) + 1.0)) * s.chi_n;
  s.p_c = (1.0 - s.c_c) * s.p_c;
  if (h_sigma) s.p_c += std::sqrt(s.c_c * (2.0 - s.c_c) * s.mu_eff) * y_w;
  const double delta = h_sigma ? 0.0 : s.c_c * (2.0 - s.c_c);

  const Eigen::MatrixXd rank_mu = Y * w.asDiagonal() * Y.transpose();
  s.C = (1.0 - s.c_1 - s.c_mu) * s.C + s.c_1 * (s.p_c * s.p_c.transpose() + delta * s.C) + s.c_mu * rank_mu;
  s.C = 0.5 * (s.C + s.C.transpose());

  s.sigma *= std::exp((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0));
  if (!std::isfinite(s.sigma) || !(s.sigma > 0)) throw std::runtime_error("CmaEs: step size diverged");
  for (Eigen::Index j = 0; j < n; ++j) s.mean[static_cast<std::size_t>(j)] = m_new[j];
  ++s.generation;
  if (s.decomposition_stale()) s.decompose();
}

std::uint64_t rollout_seed(std::uint64_t seed, std::size_t generation, std::size_t candidate, std::size_t rollout) {
  std::uint64_t s = core::mix_seed(seed, core::hash_name("rollout"));
  s = core::mix_seed(s, generation);
  s = core::mix_seed(s, candidate);
  return core::mix_seed(s, rollout);
}

std::uint64_t evaluation_seed(std::uint64_t seed, std::size_t rollout) {
  return core::mix_seed(core::mix_seed(seed, core::hash_name("evaluation")), rollout);
}

namespace {

double run_one(const RolloutFn& rollout, std::span<const double> params, std::uint64_t seed, std::size_t worker,
               double crash_score, std::uint8_t& crashed) {
  try {
    return rollout(params, seed, worker);
  } catch (const std::exception& e) {
    spdlog::warn("cmaes: rollout with seed {} crashed ({}); scored {}", seed, e.what(), crash_score);
    crashed = 1;
    return crash_score;
  }
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> evaluate_params(std::span<const double> params, const RolloutFn& rollout, std::size_t n,
                                    const std::function<std::uint64_t(std::size_t)>& seed_of, std::size_t workers,
                                    double crash_score, std::size_t* crashes) {
  std::vector<double> out(n);
  std::vector<std::uint8_t> crashed(n, 0);
  core::parallel_for(n, workers, [&](std::size_t r, std::size_t worker) {
    out[r] = run_one(rollout, params, seed_of(r), worker, crash_score, crashed[r]);
  });
  if (crashes) *crashes += static_cast<std::size_t>(std::count(crashed.begin(), crashed.end(), 1));
  return out;
}

EvolveResult evolve(std::size_t dim, const RolloutFn& rollout, const EvolveConfig& config, const EvolveOutputs& outputs) {
  if (config.n_rollouts == 0) throw std::invalid_argument("evolve: n_rollouts must be positive");
  if (config.popsize < 2) throw std::invalid_argument("evolve: popsize must be at least 2");
  const std::size_t workers = std::max<std::size_t>(config.workers, 1);

  core::CsvWriter csv;
  if (!outputs.metrics_csv.empty())
    csv = core::CsvWriter(outputs.metrics_csv, {"generation", "best", "worst", "mean", "sigma", "eval_score"},
                          {{"config_hash", outputs.config_hash}});

  EvolveResult result;
  CmaEs es(CmaConfig{dim, config.popsize, config.sigma0, config.mean0});
  core::RngStream rng(config.seed, "cmaes");
  const auto eval_seed = [&](std::size_t r) { return evaluation_seed(config.seed, r); };

  if (config.generations == 0) {
    result.best.params = es.mean();
    result.best.returns = evaluate_params(result.best.params, rollout, config.n_rollouts, eval_seed, workers,
                                          config.crash_score, &result.crashed_rollouts);
    result.best.fitness = mean_of(result.best.returns);
    return result;
  }

  const std::size_t lambda = es.popsize(), R = config.n_rollouts;
  CandidateSolution best_ever;
  best_ever.fitness = -std::numeric_limits<double>::infinity();
  std::optional<CandidateSolution> best_evaluated;

  for (std::size_t g = 0; g < config.generations; ++g) {
    const auto candidates = es.ask(rng);
    std::vector<double> returns(lambda * R);
    std::vector<std::uint8_t> crashed(lambda * R, 0);
    core::parallel_for(lambda * R, workers, [&](std::size_t task, std::size_t worker) {
      const std::size_t i = task / R, r = task % R;
      returns[task] = run_one(rollout, candidates[i], rollout_seed(config.seed, g, i, r), worker, config.crash_score, crashed[task]);
    });
    result.crashed_rollouts += static_cast<std::size_t>(std::count(crashed.begin(), crashed.end(), 1));

    std::vector<double> fitness(lambda);
    for (std::size_t i = 0; i < lambda; ++i) {
      double sum = 0;
      for (std::size_t r = 0; r < R; ++r) sum += returns[i * R + r];
      fitness[i] = sum / static_cast<double>(R);
    }

    GenerationStats st;
    st.generation = g;
    st.best = -std::numeric_limits<double>::infinity();
    st.worst = std::numeric_limits<double>::infinity();
    std::size_t best_i = 0, finite = 0;
    double total = 0;
    for (std::size_t i = 0; i < lambda; ++i) {
      if (std::isnan(fitness[i])) continue;
      ++finite;
      total += fitness[i];
      if (fitness[i] > st.best) {
        st.best = fitness[i];
        best_i = i;
      }
      st.worst = std::min(st.worst, fitness[i]);
    }
    st.mean = finite ? total / static_cast<double>(finite) : std::numeric_limits<double>::quiet_NaN();
    if (finite == 0) st.best = st.worst = st.mean;

    es.tell(candidates, fitness);
    st.sigma = es.sigma();

    if (finite && st.best > best_ever.fitness) {
      best_ever.params = candidates[best_i];
      best_ever.fitness = st.best;
      best_ever.returns.assign(returns.begin() + static_cast<std::ptrdiff_t>(best_i * R),
                               returns.begin() + static_cast<std::ptrdiff_t>((best_i + 1) * R));
    }
    result.best_ever.push_back(best_ever.fitness);

    if (config.eval_every > 0 && (g + 1) % config.eval_every == 0 && finite) {
      CandidateSolution c;
      c.params = config.eval_target == EvalTarget::mean ? es.mean() : candidates[best_i];
      c.returns = evaluate_params(c.params, rollout, config.eval_rollouts, eval_seed, workers, config.crash_score,
                                  &result.crashed_rollouts);
      c.fitness = mean_of(c.returns);
      st.eval_score = c.fitness;
      if (!best_evaluated || c.fitness > best_evaluated->fitness) best_evaluated = std::move(c);
    }

    if (csv.is_open())
      csv.row({std::to_string(g), core::format_number(st.best), core::format_number(st.worst),
               core::format_number(st.mean), core::format_number(st.sigma),
               st.eval_score ? core::format_number(*st.eval_score) : std::string()});
    result.history.push_back(st);
  }

  result.best = best_evaluated ? std::move(*best_evaluated) : std::move(best_ever);
  result.eigen_repairs = es.eigen_repairs();
  return result;
}

}  // namespace wm::cmaes
