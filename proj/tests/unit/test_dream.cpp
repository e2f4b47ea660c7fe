#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "wm/dream/agent.hpp"
#include "wm/envs/factory.hpp"

using namespace wm;
using controller::FeatureMode;

namespace {

mdn::MdnRnn small_model(double done_bias, std::uint64_t seed = 1) {
  mdn::MdnRnn m({4, 1, 8, 3, true}, seed);
  for (auto* p : m.parameters())
    if (p->name == "head.b") p->value[p->value.size() - 1] = done_bias;
  return m;
}

dream::InitialPool small_pool() {
  dream::InitialPool pool;
  pool.n_z = 4;
  pool.mu = {{0, 1, 2, 3}, {1, -1, 0.5, 0}, {-2, 0, 0, 1}};
  pool.sigma = {{1, 0.5, 0.1, 1}, {0.2, 0.2, 0.2, 0.2}, {2, 1, 1, 0.5}};
  return pool;
}

controller::Controller dodge_controller(FeatureMode mode, std::size_t nz, std::size_t nh) {
  return controller::Controller({controller::feature_dim(mode, nz, nh), 1, 0, true}, envs::ActionSpec({-1}, {1}));
}

}  // namespace

TEST_CASE("a model that always predicts death ends every dream after one step with no reward") {
  const auto m = small_model(50.0);
  const auto c = dodge_controller(FeatureMode::z_h, 4, 8);
  std::vector<double> params(c.param_count(), 0.1);
  for (std::uint64_t s = 0; s < 20; ++s) {
    dream::DreamEnv env(m, small_pool(), {});
    const auto o = dream::run_dream_episode(c, FeatureMode::z_h, env, params, s);
    CHECK(o.steps == 1);
    CHECK(o.total_return == 0.0);
  }
}

TEST_CASE("the step cap bounds dream returns") {
  const auto m = small_model(-50.0);
  const auto c = dodge_controller(FeatureMode::z_h, 4, 8);
  std::vector<double> params(c.param_count(), 0.0);
  dream::DreamEnv env(m, small_pool(), {});
  const auto o = dream::run_dream_episode(c, FeatureMode::z_h, env, params, 3);
  CHECK(o.steps == 2100);
  CHECK(o.total_return == 2100.0);
  dream::DreamConfig cfg;
  cfg.max_steps = 37;
  dream::DreamEnv short_env(m, small_pool(), cfg);
  short_env.reset(1);
  dream::DreamStepResult last;
  while (!short_env.done()) last = short_env.step(std::vector<double>{0.0});
  CHECK(short_env.step_count() == 37);
  CHECK(last.truncated);
  CHECK(last.reward == 1.0);
}

TEST_CASE("dream reset and done latching") {
  const auto m = small_model(50.0);
  dream::DreamEnv env(m, small_pool(), {});
  const auto z1 = env.reset(11);
  const auto z2 = env.reset(11);
  CHECK(z1 == z2);
  CHECK(env.rnn_state() == m.initial_state());
  CHECK_FALSE(env.done());
  const auto r = env.step(std::vector<double>{0.0});
  CHECK(r.done);
  CHECK_FALSE(r.truncated);
  CHECK(r.reward == 0.0);
  CHECK_THROWS_AS(env.step(std::vector<double>{0.0}), std::logic_error);
  env.reset(12);
  CHECK_FALSE(env.done());
  CHECK(env.step_count() == 0);
  CHECK_THROWS(env.set_temperature(0.0));
  CHECK_THROWS(dream::DreamEnv(m, dream::InitialPool{4, {}, {}}, {}));
}

TEST_CASE("initial z matches the pool mixture statistics") {
  const auto m = small_model(0.0);
  const auto pool = small_pool();
  dream::DreamEnv env(m, pool, {});
  const std::size_t n = 10000;
  std::vector<double> sum(4, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& z = env.reset(i);
    for (std::size_t d = 0; d < 4; ++d) sum[d] += z[d];
  }
  for (std::size_t d = 0; d < 4; ++d) {
    // Uniform mixture of N(mu_k, sigma_k^2): mean of mus, variance E[sigma^2] + Var(mu).
    double mean = 0, s2 = 0, m2 = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      mean += pool.mu[k][d] / 3;
      s2 += pool.sigma[k][d] * pool.sigma[k][d] / 3;
      m2 += pool.mu[k][d] * pool.mu[k][d] / 3;
    }
    const double var = s2 + m2 - mean * mean;
    const double se = std::sqrt(var / n);
    INFO("dim " << d);
    CHECK(std::abs(sum[d] / n - mean) < 3 * se);
  }
}

TEST_CASE("dream rollouts are deterministic given model, seed, actions and temperature") {
  const auto m = small_model(-2.0);
  auto run = [&](double tau) {
    dream::DreamConfig cfg;
    cfg.temperature = tau;
    dream::DreamEnv env(m, small_pool(), cfg);
    env.reset(5);
    std::vector<std::vector<double>> zs;
    for (int t = 0; t < 50 && !env.done(); ++t) zs.push_back(env.step(std::vector<double>{std::sin(t)}).z_next);
    return zs;
  };
  CHECK(run(1.0) == run(1.0));
  CHECK(run(1.0) != run(0.5));
}

TEST_CASE("the same controller runs in the dream and the real environment") {
  envs::EnvConfig ec;
  ec.kind = "dodgeworld";
  ec.dodge.height = ec.dodge.width = 16;
  vae::Vae v({4, 16, 16, {4, 8}, {}, {}, 1.0}, 3);
  mdn::MdnRnn m({4, 1, 8, 3, true}, 4);
  const auto c = dodge_controller(FeatureMode::z_h, 4, 8);
  core::RngStream r(2);
  std::vector<double> params(c.param_count());
  for (auto& p : params) p = r.normal();
  dream::Agent agent{&v, &m, c, FeatureMode::z_h};
  auto env = envs::make_environment(ec);
  const auto real = dream::run_real_episode(agent, *env, params, 9);
  CHECK(real.steps > 0);
  dream::DreamEnv d(m, small_pool(), {});
  const auto dreamt = dream::run_dream_episode(c, FeatureMode::z_h, d, params, 9);
  CHECK(dreamt.steps > 0);
  CHECK(dreamt.steps <= 2100);
}

TEST_CASE("zero-weight controller matches the frozen agent baseline") {
  envs::EnvConfig ec;
  ec.kind = "dodgeworld";
  ec.dodge.height = ec.dodge.width = 16;
  vae::Vae v({4, 16, 16, {4, 8}, {}, {}, 1.0}, 3);
  mdn::MdnRnn m({4, 1, 8, 3, true}, 4);
  const auto c = dodge_controller(FeatureMode::z_h, 4, 8);
  dream::Agent agent{&v, &m, c, FeatureMode::z_h};
  const std::vector<double> zero(c.param_count(), 0.0);
  const auto factory = envs::environment_factory(ec);
  const auto stats = dream::evaluate_real(agent, factory, zero, 20, 77, 1);
  // Oracle: step the environment directly with the "stay" action.
  auto env = factory();
  for (std::size_t i = 0; i < 20; ++i) {
    env->reset(stats.seeds[i]);
    double ret = 0;
    while (!env->done()) ret += env->step(std::vector<double>{0.0}).reward;
    CHECK(stats.returns[i] == ret);
  }
}

TEST_CASE("evaluations are independent of the worker count") {
  envs::EnvConfig ec;
  ec.kind = "dodgeworld";
  ec.dodge.height = ec.dodge.width = 16;
  const auto factory = envs::environment_factory(ec);
  const auto a = dream::evaluate_random(factory, 12, 5, 1);
  const auto b = dream::evaluate_random(factory, 12, 5, 3);
  CHECK(a.returns == b.returns);
  CHECK(a.seeds == b.seeds);
  CHECK(a.mean() == b.mean());
  CHECK(a.standard_error() > 0);
  const auto m = small_model(-1.0);
  const auto c = dodge_controller(FeatureMode::z_h, 4, 8);
  std::vector<double> p(c.param_count(), 0.05);
  const auto d1 = dream::evaluate_dream(c, FeatureMode::z_h, m, small_pool(), {}, p, 10, 1, 1);
  const auto d2 = dream::evaluate_dream(c, FeatureMode::z_h, m, small_pool(), {}, p, 10, 1, 4);
  CHECK(d1.returns == d2.returns);
}

TEST_CASE("return statistics and histogram file") {
  dream::ReturnStats st;
  st.returns = {1, 2, 3, 4};
  st.seeds = {1, 2, 3, 4};
  st.steps = {1, 2, 3, 4};
  CHECK(st.mean() == doctest::Approx(2.5));
  CHECK(st.stddev() == doctest::Approx(std::sqrt(1.25)));
  CHECK(st.standard_error() == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
  const auto dir = std::filesystem::temp_directory_path() / "wm_test_dream";
  std::filesystem::remove_all(dir);
  dream::write_histogram_csv(dir / "h.csv", {0, 1, 1, 9.99, 10, 15}, 0, 10, 5, "cafe");
  std::ifstream in(dir / "h.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "config_hash,bin_lo,bin_hi,count");
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0] == "cafe,0,2,3");
  CHECK(rows[4] == "cafe,8,10,3");  // out-of-range values land in the edge bins
  std::filesystem::remove_all(dir);
}

TEST_CASE("DodgeWorld evolution improves best fitness within 10 generations in at least 9 of 10 seeds") {
  envs::EnvConfig ec;
  ec.kind = "dodgeworld";
  ec.dodge.height = ec.dodge.width = 16;
  vae::Vae v({4, 16, 16, {4, 8}, {}, {}, 1.0}, 3);
  mdn::MdnRnn m({4, 1, 8, 3, true}, 4);
  dream::Agent agent{&v, &m, dodge_controller(FeatureMode::z_h, 4, 8), FeatureMode::z_h};
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    dream::RealRolloutPool pool(agent, envs::environment_factory(ec), 1);
    cmaes::EvolveConfig cfg;
    cfg.generations = 10;
    cfg.popsize = 16;
    cfg.n_rollouts = 4;
    cfg.eval_every = 0;
    cfg.sigma0 = 0.5;
    cfg.seed = seed;
    const auto res = cmaes::evolve(agent.param_count(), pool.fn(), cfg);
    if (res.best_ever.back() > res.history.front().best) ++improved;
  }
  CHECK(improved >= 9);
}
