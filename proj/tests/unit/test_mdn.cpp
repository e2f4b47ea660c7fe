#include <cmath>
#include <filesystem>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "gradcheck.hpp"
#include "wm/core/io.hpp"
#include "wm/core/ops.hpp"
#include "wm/mdn/train.hpp"

using namespace wm;
using core::Array;
using core::Tape;
using core::Var;
using mdn::MdnOutput;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
const std::vector<double> kTaus{0.1, 0.5, 1.0, 1.15, 1.3};

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "wm_test_mdn";
  std::filesystem::create_directories(dir);
  return dir / name;
}

MdnOutput random_output(std::size_t nz, std::size_t kk, core::RngStream& rng, double logit_scale = 2.0) {
  MdnOutput o;
  o.n_z = nz;
  o.n_mixtures = kk;
  for (std::size_t i = 0; i < nz * kk; ++i) {
    o.logits.push_back(logit_scale * rng.normal());
    o.mu.push_back(rng.normal());
    o.log_sigma.push_back(0.5 * rng.normal());
  }
  return o;
}

mdn::MdnRnnConfig tiny_config() {
  mdn::MdnRnnConfig c;
  c.n_z = 4;
  c.n_mixtures = 3;
  c.n_hidden = 5;
  c.action_dim = 2;
  c.predict_done = true;
  return c;
}

// Differential entropy of 0.5 N(-m, s^2) + 0.5 N(m, s^2) by the midpoint rule.
double two_mixture_entropy(double m, double s) {
  auto pdf = [&](double x) {
    auto g = [&](double c) { return std::exp(-0.5 * (x - c) * (x - c) / (s * s)) / (s * std::sqrt(2 * std::numbers::pi)); };
    return 0.5 * g(-m) + 0.5 * g(m);
  };
  const double lo = -m - 12 * s, hi = m + 12 * s;
  const std::size_t n = 200000;
  const double dx = (hi - lo) / n;
  double h = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pdf(lo + (i + 0.5) * dx);
    if (p > 0) h -= p * std::log(p) * dx;
  }
  return h;
}

}  // namespace

TEST_CASE("parameter counts of the full-size memory models") {
  mdn::MdnRnnConfig car;  // n_z 32, 3 actions, 256 hidden, 5 mixtures, no done head
  CHECK(mdn::MdnRnn(car, 0).parameter_count() == 422368);
  mdn::MdnRnnConfig doom;
  doom.n_z = 64;
  doom.action_dim = 1;
  doom.n_hidden = 512;
  doom.predict_done = true;
  const std::size_t ours = mdn::MdnRnn(doom, 0).parameter_count();
  // LSTM 4*512*(65+512+1) + head 512*961+961.
  CHECK(ours == 4 * 512 * (65 + 512 + 1) + 512 * 961 + 961);
  CHECK(ours == 1676737);
  // The published 1,678,785 is exactly one more LSTM input (4*512 weights).
  doom.action_dim = 2;
  CHECK(mdn::MdnRnn(doom, 0).parameter_count() == 1678785);
}

TEST_CASE("zero weights give zero state and uniform mixture weights") {
  mdn::MdnRnn model(tiny_config(), 1);
  for (auto* p : model.parameters()) p->value.fill(0.0);
  auto state = model.initial_state();
  const std::vector<double> z{0.3, -1, 2, 0.5}, a{0.1, -0.4};
  const auto out = model.step(z, a, state);
  for (double v : state.h) CHECK(v == 0.0);
  for (double v : state.c) CHECK(v == 0.0);
  for (double w : mdn::mixture_weights(out)) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("rnn_step is deterministic from the same state") {
  mdn::MdnRnn model(tiny_config(), 4);
  const std::vector<double> z{0.3, -1, 2, 0.5}, a{0.1, -0.4};
  auto s1 = model.initial_state(), s2 = model.initial_state();
  model.step(z, a, s1);
  model.step(z, a, s2);
  auto s1b = s1;
  const auto o1 = model.step(z, a, s1);
  const auto o2 = model.step(z, a, s1b);
  CHECK(o1 == o2);
  CHECK(s1 == s1b);
}

TEST_CASE("closed-form NLL anchors") {
  MdnOutput o;
  o.n_z = 3;
  o.n_mixtures = 1;
  const std::vector<double> target{0.7, -2.0, 5.0};
  o.logits = {0.4, -1.0, 3.0};
  o.mu = target;
  o.log_sigma = {0, 0, 0};
  CHECK(std::abs(mdn::mdn_nll(o, target) - 3 * kHalfLog2Pi) < 1e-9);

  // Two identical components collapse to one.
  core::RngStream rng(8);
  MdnOutput one = random_output(3, 1, rng);
  MdnOutput two = one;
  two.n_mixtures = 2;
  two.logits.clear();
  two.mu.clear();
  two.log_sigma.clear();
  for (std::size_t d = 0; d < 3; ++d)
    for (int k = 0; k < 2; ++k) {
      two.logits.push_back(0.3);
      two.mu.push_back(one.mu[d]);
      two.log_sigma.push_back(one.log_sigma[d]);
    }
  const std::vector<double> t2{0.1, 0.2, -0.3};
  CHECK(std::abs(mdn::mdn_nll(two, t2) - mdn::mdn_nll(one, t2)) < 1e-12);
}

TEST_CASE("NLL is permutation-invariant over mixtures and safe for extreme targets") {
  core::RngStream rng(2);
  MdnOutput o = random_output(4, 5, rng);
  const std::vector<double> t{0.5, -3, 10, -10};
  MdnOutput p = o;
  const std::size_t perm[5] = {3, 0, 4, 1, 2};
  for (std::size_t d = 0; d < 4; ++d)
    for (std::size_t k = 0; k < 5; ++k) {
      p.logits[p.index(d, k)] = o.logits[o.index(d, perm[k])];
      p.mu[p.index(d, k)] = o.mu[o.index(d, perm[k])];
      p.log_sigma[p.index(d, k)] = o.log_sigma[o.index(d, perm[k])];
    }
  CHECK(mdn::mdn_nll(o, t) == doctest::Approx(mdn::mdn_nll(p, t)).epsilon(1e-14));
  for (auto& ls : o.log_sigma) ls = std::log(1e-4);
  CHECK(std::isfinite(mdn::mdn_nll(o, t)));
}

TEST_CASE("tape NLL rows agree with the scalar NLL") {
  mdn::MdnRnn model(tiny_config(), 3);
  core::RngStream rng(6);
  Tape t;
  Array yv = wm::testing::random_array({2, model.config().head_dim()}, rng);
  Array target = wm::testing::random_array({2, 4}, rng);
  const Array rows = model.nll_rows(t.constant(yv), t.constant(target)).value();
  for (std::size_t b = 0; b < 2; ++b) {
    const auto out = model.unpack(std::span<const double>(yv.data() + b * yv.dim(1), yv.dim(1)));
    CHECK(rows[b] == doctest::Approx(mdn::mdn_nll(out, std::span<const double>(target.data() + b * 4, 4))).epsilon(1e-12));
  }
}

TEST_CASE("gradients through 10 unrolled steps match finite differences over 20 seeds") {
  namespace ops = core::ops;
  double worst = 0;
  std::size_t kinks = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    mdn::MdnRnn model(tiny_config(), seed);
    core::RngStream rng(seed, "data");
    const std::size_t b = 2, steps = 10;
    std::vector<Array> xs, ts, ds;
    for (std::size_t t = 0; t < steps; ++t) {
      xs.push_back(wm::testing::random_array({b, 6}, rng));
      ts.push_back(wm::testing::random_array({b, 4}, rng));
      Array d({b});
      for (auto& v : d.storage()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
      ds.push_back(d);
    }
    auto build = [&](Tape& tape) {
      mdn::MdnRnn::TapeState s{tape.constant(Array({b, 5})), tape.constant(Array({b, 5}))};
      Var loss = tape.constant(Array::scalar(0.0));
      for (std::size_t t = 0; t < steps; ++t) {
        s = model.step(tape, tape.constant(xs[t]), s);
        Var y = model.head(tape, s.h);
        loss = ops::add(loss, ops::sum(model.nll_rows(y, tape.constant(ts[t]))));
        loss = ops::add(loss, ops::sum(ops::bce_with_logits(model.done_logits(y), tape.constant(ds[t]))));
      }
      return loss;
    };
    auto forward = [&] {
      Tape tape;
      return build(tape).value().item();
    };
    auto backward = [&] {
      Tape tape;
      tape.backward(build(tape));
    };
    core::RngStream pick(seed, "pick");
    const auto rep = wm::testing::check_parameters(forward, backward, model.parameters(), 12, pick);
    worst = std::max(worst, rep.max_rel_error);
    kinks += rep.kinks;
  }
  MESSAGE("worst relative error " << worst);
  CHECK(kinks == 0);  // the LSTM and mixture head are smooth everywhere
  CHECK(worst < 1e-4);
}

TEST_CASE("mixture weights sum to one and entropy is nondecreasing in temperature") {
  core::RngStream rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const MdnOutput o = random_output(3, 5, rng, 3.0);
    std::vector<double> prev(3, -1.0);
    for (double tau : kTaus) {
      const auto w = mdn::mixture_weights(o, tau);
      for (std::size_t d = 0; d < 3; ++d) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += w[o.index(d, k)];
        REQUIRE(std::abs(s - 1.0) < 1e-6);
      }
      const auto h = mdn::mixture_entropy(o, tau);
      for (std::size_t d = 0; d < 3; ++d) {
        REQUIRE(h[d] >= prev[d] - 1e-12);
        prev[d] = h[d];
      }
    }
  }
}

TEST_CASE("near-zero temperature picks the argmax mixture with vanishing spread") {
  core::RngStream rng(12), draw(13);
  std::size_t hits = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const MdnOutput o = random_output(5, 5, rng);
    std::vector<std::size_t> picks;
    for (int rep = 0; rep < 10; ++rep) {
      const auto z = mdn::sample_z(o, 1e-6, draw, &picks);
      for (std::size_t d = 0; d < 5; ++d) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < 5; ++k)
          if (o.logits[o.index(d, k)] > o.logits[o.index(d, best)]) best = k;
        hits += picks[d] == best;
        ++total;
        if (picks[d] == best) CHECK(std::abs(z[d] - o.mu[o.index(d, best)]) < 0.05);
      }
    }
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(total) >= 0.999);
}

TEST_CASE("sample spread grows with temperature; sampling is deterministic; tau must be positive") {
  core::RngStream rng(14);
  const MdnOutput o = random_output(1, 3, rng);
  auto variance = [&](double tau) {
    core::RngStream r(99);
    double s = 0, s2 = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      const double z = mdn::sample_z(o, tau, r)[0];
      s += z;
      s2 += z * z;
    }
    return s2 / n - (s / n) * (s / n);
  };
  CHECK(variance(1.3) > variance(0.1));
  core::RngStream a(5), b(5);
  CHECK(mdn::sample_z(o, 1.0, a) == mdn::sample_z(o, 1.0, b));
  CHECK_THROWS_AS(mdn::sample_z(o, 0.0, a), std::invalid_argument);
  CHECK_THROWS_AS(mdn::mixture_weights(o, -1.0), std::invalid_argument);
}

TEST_CASE("done cutoff is strict and requires a done head") {
  MdnOutput o;
  o.done_logit = 0.0;
  CHECK_FALSE(mdn::predict_done(o));
  o.done_logit = 10.0;
  CHECK(mdn::predict_done(o));
  o.done_logit.reset();
  CHECK_THROWS_AS(mdn::predict_done(o), std::logic_error);
  auto cfg = tiny_config();
  cfg.predict_done = false;
  mdn::MdnRnn model(cfg, 0);
  Tape t;
  CHECK_THROWS_AS(model.done_logits(t.constant(Array({1, cfg.head_dim()}))), std::logic_error);
}

namespace {

mdn::LatentDataset synthetic(std::size_t n_eps, std::size_t len, std::size_t nz, std::uint64_t seed,
                             const std::function<double(core::RngStream&, std::size_t, std::size_t)>& gen,
                             float sigma) {
  mdn::LatentDataset d;
  d.env_id = "synthetic";
  d.n_z = nz;
  d.action_dim = 1;
  core::RngStream rng(seed);
  for (std::size_t e = 0; e < n_eps; ++e) {
    mdn::LatentEpisode ep;
    ep.seed = e;
    for (std::size_t t = 0; t <= len; ++t)
      for (std::size_t k = 0; k < nz; ++k) {
        ep.mu.push_back(static_cast<float>(gen(rng, t, k)));
        ep.sigma.push_back(sigma);
      }
    for (std::size_t t = 0; t < len; ++t) {
      ep.actions.push_back(static_cast<float>(rng.uniform(-1, 1)));
      ep.dones.push_back(0);
    }
    d.episodes.push_back(std::move(ep));
  }
  return d;
}

}  // namespace

TEST_CASE("training on a constant sequence sharpens below unit variance") {
  const std::size_t nz = 3;
  auto data = synthetic(4, 30, nz, 1, [](core::RngStream&, std::size_t, std::size_t k) { return 0.5 * k; }, 0.01f);
  mdn::MdnRnnConfig cfg;
  cfg.n_z = nz;
  cfg.action_dim = 1;
  cfg.n_hidden = 8;
  cfg.n_mixtures = 2;
  mdn::MdnRnn model(cfg, 2);
  mdn::MdnTrainConfig tc;
  tc.epochs = 60;
  tc.batch_size = 4;
  tc.lr = 1e-2;
  const auto res = mdn::train_mdnrnn(model, data, tc);
  MESSAGE("final train nll " << res.epoch_nll.back());
  CHECK(res.epoch_nll.back() < kHalfLog2Pi * nz);
  CHECK(mdn::evaluate_mdnrnn(model, data).mean_nll < kHalfLog2Pi * nz);
}

TEST_CASE("trained NLL approaches the entropy of a known two-mixture generator") {
  const double m = 1.0, s = 0.3;
  auto gen = [&](core::RngStream& rng, std::size_t, std::size_t) {
    return (rng.uniform() < 0.5 ? -m : m) + s * rng.normal();
  };
  const std::size_t nz = 2;
  auto train = synthetic(8, 250, nz, 1, gen, 1e-4f);
  auto held = synthetic(4, 250, nz, 2, gen, 1e-4f);
  mdn::MdnRnnConfig cfg;
  cfg.n_z = nz;
  cfg.action_dim = 1;
  cfg.n_hidden = 8;
  cfg.n_mixtures = 3;
  mdn::MdnRnn model(cfg, 3);
  mdn::MdnTrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 8;
  tc.seq_len = 50;
  tc.lr = 1e-2;
  mdn::train_mdnrnn(model, train, tc);
  const double entropy = nz * two_mixture_entropy(m, s);
  const double nll = mdn::evaluate_mdnrnn(model, held).mean_nll;
  MESSAGE("held-out nll " << nll << " vs generator entropy " << entropy);
  CHECK(std::abs(nll - entropy) / entropy < 0.05);
}

TEST_CASE("resampling gives different z for the same episode") {
  auto data = synthetic(1, 5, 2, 1, [](core::RngStream& r, std::size_t, std::size_t) { return r.normal(); }, 0.5f);
  core::RngStream rng(1);
  const auto a = mdn::resample_latents(data.episodes[0], 2, rng);
  const auto b = mdn::resample_latents(data.episodes[0], 2, rng);
  CHECK(a != b);
}

TEST_CASE("done head ranks deaths above survivals on held-out data") {
  // Death follows whenever the first latent coordinate is above 1.
  auto make = [](std::uint64_t seed) {
    mdn::LatentDataset d;
    d.env_id = "synthetic";
    d.n_z = 2;
    d.action_dim = 1;
    core::RngStream rng(seed);
    for (int e = 0; e < 40; ++e) {
      mdn::LatentEpisode ep;
      for (int t = 0; t < 40; ++t) {
        const double z0 = rng.normal();
        ep.mu.push_back(static_cast<float>(z0));
        ep.mu.push_back(static_cast<float>(rng.normal()));
        ep.sigma.insert(ep.sigma.end(), {0.01f, 0.01f});
        ep.actions.push_back(0.0f);
        ep.dones.push_back(z0 > 1.0 ? 1 : 0);
        if (z0 > 1.0) break;
      }
      ep.mu.insert(ep.mu.end(), {0.0f, 0.0f});
      ep.sigma.insert(ep.sigma.end(), {0.01f, 0.01f});
      d.episodes.push_back(std::move(ep));
    }
    return d;
  };
  mdn::MdnRnnConfig cfg;
  cfg.n_z = 2;
  cfg.action_dim = 1;
  cfg.n_hidden = 8;
  cfg.n_mixtures = 2;
  cfg.predict_done = true;
  mdn::MdnRnn model(cfg, 4);
  mdn::MdnTrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 8;
  tc.lr = 1e-2;
  mdn::train_mdnrnn(model, make(1), tc);
  const auto stats = mdn::evaluate_mdnrnn(model, make(2));
  std::vector<std::size_t> idx(stats.done_prob.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return stats.done_prob[a] < stats.done_prob[b]; });
  const std::size_t dec = idx.size() / 10;
  double low = 0, high = 0;
  for (std::size_t i = 0; i < dec; ++i) {
    low += stats.done_target[idx[i]];
    high += stats.done_target[idx[idx.size() - 1 - i]];
  }
  MESSAGE("death frequency bottom decile " << low / dec << ", top decile " << high / dec);
  CHECK(high > low);
}

TEST_CASE("latent files and MDN checkpoints round-trip byte-identically") {
  auto data = synthetic(3, 7, 2, 9, [](core::RngStream& r, std::size_t, std::size_t) { return r.normal(); }, 0.3f);
  data.episodes[1].dones.back() = 1;
  const auto p1 = temp_path("a.wmlz"), p2 = temp_path("b.wmlz");
  mdn::save_latents(p1, data);
  const auto loaded = mdn::load_latents(p1);
  CHECK(loaded == data);
  mdn::save_latents(p2, loaded);
  CHECK(core::read_file_bytes(p1) == core::read_file_bytes(p2));

  mdn::MdnRnn model(tiny_config(), 5);
  const auto c1 = temp_path("m1.ckpt"), c2 = temp_path("m2.ckpt");
  model.save(c1);
  auto back = mdn::MdnRnn::load(c1);
  back.save(c2);
  CHECK(core::read_file_bytes(c1) == core::read_file_bytes(c2));
  const std::vector<double> z{0.3, -1, 2, 0.5}, a{0.1, -0.4};
  auto s1 = model.initial_state(), s2 = back.initial_state();
  CHECK(model.step(z, a, s1) == back.step(z, a, s2));
}

TEST_CASE("tape and inference paths agree over a sequence") {
  mdn::MdnRnn model(tiny_config(), 7);
  core::RngStream rng(3);
  Tape tape;
  mdn::MdnRnn::TapeState s{tape.constant(Array({1, 5})), tape.constant(Array({1, 5}))};
  auto state = model.initial_state();
  for (int t = 0; t < 5; ++t) {
    Array x = wm::testing::random_array({1, 6}, rng);
    s = model.step(tape, tape.constant(x), s);
    const Array y = model.head(tape, s.h).value();
    const auto out = model.step(std::span<const double>(x.data(), 4), std::span<const double>(x.data() + 4, 2), state);
    const auto ref = model.unpack(y.span());
    for (std::size_t i = 0; i < out.mu.size(); ++i) CHECK(out.mu[i] == doctest::Approx(ref.mu[i]).epsilon(1e-12));
    CHECK(*out.done_logit == doctest::Approx(*ref.done_logit).epsilon(1e-12));
  }
}
