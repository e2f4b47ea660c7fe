#include "wm/mdn/mdnrnn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "wm/core/io.hpp"
#include "wm/core/kernels.hpp"
#include "wm/core/ops.hpp"

namespace wm::mdn {

namespace k = core::kernels;
using core::Array;
using core::Parameter;
using core::Tape;
using core::Var;

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Parameter uniform_param(std::string name, core::Shape shape, double bound, const core::RngStream& root) {
  Array a(std::move(shape));
  core::RngStream rng = root.split(name);
  for (auto& v : a.storage()) v = rng.uniform(-bound, bound);
  return Parameter(std::move(name), std::move(a));
}

void check_tau(double tau) {
  if (!(tau > 0)) throw std::invalid_argument("temperature must be > 0, got " + std::to_string(tau));
}

}  // namespace

void MdnRnnConfig::validate() const {
  if (n_z < 1) throw std::invalid_argument("MdnRnnConfig: n_z must be >= 1");
  if (action_dim < 1) throw std::invalid_argument("MdnRnnConfig: action_dim must be >= 1");
  if (n_hidden < 1) throw std::invalid_argument("MdnRnnConfig: n_hidden must be >= 1");
  if (n_mixtures < 1) throw std::invalid_argument("MdnRnnConfig: n_mixtures must be >= 1");
}

std::vector<double> mixture_weights(const MdnOutput& out, double tau) {
  check_tau(tau);
  const std::size_t kk = out.n_mixtures;
  std::vector<double> w(out.logits.size());
  std::vector<double> scaled(kk);
  for (std::size_t d = 0; d < out.n_z; ++d) {
    for (std::size_t j = 0; j < kk; ++j) scaled[j] = out.logits[out.index(d, j)] / tau;
    const double lse = k::logsumexp(scaled);
    for (std::size_t j = 0; j < kk; ++j) w[out.index(d, j)] = std::exp(scaled[j] - lse);
  }
  return w;
}

std::vector<double> mixture_entropy(const MdnOutput& out, double tau) {
  const auto w = mixture_weights(out, tau);
  std::vector<double> h(out.n_z, 0.0);
  for (std::size_t d = 0; d < out.n_z; ++d)
    for (std::size_t j = 0; j < out.n_mixtures; ++j) {
      const double p = w[out.index(d, j)];
      if (p > 0) h[d] -= p * std::log(p);
    }
  return h;
}

double mdn_nll(const MdnOutput& out, std::span<const double> target) {
  if (target.size() != out.n_z) core::throw_shape_mismatch("mdn_nll (target vs n_z)", {target.size()}, {out.n_z});
  const std::size_t kk = out.n_mixtures;
  std::vector<double> logits(kk), terms(kk);
  double nll = 0;
  for (std::size_t d = 0; d < out.n_z; ++d) {
    for (std::size_t j = 0; j < kk; ++j) logits[j] = out.logits[out.index(d, j)];
    const double lse = k::logsumexp(logits);
    for (std::size_t j = 0; j < kk; ++j) {
      const std::size_t i = out.index(d, j);
      const double zs = (target[d] - out.mu[i]) * std::exp(-out.log_sigma[i]);
      terms[j] = (logits[j] - lse) - 0.5 * zs * zs - out.log_sigma[i] - kHalfLog2Pi;
    }
    nll -= k::logsumexp(terms);
  }
  return nll;
}

std::vector<double> sample_z(const MdnOutput& out, double tau, core::RngStream& rng,
                             std::vector<std::size_t>* chosen_mixture) {
  const auto w = mixture_weights(out, tau);
  const double spread = std::sqrt(tau);
  std::vector<double> z(out.n_z);
  if (chosen_mixture) chosen_mixture->assign(out.n_z, 0);
  for (std::size_t d = 0; d < out.n_z; ++d) {
    const double u = rng.uniform();
    std::size_t pick = out.n_mixtures - 1;
    double acc = 0;
    for (std::size_t j = 0; j < out.n_mixtures; ++j) {
      acc += w[out.index(d, j)];
      if (u < acc) {
        pick = j;
        break;
      }
    }
    const std::size_t i = out.index(d, pick);
    const double sigma = std::max(std::exp(out.log_sigma[i]), kMinSampleSigma);
    z[d] = out.mu[i] + sigma * spread * rng.normal();
    if (chosen_mixture) (*chosen_mixture)[d] = pick;
  }
  return z;
}

double done_probability(const MdnOutput& out) {
  if (!out.done_logit) throw std::logic_error("done prediction is disabled for this model");
  return k::sigmoid(*out.done_logit);
}

bool predict_done(const MdnOutput& out, double threshold) { return done_probability(out) > threshold; }

MdnRnn::MdnRnn(MdnRnnConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const core::RngStream root(seed, "mdnrnn.init");
  const std::size_t n_h = config_.n_hidden, in = config_.input_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(n_h));
  wx_ = uniform_param("lstm.wx", {in, 4 * n_h}, bound, root);
  wh_ = uniform_param("lstm.wh", {n_h, 4 * n_h}, bound, root);
  b_ = Parameter("lstm.b", Array({4 * n_h}));
  for (std::size_t i = n_h; i < 2 * n_h; ++i) b_.value[i] = 1.0;  // forget gate
  wy_ = uniform_param("head.w", {n_h, config_.head_dim()}, bound, root);
  by_ = Parameter("head.b", Array({config_.head_dim()}));
}

std::vector<Parameter*> MdnRnn::parameters() { return {&wx_, &wh_, &b_, &wy_, &by_}; }

std::vector<const Parameter*> MdnRnn::parameters() const { return {&wx_, &wh_, &b_, &wy_, &by_}; }

std::size_t MdnRnn::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

MdnOutput MdnRnn::step(std::span<const double> z, std::span<const double> action, RnnState& state) const {
  const std::size_t n_h = config_.n_hidden, nz = config_.n_z, na = config_.action_dim;
  if (z.size() != nz) core::throw_shape_mismatch("rnn_step (z vs n_z)", {z.size()}, {nz});
  if (action.size() != na) core::throw_shape_mismatch("rnn_step (action vs action_dim)", {action.size()}, {na});
  if (state.h.size() != n_h || state.c.size() != n_h)
    core::throw_shape_mismatch("rnn_step (state vs n_hidden)", {state.h.size()}, {n_h});
  std::vector<double> x(nz + na);
  std::copy(z.begin(), z.end(), x.begin());
  std::copy(action.begin(), action.end(), x.begin() + static_cast<std::ptrdiff_t>(nz));
  std::vector<double> gx(4 * n_h), gh(4 * n_h);
  k::gemm(x.data(), wx_.value.data(), gx.data(), 1, x.size(), 4 * n_h, false, false, false);
  k::gemm(state.h.data(), wh_.value.data(), gh.data(), 1, n_h, 4 * n_h, false, false, false);
  for (std::size_t j = 0; j < 4 * n_h; ++j) gx[j] = (gx[j] + gh[j]) + b_.value[j];
  for (std::size_t j = 0; j < n_h; ++j) {
    const double ig = k::sigmoid(gx[j]);
    const double fg = k::sigmoid(gx[n_h + j]);
    const double cg = std::tanh(gx[2 * n_h + j]);
    const double og = k::sigmoid(gx[3 * n_h + j]);
    state.c[j] = fg * state.c[j] + ig * cg;
    state.h[j] = og * std::tanh(state.c[j]);
  }
  std::vector<double> y(config_.head_dim());
  k::gemm(state.h.data(), wy_.value.data(), y.data(), 1, n_h, y.size(), false, false, false);
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += by_.value[j];
  return unpack(y);
}

MdnOutput MdnRnn::unpack(std::span<const double> y) const {
  const std::size_t kn = config_.n_mixtures * config_.n_z;
  if (y.size() != config_.head_dim()) core::throw_shape_mismatch("mdn unpack", {y.size()}, {config_.head_dim()});
  MdnOutput o;
  o.n_z = config_.n_z;
  o.n_mixtures = config_.n_mixtures;
  o.logits.assign(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(kn));
  o.mu.assign(y.begin() + static_cast<std::ptrdiff_t>(kn), y.begin() + static_cast<std::ptrdiff_t>(2 * kn));
  o.log_sigma.assign(y.begin() + static_cast<std::ptrdiff_t>(2 * kn), y.begin() + static_cast<std::ptrdiff_t>(3 * kn));
  if (config_.predict_done) o.done_logit = y[3 * kn];
  return o;
}

MdnRnn::TapeState MdnRnn::step(Tape& tape, const Var& x, const TapeState& s) {
  namespace ops = core::ops;
  const std::size_t n_h = config_.n_hidden;
  Var g = ops::add(ops::add(ops::matmul(x, tape.parameter(wx_)), ops::matmul(s.h, tape.parameter(wh_))),
                   tape.parameter(b_));
  Var ig = ops::sigmoid(ops::slice_last(g, 0, n_h));
  Var fg = ops::sigmoid(ops::slice_last(g, n_h, 2 * n_h));
  Var cg = ops::tanh(ops::slice_last(g, 2 * n_h, 3 * n_h));
  Var og = ops::sigmoid(ops::slice_last(g, 3 * n_h, 4 * n_h));
  Var c = ops::add(ops::mul(fg, s.c), ops::mul(ig, cg));
  Var h = ops::mul(og, ops::tanh(c));
  return {h, c};
}

Var MdnRnn::head(Tape& tape, const Var& h) {
  return core::ops::add(core::ops::matmul(h, tape.parameter(wy_)), tape.parameter(by_));
}

Var MdnRnn::nll_rows(const Var& y, const Var& target) const {
  namespace ops = core::ops;
  const std::size_t b = y.shape()[0], nz = config_.n_z, kk = config_.n_mixtures, kn = kk * nz;
  Var logits = ops::reshape(ops::slice_last(y, 0, kn), {b, nz, kk});
  Var mu = ops::reshape(ops::slice_last(y, kn, 2 * kn), {b, nz, kk});
  Var ls = ops::reshape(ops::slice_last(y, 2 * kn, 3 * kn), {b, nz, kk});
  Var zs = ops::mul(ops::sub(ops::broadcast_last(target, kk), mu), ops::exp(ops::scale(ls, -1.0)));
  Var log_n = ops::add_scalar(ops::sub(ops::scale(ops::square(zs), -0.5), ls), -kHalfLog2Pi);
  Var lse = ops::logsumexp(ops::add(ops::log_softmax(logits), log_n));
  return ops::scale(ops::sum_last(lse), -1.0);
}

Var MdnRnn::done_logits(const Var& y) const {
  if (!config_.predict_done) throw std::logic_error("done prediction is disabled for this model");
  const std::size_t kn = config_.n_mixtures * config_.n_z;
  return core::ops::reshape(core::ops::slice_last(y, 3 * kn, 3 * kn + 1), {y.shape()[0]});
}

void write_config(core::Checkpoint& ckpt, const MdnRnnConfig& c) {
  ckpt.meta["model"] = "mdnrnn";
  ckpt.meta["n_z"] = std::to_string(c.n_z);
  ckpt.meta["action_dim"] = std::to_string(c.action_dim);
  ckpt.meta["n_hidden"] = std::to_string(c.n_hidden);
  ckpt.meta["n_mixtures"] = std::to_string(c.n_mixtures);
  ckpt.meta["predict_done"] = c.predict_done ? "1" : "0";
}

MdnRnnConfig read_config(const core::Checkpoint& ckpt) {
  if (ckpt.meta_value("model") != "mdnrnn") throw core::FormatError("checkpoint is not an MDN-RNN");
  MdnRnnConfig c;
  c.n_z = std::stoul(ckpt.meta_value("n_z"));
  c.action_dim = std::stoul(ckpt.meta_value("action_dim"));
  c.n_hidden = std::stoul(ckpt.meta_value("n_hidden"));
  c.n_mixtures = std::stoul(ckpt.meta_value("n_mixtures"));
  c.predict_done = ckpt.meta_value("predict_done") == "1";
  return c;
}

core::Checkpoint MdnRnn::to_checkpoint() {
  core::Checkpoint ckpt;
  write_config(ckpt, config_);
  auto ps = parameters();
  core::round_to_f32(ps);
  core::store_parameters(ckpt, ps);
  return ckpt;
}

MdnRnn MdnRnn::from_checkpoint(const core::Checkpoint& ckpt) {
  MdnRnn m(read_config(ckpt), 0);
  core::restore_parameters(ckpt, m.parameters());
  return m;
}

void MdnRnn::save(const std::filesystem::path& path) { core::save_checkpoint(path, to_checkpoint()); }

MdnRnn MdnRnn::load(const std::filesystem::path& path) { return from_checkpoint(core::load_checkpoint(path)); }

}  // namespace wm::mdn
