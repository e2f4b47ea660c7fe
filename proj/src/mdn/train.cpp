#include "wm/mdn/train.hpp"

#include <cmath>
#include <numeric>

#include "wm/core/adam.hpp"
#include "wm/core/csv.hpp"
#include "wm/core/ops.hpp"

namespace wm::mdn {

using core::Array;
using core::Tape;
using core::Var;

namespace {

struct Chunk {
  std::size_t episode;
  std::size_t start;
  std::size_t length;
};

void shuffle(std::vector<std::size_t>& v, core::RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::vector<double> resample_latents(const LatentEpisode& e, std::size_t n_z, core::RngStream& rng) {
  std::vector<double> z((e.n_steps() + 1) * n_z);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<double>(e.mu[i]) + static_cast<double>(e.sigma[i]) * rng.normal();
  return z;
}

MdnTrainResult train_mdnrnn(MdnRnn& model, const LatentDataset& data, const MdnTrainConfig& config,
                            const MdnTrainOutputs& outputs) {
  namespace ops = core::ops;
  const auto& mc = model.config();
  if (data.n_z != mc.n_z || data.action_dim != mc.action_dim)
    throw std::invalid_argument("train_mdnrnn: dataset (n_z " + std::to_string(data.n_z) + ", action_dim " +
                                std::to_string(data.action_dim) + ") does not match the model");
  if (config.batch_size == 0) throw std::invalid_argument("train_mdnrnn: batch_size must be positive");
  std::vector<Chunk> chunks;
  for (std::size_t e = 0; e < data.episodes.size(); ++e) {
    const std::size_t n = data.episodes[e].n_steps();
    const std::size_t len = config.seq_len ? config.seq_len : std::max<std::size_t>(n, 1);
    for (std::size_t s = 0; s < n; s += len) chunks.push_back({e, s, std::min(len, n - s)});
  }
  if (chunks.empty()) throw std::invalid_argument("train_mdnrnn: dataset has no transitions");
  for (const auto* p : model.parameters())
    if (!p->value.all_finite()) throw core::NumericalError("train_mdnrnn: parameter " + p->name + " is not finite");

  core::CsvWriter csv;
  if (!outputs.metrics_csv.empty())
    csv = core::CsvWriter(outputs.metrics_csv, {"epoch", "loss", "nll", "bce"}, {{"config_hash", outputs.config_hash}});
  if (!outputs.checkpoint.empty()) model.save(outputs.checkpoint);

  const auto params = model.parameters();
  core::AdamState adam;
  core::AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  const std::size_t nz = mc.n_z, na = mc.action_dim, n_h = mc.n_hidden;
  const core::RngStream root(config.seed, "mdnrnn.train");

  MdnTrainResult result;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    core::RngStream rng = root.split(epoch);
    std::vector<std::size_t> order(chunks.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    double sum_nll = 0, sum_bce = 0, steps_total = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      std::vector<const Chunk*> batch(b);
      std::size_t t_max = 0;
      for (std::size_t i = 0; i < b; ++i) {
        batch[i] = &chunks[order[start + i]];
        t_max = std::max(t_max, batch[i]->length);
      }
      // Fresh z for every sequence in the batch.
      std::vector<std::vector<double>> zs(b);
      for (std::size_t i = 0; i < b; ++i) {
        const auto& ep = data.episodes[batch[i]->episode];
        zs[i].resize((batch[i]->length + 1) * nz);
        for (std::size_t j = 0; j < zs[i].size(); ++j) {
          const std::size_t src = batch[i]->start * nz + j;
          zs[i][j] = static_cast<double>(ep.mu[src]) + static_cast<double>(ep.sigma[src]) * rng.normal();
        }
      }

      Tape tape;
      MdnRnn::TapeState state{tape.constant(Array({b, n_h})), tape.constant(Array({b, n_h}))};
      std::vector<Var> nll_terms, bce_terms;
      double valid = 0;
      for (std::size_t t = 0; t < t_max; ++t) {
        // Padded rows keep zero mask and zero done weight.
        Array x({b, nz + na}), target({b, nz}), mask({b}), done_t({b}), done_w({b});
        for (std::size_t i = 0; i < b; ++i) {
          const Chunk& c = *batch[i];
          if (t >= c.length) continue;
          const auto& ep = data.episodes[c.episode];
          const std::size_t step = c.start + t;
          for (std::size_t d = 0; d < nz; ++d) {
            x[i * (nz + na) + d] = zs[i][t * nz + d];
            target[i * nz + d] = zs[i][(t + 1) * nz + d];
          }
          for (std::size_t a = 0; a < na; ++a) x[i * (nz + na) + nz + a] = ep.actions[step * na + a];
          mask[i] = 1.0;
          done_t[i] = ep.dones[step] ? 1.0 : 0.0;
          done_w[i] = ep.dones[step] ? config.done_pos_weight : 1.0;
          valid += 1;
        }
        state = model.step(tape, tape.constant(std::move(x)), state);
        Var y = model.head(tape, state.h);
        nll_terms.push_back(ops::sum(ops::mul(model.nll_rows(y, tape.constant(std::move(target))), tape.constant(mask))));
        if (mc.predict_done) {
          Var bce = ops::bce_with_logits(model.done_logits(y), tape.constant(std::move(done_t)));
          bce_terms.push_back(ops::sum(ops::mul(bce, tape.constant(std::move(done_w)))));
        }
      }
      Var nll_sum = nll_terms[0];
      for (std::size_t i = 1; i < nll_terms.size(); ++i) nll_sum = ops::add(nll_sum, nll_terms[i]);
      Var loss = ops::scale(nll_sum, 1.0 / (valid * static_cast<double>(nz)));
      double bce_value = 0;
      if (mc.predict_done) {
        Var bce_sum = bce_terms[0];
        for (std::size_t i = 1; i < bce_terms.size(); ++i) bce_sum = ops::add(bce_sum, bce_terms[i]);
        loss = ops::add(loss, ops::scale(bce_sum, 1.0 / valid));
        bce_value = bce_sum.value().item();
      }
      const double lv = loss.value().item();
      if (!std::isfinite(lv))
        throw core::NumericalError("train_mdnrnn: non-finite loss at epoch " + std::to_string(epoch) +
                                   "; last good checkpoint kept");
      core::zero_grads(params);
      tape.backward(loss);
      if (config.grad_clip > 0) core::clip_grad_norm(params, config.grad_clip);
      core::adam_step(params, adam, adam_cfg);
      sum_nll += nll_sum.value().item();
      sum_bce += bce_value;
      steps_total += valid;
    }
    const double nll = sum_nll / steps_total, bce = sum_bce / steps_total;
    result.epoch_nll.push_back(nll);
    result.epoch_bce.push_back(bce);
    result.epoch_loss.push_back(nll / static_cast<double>(nz) + bce);
    if (csv.is_open()) csv.row(std::vector<double>{static_cast<double>(epoch), result.epoch_loss.back(), nll, bce});
    if (!outputs.checkpoint.empty()) model.save(outputs.checkpoint);
  }
  return result;
}

HeldOutStats evaluate_mdnrnn(const MdnRnn& model, const LatentDataset& data) {
  const std::size_t nz = model.config().n_z, na = model.config().action_dim;
  HeldOutStats s;
  double total = 0;
  std::size_t steps = 0;
  std::vector<double> z(nz), a(na), next(nz);
  for (const auto& e : data.episodes) {
    RnnState state = model.initial_state();
    for (std::size_t t = 0; t < e.n_steps(); ++t) {
      for (std::size_t d = 0; d < nz; ++d) {
        z[d] = e.mu[t * nz + d];
        next[d] = e.mu[(t + 1) * nz + d];
      }
      for (std::size_t j = 0; j < na; ++j) a[j] = e.actions[t * na + j];
      const MdnOutput out = model.step(z, a, state);
      total += mdn_nll(out, next);
      ++steps;
      if (out.done_logit) {
        s.done_prob.push_back(done_probability(out));
        s.done_target.push_back(e.dones[t]);
      }
    }
  }
  s.mean_nll = steps ? total / static_cast<double>(steps) : 0.0;
  return s;
}

}  // namespace wm::mdn
