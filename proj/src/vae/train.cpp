#include "wm/vae/train.hpp"

#include <cmath>
#include <numeric>

#include "wm/core/adam.hpp"
#include "wm/core/csv.hpp"
#include "wm/core/ops.hpp"

namespace wm::vae {

using core::Array;
using core::Tape;
using core::Var;

namespace {

void shuffle(std::vector<std::size_t>& v, core::RngStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace

std::vector<const envs::Observation*> all_frames(const envs::EpisodeDataset& data) {
  std::vector<const envs::Observation*> frames;
  frames.reserve(data.total_frames());
  for (const auto& e : data.episodes)
    for (const auto& f : e.frames) frames.push_back(&f);
  return frames;
}

VaeTrainResult train_vae(Vae& vae, const envs::EpisodeDataset& data, const VaeTrainConfig& config,
                         const TrainOutputs& outputs) {
  namespace ops = core::ops;
  const auto frames = all_frames(data);
  if (frames.empty()) throw std::invalid_argument("train_vae: dataset has no frames");
  if (config.batch_size == 0) throw std::invalid_argument("train_vae: batch_size must be positive");
  const core::RngStream root(config.seed, "vae.train");

  std::vector<std::size_t> pool(frames.size());
  std::iota(pool.begin(), pool.end(), 0);
  if (config.max_frames && config.max_frames < pool.size()) {
    core::RngStream pick = root.split("subset");
    shuffle(pool, pick);
    pool.resize(config.max_frames);
    std::sort(pool.begin(), pool.end());
  }

  for (const auto* p : vae.parameters())
    if (!p->value.all_finite()) throw core::NumericalError("train_vae: parameter " + p->name + " is not finite");

  core::CsvWriter csv;
  if (!outputs.metrics_csv.empty())
    csv = core::CsvWriter(outputs.metrics_csv, {"epoch", "batch", "loss", "recon", "kl"},
                          {{"config_hash", outputs.config_hash}});
  if (!outputs.checkpoint.empty()) vae.save(outputs.checkpoint);

  const auto params = vae.parameters();
  core::AdamState adam;
  core::AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  const double beta = vae.config().beta;
  const std::size_t nz = vae.config().n_z;

  VaeTrainResult result;
  result.frames_used = pool.size();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    core::RngStream rng = root.split(epoch);
    std::vector<std::size_t> order = pool;
    shuffle(order, rng);
    double sum_loss = 0, sum_recon = 0, sum_kl = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      std::vector<const envs::Observation*> batch(n);
      for (std::size_t i = 0; i < n; ++i) batch[i] = frames[order[start + i]];
      Array eps({n, nz});
      for (auto& v : eps.storage()) v = rng.normal();

      Tape tape;
      Var x = tape.constant(frames_to_array(batch));
      auto [mu, logvar] = vae.encode(tape, x);
      Var sigma = ops::exp(ops::scale(logvar, 0.5));
      Var z = ops::add(mu, ops::mul(sigma, tape.constant(std::move(eps))));
      Var recon = vae.decode(tape, z);
      const double inv_n = 1.0 / static_cast<double>(n);
      Var rec_loss = ops::scale(ops::sum(ops::square(ops::sub(recon, x))), inv_n);
      // -1/2 sum(1 + logvar - mu^2 - exp(logvar))
      Var kl_terms = ops::sub(ops::sub(ops::add_scalar(logvar, 1.0), ops::square(mu)), ops::exp(logvar));
      Var kl_loss = ops::scale(ops::sum(kl_terms), -0.5 * inv_n);
      Var loss = ops::add(rec_loss, ops::scale(kl_loss, beta));
      const double lv = loss.value().item();
      if (!std::isfinite(lv))
        throw core::NumericalError("train_vae: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                   std::to_string(batch_index) + "; last good checkpoint kept");
      core::zero_grads(params);
      tape.backward(loss);
      core::adam_step(params, adam, adam_cfg);

      const double rv = rec_loss.value().item(), kv = kl_loss.value().item();
      sum_loss += lv * static_cast<double>(n);
      sum_recon += rv * static_cast<double>(n);
      sum_kl += kv * static_cast<double>(n);
      if (csv.is_open())
        csv.row(std::vector<double>{static_cast<double>(epoch), static_cast<double>(batch_index), lv, rv, kv});
    }
    const double count = static_cast<double>(order.size());
    result.epoch_loss.push_back(sum_loss / count);
    result.epoch_recon.push_back(sum_recon / count);
    result.epoch_kl.push_back(sum_kl / count);
    if (!outputs.checkpoint.empty()) vae.save(outputs.checkpoint);
  }
  return result;
}

double reconstruction_mse(const Vae& vae, const std::vector<const envs::Observation*>& frames) {
  constexpr std::size_t kChunk = 64;
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t start = 0; start < frames.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, frames.size() - start);
    std::vector<const envs::Observation*> chunk(frames.begin() + static_cast<std::ptrdiff_t>(start),
                                                frames.begin() + static_cast<std::ptrdiff_t>(start + n));
    const Array x = frames_to_array(chunk);
    Array mu, sigma;
    vae.encode_batch(x, mu, sigma);
    const Array r = vae.decode_batch(mu);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - r[i];
      sum += d * d;
    }
    count += x.size();
  }
  return sum / static_cast<double>(count);
}

}  // namespace wm::vae
