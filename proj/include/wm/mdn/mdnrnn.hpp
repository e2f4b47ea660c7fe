#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "wm/core/checkpoint.hpp"
#include "wm/core/rng.hpp"
#include "wm/core/tape.hpp"

namespace wm::mdn {

struct MdnRnnConfig {
  std::size_t n_z = 32;
  std::size_t action_dim = 3;
  std::size_t n_hidden = 256;
  std::size_t n_mixtures = 5;
  bool predict_done = false;

  void validate() const;
  std::size_t input_dim() const { return n_z + action_dim; }
  /// logits, mu and log sigma for every (dim, mixture) plus an optional done logit.
  std::size_t head_dim() const { return 3 * n_mixtures * n_z + (predict_done ? 1 : 0); }
};

struct RnnState {
  std::vector<double> h;
  std::vector<double> c;

  static RnnState zeros(std::size_t n_hidden) { return {std::vector<double>(n_hidden), std::vector<double>(n_hidden)}; }
  friend bool operator==(const RnnState&, const RnnState&) = default;
};

/// Mixture parameters for one step. Entries are laid out [dim][mixture], so
/// index d * K + k addresses mixture k of latent dimension d.
struct MdnOutput {
  std::size_t n_z = 0;
  std::size_t n_mixtures = 0;
  std::vector<double> logits;
  std::vector<double> mu;
  std::vector<double> log_sigma;
  std::optional<double> done_logit;

  std::size_t index(std::size_t d, std::size_t k) const { return d * n_mixtures + k; }
  friend bool operator==(const MdnOutput&, const MdnOutput&) = default;
};

/// softmax(logits / tau) per latent dimension, [dim][mixture]. tau > 0.
std::vector<double> mixture_weights(const MdnOutput& out, double tau = 1.0);
/// Shannon entropy (nats) of each dimension's categorical mixture weights.
std::vector<double> mixture_entropy(const MdnOutput& out, double tau);

/// -sum_d logsumexp_k [log pi_kd + log N(z_d; mu_kd, sigma_kd)].
double mdn_nll(const MdnOutput& out, std::span<const double> target);

/// Lower bound on sigma used when sampling.
inline constexpr double kMinSampleSigma = 1e-4;

/// Per dimension: k ~ Categorical(softmax(logits / tau)), then
/// z_d ~ N(mu_kd, (sigma_kd sqrt(tau))^2). Mixture selection is independent per
/// dimension; chosen_mixture receives the picks when non-null.
std::vector<double> sample_z(const MdnOutput& out, double tau, core::RngStream& rng,
                             std::vector<std::size_t>* chosen_mixture = nullptr);

/// sigmoid(done_logit) > threshold. Throws std::logic_error if the model has no done head.
bool predict_done(const MdnOutput& out, double threshold = 0.5);
double done_probability(const MdnOutput& out);

/// LSTM (input, forget, cell, output gates; forget bias starts at 1) with a
/// mixture-density head on h.
class MdnRnn {
 public:
  MdnRnn(MdnRnnConfig config, std::uint64_t seed);

  const MdnRnnConfig& config() const noexcept { return config_; }
  std::vector<core::Parameter*> parameters();
  std::vector<const core::Parameter*> parameters() const;
  std::size_t parameter_count() const;
  RnnState initial_state() const { return RnnState::zeros(config_.n_hidden); }

  /// Inference step on concat[z, a]; updates state in place.
  MdnOutput step(std::span<const double> z, std::span<const double> action, RnnState& state) const;

  // Differentiable batch step: x [B, n_z + action_dim], h and c [B, n_hidden].
  struct TapeState {
    core::Var h;
    core::Var c;
  };
  TapeState step(core::Tape& tape, const core::Var& x, const TapeState& state);
  /// Head output [B, head_dim] for hidden h.
  core::Var head(core::Tape& tape, const core::Var& h);
  /// Per-row NLL [B] of targets z [B, n_z] under the head output y.
  core::Var nll_rows(const core::Var& y, const core::Var& target) const;
  core::Var done_logits(const core::Var& y) const;

  /// Unpacks one row of a head output.
  MdnOutput unpack(std::span<const double> head_row) const;

  core::Checkpoint to_checkpoint();
  static MdnRnn from_checkpoint(const core::Checkpoint& ckpt);
  void save(const std::filesystem::path& path);
  static MdnRnn load(const std::filesystem::path& path);

 private:
  MdnRnnConfig config_;
  core::Parameter wx_, wh_, b_, wy_, by_;
};

void write_config(core::Checkpoint& ckpt, const MdnRnnConfig& c);
MdnRnnConfig read_config(const core::Checkpoint& ckpt);

}  // namespace wm::mdn
