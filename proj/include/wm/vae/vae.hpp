#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wm/core/checkpoint.hpp"
#include "wm/core/rng.hpp"
#include "wm/core/tape.hpp"
#include "wm/envs/env.hpp"

namespace wm::vae {

using core::Array;

/// Convolutional VAE layout. The encoder applies one 4x4 stride-2 valid
/// convolution per entry of encoder_channels, flattens, and maps to (mu,
/// log variance). The decoder maps z through a dense layer to a 1x1 map with
/// as many channels as the flattened encoder output, then applies stride-2
/// transposed convolutions back to H x W x 3.
struct VaeConfig {
  std::size_t n_z = 32;
  std::size_t height = 64;
  std::size_t width = 64;
  std::vector<std::size_t> encoder_channels{32, 64, 128, 256};
  /// Empty means: encoder widths reversed without the deepest, then 3.
  std::vector<std::size_t> decoder_channels;
  /// Empty means: derived so the transposed convolutions land exactly on H.
  std::vector<std::size_t> decoder_kernels;
  double beta = 1.0;  // KL weight

  /// Fills the derived fields and validates; throws std::invalid_argument.
  void resolve();
  /// Spatial side of the last encoder feature map.
  std::size_t encoder_out_side() const;
  std::size_t encoder_flat_size() const;
};

/// Kernel sizes (5 or 6, first layer free) for `layers` stride-2 transposed
/// convolutions that take a 1x1 map to side `target`. Throws when impossible.
std::vector<std::size_t> derive_decoder_kernels(std::size_t target, std::size_t layers);

struct LatentCode {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> z;
};

struct VaeLoss {
  double recon_l2 = 0;  // summed squared pixel error
  double kl = 0;
  double total(double beta) const { return recon_l2 + beta * kl; }
};

/// Closed-form loss for one frame; frame and recon are planar [3, H, W] in [0, 1].
VaeLoss vae_loss(std::span<const double> frame, std::span<const double> recon, std::span<const double> mu,
                 std::span<const double> sigma);

/// Stacks frames into planar [N, 3, H, W] values in [0, 1].
Array frames_to_array(const std::vector<const envs::Observation*>& frames);

class Vae {
 public:
  Vae(VaeConfig config, std::uint64_t seed);

  const VaeConfig& config() const noexcept { return config_; }
  std::vector<core::Parameter*> parameters();
  std::vector<const core::Parameter*> parameters() const;
  std::size_t parameter_count() const;

  struct Encoded {
    core::Var mu;
    core::Var logvar;
  };
  /// Differentiable paths. x is [N, 3, H, W]; z is [N, n_z]; decode returns
  /// pixel probabilities [N, 3, H, W].
  Encoded encode(core::Tape& tape, const core::Var& x);
  core::Var decode(core::Tape& tape, const core::Var& z);

  /// Inference without a tape; values are identical to the tape path.
  void encode_batch(const Array& x, Array& mu, Array& sigma) const;
  Array decode_batch(const Array& z) const;

  /// (mu, sigma) are deterministic; z is drawn from rng.
  LatentCode encode(const envs::Observation& frame, core::RngStream& rng) const;
  /// Planar [3, H, W] probabilities in [0, 1].
  Array decode(std::span<const double> z) const;
  envs::Observation decode_observation(std::span<const double> z) const;

  /// Rounds weights to float32 first so the in-memory model equals what loads back.
  core::Checkpoint to_checkpoint();
  static Vae from_checkpoint(const core::Checkpoint& ckpt);
  void save(const std::filesystem::path& path);
  static Vae load(const std::filesystem::path& path);

 private:
  Vae() = default;
  void check_frame_shape(const core::Shape& s) const;

  VaeConfig config_;
  std::vector<core::Parameter> enc_w_, enc_b_;
  core::Parameter mu_w_, mu_b_, lv_w_, lv_b_;
  core::Parameter dense_w_, dense_b_;
  std::vector<core::Parameter> dec_w_, dec_b_;
};

void write_config(core::Checkpoint& ckpt, const VaeConfig& c);
VaeConfig read_config(const core::Checkpoint& ckpt);

}  // namespace wm::vae
