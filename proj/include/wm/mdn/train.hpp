#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wm/mdn/latent.hpp"
#include "wm/mdn/mdnrnn.hpp"

namespace wm::mdn {

struct MdnTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;  // sequences per batch
  double lr = 1e-3;
  /// Truncated unroll length; 0 unrolls whole episodes.
  std::size_t seq_len = 0;
  double grad_clip = 1.0;  // joint L2 norm; 0 disables
  /// Weight on the positive (death) class of the done loss; 1 = unweighted.
  double done_pos_weight = 1.0;
  std::uint64_t seed = 0;
};

struct MdnTrainOutputs {
  std::filesystem::path metrics_csv;  // one row per epoch
  std::filesystem::path checkpoint;   // rewritten after every epoch
  std::string config_hash;
};

struct MdnTrainResult {
  std::vector<double> epoch_loss;  // nll / n_z + bce, per step
  std::vector<double> epoch_nll;   // summed over latent dims, per step
  std::vector<double> epoch_bce;
};

/// Teacher-forced training. Each batch resamples inputs and targets as
/// z ~ N(mu, sigma) from the stored posteriors, so repeated passes over the
/// same episodes see different z. A NaN loss throws core::NumericalError and
/// leaves the previous epoch's checkpoint on disk.
MdnTrainResult train_mdnrnn(MdnRnn& model, const LatentDataset& data, const MdnTrainConfig& config,
                            const MdnTrainOutputs& outputs = {});

/// The z sequence ([n_steps + 1, n_z]) one batch construction would use.
std::vector<double> resample_latents(const LatentEpisode& e, std::size_t n_z, core::RngStream& rng);

struct HeldOutStats {
  double mean_nll = 0;  // per step, summed over dims
  std::vector<double> done_prob;  // per step, when the model predicts done
  std::vector<std::uint8_t> done_target;
};

/// Runs the inference path over episodes, feeding mu as input.
HeldOutStats evaluate_mdnrnn(const MdnRnn& model, const LatentDataset& data);

}  // namespace wm::mdn
