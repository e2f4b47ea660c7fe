#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wm/envs/episode.hpp"
#include "wm/vae/vae.hpp"

namespace wm::vae {

struct VaeTrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  /// Train on a fixed random subset of this many frames (0 = every frame).
  std::size_t max_frames = 0;
  std::uint64_t seed = 0;
};

struct TrainOutputs {
  std::filesystem::path metrics_csv;  // per-batch rows; empty = no file
  std::filesystem::path checkpoint;   // rewritten after every epoch; empty = none
  std::string config_hash;            // leading column of every metrics row
};

struct VaeTrainResult {
  std::vector<double> epoch_loss;  // per-frame means
  std::vector<double> epoch_recon;
  std::vector<double> epoch_kl;
  std::size_t frames_used = 0;
};

/// Minibatch training on the summed-pixel reconstruction error plus beta*KL,
/// averaged over the batch. The checkpoint file is written before the first
/// step and after each epoch, so a NaN abort (core::NumericalError) leaves the
/// last good weights on disk.
VaeTrainResult train_vae(Vae& vae, const envs::EpisodeDataset& data, const VaeTrainConfig& config,
                         const TrainOutputs& outputs = {});

/// Mean per-pixel squared error of decode(encode(x).mu) over the given frames.
double reconstruction_mse(const Vae& vae, const std::vector<const envs::Observation*>& frames);

std::vector<const envs::Observation*> all_frames(const envs::EpisodeDataset& data);

}  // namespace wm::vae
