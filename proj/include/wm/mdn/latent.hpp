#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "wm/envs/episode.hpp"
#include "wm/vae/vae.hpp"

namespace wm::mdn {

/// V's posterior for every frame of one episode; frames themselves are not kept.
/// mu and sigma are [n_steps + 1, n_z]; actions [n_steps, action_dim].
struct LatentEpisode {
  std::uint64_t seed = 0;
  std::vector<float> mu;
  std::vector<float> sigma;
  std::vector<float> actions;
  std::vector<std::uint8_t> dones;

  std::size_t n_steps() const noexcept { return dones.size(); }
  friend bool operator==(const LatentEpisode&, const LatentEpisode&) = default;
};

struct LatentDataset {
  std::string env_id;
  std::size_t n_z = 0;
  std::size_t action_dim = 0;
  std::vector<LatentEpisode> episodes;

  std::size_t total_steps() const;
  friend bool operator==(const LatentDataset&, const LatentDataset&) = default;
};

inline constexpr std::uint16_t kLatentFileVersion = 1;

void write_latents(std::ostream& os, const LatentDataset& data);
LatentDataset read_latents(std::istream& is);
void save_latents(const std::filesystem::path& path, const LatentDataset& data);
LatentDataset load_latents(const std::filesystem::path& path);

/// Encodes every frame with V (deterministic mu, sigma).
LatentDataset encode_episodes(const vae::Vae& vae, const envs::EpisodeDataset& data, std::size_t workers = 1);

}  // namespace wm::mdn
