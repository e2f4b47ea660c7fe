#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "wm/envs/env.hpp"

namespace wm::envs {

/// One rollout. frames holds n_steps + 1 observations (the reset frame first);
/// actions are row-major [n_steps, action_dim].
struct EpisodeRecord {
  std::string env_id;
  std::uint64_t seed = 0;
  std::vector<Observation> frames;
  std::vector<float> actions;
  std::vector<float> rewards;
  std::vector<std::uint8_t> dones;

  std::size_t n_steps() const noexcept { return rewards.size(); }
  double total_return() const;
  /// Throws std::invalid_argument when the length invariants do not hold.
  void validate(std::size_t action_dim) const;

  friend bool operator==(const EpisodeRecord&, const EpisodeRecord&) = default;
};

struct EpisodeDataset {
  std::string env_id;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t action_dim = 0;
  std::vector<EpisodeRecord> episodes;

  std::size_t total_frames() const;

  friend bool operator==(const EpisodeDataset&, const EpisodeDataset&) = default;
};

inline constexpr std::uint16_t kEpisodeFileVersion = 1;

void write_episodes(std::ostream& os, const EpisodeDataset& data);
EpisodeDataset read_episodes(std::istream& is);
/// Atomic: a failed write leaves no file behind.
void save_episodes(const std::filesystem::path& path, const EpisodeDataset& data);
EpisodeDataset load_episodes(const std::filesystem::path& path);

using EnvFactory = std::function<std::unique_ptr<Environment>()>;

/// Runs n_rollouts episodes under a uniform i.i.d. random policy, each sampled
/// action held for action_repeat steps. Episode i is reset with a seed derived
/// from (seed, i), so the dataset does not depend on the worker count.
EpisodeDataset collect_random_rollouts(const EnvFactory& make_env, std::size_t n_rollouts, std::uint64_t seed,
                                       std::size_t action_repeat = 1, std::size_t workers = 1);

/// Rollout count used by the full-scale presets.
inline constexpr std::size_t kFullScaleRollouts = 10000;

std::uint64_t episode_seed(std::uint64_t seed, std::size_t index);

}  // namespace wm::envs
