#include "wm/envs/episode.hpp"

#include <fstream>
#include <numeric>

#include "wm/core/io.hpp"
#include "wm/core/parallel.hpp"
#include "wm/core/rng.hpp"

namespace wm::envs {

namespace {
constexpr char kMagic[4] = {'W', 'M', 'E', 'P'};
}

double EpisodeRecord::total_return() const {
  return std::accumulate(rewards.begin(), rewards.end(), 0.0, [](double s, float r) { return s + r; });
}

void EpisodeRecord::validate(std::size_t action_dim) const {
  const std::size_t n = rewards.size();
  if (frames.size() != n + 1 || dones.size() != n || actions.size() != n * action_dim)
    throw std::invalid_argument("EpisodeRecord: inconsistent lengths (frames " + std::to_string(frames.size()) +
                                ", actions " + std::to_string(actions.size()) + ", rewards " + std::to_string(n) +
                                ", dones " + std::to_string(dones.size()) + ")");
}

std::size_t EpisodeDataset::total_frames() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.frames.size();
  return n;
}

void write_episodes(std::ostream& os, const EpisodeDataset& data) {
  os.write(kMagic, 4);
  core::write_u16(os, kEpisodeFileVersion);
  core::write_string(os, data.env_id);
  core::write_u32(os, static_cast<std::uint32_t>(data.height));
  core::write_u32(os, static_cast<std::uint32_t>(data.width));
  core::write_u32(os, static_cast<std::uint32_t>(Observation::channels));
  core::write_u32(os, static_cast<std::uint32_t>(data.action_dim));
  core::write_u64(os, data.episodes.size());
  const std::size_t frame_bytes = data.height * data.width * Observation::channels;
  for (const auto& e : data.episodes) {
    e.validate(data.action_dim);
    core::write_u64(os, e.seed);
    core::write_u32(os, static_cast<std::uint32_t>(e.n_steps()));
    for (const auto& f : e.frames) {
      if (f.pixels.size() != frame_bytes) throw std::invalid_argument("write_episodes: frame size differs from header");
      os.write(reinterpret_cast<const char*>(f.pixels.data()), static_cast<std::streamsize>(frame_bytes));
    }
    core::write_f32s(os, e.actions);
    core::write_f32s(os, e.rewards);
    os.write(reinterpret_cast<const char*>(e.dones.data()), static_cast<std::streamsize>(e.dones.size()));
  }
  if (!os) throw core::FormatError("write_episodes: stream write failed");
}

EpisodeDataset read_episodes(std::istream& is) {
  char magic[4];
  core::read_exact(is, magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw core::FormatError("episode file: bad magic");
  const auto version = core::read_u16(is);
  if (version != kEpisodeFileVersion) throw core::FormatError("episode file: unsupported version " + std::to_string(version));
  EpisodeDataset d;
  d.env_id = core::read_string(is);
  d.height = core::read_u32(is);
  d.width = core::read_u32(is);
  const auto channels = core::read_u32(is);
  if (channels != Observation::channels) throw core::FormatError("episode file: expected 3 channels");
  d.action_dim = core::read_u32(is);
  const auto count = core::read_u64(is);
  const std::size_t frame_bytes = d.height * d.width * channels;
  d.episodes.resize(count);
  for (auto& e : d.episodes) {
    e.env_id = d.env_id;
    e.seed = core::read_u64(is);
    const std::size_t n = core::read_u32(is);
    e.frames.resize(n + 1);
    for (auto& f : e.frames) {
      f = Observation(d.height, d.width);
      core::read_exact(is, reinterpret_cast<char*>(f.pixels.data()), frame_bytes);
    }
    e.actions.resize(n * d.action_dim);
    core::read_f32s(is, e.actions);
    e.rewards.resize(n);
    core::read_f32s(is, e.rewards);
    e.dones.resize(n);
    core::read_exact(is, reinterpret_cast<char*>(e.dones.data()), n);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw core::FormatError("episode file: trailing bytes");
  return d;
}

void save_episodes(const std::filesystem::path& path, const EpisodeDataset& data) {
  core::write_file_atomic(path, [&](std::ostream& os) { write_episodes(os, data); });
}

EpisodeDataset load_episodes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw core::FormatError("cannot open episode file " + path.string());
  return read_episodes(is);
}

std::uint64_t episode_seed(std::uint64_t seed, std::size_t index) {
  return core::mix_seed(core::mix_seed(seed, core::hash_name("episode")), index);
}

EpisodeDataset collect_random_rollouts(const EnvFactory& make_env, std::size_t n_rollouts, std::uint64_t seed,
                                       std::size_t action_repeat, std::size_t workers) {
  if (n_rollouts == 0) throw std::invalid_argument("collect_random_rollouts: n_rollouts must be >= 1");
  if (action_repeat == 0) throw std::invalid_argument("collect_random_rollouts: action_repeat must be >= 1");
  EpisodeDataset data;
  {
    auto probe = make_env();
    data.env_id = probe->id();
    data.height = probe->height();
    data.width = probe->width();
    data.action_dim = probe->action_spec().dim();
  }
  data.episodes.resize(n_rollouts);
  const core::RngStream policy_root(seed, "random_policy");
  std::vector<std::unique_ptr<Environment>> envs(std::max<std::size_t>(workers, 1));
  core::parallel_for(n_rollouts, envs.size(), [&](std::size_t i, std::size_t w) {
    if (!envs[w]) envs[w] = make_env();
    Environment& env = *envs[w];
    const ActionSpec& spec = env.action_spec();
    core::RngStream rng = policy_root.split(static_cast<std::uint64_t>(i));
    EpisodeRecord& e = data.episodes[i];
    e.env_id = data.env_id;
    e.seed = episode_seed(seed, i);
    e.frames.push_back(env.reset(e.seed));
    std::vector<double> action(spec.dim());
    while (!env.done()) {
      if (env.step_count() % action_repeat == 0)
        for (std::size_t k = 0; k < action.size(); ++k) action[k] = rng.uniform(spec.lo[k], spec.hi[k]);
      StepResult r = env.step(action);
      e.frames.push_back(std::move(r.observation));
      for (double a : action) e.actions.push_back(static_cast<float>(a));
      e.rewards.push_back(static_cast<float>(r.reward));
      // Only natural terminations are recorded; hitting the step cap is not a death.
      e.dones.push_back(r.done && !r.truncated ? 1 : 0);
    }
  });
  return data;
}

}  // namespace wm::envs
