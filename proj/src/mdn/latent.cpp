#include "wm/mdn/latent.hpp"

#include <fstream>

#include "wm/core/io.hpp"
#include "wm/core/parallel.hpp"

namespace wm::mdn {

namespace {
constexpr char kMagic[4] = {'W', 'M', 'L', 'Z'};

void check_episode(const LatentEpisode& e, std::size_t n_z, std::size_t action_dim) {
  const std::size_t n = e.n_steps();
  if (e.mu.size() != (n + 1) * n_z || e.sigma.size() != e.mu.size() || e.actions.size() != n * action_dim)
    throw std::invalid_argument("LatentEpisode: inconsistent lengths");
}
}  // namespace

std::size_t LatentDataset::total_steps() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.n_steps();
  return n;
}

void write_latents(std::ostream& os, const LatentDataset& data) {
  os.write(kMagic, 4);
  core::write_u16(os, kLatentFileVersion);
  core::write_string(os, data.env_id);
  core::write_u32(os, static_cast<std::uint32_t>(data.n_z));
  core::write_u32(os, static_cast<std::uint32_t>(data.action_dim));
  core::write_u64(os, data.episodes.size());
  for (const auto& e : data.episodes) {
    check_episode(e, data.n_z, data.action_dim);
    core::write_u64(os, e.seed);
    core::write_u32(os, static_cast<std::uint32_t>(e.n_steps()));
    // (mu, sigma) pair per frame
    for (std::size_t t = 0; t <= e.n_steps(); ++t) {
      core::write_f32s(os, std::span(e.mu).subspan(t * data.n_z, data.n_z));
      core::write_f32s(os, std::span(e.sigma).subspan(t * data.n_z, data.n_z));
    }
    core::write_f32s(os, e.actions);
    os.write(reinterpret_cast<const char*>(e.dones.data()), static_cast<std::streamsize>(e.dones.size()));
  }
  if (!os) throw core::FormatError("write_latents: stream write failed");
}

LatentDataset read_latents(std::istream& is) {
  char magic[4];
  core::read_exact(is, magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw core::FormatError("latent file: bad magic");
  const auto version = core::read_u16(is);
  if (version != kLatentFileVersion) throw core::FormatError("latent file: unsupported version " + std::to_string(version));
  LatentDataset d;
  d.env_id = core::read_string(is);
  d.n_z = core::read_u32(is);
  d.action_dim = core::read_u32(is);
  d.episodes.resize(core::read_u64(is));
  for (auto& e : d.episodes) {
    e.seed = core::read_u64(is);
    const std::size_t n = core::read_u32(is);
    e.mu.resize((n + 1) * d.n_z);
    e.sigma.resize((n + 1) * d.n_z);
    for (std::size_t t = 0; t <= n; ++t) {
      core::read_f32s(is, std::span(e.mu).subspan(t * d.n_z, d.n_z));
      core::read_f32s(is, std::span(e.sigma).subspan(t * d.n_z, d.n_z));
    }
    e.actions.resize(n * d.action_dim);
    core::read_f32s(is, e.actions);
    e.dones.resize(n);
    core::read_exact(is, reinterpret_cast<char*>(e.dones.data()), n);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw core::FormatError("latent file: trailing bytes");
  return d;
}

void save_latents(const std::filesystem::path& path, const LatentDataset& data) {
  core::write_file_atomic(path, [&](std::ostream& os) { write_latents(os, data); });
}

LatentDataset load_latents(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw core::FormatError("cannot open latent file " + path.string());
  return read_latents(is);
}

LatentDataset encode_episodes(const vae::Vae& vae, const envs::EpisodeDataset& data, std::size_t workers) {
  LatentDataset out;
  out.env_id = data.env_id;
  out.n_z = vae.config().n_z;
  out.action_dim = data.action_dim;
  out.episodes.resize(data.episodes.size());
  constexpr std::size_t kChunk = 64;
  core::parallel_for(data.episodes.size(), workers, [&](std::size_t i, std::size_t) {
    const auto& src = data.episodes[i];
    auto& dst = out.episodes[i];
    dst.seed = src.seed;
    dst.actions = src.actions;
    dst.dones = src.dones;
    dst.mu.reserve(src.frames.size() * out.n_z);
    dst.sigma.reserve(src.frames.size() * out.n_z);
    for (std::size_t start = 0; start < src.frames.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, src.frames.size() - start);
      std::vector<const envs::Observation*> chunk(n);
      for (std::size_t j = 0; j < n; ++j) chunk[j] = &src.frames[start + j];
      core::Array mu, sigma;
      vae.encode_batch(vae::frames_to_array(chunk), mu, sigma);
      for (double v : mu.storage()) dst.mu.push_back(static_cast<float>(v));
      for (double v : sigma.storage()) dst.sigma.push_back(static_cast<float>(v));
    }
  });
  return out;
}

}  // namespace wm::mdn
