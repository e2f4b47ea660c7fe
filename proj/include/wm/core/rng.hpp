#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace wm::core {

std::uint64_t splitmix64(std::uint64_t x);
/// FNV-1a over the bytes of `text`; stable across platforms.
std::uint64_t hash_name(std::string_view text);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Seeded random stream identified by (seed, substream). Children derived with
/// split() are independent of each other and of the parent's call sequence.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// standard; uniform and normal variates are converted here rather than with
/// <random> distributions, whose algorithms are implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t substream = 0);
  RngStream(std::uint64_t seed, std::string_view substream);

  RngStream split(std::string_view name) const;
  RngStream split(std::uint64_t index) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t substream() const noexcept { return stream_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wm::core
