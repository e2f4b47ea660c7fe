#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wm::envs {

/// H×W×3 image, stored as 8-bit levels; channel value = level / 255.
/// Environments render from an 8-bit palette, so this storage is lossless.
struct Observation {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major HWC

  static constexpr std::size_t channels = 3;

  Observation() = default;
  Observation(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * channels, 0) {}

  double at(std::size_t row, std::size_t col, std::size_t ch) const {
    return pixels[(row * width + col) * channels + ch] / 255.0;
  }
  void set(std::size_t row, std::size_t col, const std::uint8_t rgb[3]) {
    auto* p = &pixels[(row * width + col) * channels];
    p[0] = rgb[0];
    p[1] = rgb[1];
    p[2] = rgb[2];
  }
  /// Writes the frame as planar [3, H, W] values in [0, 1].
  void to_planar(double* out) const;

  friend bool operator==(const Observation&, const Observation&) = default;
};

struct ActionSpec {
  std::vector<double> lo;
  std::vector<double> hi;

  ActionSpec() = default;
  ActionSpec(std::vector<double> lo_, std::vector<double> hi_);
  std::size_t dim() const noexcept { return lo.size(); }
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  bool truncated = false;  // done only because the step cap was reached
  std::size_t step_index = 0;
};

/// Thrown when stepping an episode that already reported done.
class EpisodeFinished : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Gym-style environment. Implementations are single-threaded; use one
/// instance per worker.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string id() const = 0;
  virtual const ActionSpec& action_spec() const = 0;
  virtual std::size_t height() const = 0;
  virtual std::size_t width() const = 0;
  virtual std::size_t max_steps() const = 0;
  /// Lowest achievable episode return; used to score crashed rollouts.
  virtual double min_return() const = 0;

  Observation reset(std::uint64_t seed);
  /// Out-of-bounds actions are clipped and counted in clipped_actions().
  StepResult step(std::span<const double> action);

  bool done() const noexcept { return done_; }
  std::size_t step_count() const noexcept { return steps_; }
  std::size_t clipped_actions() const noexcept { return clipped_; }

 protected:
  virtual Observation do_reset(std::uint64_t seed) = 0;
  /// Receives an in-bounds action; returns (reward, terminal) and renders into obs.
  virtual StepResult do_step(std::span<const double> action) = 0;

 private:
  bool done_ = true;
  bool started_ = false;
  std::size_t steps_ = 0;
  std::size_t clipped_ = 0;
  std::vector<double> scratch_;
};

}  // namespace wm::envs
