#include "wm/envs/env.hpp"

#include <algorithm>
#include <cmath>

namespace wm::envs {

void Observation::to_planar(double* out) const {
  const std::size_t plane = height * width;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < channels; ++c) out[c * plane + i] = pixels[i * channels + c] / 255.0;
}

ActionSpec::ActionSpec(std::vector<double> lo_, std::vector<double> hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
  if (lo.size() != hi.size() || lo.empty()) throw std::invalid_argument("ActionSpec: bounds must be non-empty and equal length");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw std::invalid_argument("ActionSpec: lo must be < hi in every dimension");
}

Observation Environment::reset(std::uint64_t seed) {
  done_ = false;
  started_ = true;
  steps_ = 0;
  return do_reset(seed);
}

StepResult Environment::step(std::span<const double> action) {
  if (!started_) throw EpisodeFinished(id() + ": step() before reset()");
  if (done_) throw EpisodeFinished(id() + ": step() after episode end; call reset()");
  const ActionSpec& spec = action_spec();
  if (action.size() != spec.dim())
    throw std::invalid_argument(id() + ": action has " + std::to_string(action.size()) + " dims, expected " +
                                std::to_string(spec.dim()));
  scratch_.assign(action.begin(), action.end());
  bool clipped = false;
  for (std::size_t i = 0; i < scratch_.size(); ++i) {
    double& a = scratch_[i];
    if (std::isnan(a)) {
      a = 0.5 * (spec.lo[i] + spec.hi[i]);
      clipped = true;
    } else if (a < spec.lo[i] || a > spec.hi[i]) {
      a = std::clamp(a, spec.lo[i], spec.hi[i]);
      clipped = true;
    }
  }
  if (clipped) ++clipped_;
  ++steps_;
  StepResult r = do_step(scratch_);
  if (steps_ >= max_steps() && !r.done) {
    r.done = true;
    r.truncated = true;
  }
  r.step_index = steps_;
  done_ = r.done;
  return r;
}

}  // namespace wm::envs
