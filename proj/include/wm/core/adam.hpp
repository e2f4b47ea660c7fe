#pragma once

#include <cstdint>
#include <vector>

#include "wm/core/tape.hpp"

namespace wm::core {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Array> m;
  std::vector<Array> v;
  std::uint64_t step = 0;
};

/// One bias-corrected adaptive-moment update using each parameter's grad.
/// State is lazily shaped to the parameter list on the first call.
void adam_step(const std::vector<Parameter*>& params, AdamState& state, const AdamConfig& config);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

void zero_grads(const std::vector<Parameter*>& params);

}  // namespace wm::core
