#pragma once

// Central finite-difference oracle for the gradient tape. Test-only; it
// evaluates the loss purely through forward values and never reads the
// tape's backward results.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "wm/core/ops.hpp"
#include "wm/core/rng.hpp"

namespace wm::testing {

using core::Array;
using core::Parameter;
using core::Tape;
using core::Var;

struct GradReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Entries whose difference quotients at h and h/10 disagree: the probe
  /// straddles a ReLU kink, where no derivative exists.
  std::size_t kinks = 0;
};

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

/// Checks d loss / d inputs where loss = build(tape, leaves) is scalar.
/// Non-scalar builders should project onto a fixed random direction first
/// (see project_loss).
inline GradReport check_inputs(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                               std::vector<Array> inputs, double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& a : inputs) leaves.push_back(tape.variable(a));
  Var loss = build(tape, leaves);
  tape.backward(loss);
  GradReport rep;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Array analytic = tape.grad(leaves[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        std::vector<Array> perturbed = inputs;
        perturbed[k][i] += delta;
        Tape t;
        std::vector<Var> ls;
        for (const auto& a : perturbed) ls.push_back(t.constant(a));
        return build(t, ls).value().item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2 * h);
      rep.max_rel_error = std::max(rep.max_rel_error, rel_error(analytic[i], numeric));
      ++rep.checked;
    }
  }
  return rep;
}

/// Checks parameter gradients for a sampled subset of entries per tensor.
inline GradReport check_parameters(const std::function<double()>& forward_loss,
                                   const std::function<void()>& backward_into_grads,
                                   const std::vector<Parameter*>& params, std::size_t per_tensor,
                                   core::RngStream& rng, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  backward_into_grads();
  GradReport rep;
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    const std::size_t count = std::min(per_tensor, n);
    for (std::size_t c = 0; c < count; ++c) {
      const std::size_t i = count == n ? c : rng.below(n);
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = forward_loss();
      p->value[i] = orig - h;
      const double down = forward_loss();
      p->value[i] = orig;
      const double numeric = (up - down) / (2 * h);
      p->value[i] = orig + h / 10;
      const double up_fine = forward_loss();
      p->value[i] = orig - h / 10;
      const double down_fine = forward_loss();
      p->value[i] = orig;
      if (rel_error(numeric, (up_fine - down_fine) / (2 * h / 10)) > 1e-4) ++rep.kinks;
      rep.max_rel_error = std::max(rep.max_rel_error, rel_error(p->grad[i], numeric));
      ++rep.checked;
    }
  }
  return rep;
}

/// Scalar loss sum(out * r) for a fixed random r, exercising the full Jacobian.
inline Var project_loss(Tape& tape, const Var& out, std::uint64_t seed) {
  core::RngStream rng(seed, "projection");
  Array r(out.shape());
  for (auto& v : r.storage()) v = rng.normal();
  return core::ops::sum(core::ops::mul(out, tape.constant(std::move(r))));
}

inline Array random_array(core::Shape shape, core::RngStream& rng, double scale = 1.0) {
  Array a(std::move(shape));
  for (auto& v : a.storage()) v = scale * rng.normal();
  return a;
}

}  // namespace wm::testing
