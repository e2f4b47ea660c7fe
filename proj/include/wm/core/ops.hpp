#pragma once

// Differentiable primitives. Binary elementwise ops accept either equal shapes
// or a right operand whose shape is a trailing suffix of the left operand's
// shape (e.g. a bias row broadcast over a batch).

#include <cstddef>
#include <vector>

#include "wm/core/tape.hpp"

namespace wm::core::ops {

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var relu(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var square(const Var& x);
Var softplus(const Var& x);

/// Along the last axis.
Var softmax(const Var& x);
Var log_softmax(const Var& x);
/// Reduces the last axis.
Var logsumexp(const Var& x);

/// Sum of all elements (scalar).
Var sum(const Var& x);
Var mean(const Var& x);
/// Reduces the last axis.
Var sum_last(const Var& x);

Var reshape(const Var& x, Shape shape);
Var concat_last(const std::vector<Var>& parts);
/// Elements [begin, end) of the last axis.
Var slice_last(const Var& x, std::size_t begin, std::size_t end);
/// [..., d] -> [..., d, k], each element repeated k times.
Var broadcast_last(const Var& x, std::size_t k);

/// x [N,C,H,W], w [O,C,k,k], b [O]; valid padding.
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride);
/// x [N,C,H,W], w [C,O,k,k], b [O].
Var deconv2d(const Var& x, const Var& w, const Var& b, std::size_t stride);

/// Elementwise binary cross-entropy with logits; targets are not differentiated.
Var bce_with_logits(const Var& logits, const Var& targets);

}  // namespace wm::core::ops

namespace wm::core {
inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }
inline Var operator*(const Var& a, double c) { return ops::scale(a, c); }
inline Var operator*(double c, const Var& a) { return ops::scale(a, c); }
}  // namespace wm::core
