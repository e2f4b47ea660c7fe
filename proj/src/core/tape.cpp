#include "wm/core/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace wm::core {

const Array& Var::value() const {
  if (!tape_) throw std::logic_error("Var::value on an empty handle");
  return tape_->value(*this);
}

std::size_t Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  Node& stored = nodes_.back();
  if (!stored.value) stored.value = &stored.owned;
  return nodes_.size() - 1;
}

void Tape::check(const Var& v) const {
  if (v.tape_ != this) throw std::logic_error("Var belongs to a different tape");
}

Var Tape::constant(Array value) {
  Node n;
  n.owned = std::move(value);
  return Var(this, push(std::move(n)));
}

Var Tape::variable(Array value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return Var(this, push(std::move(n)));
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = &p.value;
  n.requires_grad = p.trainable;
  n.param = p.trainable ? &p : nullptr;
  return Var(this, push(std::move(n)));
}

const Array& Tape::value(const Var& v) const {
  check(v);
  return *nodes_[v.id_].value;
}

Array Tape::grad(const Var& v) const {
  check(v);
  const Node& n = nodes_[v.id_];
  if (n.grad.empty()) return Array(n.value->shape());
  return n.grad;
}

Array& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Array(n.value->shape());
  return n.grad;
}

Var Tape::record(Array value, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(parents), std::move(fn));
}

Var Tape::record(Array value, const std::vector<Var>& parents, BackwardFn fn) {
  Node n;
  n.owned = std::move(value);
  n.parents.reserve(parents.size());
  for (const auto& p : parents) {
    check(p);
    n.parents.push_back(p.id_);
    n.requires_grad = n.requires_grad || nodes_[p.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return Var(this, push(std::move(n)));
}

void Tape::backward(const Var& loss) {
  check(loss);
  const Array& lv = value(loss);
  if (lv.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_string(lv.shape()));
  if (!std::isfinite(lv[0])) throw NumericalError("backward: loss is not finite");
  for (auto& n : nodes_) n.grad = Array();
  grad_buffer(loss.id_)[0] = 1.0;
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, i);
  }
  for (auto& n : nodes_) {
    if (!n.param || n.grad.empty()) continue;
    if (n.param->grad.shape() != n.param->value.shape()) n.param->zero_grad();
    auto& dst = n.param->grad.storage();
    const auto& src = n.grad.storage();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

}  // namespace wm::core
