#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "wm/core/array.hpp"

namespace wm::core {

/// A named trainable tensor. `grad` accumulates across backward passes until
/// zero_grad() is called.
struct Parameter {
  std::string name;
  Array value;
  Array grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Array v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Array(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Operations append nodes in execution order;
/// backward() replays them in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  /// Differentiable leaf whose gradient can be read back with grad().
  Var variable(Array value);
  /// Leaf bound to a parameter; backward() adds into p.grad when p.trainable.
  Var parameter(Parameter& p);

  const Array& value(const Var& v) const;
  /// Gradient of the last backward() loss w.r.t. v (zeros if none flowed).
  Array grad(const Var& v) const;

  /// Loss must be a finite single-element value.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Interface for operation implementations.
  Var record(Array value, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Array value, const std::vector<Var>& parents, BackwardFn fn);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Array& node_value(std::size_t id) const { return *nodes_[id].value; }
  const Array& node_grad(std::size_t id) const { return nodes_[id].grad; }
  std::size_t parent(std::size_t id, std::size_t k) const { return nodes_[id].parents[k]; }
  /// Gradient buffer of a node, allocated as zeros on first use.
  Array& grad_buffer(std::size_t id);

 private:
  struct Node {
    Array owned;
    const Array* value = nullptr;
    Array grad;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
  };
  std::size_t push(Node node);
  void check(const Var& v) const;

  std::deque<Node> nodes_;
};

}  // namespace wm::core
