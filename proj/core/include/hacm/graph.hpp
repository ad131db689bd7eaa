// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "hacm/tensor.hpp"

namespace hacm {

/// A trainable (or frozen) array owned by a model. Graph leaves created
/// with Graph::param accumulate their gradient into `grad`.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  bool decay = false;  // subject to decoupled weight decay

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool train = true, bool wd = false)
      : name(std::move(n)), value(std::move(v)), trainable(train), decay(wd) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Graph;

/// Handle to a value recorded in a Graph. Cheap to copy; valid while the
/// graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  /// Gradient of a leaf after Graph::backward; empty if none reached it.
  /// Interior nodes release their gradient once it has been propagated.
  const Tensor& grad() const;

 private:
  friend class Graph;
  Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

/// What a primitive's backward closure sees. `din[i]` is null when input i
/// needs no gradient; otherwise it is a zero-initialised (or partially
/// accumulated) buffer of the input's shape that the closure adds into.
struct BackwardArgs {
  const Tensor& out;
  const Tensor& dout;
  std::span<const Tensor* const> in;
  std::span<Tensor* const> din;
};

using BackwardFn = std::function<void(const BackwardArgs&)>;

/// Tape of executed primitives. Nodes are appended in execution order, so
/// the record is topologically sorted by construction. A graph supports a
/// single backward pass.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is kept on the node (read it via Var::grad).
  Var variable(Tensor value);
  /// Leaf bound to a model parameter; backward adds into `p.grad`.
  Var param(Parameter& p);

  /// Appends a primitive's output. Throws NumericError naming `op` if the
  /// value is not finite. `fn` may be empty for non-differentiable ops.
  Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(fn));
  }

  struct Seed {
    Var var;
    Tensor grad;
  };

  /// Reverse pass from a one-element loss with seed 1.
  void backward(Var loss);
  /// Reverse pass from several outputs with explicit upstream gradients.
  void backward(std::span<const Seed> seeds);

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const { return node(v).grad; }
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  const char* op_name(Var v) const { return node(v).op; }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool backward_done() const noexcept { return backward_done_; }

  /// With gradients disabled nothing requires grad and no closures are kept.
  void set_grad_enabled(bool enabled) noexcept { grad_enabled_ = enabled; }
  bool grad_enabled() const noexcept { return grad_enabled_; }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Var push(Node n);

  std::deque<Node> nodes_;
  bool backward_done_ = false;
  bool grad_enabled_ = true;
};

}  // namespace hacm
