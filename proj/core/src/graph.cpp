// SPDX-License-Identifier: Apache-2.0
#include "hacm/graph.hpp"

#include <algorithm>

#include "hacm/error.hpp"

namespace hacm {

const Tensor& Var::value() const { return graph_->value(*this); }
const Tensor& Var::grad() const { return graph_->grad(*this); }

const Graph::Node& Graph::node(Var v) const {
  if (v.graph_ != this || v.id_ >= nodes_.size()) {
    throw GraphError("graph: variable does not belong to this graph");
  }
  return nodes_[v.id_];
}

namespace {

bool same_layout(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && a.shape() == b.shape();
}

}  // namespace

Var Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::variable(Tensor value) {
  Node n;
  n.op = "variable";
  n.value = std::move(value);
  n.requires_grad = grad_enabled_;
  return push(std::move(n));
}

Var Graph::param(Parameter& p) {
  Node n;
  n.op = "param";
  n.value = p.value;
  n.requires_grad = grad_enabled_ && p.trainable;
  n.param = n.requires_grad ? &p : nullptr;
  return push(std::move(n));
}

Var Graph::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + ": produced a non-finite value");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  bool any = false;
  for (const Var& v : inputs) {
    any = any || node(v).requires_grad;
    n.inputs.push_back(v.id_);
  }
  n.requires_grad = grad_enabled_ && any && static_cast<bool>(fn);
  if (n.requires_grad) n.backward = std::move(fn);
  return push(std::move(n));
}

void Graph::backward(Var loss) {
  const Tensor& v = node(loss).value;
  if (v.size() != 1) {
    throw GraphError("backward: loss must be a scalar, got shape " + shape_str(v.shape()));
  }
  Seed s{loss, Tensor(v.shape(), 1.0)};
  backward(std::span<const Seed>(&s, 1));
}

void Graph::backward(std::span<const Seed> seeds) {
  if (backward_done_) {
    throw GraphError("backward: this graph has already been differentiated");
  }
  backward_done_ = true;

  std::uint32_t top = 0;
  for (const Seed& s : seeds) {
    const Node& n = node(s.var);
    if (s.grad.shape() != n.value.shape()) {
      throw ShapeError("backward: seed gradient " + shape_str(s.grad.shape()) +
                       " does not match value " + shape_str(n.value.shape()));
    }
    top = std::max(top, s.var.id_ + 1);
  }
  for (const Seed& s : seeds) {
    Node& n = nodes_[s.var.id_];
    if (!n.requires_grad) continue;
    if (!same_layout(n.grad, n.value)) n.grad = Tensor(n.value.shape());
    for (std::size_t i = 0; i < s.grad.size(); ++i) n.grad[i] += s.grad[i];
  }

  std::vector<const Tensor*> in;
  std::vector<Tensor*> din;
  for (std::uint32_t id = top; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !same_layout(n.grad, n.value)) continue;
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (!same_layout(p.grad, p.value)) p.grad = Tensor(p.value.shape());
      for (std::size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
      continue;
    }
    if (!n.backward) continue;
    in.clear();
    din.clear();
    for (std::uint32_t src : n.inputs) {
      Node& m = nodes_[src];
      in.push_back(&m.value);
      if (m.requires_grad) {
        if (!same_layout(m.grad, m.value)) m.grad = Tensor(m.value.shape());
        din.push_back(&m.grad);
      } else {
        din.push_back(nullptr);
      }
    }
    n.backward(BackwardArgs{n.value, n.grad, in, din});
    // Interior gradients are consumed; only leaves keep theirs.
    n.grad = Tensor();
  }
}

}  // namespace hacm
