#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "decg/tensor.hpp"

namespace decg {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

/// Records forward operations and replays them in reverse to produce gradients.
///
/// Leaves are either owned constants or bound parameters. A bound parameter
/// reads its value from the caller's tensor and, after backward(), has the
/// gradient added into that tensor's grad buffer. Gradients accumulate across
/// fan-out and across repeated backward calls until the caller zeroes them.
///
/// When recording is disabled (evaluation), operations still compute values but
/// no backward rules are kept. References returned by value() stay valid for the
/// lifetime of the tape.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var constant(Tensor<T> value) { return push(std::move(value), nullptr, nullptr, false); }

  /// Binds a caller-owned tensor; its grad buffer receives gradients on backward().
  Var parameter(Tensor<T>& bound) {
    return push(Tensor<T>{}, &bound, &bound, recording_ && bound.requires_grad());
  }
  /// Binds a caller-owned tensor read-only.
  Var parameter(const Tensor<T>& bound) { return push(Tensor<T>{}, &bound, nullptr, false); }

  /// Appends an operation result. `backward` reads grad(out) and adds into the inputs' grads.
  Var record(Tensor<T> out, bool needs_grad, BackwardFn backward, const char* op_name) {
    if (!out.all_finite()) {
      throw NumericError(std::string("non-finite value produced by ") + op_name);
    }
    const bool keep = recording_ && needs_grad;
    Var v = push(std::move(out), nullptr, nullptr, keep);
    if (keep) ops_.push_back(Op{v, std::move(backward)});
    return v;
  }

  const Tensor<T>& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.view ? *n.view : n.owned;
  }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient buffer for a node, zero-initialized on first access.
  std::span<T> grad(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad.assign(value(v).size(), T{0});
    return n.grad;
  }
  bool has_grad(Var v) const { return !nodes_.at(v.id).grad.empty(); }

  template <class... Vs>
  bool any_needs_grad(Vs... vs) const {
    return recording_ && (... || (vs.valid() && needs_grad(vs)));
  }

  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw ShapeError("backward requires a scalar loss, got shape " + shape(loss).str());
    }
    if (!needs_grad(loss)) return;
    grad(loss)[0] += T{1};
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (has_grad(it->out)) it->backward(*this, it->out);
    }
    for (Node& n : nodes_) {
      if (n.sink && n.needs_grad && !n.grad.empty()) {
        auto g = n.sink->grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
      }
    }
  }

  std::size_t num_ops() const { return ops_.size(); }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* view = nullptr;
    Tensor<T>* sink = nullptr;
    bool needs_grad = false;
    std::vector<T> grad;
  };
  struct Op {
    Var out;
    BackwardFn backward;
  };

  Var push(Tensor<T> value, const Tensor<T>* view, Tensor<T>* sink, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), view, sink, needs_grad, {}});
    return Var{nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // stable references across push_back
  std::vector<Op> ops_;
  bool recording_;
};

}  // namespace decg
