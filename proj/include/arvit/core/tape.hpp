#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "arvit/core/tensor.hpp"

namespace arvit {

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; only valid while the
// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

// Gradient buffers handed to backward rules. slot() lazily allocates a zero
// tensor of the input's shape, or returns nullptr for inputs that do not
// need a gradient.
class GradBuffers {
 public:
  explicit GradBuffers(const Tape& tape);

  Tensor* slot(std::size_t id);
  const Tensor* find(std::size_t id) const;

 private:
  friend class Tape;
  const Tape* tape_;
  std::vector<std::optional<Tensor>> grads_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradBuffers& grads)>;

// Result of a backward pass: one accumulated gradient per reachable tensor
// that requires grad.
class Gradients {
 public:
  explicit Gradients(GradBuffers buffers) : buffers_(std::move(buffers)) {}

  const Tensor* find(Var v) const { return buffers_.find(v.id); }
  bool has(Var v) const { return find(v) != nullptr; }
  // Gradient, or zeros when no path connects `v` to the loss.
  Tensor get_or_zero(Var v) const;

 private:
  GradBuffers buffers_;
};

// Records forward operations in execution order so gradients can be
// propagated in reverse. Single-writer: one forward/backward pass owns it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Appends the output of an operation. The output requires grad iff any
  // input does; the backward rule is dropped otherwise. Throws NumericError
  // when `value` holds NaN or Inf.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward,
             std::string_view op);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward,
             std::string_view op);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const {
    return nodes_.at(id).inputs;
  }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  // Reverse-mode sweep from a one-element loss. The seed gradient is 1.
  Gradients backward(Var loss) const;

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::string op;
  };

  std::deque<Node> nodes_;  // deque: value() references stay valid as the tape grows
};

}  // namespace arvit
