#include "arvit/core/tape.hpp"

#include "arvit/core/errors.hpp"

namespace arvit {

const Tensor& Var::value() const {
  if (tape == nullptr) throw ContractError("use of an unbound Var");
  return tape->value(id);
}

bool Var::requires_grad() const {
  if (tape == nullptr) throw ContractError("use of an unbound Var");
  return tape->requires_grad(id);
}

GradBuffers::GradBuffers(const Tape& tape) : tape_(&tape), grads_(tape.size()) {}

Tensor* GradBuffers::slot(std::size_t id) {
  if (!tape_->requires_grad(id)) return nullptr;
  auto& g = grads_.at(id);
  if (!g) g.emplace(tape_->value(id).shape(), 0.0);
  return &*g;
}

const Tensor* GradBuffers::find(std::size_t id) const {
  if (id >= grads_.size() || !grads_[id]) return nullptr;
  return &*grads_[id];
}

Tensor Gradients::get_or_zero(Var v) const {
  if (const Tensor* g = find(v)) return *g;
  return Tensor::zeros(v.shape());
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_finite(value, "leaf");
  nodes_.push_back(Node{std::move(value), requires_grad, {}, {}, "leaf"});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn backward, std::string_view op) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward), op);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs,
                 BackwardFn backward, std::string_view op) {
  check_finite(value, op);
  Node node;
  node.value = std::move(value);
  node.op = std::string(op);
  for (const Var& v : inputs) {
    if (v.tape != this) {
      throw ContractError("operation " + node.op + " mixes values from different tapes");
    }
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) throw ContractError("loss belongs to a different tape");
  const Tensor& lv = value(loss.id);
  if (lv.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(lv.shape()));
  }
  GradBuffers grads(*this);
  if (!requires_grad(loss.id)) return Gradients(std::move(grads));
  grads.grads_[loss.id] = Tensor(lv.shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.backward || !grads.grads_[i]) continue;
    // grads_ is sized once, so this reference survives slot() allocations.
    const Tensor& grad_out = *grads.grads_[i];
    node.backward(grad_out, grads);
  }
  return Gradients(std::move(grads));
}

}  // namespace arvit
