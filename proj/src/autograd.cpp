#include "etx/autograd.hpp"

#include "etx/error.hpp"

namespace etx {

Tensor& Var::tensor() const { return tape().nodes_[id_].get(); }

bool Var::requires_grad() const { return tape().nodes_[id_].requires_grad; }

Tape& Var::tape() const {
  if (!tape_) throw UsageError("use of an unbound Var");
  return *tape_;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), nullptr, false}); }

Var Tape::input(Tensor value) { return push(Node{std::move(value), nullptr, true}); }

Var Tape::parameter(Tensor& param) { return push(Node{Tensor{}, &param, true}); }

// Never written through: nodes without requires_grad receive no gradient.
Var Tape::view(const Tensor& value) { return push(Node{Tensor{}, const_cast<Tensor*>(&value), false}); }

Var Tape::record(Tensor output, std::initializer_list<Var> inputs, BackwardRule rule) {
  bool needs_grad = false;
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw UsageError("op mixes tensors from different tapes");
    needs_grad = needs_grad || in.requires_grad();
  }
  Var out = push(Node{std::move(output), nullptr, needs_grad});
  if (needs_grad) ops_.push_back(Op{out.id_, std::move(rule)});
  return out;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw UsageError("backward called on a tensor from another tape");
  if (!loss.requires_grad()) throw UsageError("backward on a detached tensor: nothing upstream requires a gradient");
  if (loss.tensor().numel() != 1) throw UsageError("backward requires a scalar loss");

  for (Node& node : nodes_) {
    if (!node.requires_grad) continue;
    if (node.external) {
      node.external->ensure_grad();
    } else {
      node.owned.ensure_grad();
      node.owned.zero_grad();
    }
  }
  loss.tensor().grad()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->rule(nodes_[it->output].get());
}

}  // namespace etx
