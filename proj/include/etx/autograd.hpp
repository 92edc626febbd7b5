#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <vector>

#include "etx/tensor.hpp"

namespace etx {

class Tape;

/// Handle to a tensor recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  Tensor& tensor() const;
  const Shape& shape() const { return tensor().shape(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Eager record-then-reverse autodiff.
///
/// Ops compute their output immediately and, when any input requires a
/// gradient, append a backward rule. backward() zeroes every owned gradient,
/// seeds the scalar loss with 1 and replays the rules in reverse order.
/// Parameter leaves alias tensors owned elsewhere (a Network); their gradients
/// accumulate across backward calls until the owner zeroes them.
///
/// A tape is single-threaded. Separate tapes share nothing.
class Tape {
 public:
  // Receives the op's output tensor, whose gradient is populated by then.
  using BackwardRule = std::function<void(const Tensor& output)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value);
  Var parameter(Tensor& param);
  // Non-owning, gradient-free alias of a tensor that outlives the tape.
  Var view(const Tensor& value);

  // Registers an op result computed from `inputs`.
  Var record(Tensor output, std::initializer_list<Var> inputs, BackwardRule rule);

  void backward(const Var& loss);

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return ops_.size(); }

 private:
  friend class Var;

  struct Node {
    Tensor owned;
    Tensor* external = nullptr;
    bool requires_grad = false;
    Tensor& get() { return external ? *external : owned; }
  };
  struct Op {
    std::size_t output;
    BackwardRule rule;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::vector<Op> ops_;
};

}  // namespace etx
