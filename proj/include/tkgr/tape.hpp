#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Tape records primitive operations in execution order. Each operation
// produces a Var, a lightweight handle to the recorded node. backward()
// walks the tape in reverse and returns gradients for every leaf.
//
//   Tape tape;
//   Var x = tape.leaf(Tensor::scalar(3.0));
//   Var y = mul(x, x);
//   Gradients g = tape.backward(y);   // g.of(x)[0] == 6
//
// A tape belongs to one thread. Nothing here is synchronized.

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "tkgr/tensor.hpp"

namespace tkgr {

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,      // x * c
  kAddScalar,  // x + c
  kMatVec,     // M v, M is r x c, v has c entries
  kVecMat,     // v M, v has r entries, M is r x c
  kRelu,       // max(x, 0) elementwise; subgradient 0 at 0
  kExp,
  kLog,
  kSqrt,
  kConcat,    // vectors -> vector
  kStack,     // equal-length vectors -> matrix rows
  kSum,       // tensor -> scalar
  kDivScalar, // vector / scalar var
  kGatherRow, // matrix row -> vector
};

const char* op_name(Op op) noexcept;

class Tape;

class Var {
 public:
  Var() = default;
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  // Value of a one-element tensor.
  double scalar() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients of a scalar root with respect to every leaf of a tape.
class Gradients {
 public:
  // Gradient for a leaf; zero-filled when the leaf did not influence the root.
  const Tensor& of(Var leaf) const;

 private:
  friend class Tape;
  std::vector<Tensor> grads_;
  std::vector<bool> is_leaf_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable input. Rejects non-finite values.
  Var leaf(Tensor value);
  // Input that receives no gradient. Rejects non-finite values.
  Var constant(Tensor value);

  // Records a primitive. Checks operand shapes and throws ShapeError naming
  // the primitive on mismatch; throws NumericError if the result is not finite.
  Var apply(Op op, std::span<const Var> operands, double aux = 0.0, std::size_t index = 0);

  Gradients backward(Var root) const;

  // Recomputes every non-input node from its parents in recorded order.
  void replay();

  // Replaces the value of an input node; call replay() afterwards.
  void set_input(Var input, Tensor value);

  // For every ReLU node in order, whether each input coordinate is strictly
  // positive. Two evaluations with equal patterns took identical branches.
  std::vector<bool> activation_pattern() const;

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Op op;
    std::uint32_t parent_begin;
    std::uint32_t parent_count;
    double aux;
    std::size_t index;
    Tensor value;
  };

  Tensor compute(const Node& node) const;
  std::span<const std::size_t> parents(const Node& node) const {
    return {parent_pool_.data() + node.parent_begin, node.parent_count};
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> parent_pool_;
};

// Primitive wrappers. All operands must live on the same tape.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var matvec(Var m, Var v);
Var vecmat(Var v, Var m);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var stack(std::span<const Var> rows);
Var sum(Var a);
Var div_scalar(Var v, Var s);
Var gather_row(Var m, std::size_t row);

// Composite helpers built from the primitives.
Var dot(Var a, Var b);
// Softmax with the maximum subtracted as a constant before exponentiation.
Var softmax(Var a);

}  // namespace tkgr
