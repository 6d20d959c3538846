#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "mxfer/tensor.hpp"

namespace mxfer::ad {

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Gradients of one backward pass, indexed by tape node.
class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> grads) : grads_(std::move(grads)) {}
  /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
  const Tensor& of(const Var& v) const { return grads_.at(v.id()); }

 private:
  std::vector<Tensor> grads_;
};

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Sub,
  Mul,
  Scale,
  AddBias,
  Relu,
  Abs,
  Log,
  Softmax,
  LogSoftmax,
  Sum,
  Mean,
  Reshape,
  Conv2d,
  DepthwiseConv2d,
  CrossEntropy,
};

std::string_view op_name(OpKind kind);

/// Single-threaded reverse-mode tape. Nodes are appended in evaluation order,
/// so the node vector is itself a valid topological order.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Runs reverse accumulation from a scalar `loss`.
  Gradients backward(const Var& loss) const;

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Number of tapes constructed in this process (used to prove gradient-free code paths).
  static std::uint64_t instances_created();

  // Maps the upstream gradient to one gradient per parent (same order as parents).
  using Backward = std::function<std::vector<Tensor>(const Tensor& upstream)>;
  Var record(OpKind kind, Tensor value, std::vector<std::size_t> parents, Backward backward);

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    std::vector<std::size_t> parents;
    Backward backward;
    bool requires_grad;
  };
  std::vector<Node> nodes_;
};

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_bias(const Var& a, const Var& bias);
Var relu(const Var& a);
Var abs(const Var& a);
Var log(const Var& a);
Var softmax(const Var& logits);
Var log_softmax(const Var& logits);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var conv2d(const Var& x, const Var& w, const Var& bias);
/// Fixed (non-trainable) kernel smoothing every channel; gradient flows to x only.
Var depthwise_conv2d(const Var& x, const Tensor& kernel);

/// Mean negative log-likelihood of one-hot `labels` under softmax(logits).
/// Throws std::out_of_range if a label row is not one-hot over the logits' width.
Var cross_entropy(const Var& logits, const Tensor& labels);

/// Convenience: one-hot [n, classes] matrix from class indices.
Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes);

}  // namespace mxfer::ad
