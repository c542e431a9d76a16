#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "matadv/tensor.hpp"

namespace matadv::ad {

class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
/// lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Accumulates adjoints during a backward sweep.
class GradSink {
 public:
  /// Adjoint buffer of node `id`, allocated as zeros on first touch.
  Tensor& at(std::size_t id);
  bool wants(std::size_t id) const;

 private:
  friend class Tape;
  GradSink(const Tape& tape, std::vector<Tensor>& grads) : tape_(tape), grads_(grads) {}
  const Tape& tape_;
  std::vector<Tensor>& grads_;
};

/// grad_out is the node's finished adjoint. Nothing reads it after the call,
/// so a backward rule may overwrite it as scratch.
using BackwardFn = std::function<void(Tensor& grad_out, GradSink& sink)>;

/// Result of one backward sweep.
class Gradients {
 public:
  /// Gradient of the loss w.r.t. `v`; zeros when the loss does not depend on it.
  Tensor of(const Var& v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
};

/// Wengert list. Nodes are appended in evaluation order, which is already a
/// topological order, so backward is a single reverse sweep.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Input that never receives a gradient.
  Var constant(Tensor value);

  /// Appends the result of a primitive. The value must already be finite
  /// (ops check this before recording).
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a one-element loss. Does not mutate the tape, so
  /// repeated calls return identical gradients.
  Gradients backward(const Var& loss) const;

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

// ---- primitives ------------------------------------------------------------
// Binary elementwise ops broadcast rank-2 operands: each dimension must match
// or be 1 on either side.

Var matmul(const Var& a, const Var& b);
/// Fused x W + b with b a 1 x out row; the workhorse of every dense layer.
Var affine(const Var& x, const Var& w, const Var& b);
/// relu(x W + b) as one node, saving the pre-activation buffer.
Var affine_relu(const Var& x, const Var& w, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double c);
Var neg(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
/// Subgradient 0 at the origin.
Var sqrt(const Var& a);

/// Reductions keep the reduced axis with extent 1.
Var sum(const Var& a, std::size_t axis);
Var mean(const Var& a, std::size_t axis);
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// Max/min record the winning index (lowest on ties) and route the adjoint there.
Var max(const Var& a, std::size_t axis);
Var min(const Var& a, std::size_t axis);
/// Max over consecutive blocks of `group` rows: (n*group) x c -> n x c.
Var segment_max(const Var& a, std::size_t group);
/// Sum over consecutive blocks of `group` rows: (n*group) x c -> n x c.
Var segment_sum(const Var& a, std::size_t group);

Var softmax(const Var& a, std::size_t axis);
/// Softmax down each column of a rank-2 tensor: columns are nonnegative and sum to 1.
Var column_softmax(const Var& a);
/// Mean over rows of -log softmax(logits)[row, label].
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

Var concat_cols(const Var& a, const Var& b);
Var gather_rows(const Var& a, std::span<const std::size_t> indices);
Var reshape(const Var& a, Shape shape);
Var clamp(const Var& a, double lo, double hi);
/// Elementwise bounds; adjoint is zero wherever the bound is active.
Var clamp(const Var& a, const Tensor& lo, const Tensor& hi);
/// D[i][j] = |a_i - b_j|^2 for row sets a (n x d) and b (m x d).
Var pairwise_sqdist(const Var& a, const Var& b);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

}  // namespace matadv::ad
