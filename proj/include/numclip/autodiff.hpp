#pragma once

// Reverse-mode differentiation over a tape of dense matrices.
//
// Nodes are appended to a Tape in creation order, so parents always have
// smaller ids than their children and a reverse sweep is a valid
// topological order. A Var is a lightweight handle (tape pointer + id).

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "numclip/matrix.hpp"

namespace numclip {

enum class OpKind {
  leaf,
  matmul,
  add,
  mul,    // elementwise
  scale,  // scalar times matrix
  exp,
  log,
  negate,
  sum,
  mean,
  row_softmax,
  l2_normalize_rows,
  tanh,
  relu,
  transpose,
  row_select,
};

std::string_view to_string(OpKind kind);

/// Non-tensor arguments some op kinds need.
struct OpArgs {
  double scalar = 0.0;                // scale
  std::vector<std::size_t> indices;   // row_select
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// A DiffNode: forward value, gradient accumulator, op tag and parent links.
struct Node {
  Matrix value;
  Matrix grad;
  OpKind op = OpKind::leaf;
  std::vector<std::size_t> parents;
  OpArgs args;
  bool needs_grad = false;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input. Its gradient is populated by backward().
  Var leaf(Matrix value);
  /// Input excluded from differentiation.
  Var constant(Matrix value);

  Var build(OpKind kind, std::span<const Var> inputs, OpArgs args = {});

  /// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
  /// Gradients from previous calls are discarded.
  void backward(Var root);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  void propagate(std::size_t id);
  Matrix& grad_of(std::size_t id);

  std::vector<Node> nodes_;
};

/// Generic op construction. Throws Error(shape_mismatch | domain_error |
/// zero_row | non_finite) on bad inputs.
Var build_op(OpKind kind, std::span<const Var> inputs, OpArgs args = {});

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var exp(Var a);
Var log(Var a);
Var negate(Var a);
Var sum(Var a);
Var mean(Var a);
Var row_softmax(Var a);
Var l2_normalize_rows(Var a);
Var tanh(Var a);
Var relu(Var a);
Var transpose(Var a);
Var row_select(Var a, std::vector<std::size_t> indices);

Var sub(Var a, Var b);
/// Elementwise 1/x for positive x, composed as exp(-log x).
Var reciprocal(Var a);
/// Elementwise |x| as relu(x) + relu(-x); subgradient 0 at x = 0.
Var abs(Var a);
/// N×1 column of per-row sums.
Var row_sum(Var a);
/// N×1 column holding the diagonal of a square matrix.
Var diagonal(Var a);

}  // namespace numclip
