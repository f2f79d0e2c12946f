#include "numclip/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "numclip/error.hpp"

namespace numclip {

namespace {

constexpr double kZeroRowNorm = 1e-30;

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void expect_arity(OpKind kind, std::span<const Var> inputs, std::size_t n) {
  if (inputs.size() != n) {
    throw Error(Errc::invalid_argument, std::string(to_string(kind)) + " expects " +
                                            std::to_string(n) + " input(s)");
  }
}

void expect_same_shape(OpKind kind, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw Error(Errc::shape_mismatch, std::string(to_string(kind)) + ": " + shape_str(a) +
                                          " vs " + shape_str(b));
  }
}

Matrix matmul_values(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

// out += a * b^T
void accumulate_a_bt(Matrix& out, const Matrix& a, const Matrix& b) {
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) += acc;
    }
  }
}

// out += a^T * b
void accumulate_at_b(Matrix& out, const Matrix& a, const Matrix& b) {
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto a_row = a.row(k);
    auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
}

template <typename F>
Matrix map(const Matrix& a, F f) {
  Matrix out(a.rows(), a.cols());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

Matrix forward(OpKind kind, std::span<const Var> in, const OpArgs& args) {
  switch (kind) {
    case OpKind::leaf:
      throw Error(Errc::invalid_argument, "leaf nodes are created with Tape::leaf");
    case OpKind::matmul: {
      expect_arity(kind, in, 2);
      const auto& a = in[0].value();
      const auto& b = in[1].value();
      if (a.cols() != b.rows()) {
        throw Error(Errc::shape_mismatch, "matmul: " + shape_str(a) + " * " + shape_str(b));
      }
      return matmul_values(a, b);
    }
    case OpKind::add:
    case OpKind::mul: {
      expect_arity(kind, in, 2);
      const auto& a = in[0].value();
      const auto& b = in[1].value();
      expect_same_shape(kind, a, b);
      Matrix out(a.rows(), a.cols());
      for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = kind == OpKind::add ? a.data()[i] + b.data()[i]
                                            : a.data()[i] * b.data()[i];
      }
      return out;
    }
    case OpKind::scale:
      expect_arity(kind, in, 1);
      return map(in[0].value(), [s = args.scalar](double v) { return s * v; });
    case OpKind::exp:
      expect_arity(kind, in, 1);
      return map(in[0].value(), [](double v) { return std::exp(v); });
    case OpKind::log: {
      expect_arity(kind, in, 1);
      const auto& a = in[0].value();
      for (double v : a.data()) {
        if (!(v > 0.0)) throw Error(Errc::domain_error, "log of non-positive value");
      }
      return map(a, [](double v) { return std::log(v); });
    }
    case OpKind::negate:
      expect_arity(kind, in, 1);
      return map(in[0].value(), [](double v) { return -v; });
    case OpKind::sum:
    case OpKind::mean: {
      expect_arity(kind, in, 1);
      const auto& a = in[0].value();
      if (a.empty()) throw Error(Errc::shape_mismatch, "reduction of empty matrix");
      double acc = 0.0;
      for (double v : a.data()) acc += v;
      if (kind == OpKind::mean) acc /= static_cast<double>(a.size());
      return Matrix(1, 1, acc);
    }
    case OpKind::row_softmax: {
      expect_arity(kind, in, 1);
      const auto& a = in[0].value();
      Matrix out(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto src = a.row(r);
        auto dst = out.row(r);
        const double mx = *std::max_element(src.begin(), src.end());
        double z = 0.0;
        for (std::size_t c = 0; c < src.size(); ++c) z += dst[c] = std::exp(src[c] - mx);
        for (double& v : dst) v /= z;
      }
      return out;
    }
    case OpKind::l2_normalize_rows: {
      expect_arity(kind, in, 1);
      const auto& a = in[0].value();
      Matrix out(a.rows(), a.cols());
      for (std::size_t r = 0; r < a.rows(); ++r) {
        auto src = a.row(r);
        double sq = 0.0;
        for (double v : src) sq += v * v;
        const double norm = std::sqrt(sq);
        if (!(norm >= kZeroRowNorm)) {
          throw Error(Errc::zero_row, "row " + std::to_string(r) + " has zero norm");
        }
        auto dst = out.row(r);
        for (std::size_t c = 0; c < src.size(); ++c) dst[c] = src[c] / norm;
      }
      return out;
    }
    case OpKind::tanh:
      expect_arity(kind, in, 1);
      return map(in[0].value(), [](double v) { return std::tanh(v); });
    case OpKind::relu:
      expect_arity(kind, in, 1);
      return map(in[0].value(), [](double v) { return v > 0.0 ? v : 0.0; });
    case OpKind::transpose: {
      expect_arity(kind, in, 1);
      const auto& a = in[0].value();
      Matrix out(a.cols(), a.rows());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) out(c, r) = a(r, c);
      return out;
    }
    case OpKind::row_select: {
      expect_arity(kind, in, 1);
      const auto& a = in[0].value();
      Matrix out(args.indices.size(), a.cols());
      for (std::size_t r = 0; r < args.indices.size(); ++r) {
        const std::size_t src = args.indices[r];
        if (src >= a.rows()) {
          throw Error(Errc::index_out_of_range, "row_select index " + std::to_string(src) +
                                                    " >= " + std::to_string(a.rows()));
        }
        std::copy_n(a.row(src).begin(), a.cols(), out.row(r).begin());
      }
      return out;
    }
  }
  throw Error(Errc::invalid_argument, "unknown op kind");
}

}  // namespace

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "elementwise-multiply";
    case OpKind::scale: return "scalar-multiply";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::negate: return "negate";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::row_softmax: return "row-softmax";
    case OpKind::l2_normalize_rows: return "l2-normalize-rows";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::transpose: return "transpose";
    case OpKind::row_select: return "row-select";
  }
  return "unknown";
}

const Matrix& Var::value() const { return tape->node(id).value; }
const Matrix& Var::grad() const { return tape->node(id).grad; }

Var Tape::leaf(Matrix value) {
  if (!value.all_finite()) throw Error(Errc::non_finite, "leaf value is not finite");
  Node n;
  n.grad = Matrix(value.rows(), value.cols());
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  Var v = leaf(std::move(value));
  nodes_.back().needs_grad = false;
  return v;
}

Var Tape::build(OpKind kind, std::span<const Var> inputs, OpArgs args) {
  for (const Var& v : inputs) {
    if (v.tape != this) throw Error(Errc::invalid_argument, "input belongs to another tape");
  }
  Matrix value = forward(kind, inputs, args);
  if (!value.all_finite()) {
    throw Error(Errc::non_finite, std::string(to_string(kind)) + " produced a non-finite value");
  }
  Node n;
  n.grad = Matrix(value.rows(), value.cols());
  n.value = std::move(value);
  n.op = kind;
  n.args = std::move(args);
  for (const Var& v : inputs) {
    n.parents.push_back(v.id);
    n.needs_grad = n.needs_grad || nodes_[v.id].needs_grad;
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Matrix& Tape::grad_of(std::size_t id) { return nodes_[id].grad; }

void Tape::backward(Var root) {
  if (root.tape != this) throw Error(Errc::invalid_argument, "root belongs to another tape");
  if (!nodes_.at(root.id).value.is_scalar()) {
    throw Error(Errc::non_scalar_root,
                "backward root is " + shape_str(nodes_[root.id].value));
  }
  for (auto& n : nodes_) n.grad.fill(0.0);
  nodes_[root.id].grad(0, 0) = 1.0;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    if (nodes_[id].needs_grad && nodes_[id].op != OpKind::leaf) propagate(id);
  }
}

void Tape::propagate(std::size_t id) {
  const Node& n = nodes_[id];
  const Matrix& g = n.grad;
  const Matrix& y = n.value;
  auto parent = [&](std::size_t k) -> Node& { return nodes_[n.parents[k]]; };
  auto wants = [&](std::size_t k) { return nodes_[n.parents[k]].needs_grad; };

  switch (n.op) {
    case OpKind::leaf:
      return;
    case OpKind::matmul:
      if (wants(0)) accumulate_a_bt(parent(0).grad, g, parent(1).value);
      if (wants(1)) accumulate_at_b(parent(1).grad, parent(0).value, g);
      return;
    case OpKind::add:
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        auto dst = parent(k).grad.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data()[i];
      }
      return;
    case OpKind::mul:
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        auto dst = parent(k).grad.data();
        auto other = parent(1 - k).value.data();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data()[i] * other[i];
      }
      return;
    case OpKind::scale: {
      auto dst = parent(0).grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += n.args.scalar * g.data()[i];
      return;
    }
    case OpKind::exp: {
      auto dst = parent(0).grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data()[i] * y.data()[i];
      return;
    }
    case OpKind::log: {
      auto dst = parent(0).grad.data();
      auto x = parent(0).value.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g.data()[i] / x[i];
      return;
    }
    case OpKind::negate: {
      auto dst = parent(0).grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] -= g.data()[i];
      return;
    }
    case OpKind::sum:
    case OpKind::mean: {
      auto dst = parent(0).grad.data();
      double s = g(0, 0);
      if (n.op == OpKind::mean) s /= static_cast<double>(dst.size());
      for (double& v : dst) v += s;
      return;
    }
    case OpKind::row_softmax: {
      Matrix& dst = parent(0).grad;
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto gr = g.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < yr.size(); ++c) dot += gr[c] * yr[c];
        auto dr = dst.row(r);
        for (std::size_t c = 0; c < yr.size(); ++c) dr[c] += yr[c] * (gr[c] - dot);
      }
      return;
    }
    case OpKind::l2_normalize_rows: {
      const Matrix& x = parent(0).value;
      Matrix& dst = parent(0).grad;
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto xr = x.row(r);
        auto yr = y.row(r);
        auto gr = g.row(r);
        double sq = 0.0;
        double dot = 0.0;
        for (std::size_t c = 0; c < xr.size(); ++c) {
          sq += xr[c] * xr[c];
          dot += gr[c] * yr[c];
        }
        const double norm = std::sqrt(sq);
        auto dr = dst.row(r);
        for (std::size_t c = 0; c < xr.size(); ++c) dr[c] += (gr[c] - yr[c] * dot) / norm;
      }
      return;
    }
    case OpKind::tanh: {
      auto dst = parent(0).grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        dst[i] += g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
      }
      return;
    }
    case OpKind::relu: {
      auto dst = parent(0).grad.data();
      auto x = parent(0).value.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (x[i] > 0.0) dst[i] += g.data()[i];
      }
      return;
    }
    case OpKind::transpose: {
      Matrix& dst = parent(0).grad;
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) dst(c, r) += g(r, c);
      return;
    }
    case OpKind::row_select: {
      Matrix& dst = parent(0).grad;
      for (std::size_t r = 0; r < n.args.indices.size(); ++r) {
        auto dr = dst.row(n.args.indices[r]);
        auto gr = g.row(r);
        for (std::size_t c = 0; c < gr.size(); ++c) dr[c] += gr[c];
      }
      return;
    }
  }
}

Var build_op(OpKind kind, std::span<const Var> inputs, OpArgs args) {
  if (inputs.empty() || inputs.front().tape == nullptr) {
    throw Error(Errc::invalid_argument, "build_op needs at least one input on a tape");
  }
  return inputs.front().tape->build(kind, inputs, std::move(args));
}

namespace {
Var unary(OpKind kind, Var a, OpArgs args = {}) {
  const Var in[] = {a};
  return build_op(kind, in, std::move(args));
}
Var binary(OpKind kind, Var a, Var b) {
  const Var in[] = {a, b};
  return build_op(kind, in);
}
}  // namespace

Var matmul(Var a, Var b) { return binary(OpKind::matmul, a, b); }
Var add(Var a, Var b) { return binary(OpKind::add, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::mul, a, b); }
Var scale(Var a, double s) { return unary(OpKind::scale, a, OpArgs{s, {}}); }
Var exp(Var a) { return unary(OpKind::exp, a); }
Var log(Var a) { return unary(OpKind::log, a); }
Var negate(Var a) { return unary(OpKind::negate, a); }
Var sum(Var a) { return unary(OpKind::sum, a); }
Var mean(Var a) { return unary(OpKind::mean, a); }
Var row_softmax(Var a) { return unary(OpKind::row_softmax, a); }
Var l2_normalize_rows(Var a) { return unary(OpKind::l2_normalize_rows, a); }
Var tanh(Var a) { return unary(OpKind::tanh, a); }
Var relu(Var a) { return unary(OpKind::relu, a); }
Var transpose(Var a) { return unary(OpKind::transpose, a); }
Var row_select(Var a, std::vector<std::size_t> indices) {
  return unary(OpKind::row_select, a, OpArgs{0.0, std::move(indices)});
}

Var sub(Var a, Var b) { return add(a, negate(b)); }
Var reciprocal(Var a) { return exp(negate(log(a))); }
Var abs(Var a) { return add(relu(a), relu(negate(a))); }

Var row_sum(Var a) {
  return matmul(a, a.tape->constant(Matrix(a.cols(), 1, 1.0)));
}

Var diagonal(Var a) {
  if (a.rows() != a.cols()) {
    throw Error(Errc::shape_mismatch, "diagonal of non-square " + shape_str(a.value()));
  }
  return row_sum(mul(a, a.tape->constant(Matrix::identity(a.rows()))));
}

}  // namespace numclip
