#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "numclip/autodiff.hpp"
#include "numclip/error.hpp"
#include "numclip/gradcheck.hpp"
#include "numclip/losses.hpp"
#include "support.hpp"

using namespace numclip;
using numclip::testing::away_from_zero;
using numclip::testing::random_matrix;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected numclip::Error");
  return Errc::invalid_argument;
}

// Scalar probe of an arbitrary-shaped output: sum(out ⊙ R) for fixed R.
Var probe(Var out, const Matrix& weights) {
  return sum(mul(out, out.tape->constant(weights)));
}

}  // namespace

TEST_CASE("build_op forward examples") {
  Tape tape;
  SUBCASE("matmul of ones") {
    const Var a = tape.leaf(Matrix(2, 3, 1.0));
    const Var b = tape.leaf(Matrix(3, 2, 1.0));
    const Var c = matmul(a, b);
    CHECK(c.value() == Matrix(2, 2, 3.0));
  }
  SUBCASE("log of one") {
    const Var x = tape.leaf(Matrix(1, 1, 1.0));
    CHECK(log(x).value()(0, 0) == 0.0);
  }
  SUBCASE("softmax of equal logits") {
    const Var x = tape.leaf(Matrix{{0.0, 0.0}});
    const Var p = row_softmax(x);
    CHECK(p.value()(0, 0) == 0.5);
    CHECK(p.value()(0, 1) == 0.5);
  }
  SUBCASE("generic entry point") {
    const Var a = tape.leaf(Matrix{{1.0, 2.0}});
    const Var in[] = {a, a};
    CHECK(build_op(OpKind::add, in).value() == Matrix{{2.0, 4.0}});
  }
}

TEST_CASE("build_op errors") {
  Tape tape;
  const Var a = tape.leaf(Matrix(2, 3, 1.0));
  const Var b = tape.leaf(Matrix(2, 3, 1.0));
  CHECK(code_of([&] { matmul(a, b); }) == Errc::shape_mismatch);
  CHECK(code_of([&] { add(a, tape.leaf(Matrix(3, 2))); }) == Errc::shape_mismatch);
  CHECK(code_of([&] { log(tape.leaf(Matrix{{1.0, 0.0}})); }) == Errc::domain_error);
  CHECK(code_of([&] { log(tape.leaf(Matrix{{-2.0}})); }) == Errc::domain_error);
  CHECK(code_of([&] { row_select(a, {0, 2}); }) == Errc::index_out_of_range);
  CHECK(code_of([&] { exp(tape.leaf(Matrix{{1000.0}})); }) == Errc::non_finite);
}

TEST_CASE("l2_normalize_rows") {
  Tape tape;
  SUBCASE("3-4-5 row") {
    const Var y = l2_normalize_rows(tape.leaf(Matrix{{3.0, 4.0}}));
    CHECK(y.value()(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(y.value()(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("unit row is unchanged") {
    const Var y = l2_normalize_rows(tape.leaf(Matrix{{1.0, 0.0, 0.0}}));
    CHECK(y.value() == Matrix{{1.0, 0.0, 0.0}});
  }
  SUBCASE("zero row") {
    CHECK(code_of([&] { l2_normalize_rows(tape.leaf(Matrix{{1.0, 1.0}, {0.0, 0.0}})); }) ==
          Errc::zero_row);
  }
  SUBCASE("unit norm on random input") {
    Rng rng(3);
    const Var y = l2_normalize_rows(tape.leaf(random_matrix(rng, 6, 5)));
    for (std::size_t r = 0; r < 6; ++r) {
      CHECK(std::abs(numclip::testing::row_norm(y.value(), r) - 1.0) < 1e-12);
    }
  }
  SUBCASE("gradient matches central differences with step 1e-6") {
    Rng rng(11);
    const Matrix x = random_matrix(rng, 4, 8);
    const Matrix weights = random_matrix(rng, 4, 8);
    const std::vector<Matrix> params{x};
    const auto report = gradient_check(
        [&](Tape&, std::span<const Var> p) { return probe(l2_normalize_rows(p[0]), weights); },
        params, 1e-6, 1e-6);
    CHECK(report.passed);
    CHECK(report.max_relative_error < 1e-6);
  }
}

TEST_CASE("backward examples") {
  SUBCASE("x squared") {
    Tape tape;
    const Var x = tape.leaf(Matrix{{3.0}});
    tape.backward(mul(x, x));
    CHECK(x.grad()(0, 0) == 6.0);
  }
  SUBCASE("fan-out accumulates") {
    Tape tape;
    const Var a = tape.leaf(Matrix{{0.3, -1.2}});
    tape.backward(sum(add(a, a)));
    CHECK(a.grad() == Matrix{{2.0, 2.0}});
  }
  SUBCASE("mean") {
    Tape tape;
    const Var a = tape.leaf(Matrix{{1.0, 2.0, 3.0, 4.0}});
    tape.backward(mean(a));
    CHECK(a.grad() == Matrix(1, 4, 0.25));
  }
  SUBCASE("non-scalar root") {
    Tape tape;
    const Var a = tape.leaf(Matrix{{1.0, 2.0}});
    CHECK(code_of([&] { tape.backward(a); }) == Errc::non_scalar_root);
  }
  SUBCASE("constants receive no gradient") {
    Tape tape;
    const Var c = tape.constant(Matrix{{2.0}});
    const Var x = tape.leaf(Matrix{{5.0}});
    tape.backward(mul(c, x));
    CHECK(x.grad()(0, 0) == 2.0);
    CHECK(c.grad()(0, 0) == 0.0);
  }
  SUBCASE("repeated backward does not double count") {
    Tape tape;
    const Var x = tape.leaf(Matrix{{1.5}});
    const Var y = mul(x, x);
    tape.backward(y);
    tape.backward(y);
    CHECK(x.grad()(0, 0) == 3.0);
  }
}

TEST_CASE("gradient_check examples") {
  SUBCASE("quadratic") {
    const std::vector<Matrix> params{Matrix{{3.0}}};
    const auto report = gradient_check(
        [](Tape&, std::span<const Var> p) { return mul(p[0], p[0]); }, params, 1e-8, 1e-6);
    CHECK(report.max_relative_error < 1e-8);
    CHECK(report.passed);
  }
  SUBCASE("sum of exp") {
    Rng rng(5);
    const std::vector<Matrix> params{random_matrix(rng, 2, 2)};
    const auto report = gradient_check(
        [](Tape&, std::span<const Var> p) { return sum(exp(p[0])); }, params, 1e-6);
    CHECK(report.passed);
  }
  SUBCASE("full FCRC loss on random 6x8 embeddings") {
    Rng rng(21);
    const std::vector<Matrix> params{random_matrix(rng, 6, 8), random_matrix(rng, 6, 8)};
    const std::vector<double> labels{18.0, 25.0, 33.0, 41.0, 58.0, 70.0};
    const LambdaMatrix lambda = compute_lambda(labels, DistanceKind::absolute, 1.0);
    const auto report = gradient_check(
        [&](Tape&, std::span<const Var> p) {
          const Var sim = scale(matmul(l2_normalize_rows(p[0]), transpose(l2_normalize_rows(p[1]))),
                                1.0 / 0.07);
          return add(fcrc(sim, lambda, Direction::image_anchored),
                     fcrc(sim, lambda, Direction::text_anchored));
        },
        params, 1e-5, 1e-4);
    CHECK(report.passed);
  }
  SUBCASE("tolerance below the floating-point floor reports the worst coordinate") {
    Rng rng(8);
    const std::vector<Matrix> params{random_matrix(rng, 3, 3)};
    const auto report = gradient_check(
        [](Tape&, std::span<const Var> p) { return sum(tanh(exp(p[0]))); }, params, 1e-15, 1e-6);
    CHECK_FALSE(report.passed);
    CHECK(report.worst_row < 3);
    CHECK(report.worst_col < 3);
  }
  SUBCASE("non-deterministic builder") {
    int calls = 0;
    const std::vector<Matrix> params{Matrix{{1.0}}};
    CHECK(code_of([&] {
            gradient_check(
                [&](Tape&, std::span<const Var> p) { return scale(p[0], ++calls); }, params, 1e-6);
          }) == Errc::non_deterministic_builder);
  }
}

namespace {

struct RandomGraph {
  std::vector<Matrix> params;
  ScalarGraphBuilder builder;
};

// One random single-op graph of the given kind, probed to a scalar.
RandomGraph random_graph(OpKind kind, Rng& rng) {
  const std::size_t r = 1 + rng.index(4);
  // Single-column softmax and normalization outputs are constant, which leaves
  // only roundoff in the numerical gradient.
  const bool row_op = kind == OpKind::row_softmax || kind == OpKind::l2_normalize_rows;
  const std::size_t c = (row_op ? 2 : 1) + rng.index(4);
  RandomGraph g;
  Matrix weights = random_matrix(rng, r, c);
  auto unary = [&](Matrix input, auto op) {
    g.params = {std::move(input)};
    g.builder = [weights, op](Tape&, std::span<const Var> p) { return probe(op(p[0]), weights); };
  };
  switch (kind) {
    case OpKind::matmul: {
      const std::size_t k = 1 + rng.index(4);
      g.params = {random_matrix(rng, r, k), random_matrix(rng, k, c)};
      g.builder = [weights](Tape&, std::span<const Var> p) {
        return probe(matmul(p[0], p[1]), weights);
      };
      break;
    }
    case OpKind::add:
    case OpKind::mul:
      g.params = {random_matrix(rng, r, c), random_matrix(rng, r, c)};
      g.builder = [weights, kind](Tape&, std::span<const Var> p) {
        return probe(kind == OpKind::add ? add(p[0], p[1]) : mul(p[0], p[1]), weights);
      };
      break;
    case OpKind::scale: {
      const double s = rng.uniform(-3.0, 3.0);
      unary(random_matrix(rng, r, c), [s](Var x) { return scale(x, s); });
      break;
    }
    case OpKind::exp: unary(random_matrix(rng, r, c), [](Var x) { return exp(x); }); break;
    case OpKind::log: unary(random_matrix(rng, r, c, 0.2, 3.0), [](Var x) { return log(x); }); break;
    case OpKind::negate: unary(random_matrix(rng, r, c), [](Var x) { return negate(x); }); break;
    case OpKind::sum:
      g.params = {random_matrix(rng, r, c)};
      g.builder = [](Tape&, std::span<const Var> p) { return mul(sum(p[0]), sum(p[0])); };
      break;
    case OpKind::mean:
      g.params = {random_matrix(rng, r, c)};
      g.builder = [](Tape&, std::span<const Var> p) { return exp(mean(p[0])); };
      break;
    case OpKind::row_softmax:
      unary(random_matrix(rng, r, c, -3.0, 3.0), [](Var x) { return row_softmax(x); });
      break;
    case OpKind::l2_normalize_rows:
      unary(away_from_zero(rng, r, c, 0.1), [](Var x) { return l2_normalize_rows(x); });
      break;
    case OpKind::tanh: unary(random_matrix(rng, r, c, -2.0, 2.0), [](Var x) { return tanh(x); }); break;
    case OpKind::relu: unary(away_from_zero(rng, r, c, 0.05), [](Var x) { return relu(x); }); break;
    case OpKind::transpose: {
      Matrix w = random_matrix(rng, c, r);
      g.params = {random_matrix(rng, r, c)};
      g.builder = [w](Tape&, std::span<const Var> p) { return probe(transpose(p[0]), w); };
      break;
    }
    case OpKind::row_select: {
      std::vector<std::size_t> idx(1 + rng.index(5));
      for (auto& i : idx) i = rng.index(r);
      Matrix w = random_matrix(rng, idx.size(), c);
      g.params = {random_matrix(rng, r, c)};
      g.builder = [w, idx](Tape&, std::span<const Var> p) { return probe(row_select(p[0], idx), w); };
      break;
    }
    case OpKind::leaf:
      break;
  }
  return g;
}

}  // namespace

TEST_CASE("every op kind matches finite differences on 100 random graphs") {
  const OpKind kinds[] = {OpKind::matmul, OpKind::add,        OpKind::mul,
                          OpKind::scale,  OpKind::exp,        OpKind::log,
                          OpKind::negate, OpKind::sum,        OpKind::mean,
                          OpKind::row_softmax, OpKind::l2_normalize_rows, OpKind::tanh,
                          OpKind::relu,   OpKind::transpose,  OpKind::row_select};
  for (OpKind kind : kinds) {
    CAPTURE(to_string(kind));
    Rng rng(1000 + static_cast<std::uint64_t>(kind));
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const RandomGraph g = random_graph(kind, rng);
      const auto report = gradient_check(g.builder, g.params, 1e-5, 1e-4);
      worst = std::max(worst, report.max_relative_error);
    }
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("shared subexpressions accumulate like the expanded graph") {
  Rng rng(42);
  const Matrix x0 = random_matrix(rng, 3, 4);
  const Matrix w0 = random_matrix(rng, 4, 2);

  Tape shared;
  const Var x1 = shared.leaf(x0);
  const Var w1 = shared.leaf(w0);
  const Var h = tanh(matmul(x1, w1));
  shared.backward(sum(mul(h, exp(h))));

  Tape expanded;
  const Var x2 = expanded.leaf(x0);
  const Var w2 = expanded.leaf(w0);
  const Var ha = tanh(matmul(x2, w2));
  const Var hb = tanh(matmul(x2, w2));
  expanded.backward(sum(mul(ha, exp(hb))));

  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(x1.grad().data()[i] == doctest::Approx(x2.grad().data()[i]).epsilon(1e-14));
  }
  for (std::size_t i = 0; i < w0.size(); ++i) {
    CHECK(w1.grad().data()[i] == doctest::Approx(w2.grad().data()[i]).epsilon(1e-14));
  }
}

TEST_CASE("forward results are bit-identical across runs") {
  Rng rng(9);
  const Matrix x = random_matrix(rng, 5, 6);
  auto run = [&] {
    Tape tape;
    const Var v = tape.leaf(x);
    return row_softmax(matmul(l2_normalize_rows(v), transpose(tanh(v)))).value();
  };
  const Matrix a = run();
  const Matrix b = run();
  CHECK(std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0);
}
