#include "numclip/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "numclip/error.hpp"

namespace numclip {

namespace {

constexpr double kDenominatorFloor = 1e-8;

double evaluate(const ScalarGraphBuilder& builder, std::span<const Matrix> params) {
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  const Var root = builder(tape, leaves);
  if (!root.value().is_scalar()) throw Error(Errc::non_scalar_root, "builder must return 1x1");
  return root.value()(0, 0);
}

}  // namespace

GradCheckReport gradient_check(const ScalarGraphBuilder& builder,
                               std::span<const Matrix> params, double tolerance, double step) {
  if (!(tolerance > 0.0) || !(step > 0.0)) {
    throw Error(Errc::invalid_argument, "tolerance and step must be positive");
  }

  std::vector<Matrix> analytic;
  double first = 0.0;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p));
    const Var root = builder(tape, leaves);
    tape.backward(root);
    first = root.value()(0, 0);
    for (const Var& v : leaves) analytic.push_back(v.grad());
  }
  const double second = evaluate(builder, params);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw Error(Errc::non_deterministic_builder, "two forward passes disagree");
  }

  GradCheckReport report;
  std::vector<Matrix> probe(params.begin(), params.end());
  for (std::size_t p = 0; p < probe.size(); ++p) {
    for (std::size_t r = 0; r < probe[p].rows(); ++r) {
      for (std::size_t c = 0; c < probe[p].cols(); ++c) {
        const double x0 = probe[p](r, c);
        auto at = [&](double offset) {
          probe[p](r, c) = x0 + offset;
          return evaluate(builder, probe);
        };
        const double fm2 = at(-2.0 * step);
        const double fm1 = at(-step);
        const double fp1 = at(step);
        const double fp2 = at(2.0 * step);
        probe[p](r, c) = x0;

        // Differences first: equal evaluations then cancel exactly.
        const double numeric = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * step);
        const double a = analytic[p](r, c);
        const double denom = std::max({std::abs(a), std::abs(numeric), kDenominatorFloor});
        const double rel = std::abs(a - numeric) / denom;
        if (rel > report.max_relative_error || (p == 0 && r == 0 && c == 0)) {
          report.max_relative_error = rel;
          report.worst_param = p;
          report.worst_row = r;
          report.worst_col = c;
          report.worst_analytic = a;
          report.worst_numeric = numeric;
        }
      }
    }
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

}  // namespace numclip
