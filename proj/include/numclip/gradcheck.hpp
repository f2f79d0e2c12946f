#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "numclip/autodiff.hpp"
#include "numclip/matrix.hpp"

namespace numclip {

/// Builds a scalar graph on `tape` from leaves bound to the parameters.
using ScalarGraphBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;  // index into the parameter list
  std::size_t worst_row = 0;
  std::size_t worst_col = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

/// Compares backward() gradients with a five-point central difference
/// (f(x-2h) - 8f(x-h) + 8f(x+h) - f(x+2h)) / 12h on every coordinate.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8).
/// Throws Error(non_deterministic_builder) if two forward passes differ.
GradCheckReport gradient_check(const ScalarGraphBuilder& builder,
                               std::span<const Matrix> params, double tolerance,
                               double step = 1e-5);

}  // namespace numclip
