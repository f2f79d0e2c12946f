#pragma once

#include <cmath>
#include <cstdint>

#include "numclip/matrix.hpp"
#include "numclip/random.hpp"

namespace numclip::testing {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

// Entries with |x| in [margin, 1], random sign: keeps kinks out of reach of
// the finite-difference stencil.
inline Matrix away_from_zero(Rng& rng, std::size_t rows, std::size_t cols, double margin) {
  Matrix m(rows, cols);
  for (double& v : m.data()) {
    const double mag = rng.uniform(margin, 1.0);
    v = rng.uniform(0.0, 1.0) < 0.5 ? -mag : mag;
  }
  return m;
}

inline double row_norm(const Matrix& m, std::size_t r) {
  double sq = 0.0;
  for (double v : m.row(r)) sq += v * v;
  return std::sqrt(sq);
}

}  // namespace numclip::testing
