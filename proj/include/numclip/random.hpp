#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "numclip/matrix.hpp"

namespace numclip {

/// Seeded generator shared by every stochastic component.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean, double stddev) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev) {
    Matrix m(rows, cols);
    for (double& v : m.data()) v = normal(0.0, stddev);
    return m;
  }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    // Fisher-Yates with our own index draws; std::shuffle's exact sequence is
    // implementation-defined.
    for (std::size_t i = values.size(); i > 1; --i) std::swap(values[i - 1], values[index(i)]);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace numclip
