#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "numclip/autodiff.hpp"
#include "numclip/binning.hpp"
#include "numclip/matrix.hpp"
#include "numclip/random.hpp"

namespace numclip {

/// Learnable per-bin shifts δ (1 x K). Prediction uses b_i / (1 + δ_i).
struct DeltaParams {
  static constexpr double kMinScale = 0.5;  // lower bound on 1 + δ_i

  Matrix shift;

  static DeltaParams zeros(std::size_t bins) { return DeltaParams{Matrix(1, bins)}; }
  std::size_t bins() const { return shift.cols(); }
  /// Enforces 1 + δ_i ≥ kMinScale.
  void clamp();
};

/// Input-dependent shifts: δ = 0.5 tanh(tanh(p W1 + b1) W2 + b2), so 1 + δ
/// stays inside (0.5, 1.5) without clamping.
struct DeltaNetwork {
  Matrix w1;  // K x H
  Matrix b1;  // 1 x H
  Matrix w2;  // H x K
  Matrix b2;  // 1 x K

  static constexpr std::size_t kDefaultHidden = 16;
  static DeltaNetwork init(std::size_t bins, std::size_t hidden, Rng& rng);
};

struct DeltaNetworkVars {
  Var w1, b1, w2, b2;
  static DeltaNetworkVars bind(Tape& tape, const DeltaNetwork& net);
};

struct Prediction {
  std::vector<double> probabilities;
  double value = 0.0;
  std::size_t coarse_class = 0;
};

/// Row-softmax of N x K logits.
Var class_probabilities(Var logits);

/// y = Σ_i p_i b_i / (1 + δ_i) with a shared δ row (1 x K). Returns N x 1.
Var predict(Var probabilities, const BinSpec& spec, Var delta);
/// Same refinement with per-sample δ from the small network.
Var predict(Var probabilities, const BinSpec& spec, const DeltaNetworkVars& delta);

/// Index of the largest entry (first one on ties).
std::size_t argmax(std::span<const double> values);

}  // namespace numclip
