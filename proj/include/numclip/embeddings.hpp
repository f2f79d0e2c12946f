#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "numclip/autodiff.hpp"
#include "numclip/matrix.hpp"
#include "numclip/random.hpp"

namespace numclip {

/// Two dense layers with tanh in between: x W1 + b1 -> tanh -> W2 + b2.
struct EncoderParams {
  Matrix w1;  // D_in x H
  Matrix b1;  // 1 x H
  Matrix w2;  // H x D
  Matrix b2;  // 1 x D

  std::size_t input_dim() const { return w1.rows(); }
  std::size_t hidden_dim() const { return w1.cols(); }
  std::size_t output_dim() const { return w2.cols(); }

  /// Gaussian weights with std 1/sqrt(fan_in), zero biases.
  static EncoderParams init(std::size_t input_dim, std::size_t hidden_dim, std::size_t output_dim,
                            Rng& rng);
};

/// One learnable embedding row per concept bin.
struct PromptTable {
  Matrix rows;  // K x D

  std::size_t bins() const { return rows.rows(); }
  std::size_t dim() const { return rows.cols(); }

  static constexpr double kInitStddev = 0.02;
  static PromptTable init(std::size_t bins, std::size_t dim, Rng& rng);
};

class Temperature {
 public:
  static constexpr double kDefault = 0.07;

  explicit Temperature(double tau = kDefault);
  double value() const noexcept { return tau_; }

 private:
  double tau_;
};

/// Encoder parameters bound as leaves on a tape.
struct EncoderVars {
  Var w1, b1, w2, b2;

  static EncoderVars bind(Tape& tape, const EncoderParams& params);
};

/// Row-normalized embeddings of `x` (N x D_in -> N x D).
Var encode(const EncoderVars& encoder, const Matrix& x);
/// Embeddings used directly as features: ℓ2-normalized rows of `x`.
Var encode_raw(Tape& tape, const Matrix& x);

/// Normalized prompt rows gathered in `bins` order; gradients reach only
/// the selected rows of `table`.
Var prompt_rows(Var table, std::span<const std::size_t> bins);

/// Entry (i, k) = cos(z_i, w_k) / tau for unit-norm rows of z and w.
Var similarity_logits(Var z, Var w, Temperature tau);

}  // namespace numclip
