#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "numclip/autodiff.hpp"
#include "numclip/binning.hpp"
#include "numclip/embeddings.hpp"
#include "numclip/matrix.hpp"

namespace numclip {

enum class LambdaMode {
  mean_norm,  // λ_ij = d_ij / mean_{j'≠i} d_ij'
  exp_norm,   // λ_ij = (M-1) exp(β d_ij) / Σ_{j'≠i} exp(β d_ij')
};

enum class Direction { image_anchored, text_anchored };

/// Per-anchor negative weights. Row i weights the negatives of anchor i;
/// the diagonal (the positive) is stored as 0 and never read.
struct LambdaMatrix {
  Matrix weights;                // M x M
  std::vector<bool> degenerate;  // row had all-zero distances

  std::size_t batch() const { return weights.rows(); }

  /// λ ≡ 1 off the diagonal.
  static LambdaMatrix uniform(std::size_t batch);
};

struct LambdaOptions {
  LambdaMode mode = LambdaMode::mean_norm;
  /// Rows whose distances are all zero get λ ≡ 1; otherwise they stay 0.
  bool degenerate_fallback = true;
};

/// Weights from label distances. Error(batch_too_small) for fewer than two
/// labels, Error(invalid_argument) for β ≤ 0.
LambdaMatrix compute_lambda(std::span<const double> labels, DistanceKind kind, double beta,
                            LambdaOptions options = {});

/// Rank-weighted contrastive loss over a temperature-scaled similarity
/// matrix (entry (i, j) = cos(z_i, w_j) / τ):
///   -1/M Σ_i log( f_ii / (f_ii + Σ_{j≠i} λ_ij f_ij) ),  f = exp(similarity).
/// The text-anchored direction applies the same formula to the transpose.
Var fcrc(Var similarities, const LambdaMatrix& lambda, Direction direction);

/// fcrc with λ ≡ 1.
Var infonce(Var similarities, Direction direction);

/// Mean absolute error of an N x 1 prediction column.
Var regression_loss(Var predictions, std::span<const double> targets);

struct LossBreakdown {
  double fcrc_image_to_text = 0.0;
  double fcrc_text_to_image = 0.0;
  double regression = 0.0;
  double total = 0.0;
};

struct TotalLoss {
  LossBreakdown breakdown;
  Var value;
};

/// (fcrc_i2t + fcrc_t2i) / 2 + regression, with unit regression weight.
/// `z` holds the image embeddings and `w` the paired (per-sample) prompt rows.
TotalLoss total_loss(Var z, Var w, const LambdaMatrix& lambda_i2t, const LambdaMatrix& lambda_t2i,
                     Var predictions, std::span<const double> targets, Temperature tau);

}  // namespace numclip
