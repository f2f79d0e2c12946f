#include "numclip/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "numclip/error.hpp"

namespace numclip {

LambdaMatrix LambdaMatrix::uniform(std::size_t batch) {
  LambdaMatrix out{Matrix(batch, batch, 1.0), std::vector<bool>(batch, false)};
  for (std::size_t i = 0; i < batch; ++i) out.weights(i, i) = 0.0;
  return out;
}

LambdaMatrix compute_lambda(std::span<const double> labels, DistanceKind kind, double beta,
                            LambdaOptions options) {
  const std::size_t m = labels.size();
  if (m < 2) throw Error(Errc::batch_too_small, "need at least two samples for negatives");
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw Error(Errc::invalid_argument, "beta must be positive");
  }

  LambdaMatrix out{Matrix(m, m), std::vector<bool>(m, false)};
  const double negatives = static_cast<double>(m - 1);
  std::vector<double> d(m);
  for (std::size_t i = 0; i < m; ++i) {
    double dsum = 0.0;
    double dmax = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      d[j] = j == i ? 0.0 : beta * label_distance(labels[i], labels[j], kind);
      dsum += d[j];
      dmax = std::max(dmax, d[j]);
    }
    auto row = out.weights.row(i);
    if (dmax == 0.0) {
      out.degenerate[i] = true;
      if (options.degenerate_fallback) {
        std::fill(row.begin(), row.end(), 1.0);
        row[i] = 0.0;
      }
      continue;
    }
    if (options.mode == LambdaMode::mean_norm) {
      const double row_mean = dsum / negatives;
      for (std::size_t j = 0; j < m; ++j) row[j] = j == i ? 0.0 : d[j] / row_mean;
    } else {
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (j != i) z += row[j] = std::exp(d[j] - dmax);
      }
      for (std::size_t j = 0; j < m; ++j) row[j] = j == i ? 0.0 : negatives * row[j] / z;
    }
  }
  return out;
}

Var fcrc(Var similarities, const LambdaMatrix& lambda, Direction direction) {
  const Matrix& s = similarities.value();
  if (s.rows() != s.cols()) {
    throw Error(Errc::shape_mismatch, "similarity matrix must be square");
  }
  if (lambda.weights.rows() != s.rows() || lambda.weights.cols() != s.cols()) {
    throw Error(Errc::shape_mismatch, "lambda is " + std::to_string(lambda.weights.rows()) + "x" +
                                          std::to_string(lambda.weights.cols()) +
                                          ", similarities " + std::to_string(s.rows()) + "x" +
                                          std::to_string(s.cols()));
  }
  if (!s.all_finite()) throw Error(Errc::non_finite, "similarity matrix is not finite");

  Tape& tape = *similarities.tape;
  const std::size_t m = s.rows();
  Var logits = direction == Direction::text_anchored ? transpose(similarities) : similarities;

  // Subtract each row's max as a constant; the loss is invariant to it.
  Matrix shift(m, m);
  {
    const Matrix& v = logits.value();
    for (std::size_t i = 0; i < m; ++i) {
      const auto r = v.row(i);
      const double mx = *std::max_element(r.begin(), r.end());
      for (double& x : shift.row(i)) x = -mx;
    }
  }
  Matrix weights = lambda.weights;
  for (std::size_t i = 0; i < m; ++i) weights(i, i) = 1.0;

  const Var shifted = add(logits, tape.constant(std::move(shift)));
  const Var denom = row_sum(mul(exp(shifted), tape.constant(std::move(weights))));
  return mean(sub(log(denom), diagonal(shifted)));
}

Var infonce(Var similarities, Direction direction) {
  return fcrc(similarities, LambdaMatrix::uniform(similarities.rows()), direction);
}

Var regression_loss(Var predictions, std::span<const double> targets) {
  if (predictions.cols() != 1 || predictions.rows() != targets.size()) {
    throw Error(Errc::length_mismatch, std::to_string(predictions.rows()) + "x" +
                                           std::to_string(predictions.cols()) +
                                           " predictions vs " + std::to_string(targets.size()) +
                                           " targets");
  }
  const Var t = predictions.tape->constant(Matrix::column_vector(targets));
  return mean(abs(sub(predictions, t)));
}

TotalLoss total_loss(Var z, Var w, const LambdaMatrix& lambda_i2t, const LambdaMatrix& lambda_t2i,
                     Var predictions, std::span<const double> targets, Temperature tau) {
  const std::size_t m = z.rows();
  if (w.rows() != m || lambda_i2t.batch() != m || lambda_t2i.batch() != m ||
      predictions.rows() != m || targets.size() != m) {
    throw Error(Errc::inconsistent_batch, "batch components disagree on size");
  }
  const Var sim = similarity_logits(z, w, tau);
  const Var i2t = fcrc(sim, lambda_i2t, Direction::image_anchored);
  const Var t2i = fcrc(sim, lambda_t2i, Direction::text_anchored);
  const Var reg = regression_loss(predictions, targets);
  const Var total = add(scale(add(i2t, t2i), 0.5), reg);

  TotalLoss out{{}, total};
  out.breakdown.fcrc_image_to_text = i2t.value()(0, 0);
  out.breakdown.fcrc_text_to_image = t2i.value()(0, 0);
  out.breakdown.regression = reg.value()(0, 0);
  out.breakdown.total = total.value()(0, 0);
  return out;
}

}  // namespace numclip
