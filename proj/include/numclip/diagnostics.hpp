#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "numclip/binning.hpp"
#include "numclip/data.hpp"
#include "numclip/matrix.hpp"
#include "numclip/model.hpp"

namespace numclip {

/// Joint pmf over a finite |Z| x |W| alphabet.
class DiscreteJoint {
 public:
  /// Error(invalid_pmf) unless entries are ≥ 0, finite and sum to 1 within 1e-12.
  explicit DiscreteJoint(Matrix table);

  const Matrix& table() const noexcept { return table_; }
  std::size_t z_size() const noexcept { return table_.rows(); }
  std::size_t w_size() const noexcept { return table_.cols(); }
  std::vector<double> z_marginal() const;
  std::vector<double> w_marginal() const;
  /// P(w | z) / P(w); requires strictly positive marginals.
  Matrix density_ratio() const;

 private:
  Matrix table_;
};

/// Mutual information in nats, with 0 log 0 = 0.
double exact_mi(const DiscreteJoint& joint);

/// MI of the joint p(z) q(w | z) induced by a conditional sampler.
double conditional_mi(std::span<const double> z_marginal, const Matrix& conditional);

/// Conditional distributions used to draw negatives given the anchor z.
namespace negatives {
/// q(w | z) = p(w): the classical independent-negative setting.
Matrix independent(const DiscreteJoint& joint);
/// q(w | z) ∝ p(w) exp(-decay |w - z|), symbols indexed as ordinal labels.
Matrix ordinal_neighbor(const DiscreteJoint& joint, double decay);
}  // namespace negatives

struct MIReport {
  double exact_mi = 0.0;
  double infonce_value = 0.0;  // expected InfoNCE under the optimal critic
  double bound_lhs = 0.0;      // log M - InfoNCE
  double general_lhs = 0.0;    // I(w_i, z_i) - E_j I(w_j, z_i)
  bool holds_eq2 = false;      // exact_mi ≥ bound_lhs - 1e-9
  bool holds_eq3 = false;      // general_lhs ≥ bound_lhs - 1e-9
};

struct MIOptions {
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  /// q(w | z) for negatives (|Z| x |W|); empty means independent.
  Matrix negative_conditional;
  /// Enumerate every batch when there are at most kExhaustiveLimit of them.
  bool exhaustive_when_small = true;
  static constexpr std::size_t kExhaustiveLimit = 1000000;
};

struct MIEstimate {
  MIReport report;
  double infonce_stderr = 0.0;  // 0 when exhaustive
  bool exhaustive = false;
};

/// Checks the InfoNCE mutual-information bounds under the optimal critic
/// f(z, w) = P(w|z)/P(w) with one positive and M-1 negatives per batch.
/// Error(alphabet_too_large) for |Z||W| > 64, Error(degenerate_marginal) for
/// a zero-probability symbol, Error(batch_too_small) for M < 2.
MIEstimate verify_mi_bound(const DiscreteJoint& joint, std::size_t batch, const MIOptions& options);

struct LambdaConditions {
  bool condition1 = false;  // pooled cov(λ, ratio) < 0
  bool condition2 = false;  // every non-degenerate row-mean within 1e-9 of 1
  double covariance = 0.0;
};

/// λ from mean normalization, compared with per-pair density ratios
/// (M x M, diagonal ignored).
LambdaConditions lambda_condition_check(std::span<const double> labels, DistanceKind kind,
                                        const Matrix& ratios);

struct Metrics {
  double mae = 0.0;
  double coarse_accuracy = 0.0;
  double ordinality_spearman = 0.0;
};

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

/// Spearman correlation between bin index and the first principal
/// component of the normalized prompt rows, with the axis oriented from the
/// first bin towards the last.
double ordinality_spearman(const Matrix& prompt_rows);

/// Error(empty_dataset) for an empty or unbinned dataset.
Metrics evaluate(const ModelParams& model, const Dataset& data, const BinSpec& spec);

}  // namespace numclip
