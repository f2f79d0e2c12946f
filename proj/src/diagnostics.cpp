#include "numclip/diagnostics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "numclip/error.hpp"
#include "numclip/losses.hpp"
#include "numclip/random.hpp"

namespace numclip {

namespace {

constexpr double kPmfTolerance = 1e-12;
constexpr double kBoundSlack = 1e-9;
constexpr std::size_t kMaxAlphabet = 64;

double sum_of(std::span<const double> values) {
  return std::accumulate(values.begin(), values.end(), 0.0);
}

}  // namespace

DiscreteJoint::DiscreteJoint(Matrix table) : table_(std::move(table)) {
  if (table_.empty()) throw Error(Errc::invalid_pmf, "empty probability table");
  for (double p : table_.data()) {
    if (!std::isfinite(p) || p < 0.0) throw Error(Errc::invalid_pmf, "negative or non-finite entry");
  }
  if (std::abs(sum_of(table_.data()) - 1.0) > kPmfTolerance) {
    throw Error(Errc::invalid_pmf, "entries do not sum to 1");
  }
}

std::vector<double> DiscreteJoint::z_marginal() const {
  std::vector<double> out(z_size(), 0.0);
  for (std::size_t z = 0; z < z_size(); ++z) out[z] = sum_of(table_.row(z));
  return out;
}

std::vector<double> DiscreteJoint::w_marginal() const {
  std::vector<double> out(w_size(), 0.0);
  for (std::size_t z = 0; z < z_size(); ++z)
    for (std::size_t w = 0; w < w_size(); ++w) out[w] += table_(z, w);
  return out;
}

Matrix DiscreteJoint::density_ratio() const {
  const auto pz = z_marginal();
  const auto pw = w_marginal();
  Matrix out(z_size(), w_size());
  for (std::size_t z = 0; z < z_size(); ++z) {
    for (std::size_t w = 0; w < w_size(); ++w) {
      if (pz[z] <= 0.0 || pw[w] <= 0.0) {
        throw Error(Errc::degenerate_marginal, "zero-probability symbol");
      }
      out(z, w) = table_(z, w) / (pz[z] * pw[w]);
    }
  }
  return out;
}

double exact_mi(const DiscreteJoint& joint) {
  const auto pz = joint.z_marginal();
  const auto pw = joint.w_marginal();
  double mi = 0.0;
  for (std::size_t z = 0; z < joint.z_size(); ++z) {
    for (std::size_t w = 0; w < joint.w_size(); ++w) {
      const double p = joint.table()(z, w);
      if (p > 0.0) mi += p * std::log(p / (pz[z] * pw[w]));
    }
  }
  return std::max(mi, 0.0);
}

double conditional_mi(std::span<const double> z_marginal, const Matrix& conditional) {
  if (conditional.rows() != z_marginal.size()) {
    throw Error(Errc::shape_mismatch, "conditional has one row per z symbol");
  }
  std::vector<double> qw(conditional.cols(), 0.0);
  for (std::size_t z = 0; z < conditional.rows(); ++z)
    for (std::size_t w = 0; w < conditional.cols(); ++w) qw[w] += z_marginal[z] * conditional(z, w);
  double mi = 0.0;
  for (std::size_t z = 0; z < conditional.rows(); ++z) {
    for (std::size_t w = 0; w < conditional.cols(); ++w) {
      const double q = conditional(z, w);
      if (q > 0.0 && z_marginal[z] > 0.0) mi += z_marginal[z] * q * std::log(q / qw[w]);
    }
  }
  return std::max(mi, 0.0);
}

namespace negatives {

Matrix independent(const DiscreteJoint& joint) {
  const auto pw = joint.w_marginal();
  Matrix out(joint.z_size(), joint.w_size());
  for (std::size_t z = 0; z < out.rows(); ++z) std::copy(pw.begin(), pw.end(), out.row(z).begin());
  return out;
}

Matrix ordinal_neighbor(const DiscreteJoint& joint, double decay) {
  if (!(decay >= 0.0)) throw Error(Errc::invalid_argument, "decay must be non-negative");
  const auto pw = joint.w_marginal();
  Matrix out(joint.z_size(), joint.w_size());
  for (std::size_t z = 0; z < out.rows(); ++z) {
    auto row = out.row(z);
    for (std::size_t w = 0; w < row.size(); ++w) {
      const double gap = std::abs(static_cast<double>(w) - static_cast<double>(z));
      row[w] = pw[w] * std::exp(-decay * gap);
    }
    const double total = sum_of(row);
    for (double& v : row) v /= total;
  }
  return out;
}

}  // namespace negatives

namespace {

std::size_t draw(std::span<const double> pmf, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    acc += pmf[i];
    if (u < acc) return i;
  }
  // u landed in the rounding gap above the last cumulative value.
  for (std::size_t i = pmf.size(); i-- > 0;) {
    if (pmf[i] > 0.0) return i;
  }
  return pmf.size() - 1;
}

// Number of (z, w_1, w_2..w_M) configurations, saturating past the limit.
std::size_t configuration_count(std::size_t nz, std::size_t nw, std::size_t batch) {
  const std::size_t cap = MIOptions::kExhaustiveLimit + 1;
  std::size_t count = nz * nw;
  for (std::size_t j = 1; j < batch; ++j) {
    if (count > cap / nw) return cap;
    count *= nw;
  }
  return std::min(count, cap);
}

}  // namespace

MIEstimate verify_mi_bound(const DiscreteJoint& joint, std::size_t batch,
                           const MIOptions& options) {
  if (batch < 2) throw Error(Errc::batch_too_small, "batch size M must be at least 2");
  const std::size_t nz = joint.z_size();
  const std::size_t nw = joint.w_size();
  if (nz * nw > kMaxAlphabet) {
    throw Error(Errc::alphabet_too_large, std::to_string(nz) + "x" + std::to_string(nw) +
                                              " exceeds " + std::to_string(kMaxAlphabet) +
                                              " cells");
  }
  const Matrix ratio = joint.density_ratio();
  const Matrix q = options.negative_conditional.empty() ? negatives::independent(joint)
                                                        : options.negative_conditional;
  if (q.rows() != nz || q.cols() != nw) {
    throw Error(Errc::shape_mismatch, "negative conditional must be |Z| x |W|");
  }
  for (std::size_t z = 0; z < nz; ++z) {
    if (std::abs(sum_of(q.row(z)) - 1.0) > 1e-9) {
      throw Error(Errc::invalid_pmf, "negative conditional row " + std::to_string(z) +
                                         " does not sum to 1");
    }
  }

  const auto pz = joint.z_marginal();
  MIEstimate out;
  out.report.exact_mi = exact_mi(joint);
  const double negative_mi = conditional_mi(pz, q);

  auto loss = [&](std::size_t z, std::size_t w_pos, double negative_sum) {
    const double pos = ratio(z, w_pos);
    return -std::log(pos / (pos + negative_sum));
  };

  const std::size_t configs = configuration_count(nz, nw, batch);
  if (options.exhaustive_when_small && configs <= MIOptions::kExhaustiveLimit) {
    out.exhaustive = true;
    double expected = 0.0;
    std::vector<std::size_t> tuple(batch - 1, 0);
    for (std::size_t z = 0; z < nz; ++z) {
      for (std::size_t w = 0; w < nw; ++w) {
        const double p = joint.table()(z, w);
        if (p <= 0.0) continue;
        std::fill(tuple.begin(), tuple.end(), 0);
        while (true) {
          double prob = p;
          double negative_sum = 0.0;
          for (std::size_t wj : tuple) {
            prob *= q(z, wj);
            negative_sum += ratio(z, wj);
          }
          if (prob > 0.0) expected += prob * loss(z, w, negative_sum);
          std::size_t k = 0;
          while (k < tuple.size() && ++tuple[k] == nw) tuple[k++] = 0;
          if (k == tuple.size()) break;
        }
      }
    }
    out.report.infonce_value = expected;
  } else {
    if (options.trials < 2) throw Error(Errc::invalid_argument, "Monte Carlo needs trials >= 2");
    Rng rng(options.seed);
    const auto& table = joint.table();
    double mean = 0.0;
    double m2 = 0.0;
    for (std::size_t t = 0; t < options.trials; ++t) {
      const std::size_t cell = draw(table.data(), rng.uniform(0.0, 1.0));
      const std::size_t z = cell / nw;
      const std::size_t w = cell % nw;
      double negative_sum = 0.0;
      for (std::size_t j = 1; j < batch; ++j) {
        negative_sum += ratio(z, draw(q.row(z), rng.uniform(0.0, 1.0)));
      }
      const double sample = loss(z, w, negative_sum);
      const double delta = sample - mean;
      mean += delta / static_cast<double>(t + 1);
      m2 += delta * (sample - mean);
    }
    out.report.infonce_value = mean;
    const double n = static_cast<double>(options.trials);
    out.infonce_stderr = std::sqrt(m2 / (n - 1.0) / n);
  }

  out.report.bound_lhs = std::log(static_cast<double>(batch)) - out.report.infonce_value;
  out.report.general_lhs = out.report.exact_mi - negative_mi;
  out.report.holds_eq2 = out.report.exact_mi >= out.report.bound_lhs - kBoundSlack;
  out.report.holds_eq3 = out.report.general_lhs >= out.report.bound_lhs - kBoundSlack;
  return out;
}

LambdaConditions lambda_condition_check(std::span<const double> labels, DistanceKind kind,
                                        const Matrix& ratios) {
  const std::size_t m = labels.size();
  if (ratios.rows() != m || ratios.cols() != m) {
    throw Error(Errc::shape_mismatch, "ratios must be " + std::to_string(m) + "x" +
                                          std::to_string(m));
  }
  if (!ratios.all_finite()) throw Error(Errc::non_finite, "density ratios must be finite");
  const LambdaMatrix lambda = compute_lambda(labels, kind, 1.0);

  LambdaConditions out;
  out.condition2 = true;
  for (std::size_t i = 0; i < m; ++i) {
    if (lambda.degenerate[i]) continue;
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (j != i) row += lambda.weights(i, j);
    }
    if (std::abs(row / static_cast<double>(m - 1) - 1.0) > 1e-9) out.condition2 = false;
  }

  // Pooled sample covariance over all off-diagonal pairs. Ratios are shifted
  // by their first value so a constant ratio gives exactly zero.
  std::vector<double> lam;
  std::vector<double> rat;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      lam.push_back(lambda.weights(i, j));
      rat.push_back(ratios(i, j));
    }
  }
  const double lam_mean = sum_of(lam) / static_cast<double>(lam.size());
  const double anchor = rat.front();
  double cov = 0.0;
  for (std::size_t k = 0; k < lam.size(); ++k) cov += (lam[k] - lam_mean) * (rat[k] - anchor);
  out.covariance = lam.size() > 1 ? cov / static_cast<double>(lam.size() - 1) : 0.0;
  out.condition1 = out.covariance < 0.0;
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::length_mismatch, "spearman inputs differ in length");
  if (a.size() < 2) return 0.0;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = sum_of(ra) / n;
  const double mb = sum_of(rb) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double ordinality_spearman(const Matrix& prompt_rows) {
  const auto k = static_cast<Eigen::Index>(prompt_rows.rows());
  const auto d = static_cast<Eigen::Index>(prompt_rows.cols());
  if (k < 2) return 0.0;
  Eigen::MatrixXd rows(k, d);
  for (Eigen::Index i = 0; i < k; ++i) {
    double sq = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) sq += prompt_rows(i, j) * prompt_rows(i, j);
    const double norm = std::sqrt(sq);
    for (Eigen::Index j = 0; j < d; ++j) rows(i, j) = norm > 0.0 ? prompt_rows(i, j) / norm : 0.0;
  }
  const Eigen::MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  const Eigen::MatrixXd gram = centered * centered.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  // Eigenvalues ascend; the last column spans the principal axis.
  Eigen::VectorXd scores = eig.eigenvectors().col(k - 1) * std::sqrt(std::max(eig.eigenvalues()(k - 1), 0.0));
  if (scores(k - 1) < scores(0)) scores = -scores;

  std::vector<double> index(static_cast<std::size_t>(k));
  std::iota(index.begin(), index.end(), 0.0);
  std::vector<double> projection(scores.data(), scores.data() + k);
  return spearman(index, projection);
}

Metrics evaluate(const ModelParams& model, const Dataset& data, const BinSpec& spec) {
  if (data.size() == 0) throw Error(Errc::empty_dataset, "cannot evaluate an empty dataset");
  if (data.bins.size() != data.size()) throw Error(Errc::invalid_argument, "dataset is not binned");
  const auto preds = predict_samples(model, data.x, spec);
  Metrics m;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    m.mae += std::abs(preds[i].value - data.y[i]);
    if (preds[i].coarse_class == data.bins[i]) ++hits;
  }
  const double n = static_cast<double>(preds.size());
  m.mae /= n;
  m.coarse_accuracy = static_cast<double>(hits) / n;
  m.ordinality_spearman = ordinality_spearman(model.prompts.rows);
  return m;
}

}  // namespace numclip
