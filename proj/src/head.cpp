#include "numclip/head.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "numclip/error.hpp"

namespace numclip {

void DeltaParams::clamp() {
  for (double& d : shift.data()) d = std::max(d, kMinScale - 1.0);
}

DeltaNetwork DeltaNetwork::init(std::size_t bins, std::size_t hidden, Rng& rng) {
  DeltaNetwork net;
  net.w1 = rng.normal_matrix(bins, hidden, 1.0 / std::sqrt(static_cast<double>(bins)));
  net.b1 = Matrix(1, hidden);
  net.w2 = rng.normal_matrix(hidden, bins, 0.01);
  net.b2 = Matrix(1, bins);
  return net;
}

DeltaNetworkVars DeltaNetworkVars::bind(Tape& tape, const DeltaNetwork& net) {
  return DeltaNetworkVars{tape.leaf(net.w1), tape.leaf(net.b1), tape.leaf(net.w2),
                          tape.leaf(net.b2)};
}

Var class_probabilities(Var logits) { return row_softmax(logits); }

namespace {

void check_arity(Var probabilities, const BinSpec& spec) {
  if (probabilities.cols() != spec.size()) {
    throw Error(Errc::bad_arity, std::to_string(probabilities.cols()) + " probabilities for " +
                                     std::to_string(spec.size()) + " bins");
  }
}

}  // namespace

Var predict(Var probabilities, const BinSpec& spec, Var delta) {
  check_arity(probabilities, spec);
  if (delta.rows() != 1 || delta.cols() != spec.size()) {
    throw Error(Errc::bad_arity, "delta must be 1x" + std::to_string(spec.size()));
  }
  Tape& tape = *probabilities.tape;
  const Var centers = tape.constant(Matrix::row_vector(spec.centers()));
  const Var ones = tape.constant(Matrix(1, spec.size(), 1.0));
  const Var refined = mul(centers, reciprocal(add(ones, delta)));
  return matmul(probabilities, transpose(refined));
}

Var predict(Var probabilities, const BinSpec& spec, const DeltaNetworkVars& net) {
  check_arity(probabilities, spec);
  if (net.w1.rows() != spec.size() || net.w2.cols() != spec.size()) {
    throw Error(Errc::bad_arity, "delta network does not match bin count");
  }
  Tape& tape = *probabilities.tape;
  const std::size_t n = probabilities.rows();
  const std::size_t k = spec.size();
  const Var ones_col = tape.constant(Matrix(n, 1, 1.0));
  const Var hidden = tanh(add(matmul(probabilities, net.w1), matmul(ones_col, net.b1)));
  const Var delta = scale(tanh(add(matmul(hidden, net.w2), matmul(ones_col, net.b2))), 0.5);

  Matrix centers(n, k);
  for (std::size_t r = 0; r < n; ++r) std::copy(spec.centers().begin(), spec.centers().end(), centers.row(r).begin());
  const Var refined = mul(tape.constant(std::move(centers)),
                          reciprocal(add(tape.constant(Matrix(n, k, 1.0)), delta)));
  return row_sum(mul(probabilities, refined));
}

std::size_t argmax(std::span<const double> values) {
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace numclip
