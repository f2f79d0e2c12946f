#include "numclip/embeddings.hpp"

#include <cmath>
#include <string>

#include "numclip/error.hpp"

namespace numclip {

EncoderParams EncoderParams::init(std::size_t input_dim, std::size_t hidden_dim,
                                  std::size_t output_dim, Rng& rng) {
  if (input_dim == 0 || hidden_dim == 0 || output_dim == 0) {
    throw Error(Errc::invalid_argument, "encoder dimensions must be positive");
  }
  EncoderParams p;
  p.w1 = rng.normal_matrix(input_dim, hidden_dim, 1.0 / std::sqrt(static_cast<double>(input_dim)));
  p.b1 = Matrix(1, hidden_dim);
  p.w2 = rng.normal_matrix(hidden_dim, output_dim, 1.0 / std::sqrt(static_cast<double>(hidden_dim)));
  p.b2 = Matrix(1, output_dim);
  return p;
}

PromptTable PromptTable::init(std::size_t bins, std::size_t dim, Rng& rng) {
  return PromptTable{rng.normal_matrix(bins, dim, kInitStddev)};
}

Temperature::Temperature(double tau) : tau_(tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(Errc::invalid_argument, "temperature must be positive");
  }
}

EncoderVars EncoderVars::bind(Tape& tape, const EncoderParams& params) {
  return EncoderVars{tape.leaf(params.w1), tape.leaf(params.b1), tape.leaf(params.w2),
                     tape.leaf(params.b2)};
}

namespace {
// x W + 1 b, with the bias broadcast expressed as an outer product.
Var affine(Var x, Var w, Var b) {
  Tape& tape = *x.tape;
  const Var ones = tape.constant(Matrix(x.rows(), 1, 1.0));
  return add(matmul(x, w), matmul(ones, b));
}
}  // namespace

Var encode(const EncoderVars& encoder, const Matrix& x) {
  Tape& tape = *encoder.w1.tape;
  if (x.cols() != encoder.w1.rows()) {
    throw Error(Errc::shape_mismatch, "encoder expects " + std::to_string(encoder.w1.rows()) +
                                          " input columns, got " + std::to_string(x.cols()));
  }
  const Var input = tape.constant(x);
  const Var hidden = tanh(affine(input, encoder.w1, encoder.b1));
  return l2_normalize_rows(affine(hidden, encoder.w2, encoder.b2));
}

Var encode_raw(Tape& tape, const Matrix& x) { return l2_normalize_rows(tape.constant(x)); }

Var prompt_rows(Var table, std::span<const std::size_t> bins) {
  for (std::size_t b : bins) {
    if (b >= table.rows()) {
      throw Error(Errc::index_out_of_range, "bin " + std::to_string(b) + " >= " +
                                                std::to_string(table.rows()) + " prompt rows");
    }
  }
  return l2_normalize_rows(row_select(table, std::vector<std::size_t>(bins.begin(), bins.end())));
}

Var similarity_logits(Var z, Var w, Temperature tau) {
  if (z.cols() != w.cols()) {
    throw Error(Errc::shape_mismatch, "embedding dims differ: " + std::to_string(z.cols()) +
                                          " vs " + std::to_string(w.cols()));
  }
  return scale(matmul(z, transpose(w)), 1.0 / tau.value());
}

}  // namespace numclip
