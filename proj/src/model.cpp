#include "numclip/model.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "numclip/error.hpp"

namespace numclip {

std::vector<Matrix*> ModelParams::parameters() {
  std::vector<Matrix*> out;
  if (encoder) out.insert(out.end(), {&encoder->w1, &encoder->b1, &encoder->w2, &encoder->b2});
  out.push_back(&prompts.rows);
  if (delta_variant == DeltaVariant::free_vector) {
    out.push_back(&delta.shift);
  } else {
    out.insert(out.end(), {&delta_net.w1, &delta_net.b1, &delta_net.w2, &delta_net.b2});
  }
  return out;
}

std::vector<Var> ModelVars::leaves() const {
  std::vector<Var> out;
  if (encoder) out.insert(out.end(), {encoder->w1, encoder->b1, encoder->w2, encoder->b2});
  out.push_back(prompts);
  if (delta_net) {
    out.insert(out.end(), {delta_net->w1, delta_net->b1, delta_net->w2, delta_net->b2});
  } else {
    out.push_back(delta);
  }
  return out;
}

ModelVars bind_model(Tape& tape, const ModelParams& model) {
  ModelVars vars{std::nullopt, {}, {}, std::nullopt, model.tau};
  if (model.encoder) vars.encoder = EncoderVars::bind(tape, *model.encoder);
  vars.prompts = tape.leaf(model.prompts.rows);
  if (model.delta_variant == DeltaVariant::free_vector) {
    vars.delta = tape.leaf(model.delta.shift);
  } else {
    vars.delta_net = DeltaNetworkVars::bind(tape, model.delta_net);
  }
  return vars;
}

Var embed(const ModelVars& vars, Tape& tape, const Matrix& x) {
  return vars.encoder ? encode(*vars.encoder, x) : encode_raw(tape, x);
}

Var concept_logits(const ModelVars& vars, Var z) {
  return similarity_logits(z, l2_normalize_rows(vars.prompts), vars.tau);
}

Var refine(const ModelVars& vars, Var probabilities, const BinSpec& spec) {
  return vars.delta_net ? predict(probabilities, spec, *vars.delta_net)
                        : predict(probabilities, spec, vars.delta);
}

std::vector<Prediction> predict_samples(const ModelParams& model, const Matrix& x,
                                        const BinSpec& spec) {
  if (model.bins() != spec.size()) {
    throw Error(Errc::bad_arity, "model has " + std::to_string(model.bins()) + " prompts, spec " +
                                     std::to_string(spec.size()) + " bins");
  }
  Tape tape;
  const ModelVars vars = bind_model(tape, model);
  const Var probs = class_probabilities(concept_logits(vars, embed(vars, tape, x)));
  const Var values = refine(vars, probs, spec);

  std::vector<Prediction> out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto p = probs.value().row(r);
    out[r].probabilities.assign(p.begin(), p.end());
    out[r].value = values.value()(r, 0);
    out[r].coarse_class = argmax(p);
  }
  return out;
}

namespace {

constexpr std::array<char, 4> kMagic = {'N', 'C', 'L', 'P'};
constexpr std::uint32_t kVersionFreeDelta = 1;
constexpr std::uint32_t kVersionDeltaNetwork = 2;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_f64(std::ostream& out, double v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw Error(Errc::bad_checkpoint, "truncated header");
  }
  return to_little(v);
}

void read_into(std::istream& in, Matrix& m) {
  for (double& v : m.data()) {
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) {
      throw Error(Errc::bad_checkpoint, "truncated parameter block");
    }
    v = to_little(v);
  }
}

}  // namespace

void save_checkpoint(const ModelParams& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, model.delta_variant == DeltaVariant::free_vector ? kVersionFreeDelta
                                                                   : kVersionDeltaNetwork);
  write_u32(out, static_cast<std::uint32_t>(model.input_dim()));
  write_u32(out, static_cast<std::uint32_t>(model.encoder ? model.encoder->hidden_dim() : 0));
  write_u32(out, static_cast<std::uint32_t>(model.prompts.dim()));
  write_u32(out, static_cast<std::uint32_t>(model.bins()));
  write_u32(out, 0);

  ModelParams copy = model;
  for (const Matrix* m : copy.parameters()) {
    for (double v : m->data()) write_f64(out, v);
  }
  write_f64(out, model.tau.value());
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw Error(Errc::bad_checkpoint, path.string() + " is not a checkpoint");
  }
  const std::uint32_t version = read_u32(in);
  const std::uint32_t input_dim = read_u32(in);
  const std::uint32_t hidden = read_u32(in);
  const std::uint32_t dim = read_u32(in);
  const std::uint32_t bins = read_u32(in);
  if (read_u32(in) != 0) throw Error(Errc::bad_checkpoint, "nonzero header padding");
  if (version != kVersionFreeDelta && version != kVersionDeltaNetwork) {
    throw Error(Errc::bad_checkpoint, "unsupported version " + std::to_string(version));
  }
  if (dim == 0 || bins < 2 || (hidden == 0 && input_dim != dim)) {
    throw Error(Errc::bad_checkpoint, "inconsistent dimensions");
  }

  ModelParams model;
  if (hidden > 0) {
    model.encoder = EncoderParams{Matrix(input_dim, hidden), Matrix(1, hidden),
                                  Matrix(hidden, dim), Matrix(1, dim)};
  }
  model.prompts.rows = Matrix(bins, dim);
  if (version == kVersionFreeDelta) {
    model.delta_variant = DeltaVariant::free_vector;
    model.delta = DeltaParams::zeros(bins);
  } else {
    const std::size_t h = DeltaNetwork::kDefaultHidden;
    model.delta_variant = DeltaVariant::small_network;
    model.delta_net = DeltaNetwork{Matrix(bins, h), Matrix(1, h), Matrix(h, bins), Matrix(1, bins)};
  }
  for (Matrix* m : model.parameters()) read_into(in, *m);
  Matrix tau(1, 1);
  read_into(in, tau);
  model.tau = Temperature(tau(0, 0));
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(Errc::bad_checkpoint, "trailing bytes after parameters");
  }
  return model;
}

}  // namespace numclip
