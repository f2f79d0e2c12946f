#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <vector>

#include "numclip/autodiff.hpp"
#include "numclip/binning.hpp"
#include "numclip/embeddings.hpp"
#include "numclip/head.hpp"
#include "numclip/matrix.hpp"

namespace numclip {

enum class DeltaVariant { free_vector, small_network };

/// Everything a trained model needs for inference.
struct ModelParams {
  std::optional<EncoderParams> encoder;  // empty: raw features are the embeddings
  PromptTable prompts;
  DeltaVariant delta_variant = DeltaVariant::free_vector;
  DeltaParams delta;
  DeltaNetwork delta_net;  // used by DeltaVariant::small_network
  Temperature tau;

  std::size_t input_dim() const { return encoder ? encoder->input_dim() : prompts.dim(); }
  std::size_t bins() const { return prompts.bins(); }

  /// Trainable matrices in serialization order.
  std::vector<Matrix*> parameters();
};

/// ModelParams bound as leaves of one tape.
struct ModelVars {
  std::optional<EncoderVars> encoder;
  Var prompts;
  Var delta;
  std::optional<DeltaNetworkVars> delta_net;
  Temperature tau;

  /// Leaves in the same order as ModelParams::parameters().
  std::vector<Var> leaves() const;
};

ModelVars bind_model(Tape& tape, const ModelParams& model);

/// Unit-norm image-side embeddings.
Var embed(const ModelVars& vars, Tape& tape, const Matrix& x);
/// N x K logits against every (normalized) prompt row.
Var concept_logits(const ModelVars& vars, Var z);
/// Refined prediction: expected bin center under the class probabilities.
Var refine(const ModelVars& vars, Var probabilities, const BinSpec& spec);

std::vector<Prediction> predict_samples(const ModelParams& model, const Matrix& x,
                                        const BinSpec& spec);

/// Binary checkpoint: "NCLP", u32 version, u32 D_in, u32 H, u32 D, u32 K,
/// 4 zero bytes, then little-endian doubles in parameter order followed by τ.
/// H = 0 marks a model without encoder; version 2 carries the δ network.
void save_checkpoint(const ModelParams& model, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace numclip
