#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "numclip/binning.hpp"
#include "numclip/data.hpp"
#include "numclip/losses.hpp"
#include "numclip/matrix.hpp"
#include "numclip/model.hpp"

namespace numclip {

enum class LossMode { fcrc, infonce };

std::string_view to_string(LossMode mode);
std::string_view to_string(LambdaMode mode);
std::string_view to_string(DeltaVariant variant);

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double tau = Temperature::kDefault;
  double beta = 1.0;
  DistanceKind distance = DistanceKind::absolute;
  LossMode loss = LossMode::fcrc;
  LambdaMode lambda_mode = LambdaMode::mean_norm;
  std::uint64_t seed = 0;
  DeltaVariant delta_variant = DeltaVariant::free_vector;
  std::size_t hidden_dim = 32;
  std::size_t embed_dim = 16;
  bool raw_features = false;  // skip the encoder; features are the embeddings

  /// Error(invalid_argument) naming the first violated constraint.
  void validate() const;
};

/// Adam moments for an ordered parameter list.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step = 0;
  std::vector<Matrix> first;
  std::vector<Matrix> second;
};

/// One bias-corrected Adam update. Moments are created on first use.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double learning_rate);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // mean over the epoch's batches
  std::optional<double> eval_mae;
  std::optional<double> eval_accuracy;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;
};

struct TrainResult {
  ModelParams model;
  TrainHistory history;
};

ModelParams init_model(const TrainConfig& cfg, std::size_t input_dim, std::size_t bins);

/// Mini-batch training of encoder, prompts and δ on the combined objective.
/// `eval`, when given, is scored after every epoch.
TrainResult train(const TrainConfig& cfg, const Dataset& data, const BinSpec& spec,
                  const Dataset* eval = nullptr);

/// `epoch,fcrc_i2t,fcrc_t2i,regression,total,eval_mae,eval_acc`; eval
/// columns are empty when no eval set was supplied.
std::string history_csv(const TrainHistory& history);
void write_history_csv(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace numclip
