#include "numclip/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "numclip/error.hpp"
#include "numclip/head.hpp"
#include "numclip/random.hpp"
#include "numclip/text_io.hpp"

namespace numclip {

std::string_view to_string(LossMode mode) {
  return mode == LossMode::fcrc ? "fcrc" : "infonce";
}

std::string_view to_string(LambdaMode mode) {
  return mode == LambdaMode::mean_norm ? "mean" : "exp";
}

std::string_view to_string(DeltaVariant variant) {
  return variant == DeltaVariant::free_vector ? "free-vector" : "small-network";
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(Errc::invalid_argument, "epochs must be at least 1");
  if (batch_size < 2) throw Error(Errc::invalid_argument, "batch size must be at least 2");
  if (!(learning_rate > 0.0)) throw Error(Errc::invalid_argument, "learning rate must be positive");
  if (!(tau > 0.0)) throw Error(Errc::invalid_argument, "temperature must be positive");
  if (!(beta > 0.0)) throw Error(Errc::invalid_argument, "beta must be positive");
  if (!raw_features && (hidden_dim == 0 || embed_dim == 0)) {
    throw Error(Errc::invalid_argument, "encoder dimensions must be positive");
  }
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double learning_rate) {
  if (params.size() != grads.size()) {
    throw Error(Errc::shape_mismatch, "parameter and gradient counts differ");
  }
  if (state.first.empty()) {
    for (const Matrix* p : params) {
      state.first.emplace_back(p->rows(), p->cols());
      state.second.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first.size() != params.size()) {
    throw Error(Errc::shape_mismatch, "optimizer state tracks a different parameter list");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(grads[k]) || !params[k]->same_shape(state.first[k])) {
      throw Error(Errc::shape_mismatch, "parameter " + std::to_string(k) + " shape changed");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->data();
    auto g = grads[k].data();
    auto m = state.first[k].data();
    auto v = state.second[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

ModelParams init_model(const TrainConfig& cfg, std::size_t input_dim, std::size_t bins) {
  Rng rng(cfg.seed);
  ModelParams model;
  std::size_t dim = cfg.embed_dim;
  if (cfg.raw_features) {
    dim = input_dim;
  } else {
    model.encoder = EncoderParams::init(input_dim, cfg.hidden_dim, cfg.embed_dim, rng);
  }
  model.prompts = PromptTable::init(bins, dim, rng);
  model.delta_variant = cfg.delta_variant;
  model.delta = DeltaParams::zeros(bins);
  if (cfg.delta_variant == DeltaVariant::small_network) {
    model.delta_net = DeltaNetwork::init(bins, DeltaNetwork::kDefaultHidden, rng);
  }
  model.tau = Temperature(cfg.tau);
  return model;
}

namespace {

// Per-batch slice of the training set.
struct Batch {
  Matrix x;
  std::vector<double> y;
  std::vector<std::size_t> bins;
};

Batch gather(const Dataset& data, std::span<const std::size_t> idx) {
  Batch b{Matrix(idx.size(), data.dim()), {}, {}};
  for (std::size_t r = 0; r < idx.size(); ++r) {
    std::copy_n(data.x.row(idx[r]).begin(), data.dim(), b.x.row(r).begin());
    b.y.push_back(data.y[idx[r]]);
    b.bins.push_back(data.bins[idx[r]]);
  }
  return b;
}

void score(const ModelParams& model, const Dataset& eval, const BinSpec& spec, EpochRecord& rec) {
  const auto preds = predict_samples(model, eval.x, spec);
  double abs_err = 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    abs_err += std::abs(preds[i].value - eval.y[i]);
    if (preds[i].coarse_class == eval.bins[i]) ++hits;
  }
  rec.eval_mae = abs_err / static_cast<double>(preds.size());
  rec.eval_accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data, const BinSpec& spec,
                  const Dataset* eval) {
  cfg.validate();
  if (data.size() == 0) throw Error(Errc::empty_dataset, "training set is empty");
  if (data.bins.size() != data.size()) {
    throw Error(Errc::invalid_argument, "training set is not binned");
  }
  if (eval && (eval->size() == 0 || eval->bins.size() != eval->size())) {
    throw Error(Errc::empty_dataset, "eval set is empty or not binned");
  }
  if (data.size() < 2) throw Error(Errc::batch_too_small, "need at least two training samples");
  if (cfg.raw_features && data.dim() == 0) {
    throw Error(Errc::invalid_argument, "raw-feature mode needs feature columns");
  }

  TrainResult result{init_model(cfg, data.dim(), spec.size()), {}};
  ModelParams& model = result.model;
  TrainHistory& history = result.history;

  if (cfg.loss == LossMode::fcrc) {
    const bool one_bin = std::all_of(data.bins.begin(), data.bins.end(),
                                     [&](std::size_t b) { return b == data.bins.front(); });
    if (one_bin) {
      history.warnings.push_back("all training samples fall in bin " +
                                 std::to_string(data.bins.front()) +
                                 "; same-label batches use lambda = 1");
    }
  }

  // Shuffling draws from its own stream so parameter init and batch order
  // stay independent of each other.
  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t degenerate_batches = 0;
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      if (len < 2) break;
      const Batch batch = gather(data, std::span(order).subspan(start, len));
      ++global_step;

      try {
        Tape tape;
        const ModelVars vars = bind_model(tape, model);
        const Var z = embed(vars, tape, batch.x);
        const Var w = prompt_rows(vars.prompts, batch.bins);
        LambdaMatrix lambda = LambdaMatrix::uniform(len);
        if (cfg.loss == LossMode::fcrc) {
          lambda = compute_lambda(batch.y, cfg.distance, cfg.beta, {cfg.lambda_mode, true});
          if (std::all_of(lambda.degenerate.begin(), lambda.degenerate.end(),
                          [](bool d) { return d; })) {
            ++degenerate_batches;
          }
        }
        const Var probs = class_probabilities(concept_logits(vars, z));
        const Var pred = refine(vars, probs, spec);
        const TotalLoss loss = total_loss(z, w, lambda, lambda, pred, batch.y, model.tau);
        if (!std::isfinite(loss.breakdown.total)) {
          throw Error(Errc::non_finite, "loss is not finite");
        }
        tape.backward(loss.value);

        std::vector<Matrix> grads;
        for (const Var& leaf : vars.leaves()) grads.push_back(leaf.grad());
        for (const Matrix& g : grads) {
          if (!g.all_finite()) throw Error(Errc::non_finite, "gradient is not finite");
        }
        const auto params = model.parameters();
        adam_step(params, grads, adam, cfg.learning_rate);
        model.delta.clamp();

        rec.loss.fcrc_image_to_text += loss.breakdown.fcrc_image_to_text;
        rec.loss.fcrc_text_to_image += loss.breakdown.fcrc_text_to_image;
        rec.loss.regression += loss.breakdown.regression;
        rec.loss.total += loss.breakdown.total;
        ++batches;
      } catch (const Error& e) {
        if (e.code() != Errc::non_finite) throw;
        throw Error(Errc::non_finite, "epoch " + std::to_string(epoch) + ", step " +
                                          std::to_string(global_step) + ": " + e.what());
      }
    }

    if (batches == 0) throw Error(Errc::batch_too_small, "no batch of at least two samples");
    const double nb = static_cast<double>(batches);
    rec.loss.fcrc_image_to_text /= nb;
    rec.loss.fcrc_text_to_image /= nb;
    rec.loss.regression /= nb;
    rec.loss.total /= nb;
    if (eval) score(model, *eval, spec, rec);
    history.epochs.push_back(rec);
  }

  if (degenerate_batches > 0) {
    history.warnings.push_back(std::to_string(degenerate_batches) +
                               " batch(es) had a single label; lambda fell back to 1");
  }
  return result;
}

std::string history_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,fcrc_i2t,fcrc_t2i,regression,total,eval_mae,eval_acc\n";
  for (const auto& rec : history.epochs) {
    out << rec.epoch << ',' << format_double(rec.loss.fcrc_image_to_text) << ','
        << format_double(rec.loss.fcrc_text_to_image) << ',' << format_double(rec.loss.regression)
        << ',' << format_double(rec.loss.total) << ','
        << (rec.eval_mae ? format_double(*rec.eval_mae) : "") << ','
        << (rec.eval_accuracy ? format_double(*rec.eval_accuracy) : "") << '\n';
  }
  return out.str();
}

void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << history_csv(history);
}

}  // namespace numclip
