#include "app.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "numclip/binning.hpp"
#include "numclip/data.hpp"
#include "numclip/error.hpp"
#include "numclip/head.hpp"
#include "numclip/losses.hpp"
#include "numclip/model.hpp"
#include "numclip/random.hpp"
#include "numclip/text_io.hpp"
#include "numclip/train.hpp"

namespace numclip::app {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Gradient suite

namespace {

struct Instance {
  std::vector<Matrix> params;
  ScalarGraphBuilder builder;
};

using Factory = std::function<Instance(Rng&)>;

Var probe(Var out, const Matrix& weights) { return sum(mul(out, out.tape->constant(weights))); }

Matrix uniform_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

std::vector<double> random_labels(Rng& rng, std::size_t m) {
  std::vector<double> y(m);
  for (double& v : y) v = rng.uniform(16.0, 77.0);
  return y;
}

DistanceKind random_kind(Rng& rng) { return static_cast<DistanceKind>(rng.index(3)); }

// Instances are redrawn when they sit near a kink or a near-singular
// normalization, where a finite-difference stencil cannot be trusted.
constexpr double kMinRowNorm = 0.5;
constexpr double kMinResidual = 0.05;

double min_row_norm(const Matrix& m) {
  double lo = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double sq = 0.0;
    for (double v : m.row(r)) sq += v * v;
    lo = std::min(lo, std::sqrt(sq));
  }
  return lo;
}

Matrix well_scaled_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m = rng.normal_matrix(rows, cols, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = m.row(r);
    while (true) {
      double sq = 0.0;
      for (double v : row) sq += v * v;
      if (std::sqrt(sq) >= kMinRowNorm) break;
      for (double& v : row) v = rng.normal(0.0, 1.0);
    }
  }
  return m;
}

// Encoder output before the final normalization.
Matrix encoder_preactivation(const std::vector<Matrix>& p, const Matrix& x) {
  Tape t;
  const Var ones = t.constant(Matrix(x.rows(), 1, 1.0));
  const Var h = tanh(add(matmul(t.constant(x), t.constant(p[0])), matmul(ones, t.constant(p[1]))));
  return add(matmul(h, t.constant(p[2])), matmul(ones, t.constant(p[3]))).value();
}

Instance contrastive(Rng& rng, bool weighted, Direction direction) {
  const std::size_t m = 2 + rng.index(7);
  const std::size_t d = 2 + rng.index(7);
  const LambdaMatrix lambda = weighted ? compute_lambda(random_labels(rng, m), random_kind(rng), 1.0)
                                       : LambdaMatrix::uniform(m);
  const Temperature tau(rng.uniform(Temperature::kDefault, 1.0));
  Instance in;
  in.params = {well_scaled_rows(rng, m, d), well_scaled_rows(rng, m, d)};
  in.builder = [=](Tape&, std::span<const Var> p) {
    const Var sim = similarity_logits(l2_normalize_rows(p[0]), l2_normalize_rows(p[1]), tau);
    return weighted ? fcrc(sim, lambda, direction) : infonce(sim, direction);
  };
  return in;
}

Instance regression(Rng& rng) {
  const std::size_t n = 1 + rng.index(8);
  Matrix pred = uniform_matrix(rng, n, 1, -5.0, 5.0);
  std::vector<double> targets(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double gap = rng.uniform(0.1, 2.0);
    targets[i] = pred(i, 0) + (rng.index(2) == 0 ? gap : -gap);
  }
  Instance in;
  in.params = {std::move(pred)};
  in.builder = [targets](Tape&, std::span<const Var> p) { return regression_loss(p[0], targets); };
  return in;
}

Instance softmax_head(Rng& rng) {
  const std::size_t n = 1 + rng.index(6);
  const std::size_t k = 2 + rng.index(6);
  const Matrix weights = uniform_matrix(rng, n, k, -1.0, 1.0);
  Instance in;
  in.params = {uniform_matrix(rng, n, k, -4.0, 4.0)};
  in.builder = [weights](Tape&, std::span<const Var> p) {
    return probe(class_probabilities(p[0]), weights);
  };
  return in;
}

Instance predict_free(Rng& rng) {
  const std::size_t n = 1 + rng.index(6);
  const std::size_t k = 2 + rng.index(6);
  const BinSpec spec = default_bins(16.0, 77.0, k, generic_concepts(k));
  const Matrix weights = uniform_matrix(rng, n, 1, -1.0, 1.0);
  Instance in;
  in.params = {uniform_matrix(rng, n, k, -3.0, 3.0), uniform_matrix(rng, 1, k, -0.4, 0.4)};
  in.builder = [spec, weights](Tape&, std::span<const Var> p) {
    return probe(predict(class_probabilities(p[0]), spec, p[1]), weights);
  };
  return in;
}

Instance predict_network(Rng& rng) {
  const std::size_t n = 1 + rng.index(6);
  const std::size_t k = 2 + rng.index(5);
  const std::size_t h = 2 + rng.index(6);
  const BinSpec spec = default_bins(16.0, 77.0, k, generic_concepts(k));
  const Matrix weights = uniform_matrix(rng, n, 1, -1.0, 1.0);
  Instance in;
  in.params = {uniform_matrix(rng, n, k, -3.0, 3.0), rng.normal_matrix(k, h, 0.7),
               rng.normal_matrix(1, h, 0.3),         rng.normal_matrix(h, k, 0.7),
               rng.normal_matrix(1, k, 0.3)};
  in.builder = [spec, weights](Tape&, std::span<const Var> p) {
    const DeltaNetworkVars net{p[1], p[2], p[3], p[4]};
    return probe(predict(class_probabilities(p[0]), spec, net), weights);
  };
  return in;
}

Instance encoder(Rng& rng) {
  const std::size_t n = 1 + rng.index(6);
  const std::size_t d_in = 1 + rng.index(6);
  const std::size_t h = 1 + rng.index(6);
  const std::size_t d = 2 + rng.index(5);
  const Matrix weights = uniform_matrix(rng, n, d, -1.0, 1.0);
  Matrix x;
  Instance in;
  do {
    x = rng.normal_matrix(n, d_in, 1.0);
    const EncoderParams init = EncoderParams::init(d_in, h, d, rng);
    in.params = {init.w1, rng.normal_matrix(1, h, 0.3), init.w2, rng.normal_matrix(1, d, 0.3)};
  } while (min_row_norm(encoder_preactivation(in.params, x)) < kMinRowNorm);
  in.builder = [x, weights](Tape&, std::span<const Var> p) {
    return probe(encode(EncoderVars{p[0], p[1], p[2], p[3]}, x), weights);
  };
  return in;
}

Instance normalization(Rng& rng) {
  const std::size_t n = 1 + rng.index(6);
  const std::size_t d = 2 + rng.index(7);
  const Matrix weights = uniform_matrix(rng, n, d, -1.0, 1.0);
  Instance in;
  in.params = {well_scaled_rows(rng, n, d)};
  in.builder = [weights](Tape&, std::span<const Var> p) {
    return probe(l2_normalize_rows(p[0]), weights);
  };
  return in;
}

Instance full_objective(Rng& rng) {
  const std::size_t m = 3 + rng.index(5);
  const std::size_t d_in = 3, h = 4, d = 3, k = 3;
  const BinSpec spec = default_bins(16.0, 77.0, k, generic_concepts(k));
  const Temperature tau(rng.uniform(0.1, 1.0));
  const DistanceKind kind = random_kind(rng);

  auto forward = [spec, tau](std::span<const Var> p, const Matrix& x, const std::vector<double>& y,
                             const std::vector<std::size_t>& bins, const LambdaMatrix& lambda) {
    const Var z = encode(EncoderVars{p[0], p[1], p[2], p[3]}, x);
    const Var w = prompt_rows(p[4], bins);
    const Var probs = class_probabilities(similarity_logits(z, l2_normalize_rows(p[4]), tau));
    const Var pred = predict(probs, spec, p[5]);
    return std::pair{pred, total_loss(z, w, lambda, lambda, pred, y, tau).value};
  };

  Instance in;
  Matrix x;
  std::vector<double> y;
  std::vector<std::size_t> bins(m);
  LambdaMatrix lambda;
  while (true) {
    x = rng.normal_matrix(m, d_in, 1.0);
    y = random_labels(rng, m);
    for (std::size_t i = 0; i < m; ++i) bins[i] = assign_bin(y[i], spec);
    lambda = compute_lambda(y, kind, 1.0);
    const EncoderParams init = EncoderParams::init(d_in, h, d, rng);
    in.params = {init.w1,
                 rng.normal_matrix(1, h, 0.3),
                 init.w2,
                 rng.normal_matrix(1, d, 0.3),
                 well_scaled_rows(rng, k, d),
                 uniform_matrix(rng, 1, k, -0.3, 0.3)};
    if (min_row_norm(encoder_preactivation(in.params, x)) < kMinRowNorm) continue;
    Tape t;
    std::vector<Var> leaves;
    for (const Matrix& p : in.params) leaves.push_back(t.constant(p));
    const Matrix pred = forward(leaves, x, y, bins, lambda).first.value();
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) gap = std::min(gap, std::abs(pred(i, 0) - y[i]));
    if (gap >= kMinResidual) break;
  }
  in.builder = [=](Tape&, std::span<const Var> p) { return forward(p, x, y, bins, lambda).second; };
  return in;
}

// Below ~1e-4 the stencil's roundoff (eps |f| / h) rivals the tiny gradients
// of saturated softmax rows; above it truncation error starts to show.
constexpr double kStep = 1e-4;

}  // namespace

std::vector<OpCheck> gradient_suite(double tolerance, std::size_t instances, std::uint64_t seed) {
  const std::vector<std::pair<std::string, Factory>> ops = {
      {"fcrc-image-to-text", [](Rng& r) { return contrastive(r, true, Direction::image_anchored); }},
      {"fcrc-text-to-image", [](Rng& r) { return contrastive(r, true, Direction::text_anchored); }},
      {"infonce-image-to-text", [](Rng& r) { return contrastive(r, false, Direction::image_anchored); }},
      {"infonce-text-to-image", [](Rng& r) { return contrastive(r, false, Direction::text_anchored); }},
      {"regression-mae", regression},
      {"class-probabilities", softmax_head},
      {"predict-free-shift", predict_free},
      {"predict-shift-network", predict_network},
      {"encoder", encoder},
      {"l2-normalize-rows", normalization},
      {"total-loss", full_objective},
  };

  std::vector<OpCheck> checks;
  for (std::size_t op = 0; op < ops.size(); ++op) {
    Rng rng(seed * 1000003 + op);
    OpCheck check;
    check.name = ops[op].first;
    check.instances = instances;
    for (std::size_t i = 0; i < instances; ++i) {
      const Instance in = ops[op].second(rng);
      const GradCheckReport report = gradient_check(in.builder, in.params, tolerance, kStep);
      if (i == 0 || report.max_relative_error > check.worst.max_relative_error) {
        check.worst = report;
        check.worst_instance = i;
      }
    }
    check.passed = check.worst.max_relative_error < tolerance;
    checks.push_back(std::move(check));
  }
  return checks;
}

// ---------------------------------------------------------------------------
// MI suite

namespace {

struct Preset {
  std::string name;
  DiscreteJoint joint;
  Matrix negatives;  // empty: independent
};

std::vector<Preset> mi_presets() {
  std::vector<Preset> presets;
  presets.push_back({"independent", DiscreteJoint(Matrix{{0.25, 0.25}, {0.25, 0.25}}), {}});
  presets.push_back({"correlated-2x2", DiscreteJoint(Matrix{{0.5, 0.0}, {0.0, 0.5}}), {}});
  presets.push_back({"noisy-2x2", DiscreteJoint(Matrix{{0.4, 0.1}, {0.1, 0.4}}), {}});
  const DiscreteJoint ordinal(Matrix{{0.25, 0.07, 0.01}, {0.05, 0.20, 0.05}, {0.01, 0.07, 0.29}});
  presets.push_back({"ordinal-neighbor-3x3", ordinal, negatives::ordinal_neighbor(ordinal, 0.5)});
  return presets;
}

}  // namespace

MISuite mi_suite(std::size_t trials, std::uint64_t seed) {
  MISuite suite;
  suite.passed = true;
  for (const Preset& preset : mi_presets()) {
    for (std::size_t m : {2u, 4u, 8u}) {
      BoundCheck check;
      check.preset = preset.name;
      check.batch = m;

      MIOptions exact;
      exact.negative_conditional = preset.negatives;
      check.exhaustive = verify_mi_bound(preset.joint, m, exact);

      MIOptions sampled;
      sampled.trials = trials;
      sampled.seed = seed + m;
      sampled.exhaustive_when_small = false;
      check.monte_carlo = verify_mi_bound(preset.joint, m, sampled);

      const MIReport& mc = check.monte_carlo.report;
      check.eq2 = mc.bound_lhs <= mc.exact_mi + 3.0 * check.monte_carlo.infonce_stderr + 1e-9;
      check.eq3 = check.exhaustive.exhaustive && check.exhaustive.report.holds_eq3;
      suite.passed = suite.passed && check.eq2 && check.eq3;
      suite.bounds.push_back(std::move(check));
    }

    // Symbols double as ordinal labels; the batch is one sample per symbol.
    const std::size_t n = preset.joint.z_size();
    std::vector<double> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<double>(i);
    PresetConditions pc{preset.name,
                        lambda_condition_check(labels, DistanceKind::absolute, preset.joint.density_ratio())};
    suite.passed = suite.passed && pc.conditions.condition2;
    suite.conditions.push_back(std::move(pc));
  }
  return suite;
}

// ---------------------------------------------------------------------------
// Command line

namespace {

json to_json(const MIReport& r) {
  return json{{"exact-mi", r.exact_mi},       {"infonce-value", r.infonce_value},
              {"bound-lhs", r.bound_lhs},     {"general-lhs", r.general_lhs},
              {"holds-eq2", r.holds_eq2},     {"holds-eq3", r.holds_eq3}};
}

json to_json(const Metrics& m) {
  return json{{"mae", m.mae},
              {"coarse-accuracy", m.coarse_accuracy},
              {"ordinality-spearman", m.ordinality_spearman}};
}

json to_json(const LossBreakdown& b) {
  return json{{"fcrc-image-to-text", b.fcrc_image_to_text},
              {"fcrc-text-to-image", b.fcrc_text_to_image},
              {"regression", b.regression},
              {"total", b.total}};
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_error, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::io_error, "write failed for " + path.string());
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  for (auto& field : split_fields(text, ',')) {
    if (!field.empty()) items.emplace_back(field);
  }
  return items;
}

std::pair<double, double> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw Error(Errc::bad_flag, "--range expects lo:hi, got " + text);
  double lo = 0.0, hi = 0.0;
  try {
    lo = parse_double(text.substr(0, colon), 0);
    hi = parse_double(text.substr(colon + 1), 0);
  } catch (const Error&) {
    throw Error(Errc::bad_flag, "--range expects lo:hi, got " + text);
  }
  if (!(lo < hi)) throw Error(Errc::bad_flag, "--range needs lo < hi, got " + text);
  return {lo, hi};
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : split_list(text)) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || end != item.data() + item.size()) {
      throw Error(Errc::bad_flag, "--seeds expects a comma list of integers, got " + text);
    }
    seeds.push_back(v);
  }
  if (seeds.empty()) throw Error(Errc::bad_flag, "--seeds is empty");
  return seeds;
}

struct BinFlags {
  std::string range = "16:77";
  std::size_t bins = 5;
  std::string concepts;  // "ages", "decades:<first>", or a comma list
  std::string bin_file;

  void attach(CLI::App& app) {
    app.add_option("--range", range, "label range lo:hi");
    app.add_option("--bins", bins, "number of concept bins")->check(CLI::Range(2, 1 << 20));
    app.add_option("--concepts", concepts, "bin names: ages, decades:<first>, or a comma list");
    app.add_option("--bin-file", bin_file, "bin definitions, one lo,hi,center,name per line");
  }

  BinSpec spec() const {
    if (!bin_file.empty()) return load_bin_spec(bin_file);
    const auto [lo, hi] = parse_range(range);
    std::vector<std::string> names;
    if (concepts.empty()) {
      names = generic_concepts(bins);
    } else if (concepts == "ages") {
      names = age_concepts();
    } else if (concepts.rfind("decades:", 0) == 0) {
      names = decade_concepts(static_cast<int>(parse_double(concepts.substr(8), 0)), bins);
    } else {
      names = split_list(concepts);
    }
    if (names.size() != bins) {
      throw Error(Errc::bad_flag, "--concepts names " + std::to_string(names.size()) +
                                      " bins but --bins is " + std::to_string(bins));
    }
    return default_bins(lo, hi, bins, std::move(names));
  }
};

struct SynthFlags {
  std::size_t n = 1000;
  std::size_t dims = 8;
  double noise = 0.3;
  double omega = 0.1;
  CLI::Option* n_option = nullptr;

  void attach(CLI::App& app) {
    n_option = app.add_option("--n", n, "number of synthetic samples")->check(CLI::PositiveNumber);
    app.add_option("--dims", dims, "synthetic feature dimension (at least 3)");
    app.add_option("--noise", noise, "Gaussian noise std on every feature")->check(CLI::NonNegativeNumber);
    app.add_option("--omega", omega, "curve frequency in radians per label unit");
  }

  Dataset generate(const BinSpec& spec, std::uint64_t seed) const {
    SyntheticConfig cfg;
    cfg.n = n;
    cfg.input_dim = dims;
    cfg.noise_std = noise;
    cfg.omega = omega;
    cfg.lo = spec.lower();
    cfg.hi = spec.upper();
    cfg.seed = seed;
    return generate_synthetic(cfg, spec);
  }
};

struct ModelFlags {
  std::string loss = "fcrc";
  std::string dist = "absolute";
  std::string lambda_mode = "mean";
  std::string delta = "free";
  double beta = 1.0;
  double tau = Temperature::kDefault;
  std::size_t epochs = 100;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t hidden = 32;
  std::size_t embed_dim = 16;
  bool raw_features = false;
  double train_frac = 0.8;
  std::size_t shots = 0;
  std::uint64_t data_seed = 0;

  void attach(CLI::App& app, bool with_dist) {
    app.add_option("--loss", loss, "fcrc or infonce")->check(CLI::IsMember({"fcrc", "infonce"}));
    if (with_dist) {
      app.add_option("--dist", dist, "label distance: absolute, sqrt or squared")
          ->check(CLI::IsMember({"absolute", "sqrt", "sqrt-absolute", "squared"}));
    }
    app.add_option("--lambda-mode", lambda_mode, "negative weighting: mean or exp")
        ->check(CLI::IsMember({"mean", "exp"}));
    app.add_option("--beta", beta, "distance scale for exp weighting")->check(CLI::PositiveNumber);
    app.add_option("--tau", tau, "softmax temperature")->check(CLI::PositiveNumber);
    app.add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
    app.add_option("--batch", batch, "mini-batch size")->check(CLI::Range(2, 1 << 30));
    app.add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "training and split seed");
    app.add_option("--delta", delta, "bin shifts: free or network")->check(CLI::IsMember({"free", "network"}));
    app.add_option("--hidden", hidden, "encoder hidden width");
    app.add_option("--embed-dim", embed_dim, "embedding dimension");
    app.add_flag("--raw-features", raw_features, "use normalized features as embeddings");
    app.add_option("--train-frac", train_frac, "training share of the data")->check(CLI::Range(0.0, 1.0));
    app.add_option("--shots", shots, "training samples per bin (0: use --train-frac)");
    app.add_option("--data-seed", data_seed, "seed for synthetic data");
  }

  TrainConfig config() const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch;
    cfg.learning_rate = lr;
    cfg.tau = tau;
    cfg.beta = beta;
    cfg.distance = parse_distance_kind(dist);
    cfg.loss = loss == "fcrc" ? LossMode::fcrc : LossMode::infonce;
    cfg.lambda_mode = lambda_mode == "mean" ? LambdaMode::mean_norm : LambdaMode::exp_norm;
    cfg.seed = seed;
    cfg.delta_variant = delta == "free" ? DeltaVariant::free_vector : DeltaVariant::small_network;
    cfg.hidden_dim = hidden;
    cfg.embed_dim = embed_dim;
    cfg.raw_features = raw_features;
    return cfg;
  }

  std::optional<std::size_t> shots_per_bin() const {
    return shots == 0 ? std::nullopt : std::optional<std::size_t>(shots);
  }
};

// Effective option values of a subcommand, in declaration order. The
// key=value rendering replays the run through --config.
std::vector<std::pair<std::string, std::string>> config_echo(const CLI::App& app) {
  std::vector<std::pair<std::string, std::string>> echo;
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || opt->get_lnames().empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
    }
    if (opt->get_expected_max() == 0) {  // flag
      value = (opt->count() > 0 && value != "false" && value != "0") ? "true" : "false";
    }
    echo.emplace_back(name, value);
  }
  return echo;
}

std::string echo_text(const std::vector<std::pair<std::string, std::string>>& echo) {
  std::string text;
  for (const auto& [k, v] : echo) text += k + "=" + (v.empty() ? "\"\"" : v) + "\n";
  return text;
}

json echo_json(const std::vector<std::pair<std::string, std::string>>& echo) {
  json obj = json::object();
  for (const auto& [k, v] : echo) obj[k] = v;
  return obj;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Dataset obtain_data(const std::string& path, const SynthFlags& synth, std::uint64_t data_seed,
                    const BinSpec& spec) {
  if (!path.empty()) {
    Dataset data = load_embeddings_csv(path);
    assign_bins(data, spec);
    return data;
  }
  if (synth.n_option == nullptr || synth.n_option->count() == 0) {
    throw Error(Errc::config_error,
                "no data source: pass --data FILE, or --n (with optional --dims, --noise, "
                "--omega, --data-seed) for synthetic data");
  }
  return synth.generate(spec, data_seed);
}

struct Outcome {
  TrainResult result;
  Metrics metrics;
};

Outcome fit(const TrainConfig& cfg, const Dataset& data, const BinSpec& spec, double train_frac,
            std::optional<std::size_t> shots) {
  const auto [train_set, eval_set] = split(data, train_frac, shots, cfg.seed);
  Outcome out{train(cfg, train_set, spec, &eval_set), {}};
  out.metrics = evaluate(out.result.model, eval_set, spec);
  return out;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// --- subcommands -----------------------------------------------------------

struct SynthCommand {
  BinFlags bins;
  SynthFlags synth;
  std::uint64_t seed = 0;
  std::string out;

  void attach(CLI::App& app) {
    bins.attach(app);
    synth.attach(app);
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--out", out, "output CSV")->required();
  }

  int run(std::ostream& os) {
    const BinSpec spec = bins.spec();
    const Dataset data = synth.generate(spec, seed);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_embeddings_csv(data, out);
    os << "wrote " << data.size() << " samples x " << data.dim() << " features to " << out << "\n";
    return kOk;
  }
};

struct TrainCommand {
  BinFlags bins;
  SynthFlags synth;
  ModelFlags model;
  std::string data;
  std::string out = "run";
  CLI::App* app = nullptr;

  void attach(CLI::App& a) {
    app = &a;
    a.add_option("--data", data, "embeddings CSV (label,f0,f1,...)");
    a.add_option("--out", out, "output directory");
    bins.attach(a);
    synth.attach(a);
    model.attach(a, true);
  }

  int run(std::ostream& os) {
    const auto start = std::chrono::steady_clock::now();
    const BinSpec spec = bins.spec();
    const Dataset dataset = obtain_data(data, synth, model.data_seed, spec);
    const TrainConfig cfg = model.config();
    cfg.validate();
    const Outcome outcome = fit(cfg, dataset, spec, model.train_frac, model.shots_per_bin());

    const fs::path dir(out);
    fs::create_directories(dir);
    const auto echo = config_echo(*app);
    save_checkpoint(outcome.result.model, dir / "model.bin");
    write_history_csv(outcome.result.history, dir / "history.csv");
    write_text(dir / "run.cfg", echo_text(echo));

    json report;
    report["command"] = "train";
    report["config"] = echo_json(echo);
    report["metrics"] = to_json(outcome.metrics);
    report["final-loss"] = to_json(outcome.result.history.epochs.back().loss);
    report["history"] = (dir / "history.csv").string();
    report["checkpoint"] = (dir / "model.bin").string();
    report["seed"] = cfg.seed;
    report["warnings"] = outcome.result.history.warnings;
    report["wall-time-seconds"] = seconds_since(start);
    write_json(dir / "report.json", report);

    os << "loss " << model.loss << "  dist " << model.dist << "  seed " << cfg.seed << "\n"
       << "  mae                 " << fixed(outcome.metrics.mae) << "\n"
       << "  coarse accuracy     " << fixed(outcome.metrics.coarse_accuracy) << "\n"
       << "  ordinality spearman " << fixed(outcome.metrics.ordinality_spearman) << "\n"
       << "report: " << (dir / "report.json").string() << "\n";
    for (const auto& w : outcome.result.history.warnings) os << "warning: " << w << "\n";
    return kOk;
  }
};

struct EvalCommand {
  BinFlags bins;
  std::string model_path;
  std::string data;
  std::string out;

  void attach(CLI::App& app) {
    app.add_option("--model", model_path, "checkpoint written by train")->required();
    app.add_option("--data", data, "embeddings CSV")->required();
    app.add_option("--out", out, "metrics JSON (optional)");
    bins.attach(app);
  }

  int run(std::ostream& os) {
    const BinSpec spec = bins.spec();
    Dataset dataset = load_embeddings_csv(data);
    assign_bins(dataset, spec);
    const ModelParams model = load_checkpoint(model_path);
    const Metrics m = evaluate(model, dataset, spec);
    if (!out.empty()) write_json(out, to_json(m));
    os << "samples             " << dataset.size() << "\n"
       << "mae                 " << fixed(m.mae) << "\n"
       << "coarse accuracy     " << fixed(m.coarse_accuracy) << "\n"
       << "ordinality spearman " << fixed(m.ordinality_spearman) << "\n";
    return kOk;
  }
};

struct AblateCommand {
  BinFlags bins;
  SynthFlags synth;
  ModelFlags model;
  std::string data;
  std::string seeds = "0,1,2";
  std::string out = "ablation.csv";

  void attach(CLI::App& app) {
    app.add_option("--data", data, "embeddings CSV (label,f0,f1,...)");
    app.add_option("--seeds", seeds, "comma-separated training seeds");
    app.add_option("--out", out, "output CSV");
    bins.attach(app);
    synth.attach(app);
    model.attach(app, false);
  }

  int run(std::ostream& os) {
    const BinSpec spec = bins.spec();
    const Dataset dataset = obtain_data(data, synth, model.data_seed, spec);
    const auto seed_list = parse_seeds(seeds);
    std::string csv = "kind,seed,mae,accuracy\n";
    os << std::left << std::setw(10) << "kind" << std::setw(8) << "seed" << std::setw(10) << "mae"
       << "accuracy\n";
    for (DistanceKind kind : {DistanceKind::absolute, DistanceKind::sqrt_absolute, DistanceKind::squared}) {
      for (std::uint64_t s : seed_list) {
        TrainConfig cfg = model.config();
        cfg.distance = kind;
        cfg.seed = s;
        cfg.validate();
        const Outcome o = fit(cfg, dataset, spec, model.train_frac, model.shots_per_bin());
        csv += std::string(to_string(kind)) + "," + std::to_string(s) + "," + format_double(o.metrics.mae) +
               "," + format_double(o.metrics.coarse_accuracy) + "\n";
        os << std::setw(10) << to_string(kind) << std::setw(8) << s << std::setw(10) << fixed(o.metrics.mae)
           << fixed(o.metrics.coarse_accuracy) << "\n";
      }
    }
    write_text(out, csv);
    os << "wrote " << out << "\n";
    return kOk;
  }
};

struct GradcheckCommand {
  double tolerance = 1e-5;
  std::size_t instances = 100;
  std::uint64_t seed = 0;
  std::string out = "gradcheck.json";

  void attach(CLI::App& app) {
    app.add_option("--tolerance", tolerance, "maximum relative error")->check(CLI::PositiveNumber);
    app.add_option("--instances", instances, "random instances per operation")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "instance seed");
    app.add_option("--out", out, "JSON report");
  }

  int run(std::ostream& os) {
    const auto checks = gradient_suite(tolerance, instances, seed);
    json doc;
    doc["tolerance"] = tolerance;
    doc["instances"] = instances;
    doc["seed"] = seed;
    json ops = json::array();
    bool all = true;
    os << std::left << std::setw(24) << "operation" << std::setw(14) << "max rel err" << "status\n";
    for (const auto& c : checks) {
      all = all && c.passed;
      const auto& w = c.worst;
      ops.push_back({{"name", c.name},
                     {"passed", c.passed},
                     {"max-relative-error", w.max_relative_error},
                     {"worst-instance", c.worst_instance},
                     {"worst-param", w.worst_param},
                     {"worst-row", w.worst_row},
                     {"worst-col", w.worst_col},
                     {"analytic", w.worst_analytic},
                     {"numeric", w.worst_numeric}});
      std::ostringstream err;
      err << std::scientific << std::setprecision(2) << w.max_relative_error;
      os << std::setw(24) << c.name << std::setw(14) << err.str() << (c.passed ? "ok" : "FAIL");
      if (!c.passed) {
        os << "  (instance " << c.worst_instance << ", param " << w.worst_param << " [" << w.worst_row << ","
           << w.worst_col << "], analytic " << w.worst_analytic << ", numeric " << w.worst_numeric << ")";
      }
      os << "\n";
    }
    doc["operations"] = ops;
    doc["passed"] = all;
    write_json(out, doc);
    return all ? kOk : kCheckFailed;
  }
};

struct MicheckCommand {
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  std::string out = "micheck.json";

  void attach(CLI::App& app) {
    app.add_option("--trials", trials, "Monte Carlo batches per check")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "sampling seed");
    app.add_option("--out", out, "JSON report");
  }

  int run(std::ostream& os) {
    const MISuite suite = mi_suite(trials, seed);
    json doc;
    doc["trials"] = trials;
    doc["seed"] = seed;
    json bounds = json::array();
    // eq2 uses sampled independent negatives, eq3 the preset negatives exactly.
    os << std::left << std::setw(22) << "preset" << std::setw(4) << "M" << std::setw(10) << "exact-mi"
       << std::setw(10) << "mc-bound" << std::setw(11) << "mc-stderr" << std::setw(10) << "exh-bound"
       << std::setw(13) << "general-lhs" << std::setw(6) << "eq2" << "eq3\n";
    for (const auto& b : suite.bounds) {
      json ex = to_json(b.exhaustive.report);
      json mc = to_json(b.monte_carlo.report);
      mc["infonce-stderr"] = b.monte_carlo.infonce_stderr;
      bounds.push_back({{"preset", b.preset},
                        {"batch", b.batch},
                        {"exhaustive", ex},
                        {"monte-carlo", mc},
                        {"eq2-within-3-stderr", b.eq2},
                        {"eq3-exhaustive", b.eq3}});
      os << std::setw(22) << b.preset << std::setw(4) << b.batch << std::setw(10)
         << fixed(b.exhaustive.report.exact_mi) << std::setw(10) << fixed(b.monte_carlo.report.bound_lhs)
         << std::setw(11) << fixed(b.monte_carlo.infonce_stderr, 5) << std::setw(10)
         << fixed(b.exhaustive.report.bound_lhs) << std::setw(13) << fixed(b.exhaustive.report.general_lhs) << std::setw(6) << (b.eq2 ? "ok" : "FAIL")
         << (b.eq3 ? "ok" : "FAIL") << "\n";
    }
    json conditions = json::array();
    os << "\n" << std::setw(22) << "preset" << std::setw(12) << "condition1" << std::setw(12) << "condition2"
       << "covariance\n";
    for (const auto& c : suite.conditions) {
      conditions.push_back({{"preset", c.preset},
                            {"condition1", c.conditions.condition1},
                            {"condition2", c.conditions.condition2},
                            {"covariance", c.conditions.covariance}});
      os << std::setw(22) << c.preset << std::setw(12) << (c.conditions.condition1 ? "yes" : "no")
         << std::setw(12) << (c.conditions.condition2 ? "yes" : "no") << fixed(c.conditions.covariance, 6)
         << "\n";
    }
    doc["bounds"] = bounds;
    doc["lambda-conditions"] = conditions;
    doc["passed"] = suite.passed;
    write_json(out, doc);
    return suite.passed ? kOk : kCheckFailed;
  }
};

int exit_status(Errc code) { return code == Errc::bad_flag || code == Errc::config_error ? kUsage : kRuntime; }

int report_error(std::ostream& err, Errc code, const std::string& what) {
  err << "error: " << to_string(code) << ": " << what << "\n";
  return exit_status(code);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool given(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
    return a == flag || a.rfind(flag + "=", 0) == 0;
  });
}

// Expands `--config FILE` into flags for every key the command line does
// not set itself.
std::vector<std::string> with_config(const CLI::App& app, const std::vector<std::string>& args) {
  if (args.empty()) return args;
  const CLI::App* sub = nullptr;
  for (const CLI::App* s : app.get_subcommands({})) {
    if (s->get_name() == args[0]) sub = s;
  }
  if (sub == nullptr) return args;

  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw Error(Errc::config_error, "cannot read config file " + path);
  std::vector<std::string> out{args[0]};
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    const std::string text = trim(line.substr(0, line.find('#')));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::config_error, path + ":" + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr || key == "config") {
      throw Error(Errc::config_error, path + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (given(args, "--" + key)) continue;
    if (opt->get_expected_max() == 0) {
      if (value == "true" || value == "1") out.push_back("--" + key);
      continue;
    }
    if (value.empty()) continue;
    out.push_back("--" + key);
    out.push_back(value);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rank-aware contrastive training and verification for ordinal regression", "numclip"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  SynthCommand synth;
  TrainCommand train_cmd;
  EvalCommand eval;
  AblateCommand ablate;
  GradcheckCommand gradcheck;
  MicheckCommand micheck;

  struct Entry {
    CLI::App* app;
    std::function<int(std::ostream&)> run;
  };
  std::vector<Entry> entries;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->option_defaults()->always_capture_default();
    sub->add_option("--config", "key=value file; explicit flags take precedence");
    cmd.attach(*sub);
    entries.push_back({sub, [&cmd](std::ostream& os) { return cmd.run(os); }});
  };
  add("synth", "generate a synthetic embeddings CSV", synth);
  add("train", "train a model and write checkpoint, history and report", train_cmd);
  add("eval", "evaluate a checkpoint on an embeddings CSV", eval);
  add("ablate-distance", "compare label distance functions over shared seeds", ablate);
  add("gradcheck", "finite-difference check of every loss and head operation", gradcheck);
  add("micheck", "numerical checks of the InfoNCE mutual-information bounds", micheck);

  std::vector<std::string> full;
  try {
    full = with_config(app, args);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_status(e.code());
  }
  std::vector<std::string> reversed(full.rbegin(), full.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ConfigError& e) {
    return report_error(err, Errc::config_error, e.what());
  } catch (const CLI::FileError& e) {
    return report_error(err, Errc::config_error, e.what());
  } catch (const CLI::ParseError& e) {
    return report_error(err, Errc::bad_flag, e.what());
  }

  try {
    for (const auto& entry : entries) {
      if (app.got_subcommand(entry.app)) return entry.run(out);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";  // what() already leads with the code
    return exit_status(e.code());
  } catch (const fs::filesystem_error& e) {
    return report_error(err, Errc::io_error, e.what());
  }
  return kUsage;
}

}  // namespace numclip::app
