// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "app.hpp"
#include "json.hpp"
#include "numclip/diagnostics.hpp"
#include "numclip/head.hpp"
#include "numclip/losses.hpp"
#include "numclip/random.hpp"

namespace fs = std::filesystem;
using namespace numclip;
using nlohmann::json;

namespace {

constexpr DistanceKind kKinds[] = {DistanceKind::absolute, DistanceKind::sqrt_absolute,
                                   DistanceKind::squared};

// Synthetic benefit protocol. Temperature and curve frequency are pinned;
// everything else follows the CLI defaults.
constexpr const char* kTau = "0.4";
constexpr const char* kOmega = "0.2575";
constexpr int kSeeds = 10;
const fs::path kRoot = "acceptance_runs";

struct Outcome {
  bool passed;
  std::string detail;
};

int run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int status = app::run(args, out, err);
  if (status != 0) std::cerr << "numclip " << args.front() << " exited " << status << ": " << err.str();
  return status;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fmt(const char* pattern, auto... values) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, values...);
  return buf;
}

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------

Outcome gradients() {
  const auto ops = app::gradient_suite(1e-5, 100, 0);
  std::size_t failed = 0;
  double worst = 0.0;
  for (const auto& op : ops) {
    failed += op.passed ? 0 : 1;
    worst = std::max(worst, op.worst.max_relative_error);
  }
  return {failed == 0 && ops.size() == 11,
          fmt("%zu operations x 100 instances, %zu failed, worst relative error %.2e", ops.size(), failed, worst)};
}

Outcome lambda_invariants() {
  Rng rng(2024);
  std::size_t violations = 0;
  double worst_mean = 0.0, worst_beta = 0.0;
  for (int batch = 0; batch < 1000; ++batch) {
    const std::size_t m = 2 + rng.index(15);
    std::vector<double> y(m);
    for (double& v : y) v = rng.uniform(16.0, 77.0);
    // Every third batch repeats a label so same-label pairs occur.
    if (batch % 3 == 0) y[m - 1] = y[0];

    for (DistanceKind kind : kKinds) {
      const double beta = rng.uniform(0.1, 10.0);
      const LambdaMatrix mean_l = compute_lambda(y, kind, 1.0);
      const LambdaMatrix mean_b = compute_lambda(y, kind, beta);
      const LambdaMatrix exp_l = compute_lambda(y, kind, beta, {LambdaMode::exp_norm});
      // Exp weights of near neighbours can underflow to 0 at large beta, so
      // only mean normalization is checked for strict increase.
      for (const LambdaMatrix* l : {&mean_l, &exp_l}) {
        const bool strict = l == &mean_l;
        for (std::size_t i = 0; i < m; ++i) {
          double row = 0.0;
          for (std::size_t j = 0; j < m; ++j)
            if (j != i) row += l->weights(i, j);
          worst_mean = std::max(worst_mean, std::abs(row / static_cast<double>(m - 1) - 1.0));
          for (std::size_t j = 0; j < m; ++j)
            for (std::size_t k = 0; k < m; ++k) {
              if (j == i || k == i) continue;
              const double dj = label_distance(y[i], y[j], kind);
              const double dk = label_distance(y[i], y[k], kind);
              const double wj = l->weights(i, j), wk = l->weights(i, k);
              if (dj < dk && !(strict ? wj < wk : wj <= wk)) ++violations;
            }
        }
      }
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          if (i == j) continue;
          worst_beta = std::max(worst_beta, std::abs(mean_l.weights(i, j) - mean_b.weights(i, j)));
          if (y[i] == y[j] && !mean_l.degenerate[i] && mean_l.weights(i, j) != 0.0) ++violations;
        }

      const std::vector<double> same(m, y[0]);
      for (LambdaMode mode : {LambdaMode::mean_norm, LambdaMode::exp_norm}) {
        const LambdaMatrix d = compute_lambda(same, kind, beta, {mode});
        for (std::size_t i = 0; i < m; ++i) {
          if (!d.degenerate[i]) ++violations;
          for (std::size_t j = 0; j < m; ++j)
            if (j != i && d.weights(i, j) != 1.0) ++violations;
        }
      }
    }
  }
  return {violations == 0 && worst_mean <= 1e-9 && worst_beta <= 1e-12,
          fmt("1000 batches x 3 kinds, row-mean error %.1e, beta drift %.1e, %zu violations", worst_mean,
              worst_beta, violations)};
}

Outcome reduction_identity() {
  Rng rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng.index(15);
    Matrix sim(m, m);
    for (double& v : sim.data()) v = rng.uniform(-1.0, 1.0) / rng.uniform(0.01, 1.0);
    for (Direction dir : {Direction::image_anchored, Direction::text_anchored}) {
      Tape t;
      const Var s = t.constant(sim);
      const double a = fcrc(s, LambdaMatrix::uniform(m), dir).value()(0, 0);
      const double b = infonce(s, dir).value()(0, 0);
      worst = std::max(worst, std::abs(a - b));
    }
  }
  Tape t;
  const double two = infonce(t.constant(Matrix{{1.0, 0.0}, {0.0, 1.0}}), Direction::image_anchored).value()(0, 0);
  return {worst <= 1e-12 && std::abs(two - 0.313262) <= 1e-6,
          fmt("max |fcrc - infonce| %.1e over 100 matrices, M=2 loss %.6f", worst, two)};
}

Outcome refinement_identities() {
  const BinSpec spec({16, 28, 40, 52, 64, 77}, {22, 34, 46, 58, 70.5}, {"a", "b", "c", "d", "e"});
  const std::size_t k = spec.size();
  auto refine_once = [&](const Matrix& p, const BinSpec& s, const Matrix& delta) {
    Tape t;
    return predict(t.constant(p), s, t.constant(delta)).value()(0, 0);
  };
  bool ok = true;
  for (std::size_t i = 0; i < k; ++i) {
    Matrix p(1, k);
    p(0, i) = 1.0;
    ok = ok && refine_once(p, spec, Matrix(1, k)) == spec.centers()[i];
  }
  double mean = 0.0;
  for (double c : spec.centers()) mean += c;
  mean /= static_cast<double>(k);
  const double uniform = refine_once(Matrix(1, k, 1.0 / static_cast<double>(k)), spec, Matrix(1, k));
  ok = ok && std::abs(uniform - mean) <= 1e-12;
  const BinSpec thirty({20, 40, 60}, {30, 50}, {"a", "b"});
  const double shifted = refine_once(Matrix{{1.0, 0.0}}, thirty, Matrix{{0.5, 0.0}});
  ok = ok && std::abs(shifted - 20.0) <= 1e-12;
  return {ok, fmt("one-hot exact, uniform %.12g vs mean %.12g, shifted center %.15g", uniform, mean, shifted)};
}

Outcome mi_bounds() {
  const auto suite = app::mi_suite(100000, 0);
  std::size_t eq2 = 0, eq3 = 0;
  double log2_error = 1.0;
  for (const auto& b : suite.bounds) {
    eq2 += b.eq2 ? 1 : 0;
    eq3 += b.eq3 ? 1 : 0;
    if (b.preset == "correlated-2x2") log2_error = std::abs(b.exhaustive.report.exact_mi - std::log(2.0));
  }
  const std::size_t n = suite.bounds.size();
  return {suite.passed && eq2 == n && eq3 == n && n == 12 && log2_error <= 1e-12,
          fmt("eq2 %zu/%zu, eq3 %zu/%zu, |I - log 2| %.1e", eq2, n, eq3, n, log2_error)};
}

Outcome condition_one() {
  const DiscreteJoint joint(Matrix{{0.25, 0.07, 0.01}, {0.05, 0.20, 0.05}, {0.01, 0.07, 0.29}});
  const Matrix ratio = joint.density_ratio();
  const std::vector<double> labels{0.0, 1.0, 2.0};
  bool decreasing = true;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k)
        if (std::abs(labels[i] - labels[j]) < std::abs(labels[i] - labels[k]))
          decreasing = decreasing && ratio(i, j) > ratio(i, k);
  const LambdaConditions c = lambda_condition_check(labels, DistanceKind::absolute, ratio);
  return {decreasing && c.condition1 && c.covariance < 0.0,
          fmt("ratios decrease with distance: %s, cov(lambda, ratio) = %.6f", decreasing ? "yes" : "no",
              c.covariance)};
}

// ---------------------------------------------------------------------------
// End-to-end runs through the command line.

struct RunSet {
  std::vector<double> fcrc_mae, infonce_mae, ordinality;
  bool ok = true;
};

RunSet synthetic_runs() {
  RunSet set;
  fs::create_directories(kRoot);
  for (int s = 0; s < kSeeds; ++s) {
    const std::string seed = std::to_string(s);
    const std::string data = (kRoot / ("data_" + seed + ".csv")).string();
    set.ok = set.ok && run_cli({"synth", "--n", "1000", "--range", "16:77", "--bins", "5", "--noise", "0.3",
                                "--omega", kOmega, "--seed", std::to_string(1000 + s), "--out", data}) == 0;
    for (const char* loss : {"fcrc", "infonce"}) {
      const fs::path dir = kRoot / (std::string(loss) + "_" + seed);
      set.ok = set.ok && run_cli({"train", "--data", data, "--range", "16:77", "--bins", "5", "--loss", loss,
                                  "--tau", kTau, "--epochs", "100", "--seed", seed, "--out", dir.string()}) == 0;
      if (!set.ok) return set;
      const json report = json::parse(slurp(dir / "report.json"));
      const double mae = report["metrics"]["mae"];
      if (std::string(loss) == "fcrc") {
        set.fcrc_mae.push_back(mae);
        set.ordinality.push_back(report["metrics"]["ordinality-spearman"]);
      } else {
        set.infonce_mae.push_back(mae);
      }
    }
  }
  return set;
}

Outcome synthetic_benefit(const RunSet& set) {
  if (!set.ok) return {false, "a synth or train run failed"};
  int wins = 0;
  double improvement = 0.0;
  for (int s = 0; s < kSeeds; ++s) {
    wins += set.fcrc_mae[s] < set.infonce_mae[s] ? 1 : 0;
    improvement += set.infonce_mae[s] - set.fcrc_mae[s];
  }
  improvement /= kSeeds;
  return {wins >= 8 && improvement > 0.0,
          fmt("fcrc wins %d/10 seed pairs, mean MAE improvement %.4f", wins, improvement)};
}

Outcome ordinality(const RunSet& set) {
  if (!set.ok) return {false, "a synth or train run failed"};
  const auto good = std::count_if(set.ordinality.begin(), set.ordinality.end(), [](double r) { return r >= 0.9; });
  const double lowest = *std::min_element(set.ordinality.begin(), set.ordinality.end());
  return {good >= 8, fmt("spearman >= 0.9 in %ld/10 runs, lowest %.3f", static_cast<long>(good), lowest)};
}

Outcome ablation() {
  const fs::path csv = kRoot / "ablate.csv";
  if (run_cli({"ablate-distance", "--data", (kRoot / "data_0.csv").string(), "--range", "16:77", "--bins", "5",
               "--tau", kTau, "--epochs", "100", "--seeds", "0,1,2", "--out", csv.string()}) != 0)
    return {false, "ablate-distance failed"};
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  bool ok = line == "kind,seed,mae,accuracy";
  std::vector<std::string> kinds;
  std::string summary;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string kind, seed, mae, acc, extra;
    ok = ok && std::getline(row, kind, ',') && std::getline(row, seed, ',') && std::getline(row, mae, ',') &&
         std::getline(row, acc, ',') && !std::getline(row, extra, ',');
    if (!ok) break;
    ok = ok && std::isfinite(std::stod(mae)) && std::isfinite(std::stod(acc));
    if (kinds.empty() || kinds.back() != kind) summary += (summary.empty() ? "" : ", ") + kind + " " + mae;
    kinds.push_back(kind);
  }
  const std::vector<std::string> expected{"absolute", "absolute", "absolute", "sqrt",    "sqrt",
                                          "sqrt",     "squared",  "squared",  "squared"};
  return {ok && kinds == expected, "9 rows, first-seed MAE " + summary};
}

// Reports differ only in measured wall time.
std::string stable_report(const fs::path& p) {
  json report = json::parse(slurp(p));
  report.erase("wall-time-seconds");
  return report.dump();
}

Outcome determinism() {
  const fs::path first = kRoot.string() + "_first";
  fs::remove_all(first);
  fs::rename(kRoot, first);
  synthetic_runs();
  ablation();

  std::size_t compared = 0, differing = 0;
  for (const auto& entry : fs::recursive_directory_iterator(first)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), first);
    const fs::path again = kRoot / rel;
    const bool same = !fs::exists(again)                     ? false
                      : rel.filename() == "report.json"      ? stable_report(entry.path()) == stable_report(again)
                                                             : slurp(entry.path()) == slurp(again);
    ++compared;
    if (!same) {
      ++differing;
      std::cerr << "differs: " << rel.string() << "\n";
    }
  }
  return {compared > 0 && differing == 0,
          fmt("%zu files compared (data, history, checkpoints, reports, ablation), %zu differ", compared, differing)};
}

}  // namespace

int main() {
  fs::remove_all(kRoot);
  int failures = 0;
  auto report = [&](int id, const char* name, double limit_seconds, auto&& check) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o = check();
    const double seconds = elapsed_since(start);
    const bool in_time = seconds < limit_seconds;
    const bool passed = o.passed && in_time;
    failures += passed ? 0 : 1;
    std::cout << (passed ? "PASS" : "FAIL") << "  criterion " << std::setw(2) << id << "  " << name << ": "
              << o.detail << fmt(" [%.2fs%s]", seconds, in_time ? "" : ", over time limit") << std::endl;
  };

  report(1, "gradient suite", 30.0, gradients);
  report(2, "lambda invariants", 5.0, lambda_invariants);
  report(3, "reduction identity", 1.0, reduction_identity);
  report(4, "refinement identities", 1.0, refinement_identities);
  report(5, "mutual-information bounds", 60.0, mi_bounds);
  report(6, "condition 1 witness", 1.0, condition_one);

  RunSet runs;
  report(7, "synthetic benefit", 180.0, [&] {
    runs = synthetic_runs();
    return synthetic_benefit(runs);
  });
  report(8, "prompt ordinality", 1.0, [&] { return ordinality(runs); });
  report(9, "distance ablation", 300.0, ablation);
  report(10, "determinism", 600.0, determinism);

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
