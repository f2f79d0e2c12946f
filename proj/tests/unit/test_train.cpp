#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "numclip/data.hpp"
#include "numclip/error.hpp"
#include "numclip/train.hpp"

using namespace numclip;

namespace {

const BinSpec& age_bins() {
  static const BinSpec spec = default_bins(16, 77, 5, age_concepts());
  return spec;
}

Dataset synthetic(std::uint64_t seed, std::size_t n = 1000) {
  SyntheticConfig cfg;
  cfg.n = n;
  cfg.seed = seed;
  return generate_synthetic(cfg, age_bins());
}

bool same_bits(const Matrix& a, const Matrix& b) {
  return a.same_shape(b) && std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool same_history(const TrainHistory& a, const TrainHistory& b) {
  if (a.epochs.size() != b.epochs.size()) return false;
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    const auto& x = a.epochs[e].loss;
    const auto& y = b.epochs[e].loss;
    if (std::memcmp(&x, &y, sizeof(LossBreakdown)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters alone") {
    Matrix p{{1.0, -2.0}};
    Matrix* params[] = {&p};
    const Matrix grads[] = {Matrix(1, 2)};
    AdamState state;
    for (int i = 0; i < 3; ++i) adam_step(params, grads, state, 0.1);
    CHECK(p == Matrix{{1.0, -2.0}});
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    for (double g : {3.0, -0.02, 1e4}) {
      Matrix p{{0.5}};
      Matrix* params[] = {&p};
      const Matrix grads[] = {Matrix{{g}}};
      AdamState state;
      adam_step(params, grads, state, 1e-3);
      const double expected = 0.5 - 1e-3 * g / (std::abs(g) + 1e-8);
      CHECK(p(0, 0) == doctest::Approx(expected).epsilon(1e-14));
      CHECK(state.step == 1);
    }
  }
  SUBCASE("second step matches the bias-corrected formula") {
    Matrix p{{0.0}};
    Matrix* params[] = {&p};
    AdamState state;
    const double g1 = 2.0, g2 = -1.0, lr = 0.01;
    adam_step(params, std::vector<Matrix>{Matrix{{g1}}}, state, lr);
    adam_step(params, std::vector<Matrix>{Matrix{{g2}}}, state, lr);
    const double m = 0.9 * 0.1 * g1 + 0.1 * g2;
    const double v = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
    const double mhat = m / (1 - 0.9 * 0.9);
    const double vhat = v / (1 - 0.999 * 0.999);
    const double expected = -lr * g1 / (std::abs(g1) + 1e-8) - lr * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("parameter groups are independent") {
    Matrix a{{1.0}}, b{{1.0}};
    Matrix* both[] = {&a, &b};
    AdamState joint;
    adam_step(both, std::vector<Matrix>{Matrix{{0.3}}, Matrix{{0.0}}}, joint, 0.1);
    Matrix c{{1.0}};
    Matrix* alone[] = {&c};
    AdamState single;
    adam_step(alone, std::vector<Matrix>{Matrix{{0.3}}}, single, 0.1);
    CHECK(a == c);
    CHECK(b == Matrix{{1.0}});
  }
  SUBCASE("shape mismatch") {
    Matrix p(2, 2);
    Matrix* params[] = {&p};
    AdamState state;
    CHECK_THROWS_AS(adam_step(params, std::vector<Matrix>{Matrix(2, 1)}, state, 0.1), Error);
  }
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);

  TrainConfig zero;
  zero.epochs = 0;
  const Dataset d = synthetic(1, 50);
  CHECK_THROWS_AS(train(zero, d, age_bins()), Error);
}

TEST_CASE("training is deterministic") {
  const Dataset d = synthetic(2, 200);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 13;
  const TrainResult a = train(cfg, d, age_bins(), &d);
  TrainResult b = train(cfg, d, age_bins(), &d);
  CHECK(same_history(a.history, b.history));
  CHECK(history_csv(a.history) == history_csv(b.history));
  ModelParams ma = a.model;
  const auto pa = ma.parameters();
  const auto pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(same_bits(*pa[i], *pb[i]));

  cfg.seed = 14;
  const TrainResult c = train(cfg, d, age_bins());
  CHECK_FALSE(same_history(a.history, c.history));
}

TEST_CASE("history") {
  const Dataset d = synthetic(3, 100);
  TrainConfig cfg;
  cfg.epochs = 3;
  const TrainResult r = train(cfg, d, age_bins(), &d);
  REQUIRE(r.history.epochs.size() == 3);
  for (const auto& e : r.history.epochs) {
    CHECK(std::isfinite(e.loss.total));
    CHECK(e.eval_mae.has_value());
    CHECK(e.eval_accuracy.has_value());
  }
  std::istringstream csv(history_csv(r.history));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "epoch,fcrc_i2t,fcrc_t2i,regression,total,eval_mae,eval_acc");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 3);

  const TrainResult plain = train(cfg, d, age_bins());
  CHECK_FALSE(plain.history.epochs[0].eval_mae.has_value());
  CHECK(history_csv(plain.history).find(",,") != std::string::npos);
}

TEST_CASE("loss drops over 50 epochs") {
  int improved = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Dataset d = synthetic(100 + s);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = s;
    const TrainResult r = train(cfg, d, age_bins());
    if (r.history.epochs.front().loss.total > r.history.epochs.back().loss.total) ++improved;
  }
  CHECK(improved >= 9);
}

TEST_CASE("single-label data reduces fcrc to infonce") {
  Dataset d = synthetic(4, 64);
  for (double& y : d.y) y = 40.0;
  assign_bins(d, age_bins());
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  const TrainResult f = train(cfg, d, age_bins());
  cfg.loss = LossMode::infonce;
  const TrainResult n = train(cfg, d, age_bins());
  for (std::size_t e = 0; e < 4; ++e) {
    CHECK(std::abs(f.history.epochs[e].loss.total - n.history.epochs[e].loss.total) < 1e-12);
  }
  CHECK_FALSE(f.history.warnings.empty());
}

TEST_CASE("variants train") {
  const Dataset d = synthetic(5, 200);
  TrainConfig cfg;
  cfg.epochs = 3;
  SUBCASE("shift network") { cfg.delta_variant = DeltaVariant::small_network; }
  SUBCASE("raw features") { cfg.raw_features = true; }
  SUBCASE("exp weights, squared distance") {
    cfg.lambda_mode = LambdaMode::exp_norm;
    cfg.beta = 0.001;
    cfg.distance = DistanceKind::squared;
  }
  const TrainResult r = train(cfg, d, age_bins());
  CHECK(std::isfinite(r.history.epochs.back().loss.total));
  for (double s : r.model.delta.shift.data()) CHECK(1.0 + s >= DeltaParams::kMinScale);
}

TEST_CASE("empty dataset") {
  Dataset empty;
  try {
    train(TrainConfig{}, empty, age_bins());
    FAIL("expected empty_dataset");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_dataset);
  }
}
