#include <cmath>
#include <vector>

#include "doctest.h"
#include "neurohybrid/cohort.hpp"
#include "neurohybrid/errors.hpp"
#include "neurohybrid/fusion.hpp"
#include "neurohybrid/rng.hpp"
#include "neurohybrid/train.hpp"
#include "oracles.hpp"

using namespace neurohybrid;

namespace {

struct Problem {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
};

Problem random_problem(Rng& rng, size_t n, size_t d) {
  Problem p;
  std::vector<double> truth(d);
  for (auto& w : truth) w = rng.normal(0.0, 1.0);
  const double true_bias = rng.normal(0.0, 0.5);
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> row(d);
    double z = true_bias;
    for (size_t j = 0; j < d; ++j) {
      row[j] = rng.normal(0.0, 2.0);
      z += truth[j] * row[j];
    }
    const double prob = 1.0 / (1.0 + std::exp(-z));
    p.labels.push_back(rng.uniform() < prob ? 1 : 0);
    p.rows.push_back(std::move(row));
  }
  p.labels[0] = 0;  // both classes guaranteed
  p.labels[1] = 1;
  return p;
}

double weight_norm(const LogRegModel& m) {
  double s = 0.0;
  for (const double w : m.weights) s += w * w;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("fuse keeps feature order: dense activations then volume ratios") {
  std::vector<double> cnn(256);
  for (size_t i = 0; i < cnn.size(); ++i) cnn[i] = static_cast<double>(i) * 0.5;
  std::vector<double> vols(kStructureCount);
  for (size_t i = 0; i < vols.size(); ++i) vols[i] = 0.001 * static_cast<double>(i + 1);

  const auto fused = fuse(cnn, vols);
  REQUIRE(fused.size() == 268);
  for (size_t i = 0; i < cnn.size(); ++i) CHECK(fused[i] == cnn[i]);
  for (size_t i = 0; i < vols.size(); ++i) CHECK(fused[256 + i] == vols[i]);

  const auto zeros = fuse(std::vector<double>(4, 0.0), vols);
  REQUIRE(zeros.size() == 16);
  for (size_t i = 0; i < 4; ++i) CHECK(zeros[i] == 0.0);

  CHECK_THROWS_AS(fuse({}, vols), std::invalid_argument);
  CHECK_THROWS_AS(fuse(cnn, std::vector<double>(11, 0.1)), std::invalid_argument);
}

TEST_CASE("standardizer centers and scales against the fitted rows") {
  const std::vector<std::vector<double>> rows{{1.0, 5.0}, {3.0, 5.0}, {5.0, 5.0}};
  const auto st = Standardizer::fit(rows);

  REQUIRE(st.mean.size() == 2);
  CHECK(st.mean[0] == 3.0);
  CHECK(st.mean[1] == 5.0);
  CHECK(st.scale[0] == doctest::Approx(std::sqrt(8.0 / 3.0)).epsilon(1e-15));
  CHECK(st.scale[1] == 1e-8);  // constant column hits the floor

  const auto center = st.apply({3.0, 5.0});
  CHECK(center[0] == 0.0);
  CHECK(center[1] == 0.0);

  // Applied training columns come out with population mean 0 and std 1.
  double sum = 0.0, sq = 0.0;
  for (const auto& r : rows) {
    const double z = st.apply(r)[0];
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / 3.0) < 1e-15);
  CHECK(std::sqrt(sq / 3.0) == doctest::Approx(1.0).epsilon(1e-12));

  // Held-out rows are judged by the training statistics, not their own.
  const auto out = st.apply({7.0, 5.0});
  CHECK(out[0] == doctest::Approx(4.0 / std::sqrt(8.0 / 3.0)).epsilon(1e-12));

  CHECK_THROWS_AS(Standardizer::fit({}), std::invalid_argument);
  CHECK_THROWS_AS(Standardizer::fit({{1.0}}), std::invalid_argument);
  CHECK_THROWS_AS(Standardizer::fit({{1.0}, {1.0, 2.0}}), std::invalid_argument);
  CHECK_THROWS_AS(st.apply({1.0}), std::invalid_argument);
}

TEST_CASE("fitted model matches an independent IRLS solver") {
  Rng rng(20260819);
  for (int trial = 0; trial < 20; ++trial) {
    const size_t d = 1 + rng.uniform_int(10);
    const size_t n = 10 + rng.uniform_int(41);
    auto prob = random_problem(rng, n, d);

    const double lambda = std::vector<double>{0.1, 1.0, 10.0}[trial % 3];
    double w_neg = 1.0, w_pos = 1.0;
    if (trial % 2 == 1) std::tie(w_neg, w_pos) = class_weights(prob.labels);

    LogRegConfig cfg;
    cfg.lambda = lambda;
    cfg.max_iterations = 200;
    const auto model = fit_logreg(prob.rows, prob.labels, w_neg, w_pos, cfg);
    const auto oracle = oracles::irls_fit(prob.rows, prob.labels, w_neg, w_pos, lambda);

    CAPTURE(trial);
    CHECK(model.converged);
    REQUIRE(model.weights.size() == oracle.weights.size());
    for (size_t j = 0; j < oracle.weights.size(); ++j)
      CHECK(std::abs(model.weights[j] - oracle.weights[j]) < 1e-4);
    CHECK(std::abs(model.bias - oracle.bias) < 1e-4);
    for (const auto& row : prob.rows)
      CHECK(std::abs(model.predict(row) - oracles::irls_predict(oracle, row)) < 1e-4);
  }
}

TEST_CASE("integer class weights equal duplicating the minority class") {
  Rng rng(7);
  auto prob = random_problem(rng, 24, 3);
  // Rebuild labels at a 3:1 imbalance.
  for (size_t i = 0; i < prob.labels.size(); ++i) prob.labels[i] = (i % 4 == 0) ? 1 : 0;

  std::vector<std::vector<double>> dup_rows;
  std::vector<int> dup_labels;
  for (size_t i = 0; i < prob.rows.size(); ++i) {
    const int copies = prob.labels[i] ? 3 : 1;
    for (int c = 0; c < copies; ++c) {
      dup_rows.push_back(prob.rows[i]);
      dup_labels.push_back(prob.labels[i]);
    }
  }

  // With no penalty the objective is affine-invariant, so the differing
  // standardization statistics of the duplicated set cannot matter.
  LogRegConfig cfg;
  cfg.lambda = 0.0;
  cfg.tolerance = 1e-10;
  cfg.max_iterations = 500;
  const auto weighted = fit_logreg(prob.rows, prob.labels, 1.0, 3.0, cfg);
  const auto duplicated = fit_logreg(dup_rows, dup_labels, 1.0, 1.0, cfg);

  CHECK(weighted.converged);
  CHECK(duplicated.converged);
  for (const auto& row : prob.rows)
    CHECK(std::abs(weighted.predict(row) - duplicated.predict(row)) < 1e-6);
}

TEST_CASE("stronger regularization shrinks the weights") {
  Rng rng(99);
  const auto prob = random_problem(rng, 40, 4);

  double prev = std::numeric_limits<double>::infinity();
  for (const double lambda : {0.1, 1.0, 10.0, 100.0}) {
    LogRegConfig cfg;
    cfg.lambda = lambda;
    const auto model = fit_logreg(prob.rows, prob.labels, 1.0, 1.0, cfg);
    const double norm = weight_norm(model);
    CHECK(norm < prev);
    prev = norm;
  }
}

TEST_CASE("separable one-dimensional data learns a positive slope") {
  const std::vector<std::vector<double>> rows{{-2.0}, {-1.0}, {1.0}, {2.0}};
  const std::vector<int> labels{0, 0, 1, 1};
  const auto model = fit_logreg(rows, labels, 1.0, 1.0);

  CHECK(model.weights[0] > 0.0);
  CHECK(model.predict({2.0}) > model.predict({-2.0}));
  CHECK(model.predict({-2.0}) < 0.5);
  CHECK(model.predict({2.0}) > 0.5);
}

TEST_CASE("zero weights and bias predict exactly one half") {
  LogRegModel model;
  model.weights = {0.0, 0.0};
  model.stats.mean = {1.0, -2.0};
  model.stats.scale = {2.0, 3.0};
  CHECK(model.predict({5.0, -3.0}) == 0.5);

  const auto all = model.predict_all({{5.0, -3.0}, {0.0, 0.0}});
  REQUIRE(all.size() == 2);
  CHECK(all[0] == 0.5);
  CHECK(all[1] == 0.5);
}

TEST_CASE("decision threshold is inclusive") {
  CHECK(decide(0.5, 0.5) == 1);
  CHECK(decide(0.499999, 0.5) == 0);
  CHECK(decide(0.2, 0.2) == 1);
  CHECK(decide(0.9) == 1);
  CHECK(decide(0.1) == 0);
}

TEST_CASE("fit validation") {
  const std::vector<std::vector<double>> rows{{1.0}, {2.0}, {3.0}, {4.0}};
  const std::vector<int> labels{0, 0, 1, 1};

  CHECK_THROWS_AS(fit_logreg({{1.0}}, {0}, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_logreg(rows, {0, 0, 1}, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_logreg(rows, {0, 0, 0, 0}, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_logreg(rows, {0, 0, 1, 2}, 1.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(fit_logreg({{1.0}, {}, {3.0}, {4.0}}, labels, 1.0, 1.0),
                  std::invalid_argument);

  LogRegConfig bad;
  bad.lambda = -1.0;
  CHECK_THROWS_AS(fit_logreg(rows, labels, 1.0, 1.0, bad), std::invalid_argument);
  CHECK_THROWS_AS(fit_logreg(rows, labels, 0.0, 1.0), std::invalid_argument);

  const std::vector<std::vector<double>> inf_rows{{1.0}, {std::numeric_limits<double>::infinity()},
                                                  {3.0}, {4.0}};
  CHECK_THROWS_AS(fit_logreg(inf_rows, labels, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("iteration cap returns a flagged model instead of throwing") {
  Rng rng(3);
  const auto prob = random_problem(rng, 30, 5);
  LogRegConfig cfg;
  cfg.max_iterations = 1;
  cfg.tolerance = 1e-14;
  const auto model = fit_logreg(prob.rows, prob.labels, 1.0, 1.0, cfg);
  CHECK_FALSE(model.converged);
  CHECK(model.iterations == 1);
}

TEST_CASE("logreg json round trip preserves behaviour") {
  Rng rng(55);
  const auto prob = random_problem(rng, 30, 4);
  const auto model = fit_logreg(prob.rows, prob.labels, 1.0, 1.0);

  const auto text = logreg_to_json(model);
  const auto back = logreg_from_json(text);

  CHECK(back.weights == model.weights);
  CHECK(back.bias == model.bias);
  CHECK(back.lambda == model.lambda);
  CHECK(back.stats.mean == model.stats.mean);
  CHECK(back.stats.scale == model.stats.scale);
  CHECK(back.converged == model.converged);
  for (const auto& row : prob.rows) CHECK(back.predict(row) == model.predict(row));

  CHECK_THROWS_AS(logreg_from_json("not json"), FormatError);
  CHECK_THROWS_AS(logreg_from_json("{\"weights\":[1,2],\"bias\":0,\"lambda\":1,"
                                   "\"mean\":[0],\"scale\":[1],\"converged\":true,"
                                   "\"iterations\":1}"),
                  FormatError);
}

}  // TEST_SUITE
