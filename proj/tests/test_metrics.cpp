#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "doctest.h"
#include "neurohybrid/errors.hpp"
#include "neurohybrid/metrics.hpp"
#include "neurohybrid/rng.hpp"
#include "oracles.hpp"

using namespace neurohybrid;

namespace {

// Random label/score sets with deliberate tie mass: scores snap to a coarse
// lattice about half the time.
void random_scored_set(Rng& rng, size_t n, std::vector<int>& labels, std::vector<double>& scores,
                       bool force_both_classes = true) {
  labels.resize(n);
  scores.resize(n);
  for (size_t i = 0; i < n; ++i) {
    labels[i] = rng.uniform() < 0.5 ? 1 : 0;
    double s = rng.uniform();
    if (rng.uniform() < 0.5) s = std::round(s * 8.0) / 8.0;
    scores[i] = s;
  }
  if (force_both_classes && n >= 2) {
    labels[0] = 0;
    labels[1] = 1;
  }
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("confusion counts match brute-force tallies") {
  Rng rng(314159);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> labels;
    std::vector<double> scores;
    random_scored_set(rng, 1 + rng.uniform_int(40), labels, scores, false);
    const double threshold = rng.uniform();

    const auto cm = confusion(labels, scores, threshold);
    const auto brute = oracles::brute_confusion(labels, scores, threshold);
    CHECK(cm.tp == brute.tp);
    CHECK(cm.fp == brute.fp);
    CHECK(cm.tn == brute.tn);
    CHECK(cm.fn == brute.fn);
    CHECK(cm.total() == static_cast<int64_t>(labels.size()));
  }
}

TEST_CASE("threshold boundary counts as a positive call") {
  const auto cm = confusion({1, 0}, {0.5, 0.5}, 0.5);
  CHECK(cm.tp == 1);
  CHECK(cm.fp == 1);
  CHECK(cm.tn == 0);
  CHECK(cm.fn == 0);
}

TEST_CASE("confusion validation") {
  CHECK_THROWS_AS(confusion({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(confusion({1, 0}, {0.5}), std::invalid_argument);
  CHECK_THROWS_AS(confusion({2}, {0.5}), std::invalid_argument);
}

TEST_CASE("summary metrics stay undefined on zero denominators") {
  ConfusionMatrix no_pos;
  no_pos.tn = 5;
  no_pos.fp = 2;
  const auto m = summary_metrics(no_pos);
  CHECK_FALSE(m.sensitivity.has_value());
  CHECK(m.specificity.has_value());
  CHECK_FALSE(m.youden.has_value());
  CHECK(m.accuracy.has_value());

  ConfusionMatrix empty;
  const auto e = summary_metrics(empty);
  CHECK_FALSE(e.accuracy.has_value());
  CHECK_FALSE(e.f1.has_value());
}

TEST_CASE("reported sensitivity and specificity pairs reproduce their summary statistics") {
  struct Row {
    double sens, spec, youden;
  };
  // Published operating points and their Youden indices at 2-decimal rounding.
  const std::vector<Row> rows{{0.87, 0.91, 0.78}, {0.80, 0.79, 0.59}, {0.53, 0.95, 0.48}};
  for (const auto& row : rows) {
    const double j = row.sens + row.spec - 1.0;
    CHECK(std::round(j * 100.0) / 100.0 == doctest::Approx(row.youden).epsilon(1e-12));
  }

  // 38 positives vs 57 controls at the first operating point.
  const double correct = std::round(0.87 * 38.0) + std::round(0.91 * 57.0);
  const double acc = correct / 95.0;
  CHECK(acc >= 0.89);
  CHECK(acc <= 0.90);
}

TEST_CASE("youden from separable scores is exactly 1") {
  const std::vector<int> labels{0, 0, 0, 1, 1};
  const std::vector<double> scores{0.1, 0.2, 0.3, 0.8, 0.9};
  const auto m = summary_metrics(confusion(labels, scores, 0.5));
  REQUIRE(m.youden.has_value());
  CHECK(*m.youden == 1.0);
  REQUIRE(m.f1.has_value());
  CHECK(*m.f1 == 1.0);
}

TEST_CASE("roc curve matches a brute-force sweep") {
  Rng rng(271828);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> labels;
    std::vector<double> scores;
    random_scored_set(rng, 2 + rng.uniform_int(30), labels, scores);

    const auto curve = roc_curve(labels, scores);
    const auto brute = oracles::brute_roc(labels, scores);
    REQUIRE(curve.size() == brute.size());
    for (size_t i = 0; i < curve.size(); ++i) {
      CHECK(curve[i].fpr == doctest::Approx(brute[i].first).epsilon(1e-12));
      CHECK(curve[i].tpr == doctest::Approx(brute[i].second).epsilon(1e-12));
    }
    CHECK(curve.front().fpr == 0.0);
    CHECK(curve.front().tpr == 0.0);
    CHECK(std::isinf(curve.front().threshold));
    CHECK(curve.back().fpr == 1.0);
    CHECK(curve.back().tpr == 1.0);
  }
}

TEST_CASE("roc endpoints collapse when every score ties") {
  const auto curve = roc_curve({0, 1, 0, 1}, {0.7, 0.7, 0.7, 0.7});
  REQUIRE(curve.size() == 2);
  CHECK(curve[0].fpr == 0.0);
  CHECK(curve[0].tpr == 0.0);
  CHECK(curve[1].fpr == 1.0);
  CHECK(curve[1].tpr == 1.0);
}

TEST_CASE("perfect separation passes through the top-left corner") {
  const auto curve = roc_curve({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9});
  bool corner = false;
  for (const auto& p : curve) corner = corner || (p.fpr == 0.0 && p.tpr == 1.0);
  CHECK(corner);
  CHECK(auc({0, 0, 1, 1}, {0.1, 0.2, 0.8, 0.9}) == 1.0);
}

TEST_CASE("rank and trapezoid auc agree to 1e-12 with heavy ties") {
  Rng rng(161803);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> labels;
    std::vector<double> scores;
    random_scored_set(rng, 2 + rng.uniform_int(199), labels, scores);

    const double rank = auc(labels, scores);
    const double trap = auc_trapezoid(labels, scores);
    const double brute = oracles::brute_auc(labels, scores);
    CHECK(std::abs(rank - trap) < 1e-12);
    CHECK(std::abs(rank - brute) < 1e-12);
  }
}

TEST_CASE("auc identities") {
  Rng rng(42);
  std::vector<int> labels;
  std::vector<double> scores;
  random_scored_set(rng, 60, labels, scores);

  SUBCASE("all ties give exactly one half") {
    const std::vector<double> flat(labels.size(), 0.3);
    CHECK(auc(labels, flat) == 0.5);
  }
  SUBCASE("monotone transforms leave the value unchanged") {
    std::vector<double> warped(scores.size());
    for (size_t i = 0; i < scores.size(); ++i) warped[i] = std::exp(3.0 * scores[i]) - 2.0;
    CHECK(auc(labels, warped) == doctest::Approx(auc(labels, scores)).epsilon(1e-12));
  }
  SUBCASE("swapping labels reflects the value") {
    std::vector<int> flipped(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) flipped[i] = 1 - labels[i];
    CHECK(auc(flipped, scores) == doctest::Approx(1.0 - auc(labels, scores)).epsilon(1e-12));
  }
  SUBCASE("single-class input is rejected") {
    CHECK_THROWS_AS(auc({1, 1, 1}, {0.1, 0.2, 0.3}), std::invalid_argument);
    CHECK_THROWS_AS(auc({0, 0}, {0.1, 0.2}), std::invalid_argument);
  }
}

TEST_CASE("report assembly and json round trip") {
  const std::vector<int> labels{0, 0, 0, 1, 1};
  const std::vector<double> scores{0.2, 0.4, 0.6, 0.7, 0.9};
  const auto report = make_report("psp-vs-pd", "hybrid", "mri+mask+volume", labels, scores, 0.5,
                                  "PSP");

  CHECK(report.subjects == 5);
  CHECK(report.cm.positive_label == "PSP");
  CHECK(report.auc_value == auc(labels, scores));
  CHECK(report.cm.tp == 2);
  CHECK(report.cm.fp == 1);  // 0.6 crosses the default threshold

  const auto text = eval_report_to_json(report);
  const auto back = eval_report_from_json(text);
  CHECK(back.task == report.task);
  CHECK(back.model_kind == report.model_kind);
  CHECK(back.inputs == report.inputs);
  CHECK(back.threshold == report.threshold);
  CHECK(back.subjects == report.subjects);
  CHECK(back.cm.tp == report.cm.tp);
  CHECK(back.cm.fn == report.cm.fn);
  CHECK(back.auc_value == report.auc_value);
  REQUIRE(back.roc.size() == report.roc.size());
  for (size_t i = 0; i < back.roc.size(); ++i) {
    CHECK(back.roc[i].fpr == report.roc[i].fpr);
    CHECK(back.roc[i].tpr == report.roc[i].tpr);
  }
  CHECK(std::isinf(back.roc.front().threshold));

  REQUIRE(back.metrics.sensitivity.has_value());
  CHECK(*back.metrics.sensitivity == *report.metrics.sensitivity);

  CHECK_THROWS_AS(eval_report_from_json("nonsense"), FormatError);
}

TEST_CASE("undefined metrics serialize as null and come back undefined") {
  ConfusionMatrix cm;
  cm.tn = 3;
  cm.fp = 1;
  EvalReport report;
  report.task = "psp-vs-pd";
  report.model_kind = "ml";
  report.inputs = "volume";
  report.subjects = 4;
  report.cm = cm;
  report.metrics = summary_metrics(cm);

  const auto text = eval_report_to_json(report);
  const auto j = nlohmann::json::parse(text);
  CHECK(j["sensitivity"].is_null());
  CHECK_FALSE(j["specificity"].is_null());

  const auto back = eval_report_from_json(text);
  CHECK_FALSE(back.metrics.sensitivity.has_value());
  REQUIRE(back.metrics.specificity.has_value());
  CHECK(*back.metrics.specificity == 0.75);
}

TEST_CASE("rendered report mentions the headline numbers") {
  const auto report = make_report("psp-vs-pd", "hybrid", "mri+mask+volume", {0, 0, 1, 1},
                                  {0.1, 0.2, 0.8, 0.9}, 0.5, "PSP");
  const auto text = render_report(report);
  CHECK(text.find("psp-vs-pd") != std::string::npos);
  CHECK(text.find("hybrid") != std::string::npos);
  CHECK(text.find("auc") != std::string::npos);
  CHECK(text.find("1.000") != std::string::npos);
}

TEST_CASE("ablation grid declares the canonical seven cells") {
  const auto cells = ablation_cells();
  REQUIRE(cells.size() == 7);
  CHECK(cells[0] == std::pair<std::string, std::string>{"ml", "volume"});
  bool has_hybrid_full = false;
  for (const auto& [kind, inputs] : cells)
    has_hybrid_full = has_hybrid_full || (kind == "hybrid" && inputs == "mri+mask+volume");
  CHECK(has_hybrid_full);
}

TEST_CASE("ablation json keeps absent cells absent") {
  AblationGrid grid;
  grid.task = "psp-vs-pd";
  AblationRow done;
  done.model_kind = "hybrid";
  done.inputs = "mri+mask+volume";
  done.report = make_report("psp-vs-pd", "hybrid", "mri+mask+volume", {0, 1}, {0.2, 0.9}, 0.5,
                            "PSP");
  AblationRow failed;
  failed.model_kind = "cnn";
  failed.inputs = "mri";
  failed.note = "training diverged";
  grid.rows = {done, failed};

  const auto text = ablation_to_json(grid);
  const auto back = ablation_from_json(text);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.task == "psp-vs-pd");
  CHECK(back.rows[0].report.has_value());
  CHECK(back.rows[0].report->auc_value == 1.0);
  CHECK_FALSE(back.rows[1].report.has_value());
  CHECK(back.rows[1].note == "training diverged");

  const auto j = nlohmann::json::parse(text);
  CHECK(j["rows"][1]["report"].is_null());

  CHECK_THROWS_AS(ablation_from_json("[1,2"), FormatError);
}

TEST_CASE("rendered ablation marks every per-column maximum") {
  AblationGrid grid;
  grid.task = "psp-vs-pd";
  auto add = [&](const std::string& kind, const std::string& inputs,
                 const std::vector<double>& scores) {
    AblationRow row;
    row.model_kind = kind;
    row.inputs = inputs;
    row.report = make_report("psp-vs-pd", kind, inputs, {0, 0, 1, 1}, scores, 0.5, "PSP");
    grid.rows.push_back(row);
  };
  add("ml", "volume", {0.4, 0.6, 0.5, 0.9});           // auc 0.625
  add("cnn", "mri", {0.1, 0.2, 0.8, 0.9});             // auc 1.0
  add("hybrid", "mri+volume", {0.2, 0.1, 0.85, 0.95});  // auc 1.0, tie

  const auto text = render_ablation(grid);
  CHECK(text.find("*1.000*") != std::string::npos);
  CHECK(text.find("*0.625*") == std::string::npos);
  // Both tied leaders are starred.
  size_t first = text.find("*1.000*");
  size_t second = text.find("*1.000*", first + 1);
  CHECK(second != std::string::npos);
}

}  // TEST_SUITE
