#pragma once

#include <optional>
#include <string>
#include <vector>

namespace neurohybrid {

struct ConfusionMatrix {
  int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::string positive_label = "positive";
  int64_t total() const { return tp + fp + tn + fn; }
};

// score >= threshold predicts positive (inclusive boundary).
ConfusionMatrix confusion(const std::vector<int>& labels, const std::vector<double>& scores,
                          double threshold = 0.5, const std::string& positive_label = "positive");

// Metrics with a zero denominator are undefined, never coerced to 0.
struct SummaryMetrics {
  std::optional<double> sensitivity, specificity, youden, f1, accuracy;
};

SummaryMetrics summary_metrics(const ConfusionMatrix& cm);

struct RocPoint {
  double fpr = 0.0, tpr = 0.0;
  double threshold = 0.0;  // +infinity for the (0,0) sentinel
};

// Thresholds swept over +infinity plus the distinct scores in descending
// order; consecutive duplicate points removed; runs from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(const std::vector<int>& labels, const std::vector<double>& scores);

// Rank statistic with tie correction: [#(pos>neg) + 0.5 #(ties)] / (n_pos n_neg).
double auc(const std::vector<int>& labels, const std::vector<double>& scores);

// Trapezoidal integration of roc_curve; agrees with auc() to ~1e-12.
double auc_trapezoid(const std::vector<int>& labels, const std::vector<double>& scores);

struct EvalReport {
  std::string task;        // e.g. "psp-vs-pd"
  std::string model_kind;  // "ml", "cnn", "hybrid"
  std::string inputs;      // e.g. "mri+mask+volume"
  double threshold = 0.5;
  int64_t subjects = 0;
  ConfusionMatrix cm;
  SummaryMetrics metrics;
  double auc_value = 0.0;
  std::vector<RocPoint> roc;
};

EvalReport make_report(const std::string& task, const std::string& model_kind,
                       const std::string& inputs, const std::vector<int>& labels,
                       const std::vector<double>& scores, double threshold,
                       const std::string& positive_label);

// Stable JSON schema; undefined metrics serialize as null, as does the
// +infinity ROC threshold sentinel.
std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);
std::string render_report(const EvalReport& report);

struct AblationRow {
  std::string model_kind;
  std::string inputs;
  std::optional<EvalReport> report;  // absent cells stay absent, never zero
  std::string note;
};

struct AblationGrid {
  std::string task;
  std::vector<AblationRow> rows;
};

// The canonical (model, inputs) grid of the ablation table.
std::vector<std::pair<std::string, std::string>> ablation_cells();

std::string ablation_to_json(const AblationGrid& grid);
AblationGrid ablation_from_json(const std::string& text);
// Aligned text; per-column maxima are wrapped in '*' (ties all marked).
std::string render_ablation(const AblationGrid& grid);

}  // namespace neurohybrid
