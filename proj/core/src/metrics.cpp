#include "neurohybrid/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "neurohybrid/errors.hpp"

namespace neurohybrid {

namespace {

using ordered_json = nlohmann::ordered_json;

void check_inputs(const std::vector<int>& labels, const std::vector<double>& scores,
                  bool need_both_classes) {
  if (labels.empty()) throw std::invalid_argument("metrics: empty input");
  if (labels.size() != scores.size())
    throw std::invalid_argument("metrics: " + std::to_string(labels.size()) + " labels vs " +
                                std::to_string(scores.size()) + " scores");
  int64_t pos = 0;
  for (const int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("metrics: labels must be 0 or 1");
    pos += y;
  }
  if (need_both_classes && (pos == 0 || pos == static_cast<int64_t>(labels.size())))
    throw std::invalid_argument("metrics: both classes must be present");
}

ordered_json opt_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

std::optional<double> opt_from_json(const ordered_json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

ordered_json report_to_json_obj(const EvalReport& r) {
  ordered_json j;
  j["task"] = r.task;
  j["model"] = r.model_kind;
  j["inputs"] = r.inputs;
  j["threshold"] = r.threshold;
  j["subjects"] = r.subjects;
  j["confusion"] = {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"tn", r.cm.tn}, {"fn", r.cm.fn},
                    {"positive", r.cm.positive_label}};
  j["sensitivity"] = opt_to_json(r.metrics.sensitivity);
  j["specificity"] = opt_to_json(r.metrics.specificity);
  j["youden"] = opt_to_json(r.metrics.youden);
  j["f1"] = opt_to_json(r.metrics.f1);
  j["accuracy"] = opt_to_json(r.metrics.accuracy);
  j["auc"] = r.auc_value;
  j["roc"] = ordered_json::array();
  for (const auto& p : r.roc) {
    ordered_json jp;
    jp["fpr"] = p.fpr;
    jp["tpr"] = p.tpr;
    if (std::isinf(p.threshold))
      jp["threshold"] = nullptr;  // +infinity sentinel
    else
      jp["threshold"] = p.threshold;
    j["roc"].push_back(jp);
  }
  return j;
}

EvalReport report_from_json_obj(const ordered_json& j) {
  EvalReport r;
  r.task = j.at("task").get<std::string>();
  r.model_kind = j.at("model").get<std::string>();
  r.inputs = j.at("inputs").get<std::string>();
  r.threshold = j.at("threshold").get<double>();
  r.subjects = j.at("subjects").get<int64_t>();
  const auto& cm = j.at("confusion");
  r.cm.tp = cm.at("tp").get<int64_t>();
  r.cm.fp = cm.at("fp").get<int64_t>();
  r.cm.tn = cm.at("tn").get<int64_t>();
  r.cm.fn = cm.at("fn").get<int64_t>();
  r.cm.positive_label = cm.at("positive").get<std::string>();
  r.metrics.sensitivity = opt_from_json(j.at("sensitivity"));
  r.metrics.specificity = opt_from_json(j.at("specificity"));
  r.metrics.youden = opt_from_json(j.at("youden"));
  r.metrics.f1 = opt_from_json(j.at("f1"));
  r.metrics.accuracy = opt_from_json(j.at("accuracy"));
  r.auc_value = j.at("auc").get<double>();
  for (const auto& jp : j.at("roc")) {
    RocPoint p;
    p.fpr = jp.at("fpr").get<double>();
    p.tpr = jp.at("tpr").get<double>();
    p.threshold = jp.at("threshold").is_null() ? std::numeric_limits<double>::infinity()
                                               : jp.at("threshold").get<double>();
    r.roc.push_back(p);
  }
  return r;
}

std::string fmt3(const std::optional<double>& v) {
  if (!v) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", *v);
  return buf;
}

}  // namespace

ConfusionMatrix confusion(const std::vector<int>& labels, const std::vector<double>& scores,
                          double threshold, const std::string& positive_label) {
  check_inputs(labels, scores, false);
  ConfusionMatrix cm;
  cm.positive_label = positive_label;
  for (size_t i = 0; i < labels.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1)
      predicted ? ++cm.tp : ++cm.fn;
    else
      predicted ? ++cm.fp : ++cm.tn;
  }
  return cm;
}

SummaryMetrics summary_metrics(const ConfusionMatrix& cm) {
  SummaryMetrics m;
  if (cm.tp + cm.fn > 0)
    m.sensitivity = static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn);
  if (cm.tn + cm.fp > 0)
    m.specificity = static_cast<double>(cm.tn) / static_cast<double>(cm.tn + cm.fp);
  if (m.sensitivity && m.specificity) m.youden = *m.sensitivity + *m.specificity - 1.0;
  if (2 * cm.tp + cm.fp + cm.fn > 0)
    m.f1 = 2.0 * static_cast<double>(cm.tp) / static_cast<double>(2 * cm.tp + cm.fp + cm.fn);
  if (cm.total() > 0)
    m.accuracy = static_cast<double>(cm.tp + cm.tn) / static_cast<double>(cm.total());
  return m;
}

std::vector<RocPoint> roc_curve(const std::vector<int>& labels, const std::vector<double>& scores) {
  check_inputs(labels, scores, true);
  std::vector<double> thresholds = scores;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<double>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  int64_t pos = 0;
  for (const int y : labels) pos += y;
  const int64_t neg = static_cast<int64_t>(labels.size()) - pos;

  std::vector<RocPoint> curve;
  const auto push = [&](double thr) {
    int64_t tp = 0, fp = 0;
    for (size_t i = 0; i < labels.size(); ++i)
      if (scores[i] >= thr) labels[i] ? ++tp : ++fp;
    RocPoint p;
    p.fpr = static_cast<double>(fp) / static_cast<double>(neg);
    p.tpr = static_cast<double>(tp) / static_cast<double>(pos);
    p.threshold = thr;
    if (curve.empty() || curve.back().fpr != p.fpr || curve.back().tpr != p.tpr) curve.push_back(p);
  };

  push(std::numeric_limits<double>::infinity());
  for (const double t : thresholds) push(t);
  return curve;
}

double auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  check_inputs(labels, scores, true);
  const size_t n = labels.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average ranks over tie groups, then the Mann-Whitney statistic.
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }

  double pos_rank_sum = 0.0;
  int64_t pos = 0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k]) {
      pos_rank_sum += rank[k];
      ++pos;
    }
  const int64_t neg = static_cast<int64_t>(n) - pos;
  const double u = pos_rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auc_trapezoid(const std::vector<int>& labels, const std::vector<double>& scores) {
  const auto curve = roc_curve(labels, scores);
  double area = 0.0;
  for (size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  return area;
}

EvalReport make_report(const std::string& task, const std::string& model_kind,
                       const std::string& inputs, const std::vector<int>& labels,
                       const std::vector<double>& scores, double threshold,
                       const std::string& positive_label) {
  EvalReport r;
  r.task = task;
  r.model_kind = model_kind;
  r.inputs = inputs;
  r.threshold = threshold;
  r.subjects = static_cast<int64_t>(labels.size());
  r.cm = confusion(labels, scores, threshold, positive_label);
  r.metrics = summary_metrics(r.cm);
  r.auc_value = auc(labels, scores);
  r.roc = roc_curve(labels, scores);
  return r;
}

std::string eval_report_to_json(const EvalReport& report) {
  return report_to_json_obj(report).dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  const ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("eval report: not valid JSON");
  return report_from_json_obj(j);
}

std::string render_report(const EvalReport& r) {
  std::string out;
  out += r.task + " | model " + r.model_kind + " | inputs " + r.inputs + " | " +
         std::to_string(r.subjects) + " subjects | threshold " + fmt3(r.threshold) + "\n";
  out += "  positive class: " + r.cm.positive_label + "\n";
  out += "  confusion: tp=" + std::to_string(r.cm.tp) + " fp=" + std::to_string(r.cm.fp) +
         " tn=" + std::to_string(r.cm.tn) + " fn=" + std::to_string(r.cm.fn) + "\n";
  out += "  auc=" + fmt3(r.auc_value) + " sensitivity=" + fmt3(r.metrics.sensitivity) +
         " specificity=" + fmt3(r.metrics.specificity) + " youden=" + fmt3(r.metrics.youden) +
         " f1=" + fmt3(r.metrics.f1) + " accuracy=" + fmt3(r.metrics.accuracy) + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> ablation_cells() {
  return {
      {"ml", "volume"},
      {"cnn", "mri"},
      {"cnn", "mask"},
      {"cnn", "mri+mask"},
      {"hybrid", "mri+volume"},
      {"hybrid", "mask+volume"},
      {"hybrid", "mri+mask+volume"},
  };
}

std::string ablation_to_json(const AblationGrid& grid) {
  ordered_json j;
  j["task"] = grid.task;
  j["rows"] = ordered_json::array();
  for (const auto& row : grid.rows) {
    ordered_json jr;
    jr["model"] = row.model_kind;
    jr["inputs"] = row.inputs;
    jr["report"] = row.report ? report_to_json_obj(*row.report) : ordered_json(nullptr);
    jr["note"] = row.note;
    j["rows"].push_back(jr);
  }
  return j.dump(2) + "\n";
}

AblationGrid ablation_from_json(const std::string& text) {
  const ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("ablation grid: not valid JSON");
  AblationGrid grid;
  grid.task = j.at("task").get<std::string>();
  for (const auto& jr : j.at("rows")) {
    AblationRow row;
    row.model_kind = jr.at("model").get<std::string>();
    row.inputs = jr.at("inputs").get<std::string>();
    if (!jr.at("report").is_null()) row.report = report_from_json_obj(jr.at("report"));
    row.note = jr.at("note").get<std::string>();
    grid.rows.push_back(std::move(row));
  }
  return grid;
}

std::string render_ablation(const AblationGrid& grid) {
  struct Col {
    const char* name;
    std::optional<double> (*get)(const EvalReport&);
  };
  static const Col cols[] = {
      {"auc", [](const EvalReport& r) { return std::optional<double>(r.auc_value); }},
      {"sens", [](const EvalReport& r) { return r.metrics.sensitivity; }},
      {"spec", [](const EvalReport& r) { return r.metrics.specificity; }},
      {"youden", [](const EvalReport& r) { return r.metrics.youden; }},
      {"f1", [](const EvalReport& r) { return r.metrics.f1; }},
      {"acc", [](const EvalReport& r) { return r.metrics.accuracy; }},
  };
  constexpr size_t ncols = sizeof(cols) / sizeof(cols[0]);

  std::optional<double> best[ncols];
  for (const auto& row : grid.rows) {
    if (!row.report) continue;
    for (size_t c = 0; c < ncols; ++c) {
      const auto v = cols[c].get(*row.report);
      if (v && (!best[c] || *v > *best[c])) best[c] = *v;
    }
  }

  size_t model_w = 5, inputs_w = 6;
  for (const auto& row : grid.rows) {
    model_w = std::max(model_w, row.model_kind.size());
    inputs_w = std::max(inputs_w, row.inputs.size());
  }

  const auto pad = [](std::string s, size_t w) {
    if (s.size() < w) s += std::string(w - s.size(), ' ');
    return s;
  };

  std::string out = "task: " + grid.task + "\n";
  out += pad("model", model_w) + "  " + pad("inputs", inputs_w);
  for (size_t c = 0; c < ncols; ++c) out += "  " + pad(cols[c].name, 9);
  out += "\n";
  for (const auto& row : grid.rows) {
    out += pad(row.model_kind, model_w) + "  " + pad(row.inputs, inputs_w);
    for (size_t c = 0; c < ncols; ++c) {
      std::string cell;
      if (!row.report) {
        cell = "absent";
      } else {
        const auto v = cols[c].get(*row.report);
        cell = fmt3(v);
        if (v && best[c] && *v == *best[c]) cell = "*" + cell + "*";
      }
      out += "  " + pad(cell, 9);
    }
    if (!row.note.empty()) out += "  " + row.note;
    out += "\n";
  }
  return out;
}

}  // namespace neurohybrid
