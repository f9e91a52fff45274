#include "neurohybrid/fusion.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "neurohybrid/cohort.hpp"
#include "neurohybrid/errors.hpp"

namespace neurohybrid {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kScaleFloor = 1e-8;

double sigmoid_stable(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus_stable(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

void check_rows(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels) {
  if (rows.size() < 2) throw std::invalid_argument("logreg: need at least 2 training rows");
  if (rows.size() != labels.size())
    throw std::invalid_argument("logreg: " + std::to_string(rows.size()) + " rows vs " +
                                std::to_string(labels.size()) + " labels");
  const size_t d = rows.front().size();
  if (d == 0) throw std::invalid_argument("logreg: empty feature rows");
  int64_t pos = 0;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d)
      throw std::invalid_argument("logreg: row " + std::to_string(i) + " has " +
                                  std::to_string(rows[i].size()) + " features, expected " +
                                  std::to_string(d));
    for (const double v : rows[i])
      if (!std::isfinite(v)) throw std::invalid_argument("logreg: non-finite feature value");
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("logreg: labels must be 0 or 1");
    pos += labels[i];
  }
  if (pos == 0 || pos == static_cast<int64_t>(rows.size()))
    throw std::invalid_argument("logreg: both classes must be present");
}

// In-place lower-triangular Cholesky; returns false when a pivot fails.
bool cholesky(std::vector<double>& a, size_t n) {
  for (size_t j = 0; j < n; ++j) {
    double diag = a[j * n + j];
    for (size_t k = 0; k < j; ++k) diag -= a[j * n + k] * a[j * n + k];
    if (!(diag > 0.0)) return false;
    const double root = std::sqrt(diag);
    a[j * n + j] = root;
    for (size_t i = j + 1; i < n; ++i) {
      double v = a[i * n + j];
      for (size_t k = 0; k < j; ++k) v -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = v / root;
    }
  }
  return true;
}

std::vector<double> cholesky_solve(const std::vector<double>& l, size_t n,
                                   const std::vector<double>& b) {
  std::vector<double> y(n);
  for (size_t i = 0; i < n; ++i) {
    double v = b[i];
    for (size_t k = 0; k < i; ++k) v -= l[i * n + k] * y[k];
    y[i] = v / l[i * n + i];
  }
  for (size_t ii = n; ii-- > 0;) {
    double v = y[ii];
    for (size_t k = ii + 1; k < n; ++k) v -= l[k * n + ii] * y[k];
    y[ii] = v / l[ii * n + ii];
  }
  return y;
}

}  // namespace

std::vector<double> fuse(const std::vector<double>& cnn_features,
                         const std::vector<double>& volume_vector) {
  if (cnn_features.empty()) throw std::invalid_argument("fuse: empty feature vector");
  if (volume_vector.size() != static_cast<size_t>(kStructureCount))
    throw std::invalid_argument("fuse: expected " + std::to_string(kStructureCount) +
                                " volume ratios, got " + std::to_string(volume_vector.size()));
  std::vector<double> fused = cnn_features;
  fused.insert(fused.end(), volume_vector.begin(), volume_vector.end());
  return fused;
}

Standardizer Standardizer::fit(const std::vector<std::vector<double>>& rows) {
  if (rows.size() < 2) throw std::invalid_argument("standardizer: need at least 2 rows");
  const size_t d = rows.front().size();
  for (const auto& r : rows)
    if (r.size() != d) throw std::invalid_argument("standardizer: ragged feature rows");
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  const double n = static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  for (size_t j = 0; j < d; ++j) s.mean[j] /= n;
  for (const auto& r : rows)
    for (size_t j = 0; j < d; ++j) {
      const double c = r[j] - s.mean[j];
      s.scale[j] += c * c;
    }
  for (size_t j = 0; j < d; ++j) s.scale[j] = std::max(std::sqrt(s.scale[j] / n), kScaleFloor);
  return s;
}

std::vector<double> Standardizer::apply(const std::vector<double>& row) const {
  if (row.size() != mean.size())
    throw std::invalid_argument("standardizer: row has " + std::to_string(row.size()) +
                                " features, stats cover " + std::to_string(mean.size()));
  std::vector<double> z(row.size());
  for (size_t j = 0; j < row.size(); ++j) z[j] = (row[j] - mean[j]) / scale[j];
  return z;
}

double LogRegModel::predict(const std::vector<double>& features) const {
  const std::vector<double> z = stats.apply(features);
  if (z.size() != weights.size())
    throw std::invalid_argument("logreg: feature width " + std::to_string(z.size()) +
                                " does not match " + std::to_string(weights.size()) + " weights");
  double acc = bias;
  for (size_t j = 0; j < z.size(); ++j) acc += weights[j] * z[j];
  return sigmoid_stable(acc);
}

std::vector<double> LogRegModel::predict_all(const std::vector<std::vector<double>>& rows) const {
  std::vector<double> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(predict(r));
  return out;
}

int decide(double probability, double threshold) { return probability >= threshold ? 1 : 0; }

LogRegModel fit_logreg(const std::vector<std::vector<double>>& rows,
                       const std::vector<int>& labels, double w_neg, double w_pos,
                       const LogRegConfig& cfg) {
  check_rows(rows, labels);
  if (cfg.lambda < 0.0) throw std::invalid_argument("logreg: lambda must be >= 0");
  if (!(w_neg > 0.0) || !(w_pos > 0.0))
    throw std::invalid_argument("logreg: class weights must be positive");
  if (cfg.max_iterations < 1) throw std::invalid_argument("logreg: max_iterations must be >= 1");

  LogRegModel model;
  model.lambda = cfg.lambda;
  model.stats = Standardizer::fit(rows);

  const size_t n = rows.size();
  const size_t d = rows.front().size();
  std::vector<std::vector<double>> z(n);
  for (size_t i = 0; i < n; ++i) z[i] = model.stats.apply(rows[i]);
  std::vector<double> cw(n);
  for (size_t i = 0; i < n; ++i) cw[i] = labels[i] ? w_pos : w_neg;

  std::vector<double> theta(d + 1, 0.0);  // weights then bias
  const auto logit = [&](const std::vector<double>& th, size_t i) {
    double acc = th[d];
    for (size_t j = 0; j < d; ++j) acc += th[j] * z[i][j];
    return acc;
  };
  const auto objective = [&](const std::vector<double>& th) {
    double loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const double zi = logit(th, i);
      loss += cw[i] * (softplus_stable(zi) - static_cast<double>(labels[i]) * zi);
    }
    double pen = 0.0;
    for (size_t j = 0; j < d; ++j) pen += th[j] * th[j];
    return loss + 0.5 * cfg.lambda * pen;
  };

  std::vector<double> g(d + 1), h((d + 1) * (d + 1)), p(n);
  double loss = objective(theta);
  for (int64_t iter = 0; iter < cfg.max_iterations; ++iter) {
    std::fill(g.begin(), g.end(), 0.0);
    std::fill(h.begin(), h.end(), 0.0);
    for (size_t i = 0; i < n; ++i) {
      p[i] = sigmoid_stable(logit(theta, i));
      const double r = cw[i] * (p[i] - static_cast<double>(labels[i]));
      for (size_t j = 0; j < d; ++j) g[j] += r * z[i][j];
      g[d] += r;
      const double curv = cw[i] * p[i] * (1.0 - p[i]);
      if (curv == 0.0) continue;
      for (size_t a = 0; a <= d; ++a) {
        const double xa = a < d ? z[i][a] : 1.0;
        for (size_t b = 0; b <= a; ++b) {
          const double xb = b < d ? z[i][b] : 1.0;
          h[a * (d + 1) + b] += curv * xa * xb;
        }
      }
    }
    for (size_t j = 0; j < d; ++j) {
      g[j] += cfg.lambda * theta[j];
      h[j * (d + 1) + j] += cfg.lambda;
    }
    for (size_t a = 0; a <= d; ++a)
      for (size_t b = a + 1; b <= d; ++b) h[a * (d + 1) + b] = h[b * (d + 1) + a];

    double gnorm = 0.0;
    for (const double v : g) gnorm += v * v;
    gnorm = std::sqrt(gnorm);
    if (gnorm < cfg.tolerance) {
      model.converged = true;
      break;
    }

    std::vector<double> delta;
    std::vector<double> factor = h;
    double jitter = 0.0;
    for (int attempt = 0;; ++attempt) {
      if (cholesky(factor, d + 1)) {
        delta = cholesky_solve(factor, d + 1, g);
        break;
      }
      if (attempt == 3) throw std::runtime_error("logreg: hessian factorization failed");
      double max_diag = 0.0;
      for (size_t j = 0; j <= d; ++j) max_diag = std::max(max_diag, h[j * (d + 1) + j]);
      jitter = jitter == 0.0 ? 1e-12 * (1.0 + max_diag) : jitter * 100.0;
      factor = h;
      for (size_t j = 0; j <= d; ++j) factor[j * (d + 1) + j] += jitter;
    }

    double slope = 0.0;  // directional derivative along -delta
    for (size_t j = 0; j <= d; ++j) slope += g[j] * delta[j];
    double step = 1.0;
    std::vector<double> trial(d + 1);
    bool moved = false;
    while (step > 1e-12) {
      for (size_t j = 0; j <= d; ++j) trial[j] = theta[j] - step * delta[j];
      const double trial_loss = objective(trial);
      if (trial_loss <= loss - 1e-4 * step * slope) {
        theta = trial;
        loss = trial_loss;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    ++model.iterations;
    if (!moved) break;  // no descent available at this precision
  }

  model.weights.assign(theta.begin(), theta.begin() + static_cast<ptrdiff_t>(d));
  model.bias = theta[d];
  return model;
}

std::string logreg_to_json(const LogRegModel& model) {
  ordered_json j;
  j["lambda"] = model.lambda;
  j["converged"] = model.converged;
  j["iterations"] = model.iterations;
  j["bias"] = model.bias;
  j["weights"] = model.weights;
  j["mean"] = model.stats.mean;
  j["scale"] = model.stats.scale;
  return j.dump(2) + "\n";
}

LogRegModel logreg_from_json(const std::string& text) {
  const ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("logreg model: not valid JSON");
  LogRegModel m;
  try {
    m.lambda = j.at("lambda").get<double>();
    m.converged = j.at("converged").get<bool>();
    m.iterations = j.at("iterations").get<int64_t>();
    m.bias = j.at("bias").get<double>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.stats.mean = j.at("mean").get<std::vector<double>>();
    m.stats.scale = j.at("scale").get<std::vector<double>>();
  } catch (const ordered_json::exception& e) {
    throw FormatError(std::string("logreg model: ") + e.what());
  }
  if (m.stats.mean.size() != m.weights.size() || m.stats.scale.size() != m.weights.size())
    throw FormatError("logreg model: stats arrays do not match the weight count");
  return m;
}

}  // namespace neurohybrid
