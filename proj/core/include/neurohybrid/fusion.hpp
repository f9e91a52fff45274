#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace neurohybrid {

// CNN dense-layer features first, then the 12 volume ratios in structure
// order. Both parts are required; the volume part must have exactly one
// entry per segmented structure.
std::vector<double> fuse(const std::vector<double>& cnn_features,
                         const std::vector<double>& volume_vector);

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // population std floored at 1e-8

  static Standardizer fit(const std::vector<std::vector<double>>& rows);
  std::vector<double> apply(const std::vector<double>& row) const;
};

struct LogRegConfig {
  double lambda = 1.0;      // L2 strength on the weights, never the bias
  double tolerance = 1e-6;  // gradient-norm stopping criterion
  int64_t max_iterations = 100;
};

struct LogRegModel {
  std::vector<double> weights;  // over standardized features
  double bias = 0.0;
  double lambda = 1.0;
  Standardizer stats;
  bool converged = false;
  int64_t iterations = 0;

  double predict(const std::vector<double>& features) const;
  std::vector<double> predict_all(const std::vector<std::vector<double>>& rows) const;
};

int decide(double probability, double threshold = 0.5);

// Damped Newton minimization of the class-weighted negative log-likelihood
// plus (lambda/2)|w|^2. Features are standardized internally against the
// training rows and the stats travel with the model. Deterministic; a model
// that hits the iteration cap comes back flagged non-converged.
LogRegModel fit_logreg(const std::vector<std::vector<double>>& rows,
                       const std::vector<int>& labels, double w_neg, double w_pos,
                       const LogRegConfig& cfg = {});

std::string logreg_to_json(const LogRegModel& model);
LogRegModel logreg_from_json(const std::string& text);

}  // namespace neurohybrid
