#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "neurohybrid/net.hpp"

namespace neurohybrid {

struct TrainConfig {
  int64_t batch_size = 2;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t max_epochs = 100;
  int64_t stop_patience = 12;
  int64_t plateau_patience = 5;
  double plateau_factor = 0.5;
  double min_improvement = 1e-4;  // absolute improvement that resets the patience counters
  uint64_t seed = 0;
  bool balanced_class_weights = true;

  void validate() const;
};

struct EpochRecord {
  int64_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  std::optional<double> val_loss;
  double learning_rate = 0.0;
  std::vector<std::string> events;  // "improved", "lr_reduced", "early_stop"
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::string stop_reason;  // "early_stop" or "max_epochs"
  int64_t best_epoch = 0;
  double best_metric = 0.0;
  int64_t clamp_events = 0;
};

// Balanced weights w_c = N / (2 * n_c); both classes must be present.
std::pair<double, double> class_weights(const std::vector<int>& labels);  // (w_neg, w_pos)

// Mean over the batch of -w_y * [y log p + (1-y) log(1-p)], with p clamped
// to [1e-7, 1-1e-7]; each clamped element bumps *clamp_events.
template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& probs, const std::vector<int>& labels, double w_neg,
                       double w_pos, Tape<T>* tape = nullptr, int64_t* clamp_events = nullptr);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  int64_t step = 0;
};

// Standard bias-corrected Adam over the gradients attached to each parameter
// tensor. Moment buffers are created on the first call and must keep matching
// the parameter shapes afterwards.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr, double beta1,
               double beta2, double eps);

struct SplitPlan {
  std::vector<size_t> test;
  std::vector<size_t> pool;
};

using FoldPartition = std::pair<std::vector<size_t>, std::vector<size_t>>;  // (train, validation)

// Per-class shuffle under the seed, then max(1, floor(n_c * fraction)) test
// subjects per class. Indices come back sorted.
SplitPlan stratified_split(const std::vector<int>& labels, double test_fraction, uint64_t seed);

// Round-robin deal of each class's shuffled members over k folds.
std::vector<FoldPartition> stratified_kfold(const std::vector<size_t>& pool,
                                            const std::vector<int>& labels, int64_t k, uint64_t seed);

// Sample source for training: labels plus batch assembly of the three branch
// tensors for an index subset. Implementations decide how crops are stored.
template <typename T>
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual int64_t size() const = 0;
  virtual int label(size_t i) const = 0;
  virtual std::string id(size_t i) const = 0;
  virtual BranchBatch<T> assemble(const std::vector<size_t>& idx) const = 0;

  std::vector<int> labels_for(const std::vector<size_t>& idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (const size_t i : idx) out.push_back(label(i));
    return out;
  }
};

// Mini-batch training with plateau LR reduction, early stopping, and
// best-checkpoint restoration. Monitors validation loss when val_idx is
// given, training loss otherwise. The model is updated in place and ends at
// the best monitored state.
template <typename T>
TrainHistory train(Model<T>& model, const Dataset<T>& data, const std::vector<size_t>& train_idx,
                   const std::vector<size_t>* val_idx, const TrainConfig& cfg);

// Infer-mode probabilities for the given samples, in idx order.
template <typename T>
std::vector<double> predict_probs(Model<T>& model, const Dataset<T>& data,
                                  const std::vector<size_t>& idx, int64_t eval_batch = 16);

struct FoldResult {
  TrainHistory history;
  double val_auc = 0.0;
  int64_t best_epoch = 0;
};

struct CvResult {
  std::vector<FoldResult> folds;
  double mean_auc = 0.0;
  int64_t epoch_budget = 0;  // median best epoch across folds, >= 1
};

// Trains k independent models on stratified folds of the pool; fold seeds
// are derived per fold, so fold order cannot affect per-fold results.
template <typename T>
CvResult cross_validate(const ArchitectureConfig& arch, const Dataset<T>& data,
                        const std::vector<size_t>& pool, int64_t k, const TrainConfig& cfg);

// One epoch per line: {"epoch":..,"train_loss":..,"val_loss":..,"learning_rate":..,"events":[..]}
void write_history_jsonl(const TrainHistory& history, const std::filesystem::path& path);

}  // namespace neurohybrid
