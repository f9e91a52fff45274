#include "neurohybrid/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>

#include "neurohybrid/errors.hpp"
#include "neurohybrid/metrics.hpp"

namespace neurohybrid {

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr double kProbClamp = 1e-7;
constexpr int64_t kEvalBatch = 16;

void check_labels(const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("labels: empty");
  for (const int y : labels)
    if (y != 0 && y != 1) throw std::invalid_argument("labels: values must be 0 or 1");
}

template <typename T>
double infer_loss(Model<T>& model, const Dataset<T>& data, const std::vector<size_t>& idx,
                  double w_neg, double w_pos, int64_t* clamp_events) {
  double total = 0.0;
  for (size_t start = 0; start < idx.size(); start += kEvalBatch) {
    const size_t stop = std::min(idx.size(), start + static_cast<size_t>(kEvalBatch));
    const std::vector<size_t> part(idx.begin() + static_cast<ptrdiff_t>(start),
                                   idx.begin() + static_cast<ptrdiff_t>(stop));
    auto fwd = model.forward(data.assemble(part), Mode::Infer);
    auto loss = weighted_bce<T>(fwd.probabilities, data.labels_for(part), w_neg, w_pos, nullptr,
                                clamp_events);
    total += static_cast<double>(loss[0]) * static_cast<double>(part.size());
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw std::invalid_argument("train config: learning_rate must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw std::invalid_argument("train config: betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("train config: adam_eps must be positive");
  if (max_epochs < 1) throw std::invalid_argument("train config: max_epochs must be >= 1");
  if (stop_patience < 1) throw std::invalid_argument("train config: stop_patience must be >= 1");
  if (plateau_patience < 1)
    throw std::invalid_argument("train config: plateau_patience must be >= 1");
  if (!(plateau_factor > 0.0) || !(plateau_factor < 1.0))
    throw std::invalid_argument("train config: plateau_factor must lie in (0, 1)");
  if (min_improvement < 0.0)
    throw std::invalid_argument("train config: min_improvement must be >= 0");
}

std::pair<double, double> class_weights(const std::vector<int>& labels) {
  check_labels(labels);
  int64_t pos = 0;
  for (const int y : labels) pos += y;
  const int64_t neg = static_cast<int64_t>(labels.size()) - pos;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("class weights: both classes must be present");
  const double n = static_cast<double>(labels.size());
  return {n / (2.0 * static_cast<double>(neg)), n / (2.0 * static_cast<double>(pos))};
}

template <typename T>
Tensor<T> weighted_bce(const Tensor<T>& probs, const std::vector<int>& labels, double w_neg,
                       double w_pos, Tape<T>* tape, int64_t* clamp_events) {
  check_labels(labels);
  const int64_t n = static_cast<int64_t>(labels.size());
  const bool flat = probs.rank() == 1 && probs.extent(0) == n;
  const bool column = probs.rank() == 2 && probs.extent(0) == n && probs.extent(1) == 1;
  if (!flat && !column)
    throw std::invalid_argument("bce: probabilities shape " + shape_str(probs.shape()) +
                                " does not match " + std::to_string(n) + " labels");

  std::vector<double> phat(static_cast<size_t>(n));
  std::vector<uint8_t> live(static_cast<size_t>(n));
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(probs[i]);
    double pc = p;
    if (pc < kProbClamp) pc = kProbClamp;
    if (pc > 1.0 - kProbClamp) pc = 1.0 - kProbClamp;
    if (pc != p && clamp_events) ++*clamp_events;
    live[static_cast<size_t>(i)] = (pc == p);
    phat[static_cast<size_t>(i)] = pc;
    const double w = labels[static_cast<size_t>(i)] ? w_pos : w_neg;
    acc -= w * (labels[static_cast<size_t>(i)] ? std::log(pc) : std::log1p(-pc));
  }
  Tensor<T> out(Shape{1}, static_cast<T>(acc / static_cast<double>(n)));

  if (tape && probs.requires_grad()) {
    out.set_requires_grad(true);  // downstream ops must see a differentiable input
    Tensor<T> p_h = probs;
    Tensor<T> o_h = out;
    std::vector<int> ys = labels;
    tape->record(
        [p_h, o_h, ys = std::move(ys), phat = std::move(phat), live = std::move(live), w_neg,
         w_pos, n]() mutable {
          const double g0 = static_cast<double>(o_h.grad()[0]);
          auto& gp = p_h.grad();
          for (int64_t i = 0; i < n; ++i) {
            if (!live[static_cast<size_t>(i)]) continue;  // clamped: flat segment
            const double pc = phat[static_cast<size_t>(i)];
            const double y = ys[static_cast<size_t>(i)];
            const double w = ys[static_cast<size_t>(i)] ? w_pos : w_neg;
            gp[static_cast<size_t>(i)] +=
                static_cast<T>(g0 * w * (pc - y) / (pc * (1.0 - pc) * static_cast<double>(n)));
          }
        },
        {probs, out});
  }
  return out;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr, double beta1,
               double beta2, double eps) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.shape(), T(0));
      state.v.emplace_back(p.shape(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam: moment buffers track " + std::to_string(state.m.size()) +
                                " parameters, got " + std::to_string(params.size()));
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.shape() != state.m[i].shape())
      throw std::invalid_argument("adam: parameter " + std::to_string(i) + " shape " +
                                  shape_str(p.shape()) + " does not match moment shape " +
                                  shape_str(state.m[i].shape()));
    if (!p.has_grad()) throw std::logic_error("adam: parameter " + std::to_string(i) + " has no gradient");
    const auto& g = p.grad();
    auto& m = state.m[i].values();
    auto& v = state.v[i].values();
    auto& x = p.values();
    for (size_t j = 0; j < x.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = beta1 * static_cast<double>(m[j]) + (1.0 - beta1) * gj;
      const double vj = beta2 * static_cast<double>(v[j]) + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      x[j] = static_cast<T>(static_cast<double>(x[j]) -
                            lr * (mj / bc1) / (std::sqrt(vj / bc2) + eps));
    }
  }
}

SplitPlan stratified_split(const std::vector<int>& labels, double test_fraction, uint64_t seed) {
  check_labels(labels);
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
    throw std::invalid_argument("split: test_fraction must lie in (0, 1)");
  SplitPlan plan;
  for (int c = 0; c <= 1; ++c) {
    std::vector<size_t> members;
    for (size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    if (members.size() < 2)
      throw std::invalid_argument("split: class " + std::to_string(c) + " has " +
                                  std::to_string(members.size()) +
                                  " subjects, need at least 2 to fill both sides");
    Rng rng(derive_seed(seed, "split-class", static_cast<uint64_t>(c)));
    rng.shuffle(members);
    const size_t n_test = std::max<size_t>(
        1, static_cast<size_t>(std::floor(static_cast<double>(members.size()) * test_fraction)));
    plan.test.insert(plan.test.end(), members.begin(), members.begin() + static_cast<ptrdiff_t>(n_test));
    plan.pool.insert(plan.pool.end(), members.begin() + static_cast<ptrdiff_t>(n_test), members.end());
  }
  std::sort(plan.test.begin(), plan.test.end());
  std::sort(plan.pool.begin(), plan.pool.end());
  return plan;
}

std::vector<FoldPartition> stratified_kfold(const std::vector<size_t>& pool,
                                            const std::vector<int>& labels, int64_t k,
                                            uint64_t seed) {
  if (k < 2) throw std::invalid_argument("folds: k must be >= 2");
  if (pool.empty()) throw std::invalid_argument("folds: empty pool");
  for (const size_t i : pool) {
    if (i >= labels.size())
      throw std::invalid_argument("folds: pool index " + std::to_string(i) + " out of range");
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("folds: labels must be 0 or 1");
  }
  std::vector<std::vector<size_t>> val_sets(static_cast<size_t>(k));
  for (int c = 0; c <= 1; ++c) {
    std::vector<size_t> members;
    for (const size_t i : pool)
      if (labels[i] == c) members.push_back(i);
    if (static_cast<int64_t>(members.size()) < k)
      throw std::invalid_argument("folds: class " + std::to_string(c) + " has " +
                                  std::to_string(members.size()) + " pool subjects, need at least " +
                                  std::to_string(k) +
                                  " so every validation fold sees both classes");
    Rng rng(derive_seed(seed, "fold-class", static_cast<uint64_t>(c)));
    rng.shuffle(members);
    for (size_t j = 0; j < members.size(); ++j)
      val_sets[j % static_cast<size_t>(k)].push_back(members[j]);
  }
  std::vector<FoldPartition> folds;
  for (auto& val : val_sets) {
    std::sort(val.begin(), val.end());
    std::vector<size_t> train;
    for (const size_t i : pool)
      if (!std::binary_search(val.begin(), val.end(), i)) train.push_back(i);
    std::sort(train.begin(), train.end());
    folds.emplace_back(std::move(train), std::move(val));
  }
  return folds;
}

template <typename T>
TrainHistory train(Model<T>& model, const Dataset<T>& data, const std::vector<size_t>& train_idx,
                   const std::vector<size_t>* val_idx, const TrainConfig& cfg) {
  cfg.validate();
  if (train_idx.empty()) throw std::invalid_argument("train: empty training set");
  if (val_idx && val_idx->empty()) throw std::invalid_argument("train: empty validation set");

  const std::vector<int> train_labels = data.labels_for(train_idx);
  double w_neg = 1.0, w_pos = 1.0;
  if (cfg.balanced_class_weights) std::tie(w_neg, w_pos) = class_weights(train_labels);

  model.set_requires_grad(true);
  std::vector<Tensor<T>> params;
  for (auto& nt : model.parameters()) params.push_back(nt.tensor);
  AdamState<T> adam;

  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

  TrainHistory history;
  double strict_best = std::numeric_limits<double>::infinity();
  double significant_best = std::numeric_limits<double>::infinity();
  std::optional<Model<T>> snapshot;
  double lr = cfg.learning_rate;
  int64_t plateau_count = 0, stop_count = 0;

  for (int64_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<size_t> order = train_idx;
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const std::vector<size_t> batch(order.begin() + static_cast<ptrdiff_t>(start),
                                      order.begin() + static_cast<ptrdiff_t>(stop));
      Tape<T> tape;
      auto fwd = model.forward(data.assemble(batch), Mode::Train, &tape, &dropout_rng);
      auto loss = weighted_bce<T>(fwd.probabilities, data.labels_for(batch), w_neg, w_pos, &tape,
                                  &history.clamp_events);
      const double batch_loss = static_cast<double>(loss[0]);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(start / cfg.batch_size + 1));
      for (auto& p : params) p.zero_grad();
      tape.backward(loss);
      adam_step(params, adam, lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
      loss_sum += batch_loss * static_cast<double>(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    rec.learning_rate = lr;
    if (val_idx)
      rec.val_loss = infer_loss(model, data, *val_idx, w_neg, w_pos, &history.clamp_events);
    const double monitored = val_idx ? *rec.val_loss : rec.train_loss;
    if (!std::isfinite(monitored))
      throw std::runtime_error("train: non-finite monitored loss at epoch " +
                               std::to_string(epoch));

    if (monitored < strict_best) {
      strict_best = monitored;
      history.best_epoch = epoch;
      history.best_metric = monitored;
      snapshot = model.deep_copy();
      snapshot->epochs_run = epoch;
    }
    bool stopping = false;
    if (monitored < significant_best - cfg.min_improvement) {
      significant_best = monitored;
      plateau_count = 0;
      stop_count = 0;
      rec.events.push_back("improved");
    } else {
      ++plateau_count;
      ++stop_count;
      if (plateau_count >= cfg.plateau_patience) {
        lr *= cfg.plateau_factor;
        plateau_count = 0;
        rec.events.push_back("lr_reduced");
      }
      if (stop_count >= cfg.stop_patience) {
        rec.events.push_back("early_stop");
        history.stop_reason = "early_stop";
        stopping = true;
      }
    }
    history.epochs.push_back(std::move(rec));
    if (stopping) break;
  }
  if (history.stop_reason.empty()) history.stop_reason = "max_epochs";
  if (snapshot) model.copy_values_from(*snapshot);
  return history;
}

template <typename T>
std::vector<double> predict_probs(Model<T>& model, const Dataset<T>& data,
                                  const std::vector<size_t>& idx, int64_t eval_batch) {
  if (eval_batch < 1) throw std::invalid_argument("predict: eval_batch must be >= 1");
  std::vector<double> probs;
  probs.reserve(idx.size());
  for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(eval_batch)) {
    const size_t stop = std::min(idx.size(), start + static_cast<size_t>(eval_batch));
    const std::vector<size_t> part(idx.begin() + static_cast<ptrdiff_t>(start),
                                   idx.begin() + static_cast<ptrdiff_t>(stop));
    auto fwd = model.forward(data.assemble(part), Mode::Infer);
    for (int64_t i = 0; i < fwd.probabilities.numel(); ++i)
      probs.push_back(static_cast<double>(fwd.probabilities[i]));
  }
  return probs;
}

template <typename T>
CvResult cross_validate(const ArchitectureConfig& arch, const Dataset<T>& data,
                        const std::vector<size_t>& pool, int64_t k, const TrainConfig& cfg) {
  std::vector<int> labels(static_cast<size_t>(data.size()));
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = data.label(i);
  const auto folds = stratified_kfold(pool, labels, k, derive_seed(cfg.seed, "folds"));

  CvResult result;
  double auc_sum = 0.0;
  std::vector<int64_t> best_epochs;
  for (size_t f = 0; f < folds.size(); ++f) {
    Model<T> model = Model<T>::build(arch, derive_seed(cfg.seed, "fold-init", f));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, "fold-train", f);
    FoldResult fold;
    fold.history = train(model, data, folds[f].first, &folds[f].second, fold_cfg);
    fold.best_epoch = fold.history.best_epoch;
    fold.val_auc = auc(data.labels_for(folds[f].second), predict_probs(model, data, folds[f].second));
    auc_sum += fold.val_auc;
    best_epochs.push_back(fold.best_epoch);
    result.folds.push_back(std::move(fold));
  }
  result.mean_auc = auc_sum / static_cast<double>(folds.size());
  std::sort(best_epochs.begin(), best_epochs.end());
  const size_t mid = best_epochs.size() / 2;
  int64_t median = best_epochs.size() % 2 ? best_epochs[mid]
                                          : (best_epochs[mid - 1] + best_epochs[mid]) / 2;
  result.epoch_budget = std::max<int64_t>(1, median);
  return result;
}

void write_history_jsonl(const TrainHistory& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& e : history.epochs) {
    ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_loss"] = e.val_loss ? ordered_json(*e.val_loss) : ordered_json(nullptr);
    j["learning_rate"] = e.learning_rate;
    j["events"] = e.events;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

#define NH_INSTANTIATE_TRAIN(T)                                                                  \
  template Tensor<T> weighted_bce<T>(const Tensor<T>&, const std::vector<int>&, double, double,  \
                                     Tape<T>*, int64_t*);                                        \
  template void adam_step<T>(std::vector<Tensor<T>>&, AdamState<T>&, double, double, double,     \
                             double);                                                            \
  template TrainHistory train<T>(Model<T>&, const Dataset<T>&, const std::vector<size_t>&,      \
                                 const std::vector<size_t>*, const TrainConfig&);                \
  template std::vector<double> predict_probs<T>(Model<T>&, const Dataset<T>&,                    \
                                                const std::vector<size_t>&, int64_t);            \
  template CvResult cross_validate<T>(const ArchitectureConfig&, const Dataset<T>&,              \
                                      const std::vector<size_t>&, int64_t, const TrainConfig&);

NH_INSTANTIATE_TRAIN(float)
NH_INSTANTIATE_TRAIN(double)

#undef NH_INSTANTIATE_TRAIN

}  // namespace neurohybrid
