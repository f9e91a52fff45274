#include "neurohybrid/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "neurohybrid/errors.hpp"
#include "neurohybrid/nifti.hpp"

namespace neurohybrid {

namespace fs = std::filesystem;

namespace {

using ordered_json = nlohmann::ordered_json;

constexpr int64_t kFeatureBatch = 16;

std::string read_text_file(const fs::path& path) {
  if (!fs::exists(path))
    throw MissingArtifactError("required artifact " + path.string() + " not found");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

ordered_json parse_json_file(const fs::path& path) {
  const ordered_json j = ordered_json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw FormatError(path.string() + ": not valid JSON");
  return j;
}

ordered_json run_config_to_json(const RunConfig& cfg) {
  ordered_json j;
  j["task"] = cfg.task;
  j["model"] = model_kind_name(cfg.model);
  j["inputs"] = cfg.inputs.str();
  j["seed"] = cfg.seed;
  j["cohort"] = cfg.cohort_dir.string();
  j["test_fraction"] = cfg.test_fraction;
  j["folds"] = cfg.folds;
  j["threshold"] = cfg.threshold;
  j["lambda"] = cfg.lambda;
  ordered_json t;
  t["batch_size"] = cfg.train.batch_size;
  t["learning_rate"] = cfg.train.learning_rate;
  t["beta1"] = cfg.train.beta1;
  t["beta2"] = cfg.train.beta2;
  t["adam_eps"] = cfg.train.adam_eps;
  t["max_epochs"] = cfg.train.max_epochs;
  t["stop_patience"] = cfg.train.stop_patience;
  t["plateau_patience"] = cfg.train.plateau_patience;
  t["plateau_factor"] = cfg.train.plateau_factor;
  t["min_improvement"] = cfg.train.min_improvement;
  t["balanced_class_weights"] = cfg.train.balanced_class_weights;
  j["train"] = t;
  return j;
}

RunConfig run_config_from_json(const ordered_json& j, const fs::path& origin) {
  try {
    RunConfig cfg;
    cfg.task = j.at("task").get<std::string>();
    cfg.model = parse_model_kind(j.at("model").get<std::string>());
    cfg.inputs = parse_modality(j.at("inputs").get<std::string>());
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.cohort_dir = j.at("cohort").get<std::string>();
    cfg.test_fraction = j.at("test_fraction").get<double>();
    cfg.folds = j.at("folds").get<int64_t>();
    cfg.threshold = j.at("threshold").get<double>();
    cfg.lambda = j.at("lambda").get<double>();
    const auto& t = j.at("train");
    cfg.train.batch_size = t.at("batch_size").get<int64_t>();
    cfg.train.learning_rate = t.at("learning_rate").get<double>();
    cfg.train.beta1 = t.at("beta1").get<double>();
    cfg.train.beta2 = t.at("beta2").get<double>();
    cfg.train.adam_eps = t.at("adam_eps").get<double>();
    cfg.train.max_epochs = t.at("max_epochs").get<int64_t>();
    cfg.train.stop_patience = t.at("stop_patience").get<int64_t>();
    cfg.train.plateau_patience = t.at("plateau_patience").get<int64_t>();
    cfg.train.plateau_factor = t.at("plateau_factor").get<double>();
    cfg.train.min_improvement = t.at("min_improvement").get<double>();
    cfg.train.balanced_class_weights = t.at("balanced_class_weights").get<bool>();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin.string() + ": " + e.what());
  }
}

std::vector<std::string> string_list(const ordered_json& j, const char* key,
                                     const fs::path& origin) {
  try {
    return j.at(key).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(origin.string() + ": " + e.what());
  }
}

// Structure masks must stay pairwise disjoint and every normalized volume in
// (0, 1); generation bugs should fail the command, not seed a bad cohort.
void verify_subject(const Subject& s) {
  if (!(s.icv_mm3 > 0.0))
    throw std::runtime_error("cohort invariant: subject " + s.id + " has non-positive ICV");
  const size_t n = s.image.data.size();
  for (const auto& m : s.masks)
    if (m.data.size() != n)
      throw std::runtime_error("cohort invariant: subject " + s.id + " mask grid mismatch");
  for (size_t v = 0; v < n; ++v) {
    int hits = 0;
    for (const auto& m : s.masks) hits += m.data[v];
    if (hits > 1)
      throw std::runtime_error("cohort invariant: subject " + s.id + " has overlapping masks");
  }
  for (int i = 0; i < kStructureCount; ++i)
    if (!(s.volumes[static_cast<size_t>(i)] > 0.0) || !(s.volumes[static_cast<size_t>(i)] < 1.0))
      throw std::runtime_error("cohort invariant: subject " + s.id + " structure " +
                               structure_name(static_cast<StructureId>(i)) +
                               " volume ratio outside (0, 1)");
}

std::string row_slug(const std::string& kind, const std::string& inputs) {
  std::string slug = kind + "-" + inputs;
  std::replace(slug.begin(), slug.end(), '+', '_');
  return slug;
}

template <typename T>
std::vector<std::vector<double>> cnn_feature_rows(Model<T>& model, const CropDataset<T>& data,
                                                  const std::vector<size_t>& idx) {
  std::vector<std::vector<double>> rows;
  rows.reserve(idx.size());
  for (size_t start = 0; start < idx.size(); start += static_cast<size_t>(kFeatureBatch)) {
    const size_t stop = std::min(idx.size(), start + static_cast<size_t>(kFeatureBatch));
    const std::vector<size_t> part(idx.begin() + static_cast<ptrdiff_t>(start),
                                   idx.begin() + static_cast<ptrdiff_t>(stop));
    Tensor<T> f = model.extract_features(data.assemble(part));
    const int64_t width = f.extent(1);
    for (size_t i = 0; i < part.size(); ++i) {
      std::vector<double> row(static_cast<size_t>(width));
      const T* p = f.data() + static_cast<int64_t>(i) * width;
      for (int64_t c = 0; c < width; ++c) row[static_cast<size_t>(c)] = static_cast<double>(p[c]);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

LogRegModel fit_stage_two(const std::vector<std::vector<double>>& rows,
                          const std::vector<int>& labels, const RunConfig& cfg) {
  double w_neg = 1.0, w_pos = 1.0;
  if (cfg.train.balanced_class_weights) std::tie(w_neg, w_pos) = class_weights(labels);
  LogRegConfig lr_cfg;
  lr_cfg.lambda = cfg.lambda;
  return fit_logreg(rows, labels, w_neg, w_pos, lr_cfg);
}

std::vector<ManifestRow> load_manifest_checked(const fs::path& cohort_dir) {
  // A missing input cohort is an I/O problem, not a missing run artifact.
  const fs::path manifest = cohort_dir / "manifest.csv";
  if (!fs::exists(manifest)) throw IoError("cohort manifest " + manifest.string() + " not found");
  return read_manifest(manifest);
}

void write_map_nifti(const std::vector<double>& values, Dims3 dims, const fs::path& path) {
  Volume3D<float> vol(dims.w, dims.h, dims.d);
  for (size_t i = 0; i < values.size(); ++i) vol.data[i] = static_cast<float>(values[i]);
  write_nifti(path, vol);
}

}  // namespace

const char* model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::Ml: return "ml";
    case ModelKind::Cnn: return "cnn";
    case ModelKind::Hybrid: return "hybrid";
  }
  throw std::logic_error("unreachable model kind");
}

ModelKind parse_model_kind(const std::string& token) {
  if (token == "ml") return ModelKind::Ml;
  if (token == "cnn") return ModelKind::Cnn;
  if (token == "hybrid") return ModelKind::Hybrid;
  throw InvalidModelKindError("unknown model kind '" + token + "'; expected ml, cnn, or hybrid");
}

std::string Modality::str() const {
  std::string out;
  const auto add = [&](const char* name) {
    if (!out.empty()) out += '+';
    out += name;
  };
  if (mri) add("mri");
  if (mask) add("mask");
  if (volume) add("volume");
  return out;
}

Modality parse_modality(const std::string& token) {
  if (token.empty()) throw UsageError("empty input modality list");
  Modality m;
  size_t start = 0;
  while (start <= token.size()) {
    const size_t plus = token.find('+', start);
    const size_t stop = plus == std::string::npos ? token.size() : plus;
    const std::string part = token.substr(start, stop - start);
    bool* flag = nullptr;
    if (part == "mri")
      flag = &m.mri;
    else if (part == "mask")
      flag = &m.mask;
    else if (part == "volume")
      flag = &m.volume;
    else
      throw UsageError("unknown input modality '" + part + "'; expected mri, mask, or volume");
    if (*flag) throw UsageError("duplicate input modality '" + part + "'");
    *flag = true;
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return m;
}

Task parse_task(const std::string& token) {
  if (token == "psp-vs-pd") return {token, Diagnosis::PSP, Diagnosis::PD};
  if (token == "msa-vs-pd") return {token, Diagnosis::MSA, Diagnosis::PD};
  if (token == "psp-vs-msa") return {token, Diagnosis::PSP, Diagnosis::MSA};
  throw UsageError("unknown task '" + token + "'; expected psp-vs-pd, msa-vs-pd, or psp-vs-msa");
}

void RunConfig::validate() const {
  parse_task(task);
  if (!inputs.mri && !inputs.mask && !inputs.volume)
    throw UsageError("at least one input modality is required");
  switch (model) {
    case ModelKind::Ml:
      if (!inputs.volume || inputs.imaging())
        throw InvalidModelKindError("model 'ml' takes the volume input only, got '" +
                                    inputs.str() + "'");
      break;
    case ModelKind::Cnn:
      if (inputs.volume || !inputs.imaging())
        throw InvalidModelKindError("model 'cnn' takes imaging inputs only, got '" + inputs.str() +
                                    "'");
      break;
    case ModelKind::Hybrid:
      if (!inputs.volume || !inputs.imaging())
        throw InvalidModelKindError(
            "model 'hybrid' needs the volume input plus at least one imaging modality, got '" +
            inputs.str() + "'");
      break;
  }
  if (!(test_fraction > 0.0) || !(test_fraction < 1.0))
    throw UsageError("test fraction must lie in (0, 1)");
  if (folds < 2) throw UsageError("fold count must be >= 2");
  if (!(threshold >= 0.0) || !(threshold <= 1.0)) throw UsageError("threshold must lie in [0, 1]");
  if (lambda < 0.0) throw UsageError("lambda must be >= 0");
  if (cohort_dir.empty()) throw UsageError("cohort directory is required");
  try {
    train.validate();
    if (model != ModelKind::Ml) {
      ArchitectureConfig a = arch;
      a.use_mri = inputs.mri;
      a.use_mask = inputs.mask;
      for (auto& b : a.branches) b.channels = a.channels_per_branch();
      a.validate();
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

TaskTable task_table(const std::vector<ManifestRow>& manifest, const Task& task) {
  TaskTable table;
  table.task = task;
  for (const auto& row : manifest) {
    if (row.diagnosis == task.positive)
      table.labels.push_back(1);
    else if (row.diagnosis == task.negative)
      table.labels.push_back(0);
    else
      continue;
    table.rows.push_back(row);
  }
  return table;
}

template <typename T>
CropDataset<T>::CropDataset(fs::path cohort_dir, TaskTable table, ArchitectureConfig arch)
    : dir_(std::move(cohort_dir)), table_(std::move(table)), arch_(std::move(arch)) {
  cache_.resize(table_.rows.size());
}

template <typename T>
int64_t CropDataset<T>::size() const {
  return static_cast<int64_t>(table_.rows.size());
}

template <typename T>
int CropDataset<T>::label(size_t i) const {
  return table_.labels.at(i);
}

template <typename T>
std::string CropDataset<T>::id(size_t i) const {
  return table_.rows.at(i).subject_id;
}

template <typename T>
const ManifestRow& CropDataset<T>::row(size_t i) const {
  return table_.rows.at(i);
}

template <typename T>
void CropDataset<T>::ensure_loaded(size_t i) const {
  if (i >= cache_.size()) throw std::invalid_argument("dataset: subject index out of range");
  if (cache_[i]) return;
  const Subject subject = load_subject(table_.rows[i], dir_);
  std::array<RegionCrop, kRegionCount> crops;
  for (size_t r = 0; r < kRegionCount; ++r)
    crops[r] = extract_region_crop(subject, static_cast<Region>(r), arch_.branches[r].crop);
  cache_[i] = std::move(crops);
}

template <typename T>
const std::array<RegionCrop, kRegionCount>& CropDataset<T>::crops(size_t i) const {
  ensure_loaded(i);
  return *cache_[i];
}

template <typename T>
std::vector<double> CropDataset<T>::volume_features(size_t i) const {
  const auto& vols = table_.rows.at(i).volumes;
  return std::vector<double>(vols.begin(), vols.end());
}

template <typename T>
BranchBatch<T> CropDataset<T>::assemble(const std::vector<size_t>& idx) const {
  if (idx.empty()) throw std::invalid_argument("dataset: empty batch");
  const int64_t n = static_cast<int64_t>(idx.size());
  const int64_t channels = arch_.channels_per_branch();
  BranchBatch<T> batch;
  for (size_t r = 0; r < kRegionCount; ++r) {
    const Dims3 crop = arch_.branches[r].crop;
    batch[r] = Tensor<T>(Shape{n, channels, crop.d, crop.h, crop.w});
  }
  for (size_t bi = 0; bi < idx.size(); ++bi) {
    const auto& subject_crops = crops(idx[bi]);
    for (size_t r = 0; r < kRegionCount; ++r) {
      const RegionCrop& rc = subject_crops[r];
      const int64_t vol = rc.shape.volume();
      T* dst = batch[r].data() + static_cast<int64_t>(bi) * channels * vol;
      if (arch_.use_mri) {
        for (int64_t v = 0; v < vol; ++v) dst[v] = static_cast<T>(rc.mri[static_cast<size_t>(v)]);
        dst += vol;
      }
      if (arch_.use_mask)
        for (int m = 0; m < kStructuresPerRegion; ++m, dst += vol)
          for (int64_t v = 0; v < vol; ++v)
            dst[v] = static_cast<T>(rc.masks[static_cast<size_t>(m)][static_cast<size_t>(v)]);
    }
  }
  return batch;
}

template class CropDataset<float>;
template class CropDataset<double>;

void generate_command(const fs::path& out_dir, double scale, uint64_t seed) {
  if (out_dir.empty()) throw UsageError("output directory is required");
  std::error_code ec;
  if (fs::exists(out_dir) && (!fs::is_directory(out_dir) || !fs::is_empty(out_dir)))
    throw IoError(out_dir.string() + " exists and is not an empty directory");
  const fs::path tmp = out_dir.parent_path() / (out_dir.filename().string() + ".tmp");
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp, ec);
  if (ec) throw IoError("cannot create " + tmp.string() + ": " + ec.message());
  try {
    const PhantomSpec spec = PhantomSpec::defaults();
    std::vector<ManifestRow> rows;
    generate_cohort(spec, scale, seed, [&](Subject&& subject) {
      verify_subject(subject);
      write_subject_files(subject, tmp / subject.id);
      rows.push_back(manifest_row_for(subject));
    });
    write_manifest(rows, tmp / "manifest.csv");
    if (fs::exists(out_dir)) fs::remove(out_dir);
    fs::rename(tmp, out_dir);
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
}

void train_run(const RunConfig& cfg_in, const fs::path& run_dir) {
  RunConfig cfg = cfg_in;
  cfg.arch.use_mri = cfg.inputs.mri;
  cfg.arch.use_mask = cfg.inputs.mask;
  for (auto& b : cfg.arch.branches) b.channels = cfg.arch.channels_per_branch();
  cfg.validate();

  const Task task = parse_task(cfg.task);
  const auto manifest = load_manifest_checked(cfg.cohort_dir);
  TaskTable table = task_table(manifest, task);

  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create " + run_dir.string() + ": " + ec.message());
  RunPaths paths{run_dir};

  const SplitPlan split =
      stratified_split(table.labels, cfg.test_fraction, derive_seed(cfg.seed, "split"));
  const auto ids_of = [&](const std::vector<size_t>& idx) {
    std::vector<std::string> ids;
    ids.reserve(idx.size());
    for (const size_t i : idx) ids.push_back(table.rows[i].subject_id);
    return ids;
  };
  const std::vector<std::string> test_ids = ids_of(split.test);
  const std::vector<std::string> pool_ids = ids_of(split.pool);

  write_text_file(paths.config(), run_config_to_json(cfg).dump(2) + "\n");
  {
    ordered_json j;
    j["task"] = cfg.task;
    j["seed"] = cfg.seed;
    j["test_fraction"] = cfg.test_fraction;
    j["test"] = test_ids;
    j["pool"] = pool_ids;
    write_text_file(paths.split(), j.dump(2) + "\n");
  }
  {
    std::vector<std::string> overlap;
    const std::unordered_set<std::string> test_set(test_ids.begin(), test_ids.end());
    for (const auto& id : pool_ids)
      if (test_set.count(id)) overlap.push_back(id);
    ordered_json j;
    j["train_ids"] = pool_ids;
    j["test_ids"] = test_ids;
    j["overlap"] = overlap;
    write_text_file(paths.audit(), j.dump(2) + "\n");
  }

  const std::vector<int> pool_labels = [&] {
    std::vector<int> out;
    out.reserve(split.pool.size());
    for (const size_t i : split.pool) out.push_back(table.labels[i]);
    return out;
  }();

  if (cfg.model == ModelKind::Ml) {
    CropDataset<float> data(cfg.cohort_dir, table, cfg.arch);
    std::vector<std::vector<double>> rows;
    rows.reserve(split.pool.size());
    for (const size_t i : split.pool) rows.push_back(data.volume_features(i));
    const LogRegModel stage_two = fit_stage_two(rows, pool_labels, cfg);
    write_text_file(paths.logreg(), logreg_to_json(stage_two));
    return;
  }

  CropDataset<float> data(cfg.cohort_dir, std::move(table), cfg.arch);
  TrainConfig cv_cfg = cfg.train;
  cv_cfg.seed = derive_seed(cfg.seed, "cv");
  const CvResult cv = cross_validate(cfg.arch, data, split.pool, cfg.folds, cv_cfg);
  {
    ordered_json j;
    j["folds"] = ordered_json::array();
    for (size_t k = 0; k < cv.folds.size(); ++k) {
      ordered_json f;
      f["fold"] = k + 1;
      f["val_auc"] = cv.folds[k].val_auc;
      f["best_epoch"] = cv.folds[k].best_epoch;
      f["epochs"] = cv.folds[k].history.epochs.size();
      f["stop_reason"] = cv.folds[k].history.stop_reason;
      f["clamp_events"] = cv.folds[k].history.clamp_events;
      j["folds"].push_back(f);
      write_history_jsonl(cv.folds[k].history, paths.fold_history(static_cast<int64_t>(k + 1)));
    }
    j["mean_auc"] = cv.mean_auc;
    j["epoch_budget"] = cv.epoch_budget;
    write_text_file(paths.cv_summary(), j.dump(2) + "\n");
  }

  Model<float> model = Model<float>::build(cfg.arch, derive_seed(cfg.seed, "final-init"));
  TrainConfig final_cfg = cfg.train;
  final_cfg.seed = derive_seed(cfg.seed, "final-train");
  final_cfg.max_epochs = cv.epoch_budget;
  const TrainHistory final_history = train(model, data, split.pool, nullptr, final_cfg);
  write_history_jsonl(final_history, paths.final_history());
  save_checkpoint(model, paths.checkpoint());

  if (cfg.model == ModelKind::Hybrid) {
    const auto features = cnn_feature_rows(model, data, split.pool);
    std::vector<std::vector<double>> rows;
    rows.reserve(features.size());
    for (size_t k = 0; k < split.pool.size(); ++k)
      rows.push_back(fuse(features[k], data.volume_features(split.pool[k])));
    const LogRegModel stage_two = fit_stage_two(rows, pool_labels, cfg);
    write_text_file(paths.logreg(), logreg_to_json(stage_two));
  }
}

EvalReport evaluate_run(const fs::path& run_dir) {
  RunPaths paths{run_dir};
  const RunConfig cfg = run_config_from_json(parse_json_file(paths.config()), paths.config());
  const Task task = parse_task(cfg.task);

  const ordered_json split_j = parse_json_file(paths.split());
  const std::vector<std::string> test_ids = string_list(split_j, "test", paths.split());
  const std::vector<std::string> pool_ids = string_list(split_j, "pool", paths.split());
  {
    const std::unordered_set<std::string> pool_set(pool_ids.begin(), pool_ids.end());
    for (const auto& id : test_ids)
      if (pool_set.count(id))
        throw FormatError(paths.split().string() + ": subject " + id +
                          " appears in both the pool and the test set");
  }

  const auto manifest = load_manifest_checked(cfg.cohort_dir);
  TaskTable table = task_table(manifest, task);
  std::unordered_map<std::string, size_t> index_of;
  for (size_t i = 0; i < table.rows.size(); ++i) index_of.emplace(table.rows[i].subject_id, i);
  std::vector<size_t> test_idx;
  test_idx.reserve(test_ids.size());
  for (const auto& id : test_ids) {
    const auto it = index_of.find(id);
    if (it == index_of.end())
      throw FormatError(paths.split().string() + ": subject " + id + " not in the cohort task");
    test_idx.push_back(it->second);
  }
  std::vector<int> labels;
  labels.reserve(test_idx.size());
  for (const size_t i : test_idx) labels.push_back(table.labels[i]);

  std::vector<double> scores;
  if (cfg.model == ModelKind::Ml) {
    const LogRegModel stage_two = logreg_from_json(read_text_file(paths.logreg()));
    CropDataset<float> data(cfg.cohort_dir, std::move(table), cfg.arch);
    for (const size_t i : test_idx) scores.push_back(stage_two.predict(data.volume_features(i)));
  } else {
    if (!fs::exists(paths.checkpoint()))
      throw MissingArtifactError("required artifact " + paths.checkpoint().string() + " not found");
    Model<float> model = load_checkpoint<float>(paths.checkpoint());
    CropDataset<float> data(cfg.cohort_dir, std::move(table), model.cfg);
    if (cfg.model == ModelKind::Cnn) {
      scores = predict_probs(model, data, test_idx);
    } else {
      const LogRegModel stage_two = logreg_from_json(read_text_file(paths.logreg()));
      const auto features = cnn_feature_rows(model, data, test_idx);
      for (size_t k = 0; k < test_idx.size(); ++k)
        scores.push_back(stage_two.predict(fuse(features[k], data.volume_features(test_idx[k]))));
    }
  }

  const EvalReport report =
      make_report(cfg.task, model_kind_name(cfg.model), cfg.inputs.str(), labels, scores,
                  cfg.threshold, diagnosis_name(task.positive));
  write_text_file(paths.eval_json(), eval_report_to_json(report));
  write_text_file(paths.report_txt(), render_report(report));
  return report;
}

AblationGrid run_ablation(const RunConfig& base, const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  AblationGrid grid;
  grid.task = base.task;
  for (const auto& [kind, inputs] : ablation_cells()) {
    RunConfig cfg = base;
    cfg.model = parse_model_kind(kind);
    cfg.inputs = parse_modality(inputs);
    const fs::path row_dir = out_dir / row_slug(kind, inputs);
    AblationRow row;
    row.model_kind = kind;
    row.inputs = inputs;
    try {
      train_run(cfg, row_dir);
      row.report = evaluate_run(row_dir);
    } catch (const std::exception& e) {
      row.report.reset();
      row.note = e.what();
    }
    grid.rows.push_back(std::move(row));
  }
  write_text_file(out_dir / "ablation.json", ablation_to_json(grid));
  write_text_file(out_dir / "ablation.txt", render_ablation(grid));
  return grid;
}

void gradcam_run(const fs::path& run_dir, const fs::path& out_dir, const GradcamOptions& opts) {
  RunPaths paths{run_dir};
  const RunConfig cfg = run_config_from_json(parse_json_file(paths.config()), paths.config());
  if (cfg.model == ModelKind::Ml)
    throw InvalidModelKindError("run " + run_dir.string() + " trained no CNN to explain");
  const Task task = parse_task(cfg.task);

  if (!fs::exists(paths.checkpoint()))
    throw MissingArtifactError("required artifact " + paths.checkpoint().string() + " not found");
  Model<float> model = load_checkpoint<float>(paths.checkpoint());

  const ordered_json split_j = parse_json_file(paths.split());
  const std::vector<std::string> test_ids = string_list(split_j, "test", paths.split());
  const std::vector<std::string>& wanted = opts.subject_ids.empty() ? test_ids : opts.subject_ids;

  const auto manifest = load_manifest_checked(cfg.cohort_dir);
  TaskTable table = task_table(manifest, task);
  std::unordered_map<std::string, size_t> index_of;
  for (size_t i = 0; i < table.rows.size(); ++i) index_of.emplace(table.rows[i].subject_id, i);
  std::vector<size_t> subject_idx;
  subject_idx.reserve(wanted.size());
  for (const auto& id : wanted) {
    const auto it = index_of.find(id);
    if (it == index_of.end())
      throw UsageError("subject '" + id + "' is not part of task " + cfg.task);
    subject_idx.push_back(it->second);
  }
  if (subject_idx.empty()) throw UsageError("no subjects selected");

  CropDataset<float> data(cfg.cohort_dir, std::move(table), model.cfg);
  std::error_code ec;
  fs::create_directories(out_dir / "subjects", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "subjects").string() + ": " + ec.message());

  std::array<std::vector<AttentionMap>, kRegionCount> branch_maps;
  for (const size_t i : subject_idx) {
    const std::string id = data.id(i);
    const auto maps = subject_attention(model, data.assemble({i}), 1);
    const fs::path subject_dir = out_dir / "subjects" / id;
    fs::create_directories(subject_dir, ec);
    if (ec) throw IoError("cannot create " + subject_dir.string() + ": " + ec.message());
    ordered_json sidecar;
    sidecar["subject"] = id;
    sidecar["target_class"] = diagnosis_name(task.positive);
    sidecar["branches"] = ordered_json::array();
    for (size_t r = 0; r < kRegionCount; ++r) {
      write_map_nifti(maps[r].values, maps[r].dims,
                      subject_dir / (maps[r].branch + std::string(".nii")));
      ordered_json b;
      b["branch"] = maps[r].branch;
      b["raw_min"] = maps[r].raw_min;
      b["raw_max"] = maps[r].raw_max;
      sidecar["branches"].push_back(b);
      branch_maps[r].push_back(maps[r]);
    }
    write_text_file(subject_dir / "attention.json", sidecar.dump(2) + "\n");
  }

  ordered_json pop_sidecar;
  pop_sidecar["task"] = cfg.task;
  pop_sidecar["target_class"] = diagnosis_name(task.positive);
  pop_sidecar["subjects"] = subject_idx.size();
  pop_sidecar["branches"] = ordered_json::array();
  for (size_t r = 0; r < kRegionCount; ++r) {
    const PopulationMap pop = population_average(branch_maps[r]);
    write_map_nifti(pop.values, pop.dims, out_dir / ("population_" + pop.branch + ".nii"));

    std::vector<double> anatomy(pop.values.size(), 0.0);
    for (const size_t i : subject_idx) {
      const RegionCrop& rc = data.crops(i)[r];
      for (size_t v = 0; v < anatomy.size(); ++v) anatomy[v] += static_cast<double>(rc.mri[v]);
    }
    for (auto& v : anatomy) v /= static_cast<double>(subject_idx.size());

    const int64_t extent =
        opts.axis == 0 ? pop.dims.d : opts.axis == 1 ? pop.dims.h : pop.dims.w;
    const int64_t slice = opts.slice ? *opts.slice : extent / 2;
    render_overlay(pop.values, anatomy, pop.dims, opts.axis, slice,
                   out_dir / ("overlay_" + pop.branch + ".ppm"));

    double mn = pop.values.empty() ? 0.0 : pop.values.front();
    double mx = mn;
    for (const double v : pop.values) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    ordered_json b;
    b["branch"] = pop.branch;
    b["min"] = mn;
    b["max"] = mx;
    pop_sidecar["branches"].push_back(b);
  }
  write_text_file(out_dir / "population.json", pop_sidecar.dump(2) + "\n");
}

int configured_threads() {
  const char* env = std::getenv("NEUROHYBRID_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1 || v > 4096)
    throw UsageError("NEUROHYBRID_THREADS must be a positive integer");
  return static_cast<int>(v);
}

}  // namespace neurohybrid
