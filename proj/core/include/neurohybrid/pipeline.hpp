#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neurohybrid/cohort.hpp"
#include "neurohybrid/fusion.hpp"
#include "neurohybrid/gradcam.hpp"
#include "neurohybrid/metrics.hpp"
#include "neurohybrid/net.hpp"
#include "neurohybrid/train.hpp"

namespace neurohybrid {

// Seed used by the command-line defaults; pinned so repository runs reproduce.
constexpr uint64_t kDefaultSeed = 1009;

enum class ModelKind { Ml, Cnn, Hybrid };
const char* model_kind_name(ModelKind kind);
ModelKind parse_model_kind(const std::string& token);  // throws InvalidModelKindError

struct Modality {
  bool mri = false;
  bool mask = false;
  bool volume = false;

  bool imaging() const { return mri || mask; }
  std::string str() const;  // canonical order: mri+mask+volume
};
Modality parse_modality(const std::string& token);  // '+'-joined; throws UsageError

struct Task {
  std::string name;
  Diagnosis positive = Diagnosis::PSP;
  Diagnosis negative = Diagnosis::PD;
};
Task parse_task(const std::string& token);  // psp-vs-pd | msa-vs-pd | psp-vs-msa

struct RunConfig {
  std::string task = "psp-vs-pd";
  ModelKind model = ModelKind::Hybrid;
  Modality inputs{true, true, true};
  uint64_t seed = kDefaultSeed;
  std::filesystem::path cohort_dir;
  double test_fraction = 0.2;
  int64_t folds = 5;
  double threshold = 0.5;
  double lambda = 1.0;
  TrainConfig train;
  ArchitectureConfig arch = ArchitectureConfig::defaults();

  // Model kind constrains the modality set: ml takes volumes only, cnn takes
  // imaging only, hybrid takes volumes plus at least one imaging modality.
  void validate() const;
};

// Manifest rows belonging to one task, with binary labels (1 = positive).
struct TaskTable {
  Task task;
  std::vector<ManifestRow> rows;
  std::vector<int> labels;
};
TaskTable task_table(const std::vector<ManifestRow>& manifest, const Task& task);

// Crop-backed sample source. Subject files are read on first touch, so a
// training loop that never assembles a test index never opens its images.
template <typename T>
class CropDataset final : public Dataset<T> {
 public:
  CropDataset(std::filesystem::path cohort_dir, TaskTable table, ArchitectureConfig arch);

  int64_t size() const override;
  int label(size_t i) const override;
  std::string id(size_t i) const override;
  BranchBatch<T> assemble(const std::vector<size_t>& idx) const override;

  const ManifestRow& row(size_t i) const;
  const std::array<RegionCrop, kRegionCount>& crops(size_t i) const;
  std::vector<double> volume_features(size_t i) const;  // the 12 manifest ratios

 private:
  void ensure_loaded(size_t i) const;

  std::filesystem::path dir_;
  TaskTable table_;
  ArchitectureConfig arch_;
  mutable std::vector<std::optional<std::array<RegionCrop, kRegionCount>>> cache_;
};

struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path config() const { return dir / "run_config.json"; }
  std::filesystem::path split() const { return dir / "split.json"; }
  std::filesystem::path audit() const { return dir / "audit.json"; }
  std::filesystem::path cv_summary() const { return dir / "cv_summary.json"; }
  std::filesystem::path fold_history(int64_t fold) const {
    return dir / ("history_fold" + std::to_string(fold) + ".jsonl");
  }
  std::filesystem::path final_history() const { return dir / "history_final.jsonl"; }
  std::filesystem::path checkpoint() const { return dir / "model.nhck"; }
  std::filesystem::path logreg() const { return dir / "logreg.json"; }
  std::filesystem::path eval_json() const { return dir / "eval.json"; }
  std::filesystem::path report_txt() const { return dir / "report.txt"; }
};

// Generates, verifies, and writes a cohort with its manifest. Builds into a
// sibling temp directory and renames into place, so failures leave no
// partial cohort behind.
void generate_command(const std::filesystem::path& out_dir, double scale, uint64_t seed);

// Split -> k-fold cross-validation -> full-pool retrain -> stage-two fit
// (as the model kind demands), writing every artifact into run_dir.
void train_run(const RunConfig& cfg, const std::filesystem::path& run_dir);

// Held-out test evaluation from a run directory's artifacts; writes eval.json
// and report.txt next to them and returns the report.
EvalReport evaluate_run(const std::filesystem::path& run_dir);

// Trains and evaluates all seven model/input rows under out_dir/<row>/ with a
// shared seed (hence one shared test split), writing ablation.json and
// ablation.txt at the root.
AblationGrid run_ablation(const RunConfig& base, const std::filesystem::path& out_dir);

struct GradcamOptions {
  std::vector<std::string> subject_ids;  // empty = the whole held-out test set
  int axis = 0;                          // slice axis for overlays
  std::optional<int64_t> slice;          // default: middle slice per branch
};

// Per-subject and population attention maps for the run's positive class,
// with mid-slice overlays on the mean test anatomy.
void gradcam_run(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                 const GradcamOptions& opts = {});

// NEUROHYBRID_THREADS, default 1; rejects non-positive or junk values.
int configured_threads();

}  // namespace neurohybrid
