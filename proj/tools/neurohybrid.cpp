#include <CLI11.hpp>

#include <cstdint>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "neurohybrid/errors.hpp"
#include "neurohybrid/ops.hpp"
#include "neurohybrid/pipeline.hpp"

namespace nh = neurohybrid;

namespace {

int run_mapped(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const nh::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nh::InvalidModelKindError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const nh::MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const nh::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 5;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phantom-cohort pipeline for three-class parkinsonism classification"};
  app.require_subcommand(1);

  std::string gen_out;
  double gen_scale = 1.0;
  uint64_t gen_seed = nh::kDefaultSeed;
  auto* gen = app.add_subcommand("generate", "Generate and verify a phantom cohort");
  gen->add_option("--out", gen_out, "Cohort output directory")->required();
  gen->add_option("--scale", gen_scale, "Cohort size multiplier (default 1.0)");
  gen->add_option("--seed", gen_seed, "Master seed");

  nh::RunConfig cfg;
  std::string tr_cohort, tr_out;
  std::string tr_task = "psp-vs-pd", tr_inputs = "mri+mask+volume", tr_model = "hybrid";
  auto* tr = app.add_subcommand("train", "Split, cross-validate, and train one model");
  tr->add_option("--cohort", tr_cohort, "Cohort directory (with manifest.csv)")->required();
  tr->add_option("--out", tr_out, "Run output directory")->required();
  tr->add_option("--task", tr_task, "psp-vs-pd | msa-vs-pd | psp-vs-msa");
  tr->add_option("--inputs", tr_inputs, "'+'-joined subset of mri, mask, volume");
  tr->add_option("--model", tr_model, "ml | cnn | hybrid");
  tr->add_option("--seed", cfg.seed, "Run seed (split, folds, init, shuffling)");
  tr->add_option("--test-fraction", cfg.test_fraction, "Held-out fraction per class");
  tr->add_option("--folds", cfg.folds, "Cross-validation fold count");
  tr->add_option("--threshold", cfg.threshold, "Decision threshold");
  tr->add_option("--lambda", cfg.lambda, "Stage-two L2 strength");
  tr->add_option("--epochs", cfg.train.max_epochs, "Epoch cap per fold");
  tr->add_option("--batch-size", cfg.train.batch_size, "Mini-batch size");
  tr->add_option("--learning-rate", cfg.train.learning_rate, "Initial Adam learning rate");

  std::string ev_run;
  auto* ev = app.add_subcommand("evaluate", "Score a trained run on its held-out test set");
  ev->add_option("--run", ev_run, "Run directory written by train")->required();

  nh::RunConfig ab_cfg;
  std::string ab_cohort, ab_out;
  std::string ab_task = "psp-vs-pd";
  auto* ab = app.add_subcommand("ablate", "Train and evaluate all seven model/input rows");
  ab->add_option("--cohort", ab_cohort, "Cohort directory (with manifest.csv)")->required();
  ab->add_option("--out", ab_out, "Grid output directory")->required();
  ab->add_option("--task", ab_task, "psp-vs-pd | msa-vs-pd | psp-vs-msa");
  ab->add_option("--seed", ab_cfg.seed, "Shared seed (one split for every row)");
  ab->add_option("--test-fraction", ab_cfg.test_fraction, "Held-out fraction per class");
  ab->add_option("--folds", ab_cfg.folds, "Cross-validation fold count");
  ab->add_option("--threshold", ab_cfg.threshold, "Decision threshold");
  ab->add_option("--lambda", ab_cfg.lambda, "Stage-two L2 strength");
  ab->add_option("--epochs", ab_cfg.train.max_epochs, "Epoch cap per fold");
  ab->add_option("--batch-size", ab_cfg.train.batch_size, "Mini-batch size");
  ab->add_option("--learning-rate", ab_cfg.train.learning_rate, "Initial Adam learning rate");

  std::string gc_run, gc_out;
  std::vector<std::string> gc_subjects{"all"};
  int gc_axis = 0;
  int64_t gc_slice = -1;
  auto* gc = app.add_subcommand("gradcam", "Write attention maps for a trained CNN run");
  gc->add_option("--run", gc_run, "Run directory written by train")->required();
  gc->add_option("--out", gc_out, "Attention output directory")->required();
  gc->add_option("--subjects", gc_subjects, "'all' or subject ids")->expected(1, -1);
  gc->add_option("--axis", gc_axis, "Overlay slice axis (0, 1, or 2)")
      ->check(CLI::Range(0, 2));
  auto* slice_opt = gc->add_option("--slice", gc_slice, "Overlay slice index (default: middle)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  return run_mapped([&] {
    nh::set_blas_threads(nh::configured_threads());
    if (gen->parsed()) {
      nh::generate_command(gen_out, gen_scale, gen_seed);
      std::cout << "cohort written to " << gen_out << "\n";
    } else if (tr->parsed()) {
      cfg.task = tr_task;
      cfg.model = nh::parse_model_kind(tr_model);
      cfg.inputs = nh::parse_modality(tr_inputs);
      cfg.cohort_dir = tr_cohort;
      nh::train_run(cfg, tr_out);
      std::cout << "run written to " << tr_out << "\n";
    } else if (ev->parsed()) {
      const nh::EvalReport report = nh::evaluate_run(ev_run);
      std::cout << nh::render_report(report);
    } else if (ab->parsed()) {
      ab_cfg.task = ab_task;
      ab_cfg.cohort_dir = ab_cohort;
      const nh::AblationGrid grid = nh::run_ablation(ab_cfg, ab_out);
      std::cout << nh::render_ablation(grid);
    } else if (gc->parsed()) {
      nh::GradcamOptions opts;
      if (!(gc_subjects.size() == 1 && gc_subjects[0] == "all")) opts.subject_ids = gc_subjects;
      opts.axis = gc_axis;
      if (slice_opt->count() > 0) opts.slice = gc_slice;
      nh::gradcam_run(gc_run, gc_out, opts);
      std::cout << "attention maps written to " << gc_out << "\n";
    }
  });
}
