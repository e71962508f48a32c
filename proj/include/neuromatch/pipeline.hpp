#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neuromatch/data_io.hpp"
#include "neuromatch/trainer.hpp"

namespace neuromatch::pipeline {

// synth: generate a synthetic dataset under out_dir; returns the manifest path.
struct SynthResult {
  std::filesystem::path manifest;
};
SynthResult run_synth(const data::SynthConfig& config, const std::filesystem::path& out_dir);

// preprocess: run the EEG chain (filter, resample to 64 Hz, channel repair,
// reference, z-score) on every EEG record and convert raw audio records to
// 64 Hz envelopes. Writes a self-contained dataset (manifest, blobs, montage,
// embeddings) plus preprocess_report.txt under out_dir.
struct PreprocessResult {
  std::filesystem::path manifest;
  int eeg_trials = 0;
  int envelopes_computed = 0;
  int envelopes_copied = 0;
  std::vector<std::string> notes;  // per-trial repair reports
};
PreprocessResult run_preprocess(const std::filesystem::path& manifest_path,
                                const std::filesystem::path& out_dir);

// Options shared by the train and evaluate commands.
struct ExperimentOptions {
  std::filesystem::path manifest;
  std::filesystem::path out_dir;
  train::TrainConfig train;  // seed, lambda policy, sim variant, context, ...
  int folds = 6;
  int test_per_fold = 3;
  bool allow_overlap = false;
  std::string protocol;  // "" = accept what the manifest carries, else enforce
  std::vector<double> lambdas{0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0};
  std::string word_boundaries = "true";  // windows for the lambda sweep/scatter
  std::string regions;                   // "" = skip, "all" = five-region retrain
  int jobs = 1;                          // worker cap (this build runs serially)

  void validate() const;
};

// train: cross-validated training. Dichotic datasets are filtered by the
// behavioral trial selection first. Writes checkpoints/fold_XX.nmck,
// history.tsv, folds.tsv, predictions.tsv and summary.tsv under out_dir.
// A diverged fold aborts with a runtime error naming the fold after all
// artifacts for the completed folds are on disk.
struct TrainResult {
  data::Dataset dataset;  // post-selection dataset the folds refer to
  std::vector<train::FoldSpec> folds;
  std::vector<train::FoldOutcome> outcomes;
  std::filesystem::path history;
  std::filesystem::path predictions;
  std::vector<std::string> notes;
};
TrainResult run_train(const ExperimentOptions& options);

// evaluate: the full experiment. Runs run_train, then writes the report
// family: lambda_accuracy.tsv + scatter_lambda*.tsv (at --lambdas under the
// chosen boundary policy), ablation.tsv (true/none/random:2..5 at lambda 0.5),
// region.tsv (five-region retrain when regions == "all") and, for dichotic
// data, ear.tsv and selection.txt.
struct EvaluateResult {
  TrainResult training;
  std::filesystem::path lambda_table;
  std::vector<std::filesystem::path> scatter_files;
  std::filesystem::path ablation_table;
  std::filesystem::path region_table;  // empty when regions were not requested
  std::filesystem::path ear_table;     // empty for natural-protocol data
};
EvaluateResult run_evaluate(const ExperimentOptions& options);

}  // namespace neuromatch::pipeline
