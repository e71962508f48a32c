#include "neuromatch/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "neuromatch/dichotic_analysis.hpp"
#include "neuromatch/eeg_preproc.hpp"
#include "neuromatch/error.hpp"
#include "neuromatch/eval_stats.hpp"
#include "neuromatch/types.hpp"

namespace neuromatch::pipeline {
namespace {

constexpr std::uint64_t kFoldStream = 0xF01D5;
constexpr std::uint64_t kMainBoundaryStream = 0xB00;
constexpr std::uint64_t kAblationStream = 0xAB10;

std::string fmt(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

std::ofstream open_text(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::io, "cannot open " + path.string() + " for writing");
  return out;
}

void finish_text(std::ofstream& out, const std::filesystem::path& path) {
  if (!out.flush()) raise(ErrorCode::io, "failed writing " + path.string());
}

std::string join_ids(const std::vector<std::string>& ids) {
  std::string joined;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) joined += ',';
    joined += ids[i];
  }
  return joined;
}

double accuracy_percent(const std::vector<stats::PredictionRecord>& records) {
  return records.empty() ? 0.0 : stats::mm_accuracy(records);
}

std::vector<stats::PredictionRecord> records_at(const std::vector<stats::PredictionRecord>& all,
                                                double lambda) {
  std::vector<stats::PredictionRecord> out;
  for (const auto& r : all) {
    if (r.lambda == lambda) out.push_back(r);
  }
  return out;
}

// Per-fold test-pair scoring shared by the report builders.
struct FoldEvaluation {
  std::vector<std::vector<stats::PredictionRecord>> per_fold;
  std::vector<stats::PredictionRecord> pooled;
  std::vector<double> fold_accuracy;  // percent, pooled over the fold's records
};

FoldEvaluation evaluate_folds(const data::Dataset& dataset,
                              const std::vector<train::FoldSpec>& folds,
                              const std::vector<train::FoldOutcome>& outcomes,
                              const train::TrainConfig& config,
                              const std::vector<double>& lambdas,
                              const train::BoundarySpec& boundaries) {
  FoldEvaluation eval;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto fold_pairs = train::build_fold_pairs(dataset, folds[f], config);
    auto records = train::evaluate_pairs(dataset, fold_pairs.test, outcomes[f].best_params,
                                         lambdas, config.sim_variant, boundaries);
    eval.fold_accuracy.push_back(accuracy_percent(records));
    eval.pooled.insert(eval.pooled.end(), records.begin(), records.end());
    eval.per_fold.push_back(std::move(records));
  }
  return eval;
}

}  // namespace

SynthResult run_synth(const data::SynthConfig& config, const std::filesystem::path& out_dir) {
  data::generate_synthetic(config, out_dir);
  return {out_dir / "manifest.jsonl"};
}

PreprocessResult run_preprocess(const std::filesystem::path& manifest_path,
                                const std::filesystem::path& out_dir) {
  const data::Manifest src = data::load_manifest(manifest_path);
  std::filesystem::create_directories(out_dir);

  data::Manifest dst;
  dst.root = out_dir;
  dst.prereferenced = true;  // the chain references its output

  Montage montage;
  if (!src.eeg.empty()) {
    if (src.montage_path.empty()) {
      raise(ErrorCode::invalid_design, "preprocess: manifest carries EEG but no montage");
    }
    montage = load_montage(src.resolve(src.montage_path));
  }
  if (!src.montage_path.empty()) {
    std::filesystem::copy_file(src.resolve(src.montage_path), out_dir / "montage.txt",
                               std::filesystem::copy_options::overwrite_existing);
    dst.montage_path = "montage.txt";
  }
  if (!src.embeddings_path.empty()) {
    std::filesystem::copy_file(src.resolve(src.embeddings_path), out_dir / "embeddings.bin",
                               std::filesystem::copy_options::overwrite_existing);
    dst.embeddings_path = "embeddings.bin";
  }

  PreprocessResult result;
  preproc::PreprocConfig chain;
  chain.prereferenced = src.prereferenced;

  for (const auto& record : src.eeg) {
    TimeSeries ts;
    ts.samples = data::read_matrix(src.resolve(record.path));
    ts.rate = record.rate;
    if (montage.channels() == ts.channels()) ts.channel_labels = montage.labels;
    const auto [clean, report] = preproc::preprocess(ts, montage, chain);

    const std::string rel = "eeg/" + record.subject + "_" + record.trial + ".nmtb";
    data::write_tensor(out_dir / rel, clean.samples);
    data::EegRecord out = record;
    out.path = rel;
    out.rate = clean.rate;
    out.channels = static_cast<int>(clean.channels());
    dst.eeg.push_back(out);
    result.eeg_trials += 1;

    std::string note = record.subject + "/" + record.trial + ": ";
    if (report.rejected.empty()) {
      note += "no channels repaired";
    } else {
      note += "repaired";
      for (const auto idx : report.rejected) {
        note += ' ';
        note += montage.labels[static_cast<std::size_t>(idx)];
      }
    }
    result.notes.push_back(note);
  }

  for (const auto& record : src.audio) {
    std::string rel = "audio/" + record.subject + "_" + record.trial + "_" + record.stream;
    if (!record.sentence.empty()) rel += "_" + record.sentence;
    rel += ".nmtb";
    data::AudioRecord out = record;
    out.path = rel;
    if (record.rate == 64.0) {
      std::filesystem::create_directories((out_dir / rel).parent_path());
      std::filesystem::copy_file(src.resolve(record.path), out_dir / rel,
                                 std::filesystem::copy_options::overwrite_existing);
      result.envelopes_copied += 1;
    } else {
      const auto audio = data::read_vector(src.resolve(record.path));
      data::write_tensor(out_dir / rel, stimulus::compute_envelope(audio, record.rate));
      out.rate = 64.0;
      result.envelopes_computed += 1;
    }
    dst.audio.push_back(out);
  }

  dst.sentences = src.sentences;
  dst.behavior = src.behavior;

  result.manifest = out_dir / "manifest.jsonl";
  data::save_manifest(dst, result.manifest);

  auto report = open_text(out_dir / "preprocess_report.txt");
  report << "eeg_trials\t" << result.eeg_trials << "\n";
  report << "envelopes_computed\t" << result.envelopes_computed << "\n";
  report << "envelopes_copied\t" << result.envelopes_copied << "\n";
  for (const auto& note : result.notes) report << note << "\n";
  finish_text(report, out_dir / "preprocess_report.txt");
  return result;
}

void ExperimentOptions::validate() const {
  train.validate();
  if (folds < 1) raise(ErrorCode::invalid_argument, "fold count must be at least 1");
  if (test_per_fold < 1) raise(ErrorCode::invalid_argument, "test_per_fold must be at least 1");
  if (jobs < 1) raise(ErrorCode::invalid_argument, "jobs must be at least 1");
  if (!protocol.empty() && protocol != "natural" && protocol != "dichotic") {
    raise(ErrorCode::invalid_argument, "protocol must be 'natural' or 'dichotic'");
  }
  if (lambdas.empty()) raise(ErrorCode::invalid_argument, "at least one lambda is required");
  for (const double lambda : lambdas) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      raise(ErrorCode::invalid_argument, "lambdas must lie in [0, 1]");
    }
  }
  train::parse_boundary_spec(word_boundaries, 0);  // syntax check
  if (!regions.empty() && regions != "all") {
    raise(ErrorCode::invalid_argument, "regions must be 'all' (five-region analysis) or empty");
  }
}

TrainResult run_train(const ExperimentOptions& options) {
  options.validate();
  TrainResult result;
  result.dataset = data::load_dataset(options.manifest);
  if (result.dataset.trials.empty()) {
    raise(ErrorCode::invalid_design, "train: dataset has no trials");
  }
  for (const auto& trial : result.dataset.trials) {
    if (trial.eeg_rate != 64.0) {
      raise(ErrorCode::pipeline, "train: trial " + trial.subject + "/" + trial.trial + " is at " +
                                     fmt(trial.eeg_rate) + " Hz; run preprocess first");
    }
    if (!options.protocol.empty() && trial.protocol != options.protocol) {
      raise(ErrorCode::invalid_design, "train: trial " + trial.subject + "/" + trial.trial +
                                           " is " + trial.protocol + " but --protocol " +
                                           options.protocol + " was requested");
    }
  }

  // Dichotic protocol: behavioral trial selection runs before fold creation.
  const bool dichotic = result.dataset.trials.front().protocol == "dichotic";
  if (dichotic) {
    const auto records = dichotic::trial_records(result.dataset);
    const auto selection = dichotic::select_trials(records);
    if (selection.kept.empty()) {
      raise(ErrorCode::invalid_design, "train: no dichotic trials survive the trial selection");
    }
    std::set<std::pair<std::string, std::string>> keep;
    for (const auto& record : selection.kept) keep.emplace(record.subject, record.trial);
    std::vector<data::TrialData> kept_trials;
    for (auto& trial : result.dataset.trials) {
      if (keep.count({trial.subject, trial.trial})) kept_trials.push_back(std::move(trial));
    }
    result.dataset.trials = std::move(kept_trials);

    result.notes.push_back("selection: left kept " + std::to_string(selection.left.kept) + "/" +
                           std::to_string(selection.left.total) + " (" +
                           fmt(selection.left.fraction()) + ")");
    result.notes.push_back("selection: right kept " + std::to_string(selection.right.kept) + "/" +
                           std::to_string(selection.right.total) + " (" +
                           fmt(selection.right.fraction()) + ")");
    for (const auto& dropped : selection.dropped) {
      result.notes.push_back("selection: dropped " + dropped.subject + "/" + dropped.trial);
    }
    auto selection_file = open_text(options.out_dir / "selection.txt");
    for (const auto& note : result.notes) selection_file << note << "\n";
    finish_text(selection_file, options.out_dir / "selection.txt");
  }

  std::set<std::string> id_set;
  for (const auto& trial : result.dataset.trials) id_set.insert(trial.trial);
  const std::vector<std::string> ids(id_set.begin(), id_set.end());

  Rng fold_rng(Rng::derive(options.train.seed, kFoldStream));
  result.folds =
      train::make_folds(ids, options.folds, options.test_per_fold, fold_rng, options.allow_overlap);
  result.outcomes =
      train::train(result.dataset, result.folds, options.train, options.out_dir / "checkpoints");

  result.history = options.out_dir / "history.tsv";
  train::write_history(result.history, result.outcomes);

  auto folds_file = open_text(options.out_dir / "folds.tsv");
  folds_file << "fold\ttrain_trials\ttest_trials\n";
  for (const auto& fold : result.folds) {
    folds_file << fold.fold_id << '\t' << join_ids(fold.train_trials) << '\t'
               << join_ids(fold.test_trials) << '\n';
  }
  finish_text(folds_file, options.out_dir / "folds.tsv");

  result.predictions = options.out_dir / "predictions.tsv";
  auto pred_file = open_text(result.predictions);
  pred_file << "fold\tpair_id\tlambda\tsim_pos\tsim_neg\tcorrect\n";
  for (const auto& outcome : result.outcomes) {
    for (const auto& record : outcome.test_predictions) {
      pred_file << outcome.fold_id << '\t' << record.pair_id << '\t' << fmt(record.lambda) << '\t'
                << fmt(record.sim_pos) << '\t' << fmt(record.sim_neg) << '\t'
                << (record.correct() ? 1 : 0) << '\n';
    }
  }
  finish_text(pred_file, result.predictions);

  auto summary = open_text(options.out_dir / "summary.tsv");
  summary << "fold\tstatus\tbest_epoch\tbest_val_loss\ttest_accuracy\ttrain_pairs\tval_pairs\t"
             "test_pairs\n";
  for (const auto& outcome : result.outcomes) {
    summary << outcome.fold_id << '\t' << (outcome.aborted ? "aborted" : "ok") << '\t'
            << outcome.best_epoch << '\t' << fmt(outcome.aborted ? 0.0 : outcome.best_val_loss)
            << '\t' << fmt(outcome.test_accuracy) << '\t' << outcome.train_pair_count << '\t'
            << outcome.val_pair_count << '\t' << outcome.test_pair_count << '\n';
  }
  finish_text(summary, options.out_dir / "summary.tsv");

  for (const auto& outcome : result.outcomes) {
    if (outcome.aborted) raise(ErrorCode::runtime, "train: " + outcome.abort_reason);
  }
  return result;
}

EvaluateResult run_evaluate(const ExperimentOptions& options) {
  EvaluateResult result;
  result.training = run_train(options);
  const auto& dataset = result.training.dataset;
  const auto& folds = result.training.folds;
  const auto& outcomes = result.training.outcomes;
  const auto& config = options.train;

  // De-duplicated sweep weights, order preserved.
  std::vector<double> lambdas;
  for (const double lambda : options.lambdas) {
    if (!std::count(lambdas.begin(), lambdas.end(), lambda)) lambdas.push_back(lambda);
  }

  const auto main_spec =
      train::parse_boundary_spec(options.word_boundaries,
                                 Rng::derive(config.seed, kMainBoundaryStream));
  const auto sweep = evaluate_folds(dataset, folds, outcomes, config, lambdas, main_spec);

  std::vector<stats::LambdaRow> lambda_rows;
  for (const double lambda : lambdas) {
    const auto at = records_at(sweep.pooled, lambda);
    lambda_rows.push_back({lambda, accuracy_percent(at), static_cast<int>(at.size())});
  }
  result.lambda_table = options.out_dir / "lambda_accuracy.tsv";
  stats::write_lambda_table(result.lambda_table, lambda_rows);
  result.scatter_files = stats::write_scatter_by_lambda(options.out_dir, "scatter", sweep.pooled);

  // Boundary ablations always compare the full family at lambda 0.5.
  const std::vector<std::string> ablation_specs{"true", "none",     "random:2",
                                                "random:3", "random:4", "random:5"};
  std::vector<stats::AblationRow> ablation_rows;
  std::vector<double> true_fold_accuracy;
  for (std::size_t a = 0; a < ablation_specs.size(); ++a) {
    const auto spec = train::parse_boundary_spec(
        ablation_specs[a], Rng::derive(config.seed, kAblationStream + a));
    const auto eval = evaluate_folds(dataset, folds, outcomes, config, {0.5}, spec);
    if (a == 0) true_fold_accuracy = eval.fold_accuracy;
    double p_value = 1.0;
    if (a > 0) {
      try {
        p_value = stats::wilcoxon_rank_sum(true_fold_accuracy, eval.fold_accuracy).p_value;
      } catch (const Error&) {
        p_value = 1.0;  // degenerate fold counts keep the row honest but untestable
      }
    }
    ablation_rows.push_back({ablation_specs[a], accuracy_percent(eval.pooled),
                             static_cast<int>(eval.pooled.size()), p_value});
  }
  result.ablation_table = options.out_dir / "ablation.tsv";
  stats::write_ablation_table(result.ablation_table, ablation_rows);

  // Region analysis: retrain per scalp region on the channel subset.
  if (options.regions == "all") {
    if (dataset.montage.channels() == 0) {
      raise(ErrorCode::invalid_design, "regions=all requires a montage in the manifest");
    }
    std::vector<stats::RegionRow> region_rows;
    for (const Region region : {Region::frontal, Region::central, Region::parietal,
                                Region::temporal, Region::occipital}) {
      const auto channels = dichotic::region_channels(dataset.montage, region);
      data::Dataset subset = dataset;
      for (auto& trial : subset.trials) {
        trial.eeg = dichotic::subset_eeg(trial.eeg, channels);
      }
      const auto region_outcomes = train::train(subset, folds, config, "");
      for (const auto& outcome : region_outcomes) {
        if (outcome.aborted) {
          raise(ErrorCode::runtime, std::string("evaluate regions: ") + outcome.abort_reason);
        }
      }
      const auto eval =
          evaluate_folds(subset, folds, region_outcomes, config, {0.5}, train::BoundarySpec{});
      double p_value = 1.0;
      try {
        p_value = stats::wilcoxon_signed_rank(true_fold_accuracy, eval.fold_accuracy).p_value;
      } catch (const Error&) {
        p_value = 1.0;
      }
      region_rows.push_back({region_name(region), accuracy_percent(eval.pooled),
                             static_cast<int>(eval.pooled.size()), p_value});
    }
    result.region_table = options.out_dir / "region.tsv";
    stats::write_region_table(result.region_table, region_rows);
  }

  // Dichotic data: per-ear accuracy of the main model at lambda 0.5.
  if (!dataset.trials.empty() && dataset.trials.front().protocol == "dichotic") {
    std::vector<stats::PredictionRecord> left, right;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto fold_pairs = train::build_fold_pairs(dataset, folds[f], config);
      const auto& records = sweep.per_fold[f];
      const std::size_t per_pair = lambdas.size();
      for (std::size_t p = 0; p < fold_pairs.test.size(); ++p) {
        const auto& trial = dataset.trials[fold_pairs.test[p].trial_index];
        for (std::size_t l = 0; l < per_pair; ++l) {
          const auto& record = records[p * per_pair + l];
          if (record.lambda != 0.5) continue;
          (trial.attended_ear == "left" ? left : right).push_back(record);
        }
      }
    }
    result.ear_table = options.out_dir / "ear.tsv";
    stats::write_ear_table(result.ear_table,
                           {{"left", accuracy_percent(left), static_cast<int>(left.size())},
                            {"right", accuracy_percent(right), static_cast<int>(right.size())}});
  }
  return result;
}

}  // namespace neuromatch::pipeline
