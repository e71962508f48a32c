#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "neuromatch/data_io.hpp"
#include "neuromatch/eval_stats.hpp"
#include "neuromatch/mm_model.hpp"
#include "neuromatch/pair_sampling.hpp"
#include "neuromatch/rng.hpp"

namespace neuromatch::train {

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 0.001;
  double weight_decay = 0.0001;  // coupled L2, added to the gradients
  std::string lambda_policy = "sampled";  // "sampled" (uniform over {0,0.5,1}) | "fixed"
  double lambda_fixed = 0.5;              // used when lambda_policy == "fixed"
  int epochs = 50;
  int patience = 5;  // early stopping on validation loss
  std::uint64_t seed = 0;
  int sim_variant = 1;
  model::ContextKind context = model::ContextKind::recurrent;
  double dropout = 0.2;
  double val_fraction = 0.1;   // share of training trials held out for early stopping
  bool shuffle_labels = false; // control run: randomly swap pos/neg on train/val pairs

  void validate() const;
};

struct FoldSpec {
  int fold_id = 0;
  std::vector<std::string> train_trials;
  std::vector<std::string> test_trials;
};

// Seeded fold construction over trial ids. Test sets are consecutive chunks of
// a shuffled id list, so they are pairwise disjoint whenever
// k * test_per_fold <= |ids|; any remainder is trained on but never tested.
// With allow_overlap, each fold draws its test set by an independent shuffle.
std::vector<FoldSpec> make_folds(const std::vector<std::string>& trial_ids, int k,
                                 int test_per_fold, Rng& rng, bool allow_overlap = false);

struct AdamState {
  std::int64_t step = 0;
  std::map<std::string, Eigen::MatrixXd> m;
  std::map<std::string, Eigen::MatrixXd> v;
};

// One bias-corrected Adam update (beta1=0.9, beta2=0.999, eps=1e-8) over every
// tensor in params; weight decay couples into the gradient. Tensors without an
// entry in grads are treated as zero-gradient. Non-finite gradients abort.
void adam_step(model::ModelParams& params, const std::map<std::string, Eigen::MatrixXd>& grads,
               AdamState& state, const TrainConfig& config);

// Mean loss/accuracy over a batch plus gradients of the mean loss, accumulated
// per sample in a fixed order. Each pair's fusion weight is pair.lambda.
// finite=false flags a non-finite sample loss (gradients then unusable).
struct BatchResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;
  bool finite = true;
  std::map<std::string, Eigen::MatrixXd> grads;
};
BatchResult batch_gradients(const data::Dataset& dataset, const std::vector<pairs::MmPair>& batch,
                            const model::ModelParams& params, const TrainConfig& config,
                            Rng* dropout_rng);

// Pair construction for one fold: training pairs, a seeded validation split
// (whole trials, at least one), and test pairs. Mismatched-sentence draws are
// fixed per (seed, fold, subject), so every epoch sees the same pairs.
struct FoldPairs {
  std::vector<pairs::MmPair> train;
  std::vector<pairs::MmPair> val;
  std::vector<pairs::MmPair> test;
  std::vector<std::string> val_trials;
  std::vector<std::string> warnings;
};
FoldPairs build_fold_pairs(const data::Dataset& dataset, const FoldSpec& fold,
                           const TrainConfig& config);

struct HistoryRow {
  int fold = 0;
  int epoch = 0;
  std::string split;  // train | val | test
  double loss = 0.0;
  double accuracy = 0.0;
};

// Pooling-window policy for evaluation-time boundary ablations.
enum class BoundaryPolicy { true_boundaries, none, random_k };
struct BoundarySpec {
  BoundaryPolicy policy = BoundaryPolicy::true_boundaries;
  int k = 0;               // region count for random_k
  std::uint64_t seed = 0;  // stream for the random cut points
};
// Parses "true" | "none" | "random:k" (k in [2, 16]).
BoundarySpec parse_boundary_spec(const std::string& text, std::uint64_t seed);

// Pooling windows for a stimulus under the given policy. frames_out is the
// post-convolution frame count; rng drives random_k cut points and advances
// once per call, so window draws are deterministic in call order.
std::vector<stimulus::FrameWindow> pooling_windows(const stimulus::SentenceStimulus& stimulus,
                                                   Eigen::Index frames_out,
                                                   const BoundarySpec& spec, Rng& rng);

// Gradient-free scoring of pairs: one PredictionRecord per (pair, lambda).
// Branch embeddings are computed once per pair and fused at every lambda.
std::vector<stats::PredictionRecord> evaluate_pairs(const data::Dataset& dataset,
                                                    const std::vector<pairs::MmPair>& pair_list,
                                                    const model::ModelParams& params,
                                                    const std::vector<double>& lambdas,
                                                    int sim_variant,
                                                    const BoundarySpec& boundaries = {});

struct FoldOutcome {
  int fold_id = 0;
  bool aborted = false;
  std::string abort_reason;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::size_t train_pair_count = 0;
  std::size_t val_pair_count = 0;
  std::size_t test_pair_count = 0;
  std::vector<HistoryRow> history;
  model::ModelParams best_params;  // float32-quantized, identical to the checkpoint
  std::filesystem::path checkpoint_path;  // empty when no checkpoint_dir was given
  std::vector<stats::PredictionRecord> test_predictions;
  double test_accuracy = 0.0;  // at lambda 0.5 (sampled policy) or the fixed lambda
};

// Trains one fold: epoch loop with per-sample graphs and fixed-order gradient
// accumulation, per-sample lambda draws under the sampled policy, early
// stopping on validation loss, best checkpoint persisted (when checkpoint_dir
// is nonempty) and reloaded before test scoring. A non-finite training loss
// aborts the fold and reports it instead of raising.
FoldOutcome train_fold(const data::Dataset& dataset, const FoldSpec& fold,
                       const TrainConfig& config, const std::filesystem::path& checkpoint_dir);

std::vector<FoldOutcome> train(const data::Dataset& dataset, const std::vector<FoldSpec>& folds,
                               const TrainConfig& config,
                               const std::filesystem::path& checkpoint_dir);

// Tab-separated history: "fold\tepoch\tsplit\tloss\taccuracy", %.6f floats.
void write_history(const std::filesystem::path& path, const std::vector<FoldOutcome>& outcomes);

}  // namespace neuromatch::train
