#include "neuromatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "neuromatch/autodiff.hpp"
#include "neuromatch/error.hpp"

namespace neuromatch::train {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;

// Stream offsets for Rng::derive; one disjoint block per randomness consumer.
constexpr std::uint64_t kInitStream = 0x100;
constexpr std::uint64_t kPairStream = 0x200000;
constexpr std::uint64_t kEpochStream = 0x300000;
constexpr std::uint64_t kLambdaStream = 0x400;
constexpr std::uint64_t kDropoutStream = 0x500;
constexpr std::uint64_t kValSplitStream = 0x600;
constexpr std::uint64_t kLabelStream = 0x700;
constexpr std::uint64_t kWindowStream = 0x9100;

std::string fmt_row(const HistoryRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d\t%d\t%s\t%.6f\t%.6f\n", row.fold, row.epoch,
                row.split.c_str(), row.loss, row.accuracy);
  return buf;
}

std::vector<std::string> sorted_unique(std::vector<std::string> ids, const char* what) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    raise(ErrorCode::invalid_argument, std::string(what) + " contains duplicate trial ids");
  }
  return ids;
}

const data::TrialData& pair_trial(const data::Dataset& dataset, const pairs::MmPair& pair) {
  if (pair.trial_index >= dataset.trials.size()) {
    raise(ErrorCode::invalid_argument, "pair references trial index " +
                                           std::to_string(pair.trial_index) + " beyond dataset");
  }
  return dataset.trials[pair.trial_index];
}

std::vector<stimulus::FrameWindow> true_windows(const stimulus::SentenceStimulus& stimulus,
                                                Eigen::Index frames_out) {
  if (stimulus.tokens.empty()) {
    raise(ErrorCode::pipeline,
          "stimulus '" + stimulus.sentence_id + "' carries no word annotations");
  }
  auto windows = stimulus::boundaries_to_frames(stimulus.tokens, frames_out);
  if (windows.empty()) {
    raise(ErrorCode::alignment,
          "stimulus '" + stimulus.sentence_id + "' has no pooling windows after clipping");
  }
  return windows;
}

struct Scored {
  double loss = 0.0;
  double accuracy = 0.0;
};

Scored score_records(const std::vector<stats::PredictionRecord>& records) {
  Scored out;
  if (records.empty()) return out;
  double loss = 0.0;
  double correct = 0.0;
  for (const auto& r : records) {
    loss += model::mm_loss(r.sim_pos, r.sim_neg);
    correct += r.correct() ? 1.0 : 0.0;
  }
  out.loss = loss / static_cast<double>(records.size());
  out.accuracy = correct / static_cast<double>(records.size());
  return out;
}

std::vector<double> policy_lambdas(const TrainConfig& config) {
  if (config.lambda_policy == "sampled") return {0.0, 0.5, 1.0};
  return {config.lambda_fixed};
}

double default_lambda(const TrainConfig& config) {
  return config.lambda_policy == "sampled" ? 0.5 : config.lambda_fixed;
}

model::ModelParams quantize_params(model::ModelParams params) {
  for (auto& [name, tensor] : params.tensors) {
    tensor = tensor.cast<float>().cast<double>().eval();
  }
  return params;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) raise(ErrorCode::invalid_argument, "batch_size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    raise(ErrorCode::invalid_argument, "learning_rate must be positive and finite");
  }
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    raise(ErrorCode::invalid_argument, "weight_decay must be nonnegative and finite");
  }
  if (lambda_policy != "sampled" && lambda_policy != "fixed") {
    raise(ErrorCode::invalid_argument,
          "lambda_policy must be 'sampled' or 'fixed', got '" + lambda_policy + "'");
  }
  if (lambda_policy == "fixed" && !(lambda_fixed >= 0.0 && lambda_fixed <= 1.0)) {
    raise(ErrorCode::invalid_argument, "fixed lambda must lie in [0, 1]");
  }
  if (epochs < 1) raise(ErrorCode::invalid_argument, "epochs must be at least 1");
  if (patience < 1) raise(ErrorCode::invalid_argument, "patience must be at least 1");
  if (sim_variant < 1 || sim_variant > 3) {
    raise(ErrorCode::invalid_argument, "sim_variant must be 1, 2 or 3");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    raise(ErrorCode::invalid_argument, "dropout must lie in [0, 1)");
  }
  if (!(val_fraction > 0.0 && val_fraction <= 0.5)) {
    raise(ErrorCode::invalid_argument, "val_fraction must lie in (0, 0.5]");
  }
}

std::vector<FoldSpec> make_folds(const std::vector<std::string>& trial_ids, int k,
                                 int test_per_fold, Rng& rng, bool allow_overlap) {
  if (trial_ids.empty()) raise(ErrorCode::invalid_argument, "make_folds: no trial ids");
  if (k < 1) raise(ErrorCode::invalid_argument, "make_folds: fold count must be at least 1");
  if (test_per_fold < 1) {
    raise(ErrorCode::invalid_argument, "make_folds: test_per_fold must be at least 1");
  }
  const std::vector<std::string> base = sorted_unique(trial_ids, "make_folds");
  const auto n = base.size();
  if (static_cast<std::size_t>(test_per_fold) > n) {
    raise(ErrorCode::invalid_argument,
          "make_folds: test_per_fold " + std::to_string(test_per_fold) + " exceeds " +
              std::to_string(n) + " trials");
  }
  const std::size_t need = static_cast<std::size_t>(k) * static_cast<std::size_t>(test_per_fold);
  if (need > n && !allow_overlap) {
    raise(ErrorCode::invalid_design,
          "make_folds: " + std::to_string(k) + " folds x " + std::to_string(test_per_fold) +
              " test trials need " + std::to_string(need) + " but only " + std::to_string(n) +
              " trials exist (set allow_overlap to reuse test trials)");
  }

  std::vector<FoldSpec> folds;
  folds.reserve(static_cast<std::size_t>(k));
  auto build_fold = [&](int fold_id, std::vector<std::string> test) {
    std::sort(test.begin(), test.end());
    FoldSpec spec;
    spec.fold_id = fold_id;
    spec.test_trials = test;
    for (const auto& id : base) {
      if (!std::binary_search(test.begin(), test.end(), id)) spec.train_trials.push_back(id);
    }
    folds.push_back(std::move(spec));
  };

  if (need <= n) {
    std::vector<std::string> shuffled = base;
    rng.shuffle(shuffled);
    for (int f = 0; f < k; ++f) {
      const std::size_t start = static_cast<std::size_t>(f) * test_per_fold;
      build_fold(f, {shuffled.begin() + start, shuffled.begin() + start + test_per_fold});
    }
  } else {
    for (int f = 0; f < k; ++f) {
      std::vector<std::string> shuffled = base;
      rng.shuffle(shuffled);
      build_fold(f, {shuffled.begin(), shuffled.begin() + test_per_fold});
    }
  }
  return folds;
}

void adam_step(model::ModelParams& params, const std::map<std::string, Eigen::MatrixXd>& grads,
               AdamState& state, const TrainConfig& config) {
  config.validate();
  for (const auto& [name, grad] : grads) {
    if (params.tensors.find(name) == params.tensors.end()) {
      raise(ErrorCode::invalid_argument, "adam_step: gradient for unknown tensor '" + name + "'");
    }
    (void)grad;
  }
  state.step += 1;
  const auto t = state.step;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));

  for (auto& [name, theta] : params.tensors) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
    auto it = grads.find(name);
    if (it != grads.end()) {
      if (it->second.rows() != theta.rows() || it->second.cols() != theta.cols()) {
        raise(ErrorCode::invalid_argument,
              "adam_step: gradient shape mismatch for tensor '" + name + "'");
      }
      g = it->second;
    }
    if (!g.allFinite()) {
      raise(ErrorCode::runtime, "adam_step: non-finite gradient for tensor '" + name +
                                    "' at step " + std::to_string(t));
    }
    if (config.weight_decay != 0.0) g += config.weight_decay * theta;

    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() == 0) m = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
    if (v.size() == 0) v = Eigen::MatrixXd::Zero(theta.rows(), theta.cols());
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    const Eigen::MatrixXd m_hat = m / bc1;
    const Eigen::MatrixXd v_hat = v / bc2;
    const Eigen::MatrixXd denom = (v_hat.array().sqrt() + kEps).matrix();
    theta -= config.learning_rate * m_hat.cwiseQuotient(denom);
  }
}

BatchResult batch_gradients(const data::Dataset& dataset, const std::vector<pairs::MmPair>& batch,
                            const model::ModelParams& params, const TrainConfig& config,
                            Rng* dropout_rng) {
  if (batch.empty()) raise(ErrorCode::invalid_argument, "batch_gradients: empty batch");
  BatchResult result;
  double loss_sum = 0.0;
  double correct = 0.0;

  for (const auto& pair : batch) {
    const auto& trial = pair_trial(dataset, pair);
    const Eigen::MatrixXd eeg = pairs::eeg_segment(trial, pair);
    if (pair.pos.frames() != pair.neg.frames()) {
      raise(ErrorCode::alignment, "pair '" + pair.pos.sentence_id +
                                      "' has mismatched stimulus durations");
    }
    const Eigen::Index frames_out = model::conv_frames(pair.pos.frames());
    const auto win_pos = true_windows(pair.pos, frames_out);
    const auto win_neg = true_windows(pair.neg, frames_out);

    ad::Tape tape;
    model::ModelGraph graph(tape, params, model::Mode::train, dropout_rng);
    const ad::Var re_pos = graph.eeg_branch(eeg, win_pos);
    const ad::Var re_neg = graph.eeg_branch(eeg, win_neg);
    const ad::Var rs_pos = graph.speech_branch(pair.pos.envelope, win_pos);
    const ad::Var rt_pos = graph.text_branch(pair.pos.embeddings);
    const ad::Var rs_neg = graph.speech_branch(pair.neg.envelope, win_neg);
    const ad::Var rt_neg = graph.text_branch(pair.neg.embeddings);
    const ad::Var sim_pos =
        model::fuse_t(tape, config.sim_variant, rs_pos, rt_pos, re_pos, pair.lambda);
    const ad::Var sim_neg =
        model::fuse_t(tape, config.sim_variant, rs_neg, rt_neg, re_neg, pair.lambda);
    const ad::Var loss = model::mm_loss_t(tape, sim_pos, sim_neg);

    const double loss_value = tape.value(loss)(0, 0);
    if (!std::isfinite(loss_value)) {
      result.finite = false;
      result.mean_loss = loss_value;
      return result;
    }
    loss_sum += loss_value;
    if (tape.value(sim_pos)(0, 0) > tape.value(sim_neg)(0, 0)) correct += 1.0;

    tape.backward(loss);
    for (const auto& [name, var] : graph.leaves()) {
      const Eigen::MatrixXd& g = tape.grad(var);
      auto [it, inserted] = result.grads.try_emplace(name, g);
      if (!inserted) it->second += g;
    }
  }

  const double n = static_cast<double>(batch.size());
  for (auto& [name, g] : result.grads) g /= n;
  result.mean_loss = loss_sum / n;
  result.accuracy = correct / n;
  return result;
}

FoldPairs build_fold_pairs(const data::Dataset& dataset, const FoldSpec& fold,
                           const TrainConfig& config) {
  config.validate();
  if (fold.train_trials.empty()) {
    raise(ErrorCode::invalid_argument,
          "fold " + std::to_string(fold.fold_id) + " has no training trials");
  }
  const auto train_ids = sorted_unique(fold.train_trials, "fold train set");
  const auto test_ids = sorted_unique(fold.test_trials, "fold test set");
  for (const auto& id : test_ids) {
    if (std::binary_search(train_ids.begin(), train_ids.end(), id)) {
      raise(ErrorCode::invalid_design,
            "fold " + std::to_string(fold.fold_id) + ": trial '" + id +
                "' appears in both train and test sets");
    }
  }

  // Index the dataset by trial id and check the fold only names known trials.
  std::set<std::string> known;
  for (const auto& trial : dataset.trials) known.insert(trial.trial);
  for (const auto& id : train_ids) {
    if (!known.count(id)) {
      raise(ErrorCode::invalid_argument, "fold train trial '" + id + "' not in dataset");
    }
  }
  for (const auto& id : test_ids) {
    if (!known.count(id)) {
      raise(ErrorCode::invalid_argument, "fold test trial '" + id + "' not in dataset");
    }
  }

  // Hold out whole trials for validation (seeded, at least one).
  if (train_ids.size() < 2) {
    raise(ErrorCode::invalid_design, "fold " + std::to_string(fold.fold_id) +
                                         " needs at least two training trials for a "
                                         "validation split");
  }
  std::vector<std::string> shuffled = train_ids;
  Rng val_rng(Rng::derive(config.seed, kValSplitStream + static_cast<std::uint64_t>(fold.fold_id)));
  val_rng.shuffle(shuffled);
  auto n_val = static_cast<std::size_t>(
      std::ceil(config.val_fraction * static_cast<double>(train_ids.size())));
  n_val = std::max<std::size_t>(1, std::min(n_val, train_ids.size() - 1));
  std::vector<std::string> val_ids(shuffled.begin(), shuffled.begin() + n_val);
  std::vector<std::string> fit_ids(shuffled.begin() + n_val, shuffled.end());
  std::sort(val_ids.begin(), val_ids.end());
  std::sort(fit_ids.begin(), fit_ids.end());

  // Pin the protocol from the referenced trials.
  std::string protocol;
  for (const auto& trial : dataset.trials) {
    const bool used = std::binary_search(train_ids.begin(), train_ids.end(), trial.trial) ||
                      std::binary_search(test_ids.begin(), test_ids.end(), trial.trial);
    if (!used) continue;
    if (protocol.empty()) {
      protocol = trial.protocol;
    } else if (protocol != trial.protocol) {
      raise(ErrorCode::invalid_design,
            "fold " + std::to_string(fold.fold_id) + " mixes protocols '" + protocol +
                "' and '" + trial.protocol + "'");
    }
  }

  FoldPairs out;
  out.val_trials = val_ids;
  const std::uint64_t fold_base =
      kPairStream + static_cast<std::uint64_t>(fold.fold_id) * 65536;

  if (protocol == "dichotic") {
    auto collect = [&](const std::vector<std::string>& ids, std::vector<pairs::MmPair>& sink) {
      for (std::size_t i = 0; i < dataset.trials.size(); ++i) {
        const auto& trial = dataset.trials[i];
        if (!std::binary_search(ids.begin(), ids.end(), trial.trial)) continue;
        std::vector<pairs::DichoticSkip> skipped;
        auto made = pairs::make_dichotic_pairs(trial, i, &skipped);
        for (const auto& skip : skipped) {
          out.warnings.push_back("skipped " + skip.sentence_id + " (" + skip.subject + "/" +
                                 skip.trial + "): " + skip.reason);
        }
        sink.insert(sink.end(), made.begin(), made.end());
      }
    };
    collect(fit_ids, out.train);
    collect(val_ids, out.val);
    collect(test_ids, out.test);
  } else {
    // Natural protocol: one session per subject per split; mismatched
    // sentences are drawn within that session with a per-(fold, subject,
    // split) stream, so the draw is identical every epoch.
    std::vector<std::string> subjects;
    for (const auto& trial : dataset.trials) {
      if (subjects.empty() || subjects.back() != trial.subject) subjects.push_back(trial.subject);
    }
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());

    auto collect = [&](const std::vector<std::string>& ids, std::uint64_t split_tag,
                       std::vector<pairs::MmPair>& sink) {
      for (std::size_t s = 0; s < subjects.size(); ++s) {
        std::vector<std::size_t> indices;
        for (std::size_t i = 0; i < dataset.trials.size(); ++i) {
          const auto& trial = dataset.trials[i];
          if (trial.subject != subjects[s]) continue;
          if (!std::binary_search(ids.begin(), ids.end(), trial.trial)) continue;
          indices.push_back(i);
        }
        if (indices.empty()) continue;
        auto session = pairs::collect_session(dataset, indices);
        Rng pair_rng(Rng::derive(config.seed, fold_base + s * 8 + split_tag));
        auto made = pairs::make_natural_pairs(session, pair_rng, &out.warnings);
        sink.insert(sink.end(), made.begin(), made.end());
      }
    };
    collect(fit_ids, 0, out.train);
    collect(val_ids, 1, out.val);
    collect(test_ids, 2, out.test);
  }

  if (config.shuffle_labels) {
    Rng label_rng(Rng::derive(config.seed, kLabelStream + static_cast<std::uint64_t>(fold.fold_id)));
    auto corrupt = [&](std::vector<pairs::MmPair>& list) {
      for (auto& pair : list) {
        if (label_rng.below(2) == 1) std::swap(pair.pos, pair.neg);
      }
    };
    corrupt(out.train);
    corrupt(out.val);
  }
  return out;
}

BoundarySpec parse_boundary_spec(const std::string& text, std::uint64_t seed) {
  BoundarySpec spec;
  spec.seed = seed;
  if (text == "true") {
    spec.policy = BoundaryPolicy::true_boundaries;
    return spec;
  }
  if (text == "none") {
    spec.policy = BoundaryPolicy::none;
    return spec;
  }
  const std::string prefix = "random:";
  if (text.rfind(prefix, 0) == 0) {
    const std::string digits = text.substr(prefix.size());
    if (!digits.empty() && digits.find_first_not_of("0123456789") == std::string::npos) {
      const int k = std::stoi(digits);
      if (k >= 2 && k <= 16) {
        spec.policy = BoundaryPolicy::random_k;
        spec.k = k;
        return spec;
      }
    }
  }
  raise(ErrorCode::invalid_argument,
        "word-boundary policy must be 'true', 'none' or 'random:k' with k in [2,16], got '" +
            text + "'");
}

std::vector<stimulus::FrameWindow> pooling_windows(const stimulus::SentenceStimulus& stimulus,
                                                   Eigen::Index frames_out,
                                                   const BoundarySpec& spec, Rng& rng) {
  if (frames_out < 1) {
    raise(ErrorCode::invalid_argument, "pooling_windows: stimulus has no frames");
  }
  switch (spec.policy) {
    case BoundaryPolicy::true_boundaries:
      return true_windows(stimulus, frames_out);
    case BoundaryPolicy::none:
      return {{0, frames_out}};
    case BoundaryPolicy::random_k: {
      if (spec.k < 2) raise(ErrorCode::invalid_argument, "random boundary count must be >= 2");
      const Eigen::Index regions = std::min<Eigen::Index>(spec.k, frames_out);
      std::vector<Eigen::Index> candidates;
      candidates.reserve(static_cast<std::size_t>(frames_out - 1));
      for (Eigen::Index c = 1; c < frames_out; ++c) candidates.push_back(c);
      rng.shuffle(candidates);
      std::vector<Eigen::Index> cuts(candidates.begin(),
                                     candidates.begin() + (regions - 1));
      std::sort(cuts.begin(), cuts.end());
      std::vector<stimulus::FrameWindow> windows;
      Eigen::Index start = 0;
      for (const auto cut : cuts) {
        windows.emplace_back(start, cut);
        start = cut;
      }
      windows.emplace_back(start, frames_out);
      return windows;
    }
  }
  raise(ErrorCode::invalid_argument, "unknown boundary policy");
}

std::vector<stats::PredictionRecord> evaluate_pairs(const data::Dataset& dataset,
                                                    const std::vector<pairs::MmPair>& pair_list,
                                                    const model::ModelParams& params,
                                                    const std::vector<double>& lambdas,
                                                    int sim_variant,
                                                    const BoundarySpec& boundaries) {
  if (lambdas.empty()) raise(ErrorCode::invalid_argument, "evaluate_pairs: no lambdas");
  for (const double lambda : lambdas) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      raise(ErrorCode::invalid_argument, "evaluate_pairs: lambda outside [0, 1]");
    }
  }
  Rng window_rng(Rng::derive(boundaries.seed, kWindowStream));
  std::vector<stats::PredictionRecord> records;
  records.reserve(pair_list.size() * lambdas.size());

  for (const auto& pair : pair_list) {
    const auto& trial = pair_trial(dataset, pair);
    const Eigen::MatrixXd eeg = pairs::eeg_segment(trial, pair);
    const Eigen::Index frames_out = model::conv_frames(pair.pos.frames());
    const auto win_pos = pooling_windows(pair.pos, frames_out, boundaries, window_rng);
    const auto win_neg = pooling_windows(pair.neg, frames_out, boundaries, window_rng);

    const Eigen::VectorXd re_pos = model::eeg_forward(params, eeg, win_pos);
    const Eigen::VectorXd re_neg = model::eeg_forward(params, eeg, win_neg);
    const Eigen::VectorXd rs_pos = model::speech_forward(params, pair.pos.envelope, win_pos);
    const Eigen::VectorXd rt_pos = model::text_forward(params, pair.pos.embeddings);
    const Eigen::VectorXd rs_neg = model::speech_forward(params, pair.neg.envelope, win_neg);
    const Eigen::VectorXd rt_neg = model::text_forward(params, pair.neg.embeddings);

    const std::string pair_id = pair.pos.sentence_id + "|" + pair.neg.sentence_id;
    for (const double lambda : lambdas) {
      stats::PredictionRecord record;
      record.pair_id = pair_id;
      record.lambda = lambda;
      record.sim_pos = model::fuse(sim_variant, rs_pos, rt_pos, re_pos, lambda);
      record.sim_neg = model::fuse(sim_variant, rs_neg, rt_neg, re_neg, lambda);
      records.push_back(std::move(record));
    }
  }
  return records;
}

FoldOutcome train_fold(const data::Dataset& dataset, const FoldSpec& fold,
                       const TrainConfig& config, const std::filesystem::path& checkpoint_dir) {
  config.validate();
  FoldOutcome outcome;
  outcome.fold_id = fold.fold_id;

  FoldPairs fold_pairs = build_fold_pairs(dataset, fold, config);
  if (fold_pairs.train.empty()) {
    raise(ErrorCode::invalid_design,
          "fold " + std::to_string(fold.fold_id) + " produced no training pairs");
  }
  outcome.train_pair_count = fold_pairs.train.size();
  outcome.val_pair_count = fold_pairs.val.size();
  outcome.test_pair_count = fold_pairs.test.size();

  model::ModelConfig model_config;
  model_config.eeg_channels =
      static_cast<int>(pair_trial(dataset, fold_pairs.train.front()).eeg.rows());
  model_config.text_input_dim = dataset.embeddings.dim();
  model_config.context = config.context;
  model_config.dropout = config.dropout;
  model::ModelParams params = model::init_params(
      model_config, Rng::derive(config.seed, kInitStream + static_cast<std::uint64_t>(fold.fold_id)));

  AdamState state;
  Rng lambda_rng(Rng::derive(config.seed, kLambdaStream + static_cast<std::uint64_t>(fold.fold_id)));
  Rng dropout_rng(
      Rng::derive(config.seed, kDropoutStream + static_cast<std::uint64_t>(fold.fold_id)));

  const std::vector<double> eval_lambdas = policy_lambdas(config);
  model::ModelParams best_params = params;
  double best_metric = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int bad_epochs = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::vector<std::size_t> order(fold_pairs.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng epoch_rng(Rng::derive(config.seed, kEpochStream +
                                               static_cast<std::uint64_t>(fold.fold_id) * 4096 +
                                               static_cast<std::uint64_t>(epoch)));
    epoch_rng.shuffle(order);

    double loss_sum = 0.0;
    double correct_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<pairs::MmPair> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        pairs::MmPair pair = fold_pairs.train[order[i]];
        pair.lambda = config.lambda_policy == "sampled" ? pairs::sample_lambda(lambda_rng)
                                                        : config.lambda_fixed;
        batch.push_back(std::move(pair));
      }
      // Divergence — a non-finite loss value, a non-finite activation raised
      // by the model library, or non-finite gradients in the optimizer —
      // aborts the fold with a report instead of propagating.
      BatchResult result;
      try {
        result = batch_gradients(dataset, batch, params, config, &dropout_rng);
        if (result.finite) adam_step(params, result.grads, state, config);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::runtime) throw;
        result.finite = false;
        outcome.abort_reason = std::string(" (") + e.what() + ")";
      }
      if (!result.finite) {
        outcome.aborted = true;
        outcome.abort_reason = "fold " + std::to_string(fold.fold_id) +
                               ": non-finite training loss at epoch " + std::to_string(epoch) +
                               outcome.abort_reason;
        return outcome;
      }
      loss_sum += result.mean_loss * static_cast<double>(batch.size());
      correct_sum += result.accuracy * static_cast<double>(batch.size());
      seen += batch.size();
    }
    outcome.history.push_back({fold.fold_id, epoch, "train",
                               loss_sum / static_cast<double>(seen),
                               correct_sum / static_cast<double>(seen)});

    double metric = outcome.history.back().loss;
    if (!fold_pairs.val.empty()) {
      try {
        const auto val_records =
            evaluate_pairs(dataset, fold_pairs.val, params, eval_lambdas, config.sim_variant);
        const Scored val = score_records(val_records);
        outcome.history.push_back({fold.fold_id, epoch, "val", val.loss, val.accuracy});
        metric = val.loss;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::runtime) throw;
        metric = std::numeric_limits<double>::quiet_NaN();
      }
    }
    if (!std::isfinite(metric)) {
      outcome.aborted = true;
      outcome.abort_reason = "fold " + std::to_string(fold.fold_id) +
                             ": non-finite validation loss at epoch " + std::to_string(epoch);
      return outcome;
    }

    if (metric < best_metric) {
      best_metric = metric;
      best_epoch = epoch;
      best_params = params;
      bad_epochs = 0;
    } else {
      bad_epochs += 1;
      if (bad_epochs >= config.patience) break;
    }
  }

  outcome.best_epoch = best_epoch;
  outcome.best_val_loss = best_metric;

  // Freeze the winning weights exactly as they round-trip through float32, so
  // in-memory scoring and checkpoint-driven scoring agree bit for bit.
  best_params = quantize_params(std::move(best_params));
  if (!checkpoint_dir.empty()) {
    std::filesystem::create_directories(checkpoint_dir);
    char name[32];
    std::snprintf(name, sizeof(name), "fold_%02d.nmck", fold.fold_id);
    outcome.checkpoint_path = checkpoint_dir / name;
    model::save_checkpoint(best_params, outcome.checkpoint_path);
    best_params = model::load_checkpoint(outcome.checkpoint_path);
  }
  outcome.best_params = std::move(best_params);

  if (!fold_pairs.test.empty()) {
    try {
      outcome.test_predictions = evaluate_pairs(dataset, fold_pairs.test, outcome.best_params,
                                                eval_lambdas, config.sim_variant);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::runtime) throw;
      outcome.aborted = true;
      outcome.abort_reason = "fold " + std::to_string(fold.fold_id) +
                             ": non-finite test loss (" + e.what() + ")";
      return outcome;
    }
    const double at_lambda = default_lambda(config);
    std::vector<stats::PredictionRecord> at_default;
    for (const auto& record : outcome.test_predictions) {
      if (record.lambda == at_lambda) at_default.push_back(record);
    }
    const Scored test = score_records(at_default);
    outcome.test_accuracy = test.accuracy;
    outcome.history.push_back({fold.fold_id, best_epoch, "test", test.loss, test.accuracy});
  }
  return outcome;
}

std::vector<FoldOutcome> train(const data::Dataset& dataset, const std::vector<FoldSpec>& folds,
                               const TrainConfig& config,
                               const std::filesystem::path& checkpoint_dir) {
  if (folds.empty()) raise(ErrorCode::invalid_argument, "train: no folds");
  std::vector<FoldOutcome> outcomes;
  outcomes.reserve(folds.size());
  for (const auto& fold : folds) {
    outcomes.push_back(train_fold(dataset, fold, config, checkpoint_dir));
  }
  return outcomes;
}

void write_history(const std::filesystem::path& path, const std::vector<FoldOutcome>& outcomes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::io, "cannot open history file " + path.string());
  out << "fold\tepoch\tsplit\tloss\taccuracy\n";
  for (const auto& outcome : outcomes) {
    for (const auto& row : outcome.history) out << fmt_row(row);
  }
  if (!out.flush()) raise(ErrorCode::io, "failed writing history file " + path.string());
}

}  // namespace neuromatch::train
