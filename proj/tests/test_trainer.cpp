#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "neuromatch/data_io.hpp"
#include "neuromatch/error.hpp"
#include "neuromatch/mm_model.hpp"
#include "neuromatch/pair_sampling.hpp"
#include "neuromatch/rng.hpp"
#include "neuromatch/stimulus_features.hpp"
#include "neuromatch/trainer.hpp"

using namespace neuromatch;
namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "nm_trainer" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string pad2(const char* prefix, int n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%s%02d", prefix, n);
  return buf;
}

// Hand-built 64 Hz natural-listening dataset with a planted stimulus-response
// relationship: channels 0/1 carry scaled copies of the speech envelope and
// channels 2/3 carry per-word embedding components, plus Gaussian noise.
// Trials hold `sentences_per_trial` sentences of three 0.5 s words each.
data::Dataset make_toy(int subjects, int trials, std::uint64_t seed, double noise = 0.02,
                       int sentences_per_trial = 3) {
  data::Dataset ds;
  ds.embeddings = stimulus::EmbeddingTable(8);
  const int vocab = 10;
  Rng emb_rng(Rng::derive(seed, 91));
  std::vector<std::string> words;
  std::vector<Eigen::VectorXd> vecs;
  for (int w = 0; w < vocab; ++w) {
    Eigen::VectorXd v(8);
    for (int d = 0; d < 8; ++d) v[d] = emb_rng.normal() * 0.6;
    words.push_back("w" + std::to_string(w));
    vecs.push_back(v);
    ds.embeddings.insert(words.back(), v);
  }

  Rng rng(Rng::derive(seed, 92));
  for (int s = 0; s < subjects; ++s) {
    for (int t = 0; t < trials; ++t) {
      data::TrialData trial;
      trial.subject = pad2("s", s);
      trial.trial = pad2("t", t);
      trial.split = "train";
      trial.protocol = "natural";
      trial.eeg_rate = 64.0;
      const Eigen::Index frames = 16 + sentences_per_trial * (96 + 16);
      Eigen::MatrixXd eeg = Eigen::MatrixXd::Zero(4, frames);

      for (int k = 0; k < sentences_per_trial; ++k) {
        const Eigen::Index f0 = 16 + k * 112;
        data::SentenceData sent;
        sent.id = "sent" + std::to_string(k);
        sent.stream = "mono";
        sent.start_s = static_cast<double>(f0) / 64.0;
        sent.end_s = static_cast<double>(f0 + 96) / 64.0;

        stimulus::SentenceStimulus stim;
        stim.sentence_id = trial.subject + "/" + trial.trial + "/mono/" + sent.id;
        stim.envelope.assign(96, 0.0);
        for (int w = 0; w < 3; ++w) {
          const int word = static_cast<int>(rng.below(vocab));
          const double amp = 0.35 + 0.06 * word;
          for (Eigen::Index f = 0; f < 32; ++f) {
            const double value =
                amp * (1.0 + 0.4 * std::sin(2.0 * kPi * static_cast<double>(f) / 16.0));
            stim.envelope[static_cast<std::size_t>(w * 32 + f)] = value;
            eeg(0, f0 + w * 32 + f) += 1.5 * value;
            eeg(1, f0 + w * 32 + f) += -0.7 * value;
          }
          eeg.block(2, f0 + w * 32, 1, 32).array() += vecs[static_cast<std::size_t>(word)][0];
          eeg.block(3, f0 + w * 32, 1, 32).array() += vecs[static_cast<std::size_t>(word)][1];
          stim.tokens.push_back({words[static_cast<std::size_t>(word)], w * 0.5, (w + 1) * 0.5});
        }
        const auto embedded = stimulus::embed_words(stim.tokens, ds.embeddings);
        stim.embeddings = embedded.rows;
        stim.oov = embedded.oov;
        sent.stimulus = stim;
        trial.sentences.push_back(std::move(sent));
      }
      for (Eigen::Index c = 0; c < eeg.rows(); ++c) {
        for (Eigen::Index f = 0; f < eeg.cols(); ++f) eeg(c, f) += noise * rng.normal();
      }
      trial.eeg = eeg;
      ds.trials.push_back(std::move(trial));
    }
  }
  return ds;
}

// Minimal dichotic dataset: both streams carry sentences over identical spans,
// the attended ear alternates per trial.
data::Dataset make_dichotic_toy(int trials, std::uint64_t seed) {
  data::Dataset ds;
  ds.embeddings = stimulus::EmbeddingTable(8);
  const int vocab = 6;
  Rng emb_rng(Rng::derive(seed, 81));
  std::vector<std::string> words;
  for (int w = 0; w < vocab; ++w) {
    Eigen::VectorXd v(8);
    for (int d = 0; d < 8; ++d) v[d] = emb_rng.normal() * 0.5;
    words.push_back("d" + std::to_string(w));
    ds.embeddings.insert(words.back(), v);
  }

  Rng rng(Rng::derive(seed, 82));
  for (int t = 0; t < trials; ++t) {
    data::TrialData trial;
    trial.subject = "s00";
    trial.trial = pad2("t", t);
    trial.split = "train";
    trial.protocol = "dichotic";
    trial.eeg_rate = 64.0;
    trial.attended_ear = (t % 2 == 0) ? "left" : "right";
    trial.attended_score = 0.8;
    trial.unattended_score = 0.2;
    const Eigen::Index frames = 16 + 2 * (96 + 16);
    Eigen::MatrixXd eeg = Eigen::MatrixXd::Zero(4, frames);
    for (Eigen::Index c = 0; c < 4; ++c) {
      for (Eigen::Index f = 0; f < frames; ++f) eeg(c, f) = 0.1 * rng.normal();
    }
    trial.eeg = eeg;

    for (const std::string stream : {"left", "right"}) {
      for (int k = 0; k < 2; ++k) {
        const Eigen::Index f0 = 16 + k * 112;
        data::SentenceData sent;
        sent.id = stream + "_sent" + std::to_string(k);
        sent.stream = stream;
        sent.start_s = static_cast<double>(f0) / 64.0;
        sent.end_s = static_cast<double>(f0 + 96) / 64.0;
        stimulus::SentenceStimulus stim;
        stim.sentence_id = trial.subject + "/" + trial.trial + "/" + stream + "/" + sent.id;
        stim.envelope.assign(96, 0.0);
        for (int w = 0; w < 3; ++w) {
          const int word = static_cast<int>(rng.below(vocab));
          for (Eigen::Index f = 0; f < 32; ++f) {
            stim.envelope[static_cast<std::size_t>(w * 32 + f)] =
                0.4 + 0.2 * std::sin(2.0 * kPi * static_cast<double>(f) / 16.0);
          }
          stim.tokens.push_back({words[static_cast<std::size_t>(word)], w * 0.5, (w + 1) * 0.5});
        }
        const auto embedded = stimulus::embed_words(stim.tokens, ds.embeddings);
        stim.embeddings = embedded.rows;
        stim.oov = embedded.oov;
        sent.stimulus = stim;
        trial.sentences.push_back(std::move(sent));
      }
    }
    std::sort(trial.sentences.begin(), trial.sentences.end(),
              [](const data::SentenceData& a, const data::SentenceData& b) {
                return std::tie(a.stream, a.start_s) < std::tie(b.stream, b.start_s);
              });
    ds.trials.push_back(std::move(trial));
  }
  return ds;
}

std::vector<std::string> trial_ids(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back(pad2("t", i));
  return ids;
}

model::ModelParams toy_params(const data::Dataset& ds, const train::TrainConfig& config,
                              std::uint64_t seed) {
  model::ModelConfig mc;
  mc.eeg_channels = static_cast<int>(ds.trials.front().eeg.rows());
  mc.text_input_dim = ds.embeddings.dim();
  mc.context = config.context;
  mc.dropout = config.dropout;
  return model::init_params(mc, seed);
}

}  // namespace

TEST_CASE("training configuration validation") {
  train::TrainConfig config;
  CHECK_NOTHROW(config.validate());

  auto expect_invalid = [](train::TrainConfig bad) {
    try {
      bad.validate();
      FAIL_CHECK("expected invalid_argument");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_argument);
    }
  };
  {
    train::TrainConfig bad;
    bad.batch_size = 0;
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.learning_rate = 0.0;
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.weight_decay = -1e-4;
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.lambda_policy = "adaptive";
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.lambda_policy = "fixed";
    bad.lambda_fixed = 1.5;
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.epochs = 0;
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.patience = 0;
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.sim_variant = 4;
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.dropout = 1.0;
    expect_invalid(bad);
  }
  {
    train::TrainConfig bad;
    bad.val_fraction = 0.0;
    expect_invalid(bad);
  }
}

TEST_CASE("fold construction covers and partitions trial ids") {
  SUBCASE("20 trials, 6 folds of 3: disjoint test sets, two trials never tested") {
    Rng rng(7);
    const auto folds = train::make_folds(trial_ids(20), 6, 3, rng);
    REQUIRE(folds.size() == 6);
    std::set<std::string> tested;
    for (const auto& fold : folds) {
      CHECK(fold.test_trials.size() == 3);
      CHECK(fold.train_trials.size() == 17);
      for (const auto& id : fold.test_trials) {
        CHECK(tested.insert(id).second);  // disjoint across folds
        CHECK(!std::count(fold.train_trials.begin(), fold.train_trials.end(), id));
      }
    }
    CHECK(tested.size() == 18);
    int never_tested = 0;
    for (const auto& id : trial_ids(20)) {
      if (!tested.count(id)) ++never_tested;
    }
    CHECK(never_tested == 2);
  }

  SUBCASE("30 trials, 10 folds of 3: exact partition") {
    Rng rng(11);
    const auto folds = train::make_folds(trial_ids(30), 10, 3, rng);
    REQUIRE(folds.size() == 10);
    std::set<std::string> tested;
    for (const auto& fold : folds) {
      for (const auto& id : fold.test_trials) CHECK(tested.insert(id).second);
    }
    CHECK(tested.size() == 30);
  }

  SUBCASE("fixed seed reproduces folds; different seed changes them") {
    Rng a(5), b(5), c(6);
    const auto fa = train::make_folds(trial_ids(20), 6, 3, a);
    const auto fb = train::make_folds(trial_ids(20), 6, 3, b);
    const auto fc = train::make_folds(trial_ids(20), 6, 3, c);
    REQUIRE(fa.size() == fb.size());
    bool differs = false;
    for (std::size_t i = 0; i < fa.size(); ++i) {
      CHECK(fa[i].test_trials == fb[i].test_trials);
      CHECK(fa[i].train_trials == fb[i].train_trials);
      if (fa[i].test_trials != fc[i].test_trials) differs = true;
    }
    CHECK(differs);
  }

  SUBCASE("insufficient trials error unless overlap is allowed") {
    Rng rng(3);
    try {
      train::make_folds(trial_ids(10), 4, 3, rng);
      FAIL_CHECK("expected invalid_design");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::invalid_design);
      CHECK(std::string(e.what()).find("allow_overlap") != std::string::npos);
    }
    const auto folds = train::make_folds(trial_ids(10), 4, 3, rng, true);
    REQUIRE(folds.size() == 4);
    const auto ids = trial_ids(10);
    for (const auto& fold : folds) {
      CHECK(fold.test_trials.size() == 3);
      CHECK(fold.train_trials.size() == 7);
      for (const auto& id : fold.test_trials) {
        CHECK(std::count(ids.begin(), ids.end(), id) == 1);
        CHECK(!std::count(fold.train_trials.begin(), fold.train_trials.end(), id));
      }
    }
  }

  SUBCASE("argument validation") {
    Rng rng(1);
    CHECK_THROWS_AS(train::make_folds({}, 2, 1, rng), Error);
    CHECK_THROWS_AS(train::make_folds(trial_ids(4), 0, 1, rng), Error);
    CHECK_THROWS_AS(train::make_folds(trial_ids(4), 1, 0, rng), Error);
    CHECK_THROWS_AS(train::make_folds(trial_ids(4), 1, 5, rng), Error);
    CHECK_THROWS_AS(train::make_folds({"a", "a", "b"}, 1, 1, rng), Error);
  }
}

TEST_CASE("adam step matches the bias-corrected update") {
  train::TrainConfig config;
  config.weight_decay = 0.0;

  SUBCASE("first step with unit gradient moves by about -lr") {
    model::ModelParams params;
    params.tensors["theta"] = Eigen::MatrixXd::Constant(1, 1, 0.5);
    train::AdamState state;
    std::map<std::string, Eigen::MatrixXd> grads;
    grads["theta"] = Eigen::MatrixXd::Constant(1, 1, 1.0);
    train::adam_step(params, grads, state, config);
    const double delta = params.tensors["theta"](0, 0) - 0.5;
    CHECK(delta == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(state.step == 1);
  }

  SUBCASE("zero gradient without decay is a fixed point") {
    model::ModelParams params;
    params.tensors["theta"] = Eigen::MatrixXd::Constant(2, 3, 0.25);
    train::AdamState state;
    std::map<std::string, Eigen::MatrixXd> grads;
    grads["theta"] = Eigen::MatrixXd::Zero(2, 3);
    for (int i = 0; i < 5; ++i) train::adam_step(params, grads, state, config);
    CHECK(params.tensors["theta"].isApprox(Eigen::MatrixXd::Constant(2, 3, 0.25), 0.0));
  }

  SUBCASE("coupled weight decay moves parameters even at zero gradient") {
    train::TrainConfig decayed;
    decayed.weight_decay = 0.1;
    model::ModelParams params;
    params.tensors["theta"] = Eigen::MatrixXd::Constant(1, 1, 1.0);
    train::AdamState state;
    std::map<std::string, Eigen::MatrixXd> grads;
    grads["theta"] = Eigen::MatrixXd::Zero(1, 1);
    train::adam_step(params, grads, state, decayed);
    CHECK(params.tensors["theta"](0, 0) < 1.0);
  }

  SUBCASE("quadratic bowl converges within 500 steps") {
    train::TrainConfig bowl;
    bowl.learning_rate = 0.01;
    bowl.weight_decay = 0.0;
    model::ModelParams params;
    params.tensors["theta"] = Eigen::MatrixXd::Constant(1, 1, 1.0);
    train::AdamState state;
    for (int i = 0; i < 500; ++i) {
      std::map<std::string, Eigen::MatrixXd> grads;
      grads["theta"] = 2.0 * params.tensors["theta"];
      train::adam_step(params, grads, state, bowl);
    }
    CHECK(std::abs(params.tensors["theta"](0, 0)) < 1e-3);
  }

  SUBCASE("non-finite gradients abort with the tensor named") {
    model::ModelParams params;
    params.tensors["eeg.conv1.w"] = Eigen::MatrixXd::Zero(2, 2);
    train::AdamState state;
    std::map<std::string, Eigen::MatrixXd> grads;
    grads["eeg.conv1.w"] = Eigen::MatrixXd::Constant(2, 2, std::nan(""));
    try {
      train::adam_step(params, grads, state, config);
      FAIL_CHECK("expected runtime error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::runtime);
      CHECK(std::string(e.what()).find("eeg.conv1.w") != std::string::npos);
      CHECK(std::string(e.what()).find("step 1") != std::string::npos);
    }
  }

  SUBCASE("shape mismatch and unknown tensors are rejected") {
    model::ModelParams params;
    params.tensors["theta"] = Eigen::MatrixXd::Zero(2, 2);
    train::AdamState state;
    std::map<std::string, Eigen::MatrixXd> bad_shape;
    bad_shape["theta"] = Eigen::MatrixXd::Zero(1, 2);
    CHECK_THROWS_AS(train::adam_step(params, bad_shape, state, config), Error);
    std::map<std::string, Eigen::MatrixXd> unknown;
    unknown["ghost"] = Eigen::MatrixXd::Zero(2, 2);
    CHECK_THROWS_AS(train::adam_step(params, unknown, state, config), Error);
  }
}

TEST_CASE("fold pair construction respects splits and is reproducible") {
  const auto ds = make_toy(2, 8, 21);
  train::TrainConfig config;
  config.seed = 33;
  train::FoldSpec fold;
  fold.fold_id = 0;
  fold.train_trials = {"t00", "t01", "t02", "t03", "t04", "t05"};
  fold.test_trials = {"t06", "t07"};

  const auto fp = train::build_fold_pairs(ds, fold, config);
  REQUIRE(fp.val_trials.size() == 1);  // ceil(0.1 * 6) = 1
  CHECK(fp.warnings.empty());

  std::set<std::string> val_set(fp.val_trials.begin(), fp.val_trials.end());
  std::set<std::string> train_set(fold.train_trials.begin(), fold.train_trials.end());
  std::set<std::string> test_set(fold.test_trials.begin(), fold.test_trials.end());

  // 2 subjects x 5 fit trials x 3 sentences = 30 training pairs, etc.
  CHECK(fp.train.size() == 30);
  CHECK(fp.val.size() == 6);
  CHECK(fp.test.size() == 12);
  for (const auto& pair : fp.train) {
    CHECK(train_set.count(pair.trial));
    CHECK(!val_set.count(pair.trial));
    CHECK(!test_set.count(pair.trial));
    CHECK(pair.pos.sentence_id != pair.neg.sentence_id);
  }
  for (const auto& pair : fp.val) CHECK(val_set.count(pair.trial));
  for (const auto& pair : fp.test) CHECK(test_set.count(pair.trial));

  SUBCASE("pair draws are fixed for a given seed and fold") {
    const auto again = train::build_fold_pairs(ds, fold, config);
    REQUIRE(again.train.size() == fp.train.size());
    for (std::size_t i = 0; i < fp.train.size(); ++i) {
      CHECK(fp.train[i].pos.sentence_id == again.train[i].pos.sentence_id);
      CHECK(fp.train[i].neg.sentence_id == again.train[i].neg.sentence_id);
    }
    train::TrainConfig other = config;
    other.seed = 34;
    const auto moved = train::build_fold_pairs(ds, fold, other);
    bool differs = moved.val_trials != fp.val_trials;
    for (std::size_t i = 0; i < std::min(moved.train.size(), fp.train.size()); ++i) {
      if (moved.train[i].neg.sentence_id != fp.train[i].neg.sentence_id) differs = true;
    }
    CHECK(differs);
  }

  SUBCASE("overlapping or unknown trials are rejected") {
    train::FoldSpec overlap = fold;
    overlap.test_trials.push_back("t00");
    CHECK_THROWS_AS(train::build_fold_pairs(ds, overlap, config), Error);
    train::FoldSpec ghost = fold;
    ghost.test_trials.push_back("t99");
    CHECK_THROWS_AS(train::build_fold_pairs(ds, ghost, config), Error);
    train::FoldSpec tiny = fold;
    tiny.train_trials = {"t00"};
    tiny.test_trials.clear();
    CHECK_THROWS_AS(train::build_fold_pairs(ds, tiny, config), Error);
  }

  SUBCASE("single-sentence sessions are skipped with a warning") {
    const auto sparse = make_toy(1, 2, 5, 0.02, 1);
    train::FoldSpec two;
    two.fold_id = 0;
    two.train_trials = {"t00", "t01"};
    const auto pairs = train::build_fold_pairs(sparse, two, config);
    CHECK(pairs.train.empty());
    CHECK(pairs.val.empty());
    CHECK(!pairs.warnings.empty());
  }

  SUBCASE("label shuffling swaps training pairs only, deterministically") {
    train::TrainConfig control = config;
    control.shuffle_labels = true;
    const auto shuffled = train::build_fold_pairs(ds, fold, control);
    REQUIRE(shuffled.train.size() == fp.train.size());
    int swapped = 0;
    for (std::size_t i = 0; i < fp.train.size(); ++i) {
      const bool swap = shuffled.train[i].pos.sentence_id == fp.train[i].neg.sentence_id &&
                        shuffled.train[i].neg.sentence_id == fp.train[i].pos.sentence_id;
      const bool same = shuffled.train[i].pos.sentence_id == fp.train[i].pos.sentence_id;
      CHECK((swap || same));
      if (swap) ++swapped;
    }
    CHECK(swapped > 0);
    CHECK(swapped < static_cast<int>(fp.train.size()));
    REQUIRE(shuffled.test.size() == fp.test.size());
    for (std::size_t i = 0; i < fp.test.size(); ++i) {
      CHECK(shuffled.test[i].pos.sentence_id == fp.test[i].pos.sentence_id);
    }
    const auto shuffled_again = train::build_fold_pairs(ds, fold, control);
    for (std::size_t i = 0; i < shuffled.train.size(); ++i) {
      CHECK(shuffled.train[i].pos.sentence_id == shuffled_again.train[i].pos.sentence_id);
    }
  }

  SUBCASE("dichotic folds build pairs from attended segments") {
    const auto dich = make_dichotic_toy(4, 9);
    train::FoldSpec dfold;
    dfold.fold_id = 1;
    dfold.train_trials = {"t00", "t01", "t02"};
    dfold.test_trials = {"t03"};
    const auto dp = train::build_fold_pairs(dich, dfold, config);
    CHECK(dp.val_trials.size() == 1);
    CHECK(dp.train.size() == 4);  // 2 fit trials x 2 attended sentences
    CHECK(dp.val.size() == 2);
    CHECK(dp.test.size() == 2);
    for (const auto& pair : dp.test) {
      CHECK(pair.protocol == "dichotic");
      CHECK(pair.pos.frames() == pair.neg.frames());
    }
  }
}

TEST_CASE("batch gradients honor the fusion weight structure") {
  const auto ds = make_toy(1, 6, 77);
  train::TrainConfig config;
  config.seed = 3;
  config.dropout = 0.0;
  train::FoldSpec fold;
  fold.fold_id = 0;
  fold.train_trials = {"t00", "t01", "t02", "t03"};
  fold.test_trials = {"t04", "t05"};
  auto fp = train::build_fold_pairs(ds, fold, config);
  REQUIRE(fp.train.size() >= 8);
  const auto params = toy_params(ds, config, 123);

  auto with_lambda = [&](double lambda) {
    std::vector<pairs::MmPair> batch(fp.train.begin(), fp.train.begin() + 8);
    for (auto& pair : batch) pair.lambda = lambda;
    Rng dropout_rng(1);
    return train::batch_gradients(ds, batch, params, config, &dropout_rng);
  };

  SUBCASE("every parameter tensor receives a gradient entry") {
    const auto result = with_lambda(0.5);
    CHECK(result.finite);
    CHECK(result.grads.size() == params.tensors.size());
    for (const auto& [name, grad] : result.grads) {
      const auto it = params.tensors.find(name);
      REQUIRE(it != params.tensors.end());
      CHECK(grad.rows() == it->second.rows());
      CHECK(grad.cols() == it->second.cols());
    }
  }

  SUBCASE("lambda=1 zeroes text gradients exactly; lambda=0 zeroes speech") {
    const auto acoustic = with_lambda(1.0);
    bool eeg_nonzero = false;
    for (const auto& [name, grad] : acoustic.grads) {
      if (name.rfind("text.", 0) == 0) {
        CHECK(grad.isZero(0.0));
      }
      if (name.rfind("eeg.", 0) == 0 && !grad.isZero(0.0)) eeg_nonzero = true;
    }
    CHECK(eeg_nonzero);

    const auto semantic = with_lambda(0.0);
    bool text_nonzero = false;
    for (const auto& [name, grad] : semantic.grads) {
      if (name.rfind("speech.", 0) == 0) {
        CHECK(grad.isZero(0.0));
      }
      if (name.rfind("text.", 0) == 0 && !grad.isZero(0.0)) text_nonzero = true;
    }
    CHECK(text_nonzero);
  }

  SUBCASE("first batch loss with random initialization sits near ln 2") {
    const auto result = with_lambda(0.5);
    CHECK(result.finite);
    CHECK(std::abs(result.mean_loss - std::log(2.0)) <= 0.2);
  }
}

TEST_CASE("boundary policies reshape pooling windows") {
  SUBCASE("spec parsing") {
    CHECK(train::parse_boundary_spec("true", 1).policy == train::BoundaryPolicy::true_boundaries);
    CHECK(train::parse_boundary_spec("none", 1).policy == train::BoundaryPolicy::none);
    const auto rk = train::parse_boundary_spec("random:4", 9);
    CHECK(rk.policy == train::BoundaryPolicy::random_k);
    CHECK(rk.k == 4);
    CHECK(rk.seed == 9);
    CHECK_THROWS_AS(train::parse_boundary_spec("random:1", 1), Error);
    CHECK_THROWS_AS(train::parse_boundary_spec("random:17", 1), Error);
    CHECK_THROWS_AS(train::parse_boundary_spec("random:x", 1), Error);
    CHECK_THROWS_AS(train::parse_boundary_spec("word", 1), Error);
  }

  stimulus::SentenceStimulus stim;
  stim.sentence_id = "probe";
  stim.envelope.assign(96, 0.5);
  stim.tokens = {{"a", 0.0, 0.5}, {"b", 0.5, 1.0}, {"c", 1.0, 1.5}};
  const Eigen::Index frames_out = model::conv_frames(stim.frames());

  SUBCASE("true boundaries reduce to the word grid") {
    Rng rng(1);
    train::BoundarySpec spec;
    const auto windows = train::pooling_windows(stim, frames_out, spec, rng);
    CHECK(windows == stimulus::boundaries_to_frames(stim.tokens, frames_out));
  }

  SUBCASE("none pools the whole sentence") {
    Rng rng(1);
    train::BoundarySpec spec;
    spec.policy = train::BoundaryPolicy::none;
    const auto windows = train::pooling_windows(stim, frames_out, spec, rng);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].first == 0);
    CHECK(windows[0].second == frames_out);
  }

  SUBCASE("random regions tile the sentence contiguously") {
    train::BoundarySpec spec;
    spec.policy = train::BoundaryPolicy::random_k;
    spec.k = 4;
    Rng rng(5);
    const auto windows = train::pooling_windows(stim, frames_out, spec, rng);
    REQUIRE(windows.size() == 4);
    CHECK(windows.front().first == 0);
    CHECK(windows.back().second == frames_out);
    for (std::size_t i = 0; i < windows.size(); ++i) {
      CHECK(windows[i].first < windows[i].second);
      if (i > 0) CHECK(windows[i].first == windows[i - 1].second);
    }

    Rng replay(5);
    CHECK(train::pooling_windows(stim, frames_out, spec, replay) == windows);

    // More regions than frames collapse to one window per frame.
    stimulus::SentenceStimulus shorty = stim;
    shorty.envelope.assign(6, 0.5);
    const Eigen::Index short_frames = model::conv_frames(shorty.frames());
    spec.k = 16;
    Rng rng2(5);
    const auto collapsed = train::pooling_windows(shorty, short_frames, spec, rng2);
    CHECK(collapsed.size() == static_cast<std::size_t>(short_frames));
  }
}

TEST_CASE("pair evaluation scores every lambda from shared embeddings") {
  const auto ds = make_toy(1, 5, 13);
  train::TrainConfig config;
  config.seed = 8;
  train::FoldSpec fold;
  fold.fold_id = 0;
  fold.train_trials = {"t00", "t01", "t02"};
  fold.test_trials = {"t03", "t04"};
  const auto fp = train::build_fold_pairs(ds, fold, config);
  const auto params = toy_params(ds, config, 55);

  const std::vector<double> lambdas{0.0, 0.5, 1.0};
  const auto records = train::evaluate_pairs(ds, fp.test, params, lambdas, 1);
  REQUIRE(records.size() == fp.test.size() * lambdas.size());
  for (std::size_t p = 0; p < fp.test.size(); ++p) {
    for (std::size_t l = 0; l < lambdas.size(); ++l) {
      const auto& r = records[p * lambdas.size() + l];
      CHECK(r.lambda == lambdas[l]);
      CHECK(r.sim_pos > 0.0);
      CHECK(r.sim_pos <= 1.0);
      CHECK(r.sim_neg > 0.0);
      CHECK(r.sim_neg <= 1.0);
      CHECK(r.pair_id.find('|') != std::string::npos);
    }
  }

  SUBCASE("identical boundary seeds reproduce random-window scores") {
    train::BoundarySpec spec;
    spec.policy = train::BoundaryPolicy::random_k;
    spec.k = 3;
    spec.seed = 42;
    const auto a = train::evaluate_pairs(ds, fp.test, params, {0.5}, 1, spec);
    const auto b = train::evaluate_pairs(ds, fp.test, params, {0.5}, 1, spec);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].sim_pos == b[i].sim_pos);
      CHECK(a[i].sim_neg == b[i].sim_neg);
    }
    train::BoundarySpec other = spec;
    other.seed = 43;
    const auto c = train::evaluate_pairs(ds, fp.test, params, {0.5}, 1, other);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i].sim_pos != c[i].sim_pos) differs = true;
    }
    CHECK(differs);
  }
}

TEST_CASE("training learns a planted stimulus-response mapping") {
  const auto ds = make_toy(3, 16, 101, 0.01);
  train::TrainConfig config;
  config.seed = 17;
  config.batch_size = 8;
  config.learning_rate = 0.01;
  config.epochs = 60;
  config.patience = 12;
  config.dropout = 0.0;
  const fs::path dir = fresh_dir("learnable");

  train::FoldSpec fold;
  fold.fold_id = 0;
  for (int t = 0; t < 12; ++t) fold.train_trials.push_back(pad2("t", t));
  for (int t = 12; t < 16; ++t) fold.test_trials.push_back(pad2("t", t));

  const auto outcome = train::train_fold(ds, fold, config, dir);
  REQUIRE(!outcome.aborted);
  CHECK(outcome.train_pair_count == 90);  // 3 subjects x 10 fit trials x 3 sentences
  CHECK(outcome.val_pair_count == 18);
  CHECK(outcome.test_pair_count == 36);
  CHECK(outcome.best_epoch >= 1);
  CHECK(outcome.test_accuracy >= 0.85);

  // History carries train/val rows per completed epoch plus one test row.
  REQUIRE(!outcome.history.empty());
  const auto& last = outcome.history.back();
  CHECK(last.split == "test");
  CHECK(last.epoch == outcome.best_epoch);
  int train_rows = 0;
  for (const auto& row : outcome.history) {
    CHECK(row.fold == 0);
    if (row.split == "train") ++train_rows;
  }
  CHECK(train_rows <= config.epochs);
  CHECK(train_rows >= outcome.best_epoch);

  SUBCASE("checkpoint on disk reproduces the reported test predictions") {
    REQUIRE(fs::exists(outcome.checkpoint_path));
    const auto reloaded = model::load_checkpoint(outcome.checkpoint_path);
    const auto fp = train::build_fold_pairs(ds, fold, config);
    const auto records = train::evaluate_pairs(ds, fp.test, reloaded, {0.0, 0.5, 1.0}, 1);
    REQUIRE(records.size() == outcome.test_predictions.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
      CHECK(records[i].sim_pos == outcome.test_predictions[i].sim_pos);
      CHECK(records[i].sim_neg == outcome.test_predictions[i].sim_neg);
    }
  }
}

TEST_CASE("two training epochs are bit-deterministic for a fixed seed") {
  const auto ds = make_toy(1, 6, 55);
  train::TrainConfig config;
  config.seed = 29;
  config.batch_size = 4;
  config.epochs = 2;
  config.patience = 5;

  train::FoldSpec fold;
  fold.fold_id = 0;
  fold.train_trials = {"t00", "t01", "t02", "t03"};
  fold.test_trials = {"t04", "t05"};

  const fs::path dir_a = fresh_dir("det_a");
  const fs::path dir_b = fresh_dir("det_b");
  const auto a = train::train_fold(ds, fold, config, dir_a);
  const auto b = train::train_fold(ds, fold, config, dir_b);

  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].split == b.history[i].split);
    CHECK(a.history[i].loss == b.history[i].loss);
    CHECK(a.history[i].accuracy == b.history[i].accuracy);
  }
  CHECK(read_bytes(a.checkpoint_path) == read_bytes(b.checkpoint_path));

  train::TrainConfig reseeded = config;
  reseeded.seed = 30;
  const fs::path dir_c = fresh_dir("det_c");
  const auto c = train::train_fold(ds, fold, reseeded, dir_c);
  bool differs = read_bytes(a.checkpoint_path) != read_bytes(c.checkpoint_path);
  for (std::size_t i = 0; i < std::min(a.history.size(), c.history.size()); ++i) {
    if (a.history[i].loss != c.history[i].loss) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("non-finite losses abort the fold with a report") {
  auto ds = make_toy(1, 4, 71);
  for (auto& trial : ds.trials) {
    if (trial.trial != "t03") trial.eeg(0, 40) = std::nan("");
  }
  train::TrainConfig config;
  config.seed = 5;
  config.epochs = 3;

  train::FoldSpec fold;
  fold.fold_id = 2;
  fold.train_trials = {"t00", "t01", "t02"};
  fold.test_trials = {"t03"};

  const auto outcome = train::train_fold(ds, fold, config, "");
  CHECK(outcome.aborted);
  CHECK(outcome.abort_reason.find("fold 2") != std::string::npos);
  CHECK(outcome.abort_reason.find("non-finite") != std::string::npos);
}

TEST_CASE("history files have a fixed layout") {
  train::FoldOutcome outcome;
  outcome.fold_id = 0;
  outcome.history.push_back({0, 1, "train", 0.6931471805, 0.5});
  outcome.history.push_back({0, 1, "val", 0.7, 0.25});
  outcome.history.push_back({0, 1, "test", 0.65, 0.75});
  const fs::path dir = fresh_dir("history");
  const fs::path path = dir / "history.tsv";
  train::write_history(path, {outcome});
  CHECK(read_bytes(path) ==
        "fold\tepoch\tsplit\tloss\taccuracy\n"
        "0\t1\ttrain\t0.693147\t0.500000\n"
        "0\t1\tval\t0.700000\t0.250000\n"
        "0\t1\ttest\t0.650000\t0.750000\n");
}
