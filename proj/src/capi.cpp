#include "neuromatch/neuromatch.h"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "neuromatch/error.hpp"
#include "neuromatch/pipeline.hpp"

struct nm_session {
  std::map<std::string, std::string> options;
  std::string last_error;
  std::string last_output;
};

namespace {

using neuromatch::Error;
using neuromatch::ErrorCode;
namespace data = neuromatch::data;
namespace pipeline = neuromatch::pipeline;
namespace train = neuromatch::train;

// Usage-class failure: malformed keys, values, or option/command pairings.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] void usage(const std::string& message) { throw UsageError(message); }

bool parse_ll(const std::string& text, long long& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && !text.empty();
}

bool parse_u64(const std::string& text, std::uint64_t& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && !text.empty();
}

bool parse_double(const std::string& text, double& out) {
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && !text.empty() && std::isfinite(out);
}

bool parse_bool(const std::string& text, bool& out) {
  if (text == "true" || text == "1" || text == "on") {
    out = true;
    return true;
  }
  if (text == "false" || text == "0" || text == "off") {
    out = false;
    return true;
  }
  return false;
}

std::vector<double> parse_lambda_list(const std::string& text) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string item =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    double value = 0.0;
    if (!parse_double(item, value) || value < 0.0 || value > 1.0) {
      usage("lambdas: '" + item + "' is not a number in [0, 1]");
    }
    values.push_back(value);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (values.empty()) usage("lambdas: empty list");
  return values;
}

// Immediate value validation, so a bad setting is reported where it is made.
void validate_value(const std::string& key, const std::string& value) {
  if (value.empty()) usage("option '" + key + "' has an empty value");
  long long ll = 0;
  std::uint64_t u64 = 0;
  double d = 0.0;
  bool b = false;
  if (key == "manifest" || key == "out") return;
  if (key == "seed") {
    if (!parse_u64(value, u64)) usage("seed: '" + value + "' is not a non-negative integer");
    return;
  }
  if (key == "protocol") {
    if (value != "natural" && value != "dichotic") {
      usage("protocol: expected 'natural' or 'dichotic', got '" + value + "'");
    }
    return;
  }
  if (key == "jobs" || key == "trials" || key == "subjects" || key == "channels" ||
      key == "vocabulary" || key == "folds" || key == "test-per-fold" || key == "epochs" ||
      key == "batch-size") {
    if (!parse_ll(value, ll) || ll < 1) usage(key + ": '" + value + "' is not a positive integer");
    return;
  }
  if (key == "patience") {
    if (!parse_ll(value, ll) || ll < 0) {
      usage("patience: '" + value + "' is not a non-negative integer");
    }
    return;
  }
  if (key == "trial-seconds" || key == "learning-rate") {
    if (!parse_double(value, d) || d <= 0.0) usage(key + ": '" + value + "' is not positive");
    return;
  }
  if (key == "snr" || key == "acoustic-gain" || key == "semantic-gain") {
    if (!parse_double(value, d)) usage(key + ": '" + value + "' is not a number");
    return;
  }
  if (key == "delay-ms" || key == "weight-decay" || key == "dropout" || key == "val-fraction") {
    if (!parse_double(value, d) || d < 0.0) usage(key + ": '" + value + "' is negative or not a number");
    return;
  }
  if (key == "noise" || key == "identity-mixing" || key == "shuffle-labels" ||
      key == "allow-overlap") {
    if (!parse_bool(value, b)) usage(key + ": expected true/false, got '" + value + "'");
    return;
  }
  if (key == "lambda") {
    if (value == "sampled") return;
    if (value.rfind("fixed=", 0) == 0) {
      const std::string rest = value.substr(6);
      if (parse_double(rest, d) && d >= 0.0 && d <= 1.0) return;
    }
    usage("lambda: expected 'sampled' or 'fixed=V' with V in [0, 1], got '" + value + "'");
  }
  if (key == "lambdas") {
    parse_lambda_list(value);
    return;
  }
  if (key == "sim") {
    if (value != "1" && value != "2" && value != "3") {
      usage("sim: expected 1, 2 or 3, got '" + value + "'");
    }
    return;
  }
  if (key == "context") {
    if (value != "recurrent" && value != "transformer") {
      usage("context: expected 'recurrent' or 'transformer', got '" + value + "'");
    }
    return;
  }
  if (key == "word-boundaries") {
    try {
      train::parse_boundary_spec(value, 0);
    } catch (const Error& e) {
      usage(e.what());
    }
    return;
  }
  if (key == "regions") {
    if (value != "all") usage("regions: only 'all' (five-region analysis) is supported");
    return;
  }
  usage("unknown option '" + key + "'");
}

// Reads stored options for one command and complains about leftovers, so a
// setting that silently does nothing cannot slip through.
class OptionReader {
 public:
  explicit OptionReader(const std::map<std::string, std::string>& options) : options_(options) {}

  bool has(const std::string& key) {
    consumed_.insert(key);
    return options_.count(key) > 0;
  }
  std::string require(const std::string& key) {
    consumed_.insert(key);
    const auto it = options_.find(key);
    if (it == options_.end()) usage("required option '" + key + "' is not set");
    return it->second;
  }
  std::string text(const std::string& key, const std::string& fallback) {
    consumed_.insert(key);
    const auto it = options_.find(key);
    return it == options_.end() ? fallback : it->second;
  }
  long long integer(const std::string& key, long long fallback) {
    long long out = fallback;
    const std::string value = text(key, "");
    if (!value.empty()) parse_ll(value, out);
    return out;
  }
  double number(const std::string& key, double fallback) {
    double out = fallback;
    const std::string value = text(key, "");
    if (!value.empty()) parse_double(value, out);
    return out;
  }
  bool flag(const std::string& key, bool fallback) {
    bool out = fallback;
    const std::string value = text(key, "");
    if (!value.empty()) parse_bool(value, out);
    return out;
  }
  std::uint64_t seed() {
    std::uint64_t out = 0;
    parse_u64(require("seed"), out);
    return out;
  }
  void finish(const std::string& command) {
    for (const auto& [key, value] : options_) {
      if (!consumed_.count(key)) {
        usage("option '" + key + "' does not apply to command '" + command + "'");
      }
    }
  }

 private:
  const std::map<std::string, std::string>& options_;
  std::set<std::string> consumed_;
};

std::string cmd_synth(OptionReader& reader) {
  data::SynthConfig config;
  config.seed = reader.seed();
  const std::filesystem::path out = reader.require("out");
  config.protocol = reader.text("protocol", "natural") == "dichotic" ? data::Protocol::dichotic
                                                                     : data::Protocol::natural;
  config.n_subjects = static_cast<int>(reader.integer("subjects", config.n_subjects));
  config.n_trials = static_cast<int>(reader.integer("trials", config.n_trials));
  config.trial_seconds = reader.number("trial-seconds", config.trial_seconds);
  config.channels = static_cast<int>(reader.integer("channels", config.channels));
  config.vocabulary = static_cast<int>(reader.integer("vocabulary", config.vocabulary));
  config.delay_ms = reader.number("delay-ms", config.delay_ms);
  config.snr_db = reader.number("snr", config.snr_db);
  config.noise_enabled = reader.flag("noise", config.noise_enabled);
  config.identity_mixing = reader.flag("identity-mixing", config.identity_mixing);
  config.acoustic_gain = reader.number("acoustic-gain", config.acoustic_gain);
  config.semantic_gain = reader.number("semantic-gain", config.semantic_gain);
  reader.integer("jobs", 1);  // accepted everywhere; this build runs serially
  reader.finish("synth");
  return pipeline::run_synth(config, out).manifest.string();
}

std::string cmd_preprocess(OptionReader& reader) {
  const std::filesystem::path manifest = reader.require("manifest");
  const std::filesystem::path out = reader.require("out");
  reader.text("seed", "");  // deterministic stage: accepted, unused
  reader.integer("jobs", 1);
  reader.finish("preprocess");
  return pipeline::run_preprocess(manifest, out).manifest.string();
}

pipeline::ExperimentOptions experiment_options(OptionReader& reader) {
  pipeline::ExperimentOptions options;
  options.manifest = reader.require("manifest");
  options.out_dir = reader.require("out");
  options.train.seed = reader.seed();
  options.protocol = reader.text("protocol", "");
  options.folds = static_cast<int>(reader.integer("folds", options.folds));
  options.test_per_fold = static_cast<int>(reader.integer("test-per-fold", options.test_per_fold));
  options.allow_overlap = reader.flag("allow-overlap", options.allow_overlap);
  options.jobs = static_cast<int>(reader.integer("jobs", options.jobs));

  const std::string lambda = reader.text("lambda", "sampled");
  if (lambda == "sampled") {
    options.train.lambda_policy = "sampled";
  } else {
    options.train.lambda_policy = "fixed";
    parse_double(lambda.substr(6), options.train.lambda_fixed);
  }
  options.train.sim_variant = static_cast<int>(reader.integer("sim", options.train.sim_variant));
  options.train.context = reader.text("context", "recurrent") == "transformer"
                              ? neuromatch::model::ContextKind::transformer
                              : neuromatch::model::ContextKind::recurrent;
  options.train.epochs = static_cast<int>(reader.integer("epochs", options.train.epochs));
  options.train.patience = static_cast<int>(reader.integer("patience", options.train.patience));
  options.train.batch_size =
      static_cast<int>(reader.integer("batch-size", options.train.batch_size));
  options.train.learning_rate = reader.number("learning-rate", options.train.learning_rate);
  options.train.weight_decay = reader.number("weight-decay", options.train.weight_decay);
  options.train.dropout = reader.number("dropout", options.train.dropout);
  options.train.val_fraction = reader.number("val-fraction", options.train.val_fraction);
  options.train.shuffle_labels = reader.flag("shuffle-labels", options.train.shuffle_labels);
  return options;
}

std::string cmd_train(OptionReader& reader) {
  const auto options = experiment_options(reader);
  reader.finish("train");
  pipeline::run_train(options);
  return options.out_dir.string();
}

std::string cmd_evaluate(OptionReader& reader) {
  auto options = experiment_options(reader);
  if (reader.has("lambdas")) options.lambdas = parse_lambda_list(reader.require("lambdas"));
  options.word_boundaries = reader.text("word-boundaries", options.word_boundaries);
  options.regions = reader.text("regions", "");
  reader.finish("evaluate");
  pipeline::run_evaluate(options);
  return options.out_dir.string();
}

}  // namespace

nm_session* nm_session_create(void) {
  try {
    return new nm_session();
  } catch (...) {
    return nullptr;
  }
}

void nm_session_destroy(nm_session* session) { delete session; }

int nm_set_option(nm_session* session, const char* key, const char* value) {
  if (session == nullptr) return NM_USAGE;
  if (key == nullptr || value == nullptr) {
    session->last_error = "nm_set_option: key and value must not be NULL";
    return NM_USAGE;
  }
  try {
    validate_value(key, value);
    session->options[key] = value;
    return NM_OK;
  } catch (const UsageError& e) {
    session->last_error = e.what();
    return NM_USAGE;
  }
}

void nm_clear_options(nm_session* session) {
  if (session != nullptr) session->options.clear();
}

int nm_run(nm_session* session, const char* command) {
  if (session == nullptr) return NM_USAGE;
  if (command == nullptr) {
    session->last_error = "nm_run: command must not be NULL";
    return NM_USAGE;
  }
  const std::string name = command;
  try {
    OptionReader reader(session->options);
    std::string output;
    if (name == "synth") {
      output = cmd_synth(reader);
    } else if (name == "preprocess") {
      output = cmd_preprocess(reader);
    } else if (name == "train") {
      output = cmd_train(reader);
    } else if (name == "evaluate") {
      output = cmd_evaluate(reader);
    } else {
      usage("unknown command '" + name + "'");
    }
    session->last_output = output;
    session->last_error.clear();
    return NM_OK;
  } catch (const UsageError& e) {
    session->last_error = e.what();
    return NM_USAGE;
  } catch (const Error& e) {
    session->last_error = e.what();
    return e.code() == ErrorCode::invalid_argument ? NM_USAGE : NM_ERROR;
  } catch (const std::exception& e) {
    session->last_error = e.what();
    return NM_ERROR;
  }
}

const char* nm_last_error(const nm_session* session) {
  return session == nullptr ? "" : session->last_error.c_str();
}

const char* nm_last_output(const nm_session* session) {
  return session == nullptr ? "" : session->last_output.c_str();
}

const char* nm_version(void) { return "0.1.0"; }
