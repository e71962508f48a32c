// Command line driver for the match-mismatch EEG pipeline. All argument
// values are passed to the library as strings; the library owns validation,
// so this file only defines the flag surface and maps failures to exit codes
// (0 ok, 1 runtime failure, 2 usage).

#include <cstdio>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "neuromatch/neuromatch.h"

namespace {

using Settings = std::vector<std::pair<std::string, std::string>>;

// Forward one flag's value to the session under the given option key.
CLI::Option* bind_flag(CLI::App* cmd, Settings* settings, const std::string& flag,
                  const std::string& key, const std::string& help) {
  return cmd->add_option(flag, help)->each([settings, key](const std::string& value) {
    settings->emplace_back(key, value);
  });
}

void bind_overrides(CLI::App* cmd, Settings* settings) {
  cmd->add_option("--set", "extra option as key=value (repeatable)")
      ->each([settings](const std::string& text) {
        const std::size_t eq = text.find('=');
        if (eq == std::string::npos) {
          throw CLI::ValidationError("--set", "expected key=value, got '" + text + "'");
        }
        settings->emplace_back(text.substr(0, eq), text.substr(eq + 1));
      });
}

void bind_training(CLI::App* cmd, Settings* settings) {
  bind_flag(cmd, settings, "--protocol", "protocol", "require 'natural' or 'dichotic' data");
  bind_flag(cmd, settings, "--lambda", "lambda", "fusion weight policy: sampled | fixed=V");
  bind_flag(cmd, settings, "--sim", "sim", "similarity fusion variant: 1 | 2 | 3");
  bind_flag(cmd, settings, "--context", "context", "context layer: recurrent | transformer");
  bind_flag(cmd, settings, "--folds", "folds", "number of cross-validation folds");
  bind_flag(cmd, settings, "--test-per-fold", "test-per-fold", "test trials per fold");
  bind_flag(cmd, settings, "--allow-overlap", "allow-overlap", "allow folds to share test trials");
  bind_flag(cmd, settings, "--epochs", "epochs", "maximum training epochs per fold");
  bind_flag(cmd, settings, "--patience", "patience", "early-stopping patience in epochs");
  bind_flag(cmd, settings, "--batch-size", "batch-size", "training batch size");
  bind_flag(cmd, settings, "--learning-rate", "learning-rate", "Adam learning rate");
  bind_flag(cmd, settings, "--weight-decay", "weight-decay", "coupled L2 weight decay");
  bind_flag(cmd, settings, "--dropout", "dropout", "dropout probability");
  bind_flag(cmd, settings, "--val-fraction", "val-fraction", "training trials held out for validation");
  bind_flag(cmd, settings, "--shuffle-labels", "shuffle-labels", "control run with shuffled labels");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"match-mismatch decoding of speech from EEG"};
  app.require_subcommand(1);
  app.set_version_flag("--version", nm_version());

  Settings settings;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  bind_flag(synth, &settings, "--out", "out", "output directory")->required();
  bind_flag(synth, &settings, "--seed", "seed", "random seed")->required();
  bind_flag(synth, &settings, "--protocol,--mode", "protocol", "natural | dichotic");
  bind_flag(synth, &settings, "--trials", "trials", "trials per subject");
  bind_flag(synth, &settings, "--subjects", "subjects", "number of subjects");
  bind_flag(synth, &settings, "--trial-seconds", "trial-seconds", "seconds per trial");
  bind_flag(synth, &settings, "--channels", "channels", "EEG channel count");
  bind_flag(synth, &settings, "--snr", "snr", "EEG signal-to-noise ratio in dB");
  bind_flag(synth, &settings, "--noise", "noise", "enable pink noise (true/false)");
  bind_flag(synth, &settings, "--delay-ms", "delay-ms", "stimulus-to-EEG delay in ms");
  bind_flag(synth, &settings, "--acoustic-gain", "acoustic-gain", "envelope coupling gain");
  bind_flag(synth, &settings, "--semantic-gain", "semantic-gain", "word-vector coupling gain");
  bind_flag(synth, &settings, "--vocabulary", "vocabulary", "synthetic vocabulary size");
  bind_flag(synth, &settings, "--identity-mixing", "identity-mixing",
       "mix the envelope into every channel with unit gain");
  bind_flag(synth, &settings, "--jobs", "jobs", "worker cap");
  bind_overrides(synth, &settings);

  CLI::App* preprocess = app.add_subcommand("preprocess", "filter, resample and clean a dataset");
  bind_flag(preprocess, &settings, "--manifest", "manifest", "input manifest")->required();
  bind_flag(preprocess, &settings, "--out", "out", "output directory")->required();
  bind_flag(preprocess, &settings, "--seed", "seed", "accepted for symmetry; stage is deterministic");
  bind_flag(preprocess, &settings, "--jobs", "jobs", "worker cap");
  bind_overrides(preprocess, &settings);

  CLI::App* train = app.add_subcommand("train", "cross-validated model training");
  bind_flag(train, &settings, "--manifest", "manifest", "preprocessed manifest")->required();
  bind_flag(train, &settings, "--out", "out", "output directory")->required();
  bind_flag(train, &settings, "--seed", "seed", "random seed")->required();
  bind_flag(train, &settings, "--jobs", "jobs", "worker cap");
  bind_training(train, &settings);
  bind_overrides(train, &settings);

  CLI::App* evaluate = app.add_subcommand("evaluate", "train and write the report tables");
  bind_flag(evaluate, &settings, "--manifest", "manifest", "preprocessed manifest")->required();
  bind_flag(evaluate, &settings, "--out", "out", "output directory")->required();
  bind_flag(evaluate, &settings, "--seed", "seed", "random seed")->required();
  bind_flag(evaluate, &settings, "--jobs", "jobs", "worker cap");
  bind_training(evaluate, &settings);
  bind_flag(evaluate, &settings, "--lambdas", "lambdas", "fusion weights to sweep, comma separated");
  bind_flag(evaluate, &settings, "--word-boundaries", "word-boundaries",
       "pooling windows: true | none | random:k");
  bind_flag(evaluate, &settings, "--regions", "regions", "per-region analysis: all");
  bind_overrides(evaluate, &settings);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return NM_USAGE;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  const std::unique_ptr<nm_session, decltype(&nm_session_destroy)> session(nm_session_create(),
                                                                           &nm_session_destroy);
  if (!session) {
    std::fprintf(stderr, "neuromatch: out of memory\n");
    return NM_ERROR;
  }
  for (const auto& [key, value] : settings) {
    if (const int rc = nm_set_option(session.get(), key.c_str(), value.c_str()); rc != NM_OK) {
      std::fprintf(stderr, "neuromatch %s: %s\n", command.c_str(), nm_last_error(session.get()));
      return rc;
    }
  }
  const int rc = nm_run(session.get(), command.c_str());
  if (rc != NM_OK) {
    std::fprintf(stderr, "neuromatch %s: %s\n", command.c_str(), nm_last_error(session.get()));
    return rc;
  }
  std::printf("%s\n", nm_last_output(session.get()));
  return NM_OK;
}
