#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "neuromatch/error.hpp"
#include "neuromatch/montage.hpp"
#include "neuromatch/stimulus_features.hpp"

namespace neuromatch::data {

// ---------------------------------------------------------------------------
// Tensor interchange. Binary layout (little-endian throughout):
//   magic "NMTB" | u32 version=1 | u32 dtype (1 = float32) | u32 rank (1 or 2)
//   | u64 dim[rank] | float32 payload, row-major for rank 2.
// Values are quantized to float32 once at write time; reading returns those
// exact values widened to double, so write(read(write(x))) is bit-stable.
// ---------------------------------------------------------------------------

void write_tensor(const std::filesystem::path& path, const Eigen::MatrixXd& matrix);
void write_tensor(const std::filesystem::path& path, const std::vector<double>& values);

Eigen::MatrixXd read_matrix(const std::filesystem::path& path);    // requires rank 2
std::vector<double> read_vector(const std::filesystem::path& path);  // requires rank 1

// ---------------------------------------------------------------------------
// Dataset manifest: one JSON object per line ("kind" selects the record type).
// Paths are relative to the manifest's directory. Loading is order-independent:
// records are canonically sorted by their identifying keys.
// ---------------------------------------------------------------------------

struct EegRecord {
  std::string subject;
  std::string trial;
  std::string split = "train";      // train | val | test
  std::string protocol = "natural"; // natural | dichotic
  std::string path;
  double rate = 0.0;
  int channels = 0;
  int line = 0;  // manifest line number (diagnostics only, not serialized)
};

struct AudioRecord {
  std::string subject;
  std::string trial;
  std::string stream = "mono";  // mono | left | right
  std::string sentence;         // sentence id for per-sentence audio, else ""
  std::string path;
  double rate = 0.0;  // 16000/48000 = raw audio, 64 = precomputed envelope
  int line = 0;
};

struct SentenceRecord {
  std::string subject;
  std::string trial;
  std::string stream = "mono";
  std::string id;
  double start_s = 0.0;  // span within the trial, seconds on the 1/64 s grid
  double end_s = 0.0;
  std::vector<stimulus::WordToken> tokens;  // absolute trial-clock times
  int line = 0;
};

struct BehaviorRecord {
  std::string subject;
  std::string trial;
  std::string attended_ear;  // left | right
  double attended_score = 0.0;
  double unattended_score = 0.0;
  int line = 0;
};

struct Manifest {
  std::filesystem::path root;  // directory the relative paths resolve against
  std::string embeddings_path;
  std::string montage_path;
  bool prereferenced = false;
  std::vector<EegRecord> eeg;
  std::vector<AudioRecord> audio;
  std::vector<SentenceRecord> sentences;
  std::vector<BehaviorRecord> behavior;

  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic-data oracle. Audio is a sequence of tone-burst "words" with exactly
// known boundaries; EEG mixes the (optionally delayed) envelope and a
// piecewise-constant projection of each word's embedding, plus pink noise.
// ---------------------------------------------------------------------------

enum class Protocol { natural, dichotic };

struct SynthConfig {
  Protocol protocol = Protocol::natural;
  int n_subjects = 1;
  int n_trials = 20;           // per subject
  double trial_seconds = 8.0;  // must sit on the 1/64 s grid
  int channels = 16;
  double eeg_rate = 512.0;
  double audio_rate = 16000.0;
  double delay_ms = 100.0;      // envelope-response latency
  double acoustic_gain = 1.0;   // envelope-tracking component
  double semantic_gain = 1.0;   // word-embedding component
  double snr_db = 0.0;          // clean-vs-pink-noise power ratio per channel
  bool noise_enabled = true;    // false = noiseless (the -inf dB limit)
  bool identity_mixing = false; // true = every channel receives the envelope at weight 1
  int vocabulary = 60;          // tone words in the codebook (max 960)
  std::uint64_t seed = 0;

  void validate() const;
};

// Writes manifest.jsonl, embeddings.bin, montage.txt, eeg/, audio/ and
// truth/ (clean 512 Hz envelopes) under out_dir; returns the manifest.
Manifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Assembled dataset: manifest records joined with their payloads.
// ---------------------------------------------------------------------------

struct SentenceData {
  std::string id;
  std::string stream;
  double start_s = 0.0;
  double end_s = 0.0;
  stimulus::SentenceStimulus stimulus;  // tokens shifted to the sentence clock
};

struct TrialData {
  std::string subject;
  std::string trial;
  std::string split;
  std::string protocol;
  Eigen::MatrixXd eeg;  // channels x frames
  double eeg_rate = 0.0;
  std::string attended_ear;  // dichotic only, else ""
  double attended_score = 0.0;
  double unattended_score = 0.0;
  std::vector<SentenceData> sentences;  // sorted by (stream, start_s)
};

struct Dataset {
  Manifest manifest;
  Montage montage;
  stimulus::EmbeddingTable embeddings;
  std::vector<TrialData> trials;  // sorted by (subject, trial)
};

// Loads every trial eagerly. Envelopes are read directly from 64 Hz audio
// records and computed via the auditory front end for raw-rate records.
Dataset load_dataset(const std::filesystem::path& manifest_path);

}  // namespace neuromatch::data
