#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "neuromatch/data_io.hpp"
#include "neuromatch/error.hpp"
#include "neuromatch/rng.hpp"
#include "neuromatch/stimulus_features.hpp"

namespace neuromatch::pairs {

// One matched/mismatched training example: the EEG segment (referenced by
// trial index and 64 Hz frame span), the stimulus that produced it (pos) and a
// decoy stimulus of identical duration (neg).
struct MmPair {
  std::string subject;
  std::string trial;
  std::string protocol;  // natural | dichotic
  std::size_t trial_index = 0;
  Eigen::Index eeg_f0 = 0;  // [eeg_f0, eeg_f1) at 64 Hz within the trial
  Eigen::Index eeg_f1 = 0;
  stimulus::SentenceStimulus pos;
  stimulus::SentenceStimulus neg;
  double lambda = 0.5;  // fusion weight assigned at training time
};

// A sentence of one listening session together with its EEG location.
struct SessionSentence {
  std::string subject;
  std::string trial;
  std::size_t trial_index = 0;
  Eigen::Index f0 = 0;  // EEG span at 64 Hz
  Eigen::Index f1 = 0;
  stimulus::SentenceStimulus stimulus;
};

// Flatten the sentences of the chosen trials (64 Hz EEG required) into
// session entries, ordered by (subject, trial, stream, onset).
std::vector<SessionSentence> collect_session(const data::Dataset& dataset,
                                             const std::vector<std::size_t>& trial_indices);

// Natural protocol: one pair per sentence; the mismatched sentence is drawn
// uniformly from the other sentences of the same session and truncated or
// zero-padded to the anchor's duration (word annotations recomputed).
// Sessions with fewer than two sentences yield no pairs and a warning entry.
std::vector<MmPair> make_natural_pairs(const std::vector<SessionSentence>& session, Rng& rng,
                                       std::vector<std::string>* warnings = nullptr);

struct DichoticSkip {
  std::string subject;
  std::string trial;
  std::string sentence_id;
  std::string reason;
};

// Dichotic protocol: the trial is segmented at attended-stream sentence
// boundaries; pos is the attended sentence, neg is whatever the unattended
// stream carried over the same time span. Sentences with no unattended
// content in their span are skipped with a report entry.
std::vector<MmPair> make_dichotic_pairs(const data::TrialData& trial, std::size_t trial_index,
                                        std::vector<DichoticSkip>* skipped = nullptr);

// Fusion weight drawn uniformly from {0, 0.5, 1}.
double sample_lambda(Rng& rng);

// EEG segment for a pair; requires the trial to be at the 64 Hz model rate.
Eigen::MatrixXd eeg_segment(const data::TrialData& trial, const MmPair& pair);

// Truncate or right-pad (zeros) a stimulus to the given frame count,
// clipping word annotations to the new duration.
stimulus::SentenceStimulus fit_to_frames(const stimulus::SentenceStimulus& source,
                                         Eigen::Index frames);

}  // namespace neuromatch::pairs
