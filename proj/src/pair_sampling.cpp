#include "neuromatch/pair_sampling.hpp"

#include <algorithm>
#include <cmath>

namespace neuromatch::pairs {
namespace {

constexpr double kFrameRate = 64.0;

Eigen::Index frame_of(double seconds, const char* what) {
  auto frame = static_cast<Eigen::Index>(std::llround(seconds * kFrameRate));
  if (std::abs(frame / kFrameRate - seconds) > 1e-9)
    raise(ErrorCode::alignment,
          std::string(what) + ": time " + std::to_string(seconds) + " s is off the 1/64 s grid");
  return frame;
}

void append_clipped_token(stimulus::SentenceStimulus& out, const stimulus::WordToken& token,
                          const Eigen::MatrixXd& source_rows, Eigen::Index source_row,
                          bool source_oov, double window_start_s, double window_end_s) {
  double start = std::max(token.start_s, window_start_s);
  double end = std::min(token.end_s, window_end_s);
  if (end - start <= 1e-9) return;
  stimulus::WordToken clipped;
  clipped.text = token.text;
  clipped.start_s = start - window_start_s;
  clipped.end_s = end - window_start_s;
  out.tokens.push_back(std::move(clipped));
  out.embeddings.conservativeResize(out.embeddings.rows() + 1,
                                    source_rows.cols() > 0 ? source_rows.cols()
                                                           : out.embeddings.cols());
  out.embeddings.row(out.embeddings.rows() - 1) = source_rows.row(source_row);
  out.oov.push_back(source_oov);
}

}  // namespace

stimulus::SentenceStimulus fit_to_frames(const stimulus::SentenceStimulus& source,
                                         Eigen::Index frames) {
  if (frames <= 0)
    raise(ErrorCode::invalid_argument, "fit_to_frames: target frame count must be positive");
  stimulus::SentenceStimulus out;
  out.sentence_id = source.sentence_id;
  out.envelope.assign(static_cast<std::size_t>(frames), 0.0);
  const std::size_t copy = std::min(source.envelope.size(), static_cast<std::size_t>(frames));
  std::copy(source.envelope.begin(), source.envelope.begin() + static_cast<std::ptrdiff_t>(copy),
            out.envelope.begin());

  const double duration = frames / kFrameRate;
  out.embeddings.resize(0, source.embeddings.cols());
  for (std::size_t i = 0; i < source.tokens.size(); ++i)
    append_clipped_token(out, source.tokens[i], source.embeddings,
                         static_cast<Eigen::Index>(i), source.oov[i], 0.0, duration);
  if (out.tokens.empty())
    raise(ErrorCode::invalid_design, "fit_to_frames: no word of '" + source.sentence_id +
                                         "' survives truncation to " + std::to_string(frames) +
                                         " frames");
  return out;
}

std::vector<SessionSentence> collect_session(const data::Dataset& dataset,
                                             const std::vector<std::size_t>& trial_indices) {
  std::vector<SessionSentence> session;
  for (std::size_t index : trial_indices) {
    if (index >= dataset.trials.size())
      raise(ErrorCode::invalid_argument,
            "collect_session: trial index " + std::to_string(index) + " out of range");
    const data::TrialData& trial = dataset.trials[index];
    if (trial.eeg_rate != kFrameRate)
      raise(ErrorCode::pipeline, "collect_session: trial " + trial.subject + "/" + trial.trial +
                                     " is at " + std::to_string(trial.eeg_rate) +
                                     " Hz; run preprocessing to 64 Hz first");
    for (const data::SentenceData& sentence : trial.sentences) {
      SessionSentence entry;
      entry.subject = trial.subject;
      entry.trial = trial.trial;
      entry.trial_index = index;
      entry.f0 = frame_of(sentence.start_s, "collect_session");
      entry.f1 = frame_of(sentence.end_s, "collect_session");
      if (entry.f1 > trial.eeg.cols())
        raise(ErrorCode::alignment, "collect_session: sentence " + sentence.id +
                                        " extends past the EEG of " + trial.subject + "/" +
                                        trial.trial);
      entry.stimulus = sentence.stimulus;
      session.push_back(std::move(entry));
    }
  }
  return session;
}

std::vector<MmPair> make_natural_pairs(const std::vector<SessionSentence>& session, Rng& rng,
                                       std::vector<std::string>* warnings) {
  std::vector<MmPair> pairs;
  if (session.size() < 2) {
    if (warnings)
      warnings->push_back("session with " + std::to_string(session.size()) +
                          " sentence(s) skipped: negatives need at least two");
    return pairs;
  }
  for (std::size_t i = 0; i < session.size(); ++i) {
    const SessionSentence& anchor = session[i];
    std::size_t j = static_cast<std::size_t>(rng.below(session.size() - 1));
    if (j >= i) ++j;  // uniform over the other sentences
    const SessionSentence& decoy = session[j];

    MmPair pair;
    pair.subject = anchor.subject;
    pair.trial = anchor.trial;
    pair.protocol = "natural";
    pair.trial_index = anchor.trial_index;
    pair.eeg_f0 = anchor.f0;
    pair.eeg_f1 = anchor.f1;
    pair.pos = anchor.stimulus;
    pair.neg = fit_to_frames(decoy.stimulus, anchor.stimulus.frames());
    if (pair.pos.sentence_id == pair.neg.sentence_id)
      raise(ErrorCode::invalid_design,
            "make_natural_pairs: duplicate sentence id " + pair.pos.sentence_id +
                " makes pos and neg indistinguishable");
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<MmPair> make_dichotic_pairs(const data::TrialData& trial, std::size_t trial_index,
                                        std::vector<DichoticSkip>* skipped) {
  if (trial.protocol != "dichotic")
    raise(ErrorCode::invalid_argument,
          "make_dichotic_pairs: trial " + trial.subject + "/" + trial.trial + " is not dichotic");
  if (trial.attended_ear != "left" && trial.attended_ear != "right")
    raise(ErrorCode::invalid_argument, "make_dichotic_pairs: trial " + trial.subject + "/" +
                                           trial.trial + " has no attended ear label");
  if (trial.eeg_rate != kFrameRate)
    raise(ErrorCode::pipeline, "make_dichotic_pairs: trial " + trial.subject + "/" + trial.trial +
                                   " is at " + std::to_string(trial.eeg_rate) +
                                   " Hz; run preprocessing to 64 Hz first");
  const std::string& attended = trial.attended_ear;
  const std::string unattended = attended == "left" ? "right" : "left";

  std::vector<const data::SentenceData*> pos_sentences, neg_sentences;
  for (const data::SentenceData& sentence : trial.sentences) {
    if (sentence.stream == attended) pos_sentences.push_back(&sentence);
    if (sentence.stream == unattended) neg_sentences.push_back(&sentence);
  }

  std::vector<MmPair> pairs;
  for (const data::SentenceData* pos : pos_sentences) {
    Eigen::Index f0 = frame_of(pos->start_s, "make_dichotic_pairs");
    Eigen::Index f1 = frame_of(pos->end_s, "make_dichotic_pairs");
    if (f1 > trial.eeg.cols())
      raise(ErrorCode::alignment, "make_dichotic_pairs: sentence " + pos->id +
                                      " extends past the EEG of " + trial.subject + "/" +
                                      trial.trial);

    // The unattended stream's content over exactly the same time span.
    stimulus::SentenceStimulus neg;
    neg.sentence_id = trial.subject + "/" + trial.trial + "/" + unattended + "/span" +
                      std::to_string(f0) + "-" + std::to_string(f1);
    neg.envelope.assign(static_cast<std::size_t>(f1 - f0), 0.0);
    neg.embeddings.resize(0, 0);
    for (const data::SentenceData* source : neg_sentences) {
      Eigen::Index s0 = frame_of(source->start_s, "make_dichotic_pairs");
      Eigen::Index s1 = frame_of(source->end_s, "make_dichotic_pairs");
      Eigen::Index lo = std::max(f0, s0), hi = std::min(f1, s1);
      for (Eigen::Index f = lo; f < hi; ++f)
        neg.envelope[static_cast<std::size_t>(f - f0)] =
            source->stimulus.envelope[static_cast<std::size_t>(f - s0)];
      if (neg.embeddings.cols() == 0 && source->stimulus.embeddings.cols() > 0)
        neg.embeddings.resize(0, source->stimulus.embeddings.cols());
      for (std::size_t i = 0; i < source->stimulus.tokens.size(); ++i) {
        stimulus::WordToken absolute = source->stimulus.tokens[i];
        absolute.start_s += source->start_s;
        absolute.end_s += source->start_s;
        append_clipped_token(neg, absolute, source->stimulus.embeddings,
                             static_cast<Eigen::Index>(i), source->stimulus.oov[i],
                             pos->start_s, pos->end_s);
      }
    }
    if (neg.tokens.empty()) {
      if (skipped)
        skipped->push_back({trial.subject, trial.trial, pos->id,
                            "no unattended words overlap the sentence span"});
      continue;
    }

    MmPair pair;
    pair.subject = trial.subject;
    pair.trial = trial.trial;
    pair.protocol = "dichotic";
    pair.trial_index = trial_index;
    pair.eeg_f0 = f0;
    pair.eeg_f1 = f1;
    pair.pos = pos->stimulus;
    pair.neg = std::move(neg);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

double sample_lambda(Rng& rng) { return 0.5 * static_cast<double>(rng.below(3)); }

Eigen::MatrixXd eeg_segment(const data::TrialData& trial, const MmPair& pair) {
  if (trial.eeg_rate != kFrameRate)
    raise(ErrorCode::pipeline,
          "eeg_segment: trial " + trial.subject + "/" + trial.trial + " is at " +
              std::to_string(trial.eeg_rate) + " Hz; the model expects 64 Hz");
  if (pair.eeg_f0 < 0 || pair.eeg_f1 <= pair.eeg_f0 || pair.eeg_f1 > trial.eeg.cols())
    raise(ErrorCode::alignment, "eeg_segment: span [" + std::to_string(pair.eeg_f0) + ", " +
                                    std::to_string(pair.eeg_f1) + ") outside trial of " +
                                    std::to_string(trial.eeg.cols()) + " frames");
  return trial.eeg.middleCols(pair.eeg_f0, pair.eeg_f1 - pair.eeg_f0);
}

}  // namespace neuromatch::pairs
