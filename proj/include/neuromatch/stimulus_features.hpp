#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "neuromatch/error.hpp"

namespace neuromatch::stimulus {

struct WordToken {
  std::string text;
  double start_s = 0.0;
  double end_s = 0.0;
};

// Word -> vector table. Binary file format: text header line "count dim\n",
// then per word: the token bytes, one space, dim little-endian float32 values,
// one trailing newline.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(int dim = 300);

  int dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  void insert(const std::string& word, const Eigen::VectorXd& vector);
  const Eigen::VectorXd* lookup(const std::string& word) const;
  const std::map<std::string, Eigen::VectorXd>& entries() const { return table_; }

  // Lookup key normalization: lowercase, punctuation stripped.
  static std::string normalize(const std::string& token);

 private:
  int dim_;
  std::map<std::string, Eigen::VectorXd> table_;
};

EmbeddingTable load_embeddings(const std::filesystem::path& path);
void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path);

struct EmbedResult {
  Eigen::MatrixXd rows;        // tokens x dim
  std::vector<bool> oov;       // true where the word was missing (row zeroed)
};

EmbedResult embed_words(const std::vector<WordToken>& tokens, const EmbeddingTable& table);

// Hilbert envelope resampled to 64 Hz, clamped non-negative.
std::vector<double> compute_envelope(const std::vector<double>& audio, double audio_rate);

using FrameWindow = std::pair<Eigen::Index, Eigen::Index>;  // [start, end)

// Map word times onto the post-convolution frame grid (default 64/3 Hz).
// Every word gets at least one frame; windows are clamped non-overlapping.
std::vector<FrameWindow> boundaries_to_frames(const std::vector<WordToken>& tokens,
                                              Eigen::Index frames_available,
                                              double frame_rate = 64.0 / 3.0);

// One aligned stimulus: envelope at 64 Hz plus the word-level annotations.
struct SentenceStimulus {
  std::string sentence_id;
  std::vector<double> envelope;  // 64 Hz
  std::vector<WordToken> tokens;
  Eigen::MatrixXd embeddings;    // tokens x embedding dim
  std::vector<bool> oov;
  Eigen::Index frames() const { return static_cast<Eigen::Index>(envelope.size()); }
};

}  // namespace neuromatch::stimulus
