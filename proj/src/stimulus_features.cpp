#include "neuromatch/stimulus_features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "neuromatch/sigproc.hpp"

namespace neuromatch::stimulus {

EmbeddingTable::EmbeddingTable(int dim) : dim_(dim) {
  if (dim < 1) raise(ErrorCode::invalid_argument, "EmbeddingTable: dimension must be >= 1");
}

void EmbeddingTable::insert(const std::string& word, const Eigen::VectorXd& vector) {
  if (vector.size() != dim_)
    raise(ErrorCode::invalid_argument, "EmbeddingTable::insert: wrong dimension for '" + word + "'");
  table_[word] = vector;
}

const Eigen::VectorXd* EmbeddingTable::lookup(const std::string& word) const {
  const auto it = table_.find(word);
  return it == table_.end() ? nullptr : &it->second;
}

std::string EmbeddingTable::normalize(const std::string& token) {
  std::string out;
  out.reserve(token.size());
  for (unsigned char ch : token)
    if (std::isalnum(ch)) out.push_back(static_cast<char>(std::tolower(ch)));
  return out;
}

EmbeddingTable load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io, "cannot open embedding table " + path.string());
  std::size_t count = 0;
  int dim = 0;
  in >> count >> dim;
  if (!in || dim < 1) raise(ErrorCode::format, path.string() + ": bad embedding header");
  in.get();  // the newline terminating the header
  EmbeddingTable table(dim);
  std::vector<float> buffer(static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < count; ++i) {
    std::string word;
    char ch = 0;
    while (in.get(ch) && ch != ' ') word.push_back(ch);
    if (!in.read(reinterpret_cast<char*>(buffer.data()),
                 static_cast<std::streamsize>(buffer.size() * sizeof(float))))
      raise(ErrorCode::format,
            path.string() + ": truncated record " + std::to_string(i) + " ('" + word + "')");
    in.get();  // record newline
    Eigen::VectorXd vec(dim);
    for (int d = 0; d < dim; ++d) vec(d) = static_cast<double>(buffer[static_cast<std::size_t>(d)]);
    table.insert(word, vec);
  }
  return table;
}

void save_embeddings(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::io, "cannot write embedding table " + path.string());
  out << table.size() << ' ' << table.dim() << '\n';
  std::vector<float> buffer(static_cast<std::size_t>(table.dim()));
  for (const auto& [word, vec] : table.entries()) {
    out << word << ' ';
    for (int d = 0; d < table.dim(); ++d) buffer[static_cast<std::size_t>(d)] = static_cast<float>(vec(d));
    out.write(reinterpret_cast<const char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
    out << '\n';
  }
  if (!out) raise(ErrorCode::io, "failed writing embedding table " + path.string());
}

EmbedResult embed_words(const std::vector<WordToken>& tokens, const EmbeddingTable& table) {
  if (tokens.empty()) raise(ErrorCode::invalid_argument, "embed_words: no tokens");
  EmbedResult result;
  result.rows = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tokens.size()), table.dim());
  result.oov.resize(tokens.size(), false);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto* vec = table.lookup(EmbeddingTable::normalize(tokens[i].text));
    if (vec)
      result.rows.row(static_cast<Eigen::Index>(i)) = vec->transpose();
    else
      result.oov[i] = true;
  }
  return result;
}

std::vector<double> compute_envelope(const std::vector<double>& audio, double audio_rate) {
  if (audio_rate != 16000.0 && audio_rate != 48000.0)
    raise(ErrorCode::invalid_argument,
          "compute_envelope: audio rate must be 16 or 48 kHz, got " + std::to_string(audio_rate));
  if (audio.empty()) raise(ErrorCode::invalid_argument, "compute_envelope: empty audio");
  std::vector<double> envelope = sigproc::hilbert_envelope(audio, audio_rate);
  std::vector<double> out = sigproc::resample_signal(envelope, audio_rate, 64.0);
  for (double& v : out) v = std::max(v, 0.0);  // sinc overshoot can dip below zero
  return out;
}

std::vector<FrameWindow> boundaries_to_frames(const std::vector<WordToken>& tokens,
                                              Eigen::Index frames_available, double frame_rate) {
  if (tokens.empty()) raise(ErrorCode::invalid_argument, "boundaries_to_frames: no tokens");
  if (frame_rate <= 0.0)
    raise(ErrorCode::invalid_argument, "boundaries_to_frames: frame rate must be positive");
  std::vector<FrameWindow> windows;
  windows.reserve(tokens.size());
  Eigen::Index previous_end = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const WordToken& token = tokens[i];
    if (token.start_s < 0.0 || token.end_s <= token.start_s)
      raise(ErrorCode::invalid_argument,
            "boundaries_to_frames: token " + std::to_string(i) + " has invalid times");
    if (i > 0 && token.start_s < tokens[i - 1].start_s)
      raise(ErrorCode::invalid_argument,
            "boundaries_to_frames: token " + std::to_string(i) + " out of order");
    Eigen::Index start = static_cast<Eigen::Index>(std::floor(token.start_s * frame_rate));
    start = std::max(start, previous_end);  // clamp to non-overlap
    Eigen::Index end = static_cast<Eigen::Index>(std::floor(token.end_s * frame_rate));
    end = std::max(end, start + 1);
    if (end > frames_available)
      raise(ErrorCode::alignment, "boundaries_to_frames: token " + std::to_string(i) + " ('" +
                                      token.text + "') ends at frame " + std::to_string(end) +
                                      " beyond the " + std::to_string(frames_available) +
                                      " available");
    windows.emplace_back(start, end);
    previous_end = end;
  }
  return windows;
}

}  // namespace neuromatch::stimulus
