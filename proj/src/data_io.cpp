#include "neuromatch/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "neuromatch/fft.hpp"
#include "neuromatch/rng.hpp"
#include "neuromatch/types.hpp"

namespace neuromatch::data {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor blob I/O assumes a little-endian host");

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tensor blob primitives
// ---------------------------------------------------------------------------

constexpr char kBlobMagic[4] = {'N', 'M', 'T', 'B'};
constexpr std::uint32_t kBlobVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;

void blob_write(std::ofstream& out, const void* bytes, std::size_t count,
                const std::filesystem::path& path) {
  out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(count));
  if (!out) raise(ErrorCode::io, "write_tensor: write failed for " + path.string());
}

template <typename T>
void blob_put(std::ofstream& out, T value, const std::filesystem::path& path) {
  blob_write(out, &value, sizeof value, path);
}

std::ofstream blob_open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) raise(ErrorCode::io, "write_tensor: cannot open " + path.string());
  return out;
}

void blob_header(std::ofstream& out, std::uint32_t rank, const std::uint64_t* dims,
                 const std::filesystem::path& path) {
  blob_write(out, kBlobMagic, sizeof kBlobMagic, path);
  blob_put(out, kBlobVersion, path);
  blob_put(out, kDtypeF32, path);
  blob_put(out, rank, path);
  for (std::uint32_t i = 0; i < rank; ++i) blob_put(out, dims[i], path);
}

struct BlobData {
  std::uint32_t rank = 0;
  std::uint64_t dims[2] = {0, 0};
  std::vector<float> payload;
};

BlobData blob_read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::io, "read_tensor: cannot open " + path.string());
  auto pull = [&](void* bytes, std::size_t count, const char* what) {
    in.read(static_cast<char*>(bytes), static_cast<std::streamsize>(count));
    if (in.gcount() != static_cast<std::streamsize>(count))
      raise(ErrorCode::format,
            "read_tensor: " + path.string() + " truncated while reading " + what);
  };
  char magic[4];
  pull(magic, 4, "magic");
  if (std::memcmp(magic, kBlobMagic, 4) != 0)
    raise(ErrorCode::format, "read_tensor: bad magic in " + path.string());
  std::uint32_t version = 0, dtype = 0;
  BlobData blob;
  pull(&version, sizeof version, "version");
  if (version != kBlobVersion)
    raise(ErrorCode::format, "read_tensor: unsupported version " + std::to_string(version) +
                                 " in " + path.string());
  pull(&dtype, sizeof dtype, "dtype");
  if (dtype != kDtypeF32)
    raise(ErrorCode::format,
          "read_tensor: unsupported dtype tag " + std::to_string(dtype) + " in " + path.string());
  pull(&blob.rank, sizeof blob.rank, "rank");
  if (blob.rank != 1 && blob.rank != 2)
    raise(ErrorCode::format,
          "read_tensor: unsupported rank " + std::to_string(blob.rank) + " in " + path.string());
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < blob.rank; ++i) {
    pull(&blob.dims[i], sizeof blob.dims[i], "shape");
    if (blob.dims[i] > (1ull << 40))
      raise(ErrorCode::format, "read_tensor: implausible dimension in " + path.string());
    count *= blob.dims[i];
  }
  blob.payload.resize(static_cast<std::size_t>(count));
  if (count > 0) pull(blob.payload.data(), blob.payload.size() * sizeof(float), "payload");
  if (in.peek() != std::char_traits<char>::eof())
    raise(ErrorCode::format, "read_tensor: trailing bytes in " + path.string());
  return blob;
}

// ---------------------------------------------------------------------------
// Manifest parsing
// ---------------------------------------------------------------------------

[[noreturn]] void manifest_fail(const std::filesystem::path& path, int line,
                                const std::string& message) {
  raise(ErrorCode::format,
        "load_manifest: " + path.string() + ":" + std::to_string(line) + ": " + message);
}

const json& field(const json& j, const char* key, const std::filesystem::path& path, int line) {
  auto it = j.find(key);
  if (it == j.end()) manifest_fail(path, line, std::string("missing field '") + key + "'");
  return *it;
}

std::string as_string(const json& j, const char* key, const std::filesystem::path& path,
                      int line) {
  const json& v = field(j, key, path, line);
  if (!v.is_string()) manifest_fail(path, line, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

double as_number(const json& j, const char* key, const std::filesystem::path& path, int line) {
  const json& v = field(j, key, path, line);
  if (!v.is_number()) manifest_fail(path, line, std::string("field '") + key + "' must be a number");
  double out = v.get<double>();
  if (!std::isfinite(out))
    manifest_fail(path, line, std::string("field '") + key + "' must be finite");
  return out;
}

std::string optional_string(const json& j, const char* key, const std::string& fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return it->is_string() ? it->get<std::string>() : fallback;
}

void check_choice(const std::string& value, std::initializer_list<const char*> allowed,
                  const char* what, const std::filesystem::path& path, int line) {
  for (const char* option : allowed)
    if (value == option) return;
  manifest_fail(path, line, std::string("invalid ") + what + " '" + value + "'");
}

std::string json_line_for(const EegRecord& r) {
  json j;
  j["kind"] = "eeg";
  j["subject"] = r.subject;
  j["trial"] = r.trial;
  j["split"] = r.split;
  j["protocol"] = r.protocol;
  j["path"] = r.path;
  j["rate"] = r.rate;
  j["channels"] = r.channels;
  return j.dump();
}

std::string json_line_for(const AudioRecord& r) {
  json j;
  j["kind"] = "audio";
  j["subject"] = r.subject;
  j["trial"] = r.trial;
  j["stream"] = r.stream;
  if (!r.sentence.empty()) j["sentence"] = r.sentence;
  j["path"] = r.path;
  j["rate"] = r.rate;
  return j.dump();
}

std::string json_line_for(const SentenceRecord& r) {
  json j;
  j["kind"] = "sentence";
  j["subject"] = r.subject;
  j["trial"] = r.trial;
  j["stream"] = r.stream;
  j["id"] = r.id;
  j["start_s"] = r.start_s;
  j["end_s"] = r.end_s;
  json tokens = json::array();
  for (const auto& tok : r.tokens) {
    json t;
    t["word"] = tok.text;
    t["start_s"] = tok.start_s;
    t["end_s"] = tok.end_s;
    tokens.push_back(std::move(t));
  }
  j["tokens"] = std::move(tokens);
  return j.dump();
}

std::string json_line_for(const BehaviorRecord& r) {
  json j;
  j["kind"] = "behavior";
  j["subject"] = r.subject;
  j["trial"] = r.trial;
  j["attended_ear"] = r.attended_ear;
  j["attended_score"] = r.attended_score;
  j["unattended_score"] = r.unattended_score;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Synthetic generation: schedules of tone-burst words on the 1/64 s frame grid
// ---------------------------------------------------------------------------

constexpr double kFrameRate = 64.0;
constexpr Eigen::Index kLeadFrames = 13;       // silence before the first sentence
constexpr Eigen::Index kTailFrames = 13;       // guaranteed silence at trial end
constexpr Eigen::Index kRampFrames = 2;        // raised-cosine edges inside each word
constexpr Eigen::Index kSentenceMarginFrames = 4;  // silent border inside the sentence span

struct WordBurst {
  int word = 0;            // codebook index
  Eigen::Index f0 = 0;     // [f0, f1) in 64 Hz frames, trial clock
  Eigen::Index f1 = 0;
  double amplitude = 1.0;
};

struct SentencePlan {
  Eigen::Index f0 = 0;  // sentence span including margins
  Eigen::Index f1 = 0;
  std::vector<WordBurst> words;
};

std::vector<SentencePlan> plan_stream(Rng& rng, Eigen::Index trial_frames, int vocabulary) {
  std::vector<SentencePlan> sentences;
  Eigen::Index cursor = kLeadFrames;
  while (true) {
    int n_words = static_cast<int>(rng.range(4, 7));
    std::vector<Eigen::Index> lengths, gaps;
    Eigen::Index body = 0;
    for (int w = 0; w < n_words; ++w) {
      lengths.push_back(rng.range(16, 28));
      body += lengths.back();
      if (w + 1 < n_words) {
        gaps.push_back(rng.range(3, 6));
        body += gaps.back();
      }
    }
    if (cursor + body + kSentenceMarginFrames + kTailFrames > trial_frames) break;
    SentencePlan plan;
    plan.f0 = cursor - kSentenceMarginFrames;
    Eigen::Index f = cursor;
    for (int w = 0; w < n_words; ++w) {
      WordBurst burst;
      burst.word = static_cast<int>(rng.below(static_cast<std::uint64_t>(vocabulary)));
      burst.amplitude = rng.uniform(0.5, 1.0);
      burst.f0 = f;
      burst.f1 = f + lengths[static_cast<std::size_t>(w)];
      f = burst.f1;
      if (w + 1 < n_words) f += gaps[static_cast<std::size_t>(w)];
      plan.words.push_back(burst);
    }
    plan.f1 = f + kSentenceMarginFrames;
    sentences.push_back(std::move(plan));
    cursor = f + static_cast<Eigen::Index>(rng.range(10, 16));
  }
  return sentences;
}

double burst_weight(double frames_in, double frames_total) {
  double edge = static_cast<double>(kRampFrames);
  if (frames_in < 0.0 || frames_in > frames_total) return 0.0;
  double w = 1.0;
  if (frames_in < edge) w = 0.5 - 0.5 * std::cos(M_PI * frames_in / edge);
  double from_end = frames_total - frames_in;
  if (from_end < edge) w = std::min(w, 0.5 - 0.5 * std::cos(M_PI * from_end / edge));
  return w;
}

// Amplitude profile of a stream sampled at `rate`; zero between words.
std::vector<double> render_profile(const std::vector<SentencePlan>& sentences,
                                   Eigen::Index trial_frames, double rate) {
  auto n = static_cast<std::size_t>(std::llround(trial_frames / kFrameRate * rate));
  std::vector<double> out(n, 0.0);
  for (const SentencePlan& sentence : sentences) {
    for (const WordBurst& burst : sentence.words) {
      auto s0 = static_cast<std::size_t>(std::llround(burst.f0 / kFrameRate * rate));
      auto s1 = static_cast<std::size_t>(std::llround(burst.f1 / kFrameRate * rate));
      double total = static_cast<double>(burst.f1 - burst.f0);
      for (std::size_t s = s0; s < s1 && s < n; ++s) {
        double frames_in = (static_cast<double>(s) / rate - burst.f0 / kFrameRate) * kFrameRate;
        out[s] = burst.amplitude * burst_weight(frames_in, total);
      }
    }
  }
  return out;
}

// Tone-burst waveform: the profile modulating a per-word carrier sinusoid.
std::vector<double> render_audio(const std::vector<SentencePlan>& sentences,
                                 Eigen::Index trial_frames, double rate) {
  auto n = static_cast<std::size_t>(std::llround(trial_frames / kFrameRate * rate));
  std::vector<double> out(n, 0.0);
  for (const SentencePlan& sentence : sentences) {
    for (const WordBurst& burst : sentence.words) {
      double freq = 220.0 * std::pow(2.0, (burst.word % 24) / 12.0);
      auto s0 = static_cast<std::size_t>(std::llround(burst.f0 / kFrameRate * rate));
      auto s1 = static_cast<std::size_t>(std::llround(burst.f1 / kFrameRate * rate));
      double total = static_cast<double>(burst.f1 - burst.f0);
      double t0 = burst.f0 / kFrameRate;
      for (std::size_t s = s0; s < s1 && s < n; ++s) {
        double t = static_cast<double>(s) / rate;
        double frames_in = (t - t0) * kFrameRate;
        out[s] = burst.amplitude * burst_weight(frames_in, total) *
                 std::sin(2.0 * M_PI * freq * (t - t0));
      }
    }
  }
  return out;
}

// Pink noise: white Gaussian spectrum shaped by 1/sqrt(f), unit-variance-ish;
// the caller rescales to the target SNR.
std::vector<double> render_pink_noise(Rng& rng, std::size_t n) {
  std::vector<std::complex<double>> spectrum(n);
  for (std::size_t i = 0; i < n; ++i) spectrum[i] = std::complex<double>(rng.normal(), 0.0);
  spectrum = fft::transform(spectrum, false);
  spectrum[0] = 0.0;
  for (std::size_t k = 1; k < n; ++k) {
    double bin = static_cast<double>(std::min(k, n - k));
    spectrum[k] /= std::sqrt(bin);
  }
  spectrum = fft::transform(spectrum, true);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = spectrum[i].real();
  return out;
}

double row_variance(const Eigen::RowVectorXd& row) {
  if (row.size() == 0) return 0.0;
  double mean = row.mean();
  return (row.array() - mean).square().sum() / static_cast<double>(row.size());
}

Montage make_synth_montage(int channels) {
  static const Region kOrder[5] = {Region::frontal, Region::central, Region::parietal,
                                   Region::temporal, Region::occipital};
  static const char kPrefix[5] = {'F', 'C', 'P', 'T', 'O'};
  Montage montage;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int c = 0; c < channels; ++c) {
    int slot = c % 5;
    montage.labels.push_back(std::string(1, kPrefix[slot]) + std::to_string(c / 5 + 1));
    montage.regions.push_back(kOrder[slot]);
    montage.mastoid_flags.push_back(false);
    double z = 1.0 - 2.0 * (c + 0.5) / channels;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = c * golden;
    montage.positions.push_back({r * std::cos(phi), r * std::sin(phi), z});
  }
  montage.require_valid("generate_synthetic montage");
  return montage;
}

std::string format_id(const char* prefix, int index) {
  char buffer[16];
  std::snprintf(buffer, sizeof buffer, "%s%02d", prefix, index);
  return buffer;
}

// Per-(subject, trial, stream) randomness stream ids; disjoint constants keep
// schedule and noise streams independent of each other and of global draws.
std::uint64_t schedule_stream(int subject, int trial, int stream) {
  return 0x100000ull + (static_cast<std::uint64_t>(subject) * 4096 + trial) * 4 + stream;
}
std::uint64_t noise_stream(int subject, int trial) {
  return 0x200000ull + static_cast<std::uint64_t>(subject) * 4096 + trial;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor blob API
// ---------------------------------------------------------------------------

void write_tensor(const std::filesystem::path& path, const Eigen::MatrixXd& matrix) {
  require_finite(matrix, "write_tensor");
  std::ofstream out = blob_open_out(path);
  std::uint64_t dims[2] = {static_cast<std::uint64_t>(matrix.rows()),
                           static_cast<std::uint64_t>(matrix.cols())};
  blob_header(out, 2, dims, path);
  std::vector<float> row(static_cast<std::size_t>(matrix.cols()));
  for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < matrix.cols(); ++c)
      row[static_cast<std::size_t>(c)] = static_cast<float>(matrix(r, c));
    if (!row.empty()) blob_write(out, row.data(), row.size() * sizeof(float), path);
  }
  out.flush();
  if (!out) raise(ErrorCode::io, "write_tensor: flush failed for " + path.string());
}

void write_tensor(const std::filesystem::path& path, const std::vector<double>& values) {
  require_finite(values, "write_tensor");
  std::ofstream out = blob_open_out(path);
  std::uint64_t dims[1] = {static_cast<std::uint64_t>(values.size())};
  blob_header(out, 1, dims, path);
  std::vector<float> payload(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) payload[i] = static_cast<float>(values[i]);
  if (!payload.empty()) blob_write(out, payload.data(), payload.size() * sizeof(float), path);
  out.flush();
  if (!out) raise(ErrorCode::io, "write_tensor: flush failed for " + path.string());
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  BlobData blob = blob_read(path);
  if (blob.rank != 2)
    raise(ErrorCode::format, "read_matrix: expected rank 2, got rank " +
                                 std::to_string(blob.rank) + " in " + path.string());
  Eigen::MatrixXd out(static_cast<Eigen::Index>(blob.dims[0]),
                      static_cast<Eigen::Index>(blob.dims[1]));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) = blob.payload[k++];
  return out;
}

std::vector<double> read_vector(const std::filesystem::path& path) {
  BlobData blob = blob_read(path);
  if (blob.rank != 1)
    raise(ErrorCode::format, "read_vector: expected rank 1, got rank " +
                                 std::to_string(blob.rank) + " in " + path.string());
  return std::vector<double>(blob.payload.begin(), blob.payload.end());
}

// ---------------------------------------------------------------------------
// Manifest API
// ---------------------------------------------------------------------------

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io, "load_manifest: cannot open " + path.string());
  Manifest manifest;
  manifest.root = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

  bool saw_meta = false;
  int meta_line = 0;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      manifest_fail(path, line, std::string("json parse error: ") + e.what());
    }
    if (!j.is_object()) manifest_fail(path, line, "record must be a json object");
    std::string kind = as_string(j, "kind", path, line);
    if (kind == "meta") {
      if (saw_meta)
        manifest_fail(path, line,
                      "duplicate meta record (first at line " + std::to_string(meta_line) + ")");
      saw_meta = true;
      meta_line = line;
      manifest.embeddings_path = optional_string(j, "embeddings", "");
      manifest.montage_path = optional_string(j, "montage", "");
      auto it = j.find("prereferenced");
      manifest.prereferenced = it != j.end() && it->is_boolean() && it->get<bool>();
    } else if (kind == "eeg") {
      EegRecord r;
      r.subject = as_string(j, "subject", path, line);
      r.trial = as_string(j, "trial", path, line);
      r.path = as_string(j, "path", path, line);
      r.rate = as_number(j, "rate", path, line);
      r.channels = static_cast<int>(as_number(j, "channels", path, line));
      r.split = optional_string(j, "split", "train");
      r.protocol = optional_string(j, "protocol", "natural");
      r.line = line;
      if (r.rate <= 0.0) manifest_fail(path, line, "eeg rate must be positive");
      if (r.channels <= 0) manifest_fail(path, line, "eeg channels must be positive");
      check_choice(r.split, {"train", "val", "test"}, "split", path, line);
      check_choice(r.protocol, {"natural", "dichotic"}, "protocol", path, line);
      manifest.eeg.push_back(std::move(r));
    } else if (kind == "audio") {
      AudioRecord r;
      r.subject = as_string(j, "subject", path, line);
      r.trial = as_string(j, "trial", path, line);
      r.path = as_string(j, "path", path, line);
      r.rate = as_number(j, "rate", path, line);
      r.stream = optional_string(j, "stream", "mono");
      r.sentence = optional_string(j, "sentence", "");
      r.line = line;
      if (r.rate <= 0.0) manifest_fail(path, line, "audio rate must be positive");
      check_choice(r.stream, {"mono", "left", "right"}, "stream", path, line);
      manifest.audio.push_back(std::move(r));
    } else if (kind == "sentence") {
      SentenceRecord r;
      r.subject = as_string(j, "subject", path, line);
      r.trial = as_string(j, "trial", path, line);
      r.id = as_string(j, "id", path, line);
      r.stream = optional_string(j, "stream", "mono");
      r.start_s = as_number(j, "start_s", path, line);
      r.end_s = as_number(j, "end_s", path, line);
      r.line = line;
      check_choice(r.stream, {"mono", "left", "right"}, "stream", path, line);
      if (r.start_s < 0.0 || r.end_s <= r.start_s)
        manifest_fail(path, line, "sentence span must satisfy 0 <= start_s < end_s");
      const json& tokens = field(j, "tokens", path, line);
      if (!tokens.is_array() || tokens.empty())
        manifest_fail(path, line, "sentence tokens must be a non-empty array");
      double previous_start = -1.0;
      for (const json& t : tokens) {
        if (!t.is_object()) manifest_fail(path, line, "token must be a json object");
        stimulus::WordToken token;
        token.text = as_string(t, "word", path, line);
        token.start_s = as_number(t, "start_s", path, line);
        token.end_s = as_number(t, "end_s", path, line);
        if (token.start_s >= token.end_s)
          manifest_fail(path, line, "token times must satisfy start_s < end_s");
        if (token.start_s < r.start_s - 1e-9 || token.end_s > r.end_s + 1e-9)
          manifest_fail(path, line, "token '" + token.text + "' falls outside the sentence span");
        if (token.start_s <= previous_start)
          manifest_fail(path, line, "tokens must be sorted by start time");
        previous_start = token.start_s;
        r.tokens.push_back(std::move(token));
      }
      manifest.sentences.push_back(std::move(r));
    } else if (kind == "behavior") {
      BehaviorRecord r;
      r.subject = as_string(j, "subject", path, line);
      r.trial = as_string(j, "trial", path, line);
      r.attended_ear = as_string(j, "attended_ear", path, line);
      r.attended_score = as_number(j, "attended_score", path, line);
      r.unattended_score = as_number(j, "unattended_score", path, line);
      r.line = line;
      check_choice(r.attended_ear, {"left", "right"}, "attended_ear", path, line);
      manifest.behavior.push_back(std::move(r));
    } else {
      manifest_fail(path, line, "unknown record kind '" + kind + "'");
    }
  }

  // Uniqueness per kind, reported with both line numbers.
  auto check_unique = [&](const auto& records, auto key_of, const char* kind) {
    std::map<decltype(key_of(records.front())), int> seen;
    for (const auto& r : records) {
      auto key = key_of(r);
      auto [it, inserted] = seen.emplace(key, r.line);
      if (!inserted)
        manifest_fail(path, r.line,
                      std::string("duplicate ") + kind + " record (first at line " +
                          std::to_string(it->second) + ")");
    }
  };
  if (!manifest.eeg.empty())
    check_unique(manifest.eeg,
                 [](const EegRecord& r) { return std::make_tuple(r.subject, r.trial); }, "eeg");
  if (!manifest.audio.empty())
    check_unique(
        manifest.audio,
        [](const AudioRecord& r) { return std::make_tuple(r.subject, r.trial, r.stream, r.sentence); },
        "audio");
  if (!manifest.sentences.empty())
    check_unique(
        manifest.sentences,
        [](const SentenceRecord& r) { return std::make_tuple(r.subject, r.trial, r.stream, r.id); },
        "sentence");
  if (!manifest.behavior.empty())
    check_unique(manifest.behavior,
                 [](const BehaviorRecord& r) { return std::make_tuple(r.subject, r.trial); },
                 "behavior");

  // Cross references: files exist, every dependent record names a known trial,
  // every sentence has audio to read its envelope from.
  auto require_file = [&](const std::string& rel, int line_no, const char* what) {
    if (!std::filesystem::exists(manifest.resolve(rel)))
      manifest_fail(path, line_no,
                    std::string("referenced ") + what + " file not found: " + rel);
  };
  std::map<std::pair<std::string, std::string>, int> trials;
  for (const EegRecord& r : manifest.eeg) {
    require_file(r.path, r.line, "eeg");
    trials.emplace(std::make_pair(r.subject, r.trial), r.line);
  }
  std::map<std::tuple<std::string, std::string, std::string, std::string>, int> audio_keys;
  for (const AudioRecord& r : manifest.audio) {
    require_file(r.path, r.line, "audio");
    if (!trials.count({r.subject, r.trial}))
      manifest_fail(path, r.line,
                    "audio record references unknown trial " + r.subject + "/" + r.trial);
    audio_keys.emplace(std::make_tuple(r.subject, r.trial, r.stream, r.sentence), r.line);
  }
  for (const SentenceRecord& r : manifest.sentences) {
    if (!trials.count({r.subject, r.trial}))
      manifest_fail(path, r.line,
                    "sentence record references unknown trial " + r.subject + "/" + r.trial);
    bool per_sentence = audio_keys.count(std::make_tuple(r.subject, r.trial, r.stream, r.id)) > 0;
    bool per_stream =
        audio_keys.count(std::make_tuple(r.subject, r.trial, r.stream, std::string())) > 0;
    if (!per_sentence && !per_stream)
      manifest_fail(path, r.line,
                    "sentence " + r.id + " has no audio record for stream '" + r.stream + "'");
  }
  for (const BehaviorRecord& r : manifest.behavior)
    if (!trials.count({r.subject, r.trial}))
      manifest_fail(path, r.line,
                    "behavior record references unknown trial " + r.subject + "/" + r.trial);
  if (!manifest.embeddings_path.empty())
    require_file(manifest.embeddings_path, meta_line, "embeddings");
  if (!manifest.montage_path.empty()) require_file(manifest.montage_path, meta_line, "montage");

  // Canonical order: loading is invariant under permutation of manifest lines.
  std::sort(manifest.eeg.begin(), manifest.eeg.end(), [](const EegRecord& a, const EegRecord& b) {
    return std::tie(a.subject, a.trial) < std::tie(b.subject, b.trial);
  });
  std::sort(manifest.audio.begin(), manifest.audio.end(),
            [](const AudioRecord& a, const AudioRecord& b) {
              return std::tie(a.subject, a.trial, a.stream, a.sentence) <
                     std::tie(b.subject, b.trial, b.stream, b.sentence);
            });
  std::sort(manifest.sentences.begin(), manifest.sentences.end(),
            [](const SentenceRecord& a, const SentenceRecord& b) {
              return std::tie(a.subject, a.trial, a.stream, a.start_s, a.id) <
                     std::tie(b.subject, b.trial, b.stream, b.start_s, b.id);
            });
  std::sort(manifest.behavior.begin(), manifest.behavior.end(),
            [](const BehaviorRecord& a, const BehaviorRecord& b) {
              return std::tie(a.subject, a.trial) < std::tie(b.subject, b.trial);
            });
  return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) raise(ErrorCode::io, "save_manifest: cannot open " + path.string());

  json meta;
  meta["kind"] = "meta";
  if (!manifest.embeddings_path.empty()) meta["embeddings"] = manifest.embeddings_path;
  if (!manifest.montage_path.empty()) meta["montage"] = manifest.montage_path;
  meta["prereferenced"] = manifest.prereferenced;
  out << meta.dump() << "\n";

  Manifest sorted = manifest;  // canonical order regardless of caller's order
  std::sort(sorted.eeg.begin(), sorted.eeg.end(), [](const EegRecord& a, const EegRecord& b) {
    return std::tie(a.subject, a.trial) < std::tie(b.subject, b.trial);
  });
  std::sort(sorted.audio.begin(), sorted.audio.end(),
            [](const AudioRecord& a, const AudioRecord& b) {
              return std::tie(a.subject, a.trial, a.stream, a.sentence) <
                     std::tie(b.subject, b.trial, b.stream, b.sentence);
            });
  std::sort(sorted.sentences.begin(), sorted.sentences.end(),
            [](const SentenceRecord& a, const SentenceRecord& b) {
              return std::tie(a.subject, a.trial, a.stream, a.start_s, a.id) <
                     std::tie(b.subject, b.trial, b.stream, b.start_s, b.id);
            });
  std::sort(sorted.behavior.begin(), sorted.behavior.end(),
            [](const BehaviorRecord& a, const BehaviorRecord& b) {
              return std::tie(a.subject, a.trial) < std::tie(b.subject, b.trial);
            });
  for (const auto& r : sorted.eeg) out << json_line_for(r) << "\n";
  for (const auto& r : sorted.audio) out << json_line_for(r) << "\n";
  for (const auto& r : sorted.sentences) out << json_line_for(r) << "\n";
  for (const auto& r : sorted.behavior) out << json_line_for(r) << "\n";
  out.flush();
  if (!out) raise(ErrorCode::io, "save_manifest: write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  if (n_subjects < 1) raise(ErrorCode::invalid_argument, "SynthConfig: n_subjects must be >= 1");
  if (n_trials < 1) raise(ErrorCode::invalid_argument, "SynthConfig: n_trials must be >= 1");
  if (n_subjects > 4000 || n_trials > 4000)
    raise(ErrorCode::invalid_argument, "SynthConfig: subject/trial counts out of range");
  if (channels < 5)
    raise(ErrorCode::invalid_argument,
          "SynthConfig: channels must be >= 5 (one per scalp region)");
  if (trial_seconds < 2.0)
    raise(ErrorCode::invalid_argument, "SynthConfig: trial_seconds must be >= 2");
  double frames = trial_seconds * kFrameRate;
  if (std::abs(frames - std::round(frames)) > 1e-9)
    raise(ErrorCode::invalid_argument,
          "SynthConfig: trial_seconds must be a multiple of 1/64 s");
  if (eeg_rate != 512.0)
    raise(ErrorCode::invalid_argument, "SynthConfig: eeg_rate must be 512 Hz");
  if (audio_rate != 16000.0 && audio_rate != 48000.0)
    raise(ErrorCode::invalid_argument, "SynthConfig: audio_rate must be 16 or 48 kHz");
  if (delay_ms < 0.0 || !std::isfinite(delay_ms))
    raise(ErrorCode::invalid_argument, "SynthConfig: delay_ms must be finite and >= 0");
  if (!std::isfinite(acoustic_gain) || !std::isfinite(semantic_gain))
    raise(ErrorCode::invalid_argument, "SynthConfig: gains must be finite");
  if (noise_enabled && !std::isfinite(snr_db))
    raise(ErrorCode::invalid_argument,
          "SynthConfig: snr_db must be finite (set noise_enabled=false to disable noise)");
  if (vocabulary < 2 || vocabulary > 960)
    raise(ErrorCode::invalid_argument, "SynthConfig: vocabulary must be in [2, 960]");
}

Manifest generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  fs::create_directories(out_dir / "eeg");
  fs::create_directories(out_dir / "audio");
  fs::create_directories(out_dir / "truth");

  const auto trial_frames = static_cast<Eigen::Index>(std::llround(config.trial_seconds * kFrameRate));
  const auto n512 = static_cast<Eigen::Index>(trial_frames * std::llround(config.eeg_rate / kFrameRate));
  const bool dichotic = config.protocol == Protocol::dichotic;
  const int embed_dim = 300;

  // Fixed random codebook of word vectors, expected unit norm.
  Rng codebook_rng(Rng::derive(config.seed, 1));
  stimulus::EmbeddingTable table(embed_dim);
  Eigen::MatrixXd codebook(config.vocabulary, embed_dim);
  for (int w = 0; w < config.vocabulary; ++w) {
    Eigen::VectorXd v(embed_dim);
    for (int d = 0; d < embed_dim; ++d) v[d] = codebook_rng.normal() / std::sqrt(embed_dim);
    codebook.row(w) = v.transpose();
    table.insert(format_id("w0", w), v);
  }
  stimulus::save_embeddings(table, out_dir / "embeddings.bin");

  Montage montage = make_synth_montage(config.channels);
  save_montage(montage, out_dir / "montage.txt");

  // Channel mixing of the envelope and the shared embedding projection.
  Rng mixing_rng(Rng::derive(config.seed, 2));
  Eigen::VectorXd mix(config.channels);
  for (int c = 0; c < config.channels; ++c)
    mix[c] = config.identity_mixing ? 1.0 : mixing_rng.uniform(0.5, 1.5);
  Rng projection_rng(Rng::derive(config.seed, 3));
  Eigen::MatrixXd projection(config.channels, embed_dim);
  for (int c = 0; c < config.channels; ++c)
    for (int d = 0; d < embed_dim; ++d)
      projection(c, d) = projection_rng.normal() / std::sqrt(embed_dim);
  // channel x vocabulary response of each channel to each word's vector
  Eigen::MatrixXd word_response = projection * codebook.transpose();

  // Identity-free word-onset response: an obligatory early component evoked
  // by every word in either ear regardless of attention. Scaled like one
  // word_response column so the two word-level components are comparable.
  Rng onset_rng(Rng::derive(config.seed, 4));
  Eigen::VectorXd onset_response(config.channels);
  for (int c = 0; c < config.channels; ++c)
    onset_response[c] = onset_rng.normal() / std::sqrt(embed_dim);

  const auto delay512 =
      static_cast<Eigen::Index>(std::llround(config.delay_ms / 1000.0 * config.eeg_rate));

  Manifest manifest;
  manifest.root = out_dir;
  manifest.embeddings_path = "embeddings.bin";
  manifest.montage_path = "montage.txt";
  manifest.prereferenced = true;  // no mastoid channels are synthesized

  std::vector<std::string> streams =
      dichotic ? std::vector<std::string>{"left", "right"} : std::vector<std::string>{"mono"};

  for (int s = 0; s < config.n_subjects; ++s) {
    std::string subject = format_id("s", s);
    for (int t = 0; t < config.n_trials; ++t) {
      std::string trial = format_id("t", t);
      std::string attended = (s + t) % 2 == 0 ? "left" : "right";

      Eigen::MatrixXd clean = Eigen::MatrixXd::Zero(config.channels, n512);
      Eigen::MatrixXd semantic = Eigen::MatrixXd::Zero(config.channels, n512);
      std::vector<std::vector<SentencePlan>> plans;

      for (std::size_t e = 0; e < streams.size(); ++e) {
        Rng schedule_rng(Rng::derive(config.seed, schedule_stream(s, t, static_cast<int>(e))));
        std::vector<SentencePlan> plan;
        if (dichotic && e == 1) {
          // Competing streams share the sentence/word rhythm and differ only
          // in content: both ears hear a word in the same slot, so the pair
          // is decided by what was said, not by when.
          plan = plans[0];
          for (SentencePlan& sentence : plan)
            for (WordBurst& burst : sentence.words) {
              burst.word = static_cast<int>(
                  schedule_rng.below(static_cast<std::uint64_t>(config.vocabulary)));
              burst.amplitude = schedule_rng.uniform(0.5, 1.0);
            }
        } else {
          plan = plan_stream(schedule_rng, trial_frames, config.vocabulary);
        }
        if (plan.empty())
          raise(ErrorCode::invalid_argument,
                "generate_synthetic: trial too short to fit one sentence");

        // Attention gates the two processing stages very differently: early
        // acoustic encoding keeps a near-full trace of both ears, while the
        // unattended stream's word-level responses are almost fully suppressed.
        bool attended_stream = !dichotic || streams[e] == attended;
        double acoustic_stream_gain = attended_stream ? 1.0 : 0.85;
        double semantic_stream_gain = attended_stream ? 1.0 : 0.1;
        std::vector<double> envelope512 = render_profile(plan, trial_frames, config.eeg_rate);

        for (Eigen::Index n = 0; n < n512; ++n) {
          double env = n >= delay512 ? envelope512[static_cast<std::size_t>(n - delay512)] : 0.0;
          if (env != 0.0)
            clean.col(n) += (config.acoustic_gain * acoustic_stream_gain * env) * mix;
        }
        for (const SentencePlan& sentence : plan)
          for (const WordBurst& burst : sentence.words)
            for (Eigen::Index n = burst.f0 * 8; n < burst.f1 * 8 && n < n512; ++n)
              semantic.col(n) +=
                  (config.semantic_gain * semantic_stream_gain) * word_response.col(burst.word) +
                  (config.semantic_gain * burst.amplitude) * onset_response;

        write_tensor(out_dir / "truth" / ("env_" + subject + "_" + trial + "_" + streams[e] + ".nmtb"),
                     envelope512);
        plans.push_back(std::move(plan));
      }

      // Word-level responses are slow evoked potentials, not gated rectangles:
      // smear them with a ~300 ms exponential kernel so each response rises
      // over the word and decays into its successor.
      if (config.semantic_gain != 0.0) {
        const double smear = 1.0 - std::exp(-1.0 / (0.3 * config.eeg_rate));
        Eigen::VectorXd state = Eigen::VectorXd::Zero(config.channels);
        for (Eigen::Index n = 0; n < n512; ++n) {
          state += smear * (semantic.col(n) - state);
          semantic.col(n) = state;
        }
      }
      clean += semantic;

      Eigen::MatrixXd eeg = clean;
      if (config.noise_enabled) {
        Rng nrng(Rng::derive(config.seed, noise_stream(s, t)));
        double snr_linear = std::pow(10.0, config.snr_db / 10.0);
        for (int c = 0; c < config.channels; ++c) {
          std::vector<double> pink = render_pink_noise(nrng, static_cast<std::size_t>(n512));
          double noise_var = 0.0, mean = 0.0;
          for (double v : pink) mean += v;
          mean /= static_cast<double>(pink.size());
          for (double v : pink) noise_var += (v - mean) * (v - mean);
          noise_var /= static_cast<double>(pink.size());
          double clean_var = row_variance(clean.row(c));
          double target_var = clean_var > 1e-30 ? clean_var / snr_linear : 1.0;
          double scale = noise_var > 0.0 ? std::sqrt(target_var / noise_var) : 0.0;
          for (Eigen::Index n = 0; n < n512; ++n)
            eeg(c, n) += scale * (pink[static_cast<std::size_t>(n)] - mean);
        }
      }

      std::string eeg_rel = "eeg/" + subject + "_" + trial + ".nmtb";
      write_tensor(out_dir / eeg_rel, eeg);
      EegRecord eeg_rec;
      eeg_rec.subject = subject;
      eeg_rec.trial = trial;
      eeg_rec.path = eeg_rel;
      eeg_rec.rate = config.eeg_rate;
      eeg_rec.channels = config.channels;
      eeg_rec.protocol = dichotic ? "dichotic" : "natural";
      manifest.eeg.push_back(std::move(eeg_rec));

      for (std::size_t e = 0; e < streams.size(); ++e) {
        const std::vector<SentencePlan>& plan = plans[e];
        std::vector<double> audio = render_audio(plan, trial_frames, config.audio_rate);
        const auto samples_per_frame =
            static_cast<Eigen::Index>(std::llround(config.audio_rate / kFrameRate));

        if (dichotic) {
          std::string rel = "audio/" + subject + "_" + trial + "_" + streams[e] + ".nmtb";
          write_tensor(out_dir / rel, audio);
          AudioRecord a;
          a.subject = subject;
          a.trial = trial;
          a.stream = streams[e];
          a.path = rel;
          a.rate = config.audio_rate;
          manifest.audio.push_back(std::move(a));
        }

        for (std::size_t i = 0; i < plan.size(); ++i) {
          const SentencePlan& sentence = plan[i];
          std::string sid = format_id("sent", static_cast<int>(i));
          if (!dichotic) {
            std::string rel = "audio/" + subject + "_" + trial + "_" + sid + ".nmtb";
            std::vector<double> slice(
                audio.begin() + static_cast<std::ptrdiff_t>(sentence.f0 * samples_per_frame),
                audio.begin() + static_cast<std::ptrdiff_t>(sentence.f1 * samples_per_frame));
            write_tensor(out_dir / rel, slice);
            AudioRecord a;
            a.subject = subject;
            a.trial = trial;
            a.stream = streams[e];
            a.sentence = sid;
            a.path = rel;
            a.rate = config.audio_rate;
            manifest.audio.push_back(std::move(a));
          }
          SentenceRecord sr;
          sr.subject = subject;
          sr.trial = trial;
          sr.stream = streams[e];
          sr.id = sid;
          sr.start_s = sentence.f0 / kFrameRate;
          sr.end_s = sentence.f1 / kFrameRate;
          for (const WordBurst& burst : sentence.words) {
            stimulus::WordToken token;
            token.text = format_id("w0", burst.word);
            token.start_s = burst.f0 / kFrameRate;
            token.end_s = burst.f1 / kFrameRate;
            sr.tokens.push_back(std::move(token));
          }
          manifest.sentences.push_back(std::move(sr));
        }
      }

      if (dichotic) {
        BehaviorRecord b;
        b.subject = subject;
        b.trial = trial;
        b.attended_ear = attended;
        b.attended_score = 0.8;
        b.unattended_score = 0.2;
        manifest.behavior.push_back(std::move(b));
      }
    }
  }

  save_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset dataset;
  dataset.manifest = load_manifest(manifest_path);
  const Manifest& m = dataset.manifest;
  if (!m.eeg.empty()) {
    if (m.montage_path.empty())
      raise(ErrorCode::invalid_argument,
            "load_dataset: manifest has no montage record (meta.montage)");
    dataset.montage = load_montage(m.resolve(m.montage_path));
  }
  if (!m.sentences.empty()) {
    if (m.embeddings_path.empty())
      raise(ErrorCode::invalid_argument,
            "load_dataset: manifest has no embedding table (meta.embeddings)");
    dataset.embeddings = stimulus::load_embeddings(m.resolve(m.embeddings_path));
  }

  std::map<std::tuple<std::string, std::string, std::string, std::string>, const AudioRecord*>
      audio_by_key;
  for (const AudioRecord& a : m.audio)
    audio_by_key[{a.subject, a.trial, a.stream, a.sentence}] = &a;
  std::map<std::pair<std::string, std::string>, const BehaviorRecord*> behavior_by_trial;
  for (const BehaviorRecord& b : m.behavior) behavior_by_trial[{b.subject, b.trial}] = &b;
  std::map<std::pair<std::string, std::string>, std::vector<const SentenceRecord*>>
      sentences_by_trial;
  for (const SentenceRecord& s : m.sentences)
    sentences_by_trial[{s.subject, s.trial}].push_back(&s);

  auto load_envelope = [&](const AudioRecord& a) {
    std::vector<double> samples = read_vector(m.resolve(a.path));
    if (a.rate == kFrameRate) return samples;  // precomputed envelope
    return stimulus::compute_envelope(samples, a.rate);
  };

  for (const EegRecord& rec : m.eeg) {
    TrialData trial;
    trial.subject = rec.subject;
    trial.trial = rec.trial;
    trial.split = rec.split;
    trial.protocol = rec.protocol;
    trial.eeg = read_matrix(m.resolve(rec.path));
    trial.eeg_rate = rec.rate;
    if (trial.eeg.rows() != rec.channels)
      raise(ErrorCode::pipeline, "load_dataset: " + rec.path + " has " +
                                     std::to_string(trial.eeg.rows()) + " channels, manifest says " +
                                     std::to_string(rec.channels));
    if (trial.eeg.rows() != dataset.montage.channels())
      raise(ErrorCode::pipeline,
            "load_dataset: trial " + rec.subject + "/" + rec.trial + " channel count " +
                std::to_string(trial.eeg.rows()) + " does not match the montage (" +
                std::to_string(dataset.montage.channels()) + ")");
    double frames_per_64 = rec.rate / kFrameRate;
    if (std::abs(frames_per_64 - std::round(frames_per_64)) > 1e-9 || frames_per_64 < 1.0)
      raise(ErrorCode::pipeline,
            "load_dataset: eeg rate " + std::to_string(rec.rate) + " is not a multiple of 64 Hz");

    if (const auto it = behavior_by_trial.find({rec.subject, rec.trial});
        it != behavior_by_trial.end()) {
      trial.attended_ear = it->second->attended_ear;
      trial.attended_score = it->second->attended_score;
      trial.unattended_score = it->second->unattended_score;
    }

    std::map<std::string, std::vector<double>> stream_envelope;  // whole-trial envelopes
    auto sentences_it = sentences_by_trial.find({rec.subject, rec.trial});
    if (sentences_it != sentences_by_trial.end()) {
      for (const SentenceRecord* sr : sentences_it->second) {
        auto f0 = static_cast<Eigen::Index>(std::llround(sr->start_s * kFrameRate));
        auto f1 = static_cast<Eigen::Index>(std::llround(sr->end_s * kFrameRate));
        if (std::abs(f0 / kFrameRate - sr->start_s) > 1e-9 ||
            std::abs(f1 / kFrameRate - sr->end_s) > 1e-9)
          raise(ErrorCode::alignment, "load_dataset: sentence " + sr->id + " of " + rec.subject +
                                          "/" + rec.trial + " is not on the 1/64 s grid");
        auto eeg_end = static_cast<Eigen::Index>(f1 * std::llround(frames_per_64));
        if (eeg_end > trial.eeg.cols())
          raise(ErrorCode::alignment, "load_dataset: sentence " + sr->id + " of " + rec.subject +
                                          "/" + rec.trial + " extends past the recorded eeg");

        std::vector<double> envelope;
        auto per_sentence =
            audio_by_key.find({sr->subject, sr->trial, sr->stream, sr->id});
        if (per_sentence != audio_by_key.end()) {
          envelope = load_envelope(*per_sentence->second);
        } else {
          auto per_stream = audio_by_key.find({sr->subject, sr->trial, sr->stream, ""});
          if (per_stream == audio_by_key.end())
            raise(ErrorCode::pipeline, "load_dataset: sentence " + sr->id +
                                           " has no audio record for stream " + sr->stream);
          auto cached = stream_envelope.find(sr->stream);
          if (cached == stream_envelope.end())
            cached = stream_envelope.emplace(sr->stream, load_envelope(*per_stream->second)).first;
          if (f1 > static_cast<Eigen::Index>(cached->second.size()))
            raise(ErrorCode::alignment, "load_dataset: sentence " + sr->id +
                                            " extends past the stream envelope of " + sr->stream);
          envelope.assign(cached->second.begin() + f0, cached->second.begin() + f1);
        }
        if (static_cast<Eigen::Index>(envelope.size()) != f1 - f0)
          raise(ErrorCode::alignment,
                "load_dataset: sentence " + sr->id + " envelope has " +
                    std::to_string(envelope.size()) + " frames, span expects " +
                    std::to_string(f1 - f0));

        SentenceData sd;
        sd.id = sr->id;
        sd.stream = sr->stream;
        sd.start_s = sr->start_s;
        sd.end_s = sr->end_s;
        sd.stimulus.sentence_id = sr->subject + "/" + sr->trial + "/" + sr->stream + "/" + sr->id;
        sd.stimulus.envelope = std::move(envelope);
        for (const stimulus::WordToken& tok : sr->tokens) {
          stimulus::WordToken shifted = tok;
          shifted.start_s -= sr->start_s;
          shifted.end_s -= sr->start_s;
          sd.stimulus.tokens.push_back(std::move(shifted));
        }
        stimulus::EmbedResult embedded = stimulus::embed_words(sd.stimulus.tokens, dataset.embeddings);
        sd.stimulus.embeddings = std::move(embedded.rows);
        sd.stimulus.oov = std::move(embedded.oov);
        trial.sentences.push_back(std::move(sd));
      }
      std::sort(trial.sentences.begin(), trial.sentences.end(),
                [](const SentenceData& a, const SentenceData& b) {
                  return std::tie(a.stream, a.start_s, a.id) < std::tie(b.stream, b.start_s, b.id);
                });
    }
    dataset.trials.push_back(std::move(trial));
  }
  return dataset;
}

}  // namespace neuromatch::data
