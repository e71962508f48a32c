#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "neuromatch/rng.hpp"
#include "neuromatch/stimulus_features.hpp"

using namespace neuromatch;
using namespace neuromatch::stimulus;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) { ma += a[i]; mb += b[i]; }
  ma /= n; mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

EmbeddingTable tiny_table() {
  EmbeddingTable table(4);
  Rng rng(40);
  for (const char* word : {"the", "dog", "barks", "loud"}) {
    Eigen::VectorXd v(4);
    for (int d = 0; d < 4; ++d) v(d) = rng.uniform(-1, 1);
    table.insert(word, v);
  }
  return table;
}

}  // namespace

TEST_CASE("envelope of a unit tone is one at 64 Hz") {
  const double rate = 16000.0;
  std::vector<double> audio(static_cast<std::size_t>(rate));
  for (std::size_t i = 0; i < audio.size(); ++i)
    audio[i] = std::sin(2.0 * M_PI * 400.0 * static_cast<double>(i) / rate);
  auto env = compute_envelope(audio, rate);
  CHECK(env.size() == 64);
  for (std::size_t i = 6; i < env.size() - 6; ++i)
    CHECK(env[i] == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("envelope of silence is zero and never negative") {
  std::vector<double> silence(16000, 0.0);
  auto env = compute_envelope(silence, 16000.0);
  for (double v : env) {
    CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(v >= 0.0);
  }
}

TEST_CASE("envelope tracks a 2 Hz amplitude modulator") {
  const double rate = 48000.0;
  const std::size_t n = static_cast<std::size_t>(3.0 * rate);
  std::vector<double> audio(n);
  std::vector<double> modulator_64(3 * 64);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    audio[i] = (1.0 + 0.5 * std::sin(2.0 * M_PI * 2.0 * t)) *
               std::sin(2.0 * M_PI * 440.0 * t);
  }
  for (std::size_t i = 0; i < modulator_64.size(); ++i) {
    const double t = static_cast<double>(i) / 64.0;
    modulator_64[i] = 1.0 + 0.5 * std::sin(2.0 * M_PI * 2.0 * t);
  }
  auto env = compute_envelope(audio, rate);
  REQUIRE(env.size() == modulator_64.size());
  CHECK(pearson(env, modulator_64) > 0.98);
}

TEST_CASE("envelope rejects unsupported rates and empty audio") {
  std::vector<double> audio(1000, 0.5);
  CHECK_THROWS_AS(compute_envelope(audio, 44100.0), Error);
  CHECK_THROWS_AS(compute_envelope({}, 16000.0), Error);
}

TEST_CASE("embedding lookup is exact, normalized, and flags oov") {
  auto table = tiny_table();
  std::vector<WordToken> tokens = {
      {"The", 0.0, 0.3}, {"DOG", 0.3, 0.6}, {"barks!", 0.6, 0.9}, {"zyzzyva", 0.9, 1.2},
      {"dog", 1.2, 1.5}};
  auto result = embed_words(tokens, table);
  REQUIRE(result.rows.rows() == 5);
  CHECK(result.rows.row(0) == table.lookup("the")->transpose());
  CHECK(result.rows.row(1) == table.lookup("dog")->transpose());
  CHECK(result.rows.row(2) == table.lookup("barks")->transpose());
  CHECK(result.oov == std::vector<bool>{false, false, false, true, false});
  CHECK(result.rows.row(3).cwiseAbs().maxCoeff() == 0.0);
  CHECK(result.rows.row(4) == result.rows.row(1));  // repeated word, identical row
}

TEST_CASE("embedding table round-trips through its binary format") {
  const auto dir = std::filesystem::temp_directory_path() / "nm_embed_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "table.bin";
  auto table = tiny_table();
  save_embeddings(table, path);
  auto loaded = load_embeddings(path);
  CHECK(loaded.size() == table.size());
  CHECK(loaded.dim() == 4);
  for (const auto& [word, vec] : table.entries()) {
    REQUIRE(loaded.lookup(word) != nullptr);
    // float32 storage: exact for values that fit a float
    for (int d = 0; d < 4; ++d)
      CHECK((*loaded.lookup(word))(d) == doctest::Approx(vec(d)).epsilon(1e-7));
  }

  SUBCASE("truncated file is a format error") {
    const auto bad = dir / "trunc.bin";
    std::ofstream out(bad, std::ios::binary);
    out << "2 4\n" << "the ";
    out.write("\x00\x00\x80?", 4);  // only one float of four
    out.close();
    CHECK_THROWS_AS(load_embeddings(bad), Error);
  }
}

TEST_CASE("shipped mini vocabulary loads") {
  auto path = std::filesystem::path(NEUROMATCH_SOURCE_DIR) / "data/embeddings_mini.bin";
  auto table = load_embeddings(path);
  CHECK(table.dim() == 300);
  CHECK(table.size() >= 50);
  CHECK(table.lookup("the") != nullptr);
  CHECK(table.lookup("speech") != nullptr);
}

TEST_CASE("word boundaries map onto the 64/3 Hz grid") {
  std::vector<WordToken> tokens = {{"w", 0.75, 1.5}};
  auto windows = boundaries_to_frames(tokens, 64);
  REQUIRE(windows.size() == 1);
  CHECK(windows[0].first == 16);
  CHECK(windows[0].second == 32);
}

TEST_CASE("adjacent words land on adjacent windows") {
  std::vector<WordToken> tokens = {{"a", 0.0, 0.3}, {"b", 0.3, 0.6}};
  auto windows = boundaries_to_frames(tokens, 12);
  CHECK(windows[0] == FrameWindow{0, 6});
  CHECK(windows[1] == FrameWindow{6, 12});
}

TEST_CASE("sub-frame words still get one frame") {
  std::vector<WordToken> tokens = {{"a", 0.0, 0.01}, {"b", 0.01, 0.02}};
  auto windows = boundaries_to_frames(tokens, 8);
  CHECK(windows[0] == FrameWindow{0, 1});
  CHECK(windows[1] == FrameWindow{1, 2});  // clamped after the widened first window
}

TEST_CASE("window past the sequence end is an alignment error naming the token") {
  std::vector<WordToken> tokens = {{"a", 0.0, 0.3}, {"tail", 0.3, 10.0}};
  try {
    boundaries_to_frames(tokens, 12);
    FAIL("expected alignment error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::alignment);
    CHECK(std::string(e.what()).find("token 1") != std::string::npos);
  }
}

TEST_CASE("windows are monotone and disjoint on random valid token lists") {
  Rng rng(77);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<WordToken> tokens;
    double t = 0.0;
    const int n = static_cast<int>(rng.below(12)) + 1;
    for (int i = 0; i < n; ++i) {
      const double len = rng.uniform(0.02, 0.8);
      tokens.push_back({"w" + std::to_string(i), t, t + len});
      t += len + (rng.below(2) ? rng.uniform(0.0, 0.2) : 0.0);
    }
    const auto frames = static_cast<Eigen::Index>(std::ceil(t * 64.0 / 3.0)) + 2;
    auto windows = boundaries_to_frames(tokens, frames);
    Eigen::Index prev_end = 0;
    for (const auto& [start, end] : windows) {
      CHECK(start >= prev_end);
      CHECK(end > start);
      CHECK(end <= frames);
      prev_end = end;
    }
  }
}
