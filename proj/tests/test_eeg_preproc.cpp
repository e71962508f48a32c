#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "neuromatch/eeg_preproc.hpp"
#include "neuromatch/montage.hpp"
#include "neuromatch/rng.hpp"

using namespace neuromatch;
using namespace neuromatch::preproc;

namespace {

// Ten electrodes: eight spread over the upper hemisphere plus two mastoids.
Montage test_montage() {
  Montage m;
  auto add = [&](std::string label, double theta_deg, double az_deg, Region region,
                 bool mastoid) {
    const double t = theta_deg * M_PI / 180.0, a = az_deg * M_PI / 180.0;
    m.labels.push_back(std::move(label));
    m.positions.push_back({std::sin(t) * std::sin(a), std::sin(t) * std::cos(a), std::cos(t)});
    m.regions.push_back(region);
    m.mastoid_flags.push_back(mastoid);
  };
  add("Fz", 40, 0, Region::frontal, false);
  add("Cz", 0, 0, Region::central, false);
  add("Pz", 40, 180, Region::parietal, false);
  add("Oz", 75, 180, Region::occipital, false);
  add("C3", 45, -90, Region::central, false);
  add("C4", 45, 90, Region::central, false);
  add("F7", 72, -54, Region::frontal, false);
  add("F8", 72, 54, Region::frontal, false);
  add("M1", 110, -115, Region::temporal, true);
  add("M2", 110, 115, Region::temporal, true);
  return m;
}

TimeSeries make_series(Eigen::Index channels, Eigen::Index frames, double rate, uint64_t seed) {
  TimeSeries ts;
  ts.rate = rate;
  ts.samples.resize(channels, frames);
  Rng rng(seed);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (Eigen::Index f = 0; f < frames; ++f) ts.samples(c, f) = rng.normal();
  return ts;
}

}  // namespace

TEST_CASE("variance outliers follow the median-multiplier rule") {
  CHECK(variance_outliers({1, 1, 1, 100}, 5) == std::vector<Eigen::Index>{3});
  CHECK(variance_outliers({2, 2, 2, 2, 2}, 1.5).empty());
  CHECK(variance_outliers({1, 1, 4, 1}, 5).empty());
}

TEST_CASE("reject_channels flags the loud channel and errors on corrupt data") {
  auto ts = make_series(8, 512, 64.0, 21);
  ts.samples.row(3) *= 10.0;  // variance x100
  RejectPolicy policy;
  auto [bad, report] = reject_channels(ts, policy);
  CHECK(bad == std::vector<Eigen::Index>{3});
  CHECK(report.channel_variance.size() == 8);
  CHECK(report.channel_variance[3] > 50.0 * report.channel_variance[0]);

  auto corrupt = make_series(8, 512, 64.0, 22);
  for (Eigen::Index c : {1, 4, 6}) corrupt.samples.row(c) *= 10.0;
  CHECK_THROWS_AS(reject_channels(corrupt, policy), Error);

  auto tiny = make_series(4, 128, 64.0, 23);
  CHECK_THROWS_AS(reject_channels(tiny, policy), Error);
}

TEST_CASE("interpolation reproduces a field shared by all good channels") {
  auto montage = test_montage();
  TimeSeries ts;
  ts.rate = 64.0;
  ts.samples.resize(10, 100);
  Rng rng(7);
  Eigen::RowVectorXd shared(100);
  for (Eigen::Index f = 0; f < 100; ++f) shared(f) = rng.uniform(-2, 2);
  for (Eigen::Index c = 0; c < 10; ++c) ts.samples.row(c) = shared;
  ts.samples.row(1).setConstant(1000.0);  // Cz trashed; it sits between C3 and C4

  auto out = interpolate_channels(ts, {1}, montage);
  for (Eigen::Index f = 0; f < 100; ++f)
    CHECK(out.samples(1, f) == doctest::Approx(shared(f)).epsilon(1e-6));
  for (Eigen::Index c = 0; c < 10; ++c) {
    if (c == 1) continue;
    CHECK(out.samples.row(c) == ts.samples.row(c));  // good rows bit-identical
  }
}

TEST_CASE("spline fit recovers a linear field on the sphere") {
  std::vector<std::array<double, 3>> sources = {
      {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, -1, 0},
      {0.577350269, 0.577350269, 0.577350269}, {-0.577350269, 0.577350269, 0.577350269}};
  Eigen::MatrixXd values(7, 1);
  for (std::size_t i = 0; i < sources.size(); ++i)
    values(static_cast<Eigen::Index>(i), 0) = sources[i][0];  // f(x,y,z) = x
  std::vector<std::array<double, 3>> queries = {
      {0.6, 0.8, 0.0}, {0.0, 0.0, -1.0}, {0.707106781, 0.0, 0.707106781}};
  auto out = spline_interpolate(sources, values, queries);
  const double range = 2.0;  // field spans [-1, 1] over the sources
  for (std::size_t q = 0; q < queries.size(); ++q)
    CHECK(std::abs(out(static_cast<Eigen::Index>(q), 0) - queries[q][0]) < 0.1 * range);
}

TEST_CASE("interpolation preconditions") {
  auto montage = test_montage();
  auto ts = make_series(10, 64, 64.0, 9);
  CHECK_THROWS_AS(interpolate_channels(ts, {}, montage), Error);
  CHECK_THROWS_AS(interpolate_channels(ts, {0, 1, 2, 3, 4, 5}, montage), Error);
  CHECK_THROWS_AS(interpolate_channels(ts, {42}, montage), Error);
  auto mismatched = make_series(6, 64, 64.0, 10);
  CHECK_THROWS_AS(interpolate_channels(mismatched, {0}, montage), Error);
}

TEST_CASE("rereference subtracts the mastoid mean per frame") {
  auto montage = test_montage();
  TimeSeries ts;
  ts.rate = 64.0;
  ts.samples = Eigen::MatrixXd::Zero(10, 3);
  ts.samples.row(0).setConstant(10.0);
  ts.samples.row(8).setConstant(1.0);  // M1
  ts.samples.row(9).setConstant(3.0);  // M2
  auto out = rereference(ts, montage);
  CHECK(out.samples(0, 0) == doctest::Approx(8.0));
  CHECK(out.samples(1, 0) == doctest::Approx(-2.0));

  SUBCASE("zero mastoids leave data unchanged") {
    auto series = make_series(10, 16, 64.0, 12);
    series.samples.row(8).setZero();
    series.samples.row(9).setZero();
    auto same = rereference(series, montage);
    CHECK(same.samples == series.samples);
  }

  SUBCASE("identical channels collapse to zero") {
    TimeSeries flat;
    flat.rate = 64.0;
    flat.samples = Eigen::MatrixXd::Constant(10, 5, 2.5);
    auto zeroed = rereference(flat, montage);
    CHECK(zeroed.samples.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
  }

  SUBCASE("montage without mastoids is an error") {
    Montage bare = montage;
    std::fill(bare.mastoid_flags.begin(), bare.mastoid_flags.end(), false);
    CHECK_THROWS_AS(rereference(ts, bare), Error);
  }
}

TEST_CASE("preprocess runs the ordered chain and standardizes") {
  auto montage = test_montage();
  auto ts = make_series(10, 4096, 512.0, 31);
  PreprocConfig config;
  auto [out, report] = preprocess(ts, montage, config);

  CHECK(out.rate == 64.0);
  CHECK(out.frames() == 512);
  CHECK(out.channels() == 10);
  for (Eigen::Index c = 0; c < out.channels(); ++c)
    CHECK(std::abs(out.samples.row(c).mean()) < 1e-9);

  REQUIRE(report.stages.size() == 7);
  CHECK(report.stages[0].rfind("lowpass", 0) == 0);
  CHECK(report.stages[1].rfind("highpass", 0) == 0);
  CHECK(report.stages[2].rfind("resample", 0) == 0);
  CHECK(report.stages[3].rfind("reject", 0) == 0);
  CHECK(report.stages[4].rfind("interpolate", 0) == 0);
  CHECK(report.stages[5].rfind("rereference", 0) == 0);
  CHECK(report.stages[6].rfind("zscore", 0) == 0);
  CHECK(report.rejected.empty());

  auto [again, report2] = preprocess(ts, montage, config);
  CHECK(again.samples == out.samples);  // bit-identical rerun
}

TEST_CASE("preprocess flags a corrupted channel in the report") {
  auto montage = test_montage();
  auto ts = make_series(10, 4096, 512.0, 33);
  ts.samples.row(4) *= 20.0;
  PreprocConfig config;
  auto [out, report] = preprocess(ts, montage, config);
  CHECK(report.rejected == std::vector<Eigen::Index>{4});
  for (Eigen::Index c = 0; c < out.channels(); ++c)
    CHECK(std::abs(out.samples.row(c).mean()) < 1e-9);
}

TEST_CASE("preprocess validates the input rate and honors the prereferenced flag") {
  auto montage = test_montage();
  auto ts = make_series(10, 1000, 300.0, 35);
  PreprocConfig config;
  CHECK_THROWS_AS(preprocess(ts, montage, config), Error);

  Montage bare = montage;
  std::fill(bare.mastoid_flags.begin(), bare.mastoid_flags.end(), false);
  auto ok = make_series(10, 4096, 512.0, 36);
  config.prereferenced = true;
  auto [out, report] = preprocess(ok, bare, config);
  CHECK(report.stages[5] == "rereference: skipped (pre-referenced)");
}

TEST_CASE("montage files round-trip and validate") {
  const auto dir = std::filesystem::temp_directory_path() / "nm_montage_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.txt";
  auto montage = test_montage();
  save_montage(montage, path);
  auto loaded = load_montage(path);
  CHECK(loaded.labels == montage.labels);
  CHECK(loaded.mastoid_indices() == std::vector<Eigen::Index>{8, 9});
  CHECK(loaded.scalp_indices().size() == 8);
  CHECK(loaded.regions == montage.regions);
  for (std::size_t i = 0; i < loaded.positions.size(); ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(loaded.positions[i][k] == doctest::Approx(montage.positions[i][k]).epsilon(1e-8));

  SUBCASE("malformed line is rejected with its number") {
    const auto bad_path = dir / "bad.txt";
    std::ofstream out(bad_path);
    out << "Cz 0 0 1 central 0\n";
    out << "Pz 0 -0.6\n";
    out.close();
    try {
      load_montage(bad_path);
      FAIL("expected format error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::format);
      CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
  }

  SUBCASE("off-sphere position is rejected") {
    const auto off_path = dir / "off.txt";
    std::ofstream out(off_path);
    out << "Cz 0 0 2 central 0\n";
    out.close();
    CHECK_THROWS_AS(load_montage(off_path), Error);
  }
}

TEST_CASE("shipped montages load and partition into regions") {
  for (const char* name : {"data/montage_biosemi64.txt", "data/montage_biosemi128.txt"}) {
    auto path = std::filesystem::path(NEUROMATCH_SOURCE_DIR) / name;
    auto montage = load_montage(path);
    std::size_t total = 0;
    for (Region r : {Region::frontal, Region::central, Region::parietal, Region::temporal,
                     Region::occipital}) {
      const auto idx = montage.region_indices(r);
      CHECK(!idx.empty());
      total += idx.size();
    }
    CHECK(total == montage.scalp_indices().size());
  }
  CHECK(load_montage(std::filesystem::path(NEUROMATCH_SOURCE_DIR) / "data/montage_biosemi64.txt")
            .mastoid_indices()
            .empty());
  CHECK(load_montage(std::filesystem::path(NEUROMATCH_SOURCE_DIR) / "data/montage_biosemi128.txt")
            .channels() == 130);
}
