#include "neuromatch/eval_stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

namespace neuromatch::stats {
namespace {

// Ranks 1..n over ascending values, ties sharing their average rank.
std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    double rank = 0.5 * static_cast<double>(i + 1 + j + 1);  // average of positions i+1..j+1
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

// Sum over tie groups of (t^3 - t), for the variance corrections.
double tie_term(const std::vector<double>& values) {
  std::map<double, int> counts;
  for (double v : values) ++counts[v];
  double total = 0.0;
  for (const auto& [value, t] : counts)
    if (t > 1) total += static_cast<double>(t) * t * t - t;
  return total;
}

double normal_two_sided(double z_abs) { return std::erfc(z_abs / std::sqrt(2.0)); }

std::ofstream open_report(const std::filesystem::path& file) {
  if (file.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(file.parent_path(), ec);
  }
  std::ofstream out(file, std::ios::trunc);
  if (!out) raise(ErrorCode::io, "report: cannot open " + file.string());
  return out;
}

std::string fmt(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.6f", value);
  return buffer;
}

const char* flag(double p) { return p < kAlpha ? "yes" : "no"; }

}  // namespace

double mm_accuracy(const std::vector<PredictionRecord>& records) {
  if (records.empty())
    raise(ErrorCode::invalid_argument, "mm_accuracy: no prediction records");
  std::size_t correct = 0;
  for (const PredictionRecord& r : records) correct += r.correct() ? 1 : 0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
}

TestResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    raise(ErrorCode::invalid_argument, "wilcoxon_signed_rank: paired inputs differ in length (" +
                                           std::to_string(a.size()) + " vs " +
                                           std::to_string(b.size()) + ")");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (!std::isfinite(d))
      raise(ErrorCode::invalid_argument, "wilcoxon_signed_rank: non-finite difference");
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty())
    raise(ErrorCode::invalid_design,
          "wilcoxon_signed_rank: all differences are zero; the test is undefined");
  const auto n = diffs.size();
  if (n < 3)
    raise(ErrorCode::invalid_design,
          "wilcoxon_signed_rank: needs at least 3 nonzero differences, got " + std::to_string(n));

  std::vector<double> magnitudes(n);
  for (std::size_t i = 0; i < n; ++i) magnitudes[i] = std::abs(diffs[i]);
  std::vector<double> ranks = average_ranks(magnitudes);

  double w_plus = 0.0, w_minus = 0.0;
  for (std::size_t i = 0; i < n; ++i) (diffs[i] > 0.0 ? w_plus : w_minus) += ranks[i];

  TestResult result;
  result.statistic = w_plus;
  result.n = static_cast<int>(n);
  if (n <= 12) {
    result.exact = true;
    const double threshold = std::max(w_plus, w_minus) - 1e-9;
    const std::uint64_t patterns = std::uint64_t{1} << n;
    std::uint64_t at_least = 0;
    for (std::uint64_t mask = 0; mask < patterns; ++mask) {
      double t = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (std::uint64_t{1} << i)) t += ranks[i];
      if (t >= threshold) ++at_least;
    }
    result.p_value =
        std::min(1.0, 2.0 * static_cast<double>(at_least) / static_cast<double>(patterns));
  } else {
    result.exact = false;
    const double nd = static_cast<double>(n);
    const double mean = nd * (nd + 1.0) / 4.0;
    const double variance = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_term(magnitudes) / 48.0;
    if (variance <= 0.0)
      raise(ErrorCode::invalid_design,
            "wilcoxon_signed_rank: zero variance (all magnitudes tied); test is degenerate");
    const double z = std::max(0.0, std::abs(w_plus - mean) - 0.5) / std::sqrt(variance);
    result.p_value = std::min(1.0, normal_two_sided(z));
  }
  return result;
}

TestResult wilcoxon_rank_sum(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty())
    raise(ErrorCode::invalid_design, "wilcoxon_rank_sum: both groups must be nonempty");
  for (double v : a)
    if (!std::isfinite(v)) raise(ErrorCode::invalid_argument, "wilcoxon_rank_sum: non-finite value");
  for (double v : b)
    if (!std::isfinite(v)) raise(ErrorCode::invalid_argument, "wilcoxon_rank_sum: non-finite value");

  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> pooled;
  pooled.reserve(n);
  pooled.insert(pooled.end(), a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<double> ranks = average_ranks(pooled);

  double rank_sum_a = 0.0;
  for (std::size_t i = 0; i < na; ++i) rank_sum_a += ranks[i];
  const double ua = rank_sum_a - static_cast<double>(na) * (na + 1) / 2.0;
  const double ub = static_cast<double>(na) * static_cast<double>(nb) - ua;
  const double u = std::min(ua, ub);

  TestResult result;
  result.statistic = u;
  result.n = static_cast<int>(n);
  if (n <= 12) {
    result.exact = true;
    // Enumerate every split of the pooled ranks into a group of size na.
    std::vector<std::size_t> pick(na);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    std::uint64_t total = 0, at_most = 0;
    const double offset = static_cast<double>(na) * (na + 1) / 2.0;
    while (true) {
      double sum = 0.0;
      for (std::size_t i : pick) sum += ranks[i];
      ++total;
      if (sum - offset <= u + 1e-9) ++at_most;
      // advance the combination
      std::size_t i = na;
      while (i > 0 && pick[i - 1] == n - (na - (i - 1))) --i;
      if (i == 0) break;
      ++pick[i - 1];
      for (std::size_t j = i; j < na; ++j) pick[j] = pick[j - 1] + 1;
    }
    result.p_value =
        std::min(1.0, 2.0 * static_cast<double>(at_most) / static_cast<double>(total));
  } else {
    result.exact = false;
    const double nad = static_cast<double>(na), nbd = static_cast<double>(nb),
                 nd = static_cast<double>(n);
    const double mean = nad * nbd / 2.0;
    const double variance =
        nad * nbd / 12.0 * ((nd + 1.0) - tie_term(pooled) / (nd * (nd - 1.0)));
    if (variance <= 0.0)
      raise(ErrorCode::invalid_design,
            "wilcoxon_rank_sum: zero variance (all values tied); test is degenerate");
    const double z = std::max(0.0, (mean - u) - 0.5) / std::sqrt(variance);
    result.p_value = std::min(1.0, normal_two_sided(z));
  }
  return result;
}

void write_lambda_table(const std::filesystem::path& file, const std::vector<LambdaRow>& rows) {
  if (rows.empty()) raise(ErrorCode::invalid_argument, "write_lambda_table: no rows");
  std::ofstream out = open_report(file);
  out << "lambda\taccuracy\tn\n";
  for (const LambdaRow& row : rows)
    out << fmt(row.lambda) << "\t" << fmt(row.accuracy) << "\t" << row.n << "\n";
  if (!out) raise(ErrorCode::io, "write_lambda_table: write failed for " + file.string());
}

void write_scatter(const std::filesystem::path& file,
                   const std::vector<PredictionRecord>& records) {
  std::ofstream out = open_report(file);
  out << "pair_id\tsim_pos\tsim_neg\tcorrect\n";
  for (const PredictionRecord& r : records)
    out << r.pair_id << "\t" << fmt(r.sim_pos) << "\t" << fmt(r.sim_neg) << "\t"
        << (r.correct() ? 1 : 0) << "\n";
  if (!out) raise(ErrorCode::io, "write_scatter: write failed for " + file.string());
}

std::vector<std::filesystem::path> write_scatter_by_lambda(
    const std::filesystem::path& directory, const std::string& stem,
    const std::vector<PredictionRecord>& records) {
  static const struct {
    double lambda;
    const char* tag;
  } kSettings[3] = {{0.0, "lambda00"}, {0.5, "lambda05"}, {1.0, "lambda10"}};
  std::vector<std::filesystem::path> files;
  for (const auto& setting : kSettings) {
    std::vector<PredictionRecord> subset;
    for (const PredictionRecord& r : records)
      if (r.lambda == setting.lambda) subset.push_back(r);
    std::filesystem::path file = directory / (stem + "_" + setting.tag + ".tsv");
    write_scatter(file, subset);
    files.push_back(std::move(file));
  }
  return files;
}

void write_region_table(const std::filesystem::path& file, const std::vector<RegionRow>& rows) {
  if (rows.size() != 5)
    raise(ErrorCode::invalid_argument, "write_region_table: expected the 5 scalp regions, got " +
                                           std::to_string(rows.size()));
  std::ofstream out = open_report(file);
  out << "region\taccuracy\tn\tp_value\tsignificant\n";
  for (const RegionRow& row : rows)
    out << row.region << "\t" << fmt(row.accuracy) << "\t" << row.n << "\t" << fmt(row.p_value)
        << "\t" << flag(row.p_value) << "\n";
  if (!out) raise(ErrorCode::io, "write_region_table: write failed for " + file.string());
}

void write_ear_table(const std::filesystem::path& file, const std::vector<EarRow>& rows) {
  if (rows.empty()) raise(ErrorCode::invalid_argument, "write_ear_table: no rows");
  std::ofstream out = open_report(file);
  out << "group\taccuracy\tn\n";
  for (const EarRow& row : rows)
    out << row.group << "\t" << fmt(row.accuracy) << "\t" << row.n << "\n";
  if (!out) raise(ErrorCode::io, "write_ear_table: write failed for " + file.string());
}

void write_ablation_table(const std::filesystem::path& file,
                          const std::vector<AblationRow>& rows) {
  if (rows.empty()) raise(ErrorCode::invalid_argument, "write_ablation_table: no rows");
  std::ofstream out = open_report(file);
  out << "word_boundaries\taccuracy\tn\tp_value_vs_true\tsignificant\n";
  for (const AblationRow& row : rows)
    out << row.boundary_mode << "\t" << fmt(row.accuracy) << "\t" << row.n << "\t"
        << fmt(row.p_value) << "\t" << flag(row.p_value) << "\n";
  if (!out) raise(ErrorCode::io, "write_ablation_table: write failed for " + file.string());
}

}  // namespace neuromatch::stats
