#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neuromatch/error.hpp"

namespace neuromatch::stats {

// Significance threshold used by every report (two-sided).
constexpr double kAlpha = 0.01;

// One scored match/mismatch decision.
struct PredictionRecord {
  std::string pair_id;
  double lambda = 0.5;  // fusion weight used at inference
  double sim_pos = 0.0;
  double sim_neg = 0.0;
  bool correct() const { return sim_pos > sim_neg; }  // ties count as incorrect
};

// Percentage of records with sim_pos > sim_neg. Empty input is an error.
double mm_accuracy(const std::vector<PredictionRecord>& records);

struct TestResult {
  double statistic = 0.0;  // W+ for the signed-rank test, min(Ua, Ub) for rank-sum
  double p_value = 1.0;    // two-sided
  bool exact = false;      // exact enumeration (small n) vs normal approximation
  int n = 0;               // effective sample size
};

// Paired two-sided Wilcoxon signed-rank test. Zero differences are dropped,
// tied |differences| get average ranks. Exact enumeration of all 2^n sign
// patterns for n <= 12, normal approximation with tie and continuity
// corrections above. Requires >= 3 nonzero differences.
TestResult wilcoxon_signed_rank(const std::vector<double>& a, const std::vector<double>& b);

// Independent-samples two-sided Wilcoxon rank-sum (Mann-Whitney) test.
// Exact enumeration of all C(n, n_a) group assignments for n_a + n_b <= 12,
// tie-corrected normal approximation above. Both groups must be nonempty.
TestResult wilcoxon_rank_sum(const std::vector<double>& a, const std::vector<double>& b);

// ---------------------------------------------------------------------------
// Report emission. Every writer produces tab-separated text with a header
// row, %.6f numbers, and no timestamps, so reruns are byte-identical.
// ---------------------------------------------------------------------------

struct LambdaRow {
  double lambda = 0.0;
  double accuracy = 0.0;
  int n = 0;
};
void write_lambda_table(const std::filesystem::path& file, const std::vector<LambdaRow>& rows);

// Scatter of (sim_pos, sim_neg) decisions, one row per pair.
void write_scatter(const std::filesystem::path& file,
                   const std::vector<PredictionRecord>& records);

// One scatter file per fusion weight in {0, 0.5, 1}; returns the file paths.
std::vector<std::filesystem::path> write_scatter_by_lambda(
    const std::filesystem::path& directory, const std::string& stem,
    const std::vector<PredictionRecord>& records);

struct RegionRow {
  std::string region;
  double accuracy = 0.0;
  int n = 0;
  double p_value = 1.0;  // vs. the full-montage baseline
};
// Requires exactly the five scalp regions.
void write_region_table(const std::filesystem::path& file, const std::vector<RegionRow>& rows);

struct EarRow {
  std::string group;  // left | right
  double accuracy = 0.0;
  int n = 0;
};
void write_ear_table(const std::filesystem::path& file, const std::vector<EarRow>& rows);

struct AblationRow {
  std::string boundary_mode;  // true | none | random:k
  double accuracy = 0.0;
  int n = 0;
  double p_value = 1.0;  // vs. true boundaries
};
void write_ablation_table(const std::filesystem::path& file,
                          const std::vector<AblationRow>& rows);

}  // namespace neuromatch::stats
