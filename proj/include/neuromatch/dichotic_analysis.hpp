#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "neuromatch/data_io.hpp"
#include "neuromatch/error.hpp"
#include "neuromatch/montage.hpp"

namespace neuromatch::dichotic {

// One dichotic listening trial with its comprehension scores.
struct TrialRecord {
  std::string subject;
  std::string trial;
  std::string attended_ear;  // left | right
  double attended_score = 0.0;
  double unattended_score = 0.0;
  std::size_t dataset_index = 0;  // position of the trial in its Dataset
};

// Extract records for every dichotic trial carrying behavioral scores.
std::vector<TrialRecord> trial_records(const data::Dataset& dataset);

struct EarRetention {
  int total = 0;
  int kept = 0;
  double fraction() const { return total > 0 ? static_cast<double>(kept) / total : 0.0; }
};

struct SelectionResult {
  std::vector<TrialRecord> kept;
  std::vector<TrialRecord> dropped;
  EarRetention left;
  EarRetention right;
};

// Keep trials whose attention was behaviorally verified: attended
// comprehension >= 0.6 and unattended <= 0.4, both bounds inclusive.
SelectionResult select_trials(const std::vector<TrialRecord>& records);

// Channel indices carrying a region's electrodes (mastoids excluded).
// The montage file is the single source of truth for the assignment.
std::vector<Eigen::Index> region_channels(const Montage& montage, Region region);
std::vector<Eigen::Index> region_channels(const Montage& montage, const std::string& region_name);

// Row-slice an EEG matrix to the given channels, order preserved.
Eigen::MatrixXd subset_eeg(const Eigen::MatrixXd& eeg, const std::vector<Eigen::Index>& channels);

struct EarSplit {
  std::vector<TrialRecord> left;            // every left-attending record
  std::vector<TrialRecord> right;           // every right-attending record
  std::vector<TrialRecord> left_balanced;   // seeded downsample to min group size
  std::vector<TrialRecord> right_balanced;  // (apply to training data only)
};

// Group by attended ear and balance the two groups to the same trial count.
// The full groups are returned untouched so evaluation never loses test data;
// the *_balanced lists are what training should consume.
EarSplit split_by_ear(const std::vector<TrialRecord>& records, std::uint64_t seed);

}  // namespace neuromatch::dichotic
