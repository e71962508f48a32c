#include "neuromatch/dichotic_analysis.hpp"

#include <algorithm>
#include <set>

#include "neuromatch/rng.hpp"

namespace neuromatch::dichotic {
namespace {

void check_record(const TrialRecord& record) {
  if (record.attended_ear != "left" && record.attended_ear != "right")
    raise(ErrorCode::invalid_argument, "dichotic trial " + record.subject + "/" + record.trial +
                                           ": attended_ear must be left or right, got '" +
                                           record.attended_ear + "'");
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_unit(record.attended_score) || !in_unit(record.unattended_score))
    raise(ErrorCode::invalid_argument, "dichotic trial " + record.subject + "/" + record.trial +
                                           ": comprehension scores must lie in [0, 1]");
}

void sort_canonical(std::vector<TrialRecord>& records) {
  std::sort(records.begin(), records.end(), [](const TrialRecord& a, const TrialRecord& b) {
    return std::tie(a.subject, a.trial) < std::tie(b.subject, b.trial);
  });
}

}  // namespace

std::vector<TrialRecord> trial_records(const data::Dataset& dataset) {
  std::vector<TrialRecord> records;
  for (std::size_t i = 0; i < dataset.trials.size(); ++i) {
    const data::TrialData& trial = dataset.trials[i];
    if (trial.protocol != "dichotic" || trial.attended_ear.empty()) continue;
    TrialRecord record;
    record.subject = trial.subject;
    record.trial = trial.trial;
    record.attended_ear = trial.attended_ear;
    record.attended_score = trial.attended_score;
    record.unattended_score = trial.unattended_score;
    record.dataset_index = i;
    check_record(record);
    records.push_back(std::move(record));
  }
  return records;
}

SelectionResult select_trials(const std::vector<TrialRecord>& records) {
  SelectionResult result;
  for (const TrialRecord& record : records) {
    check_record(record);
    EarRetention& stats = record.attended_ear == "left" ? result.left : result.right;
    ++stats.total;
    bool keep = record.attended_score >= 0.6 && record.unattended_score <= 0.4;
    if (keep) {
      ++stats.kept;
      result.kept.push_back(record);
    } else {
      result.dropped.push_back(record);
    }
  }
  return result;
}

std::vector<Eigen::Index> region_channels(const Montage& montage, Region region) {
  montage.require_valid("region_channels");
  return montage.region_indices(region);
}

std::vector<Eigen::Index> region_channels(const Montage& montage,
                                          const std::string& region_name) {
  return region_channels(montage, region_from_string(region_name));
}

Eigen::MatrixXd subset_eeg(const Eigen::MatrixXd& eeg,
                           const std::vector<Eigen::Index>& channels) {
  if (channels.empty())
    raise(ErrorCode::invalid_argument, "subset_eeg: channel set must not be empty");
  std::set<Eigen::Index> seen;
  for (Eigen::Index c : channels) {
    if (c < 0 || c >= eeg.rows())
      raise(ErrorCode::invalid_argument,
            "subset_eeg: channel " + std::to_string(c) + " out of range for " +
                std::to_string(eeg.rows()) + " rows");
    if (!seen.insert(c).second)
      raise(ErrorCode::invalid_argument,
            "subset_eeg: duplicate channel " + std::to_string(c));
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(channels.size()), eeg.cols());
  for (std::size_t i = 0; i < channels.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = eeg.row(channels[i]);
  return out;
}

EarSplit split_by_ear(const std::vector<TrialRecord>& records, std::uint64_t seed) {
  EarSplit split;
  for (const TrialRecord& record : records) {
    check_record(record);
    (record.attended_ear == "left" ? split.left : split.right).push_back(record);
  }
  if (split.left.empty() || split.right.empty())
    raise(ErrorCode::invalid_design,
          "split_by_ear: both attended-ear groups must be nonempty (left=" +
              std::to_string(split.left.size()) + ", right=" +
              std::to_string(split.right.size()) + ")");

  const std::size_t target = std::min(split.left.size(), split.right.size());
  auto balance = [&](const std::vector<TrialRecord>& group, std::uint64_t stream) {
    std::vector<std::size_t> order(group.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::derive(seed, stream));
    rng.shuffle(order);
    order.resize(target);
    std::vector<TrialRecord> picked;
    for (std::size_t i : order) picked.push_back(group[i]);
    sort_canonical(picked);
    return picked;
  };
  split.left_balanced = balance(split.left, 1);
  split.right_balanced = balance(split.right, 2);
  return split;
}

}  // namespace neuromatch::dichotic
