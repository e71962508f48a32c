#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "neuromatch/error.hpp"

namespace neuromatch {

enum class Region { frontal, central, parietal, temporal, occipital };

const char* region_name(Region region);
Region region_from_string(const std::string& name);

// Electrode layout on the unit sphere. File format: one record per channel,
// whitespace separated: label x y z region is_mastoid.
struct Montage {
  std::vector<std::string> labels;
  std::vector<std::array<double, 3>> positions;
  std::vector<Region> regions;
  std::vector<bool> mastoid_flags;

  Eigen::Index channels() const { return static_cast<Eigen::Index>(labels.size()); }
  std::vector<Eigen::Index> mastoid_indices() const;
  std::vector<Eigen::Index> scalp_indices() const;  // everything except mastoids
  std::vector<Eigen::Index> region_indices(Region region) const;  // mastoids excluded
  void require_valid(const char* context) const;
};

Montage load_montage(const std::filesystem::path& path);
void save_montage(const Montage& montage, const std::filesystem::path& path);

}  // namespace neuromatch
