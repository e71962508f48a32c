#include "neuromatch/montage.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace neuromatch {

const char* region_name(Region region) {
  switch (region) {
    case Region::frontal: return "frontal";
    case Region::central: return "central";
    case Region::parietal: return "parietal";
    case Region::temporal: return "temporal";
    case Region::occipital: return "occipital";
  }
  return "?";
}

Region region_from_string(const std::string& name) {
  if (name == "frontal") return Region::frontal;
  if (name == "central") return Region::central;
  if (name == "parietal") return Region::parietal;
  if (name == "temporal") return Region::temporal;
  if (name == "occipital") return Region::occipital;
  raise(ErrorCode::format, "unknown region '" + name + "'");
}

std::vector<Eigen::Index> Montage::mastoid_indices() const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < mastoid_flags.size(); ++i)
    if (mastoid_flags[i]) out.push_back(static_cast<Eigen::Index>(i));
  return out;
}

std::vector<Eigen::Index> Montage::scalp_indices() const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < mastoid_flags.size(); ++i)
    if (!mastoid_flags[i]) out.push_back(static_cast<Eigen::Index>(i));
  return out;
}

std::vector<Eigen::Index> Montage::region_indices(Region region) const {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < regions.size(); ++i)
    if (regions[i] == region && !mastoid_flags[i]) out.push_back(static_cast<Eigen::Index>(i));
  return out;
}

void Montage::require_valid(const char* context) const {
  const std::size_t n = labels.size();
  if (n == 0) raise(ErrorCode::invalid_argument, std::string(context) + ": empty montage");
  if (positions.size() != n || regions.size() != n || mastoid_flags.size() != n)
    raise(ErrorCode::invalid_argument, std::string(context) + ": montage field sizes disagree");
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = positions[i];
    const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (std::abs(r - 1.0) > 1e-6)
      raise(ErrorCode::invalid_argument, std::string(context) + ": electrode '" + labels[i] +
                                             "' not on the unit sphere (radius " +
                                             std::to_string(r) + ")");
  }
}

Montage load_montage(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::io, "cannot open montage file " + path.string());
  Montage montage;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string label, region;
    double x = 0, y = 0, z = 0;
    int mastoid = 0;
    if (!(fields >> label >> x >> y >> z >> region >> mastoid))
      raise(ErrorCode::format,
            path.string() + ":" + std::to_string(line_no) + ": expected 'label x y z region is_mastoid'");
    montage.labels.push_back(label);
    montage.positions.push_back({x, y, z});
    montage.regions.push_back(region_from_string(region));
    montage.mastoid_flags.push_back(mastoid != 0);
  }
  montage.require_valid(("montage file " + path.string()).c_str());
  return montage;
}

void save_montage(const Montage& montage, const std::filesystem::path& path) {
  montage.require_valid("save_montage");
  std::ofstream out(path);
  if (!out) raise(ErrorCode::io, "cannot write montage file " + path.string());
  for (std::size_t i = 0; i < montage.labels.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s %.9f %.9f %.9f %s %d\n", montage.labels[i].c_str(),
                  montage.positions[i][0], montage.positions[i][1], montage.positions[i][2],
                  region_name(montage.regions[i]), montage.mastoid_flags[i] ? 1 : 0);
    out << buf;
  }
  if (!out) raise(ErrorCode::io, "failed writing montage file " + path.string());
}

}  // namespace neuromatch
