#include "neuromatch/eeg_preproc.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

namespace neuromatch::preproc {

namespace {

double population_variance(const Eigen::RowVectorXd& row) {
  const double mean = row.mean();
  return (row.array() - mean).square().sum() / static_cast<double>(row.size());
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Perrin-style surface spline kernel: sum over the first 7 Legendre degrees of
// (2n+1)/(n(n+1))^4 * P_n(x), scaled by 1/4pi.
double spline_kernel(double x) {
  double acc = 0.0;
  double p_prev = 1.0;  // P_0
  double p = x;         // P_1
  for (int n = 1; n <= 7; ++n) {
    const double nn = static_cast<double>(n) * (n + 1.0);
    acc += (2.0 * n + 1.0) / (nn * nn * nn * nn) * p;
    const double p_next = ((2.0 * n + 1.0) * x * p - n * p_prev) / (n + 1.0);
    p_prev = p;
    p = p_next;
  }
  return acc / (4.0 * M_PI);
}

double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

std::string stage_line(const char* name, const std::string& detail) {
  return detail.empty() ? std::string(name) : std::string(name) + ": " + detail;
}

}  // namespace

std::vector<Eigen::Index> variance_outliers(const std::vector<double>& variances, double k) {
  if (variances.empty()) raise(ErrorCode::invalid_argument, "variance_outliers: empty input");
  if (k <= 0.0) raise(ErrorCode::invalid_argument, "variance_outliers: multiplier must be positive");
  const double med = median(variances);
  std::vector<Eigen::Index> bad;
  for (std::size_t i = 0; i < variances.size(); ++i)
    if (variances[i] > k * med) bad.push_back(static_cast<Eigen::Index>(i));
  return bad;
}

std::pair<std::vector<Eigen::Index>, PreprocReport> reject_channels(const TimeSeries& ts,
                                                                    const RejectPolicy& policy) {
  ts.require_valid("reject_channels");
  if (ts.channels() < 8)
    raise(ErrorCode::invalid_argument, "reject_channels: need at least 8 channels");
  PreprocReport report;
  report.channel_variance.resize(static_cast<std::size_t>(ts.channels()));
  for (Eigen::Index c = 0; c < ts.channels(); ++c)
    report.channel_variance[static_cast<std::size_t>(c)] = population_variance(ts.samples.row(c));
  report.rejected = variance_outliers(report.channel_variance, policy.multiplier);
  const double fraction =
      static_cast<double>(report.rejected.size()) / static_cast<double>(ts.channels());
  if (fraction > policy.max_fraction)
    raise(ErrorCode::pipeline, "reject_channels: " + std::to_string(report.rejected.size()) +
                                   " of " + std::to_string(ts.channels()) +
                                   " channels over threshold; data too corrupt");
  return {report.rejected, std::move(report)};
}

Eigen::MatrixXd spline_interpolate(const std::vector<std::array<double, 3>>& good_positions,
                                   const Eigen::MatrixXd& good_values,
                                   const std::vector<std::array<double, 3>>& query_positions) {
  const Eigen::Index ng = static_cast<Eigen::Index>(good_positions.size());
  if (ng < 3) raise(ErrorCode::invalid_argument, "spline_interpolate: need at least 3 sources");
  if (good_values.rows() != ng)
    raise(ErrorCode::invalid_argument, "spline_interpolate: values/positions mismatch");
  if (query_positions.empty())
    raise(ErrorCode::invalid_argument, "spline_interpolate: no query positions");

  // Bordered system [G + eps*I, 1; 1^T, 0] enforces a zero-sum coefficient
  // vector plus a free constant, so constant fields reproduce exactly. The
  // small ridge keeps the system solvable when electrodes outnumber the
  // truncated harmonic basis.
  constexpr double kRidge = 1e-5;
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(ng + 1, ng + 1);
  for (Eigen::Index i = 0; i < ng; ++i) {
    for (Eigen::Index j = 0; j < ng; ++j)
      system(i, j) = spline_kernel(dot3(good_positions[static_cast<std::size_t>(i)],
                                        good_positions[static_cast<std::size_t>(j)]));
    system(i, i) += kRidge;
    system(i, ng) = 1.0;
    system(ng, i) = 1.0;
  }

  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(ng + 1, good_values.cols());
  rhs.topRows(ng) = good_values;
  Eigen::MatrixXd solution = system.fullPivLu().solve(rhs);

  Eigen::MatrixXd out(static_cast<Eigen::Index>(query_positions.size()), good_values.cols());
  for (std::size_t q = 0; q < query_positions.size(); ++q) {
    Eigen::RowVectorXd weights(ng);
    for (Eigen::Index i = 0; i < ng; ++i)
      weights(i) = spline_kernel(dot3(query_positions[q], good_positions[static_cast<std::size_t>(i)]));
    out.row(static_cast<Eigen::Index>(q)) =
        weights * solution.topRows(ng) + solution.row(ng);
  }
  require_finite(out, "spline_interpolate");
  return out;
}

TimeSeries interpolate_channels(const TimeSeries& ts, const std::vector<Eigen::Index>& bad,
                                const Montage& montage) {
  ts.require_valid("interpolate_channels");
  montage.require_valid("interpolate_channels");
  if (montage.channels() != ts.channels())
    raise(ErrorCode::invalid_argument, "interpolate_channels: montage/series channel mismatch");
  if (bad.empty()) raise(ErrorCode::invalid_argument, "interpolate_channels: empty bad set");
  if (static_cast<Eigen::Index>(bad.size()) >= ts.channels() - 4)
    raise(ErrorCode::invalid_argument,
          "interpolate_channels: too few remaining channels to interpolate from");
  std::set<Eigen::Index> bad_set(bad.begin(), bad.end());
  for (Eigen::Index c : bad)
    if (c < 0 || c >= ts.channels())
      raise(ErrorCode::invalid_argument, "interpolate_channels: bad index out of range");

  std::vector<std::array<double, 3>> good_pos, bad_pos;
  std::vector<Eigen::Index> good_idx;
  for (Eigen::Index c = 0; c < ts.channels(); ++c) {
    if (bad_set.count(c))
      bad_pos.push_back(montage.positions[static_cast<std::size_t>(c)]);
    else {
      good_idx.push_back(c);
      good_pos.push_back(montage.positions[static_cast<std::size_t>(c)]);
    }
  }
  Eigen::MatrixXd good_values(static_cast<Eigen::Index>(good_idx.size()), ts.frames());
  for (std::size_t i = 0; i < good_idx.size(); ++i)
    good_values.row(static_cast<Eigen::Index>(i)) = ts.samples.row(good_idx[i]);

  const Eigen::MatrixXd predicted = spline_interpolate(good_pos, good_values, bad_pos);

  TimeSeries out = ts;
  for (std::size_t i = 0; i < bad.size(); ++i)
    out.samples.row(bad[i]) = predicted.row(static_cast<Eigen::Index>(i));
  return out;
}

TimeSeries rereference(const TimeSeries& ts, const Montage& montage) {
  ts.require_valid("rereference");
  montage.require_valid("rereference");
  if (montage.channels() != ts.channels())
    raise(ErrorCode::invalid_argument, "rereference: montage/series channel mismatch");
  const auto mastoids = montage.mastoid_indices();
  if (mastoids.empty()) raise(ErrorCode::invalid_argument, "rereference: no mastoids configured");
  Eigen::RowVectorXd reference = Eigen::RowVectorXd::Zero(ts.frames());
  for (Eigen::Index m : mastoids) reference += ts.samples.row(m);
  reference /= static_cast<double>(mastoids.size());
  TimeSeries out = ts;
  out.samples.rowwise() -= reference;
  return out;
}

std::pair<TimeSeries, PreprocReport> preprocess(const TimeSeries& ts, const Montage& montage,
                                                const PreprocConfig& config) {
  ts.require_valid("preprocess");
  if (!config.allowed_rates.empty() &&
      std::none_of(config.allowed_rates.begin(), config.allowed_rates.end(),
                   [&](double r) { return r == ts.rate; }))
    raise(ErrorCode::invalid_argument,
          "preprocess: unsupported input rate " + std::to_string(ts.rate));

  char detail[128];
  PreprocReport report;

  const auto lp = sigproc::design_butterworth(sigproc::FilterKind::lowpass, config.lowpass_hz,
                                              config.filter_order, ts.rate);
  TimeSeries stage = sigproc::filtfilt(lp, ts);
  std::snprintf(detail, sizeof(detail), "%g Hz, order %d", config.lowpass_hz, config.filter_order);
  report.stages.push_back(stage_line("lowpass", detail));

  const auto hp = sigproc::design_butterworth(sigproc::FilterKind::highpass, config.highpass_hz,
                                              config.filter_order, ts.rate);
  stage = sigproc::filtfilt(hp, stage);
  std::snprintf(detail, sizeof(detail), "%g Hz, order %d", config.highpass_hz, config.filter_order);
  report.stages.push_back(stage_line("highpass", detail));

  stage = sigproc::resample(stage, config.target_rate);
  std::snprintf(detail, sizeof(detail), "%g -> %g Hz", ts.rate, config.target_rate);
  report.stages.push_back(stage_line("resample", detail));

  RejectPolicy policy;
  policy.multiplier = config.reject_multiplier;
  auto [bad, reject_report] = reject_channels(stage, policy);
  report.rejected = reject_report.rejected;
  report.channel_variance = std::move(reject_report.channel_variance);
  std::snprintf(detail, sizeof(detail), "k=%g, %zu channel(s)", config.reject_multiplier,
                bad.size());
  report.stages.push_back(stage_line("reject", detail));

  if (!bad.empty()) {
    stage = interpolate_channels(stage, bad, montage);
    std::snprintf(detail, sizeof(detail), "%zu channel(s)", bad.size());
  } else {
    std::snprintf(detail, sizeof(detail), "none");
  }
  report.stages.push_back(stage_line("interpolate", detail));

  if (config.prereferenced) {
    report.stages.push_back(stage_line("rereference", "skipped (pre-referenced)"));
  } else {
    stage = rereference(stage, montage);
    std::snprintf(detail, sizeof(detail), "%zu mastoid(s)", montage.mastoid_indices().size());
    report.stages.push_back(stage_line("rereference", detail));
  }

  auto standardized = sigproc::zscore(stage);
  std::snprintf(detail, sizeof(detail), "%zu degenerate channel(s)",
                standardized.degenerate_channels.size());
  report.stages.push_back(stage_line("zscore", detail));

  return {std::move(standardized.series), std::move(report)};
}

}  // namespace neuromatch::preproc
