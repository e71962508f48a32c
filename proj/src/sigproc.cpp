#include "neuromatch/sigproc.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "neuromatch/fft.hpp"

namespace neuromatch::sigproc {

namespace {

constexpr int kMaxOrder = 12;

std::vector<double> poly_multiply(const std::vector<double>& p, const std::vector<double>& q) {
  std::vector<double> out(p.size() + q.size() - 1, 0.0);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < q.size(); ++j) out[i + j] += p[i] * q[j];
  return out;
}

std::complex<double> eval_poly(const std::vector<double>& coeffs, std::complex<double> z) {
  // coeffs are in z^-1 powers: c0 + c1*z^-1 + ...
  std::complex<double> acc(0.0, 0.0);
  std::complex<double> zi(1.0, 0.0);
  const std::complex<double> zinv = 1.0 / z;
  for (double c : coeffs) {
    acc += c * zi;
    zi *= zinv;
  }
  return acc;
}

// Direct form II transposed, with explicit initial state.
std::vector<double> lfilter(const std::vector<double>& b, const std::vector<double>& a,
                            const std::vector<double>& x, std::vector<double> state) {
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<double> bb = b, aa = a;
  bb.resize(n, 0.0);
  aa.resize(n, 0.0);
  state.resize(n - 1, 0.0);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const double yi = bb[0] * xi + (state.empty() ? 0.0 : state[0]);
    for (std::size_t k = 0; k + 1 < state.size(); ++k)
      state[k] = bb[k + 1] * xi + state[k + 1] - aa[k + 1] * yi;
    if (!state.empty())
      state.back() = bb[n - 1] * xi - aa[n - 1] * yi;
    y[i] = yi;
  }
  return y;
}

// Steady-state filter state for a unit step, scaled by the first sample when
// used; keeps the forward-backward transient inside the short edge pad.
std::vector<double> lfilter_zi(const std::vector<double>& b, const std::vector<double>& a) {
  const std::size_t n = std::max(a.size(), b.size());
  std::vector<double> bb = b, aa = a;
  bb.resize(n, 0.0);
  aa.resize(n, 0.0);
  const Eigen::Index m = static_cast<Eigen::Index>(n) - 1;
  Eigen::MatrixXd system = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    system(i, 0) += aa[static_cast<std::size_t>(i) + 1];
    system(i, i) += 1.0;
    if (i + 1 < m) system(i, i + 1) -= 1.0;
  }
  Eigen::VectorXd rhs(m);
  for (Eigen::Index i = 0; i < m; ++i)
    rhs(i) = bb[static_cast<std::size_t>(i) + 1] - aa[static_cast<std::size_t>(i) + 1] * bb[0];
  Eigen::VectorXd zi = system.fullPivLu().solve(rhs);
  return std::vector<double>(zi.data(), zi.data() + zi.size());
}

std::complex<double> eval_biquad(const Biquad& s, std::complex<double> zinv) {
  const std::complex<double> zinv2 = zinv * zinv;
  return (s.b0 + s.b1 * zinv + s.b2 * zinv2) / (1.0 + s.a1 * zinv + s.a2 * zinv2);
}

// Cascade pass with steady-state (unit-step) initial conditions per section;
// the step level seen by each section is the upstream cascade's DC gain.
std::vector<double> run_sections(const std::vector<Biquad>& sections, std::vector<double> x,
                                 double x0) {
  double dc_scale = x0;
  for (const auto& s : sections) {
    std::vector<double> zi = lfilter_zi({s.b0, s.b1, s.b2}, {1.0, s.a1, s.a2});
    for (double& z : zi) z *= dc_scale;
    x = lfilter({s.b0, s.b1, s.b2}, {1.0, s.a1, s.a2}, x, std::move(zi));
    dc_scale *= (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
  }
  return x;
}

std::vector<double> reversed(std::vector<double> v) {
  std::reverse(v.begin(), v.end());
  return v;
}

}  // namespace

IirFilter design_butterworth(FilterKind kind, double cutoff_hz, int order, double rate) {
  if (rate <= 0.0) raise(ErrorCode::invalid_argument, "design_butterworth: rate must be positive");
  if (cutoff_hz <= 0.0 || cutoff_hz >= rate / 2.0)
    raise(ErrorCode::invalid_design, "design_butterworth: cutoff must lie in (0, rate/2)");
  if (order < 1) raise(ErrorCode::invalid_argument, "design_butterworth: order must be >= 1");
  if (order > kMaxOrder)
    raise(ErrorCode::invalid_design, "design_butterworth: order > 12 rejected for direct-form stability");

  const double fs2 = 2.0 * rate;
  const double warped = fs2 * std::tan(M_PI * cutoff_hz / rate);

  // Build conjugate-paired second-order sections straight from the analog
  // prototype poles (unit circle, left half plane; one real pole at -1 for
  // odd orders). Lowpass maps s -> warped*p, highpass s -> warped/p; the
  // bilinear transform then places each z-pole pair in one biquad. Zeros land
  // on z = -1 (lowpass) or z = +1 (highpass).
  std::vector<Biquad> sections;
  auto bilinear_pole = [&](std::complex<double> prototype) {
    const std::complex<double> s_pole =
        (kind == FilterKind::lowpass) ? warped * prototype : warped / prototype;
    return (fs2 + s_pole) / (fs2 - s_pole);
  };
  for (int k = 1; 2 * k <= order; ++k) {
    const double theta = M_PI / 2.0 + M_PI * (2.0 * k - 1.0) / (2.0 * order);
    const std::complex<double> zp =
        bilinear_pole({std::cos(theta), std::sin(theta)});
    Biquad s;
    s.a1 = -2.0 * zp.real();
    s.a2 = std::norm(zp);
    s.b0 = 1.0;
    s.b1 = (kind == FilterKind::lowpass) ? 2.0 : -2.0;
    s.b2 = 1.0;
    sections.push_back(s);
  }
  if (order % 2 == 1) {
    const double zp = bilinear_pole({-1.0, 0.0}).real();
    Biquad s;
    s.a1 = -zp;
    s.a2 = 0.0;
    s.b0 = 1.0;
    s.b1 = (kind == FilterKind::lowpass) ? 1.0 : -1.0;
    s.b2 = 0.0;
    sections.push_back(s);
  }

  // Per-section unit gain at the passband reference (DC for lowpass, Nyquist
  // for highpass) pins the overall reference gain to exactly 1.
  const std::complex<double> zinv_ref =
      (kind == FilterKind::lowpass) ? std::complex<double>(1.0, 0.0)
                                    : std::complex<double>(-1.0, 0.0);
  for (auto& s : sections) {
    const double g = std::abs(eval_biquad(s, zinv_ref));
    s.b0 /= g;
    s.b1 /= g;
    s.b2 /= g;
  }

  // Expanded transfer function, kept alongside the cascade.
  std::vector<double> num{1.0}, den{1.0};
  for (const auto& s : sections) {
    if (s.a2 == 0.0 && s.b2 == 0.0) {
      num = poly_multiply(num, {s.b0, s.b1});
      den = poly_multiply(den, {1.0, s.a1});
    } else {
      num = poly_multiply(num, {s.b0, s.b1, s.b2});
      den = poly_multiply(den, {1.0, s.a1, s.a2});
    }
  }
  return IirFilter{std::move(num), std::move(den), kind, cutoff_hz, order, std::move(sections)};
}

double filter_gain(const IirFilter& filter, double freq_hz, double rate) {
  const double omega = 2.0 * M_PI * freq_hz / rate;
  const std::complex<double> z(std::cos(omega), std::sin(omega));
  if (!filter.sections.empty()) {
    const std::complex<double> zinv = 1.0 / z;
    std::complex<double> g(1.0, 0.0);
    for (const auto& s : filter.sections) g *= eval_biquad(s, zinv);
    return std::abs(g);
  }
  return std::abs(eval_poly(filter.numerator, z) / eval_poly(filter.denominator, z));
}

bool is_stable(const IirFilter& filter) {
  if (!filter.sections.empty()) {
    // Jury criterion per quadratic: z^2 + a1 z + a2 stable iff |a2| < 1 and
    // |a1| < 1 + a2; first-order sections need |a1| < 1.
    for (const auto& s : filter.sections) {
      if (s.a2 == 0.0 && s.b2 == 0.0) {
        if (std::abs(s.a1) >= 1.0) return false;
      } else if (std::abs(s.a2) >= 1.0 || std::abs(s.a1) >= 1.0 + s.a2) {
        return false;
      }
    }
    return true;
  }
  const auto& a = filter.denominator;
  const std::size_t degree = a.size() - 1;
  if (degree == 0) return true;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(degree),
                                                    static_cast<Eigen::Index>(degree));
  for (std::size_t j = 0; j < degree; ++j)
    companion(0, static_cast<Eigen::Index>(j)) = -a[j + 1] / a[0];
  for (std::size_t i = 1; i < degree; ++i)
    companion(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i - 1)) = 1.0;
  const auto roots = companion.eigenvalues();
  for (Eigen::Index i = 0; i < roots.size(); ++i)
    if (std::abs(roots(i)) >= 1.0) return false;
  return true;
}

std::vector<double> filter_forward(const IirFilter& filter, const std::vector<double>& signal) {
  const double x0 = signal.empty() ? 0.0 : signal.front();
  if (!filter.sections.empty()) return run_sections(filter.sections, signal, x0);
  std::vector<double> zi = lfilter_zi(filter.numerator, filter.denominator);
  for (double& z : zi) z *= x0;
  return lfilter(filter.numerator, filter.denominator, signal, std::move(zi));
}

std::vector<double> filtfilt(const IirFilter& filter, const std::vector<double>& signal) {
  const std::size_t pad = static_cast<std::size_t>(3 * filter.order);
  if (signal.size() <= pad)
    raise(ErrorCode::invalid_argument,
          "filtfilt: input must be longer than 3 x filter order (" +
              std::to_string(signal.size()) + " <= " + std::to_string(pad) + ")");

  // Odd reflection about the endpoints.
  std::vector<double> ext;
  ext.reserve(signal.size() + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * signal.front() - signal[pad - i]);
  ext.insert(ext.end(), signal.begin(), signal.end());
  const std::size_t n = signal.size();
  for (std::size_t i = 0; i < pad; ++i) ext.push_back(2.0 * signal.back() - signal[n - 2 - i]);

  std::vector<double> forward = filter_forward(filter, ext);
  std::vector<double> backward = reversed(filter_forward(filter, reversed(std::move(forward))));

  std::vector<double> out(backward.begin() + static_cast<std::ptrdiff_t>(pad),
                          backward.begin() + static_cast<std::ptrdiff_t>(pad + n));
  require_finite(out, "filtfilt");
  return out;
}

TimeSeries filtfilt(const IirFilter& filter, const TimeSeries& ts) {
  ts.require_valid("filtfilt");
  TimeSeries out = ts;
  for (Eigen::Index c = 0; c < ts.channels(); ++c) {
    std::vector<double> row(ts.samples.row(c).begin(), ts.samples.row(c).end());
    std::vector<double> filtered = filtfilt(filter, row);
    out.samples.row(c) = Eigen::Map<Eigen::RowVectorXd>(filtered.data(),
                                                        static_cast<Eigen::Index>(filtered.size()));
  }
  return out;
}

namespace {

struct Ratio {
  std::int64_t up;    // L
  std::int64_t down;  // M
};

Ratio rational_ratio(double rate, double target_rate) {
  const double ri = std::round(rate);
  const double ti = std::round(target_rate);
  if (std::abs(rate - ri) > 1e-6 || std::abs(target_rate - ti) > 1e-6 || ri <= 0 || ti <= 0)
    raise(ErrorCode::invalid_argument, "resample: rates must be integral Hz");
  std::int64_t a = static_cast<std::int64_t>(ti);
  std::int64_t b = static_cast<std::int64_t>(ri);
  const std::int64_t g = std::gcd(a, b);
  return {a / g, b / g};
}

// Reflect an index into [0, n); mirrors about the end samples.
std::int64_t reflect_index(std::int64_t idx, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  idx = ((idx % period) + period) % period;
  return idx < n ? idx : period - idx;
}

}  // namespace

std::vector<double> resample_signal(const std::vector<double>& signal, double rate,
                                    double target_rate) {
  if (signal.empty()) raise(ErrorCode::invalid_argument, "resample: empty input");
  if (target_rate > rate)
    raise(ErrorCode::invalid_argument, "resample: upsampling is unsupported");
  if (target_rate == rate) return signal;

  const Ratio ratio = rational_ratio(rate, target_rate);
  const std::int64_t up = ratio.up;
  const std::int64_t down = ratio.down;
  const std::int64_t n = static_cast<std::int64_t>(signal.size());
  const std::int64_t out_n =
      std::llround(static_cast<double>(n) * target_rate / rate);

  // Windowed-sinc lowpass at the upsampled rate, cutoff 0.45 x target rate.
  const double internal_rate = rate * static_cast<double>(up);
  const double cutoff_norm = 0.45 * target_rate / internal_rate;  // cycles/sample
  const std::int64_t half = 12 * std::max<std::int64_t>(down / up, 1) + 1;
  const std::int64_t taps = 2 * half + 1;
  std::vector<double> h(static_cast<std::size_t>(taps));
  double sum = 0.0;
  for (std::int64_t k = 0; k < taps; ++k) {
    const double t = static_cast<double>(k - half);
    const double x = 2.0 * M_PI * cutoff_norm * t;
    const double sinc = (t == 0.0) ? 1.0 : std::sin(x) / x;
    // Blackman window
    const double w = 0.42 - 0.5 * std::cos(2.0 * M_PI * k / (taps - 1)) +
                     0.08 * std::cos(4.0 * M_PI * k / (taps - 1));
    h[static_cast<std::size_t>(k)] = sinc * w;
    sum += h[static_cast<std::size_t>(k)];
  }
  const double norm = static_cast<double>(up) / sum;
  for (double& c : h) c *= norm;

  std::vector<double> out(static_cast<std::size_t>(out_n));
  for (std::int64_t i = 0; i < out_n; ++i) {
    const std::int64_t center = i * down + half;  // index on the upsampled grid
    double acc = 0.0;
    // Only the taps hitting non-stuffed samples contribute.
    std::int64_t m = center - (((center % up) + up) % up);  // largest multiple of up <= center
    for (; m > center - taps; m -= up) {
      const std::int64_t k = center - m;
      const std::int64_t src = reflect_index(m / up, n);
      acc += h[static_cast<std::size_t>(k)] * signal[static_cast<std::size_t>(src)];
    }
    out[static_cast<std::size_t>(i)] = acc;
  }
  require_finite(out, "resample");
  return out;
}

TimeSeries resample(const TimeSeries& ts, double target_rate) {
  ts.require_valid("resample");
  TimeSeries out;
  out.rate = target_rate;
  out.channel_labels = ts.channel_labels;
  for (Eigen::Index c = 0; c < ts.channels(); ++c) {
    std::vector<double> row(ts.samples.row(c).begin(), ts.samples.row(c).end());
    std::vector<double> resampled = resample_signal(row, ts.rate, target_rate);
    if (c == 0)
      out.samples.resize(ts.channels(), static_cast<Eigen::Index>(resampled.size()));
    out.samples.row(c) = Eigen::Map<Eigen::RowVectorXd>(resampled.data(),
                                                        static_cast<Eigen::Index>(resampled.size()));
  }
  return out;
}

std::vector<double> hilbert_envelope(const std::vector<double>& signal, double rate) {
  if (rate <= 0.0) raise(ErrorCode::invalid_argument, "hilbert_envelope: rate must be positive");
  if (signal.empty()) raise(ErrorCode::invalid_argument, "hilbert_envelope: empty input");
  if (signal.size() < 16)
    raise(ErrorCode::invalid_argument, "hilbert_envelope: need at least 16 samples");

  const std::size_t n = signal.size();
  std::vector<std::complex<double>> spectrum = fft::forward_real(signal);
  // Analytic-signal multiplier: keep DC and Nyquist, double positive bins,
  // zero negative bins.
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n)
      spectrum[k] *= 2.0;
    else if (2 * k > n)
      spectrum[k] = 0.0;
  }
  std::vector<std::complex<double>> analytic = fft::transform(spectrum, true);
  std::vector<double> envelope(n);
  for (std::size_t i = 0; i < n; ++i) envelope[i] = std::abs(analytic[i]);
  require_finite(envelope, "hilbert_envelope");
  return envelope;
}

ZscoreResult zscore(const TimeSeries& ts) {
  ts.require_valid("zscore");
  ZscoreResult result;
  result.series = ts;
  const double n = static_cast<double>(ts.frames());
  for (Eigen::Index c = 0; c < ts.channels(); ++c) {
    const double mean = ts.samples.row(c).mean();
    Eigen::RowVectorXd centered = ts.samples.row(c).array() - mean;
    const double variance = centered.squaredNorm() / n;
    if (variance == 0.0) {
      result.series.samples.row(c).setZero();
      result.degenerate_channels.push_back(c);
    } else {
      result.series.samples.row(c) = centered / std::sqrt(variance);
    }
  }
  require_finite(result.series.samples, "zscore");
  return result;
}

}  // namespace neuromatch::sigproc
