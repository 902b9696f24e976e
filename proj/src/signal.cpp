#include "gaitrt/signal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace gaitrt {

SampleSeries::SampleSeries(double start, double rate, std::vector<std::string> names,
                           std::size_t rows)
    : start_ms(start), rate_hz(rate), channels(std::move(names)) {
  data.assign(rows * channels.size(), 0.0);
}

std::vector<double> SampleSeries::column(std::size_t c) const {
  std::vector<double> out(rows());
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = at(r, c);
  return out;
}

std::size_t SampleSeries::channel_index(std::string_view name) const {
  for (std::size_t i = 0; i < channels.size(); ++i)
    if (channels[i] == name) return i;
  fail(ErrorCode::MissingChannel, "missing channel '" + std::string(name) + "'");
}

bool SampleSeries::has_channel(std::string_view name) const {
  return std::find(channels.begin(), channels.end(), name) != channels.end();
}

void SampleSeries::append_row(std::span<const double> values) {
  if (values.size() != cols()) fail(ErrorCode::ShapeError, "append_row: channel count mismatch");
  data.insert(data.end(), values.begin(), values.end());
}

SampleSeries SampleSeries::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, rows());
  begin = std::min(begin, end);
  SampleSeries out(time_ms(begin), rate_hz, channels);
  out.data.assign(data.begin() + static_cast<std::ptrdiff_t>(begin * cols()),
                  data.begin() + static_cast<std::ptrdiff_t>(end * cols()));
  return out;
}

void SampleSeries::validate() const {
  if (!(rate_hz > 0.0)) fail(ErrorCode::ShapeError, "sample rate must be positive");
  if (channels.empty() ? !data.empty() : data.size() % channels.size() != 0)
    fail(ErrorCode::ShapeError, "ragged sample buffer");
}

SampleSeries resample_linear(const SampleSeries& series, double target_rate_hz) {
  series.validate();
  if (!(target_rate_hz > 0.0)) fail(ErrorCode::ShapeError, "target rate must be positive");
  const std::size_t n = series.rows();
  if (n < 2) fail(ErrorCode::InsufficientData, "resample_linear needs at least 2 rows");

  const double ratio = series.rate_hz / target_rate_hz;  // input rows per output row
  const double span_rows = static_cast<double>(n - 1) / ratio;
  const auto out_rows = static_cast<std::size_t>(std::floor(span_rows + 1e-9)) + 1;
  const std::size_t c = series.cols();

  SampleSeries out(series.start_ms, target_rate_hz, series.channels, out_rows);
  for (std::size_t k = 0; k < out_rows; ++k) {
    // k * rate / target is exact whenever the output instant hits an input row.
    const double pos = static_cast<double>(k) * series.rate_hz / target_rate_hz;
    auto j = static_cast<std::size_t>(std::floor(pos));
    double frac = pos - static_cast<double>(j);
    if (j >= n - 1) {
      j = n - 1;
      frac = 0.0;
    }
    auto dst = out.row(k);
    auto lo = series.row(j);
    if (frac == 0.0) {
      std::copy(lo.begin(), lo.end(), dst.begin());
    } else {
      auto hi = series.row(j + 1);
      for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = lo[ch] + frac * (hi[ch] - lo[ch]);
    }
  }
  return out;
}

namespace {

using cplx = std::complex<double>;

std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

cplx section_response(const Biquad& s, cplx zinv) {
  const cplx num = s.b0 + zinv * (s.b1 + zinv * s.b2);
  const cplx den = 1.0 + zinv * (s.a1 + zinv * s.a2);
  return num / den;
}

}  // namespace

std::vector<double> IirFilter::numerator() const {
  std::vector<double> acc{1.0};
  for (const auto& s : sections_) acc = poly_mul(acc, {s.b0, s.b1, s.b2});
  return acc;
}

std::vector<double> IirFilter::denominator() const {
  std::vector<double> acc{1.0};
  for (const auto& s : sections_) acc = poly_mul(acc, {1.0, s.a1, s.a2});
  return acc;
}

std::complex<double> IirFilter::response(double freq_hz, double sample_rate_hz) const {
  const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
  const cplx zinv = std::polar(1.0, -w);
  cplx h = 1.0;
  for (const auto& s : sections_) h *= section_response(s, zinv);
  return h;
}

void IirFilter::step(std::span<double> frame) {
  if (channels_ == 0) {
    channels_ = frame.size();
    state_.assign(channels_ * sections_.size() * 2, 0.0);
  } else if (frame.size() != channels_) {
    fail(ErrorCode::ShapeError, "filter bound to " + std::to_string(channels_) +
                                    " channels, got " + std::to_string(frame.size()));
  }
  const std::size_t ns = sections_.size();
  for (std::size_t ch = 0; ch < channels_; ++ch) {
    double x = frame[ch];
    double* st = state_.data() + ch * ns * 2;
    for (std::size_t k = 0; k < ns; ++k) {
      const Biquad& s = sections_[k];
      const double y = s.b0 * x + st[0];
      st[0] = s.b1 * x - s.a1 * y + st[1];
      st[1] = s.b2 * x - s.a2 * y;
      st += 2;
      x = y;
    }
    frame[ch] = x;
  }
}

void IirFilter::prime(std::span<const double> frame) {
  channels_ = frame.size();
  const std::size_t ns = sections_.size();
  state_.assign(channels_ * ns * 2, 0.0);
  for (std::size_t ch = 0; ch < channels_; ++ch) {
    double x = frame[ch];
    double* st = state_.data() + ch * ns * 2;
    for (std::size_t k = 0; k < ns; ++k) {
      const Biquad& s = sections_[k];
      const double y = x * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
      st[1] = s.b2 * x - s.a2 * y;
      st[0] = s.b1 * x - s.a1 * y + st[1];
      st += 2;
      x = y;
    }
  }
}

IirFilter design_butterworth(int order, FilterKind kind, std::span<const double> cutoffs_hz,
                             double sample_rate_hz) {
  if (order < 1) fail(ErrorCode::InvalidOrder, "filter order must be >= 1");
  if (!(sample_rate_hz > 0.0)) fail(ErrorCode::InvalidCutoff, "sample rate must be positive");
  const std::size_t want = kind == FilterKind::Lowpass ? 1 : 2;
  if (cutoffs_hz.size() != want)
    fail(ErrorCode::InvalidCutoff, kind == FilterKind::Lowpass ? "lowpass needs one cutoff"
                                                               : "bandpass needs two cutoffs");
  const double nyquist = sample_rate_hz / 2.0;
  for (double f : cutoffs_hz)
    if (!(f > 0.0 && f < nyquist))
      fail(ErrorCode::InvalidCutoff, "cutoff " + std::to_string(f) + " Hz outside (0, Nyquist)");
  if (kind == FilterKind::Bandpass && !(cutoffs_hz[0] < cutoffs_hz[1]))
    fail(ErrorCode::InvalidCutoff, "bandpass cutoffs must ascend");

  const double fs2 = 2.0 * sample_rate_hz;
  auto prewarp = [&](double f) { return fs2 * std::tan(std::numbers::pi * f / sample_rate_hz); };

  // Analog prototype poles on the unit circle, left half plane.
  std::vector<cplx> proto;
  for (int k = 1; k <= order; ++k)
    proto.push_back(std::polar(1.0, std::numbers::pi * (2.0 * k + order - 1) / (2.0 * order)));

  std::vector<cplx> analog;
  double w0 = 0.0;
  if (kind == FilterKind::Lowpass) {
    const double wc = prewarp(cutoffs_hz[0]);
    for (auto p : proto) analog.push_back(wc * p);
  } else {
    const double w1 = prewarp(cutoffs_hz[0]);
    const double w2 = prewarp(cutoffs_hz[1]);
    w0 = std::sqrt(w1 * w2);
    const double bw = w2 - w1;
    for (auto p : proto) {
      const cplx pb = p * bw;
      const cplx disc = std::sqrt(pb * pb - 4.0 * w0 * w0);
      analog.push_back((pb + disc) / 2.0);
      analog.push_back((pb - disc) / 2.0);
    }
  }

  std::vector<cplx> digital;
  for (auto s : analog) digital.push_back((fs2 + s) / (fs2 - s));

  // Conjugate pairs become one section each; real poles pair up in order.
  const double tol = 1e-12;
  std::vector<cplx> upper;
  std::vector<double> reals;
  for (auto z : digital) {
    if (std::abs(z.imag()) <= tol * std::max(1.0, std::abs(z)))
      reals.push_back(z.real());
    else if (z.imag() > 0)
      upper.push_back(z);
  }
  std::sort(upper.begin(), upper.end(),
            [](cplx a, cplx b) { return std::abs(a) < std::abs(b); });
  std::sort(reals.begin(), reals.end());

  std::vector<Biquad> sections;
  const bool bandpass = kind == FilterKind::Bandpass;
  auto numerator_for = [&](Biquad& s, bool second_order) {
    if (bandpass) {
      s.b0 = 1.0; s.b1 = 0.0; s.b2 = -1.0;
    } else if (second_order) {
      s.b0 = 1.0; s.b1 = 2.0; s.b2 = 1.0;
    } else {
      s.b0 = 1.0; s.b1 = 1.0; s.b2 = 0.0;
    }
  };
  for (std::size_t i = 0; i + 1 < reals.size(); i += 2) {
    Biquad s;
    s.a1 = -(reals[i] + reals[i + 1]);
    s.a2 = reals[i] * reals[i + 1];
    numerator_for(s, true);
    sections.push_back(s);
  }
  for (auto z : upper) {
    Biquad s;
    s.a1 = -2.0 * z.real();
    s.a2 = std::norm(z);
    numerator_for(s, true);
    sections.push_back(s);
  }
  if (reals.size() % 2 == 1) {
    Biquad s;
    s.a1 = -reals.back();
    s.a2 = 0.0;
    numerator_for(s, false);
    sections.push_back(s);
  }

  // Unit gain at DC (lowpass) or at the prewarped centre frequency (bandpass),
  // applied per section.
  const double w_norm = bandpass ? 2.0 * std::atan(w0 / fs2) : 0.0;
  const cplx zinv = std::polar(1.0, -w_norm);
  for (auto& s : sections) {
    const double g = 1.0 / std::abs(section_response(s, zinv));
    s.b0 *= g;
    s.b1 *= g;
    s.b2 *= g;
  }
  return IirFilter(std::move(sections));
}

SampleSeries filter_stream(IirFilter& filter, const SampleSeries& chunk) {
  chunk.validate();
  if (filter.channel_count() != 0 && filter.channel_count() != chunk.cols())
    fail(ErrorCode::ShapeError, "filter_stream: channel count mismatch");
  SampleSeries out = chunk;
  for (std::size_t r = 0; r < out.rows(); ++r) filter.step(out.row(r));
  return out;
}

void StandardScaler::transform_inplace(std::span<double> row) const {
  if (row.size() != mean.size()) fail(ErrorCode::ShapeError, "scaler: feature count mismatch");
  for (std::size_t j = 0; j < row.size(); ++j)
    row[j] = stddev[j] > 0.0 ? (row[j] - mean[j]) / stddev[j] : 0.0;
}

StandardScaler scaler_fit(const Matrix& rows) {
  if (rows.rows == 0) fail(ErrorCode::EmptyInput, "scaler_fit needs at least one row");
  StandardScaler s;
  s.mean.assign(rows.cols, 0.0);
  s.stddev.assign(rows.cols, 0.0);
  const double n = static_cast<double>(rows.rows);
  for (std::size_t r = 0; r < rows.rows; ++r)
    for (std::size_t j = 0; j < rows.cols; ++j) s.mean[j] += rows(r, j);
  for (auto& m : s.mean) m /= n;
  for (std::size_t r = 0; r < rows.rows; ++r)
    for (std::size_t j = 0; j < rows.cols; ++j) {
      const double d = rows(r, j) - s.mean[j];
      s.stddev[j] += d * d;
    }
  for (auto& v : s.stddev) v = std::sqrt(v / n);
  return s;
}

Matrix scaler_transform(const StandardScaler& scaler, const Matrix& rows) {
  if (rows.cols != scaler.features()) fail(ErrorCode::ShapeError, "scaler: feature count mismatch");
  Matrix out = rows;
  for (std::size_t r = 0; r < out.rows; ++r) scaler.transform_inplace(out.row(r));
  return out;
}

Matrix scaler_inverse_transform(const StandardScaler& scaler, const Matrix& rows) {
  if (rows.cols != scaler.features()) fail(ErrorCode::ShapeError, "scaler: feature count mismatch");
  Matrix out = rows;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t j = 0; j < out.cols; ++j)
      out(r, j) = scaler.mean[j] + scaler.stddev[j] * out(r, j);
  return out;
}

}  // namespace gaitrt
