#pragma once

#include <complex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gaitrt/common.hpp"

namespace gaitrt {

/// Uniformly sampled multichannel time series. Row i is taken at
/// start_ms + 1000 * i / rate_hz.
struct SampleSeries {
  double start_ms = 0.0;
  double rate_hz = 1.0;
  std::vector<std::string> channels;
  std::vector<double> data;  // row-major, channels.size() columns

  SampleSeries() = default;
  SampleSeries(double start, double rate, std::vector<std::string> names, std::size_t rows = 0);

  std::size_t rows() const { return channels.empty() ? 0 : data.size() / channels.size(); }
  std::size_t cols() const { return channels.size(); }
  double time_ms(std::size_t r) const { return start_ms + 1000.0 * static_cast<double>(r) / rate_hz; }
  double end_ms() const { return rows() == 0 ? start_ms : time_ms(rows() - 1); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }

  std::vector<double> column(std::size_t c) const;
  // Throws MissingChannel.
  std::size_t channel_index(std::string_view name) const;
  bool has_channel(std::string_view name) const;

  void append_row(std::span<const double> values);
  SampleSeries slice(std::size_t begin, std::size_t end) const;
  // Throws ShapeError when rate <= 0 or the data buffer is ragged.
  void validate() const;

  bool operator==(const SampleSeries&) const = default;
};

SampleSeries resample_linear(const SampleSeries& series, double target_rate_hz);

enum class FilterKind { Lowpass, Bandpass };

/// Second-order section b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
/// A first-order section has b2 = a2 = 0.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

/// Causal IIR filter run as a cascade of second-order sections in direct
/// form II transposed. Per-channel delay lines persist across calls, so a
/// signal filtered in chunks produces the same output as one call.
class IirFilter {
 public:
  IirFilter() = default;
  explicit IirFilter(std::vector<Biquad> sections) : sections_(std::move(sections)) {}

  const std::vector<Biquad>& sections() const { return sections_; }
  // Expanded transfer-function coefficients, a[0] = 1, equal lengths.
  std::vector<double> numerator() const;
  std::vector<double> denominator() const;
  std::complex<double> response(double freq_hz, double sample_rate_hz) const;

  std::size_t channel_count() const { return channels_; }
  void reset() { state_.clear(); channels_ = 0; }

  // Filters one sample per channel in place. Binds the channel count on
  // first use; afterwards a mismatch throws ShapeError.
  void step(std::span<double> frame);
  // Sets every delay line to the steady state of a constant input equal to
  // `frame`, binding the channel count like step. The next step with the
  // same input returns input * DC gain.
  void prime(std::span<const double> frame);

 private:
  std::vector<Biquad> sections_;
  std::vector<double> state_;  // [channel][section][2]
  std::size_t channels_ = 0;
};

IirFilter design_butterworth(int order, FilterKind kind, std::span<const double> cutoffs_hz,
                             double sample_rate_hz);

SampleSeries filter_stream(IirFilter& filter, const SampleSeries& chunk);

/// Per-feature standardization with population standard deviation.
/// Zero-variance features map to 0.
struct StandardScaler {
  std::vector<double> mean;
  std::vector<double> stddev;

  std::size_t features() const { return mean.size(); }
  void transform_inplace(std::span<double> row) const;
  bool operator==(const StandardScaler&) const = default;
};

StandardScaler scaler_fit(const Matrix& rows);
Matrix scaler_transform(const StandardScaler& scaler, const Matrix& rows);
Matrix scaler_inverse_transform(const StandardScaler& scaler, const Matrix& rows);

}  // namespace gaitrt
