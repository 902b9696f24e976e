#include "gaitrt/gait.hpp"

#include <algorithm>
#include <cmath>

namespace gaitrt {

std::vector<HeelStrikeEvent> detect_heel_strikes(const SampleSeries& force, double threshold, Foot foot,
                                                 StrikeSource source, double debounce_ms) {
  force.validate();
  if (force.rows() == 0) fail(ErrorCode::InsufficientData, "detect_heel_strikes: empty series");
  if (force.cols() != 1) fail(ErrorCode::ShapeError, "detect_heel_strikes expects one channel");
  std::vector<HeelStrikeEvent> events;
  for (std::size_t i = 1; i < force.rows(); ++i) {
    if (!(force.at(i - 1, 0) < threshold && threshold <= force.at(i, 0))) continue;
    const double t = force.time_ms(i);
    if (!events.empty() && t - events.back().time_ms < debounce_ms) continue;
    events.push_back({t, foot, source});
  }
  return events;
}

double gc_percent_offline(std::span<const double> strikes, double t) {
  // First strike strictly after t; the stride starts at the one before it.
  auto next = std::upper_bound(strikes.begin(), strikes.end(), t);
  if (next == strikes.begin() || next == strikes.end())
    fail(ErrorCode::OutOfStride, "time " + std::to_string(t) + " ms is outside every stride");
  const double s0 = *(next - 1);
  const double s1 = *next;
  return 100.0 * (t - s0) / (s1 - s0);
}

void StrideClock::on_strike(Foot foot, double t_ms) {
  Leg& leg = legs_[idx(foot)];
  if (leg.strikes > 0) leg.previous = t_ms - leg.last;
  leg.last = t_ms;
  ++leg.strikes;
}

double StrideClock::gc_percent(Foot foot, double t_ms) const {
  const Leg& leg = legs_[idx(foot)];
  if (leg.strikes < 2 || !(leg.previous > 0.0))
    fail(ErrorCode::WarmupIncomplete, "stride clock needs two strikes per foot");
  const double gc = 100.0 * (t_ms - leg.last) / leg.previous;
  return std::clamp(gc, 0.0, kGcClampPercent);
}

double InsoleStrikeDetector::threshold() const {
  return std::max(params_.fraction_of_max * running_max_, params_.floor);
}

std::optional<double> InsoleStrikeDetector::push(double t_ms, double value) {
  running_max_ = std::max(running_max_, value);
  const double thr = threshold();
  std::optional<double> out;
  if (has_previous_ && previous_ < thr && thr <= value &&
      (!last_event_ || t_ms - *last_event_ >= params_.debounce_ms)) {
    last_event_ = t_ms;
    out = t_ms;
  }
  previous_ = value;
  has_previous_ = true;
  return out;
}

std::vector<double> strike_times(std::span<const HeelStrikeEvent> strikes, Foot foot) {
  std::vector<double> out;
  for (const auto& e : strikes)
    if (e.foot == foot) out.push_back(e.time_ms);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<StrideBounds> stride_bounds(const SampleSeries& series,
                                        std::span<const HeelStrikeEvent> strikes) {
  std::vector<StrideBounds> out;
  if (series.rows() == 0) return out;
  const double first_t = series.start_ms;
  const double last_t = series.end_ms();
  auto row_at_or_after = [&](double t) {
    const double pos = (t - series.start_ms) * series.rate_hz / 1000.0;
    auto r = static_cast<std::size_t>(std::max(0.0, std::ceil(pos - 1e-9)));
    return std::min(r, series.rows());
  };
  for (Foot foot : kFeet) {
    const auto times = strike_times(strikes, foot);
    int stride = 0;
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
      if (times[i] < first_t || times[i + 1] > last_t) continue;
      StrideBounds b;
      b.foot = foot;
      b.stride_index = stride++;
      b.start_ms = times[i];
      b.end_ms = times[i + 1];
      b.first_row = row_at_or_after(times[i]);
      b.end_row = row_at_or_after(times[i + 1]);
      if (b.end_row > b.first_row) out.push_back(b);
    }
  }
  return out;
}

std::vector<GaitCycleSegment> segment_cycles(const SampleSeries& trial,
                                             std::span<const HeelStrikeEvent> strikes, int subject_id,
                                             int trial_id) {
  const auto bounds = stride_bounds(trial, strikes);
  if (bounds.empty()) fail(ErrorCode::EmptyTrial, "trial contains no complete stride");
  std::vector<GaitCycleSegment> out;
  out.reserve(bounds.size());
  for (const auto& b : bounds) {
    GaitCycleSegment seg;
    seg.subject_id = subject_id;
    seg.trial_id = trial_id;
    seg.foot = b.foot;
    seg.stride_index = b.stride_index;
    seg.first_row = b.first_row;
    seg.samples = trial.slice(b.first_row, b.end_row);
    seg.gc_percent.reserve(b.end_row - b.first_row);
    const double duration = b.end_ms - b.start_ms;
    for (std::size_t r = b.first_row; r < b.end_row; ++r)
      seg.gc_percent.push_back(100.0 * (trial.time_ms(r) - b.start_ms) / duration);
    out.push_back(std::move(seg));
  }
  return out;
}

}  // namespace gaitrt
