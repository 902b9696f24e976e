#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "gaitrt/common.hpp"
#include "gaitrt/signal.hpp"

namespace gaitrt {

enum class StrikeSource : std::uint8_t { ForcePlate, Insole, Generator };

struct HeelStrikeEvent {
  double time_ms = 0.0;
  Foot foot = Foot::Right;
  StrikeSource source = StrikeSource::Generator;

  bool operator==(const HeelStrikeEvent&) const = default;
};

inline constexpr double kDebounceMs = 300.0;
inline constexpr double kGcClampPercent = 99.999;

/// Upward threshold crossings (previous < threshold <= current) of a
/// single-channel force series, at least `debounce_ms` apart.
std::vector<HeelStrikeEvent> detect_heel_strikes(const SampleSeries& force, double threshold, Foot foot,
                                                 StrikeSource source, double debounce_ms = kDebounceMs);

/// 100 * (t - s_i) / (s_{i+1} - s_i) for the stride [s_i, s_{i+1}) that
/// contains t. Throws OutOfStride.
double gc_percent_offline(std::span<const double> strike_times_ms, double t_ms);

/// Real-time gait-cycle clock: GC% is extrapolated from the last strike
/// using the duration of the previous stride.
class StrideClock {
 public:
  void on_strike(Foot foot, double t_ms);
  bool ready(Foot foot) const { return legs_[idx(foot)].strikes >= 2; }
  // Throws WarmupIncomplete until two strikes of this foot were observed.
  double gc_percent(Foot foot, double t_ms) const;
  double last_strike(Foot foot) const { return legs_[idx(foot)].last; }
  double previous_stride(Foot foot) const { return legs_[idx(foot)].previous; }

 private:
  struct Leg {
    int strikes = 0;
    double last = 0.0;
    double previous = 0.0;
  };
  static std::size_t idx(Foot f) { return static_cast<std::size_t>(f); }
  std::array<Leg, 2> legs_{};
};

/// Streaming heel-strike detector on a summed insole signal. The threshold
/// is a fraction of the running maximum, with an absolute floor.
class InsoleStrikeDetector {
 public:
  struct Params {
    double fraction_of_max = 0.10;
    double floor = 0.2;
    double debounce_ms = kDebounceMs;
  };
  InsoleStrikeDetector() = default;
  explicit InsoleStrikeDetector(Params p) : params_(p) {}

  // Returns the crossing time when this sample completes an upward crossing.
  std::optional<double> push(double t_ms, double value);
  double threshold() const;

 private:
  Params params_{};
  double running_max_ = 0.0;
  double previous_ = 0.0;
  bool has_previous_ = false;
  std::optional<double> last_event_;
};

/// One stride of a trial. The segment's own foot is the lead foot: channels
/// of that leg carry lead flag 1, the other leg 0.
struct GaitCycleSegment {
  int subject_id = 0;
  int trial_id = 0;
  Foot foot = Foot::Right;
  int stride_index = 0;
  std::size_t first_row = 0;  // row offset into the source series
  SampleSeries samples;
  std::vector<double> gc_percent;

  double lead_flag(Foot leg) const { return leg == foot ? 1.0 : 0.0; }
};

/// Row range of one complete stride inside a series: rows whose time lies in
/// [start_ms, end_ms).
struct StrideBounds {
  Foot foot = Foot::Right;
  int stride_index = 0;
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::size_t first_row = 0;
  std::size_t end_row = 0;
};

std::vector<StrideBounds> stride_bounds(const SampleSeries& series,
                                        std::span<const HeelStrikeEvent> strikes);

/// One segment per complete stride per foot, sorted by (foot, time).
/// Throws EmptyTrial when no foot has two strikes inside the series.
std::vector<GaitCycleSegment> segment_cycles(const SampleSeries& trial,
                                             std::span<const HeelStrikeEvent> strikes,
                                             int subject_id = 0, int trial_id = 0);

std::vector<double> strike_times(std::span<const HeelStrikeEvent> strikes, Foot foot);

}  // namespace gaitrt
