#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitrt/common.hpp"
#include "gaitrt/features.hpp"
#include "gaitrt/gait.hpp"
#include "gaitrt/metrics.hpp"
#include "gaitrt/signal.hpp"
#include "gaitrt/synth.hpp"

namespace gaitrt {

// ---------------------------------------------------------------------------
// Wire format

// Sensor ids on the wire; IMUs follow ImuSite order.
inline constexpr std::uint8_t kRightInsoleId = 16;
inline constexpr std::uint8_t kLeftInsoleId = 17;
inline constexpr std::array<std::uint8_t, 6> kSensorIds{0, 1, 2, 3, kRightInsoleId, kLeftInsoleId};

// 9 for IMU ids, 8 for insole ids, 0 for unknown ids.
std::size_t sensor_channel_count(std::uint8_t sensor_id);
// Position of the id in kSensorIds; throws RangeError for unknown ids.
std::size_t sensor_slot(std::uint8_t sensor_id);
std::uint8_t insole_id(Foot foot);
std::string sensor_name(std::uint8_t sensor_id);

/// "GRT1", id u8, sequence u32, device time u64 ms, count u8, count f32;
/// integers and floats little-endian.
struct SensorPacket {
  std::uint8_t sensor_id = 0;
  std::uint32_t sequence = 0;
  std::uint64_t device_ms = 0;
  std::vector<float> values;

  bool operator==(const SensorPacket&) const = default;
};

inline constexpr std::size_t kPacketHeaderBytes = 18;

std::vector<std::uint8_t> encode_packet(const SensorPacket& p);
// Empty on bad magic, short or long buffers, unknown ids or a channel count
// that does not match the id.
std::optional<SensorPacket> decode_packet(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Replay dumps

/// One received datagram and its host arrival time.
struct DumpRecord {
  std::uint64_t host_ms = 0;
  std::vector<std::uint8_t> bytes;

  bool operator==(const DumpRecord&) const = default;
};

/// "GRTD", version u32, then per record: host ms u64, length u32, bytes.
void write_dump(std::ostream& os, std::span<const DumpRecord> records);
void write_dump_file(const std::filesystem::path& path, std::span<const DumpRecord> records);
// Throws FormatError on a bad header or a truncated record, IoError when the
// file cannot be opened.
std::vector<DumpRecord> read_dump(std::istream& is);
std::vector<DumpRecord> read_dump_file(const std::filesystem::path& path);

/// How a synthetic trial is turned into a received packet stream.
struct SessionSimOptions {
  std::uint64_t host_start_ms = 1'700'000'000'000ull;  // host time of trial time 0
  std::array<std::int64_t, 6> device_offset_ms{};     // device clock minus host clock, per sensor slot
  double transmit_delay_ms = 15.0;
  double jitter_ms = 0.0;    // arrival jitter, uniform in [-jitter, +jitter]
  double drop_rate = 0.0;    // probability that a packet never arrives
  std::uint64_t seed = 0;
};

/// Packets of every sensor row, sorted by arrival (ties by sensor slot).
std::vector<DumpRecord> session_from_trial(const Trial& trial, const SessionSimOptions& opt = {});

/// Host time of trial time 0 in stream (aligned) time when every first
/// packet arrived without jitter.
double stream_origin_ms(const SessionSimOptions& opt);

// ---------------------------------------------------------------------------
// Ingest and timestamp adjustment

struct RawSample {
  std::uint32_t sequence = 0;
  std::uint64_t device_ms = 0;
  std::uint64_t host_ms = 0;
  std::vector<float> values;
};

struct SensorCounters {
  std::uint64_t packets = 0;
  std::uint64_t dropped = 0;    // sequence gaps
  std::uint64_t reordered = 0;  // sequence not above the last one; discarded
  std::uint64_t repaired = 0;   // non-monotone device time replaced
};

struct IngestStats {
  std::array<SensorCounters, 6> sensors{};
  std::uint64_t malformed = 0;
  std::vector<std::string> timeouts;  // operator messages
};

/// Per-sensor raw buffers: validated packets in arrival order with
/// out-of-order sequence numbers discarded.
struct IngestResult {
  std::array<std::vector<RawSample>, 6> sensors;
  IngestStats stats;
};

/// Demultiplexes records. A sensor silent for more than `timeout_ms` of host
/// time (or missing entirely) is reported in stats.timeouts and logged.
IngestResult ingest(std::span<const DumpRecord> records, double timeout_ms = 2000.0);

/// Host-clock time of a sensor's samples: device time minus the offset
/// observed on the first packet. A device time that does not advance is
/// replaced by the previous time plus the sequence spacing.
class TimestampAligner {
 public:
  explicit TimestampAligner(double rate_hz = kSensorRateHz) : interval_ms_(1000.0 / rate_hz) {}
  double adjust(const RawSample& s, bool* repaired = nullptr);
  bool started() const { return started_; }
  double offset_ms() const { return offset_; }

 private:
  double interval_ms_;
  bool started_ = false;
  double offset_ = 0.0;
  std::uint64_t last_device_ = 0;
  std::uint32_t last_seq_ = 0;
  double last_time_ = 0.0;
};

struct AlignedSample {
  std::uint32_t sequence = 0;
  double time_ms = 0.0;
  std::vector<float> values;
};

std::array<std::vector<AlignedSample>, 6> timestamp_adjust(const std::array<std::vector<RawSample>, 6>& raw,
                                                           std::uint64_t* repaired = nullptr);

/// Linear upsampler of one sensor. Sample n (by sequence number) sits at
/// first_time + n * interval, so values on the nominal grid match
/// resample_linear bit for bit. Gaps interpolate between the nearest
/// received samples; beyond the newest sample the newest value is held.
class StreamUpsampler {
 public:
  explicit StreamUpsampler(std::size_t channels = 0, double rate_hz = kSensorRateHz)
      : channels_(channels), rate_hz_(rate_hz) {}
  void push(const AlignedSample& s);
  bool started() const { return started_; }
  double first_time_ms() const { return t0_; }
  // False before the first sample.
  bool sample(double t_ms, std::span<double> out) const;

 private:
  std::size_t channels_;
  double rate_hz_;
  bool started_ = false;
  double t0_ = 0.0;
  std::uint32_t seq0_ = 0;
  std::vector<std::int64_t> index_;  // received sample indices, increasing
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Per-tick predictors

class TickPredictor {
 public:
  using Stage = ChainEngine::Stage;
  using StageHook = ChainEngine::StageHook;
  virtual ~TickPredictor() = default;
  // stream_ms: the stream instant of this frame; frame: frame_columns() with
  // zeroed ground-truth slots.
  virtual void step(double stream_ms, std::span<const double> frame, const std::array<std::optional<double>, 2>& gc,
                    std::array<LegOutput, 2>& out, const StageHook& hook) = 0;
};

/// Trained models through the shared ChainEngine; moment windows take every
/// 10th 1 kHz frame, matching the 100 Hz training rows.
class ModelPredictor : public TickPredictor {
 public:
  explicit ModelPredictor(const ModelBundle& models, std::size_t window_spacing = 10)
      : engine_(models, window_spacing) {}
  void step(double, std::span<const double> frame, const std::array<std::optional<double>, 2>& gc,
            std::array<LegOutput, 2>& out, const StageHook& hook) override {
    engine_.step(frame, gc, out, hook);
  }

 private:
  ChainEngine engine_;
};

/// "Perfect models": each output is the ground truth interpolated at the
/// stream instant (trial time = stream time - origin). Validity follows the
/// stride clock like the model chain.
class GroundTruthOracle : public TickPredictor {
 public:
  GroundTruthOracle(SampleSeries ground_truth, double origin_ms);
  void step(double stream_ms, std::span<const double> frame, const std::array<std::optional<double>, 2>& gc,
            std::array<LegOutput, 2>& out, const StageHook& hook) override;

 private:
  SampleSeries gt_;
  double origin_;
  std::vector<double> row_;
};

// ---------------------------------------------------------------------------
// Real-time session

struct SessionConfig {
  FrontEndConfig front_end{};
  double output_cutoff_hz = 6.0;
  int output_order = 2;
  // Stream time trails the tick clock by this much so the packet after each
  // instant has normally arrived: one sensor interval plus jitter margin.
  double stream_delay_ms = 60.0;
  double sensor_timeout_ms = 2000.0;
  // Ticks later than this are skipped and counted instead of processed.
  double max_lag_ms = 20.0;
  bool as_fast_as_possible = false;
  // Buffer the whole window, then predict every tick after it closes.
  bool batch_at_end = false;
  std::size_t packet_queue_capacity = 1 << 14;
  std::size_t log_queue_capacity = 1 << 15;
  InsoleStrikeDetector::Params strike{};
  // Strike times in stream time replacing insole detection (test hook).
  std::optional<std::vector<HeelStrikeEvent>> external_strikes;
  std::filesystem::path out_dir;  // empty: no files
  bool keep_logs = true;          // keep the logs in memory for the caller
};

// Throws FormatError like read_protocol_config. Keys: output_cutoff_hz,
// output_order, stream_delay_ms, sensor_timeout_ms, max_lag_ms,
// batch_at_end, strike_fraction, strike_floor, debounce_ms.
SessionConfig read_session_config(std::istream& is, const std::string& source = "<stream>");

/// One log stream. Column 0 is host_ms for raw packet logs, aligned time for
/// adjusted packets and stream time for tick logs; NaN marks values that
/// were not produced.
struct LogTable {
  std::string name;
  std::vector<std::string> columns;
  Matrix rows;

  std::size_t column_index(std::string_view name) const;  // MissingChannel
  std::vector<double> column(std::string_view name) const;
};

/// File stems of the eleven logs, in write order.
std::vector<std::string> log_names();

struct PredictionLogSet {
  std::vector<LogTable> tables;  // log_names() order
  const LogTable& get(std::string_view name) const;
};

void write_log_csv(std::ostream& os, const LogTable& t);
LogTable read_log_csv(std::istream& is, const std::string& name, const std::string& source = "<stream>");
PredictionLogSet read_logs(const std::filesystem::path& dir);

struct StageLatency {
  // Completion of each stage for the final tick, after the end of the
  // collection window (ms).
  double grf_done_ms = 0.0, angles_done_ms = 0.0, moments_done_ms = 0.0;
  // Per-tick processing latency: moments done minus tick due.
  double latency_p50_ms = 0.0, latency_p95_ms = 0.0, latency_max_ms = 0.0;
};

struct SessionResult {
  PredictionLogSet logs;
  StageLatency latency;
  IngestStats ingest;
  std::uint64_t ticks = 0;
  std::uint64_t skipped_ticks = 0;
  std::uint64_t dropped_log_rows = 0;
  std::vector<HeelStrikeEvent> strikes;  // stream time
};

std::string latency_report(const SessionResult& r);

/// Packet source feeding the ingest unit. next() blocks until a record is
/// available and returns false at the end of the session.
class PacketSource {
 public:
  virtual ~PacketSource() = default;
  // Called once, just before the first next(); starts the source clock.
  virtual void start() {}
  virtual bool next(DumpRecord& rec) = 0;
  // Host time now, in the clock of the records.
  virtual double host_now_ms() const = 0;
  // Host time at which no further records can arrive, once known.
  virtual std::optional<double> end_ms() const = 0;
  // Records arrive in wall-clock time rather than as fast as they are read.
  virtual bool paced() const = 0;
  // Wall-clock instant of a host time.
  virtual std::chrono::steady_clock::time_point wall_of(double host_ms) const = 0;
};

/// Replays records, paced at their recorded arrival times unless `fast`.
std::unique_ptr<PacketSource> replay_source(std::vector<DumpRecord> records, bool fast);

/// Receives datagrams on addr:port for `duration_s` of host time. Throws
/// IoError when the socket cannot be bound.
std::unique_ptr<PacketSource> udp_source(const std::string& listen, double duration_s);

/// Sends records to addr:port at their relative arrival times (or at once).
void udp_send(std::span<const DumpRecord> records, const std::string& target, bool paced);

/// Three units: ingest (source to packet queue), process (1 kHz ticks,
/// front end, stride clock, predictor, output filters) and log (drains a
/// bounded queue). In paced mode a full log queue drops rows and counts
/// them; in fast mode the queues block, so logs are complete and
/// reproducible.
SessionResult run_session(PacketSource& source, TickPredictor& predictor, const SessionConfig& cfg);

// Convenience wrappers.
SessionResult replay_session(std::vector<DumpRecord> records, TickPredictor& predictor, const SessionConfig& cfg);

// ---------------------------------------------------------------------------
// Comparison with a reference dataset

inline constexpr std::size_t kComparedVariables = 1 + 2 * kJointCount;

struct VariableComparison {
  std::string variable;
  double r = 0.0;
  double r_squared = 0.0;
  std::size_t rt_cycles = 0, reference_cycles = 0;
  GcProfile rt, reference;
};

struct ComparisonOptions {
  bool filtered = false;  // compare the smoothed angle/moment logs
};

/// Ensemble averages of the RT predictions (cycles delimited by wraps of
/// each leg's logged GC%, both legs pooled) and of the reference ground
/// truth resampled to 1 kHz (cycles from its GC% channels); Pearson r and
/// the coefficient of determination between the 101-point mean profiles of
/// vGRF, five angles and five moments. InsufficientData without a complete
/// cycle on either side.
std::vector<VariableComparison> compare_to_reference(const PredictionLogSet& logs, std::span<const Trial> reference,
                                                     const ComparisonOptions& opt = {});

std::string comparison_report(std::span<const VariableComparison> rows);
// variable, gc_percent, rt_mean, rt_std, reference_mean, reference_std.
void write_profiles_csv(std::ostream& os, std::span<const VariableComparison> rows);

}  // namespace gaitrt
