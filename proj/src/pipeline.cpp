#include "gaitrt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <thread>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <boost/lockfree/spsc_queue.hpp>
#include <spdlog/spdlog.h>

#include "gaitrt/binary_io.hpp"
#include "gaitrt/format.hpp"

namespace gaitrt {

namespace {
constexpr char kPacketMagic[4] = {'G', 'R', 'T', '1'};
constexpr std::uint32_t kDumpVersion = 1;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}  // namespace

// ---------------------------------------------------------------------------
// Wire format

std::size_t sensor_channel_count(std::uint8_t id) {
  if (id <= 3) return kImuAxes;
  if (id == kRightInsoleId || id == kLeftInsoleId) return kFsrPerFoot;
  return 0;
}

std::size_t sensor_slot(std::uint8_t id) {
  for (std::size_t i = 0; i < kSensorIds.size(); ++i)
    if (kSensorIds[i] == id) return i;
  fail(ErrorCode::RangeError, "unknown sensor id " + std::to_string(id));
}

std::uint8_t insole_id(Foot foot) { return foot == Foot::Right ? kRightInsoleId : kLeftInsoleId; }

std::string sensor_name(std::uint8_t id) {
  if (id <= 3) return "imu_" + std::string(kImuSiteCodes[id]);
  if (id == kRightInsoleId) return "insole_r";
  if (id == kLeftInsoleId) return "insole_l";
  return "sensor" + std::to_string(id);
}

std::vector<std::uint8_t> encode_packet(const SensorPacket& p) {
  if (p.values.size() != sensor_channel_count(p.sensor_id))
    fail(ErrorCode::ShapeError, "packet channel count does not match sensor " + std::to_string(p.sensor_id));
  std::vector<std::uint8_t> out(kPacketHeaderBytes + 4 * p.values.size());
  std::uint8_t* w = out.data();
  std::memcpy(w, kPacketMagic, 4);
  w[4] = p.sensor_id;
  std::memcpy(w + 5, &p.sequence, 4);
  std::memcpy(w + 9, &p.device_ms, 8);
  w[17] = static_cast<std::uint8_t>(p.values.size());
  std::memcpy(w + kPacketHeaderBytes, p.values.data(), 4 * p.values.size());
  return out;
}

std::optional<SensorPacket> decode_packet(std::span<const std::uint8_t> b) {
  if (b.size() < kPacketHeaderBytes || std::memcmp(b.data(), kPacketMagic, 4) != 0) return std::nullopt;
  SensorPacket p;
  p.sensor_id = b[4];
  const std::size_t n = b[17];
  if (n == 0 || n != sensor_channel_count(p.sensor_id) || b.size() != kPacketHeaderBytes + 4 * n) return std::nullopt;
  std::memcpy(&p.sequence, b.data() + 5, 4);
  std::memcpy(&p.device_ms, b.data() + 9, 8);
  p.values.resize(n);
  std::memcpy(p.values.data(), b.data() + kPacketHeaderBytes, 4 * n);
  return p;
}

// ---------------------------------------------------------------------------
// Dumps

void write_dump(std::ostream& os, std::span<const DumpRecord> records) {
  bin::put_magic(os, "GRTD", kDumpVersion);
  for (const auto& r : records) {
    bin::put<std::uint64_t>(os, r.host_ms);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(r.bytes.size()));
    os.write(reinterpret_cast<const char*>(r.bytes.data()), static_cast<std::streamsize>(r.bytes.size()));
  }
  if (!os) fail(ErrorCode::IoError, "dump write failed");
}

void write_dump_file(const std::filesystem::path& path, std::span<const DumpRecord> records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot create " + path.string());
  write_dump(os, records);
}

std::vector<DumpRecord> read_dump(std::istream& is) {
  const std::uint32_t version = bin::expect_magic(is, "GRTD");
  if (version != kDumpVersion) fail(ErrorCode::FormatError, "unsupported dump version " + std::to_string(version));
  std::vector<DumpRecord> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    DumpRecord r;
    r.host_ms = bin::get<std::uint64_t>(is);
    const auto n = bin::get<std::uint32_t>(is);
    if (n > 65536) fail(ErrorCode::FormatError, "implausible record length in dump");
    r.bytes.resize(n);
    if (n && !is.read(reinterpret_cast<char*>(r.bytes.data()), n))
      fail(ErrorCode::FormatError, "truncated record " + std::to_string(out.size()) + " in dump");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<DumpRecord> read_dump_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
  return read_dump(is);
}

std::vector<DumpRecord> session_from_trial(const Trial& trial, const SessionSimOptions& opt) {
  const SampleSeries& s = trial.sensors;
  std::array<std::vector<std::size_t>, 6> cols;
  for (std::size_t slot = 0; slot < 6; ++slot) {
    const std::uint8_t id = kSensorIds[slot];
    const auto names = id <= 3 ? imu_channels(static_cast<ImuSite>(id))
                               : fsr_channels(id == kRightInsoleId ? Foot::Right : Foot::Left);
    for (const auto& n : names) cols[slot].push_back(s.channel_index(n));
  }
  Rng rng(opt.seed);
  struct Pending {
    double arrival;
    DumpRecord rec;
  };
  std::vector<Pending> out;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    const double t = s.time_ms(r);
    for (std::size_t slot = 0; slot < 6; ++slot) {
      const bool drop = opt.drop_rate > 0.0 && rng.uniform() < opt.drop_rate;
      const double jitter = opt.jitter_ms > 0.0 ? rng.uniform(-opt.jitter_ms, opt.jitter_ms) : 0.0;
      if (drop) continue;
      SensorPacket p;
      p.sensor_id = kSensorIds[slot];
      p.sequence = static_cast<std::uint32_t>(r);
      p.device_ms = static_cast<std::uint64_t>(static_cast<std::int64_t>(opt.host_start_ms) +
                                               std::llround(t) + opt.device_offset_ms[slot]);
      for (auto c : cols[slot]) p.values.push_back(static_cast<float>(s.at(r, c)));
      const double arrival = std::round(static_cast<double>(opt.host_start_ms) + t + opt.transmit_delay_ms + jitter);
      out.push_back({arrival, {static_cast<std::uint64_t>(arrival), encode_packet(p)}});
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const Pending& a, const Pending& b) { return a.arrival < b.arrival; });
  std::vector<DumpRecord> recs;
  recs.reserve(out.size());
  for (auto& p : out) recs.push_back(std::move(p.rec));
  return recs;
}

double stream_origin_ms(const SessionSimOptions& opt) {
  return static_cast<double>(opt.host_start_ms) + std::round(opt.transmit_delay_ms);
}

// ---------------------------------------------------------------------------
// Ingest and alignment

IngestResult ingest(std::span<const DumpRecord> records, double timeout_ms) {
  IngestResult res;
  std::array<std::optional<std::uint32_t>, 6> last_seq;
  std::array<std::optional<double>, 6> last_host;
  auto silent = [&](std::size_t slot, double from, double to) {
    if (to - from > timeout_ms) {
      const std::string msg = "sensor " + sensor_name(kSensorIds[slot]) + " silent for " +
                              format_double(to - from) + " ms";
      spdlog::warn("{}", msg);
      res.stats.timeouts.push_back(msg);
    }
  };
  const double start = records.empty() ? 0.0 : static_cast<double>(records.front().host_ms);
  for (const auto& rec : records) {
    const auto p = decode_packet(rec.bytes);
    if (!p) {
      ++res.stats.malformed;
      continue;
    }
    const std::size_t slot = sensor_slot(p->sensor_id);
    SensorCounters& c = res.stats.sensors[slot];
    const auto host = static_cast<double>(rec.host_ms);
    silent(slot, last_host[slot].value_or(start), host);
    last_host[slot] = host;
    if (last_seq[slot]) {
      if (p->sequence <= *last_seq[slot]) {
        ++c.reordered;
        continue;
      }
      c.dropped += p->sequence - *last_seq[slot] - 1;
    }
    last_seq[slot] = p->sequence;
    ++c.packets;
    res.sensors[slot].push_back({p->sequence, p->device_ms, rec.host_ms, p->values});
  }
  const double end = records.empty() ? 0.0 : static_cast<double>(records.back().host_ms);
  for (std::size_t slot = 0; slot < 6; ++slot) {
    if (!last_host[slot]) {
      const std::string msg = "sensor " + sensor_name(kSensorIds[slot]) + " sent no packets";
      spdlog::warn("{}", msg);
      res.stats.timeouts.push_back(msg);
    } else {
      silent(slot, *last_host[slot], end);
    }
  }
  return res;
}

double TimestampAligner::adjust(const RawSample& s, bool* repaired) {
  if (repaired) *repaired = false;
  if (!started_) {
    started_ = true;
    offset_ = static_cast<double>(s.device_ms) - static_cast<double>(s.host_ms);
    last_device_ = s.device_ms;
    last_seq_ = s.sequence;
    last_time_ = static_cast<double>(s.device_ms) - offset_;
    return last_time_;
  }
  double t = static_cast<double>(s.device_ms) - offset_;
  if (s.device_ms <= last_device_ || t <= last_time_) {
    t = last_time_ + static_cast<double>(s.sequence - last_seq_) * interval_ms_;
    if (repaired) *repaired = true;
  }
  last_device_ = std::max(last_device_, s.device_ms);
  last_seq_ = s.sequence;
  last_time_ = t;
  return t;
}

std::array<std::vector<AlignedSample>, 6> timestamp_adjust(const std::array<std::vector<RawSample>, 6>& raw,
                                                           std::uint64_t* repaired) {
  std::array<std::vector<AlignedSample>, 6> out;
  std::uint64_t fixes = 0;
  for (std::size_t slot = 0; slot < 6; ++slot) {
    TimestampAligner al;
    for (const auto& s : raw[slot]) {
      bool fixed = false;
      out[slot].push_back({s.sequence, al.adjust(s, &fixed), s.values});
      if (fixed) ++fixes;
    }
  }
  if (fixes) spdlog::warn("repaired {} non-monotone device timestamps", fixes);
  if (repaired) *repaired = fixes;
  return out;
}

void StreamUpsampler::push(const AlignedSample& s) {
  if (channels_ == 0) channels_ = s.values.size();
  if (s.values.size() != channels_) fail(ErrorCode::ShapeError, "sample width changed within a stream");
  if (!started_) {
    started_ = true;
    t0_ = s.time_ms;
    seq0_ = s.sequence;
  }
  const auto idx = static_cast<std::int64_t>(s.sequence) - static_cast<std::int64_t>(seq0_);
  if (idx < 0 || (!index_.empty() && idx <= index_.back())) return;
  index_.push_back(idx);
  for (float v : s.values) values_.push_back(static_cast<double>(v));
}

bool StreamUpsampler::sample(double t_ms, std::span<double> out) const {
  if (!started_) return false;
  const double pos = std::max(0.0, t_ms - t0_) * rate_hz_ / 1000.0;
  const double jf = std::floor(pos);
  const auto j = static_cast<std::int64_t>(jf);
  const double frac = pos - jf;
  auto it = std::upper_bound(index_.begin(), index_.end(), j);
  const auto lo = static_cast<std::size_t>(it - index_.begin()) - 1;
  const double* a = values_.data() + lo * channels_;
  if ((index_[lo] == j && frac == 0.0) || lo + 1 == index_.size()) {
    std::copy(a, a + channels_, out.begin());
    return true;
  }
  const double* b = a + channels_;
  const double w = (index_[lo] == j && index_[lo + 1] == j + 1)
                       ? frac
                       : (pos - static_cast<double>(index_[lo])) / static_cast<double>(index_[lo + 1] - index_[lo]);
  for (std::size_t c = 0; c < channels_; ++c) out[c] = a[c] + w * (b[c] - a[c]);
  return true;
}

// ---------------------------------------------------------------------------
// Oracle

GroundTruthOracle::GroundTruthOracle(SampleSeries ground_truth, double origin_ms)
    : gt_(std::move(ground_truth)), origin_(origin_ms) {
  if (gt_.channels != ground_truth_columns())
    fail(ErrorCode::MissingChannel, "oracle needs the ground-truth column schema");
  if (gt_.rows() < 2) fail(ErrorCode::InsufficientData, "oracle needs at least two ground-truth rows");
  row_.resize(gt_.cols());
}

void GroundTruthOracle::step(double stream_ms, std::span<const double>, const std::array<std::optional<double>, 2>& gc,
                             std::array<LegOutput, 2>& out, const StageHook& hook) {
  for (auto& o : out) o = LegOutput{};
  const double pos = (stream_ms - origin_ - gt_.start_ms) * gt_.rate_hz / 1000.0;
  bool inside = pos >= 0.0;
  if (inside) {
    const auto j = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(j);
    inside = j + 1 < gt_.rows() || (j + 1 == gt_.rows() && frac == 0.0);
    if (inside) {
      const auto lo = gt_.row(j);
      if (frac == 0.0) std::copy(lo.begin(), lo.end(), row_.begin());
      else {
        const auto hi = gt_.row(j + 1);
        for (std::size_t c = 0; c < row_.size(); ++c) row_[c] = lo[c] + frac * (hi[c] - lo[c]);
      }
    }
  }
  // ground_truth_columns: vGRF R, L; angles then moments joint-major, R then L.
  for (Foot leg : kFeet) {
    const auto l = static_cast<std::size_t>(leg);
    if (!inside || !gc[l]) continue;
    LegOutput& o = out[l];
    o.vgrf_bw = row_[l];
    for (std::size_t j = 0; j < kJointCount; ++j) {
      o.angles[j] = row_[2 + 2 * j + l];
      o.moments[j] = row_[2 + 2 * kJointCount + 2 * j + l];
    }
    o.grf_valid = o.angles_valid = o.moments_valid = true;
  }
  if (hook) {
    hook(Stage::Grf);
    hook(Stage::Angles);
    hook(Stage::Moments);
  }
}

// ---------------------------------------------------------------------------
// Configuration

SessionConfig read_session_config(std::istream& is, const std::string& source) {
  const ConfigMap kv = read_key_values(is, source);
  SessionConfig c;
  for (const auto& [key, v] : kv) {
    const std::string where = source + ":" + std::to_string(v.line) + ": ";
    double x = 0;
    const bool num = parse_double(v.text, x) && std::isfinite(x);
    auto need = [&](bool ok, const char* what) {
      if (!ok) fail(ErrorCode::FormatError, where + key + " must be " + what);
    };
    if (key == "output_cutoff_hz") need(num && x > 0 && x < 500, "in (0, 500)"), c.output_cutoff_hz = x;
    else if (key == "output_order") need(num && x >= 1 && x <= 8 && x == std::floor(x), "an integer in 1..8"),
        c.output_order = static_cast<int>(x);
    else if (key == "stream_delay_ms") need(num && x >= 0, "non-negative"), c.stream_delay_ms = x;
    else if (key == "sensor_timeout_ms") need(num && x > 0, "positive"), c.sensor_timeout_ms = x;
    else if (key == "max_lag_ms") need(num && x >= 1, "at least 1"), c.max_lag_ms = x;
    else if (key == "batch_at_end") need(v.text == "true" || v.text == "false", "true or false"),
        c.batch_at_end = v.text == "true";
    else if (key == "strike_fraction") need(num && x > 0 && x < 1, "in (0, 1)"), c.strike.fraction_of_max = x;
    else if (key == "strike_floor") need(num && x >= 0, "non-negative"), c.strike.floor = x;
    else if (key == "debounce_ms") need(num && x >= 0, "non-negative"), c.strike.debounce_ms = x;
    else fail(ErrorCode::FormatError, where + "unknown key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Logs

namespace {

enum LogId : std::uint8_t {
  kInsoleRaw,
  kInsoleAdjusted,
  kInsoleFiltered,
  kImuRaw,
  kImuUpsampled,
  kImuFiltered,
  kGrf,
  kAnglesRaw,
  kAnglesFiltered,
  kMomentsRaw,
  kMomentsFiltered,
  kLogCount
};

std::vector<std::string> value_names(bool imu) {
  std::vector<std::string> out;
  if (imu)
    for (auto a : kImuAxisNames) out.emplace_back(a);
  else
    for (std::size_t i = 0; i < kFsrPerFoot; ++i) out.push_back("fsr" + std::to_string(i + 1));
  return out;
}

std::vector<std::string> log_columns(LogId id) {
  std::vector<std::string> c;
  auto add = [&](const std::vector<std::string>& v) { c.insert(c.end(), v.begin(), v.end()); };
  switch (id) {
    case kInsoleRaw:
    case kImuRaw:
      c = {"host_ms", "device_ms", "sensor_id", "sequence"};
      add(value_names(id == kImuRaw));
      return c;
    case kInsoleAdjusted:
      c = {"time_ms", "sensor_id", "sequence"};
      add(value_names(false));
      return c;
    case kInsoleFiltered:
      c = {"time_ms", "tick_ms", "valid"};
      for (Foot f : kFeet) add(fsr_channels(f));
      return c;
    case kImuUpsampled:
    case kImuFiltered:
      c = {"time_ms", "tick_ms", "valid"};
      for (ImuSite s : kImuSites) add(imu_channels(s));
      return c;
    default:
      break;
  }
  c = {"time_ms", "tick_ms", "valid", "valid_r", "valid_l", "gc_r", "gc_l"};
  if (id == kGrf) {
    c.push_back("vgrf_bw_r");
    c.push_back("vgrf_bw_l");
    return c;
  }
  const bool angles = id == kAnglesRaw || id == kAnglesFiltered;
  for (std::size_t j = 0; j < kJointCount; ++j)
    for (Foot f : kFeet)
      c.push_back((angles ? "angle_" : "moment_") + std::string(kJointNames[j]) + "_" + foot_letter(f) +
                  (angles ? "_deg" : "_nm"));
  return c;
}

}  // namespace

std::vector<std::string> log_names() {
  return {"insole_raw",   "insole_adjusted", "insole_filtered", "imu_raw",     "imu_upsampled",   "imu_filtered",
          "grf",          "angles_raw",      "angles_filtered", "moments_raw", "moments_filtered"};
}

std::size_t LogTable::column_index(std::string_view n) const {
  auto it = std::find(columns.begin(), columns.end(), n);
  if (it == columns.end()) fail(ErrorCode::MissingChannel, "log " + name + " has no column '" + std::string(n) + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

std::vector<double> LogTable::column(std::string_view n) const { return rows.column(column_index(n)); }

const LogTable& PredictionLogSet::get(std::string_view name) const {
  for (const auto& t : tables)
    if (t.name == name) return t;
  fail(ErrorCode::MissingChannel, "no log named '" + std::string(name) + "'");
}

namespace {

void append_row_csv(std::string& line, std::span<const double> v) {
  line.clear();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) line.push_back(',');
    if (!std::isnan(v[i])) append_double(line, v[i]);
  }
  line.push_back('\n');
}

}  // namespace

void write_log_csv(std::ostream& os, const LogTable& t) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
  os << '\n';
  std::string line;
  for (std::size_t r = 0; r < t.rows.rows; ++r) {
    append_row_csv(line, t.rows.row(r));
    os << line;
  }
}

LogTable read_log_csv(std::istream& is, const std::string& name, const std::string& source) {
  LogTable t;
  t.name = name;
  std::string line;
  if (!std::getline(is, line)) fail(ErrorCode::FormatError, source + ":1: missing header");
  {
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) t.columns.push_back(trim(c));
  }
  if (t.columns.empty()) fail(ErrorCode::FormatError, source + ":1: empty header");
  t.rows = Matrix(0, t.columns.size());
  std::vector<double> row(t.columns.size());
  for (std::size_t no = 2; std::getline(is, line); ++no) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t c = 0, start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      const std::string_view cell =
          std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (c >= row.size()) fail(ErrorCode::FormatError, source + ":" + std::to_string(no) + ": too many cells");
      if (cell.empty()) row[c] = kNaN;
      else if (!parse_double(cell, row[c]))
        fail(ErrorCode::FormatError, source + ":" + std::to_string(no) + ": bad number '" + std::string(cell) + "'");
      ++c;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (c != row.size()) fail(ErrorCode::DataError, source + ":" + std::to_string(no) + ": truncated row");
    t.rows.append_row(row);
  }
  return t;
}

PredictionLogSet read_logs(const std::filesystem::path& dir) {
  PredictionLogSet set;
  for (const auto& n : log_names()) {
    const auto path = dir / (n + ".csv");
    std::ifstream is(path);
    if (!is) fail(ErrorCode::IoError, "cannot open " + path.string());
    set.tables.push_back(read_log_csv(is, n, path.string()));
  }
  return set;
}

std::string latency_report(const SessionResult& r) {
  std::ostringstream os;
  os << "grf_done_ms=" << format_double(r.latency.grf_done_ms) << '\n'
     << "angles_done_ms=" << format_double(r.latency.angles_done_ms) << '\n'
     << "moments_done_ms=" << format_double(r.latency.moments_done_ms) << '\n'
     << "latency_p50_ms=" << format_double(r.latency.latency_p50_ms) << '\n'
     << "latency_p95_ms=" << format_double(r.latency.latency_p95_ms) << '\n'
     << "latency_max_ms=" << format_double(r.latency.latency_max_ms) << '\n'
     << "ticks=" << r.ticks << '\n'
     << "skipped_ticks=" << r.skipped_ticks << '\n'
     << "dropped_log_rows=" << r.dropped_log_rows << '\n'
     << "malformed_packets=" << r.ingest.malformed << '\n';
  for (std::size_t s = 0; s < 6; ++s) {
    const auto& c = r.ingest.sensors[s];
    const std::string p = sensor_name(kSensorIds[s]) + ".";
    os << p << "packets=" << c.packets << '\n'
       << p << "dropped=" << c.dropped << '\n'
       << p << "reordered=" << c.reordered << '\n'
       << p << "repaired=" << c.repaired << '\n';
  }
  os << "sensor_timeouts=" << r.ingest.timeouts.size() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Packet sources

namespace {

using Clock = std::chrono::steady_clock;

double ms_between(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::milli>(b - a).count();
}

Clock::duration to_duration(double ms) {
  return std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double, std::milli>(ms));
}

class ReplaySource : public PacketSource {
 public:
  ReplaySource(std::vector<DumpRecord> records, bool fast) : records_(std::move(records)), fast_(fast) {
    if (!records_.empty()) first_ = static_cast<double>(records_.front().host_ms);
    if (!records_.empty()) last_ = static_cast<double>(records_.back().host_ms);
  }
  void start() override { wall0_ = Clock::now(); }
  bool next(DumpRecord& rec) override {
    if (i_ >= records_.size()) return false;
    if (!fast_) {
      const double due = static_cast<double>(records_[i_].host_ms) - first_;
      std::this_thread::sleep_until(wall0_ + to_duration(due));
    }
    rec = std::move(records_[i_++]);
    return true;
  }
  double host_now_ms() const override { return first_ + ms_between(wall0_, Clock::now()); }
  std::optional<double> end_ms() const override {
    if (records_.empty()) return std::nullopt;
    return last_;
  }
  bool paced() const override { return !fast_; }
  Clock::time_point wall_of(double host_ms) const override { return wall0_ + to_duration(host_ms - first_); }

 private:
  std::vector<DumpRecord> records_;
  bool fast_;
  std::size_t i_ = 0;
  double first_ = 0.0, last_ = 0.0;
  Clock::time_point wall0_ = Clock::now();
};

std::uint64_t system_ms() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
}

sockaddr_in parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  long long port = 0;
  sockaddr_in a{};
  a.sin_family = AF_INET;
  if (colon == std::string::npos || !parse_int(std::string_view(s).substr(colon + 1), port) || port < 0 ||
      port > 65535 || inet_pton(AF_INET, s.substr(0, colon).c_str(), &a.sin_addr) != 1)
    fail(ErrorCode::Usage, "expected IPv4 addr:port, got '" + s + "'");
  a.sin_port = htons(static_cast<std::uint16_t>(port));
  return a;
}

class UdpSource : public PacketSource {
 public:
  UdpSource(const std::string& listen, double duration_s) : duration_ms_(duration_s * 1000.0) {
    const sockaddr_in a = parse_endpoint(listen);
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) fail(ErrorCode::IoError, "cannot create UDP socket");
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    timeval tv{0, 20000};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
    if (::bind(fd_, reinterpret_cast<const sockaddr*>(&a), sizeof a) != 0) {
      ::close(fd_);
      fail(ErrorCode::IoError, "cannot bind UDP socket to " + listen);
    }
  }
  ~UdpSource() override { ::close(fd_); }
  void start() override {
    start_ = static_cast<double>(system_ms());
    wall0_ = Clock::now();
  }
  bool next(DumpRecord& rec) override {
    std::uint8_t buf[2048];
    while (host_now_ms() < start_ + duration_ms_) {
      const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
      if (n < 0) continue;  // timeout: re-check the session end
      rec.host_ms = system_ms();
      rec.bytes.assign(buf, buf + n);
      return true;
    }
    return false;
  }
  double host_now_ms() const override { return start_ + ms_between(wall0_, Clock::now()); }
  std::optional<double> end_ms() const override { return start_ + duration_ms_; }
  bool paced() const override { return true; }
  Clock::time_point wall_of(double host_ms) const override { return wall0_ + to_duration(host_ms - start_); }

 private:
  int fd_ = -1;
  double duration_ms_;
  double start_ = 0.0;
  Clock::time_point wall0_ = Clock::now();
};

}  // namespace

std::unique_ptr<PacketSource> replay_source(std::vector<DumpRecord> records, bool fast) {
  return std::make_unique<ReplaySource>(std::move(records), fast);
}

std::unique_ptr<PacketSource> udp_source(const std::string& listen, double duration_s) {
  return std::make_unique<UdpSource>(listen, duration_s);
}

void udp_send(std::span<const DumpRecord> records, const std::string& target, bool paced) {
  const sockaddr_in a = parse_endpoint(target);
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) fail(ErrorCode::IoError, "cannot create UDP socket");
  const auto wall0 = Clock::now();
  const double first = records.empty() ? 0.0 : static_cast<double>(records.front().host_ms);
  for (const auto& r : records) {
    if (paced)
      std::this_thread::sleep_until(wall0 + to_duration(static_cast<double>(r.host_ms) - first));
    ::sendto(fd, r.bytes.data(), r.bytes.size(), 0, reinterpret_cast<const sockaddr*>(&a), sizeof a);
  }
  ::close(fd);
}

// ---------------------------------------------------------------------------
// Session

namespace {

struct LogRow {
  std::uint8_t log = 0;
  std::vector<double> values;
};

template <typename T>
using Spsc = boost::lockfree::spsc_queue<T>;

void backoff(unsigned& spins) {
  if (++spins < 64) std::this_thread::yield();
  else std::this_thread::sleep_for(std::chrono::microseconds(50));
}

class LogUnit {
 public:
  LogUnit(const SessionConfig& cfg) : queue_(cfg.log_queue_capacity), keep_(cfg.keep_logs), block_(cfg.as_fast_as_possible) {
    const auto names = log_names();
    for (std::size_t i = 0; i < kLogCount; ++i) {
      LogTable t;
      t.name = names[i];
      t.columns = log_columns(static_cast<LogId>(i));
      t.rows = Matrix(0, t.columns.size());
      tables_.push_back(std::move(t));
    }
    if (!cfg.out_dir.empty()) {
      std::filesystem::create_directories(cfg.out_dir);
      for (const auto& t : tables_) {
        auto& f = files_.emplace_back(std::make_unique<std::ofstream>(cfg.out_dir / (t.name + ".csv")));
        if (!*f) fail(ErrorCode::IoError, "cannot create log " + (cfg.out_dir / (t.name + ".csv")).string());
        for (std::size_t i = 0; i < t.columns.size(); ++i) *f << (i ? "," : "") << t.columns[i];
        *f << '\n';
      }
    }
    thread_ = std::thread([this] { run(); });
  }
  ~LogUnit() { finish(); }

  // Producer side (process unit).
  void push(LogId id, std::vector<double> values) {
    LogRow row{static_cast<std::uint8_t>(id), std::move(values)};
    if (!block_) {
      if (!queue_.push(row)) ++dropped_;
      return;
    }
    unsigned spins = 0;
    while (!queue_.push(row)) backoff(spins);
  }

  void finish() {
    if (!thread_.joinable()) return;
    done_.store(true, std::memory_order_release);
    thread_.join();
    for (auto& f : files_) f->flush();
  }

  std::uint64_t dropped() const { return dropped_; }
  std::vector<LogTable> take() { return std::move(tables_); }

 private:
  void run() {
    LogRow row;
    std::string line;
    unsigned spins = 0;
    for (;;) {
      if (queue_.pop(row)) {
        spins = 0;
        if (keep_) tables_[row.log].rows.append_row(row.values);
        if (!files_.empty()) {
          append_row_csv(line, row.values);
          files_[row.log]->write(line.data(), static_cast<std::streamsize>(line.size()));
        }
        continue;
      }
      if (done_.load(std::memory_order_acquire) && queue_.read_available() == 0) return;
      backoff(spins);
    }
  }

  Spsc<LogRow> queue_;
  bool keep_, block_;
  std::vector<LogTable> tables_;
  std::vector<std::unique_ptr<std::ofstream>> files_;
  std::atomic<bool> done_{false};
  std::uint64_t dropped_ = 0;
  std::thread thread_;
};

class ProcessUnit {
 public:
  ProcessUnit(const SessionConfig& cfg, TickPredictor& predictor, LogUnit& log, SessionResult& res)
      : cfg_(cfg), predictor_(predictor), log_(log), res_(res), front_(cfg.front_end) {
    for (std::size_t s = 0; s < 6; ++s) up_[s] = StreamUpsampler(sensor_channel_count(kSensorIds[s]));
    for (auto& d : detect_) d = InsoleStrikeDetector(cfg.strike);
    const double cut[1] = {cfg.output_cutoff_hz};
    for (std::size_t l = 0; l < 2; ++l) {
      angle_f_[l] = design_butterworth(cfg.output_order, FilterKind::Lowpass, cut, cfg.front_end.rate_hz);
      moment_f_[l] = angle_f_[l];
    }
    if (cfg.external_strikes) {
      external_ = *cfg.external_strikes;
      std::stable_sort(external_.begin(), external_.end(),
                       [](const HeelStrikeEvent& a, const HeelStrikeEvent& b) { return a.time_ms < b.time_ms; });
    }
    frame_.assign(kSensorChannels + kTruthChannels, 0.0);
  }

  void on_packet(const DumpRecord& rec) {
    const auto p = decode_packet(rec.bytes);
    if (!p) {
      ++res_.ingest.malformed;
      return;
    }
    const std::size_t slot = sensor_slot(p->sensor_id);
    SensorCounters& c = res_.ingest.sensors[slot];
    last_arrival_[slot] = static_cast<double>(rec.host_ms);
    timed_out_[slot] = false;
    if (last_seq_[slot]) {
      if (p->sequence <= *last_seq_[slot]) {
        ++c.reordered;
        return;
      }
      c.dropped += p->sequence - *last_seq_[slot] - 1;
    }
    last_seq_[slot] = p->sequence;
    ++c.packets;
    const bool imu = p->sensor_id <= 3;
    std::vector<double> raw{static_cast<double>(rec.host_ms), static_cast<double>(p->device_ms),
                            static_cast<double>(p->sensor_id), static_cast<double>(p->sequence)};
    for (float v : p->values) raw.push_back(v);
    log_.push(imu ? kImuRaw : kInsoleRaw, raw);

    bool repaired = false;
    const RawSample rs{p->sequence, p->device_ms, rec.host_ms, p->values};
    const double t = align_[slot].adjust(rs, &repaired);
    if (repaired) {
      ++c.repaired;
      spdlog::warn("{}: non-monotone device time at sequence {}", sensor_name(p->sensor_id), p->sequence);
    }
    const AlignedSample as{p->sequence, t, p->values};
    up_[slot].push(as);
    if (!imu) {
      std::vector<double> adj{t, static_cast<double>(p->sensor_id), static_cast<double>(p->sequence)};
      for (float v : p->values) adj.push_back(v);
      log_.push(kInsoleAdjusted, adj);
      if (!cfg_.external_strikes) {
        double sum = 0.0;
        for (float v : p->values) sum += v;
        const Foot foot = p->sensor_id == kRightInsoleId ? Foot::Right : Foot::Left;
        if (auto s = detect_[static_cast<std::size_t>(foot)].push(t, sum))
          pending_[static_cast<std::size_t>(foot)].push_back(*s);
      }
    }
  }

  void check_timeouts(double tick) {
    for (std::size_t s = 0; s < 6; ++s) {
      const double since = last_arrival_[s].value_or(first_tick_);
      if (!timed_out_[s] && tick - since > cfg_.sensor_timeout_ms) {
        timed_out_[s] = true;
        const std::string msg = "SensorTimeout: " + sensor_name(kSensorIds[s]) + " silent for more than " +
                                format_double(cfg_.sensor_timeout_ms) + " ms at host time " + format_double(tick);
        spdlog::warn("{}", msg);
        res_.ingest.timeouts.push_back(msg);
      }
    }
  }

  void set_first_tick(double t) { first_tick_ = t; }

  // One 1 kHz tick at host time `tick`; `due` is its wall-clock deadline.
  void tick(double tick, Clock::time_point due) {
    const double tau = tick - cfg_.stream_delay_ms;
    ++res_.ticks;
    check_timeouts(tick);
    for (Foot f : kFeet) {
      auto& q = pending_[static_cast<std::size_t>(f)];
      while (!q.empty() && q.front() <= tau) {
        strike(f, q.front());
        q.pop_front();
      }
    }
    while (next_external_ < external_.size() && external_[next_external_].time_ms <= tau) {
      strike(external_[next_external_].foot, external_[next_external_].time_ms);
      ++next_external_;
    }

    bool live = true;
    for (const auto& u : up_) live = live && u.started() && tau >= u.first_time_ms();
    std::array<std::optional<double>, 2> gc{};
    std::array<LegOutput, 2> out{};
    std::array<Clock::time_point, 3> stage{};
    if (live) {
      std::vector<double> up_row{tau, tick, 1.0};
      std::size_t col = 0;
      for (std::size_t slot : {std::size_t{4}, std::size_t{5}, std::size_t{0}, std::size_t{1}, std::size_t{2},
                               std::size_t{3}}) {
        const std::size_t n = sensor_channel_count(kSensorIds[slot]);
        up_[slot].sample(tau, std::span<double>(frame_).subspan(col, n));
        col += n;
      }
      up_row.insert(up_row.end(), frame_.begin() + 2 * kFsrPerFoot, frame_.begin() + kSensorChannels);
      log_.push(kImuUpsampled, std::move(up_row));
      front_.step(std::span<double>(frame_).first(kSensorChannels));
      std::vector<double> fsr{tau, tick, 1.0}, imu{tau, tick, 1.0};
      fsr.insert(fsr.end(), frame_.begin(), frame_.begin() + 2 * kFsrPerFoot);
      imu.insert(imu.end(), frame_.begin() + 2 * kFsrPerFoot, frame_.begin() + kSensorChannels);
      log_.push(kInsoleFiltered, std::move(fsr));
      log_.push(kImuFiltered, std::move(imu));

      for (Foot f : kFeet)
        if (clock_.ready(f) && tau >= clock_.last_strike(f)) gc[static_cast<std::size_t>(f)] = clock_.gc_percent(f, tau);
      predictor_.step(tau, frame_, gc, out, [&](TickPredictor::Stage s) { stage[static_cast<std::size_t>(s)] = Clock::now(); });
    } else {
      const auto now = Clock::now();
      stage = {now, now, now};
      std::vector<double> a(3 + 2 * kFsrPerFoot, kNaN), b(3 + 4 * kImuAxes, kNaN);
      a[0] = b[0] = tau;
      a[1] = b[1] = tick;
      a[2] = b[2] = 0.0;
      log_.push(kInsoleFiltered, a);
      log_.push(kImuUpsampled, b);
      log_.push(kImuFiltered, std::move(b));
    }
    last_stage_ = stage;
    last_due_ = due;
    latencies_.push_back(ms_between(due, stage[2]));
    write_outputs(tau, tick, gc, out);
  }

  const std::array<Clock::time_point, 3>& last_stage() const { return last_stage_; }
  const std::vector<double>& latencies() const { return latencies_; }
  Clock::time_point last_due() const { return last_due_; }

 private:
  void strike(Foot f, double t) {
    clock_.on_strike(f, t);
    res_.strikes.push_back({t, f, cfg_.external_strikes ? StrikeSource::Generator : StrikeSource::Insole});
  }

  void write_outputs(double tau, double tick, const std::array<std::optional<double>, 2>& gc,
                     const std::array<LegOutput, 2>& out) {
    auto head = [&](bool vr, bool vl) {
      return std::vector<double>{tau,
                                 tick,
                                 vr && vl ? 1.0 : 0.0,
                                 vr ? 1.0 : 0.0,
                                 vl ? 1.0 : 0.0,
                                 gc[0].value_or(kNaN),
                                 gc[1].value_or(kNaN)};
    };
    auto g = head(out[0].grf_valid, out[1].grf_valid);
    for (std::size_t l = 0; l < 2; ++l) g.push_back(out[l].grf_valid ? out[l].vgrf_bw : kNaN);
    log_.push(kGrf, std::move(g));

    std::array<std::array<double, kJointCount>, 2> fa{}, fm{};
    for (std::size_t l = 0; l < 2; ++l) {
      smooth(angle_f_[l], angle_primed_[l], out[l].angles_valid, out[l].angles, fa[l]);
      smooth(moment_f_[l], moment_primed_[l], out[l].moments_valid, out[l].moments, fm[l]);
    }
    auto joints = [&](bool angles, bool filtered) {
      const bool vr = angles ? out[0].angles_valid : out[0].moments_valid;
      const bool vl = angles ? out[1].angles_valid : out[1].moments_valid;
      auto row = head(vr, vl);
      for (std::size_t j = 0; j < kJointCount; ++j)
        for (std::size_t l = 0; l < 2; ++l) {
          const bool v = l == 0 ? vr : vl;
          const double x = angles ? (filtered ? fa[l][j] : out[l].angles[j]) : (filtered ? fm[l][j] : out[l].moments[j]);
          row.push_back(v ? x : kNaN);
        }
      return row;
    };
    log_.push(kAnglesRaw, joints(true, false));
    log_.push(kAnglesFiltered, joints(true, true));
    log_.push(kMomentsRaw, joints(false, false));
    log_.push(kMomentsFiltered, joints(false, true));
  }

  // Causal output smoothing; the filter is primed on the first valid value
  // after any gap so it starts without a transient.
  static void smooth(IirFilter& f, bool& primed, bool valid, const std::array<double, kJointCount>& in,
                     std::array<double, kJointCount>& out) {
    if (!valid) {
      primed = false;
      return;
    }
    if (!primed) {
      f.prime(in);
      primed = true;
    }
    out = in;
    f.step(out);
  }

  const SessionConfig& cfg_;
  TickPredictor& predictor_;
  LogUnit& log_;
  SessionResult& res_;
  FrontEnd front_;
  std::array<TimestampAligner, 6> align_;
  std::array<StreamUpsampler, 6> up_;
  std::array<std::optional<std::uint32_t>, 6> last_seq_{};
  std::array<std::optional<double>, 6> last_arrival_{};
  std::array<bool, 6> timed_out_{};
  double first_tick_ = 0.0;
  std::array<InsoleStrikeDetector, 2> detect_{};
  std::array<std::deque<double>, 2> pending_{};
  std::vector<HeelStrikeEvent> external_;
  std::size_t next_external_ = 0;
  StrideClock clock_;
  std::array<IirFilter, 2> angle_f_{}, moment_f_{};
  std::array<bool, 2> angle_primed_{}, moment_primed_{};
  std::vector<double> frame_;
  std::array<Clock::time_point, 3> last_stage_{};
  Clock::time_point last_due_{};
  std::vector<double> latencies_;
};

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto i = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size()))) - (q > 0 ? 1 : 0);
  return v[std::min(i, v.size() - 1)];
}

}  // namespace

SessionResult run_session(PacketSource& source, TickPredictor& predictor, const SessionConfig& cfg) {
  SessionResult res;
  Spsc<DumpRecord> packets(cfg.packet_queue_capacity);
  std::atomic<bool> ingest_done{false};
  std::atomic<bool> abort{false};
  LogUnit log(cfg);
  ProcessUnit proc(cfg, predictor, log, res);

  source.start();
  std::thread ingest_thread([&] {
    DumpRecord rec;
    while (!abort.load(std::memory_order_relaxed) && source.next(rec)) {
      unsigned spins = 0;
      while (!packets.push(rec)) {
        if (abort.load(std::memory_order_relaxed)) break;
        backoff(spins);
      }
    }
    ingest_done.store(true, std::memory_order_release);
  });

  try {
    std::deque<DumpRecord> inbox;
    auto drain = [&] {
      DumpRecord r;
      while (packets.pop(r)) inbox.push_back(std::move(r));
    };
    // Wait for the first packet; it fixes the tick grid.
    unsigned spins = 0;
    for (;;) {
      drain();
      if (!inbox.empty()) break;
      if (ingest_done.load(std::memory_order_acquire)) {
        drain();
        if (inbox.empty()) break;
      }
      backoff(spins);
    }
    if (!inbox.empty()) {
      const bool paced = source.paced() && !cfg.as_fast_as_possible;
      double tick = static_cast<double>(inbox.front().host_ms);
      proc.set_first_tick(tick);
      auto window_end = Clock::now();
      if (cfg.batch_at_end) {
        spins = 0;
        while (!ingest_done.load(std::memory_order_acquire)) {
          drain();
          backoff(spins);
        }
        drain();
        window_end = Clock::now();
      }
      const bool live_pacing = paced && !cfg.batch_at_end;
      for (;;) {
        // Records that can still arrive for this tick.
        spins = 0;
        for (;;) {
          drain();
          const bool done = ingest_done.load(std::memory_order_acquire);
          if (done) drain();
          if (done || (!inbox.empty() && static_cast<double>(inbox.back().host_ms) > tick) || live_pacing) break;
          backoff(spins);
        }
        const bool done = ingest_done.load(std::memory_order_acquire) && packets.read_available() == 0;
        const double end = source.end_ms().value_or(tick);
        if (done && inbox.empty() && tick > end + cfg.stream_delay_ms) break;
        if (!done && !live_pacing && inbox.empty() && source.end_ms() && tick > *source.end_ms() + cfg.stream_delay_ms)
          break;

        Clock::time_point due = Clock::now();
        if (live_pacing) {
          due = source.wall_of(tick);
          std::this_thread::sleep_until(due);
          const double behind = source.host_now_ms() - tick;
          if (behind > cfg.max_lag_ms) {
            const double skip = std::floor(behind);
            res.skipped_ticks += static_cast<std::uint64_t>(skip);
            tick += skip;
            due = source.wall_of(tick);
          }
          drain();
        }
        while (!inbox.empty() && static_cast<double>(inbox.front().host_ms) <= tick) {
          proc.on_packet(inbox.front());
          inbox.pop_front();
        }
        proc.tick(tick, cfg.batch_at_end ? window_end : due);
        if (done && inbox.empty() && tick >= end + cfg.stream_delay_ms) break;
        tick += 1.0;
      }
      const auto& st = proc.last_stage();
      const auto anchor = cfg.batch_at_end ? window_end : proc.last_due();
      res.latency.grf_done_ms = std::max(0.0, ms_between(anchor, st[0]));
      res.latency.angles_done_ms = std::max(0.0, ms_between(anchor, st[1]));
      res.latency.moments_done_ms = std::max(0.0, ms_between(anchor, st[2]));
      const auto& lat = proc.latencies();
      res.latency.latency_p50_ms = percentile(lat, 0.5);
      res.latency.latency_p95_ms = percentile(lat, 0.95);
      res.latency.latency_max_ms = lat.empty() ? 0.0 : *std::max_element(lat.begin(), lat.end());
    }
  } catch (...) {
    abort.store(true);
    ingest_thread.join();
    log.finish();
    throw;
  }
  ingest_thread.join();
  log.finish();
  res.dropped_log_rows = log.dropped();
  res.logs.tables = log.take();
  return res;
}

SessionResult replay_session(std::vector<DumpRecord> records, TickPredictor& predictor, const SessionConfig& cfg) {
  auto src = replay_source(std::move(records), cfg.as_fast_as_possible);
  return run_session(*src, predictor, cfg);
}

// ---------------------------------------------------------------------------
// Comparison

namespace {

struct VariableSpec {
  std::string name;
  std::string log;  // "grf", "angles", "moments"
  std::string rt_column_stem;
  std::size_t joint = 0;
};

std::vector<VariableSpec> compared_variables() {
  std::vector<VariableSpec> v;
  v.push_back({"vgrf_bw", "grf", "vgrf_bw", 0});
  for (std::size_t j = 0; j < kJointCount; ++j)
    v.push_back({"angle_" + std::string(kJointNames[j]), "angles", "angle_" + std::string(kJointNames[j]), j});
  for (std::size_t j = 0; j < kJointCount; ++j)
    v.push_back({"moment_" + std::string(kJointNames[j]), "moments", "moment_" + std::string(kJointNames[j]), j});
  return v;
}

// Cycles between consecutive wraps of gc; every row of a cycle must be
// valid and one step after the previous row.
void cut_cycles(std::span<const double> time, std::span<const double> gc, std::span<const double> value,
                std::span<const double> valid, double step, std::vector<CycleTrace>& out) {
  std::optional<std::size_t> start;
  for (std::size_t i = 0; i < gc.size(); ++i) {
    const bool ok = valid.empty() ? !std::isnan(value[i]) : valid[i] == 1.0;
    const bool contiguous = i > 0 && std::abs(time[i] - time[i - 1] - step) < 1e-6 * step;
    if (!ok || std::isnan(gc[i]) || !contiguous) {
      start.reset();
      continue;
    }
    if (gc[i] < gc[i - 1]) {
      if (start) {
        CycleTrace c;
        c.gc_percent.assign(gc.begin() + static_cast<std::ptrdiff_t>(*start), gc.begin() + static_cast<std::ptrdiff_t>(i));
        c.values.assign(value.begin() + static_cast<std::ptrdiff_t>(*start), value.begin() + static_cast<std::ptrdiff_t>(i));
        out.push_back(std::move(c));
      }
      start = i;
    }
  }
}

// Reference cycles run from one strike to the next; GC% is linear in
// between (interpolating the sampled GC% channel would smear each wrap).
void reference_cycles(const SampleSeries& s, const std::vector<double>& strikes, std::size_t col,
                      std::vector<CycleTrace>& out) {
  for (std::size_t i = 0; i + 1 < strikes.size(); ++i) {
    const double a = strikes[i], b = strikes[i + 1];
    CycleTrace c;
    const double first = std::max(0.0, std::ceil((a - s.start_ms) * s.rate_hz / 1000.0));
    for (auto r = static_cast<std::size_t>(first); r < s.rows(); ++r) {
      const double t = s.time_ms(r);
      if (t >= b) break;
      if (t < a) continue;
      c.gc_percent.push_back(100.0 * (t - a) / (b - a));
      c.values.push_back(s.at(r, col));
    }
    if (c.values.size() >= 2) out.push_back(std::move(c));
  }
}

}  // namespace

std::vector<VariableComparison> compare_to_reference(const PredictionLogSet& logs, std::span<const Trial> reference,
                                                     const ComparisonOptions& opt) {
  std::vector<SampleSeries> ref1k;
  for (const auto& t : reference) ref1k.push_back(resample_linear(t.ground_truth, 1000.0));
  std::vector<VariableComparison> out;
  for (const auto& v : compared_variables()) {
    const std::string log_name = v.log == "grf" ? "grf" : v.log + (opt.filtered ? "_filtered" : "_raw");
    const LogTable& lt = logs.get(log_name);
    const auto time = lt.column("time_ms");
    std::vector<CycleTrace> rt, ref;
    for (Foot f : kFeet) {
      const std::string leg(1, foot_letter(f));
      const std::string col = v.log == "grf"       ? "vgrf_bw_" + leg
                              : v.log == "angles" ? v.rt_column_stem + "_" + leg + "_deg"
                                                  : v.rt_column_stem + "_" + leg + "_nm";
      cut_cycles(time, lt.column("gc_" + leg), lt.column(col), lt.column("valid_" + leg), 1.0, rt);
      for (std::size_t k = 0; k < reference.size(); ++k) {
        const SampleSeries& s = ref1k[k];
        const std::string gt_col = v.log == "grf"       ? gt_vgrf_channel(f)
                                   : v.log == "angles" ? gt_angle_channel(v.joint, f)
                                                       : gt_moment_channel(v.joint, f);
        reference_cycles(s, strike_times(strikes_from_gc(reference[k].ground_truth), f), s.channel_index(gt_col), ref);
      }
    }
    if (rt.empty())
      fail(ErrorCode::InsufficientData, "no complete gait cycle in the real-time " + log_name + " log");
    if (ref.empty()) fail(ErrorCode::InsufficientData, "no complete gait cycle in the reference data");
    VariableComparison c;
    c.variable = v.name;
    c.rt_cycles = rt.size();
    c.reference_cycles = ref.size();
    c.rt = ensemble_average(rt);
    c.reference = ensemble_average(ref);
    c.r = pearson_r(c.reference.mean, c.rt.mean);
    c.r_squared = r_squared(c.reference.mean, c.rt.mean);
    out.push_back(std::move(c));
  }
  return out;
}

std::string comparison_report(std::span<const VariableComparison> rows) {
  std::ostringstream os;
  os << "variable,r,r_squared,rt_cycles,reference_cycles\n";
  for (const auto& c : rows)
    os << c.variable << ',' << format_double(c.r) << ',' << format_double(c.r_squared) << ',' << c.rt_cycles << ','
       << c.reference_cycles << '\n';
  return os.str();
}

void write_profiles_csv(std::ostream& os, std::span<const VariableComparison> rows) {
  os << "variable,gc_percent,rt_mean,rt_std,reference_mean,reference_std\n";
  for (const auto& c : rows)
    for (std::size_t k = 0; k < kGcGridPoints; ++k)
      os << c.variable << ',' << k << ',' << format_double(c.rt.mean[k]) << ',' << format_double(c.rt.std[k]) << ','
         << format_double(c.reference.mean[k]) << ',' << format_double(c.reference.std[k]) << '\n';
}

}  // namespace gaitrt
