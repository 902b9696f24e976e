#include "gaitrt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <regex>
#include <sstream>

#include "gaitrt/format.hpp"

namespace gaitrt {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kFieldHorizontal = 20.0;  // uT
constexpr double kFieldVertical = 45.0;    // uT
constexpr int kGrfScanPoints = 20001;

double wrapped_gauss(double u, double center, double width) {
  double sum = 0.0;
  for (int m = -1; m <= 1; ++m) {
    const double z = (u - center + m) / width;
    sum += std::exp(-z * z);
  }
  return sum;
}

double gauss(double s, double center, double width) {
  const double z = (s - center) / width;
  return std::exp(-z * z);
}

FourierSeries fourier_fit(const std::function<double(double)>& f, std::size_t harmonics) {
  constexpr int n = 512;
  FourierSeries out;
  out.a.assign(harmonics, 0.0);
  out.b.assign(harmonics, 0.0);
  for (int i = 0; i < n; ++i) {
    const double u = static_cast<double>(i) / n;
    const double v = f(u);
    out.a0 += v / n;
    for (std::size_t k = 1; k <= harmonics; ++k) {
      out.a[k - 1] += 2.0 / n * v * std::cos(kTwoPi * static_cast<double>(k) * u);
      out.b[k - 1] += 2.0 / n * v * std::sin(kTwoPi * static_cast<double>(k) * u);
    }
  }
  return out;
}

double grf_raw(const GrfShape& g, double s) {
  const double taper = std::sqrt(std::max(0.0, std::sin(std::numbers::pi * s)));
  return taper * (g.valley + (g.amp1 - g.valley) * gauss(s, g.center1, g.width1) +
                  (g.amp2 - g.valley) * gauss(s, g.center2, g.width2));
}

// Joint-angle weights producing segment roll, pitch, yaw.
using SegmentMap = std::array<std::array<double, kJointCount>, 3>;
constexpr SegmentMap kShankMap = {{{0.0, 0.5, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0, -1.0, 0.0}, {0.0, 0.0, 1.0, 0.0, 0.0}}};
constexpr SegmentMap kFootMap = {{{0.0, 0.5, 0.0, 0.0, 0.0}, {1.0, 0.0, 0.0, -1.0, 1.0}, {0.0, 0.0, 1.2, 0.0, 0.0}}};

double phase(double t_ms, Foot foot, double period_ms) {
  const double shift = foot == Foot::Left ? period_ms / 2.0 : 0.0;
  return std::fmod(t_ms + shift, period_ms) / period_ms;
}

}  // namespace

double FourierSeries::value(double u) const {
  double v = a0;
  for (std::size_t k = 1; k <= a.size(); ++k) {
    const double w = kTwoPi * static_cast<double>(k) * u;
    v += a[k - 1] * std::cos(w) + b[k - 1] * std::sin(w);
  }
  return v;
}

double FourierSeries::d1(double u) const {
  double v = 0.0;
  for (std::size_t k = 1; k <= a.size(); ++k) {
    const double f = kTwoPi * static_cast<double>(k);
    v += f * (-a[k - 1] * std::sin(f * u) + b[k - 1] * std::cos(f * u));
  }
  return v;
}

double FourierSeries::d2(double u) const {
  double v = 0.0;
  for (std::size_t k = 1; k <= a.size(); ++k) {
    const double f = kTwoPi * static_cast<double>(k);
    v -= f * f * (a[k - 1] * std::cos(f * u) + b[k - 1] * std::sin(f * u));
  }
  return v;
}

void SubjectProfile::finalize() {
  double peak = 0.0;
  for (int i = 0; i < kGrfScanPoints; ++i)
    peak = std::max(peak, grf_raw(grf, static_cast<double>(i) / (kGrfScanPoints - 1)));
  grf_scale = peak > 0.0 ? std::max(grf.amp1, grf.amp2) / peak : 0.0;
}

double SubjectProfile::vgrf_bw(double u) const {
  if (u < 0.0 || u >= stance_fraction) return 0.0;
  return grf_scale * grf_raw(grf, u / stance_fraction);
}

double SubjectProfile::moment_nm(std::size_t joint, double u) const {
  return mass_kg * (moments[joint].value(u) + moment_grf_gain[joint] * vgrf_bw(u));
}

SegmentKinematics SubjectProfile::segment(ImuSite site, double u) const {
  const SegmentMap& map = is_foot_site(site) ? kFootMap : kShankMap;
  const double T = stride_period_s();
  SegmentKinematics k;
  for (std::size_t ax = 0; ax < 3; ++ax) {
    double v = mount_offset_deg[static_cast<std::size_t>(site)][ax], d1 = 0.0, d2 = 0.0;
    for (std::size_t j = 0; j < kJointCount; ++j) {
      const double w = map[ax][j];
      if (w == 0.0) continue;
      v += w * angles[j].value(u);
      d1 += w * angles[j].d1(u);
      d2 += w * angles[j].d2(u);
    }
    k.angle[ax] = v;
    k.rate[ax] = d1 / T;
    k.accel[ax] = d2 / (T * T);
  }
  return k;
}

std::array<double, kImuAxes> SubjectProfile::imu_clean(ImuSite site, double u) const {
  const SegmentKinematics k = segment(site, u);
  const double lever = is_foot_site(site) ? 0.10 : 0.30 * height_cm / 175.0;
  const double r = k.angle[0] * kDeg, p = k.angle[1] * kDeg, y = k.angle[2] * kDeg;
  const double pdot = k.rate[1] * kDeg, pddot = k.accel[1] * kDeg;
  std::array<double, kImuAxes> out{};
  out[0] = -kGravity * std::sin(p) + lever * pddot;
  out[1] = kGravity * std::cos(p) * std::sin(r);
  out[2] = kGravity * std::cos(p) * std::cos(r) + lever * pdot * pdot;
  out[3] = k.rate[0];
  out[4] = k.rate[1];
  out[5] = k.rate[2];
  out[6] = kFieldHorizontal * std::cos(y) * std::cos(p) - kFieldVertical * std::sin(p);
  out[7] = -kFieldHorizontal * std::sin(y);
  out[8] = kFieldHorizontal * std::cos(y) * std::sin(p) + kFieldVertical * std::cos(p);
  return out;
}

std::array<double, 3> SubjectProfile::fsr_basis(double u) const {
  if (u < 0.0 || u >= stance_fraction) return {0.0, 0.0, 0.0};
  const double s = u / stance_fraction;
  return {gauss(s, 0.12, 0.15), gauss(s, 0.45, 0.20), gauss(s, 0.80, 0.15)};
}

std::array<double, kFsrPerFoot> SubjectProfile::fsr_clean(double u) const {
  const auto basis = fsr_basis(u);
  const double v = vgrf_bw(u);
  std::array<double, kFsrPerFoot> out{};
  for (std::size_t i = 0; i < kFsrPerFoot; ++i) {
    double load = 0.0;
    for (std::size_t b = 0; b < 3; ++b) load += fsr_weights[i][b] * basis[b];
    out[i] = 1.0 - std::exp(-fsr_gain * v * load);
  }
  return out;
}

void SubjectProfile::validate() const {
  auto bad = [&](const std::string& what) { fail(ErrorCode::RangeError, "subject profile: " + what); };
  if (!(mass_kg > 0.0) || !(height_cm > 0.0) || !(stride_period_ms > 0.0)) bad("mass, height and stride period must be positive");
  if (stride_period_ms != std::round(stride_period_ms)) bad("stride period must be whole milliseconds");
  if (!(stance_fraction > 0.0 && stance_fraction < 1.0)) bad("stance fraction must lie in (0, 1)");
  for (const auto* set : {&angles, &moments})
    for (const auto& f : *set)
      if (f.a.size() != f.b.size() || f.a.size() > kMaxHarmonics) bad("at most 6 harmonics with paired coefficients");
  if (!(grf_band[0] <= grf_band[1]) || std::max(grf.amp1, grf.amp2) > grf_band[1] ||
      std::max(grf.amp1, grf.amp2) < grf_band[0])
    bad("vGRF amplitudes outside the configured band");
  if (!(grf_scale > 0.0)) bad("finalize() was not called");
}

SubjectProfile base_profile(int subject_id) {
  SubjectProfile p;
  p.subject_id = subject_id;
  p.angles[0] = {12.0, {22.0, -3.0, 1.0}, {-8.0, 2.0, -0.5}};
  p.angles[1] = {1.0, {3.0, -2.0}, {3.0, 1.0}};
  p.angles[2] = {2.0, {-4.0, 1.5}, {2.0, -1.0}};
  p.angles[3] = fourier_fit(
      [](double u) { return 5.0 + 15.0 * wrapped_gauss(u, 0.15, 0.07) + 55.0 * wrapped_gauss(u, 0.72, 0.11); },
      kMaxHarmonics);
  p.angles[4] = fourier_fit(
      [](double u) { return 1.0 + 9.0 * wrapped_gauss(u, 0.42, 0.14) - 17.0 * wrapped_gauss(u, 0.64, 0.06); },
      kMaxHarmonics);
  p.moments[0] = {0.0, {0.25, 0.1}, {0.3, -0.05}};
  p.moments[1] = {0.0, {0.05}, {0.05}};
  p.moments[2] = {0.0, {0.03}, {-0.02}};
  p.moments[3] = {0.0, {0.1, -0.08}, {-0.15, 0.05}};
  p.moments[4] = {0.0, {-0.06}, {0.04}};
  p.moment_grf_gain = {0.45, 0.55, 0.12, 0.35, 1.35};
  p.fsr_weights = {{{1.0, 0.25, 0.0},
                    {0.9, 0.3, 0.05},
                    {0.3, 1.0, 0.3},
                    {0.2, 0.9, 0.4},
                    {0.25, 0.8, 0.5},
                    {0.05, 0.3, 1.0},
                    {0.0, 0.25, 0.9},
                    {0.0, 0.2, 0.8}}};
  p.finalize();
  return p;
}

SubjectProfile random_profile(int subject_id, Rng& rng) {
  SubjectProfile p = base_profile(subject_id);
  p.mass_kg = rng.uniform(58.0, 85.0);
  p.height_cm = rng.uniform(160.0, 190.0);
  p.stride_period_ms = 920.0 + 40.0 * static_cast<double>(rng.below(8));
  p.stance_fraction = rng.uniform(0.58, 0.64);
  for (auto& f : p.angles) {
    f.a0 += 3.0 * rng.normal();
    for (std::size_t k = 0; k < f.a.size(); ++k) {
      f.a[k] = f.a[k] * (1.0 + 0.15 * rng.normal()) + 0.4 * rng.normal();
      f.b[k] = f.b[k] * (1.0 + 0.15 * rng.normal()) + 0.4 * rng.normal();
    }
  }
  for (auto& f : p.moments) {
    for (std::size_t k = 0; k < f.a.size(); ++k) {
      f.a[k] *= 1.0 + 0.15 * rng.normal();
      f.b[k] *= 1.0 + 0.15 * rng.normal();
    }
  }
  for (auto& g : p.moment_grf_gain) g *= 1.0 + 0.12 * rng.normal();
  p.grf.amp1 = rng.uniform(1.03, 1.19);
  p.grf.amp2 = rng.uniform(1.03, 1.19);
  p.grf.center1 += 0.03 * (2.0 * rng.uniform() - 1.0);
  p.grf.center2 += 0.03 * (2.0 * rng.uniform() - 1.0);
  p.grf.width1 *= rng.uniform(0.85, 1.15);
  p.grf.width2 *= rng.uniform(0.85, 1.15);
  p.grf.valley = rng.uniform(0.65, 0.85);
  for (auto& row : p.fsr_weights)
    for (auto& w : row) w = std::max(0.05, w * (1.0 + 0.25 * rng.normal()));
  p.fsr_gain = rng.uniform(1.2, 1.8);
  for (auto& site : p.mount_offset_deg)
    for (auto& o : site) o = 4.0 * rng.normal();
  p.finalize();
  return p;
}

SampleSeries Trial::insole(Foot foot) const {
  SampleSeries out(sensors.start_ms, sensors.rate_hz, fsr_channels(foot), sensors.rows());
  for (std::size_t c = 0; c < kFsrPerFoot; ++c) {
    const std::size_t src = sensors.channel_index(out.channels[c]);
    for (std::size_t r = 0; r < sensors.rows(); ++r) out.at(r, c) = sensors.at(r, src);
  }
  return out;
}

SampleSeries Trial::imu(ImuSite site) const {
  SampleSeries out(sensors.start_ms, sensors.rate_hz, imu_channels(site), sensors.rows());
  for (std::size_t c = 0; c < kImuAxes; ++c) {
    const std::size_t src = sensors.channel_index(out.channels[c]);
    for (std::size_t r = 0; r < sensors.rows(); ++r) out.at(r, c) = sensors.at(r, src);
  }
  return out;
}

const Subject& Dataset::subject(int id) const {
  for (const auto& s : subjects)
    if (s.id == id) return s;
  fail(ErrorCode::DataError, "unknown subject id " + std::to_string(id));
}

std::vector<int> Dataset::subject_ids() const {
  std::vector<int> ids;
  for (const auto& s : subjects) ids.push_back(s.id);
  return ids;
}

Trial generate_trial(const SubjectProfile& profile_in, int trial_id, const TrialOptions& opt, std::uint64_t seed) {
  profile_in.validate();
  const double T = profile_in.stride_period_ms;
  const double duration_ms = opt.duration_s * 1000.0;
  if (!(duration_ms >= 2.0 * T))
    fail(ErrorCode::InsufficientDuration, "trial must cover at least two strides (" + format_double(2.0 * T) + " ms)");

  Rng rng(seed);
  SubjectProfile p = profile_in;
  // A joint's moment harmonics scale with its angle excursion in the trial.
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const double k = 1.0 + opt.trial_variation * rng.normal();
    for (auto* f : {&p.angles[j], &p.moments[j]}) {
      for (auto& v : f->a) v *= k;
      for (auto& v : f->b) v *= k;
    }
  }
  const NoiseLevels noise = p.noise.scaled(opt.noise_scale);

  Trial trial;
  trial.subject_id = p.subject_id;
  trial.trial_id = trial_id;

  const double ds = 1000.0 / kSensorRateHz;
  const auto n_sensor = static_cast<std::size_t>(std::ceil(duration_ms / ds));
  trial.sensors = SampleSeries(0.0, kSensorRateHz, sensor_columns(), n_sensor);
  for (std::size_t i = 0; i < n_sensor; ++i) {
    const double t = trial.sensors.time_ms(i);
    auto row = trial.sensors.row(i);
    std::size_t c = 0;
    for (Foot f : kFeet) {
      const auto fsr = p.fsr_clean(phase(t, f, T));
      for (double v : fsr) row[c++] = std::clamp(v + noise.fsr * rng.normal(), 0.0, 1.0);
    }
    for (ImuSite s : kImuSites) {
      const auto imu = p.imu_clean(s, phase(t, leg_of(s), T));
      for (std::size_t a = 0; a < kImuAxes; ++a) {
        const double sigma = a < 3 ? noise.accel : (a < 6 ? noise.gyro : noise.mag);
        row[c++] = imu[a] + sigma * rng.normal();
      }
    }
  }

  const double dg = 1000.0 / kGroundTruthRateHz;
  const auto n_gt = static_cast<std::size_t>(std::ceil(duration_ms / dg));
  trial.ground_truth = SampleSeries(0.0, kGroundTruthRateHz, ground_truth_columns(), n_gt);
  for (std::size_t i = 0; i < n_gt; ++i) {
    const double t = trial.ground_truth.time_ms(i);
    const double u[2] = {phase(t, Foot::Right, T), phase(t, Foot::Left, T)};
    auto row = trial.ground_truth.row(i);
    std::size_t c = 0;
    for (int f = 0; f < 2; ++f) row[c++] = p.vgrf_bw(u[f]);
    for (std::size_t j = 0; j < kJointCount; ++j)
      for (int f = 0; f < 2; ++f) row[c++] = p.angle_deg(j, u[f]);
    for (std::size_t j = 0; j < kJointCount; ++j)
      for (int f = 0; f < 2; ++f) row[c++] = p.moment_nm(j, u[f]);
    for (int f = 0; f < 2; ++f) row[c++] = 100.0 * u[f];
  }

  const double last = trial.ground_truth.end_ms();
  for (int k = 0;; ++k) {
    const double tr = k * T;
    if (tr > last) break;
    trial.strikes.push_back({tr, Foot::Right, StrikeSource::Generator});
    const double tl = tr + T / 2.0;
    if (tl <= last) trial.strikes.push_back({tl, Foot::Left, StrikeSource::Generator});
  }
  return trial;
}

Cohort generate_cohort(int n_subjects, std::uint64_t seed, const CohortOptions& opt) {
  if (n_subjects < 1) fail(ErrorCode::RangeError, "generate_cohort needs at least one subject");
  if (opt.trials_per_subject < 1) fail(ErrorCode::RangeError, "generate_cohort needs at least one trial per subject");
  Cohort out;
  // Stride periods are dealt from a shuffled deck of eight cadences so small
  // cohorts never repeat one.
  std::vector<int> deck(8);
  for (int i = 0; i < 8; ++i) deck[static_cast<std::size_t>(i)] = i;
  Rng deck_rng(substream_seed(seed, 0));
  deck_rng.shuffle(deck);
  for (int s = 0; s < n_subjects; ++s) {
    Rng rng(substream_seed(seed, 1 + static_cast<std::uint64_t>(s)));
    SubjectProfile p = random_profile(s + 1, rng);
    p.stride_period_ms = 920.0 + 40.0 * deck[static_cast<std::size_t>(s % 8)];
    out.profiles.push_back(p);
    out.dataset.subjects.push_back({p.subject_id, p.mass_kg, p.height_cm});
  }
  const int per = opt.trials_per_subject;
  const int total = n_subjects * per;
  out.dataset.trials.resize(static_cast<std::size_t>(total));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < total; ++i) {
    const int s = i / per, t = i % per;
    const std::uint64_t subject_seed = substream_seed(seed, 1000 + static_cast<std::uint64_t>(s));
    out.dataset.trials[static_cast<std::size_t>(i)] =
        generate_trial(out.profiles[static_cast<std::size_t>(s)], t + 1, opt.trial,
                       substream_seed(subject_seed, static_cast<std::uint64_t>(t)));
  }
  return out;
}

std::vector<HeelStrikeEvent> strikes_from_gc(const SampleSeries& gt, StrikeSource source) {
  std::vector<HeelStrikeEvent> out;
  const std::size_t n = gt.rows();
  const double dt = 1000.0 / gt.rate_hz;
  for (Foot f : kFeet) {
    const std::size_t c = gt.channel_index(gt_gc_channel(f));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = gt.at(i, c);
      const bool strike = (i == 0 && g == 0.0) || (i > 0 && g < gt.at(i - 1, c));
      if (!strike) continue;
      double slope = 0.0;  // percent per ms
      if (i + 1 < n) slope = (gt.at(i + 1, c) - g) / dt;
      else if (i >= 2) slope = (gt.at(i - 1, c) - gt.at(i - 2, c)) / dt;
      const double t = gt.time_ms(i) - (g == 0.0 || !(slope > 0.0) ? 0.0 : g / slope);
      out.push_back({t, f, source});
    }
  }
  std::sort(out.begin(), out.end(), [](const HeelStrikeEvent& a, const HeelStrikeEvent& b) {
    return a.time_ms != b.time_ms ? a.time_ms < b.time_ms : a.foot < b.foot;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files

std::string trial_file_name(int subject_id, int trial_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%02d_t%02d.csv", subject_id, trial_id);
  return buf;
}

void write_trial_csv(std::ostream& os, const Trial& trial) {
  const auto cols = trial_columns();
  std::string line;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) line += ',';
    line += cols[i];
  }
  os << line << '\n';
  const std::size_t ns = trial.sensors.cols(), ng = trial.ground_truth.cols();
  if (ns != sensor_columns().size() || ng != ground_truth_columns().size())
    fail(ErrorCode::ShapeError, "write_trial_csv: trial does not follow the column schema");
  std::size_t i = 0, j = 0;
  const std::size_t ni = trial.sensors.rows(), nj = trial.ground_truth.rows();
  while (i < ni || j < nj) {
    const bool sensor_next = j >= nj || (i < ni && trial.sensors.time_ms(i) <= trial.ground_truth.time_ms(j));
    line.clear();
    if (sensor_next) {
      append_double(line, trial.sensors.time_ms(i));
      for (double v : trial.sensors.row(i)) {
        line += ',';
        append_double(line, v);
      }
      line.append(ng, ',');
      ++i;
    } else {
      append_double(line, trial.ground_truth.time_ms(j));
      line.append(ns, ',');
      for (double v : trial.ground_truth.row(j)) {
        line += ',';
        append_double(line, v);
      }
      ++j;
    }
    os << line << '\n';
  }
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

// Rebuilds a uniformly sampled series from explicit row times.
SampleSeries uniform_series(const std::vector<double>& times, std::vector<double> data,
                            std::vector<std::string> names, const std::string& where) {
  if (times.size() < 2) fail(ErrorCode::DataError, where + ": fewer than two rows of this kind");
  const double dt = times[1] - times[0];
  if (!(dt > 0.0)) fail(ErrorCode::AlignmentError, where + ": row times are not increasing");
  SampleSeries s(times[0], 1000.0 / dt, std::move(names));
  s.data = std::move(data);
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::abs(s.time_ms(i) - times[i]) > 1e-6 * std::max(1.0, std::abs(times[i])))
      fail(ErrorCode::AlignmentError,
           where + ": row at " + format_double(times[i]) + " ms is off the uniform sample grid");
  return s;
}

}  // namespace

Trial read_trial_csv(std::istream& is, int subject_id, int trial_id, const std::string& source) {
  const auto cols = trial_columns();
  const std::size_t ns = sensor_columns().size();
  const std::size_t ng = ground_truth_columns().size();
  std::string line;
  std::size_t line_no = 1;
  auto where = [&](std::size_t ln) { return source + ":" + std::to_string(ln); };
  if (!std::getline(is, line)) fail(ErrorCode::FormatError, where(1) + ": missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (k >= header.size())
      fail(ErrorCode::FormatError, where(1) + ": missing column '" + cols[k] + "'");
    if (header[k] != cols[k])
      fail(ErrorCode::FormatError,
           where(1) + ": expected column '" + cols[k] + "' at position " + std::to_string(k + 1) + ", found '" +
               std::string(header[k]) + "'");
  }
  if (header.size() != cols.size()) fail(ErrorCode::FormatError, where(1) + ": unexpected extra columns");

  std::vector<double> st, gtt, sd, gd;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (f.size() < cols.size())
      fail(ErrorCode::DataError, where(line_no) + ": truncated row (" + std::to_string(f.size()) + " of " +
                                     std::to_string(cols.size()) + " fields)");
    if (f.size() > cols.size()) fail(ErrorCode::FormatError, where(line_no) + ": too many fields");
    auto number = [&](std::string_view text, std::size_t col) {
      double v = 0.0;
      if (!parse_double(text, v))
        fail(ErrorCode::FormatError, where(line_no) + ": column '" + cols[col] + "' is not a number");
      if (!std::isfinite(v))
        fail(ErrorCode::DataError, where(line_no) + ": non-finite value in column '" + cols[col] + "'");
      return v;
    };
    const double t = number(f[0], 0);
    std::size_t filled_s = 0, filled_g = 0;
    for (std::size_t k = 1; k <= ns; ++k) filled_s += !f[k].empty();
    for (std::size_t k = ns + 1; k < cols.size(); ++k) filled_g += !f[k].empty();
    if (filled_s == ns && filled_g == 0) {
      st.push_back(t);
      for (std::size_t k = 1; k <= ns; ++k) sd.push_back(number(f[k], k));
    } else if (filled_g == ng && filled_s == 0) {
      gtt.push_back(t);
      for (std::size_t k = ns + 1; k < cols.size(); ++k) gd.push_back(number(f[k], k));
    } else {
      fail(ErrorCode::DataError, where(line_no) + ": row has missing values");
    }
  }
  Trial trial;
  trial.subject_id = subject_id;
  trial.trial_id = trial_id;
  trial.sensors = uniform_series(st, std::move(sd), sensor_columns(), source + " sensor rows");
  trial.ground_truth = uniform_series(gtt, std::move(gd), ground_truth_columns(), source + " ground-truth rows");
  trial.strikes = strikes_from_gc(trial.ground_truth);
  return trial;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
  auto open = [](const std::filesystem::path& p) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) fail(ErrorCode::IoError, "cannot write " + p.string());
    return os;
  };
  {
    auto os = open(dir / "subjects.csv");
    os << "subject_id,mass_kg,weight_n,height_cm\n";
    for (const auto& s : ds.subjects)
      os << s.id << ',' << format_double(s.mass_kg) << ',' << format_double(s.weight_n()) << ','
         << format_double(s.height_cm) << '\n';
  }
  for (const auto& t : ds.trials) {
    auto os = open(dir / trial_file_name(t.subject_id, t.trial_id));
    write_trial_csv(os, t);
    if (!os) fail(ErrorCode::IoError, "write failed for " + trial_file_name(t.subject_id, t.trial_id));
  }
}

Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const auto meta = dir / "subjects.csv";
  std::ifstream is(meta);
  if (!is) fail(ErrorCode::IoError, "cannot open " + meta.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line) || line != "subject_id,mass_kg,weight_n,height_cm")
    fail(ErrorCode::FormatError, meta.string() + ":1: expected header subject_id,mass_kg,weight_n,height_cm");
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_commas(line);
    const std::string where = meta.string() + ":" + std::to_string(line_no);
    if (f.size() != 4) fail(ErrorCode::DataError, where + ": expected 4 fields");
    long long id = 0;
    double mass = 0, weight = 0, height = 0;
    if (!parse_int(f[0], id) || !parse_double(f[1], mass) || !parse_double(f[2], weight) ||
        !parse_double(f[3], height))
      fail(ErrorCode::FormatError, where + ": malformed number");
    if (!(mass > 0.0) || !(height > 0.0) || !std::isfinite(weight))
      fail(ErrorCode::DataError, where + ": mass and height must be positive");
    if (std::abs(weight - mass * kGravity) > 1e-6 * weight)
      fail(ErrorCode::DataError, where + ": weight does not equal mass times 9.81");
    ds.subjects.push_back({static_cast<int>(id), mass, height});
  }

  const std::regex name_re(R"(s(\d+)_t(\d+)\.csv)");
  std::vector<std::pair<std::pair<int, int>, std::filesystem::path>> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, name_re)) continue;
    files.push_back({{std::stoi(m[1].str()), std::stoi(m[2].str())}, entry.path()});
  }
  std::sort(files.begin(), files.end());
  for (const auto& [key, path] : files) {
    ds.subject(key.first);
    std::ifstream ts(path, std::ios::binary);
    if (!ts) fail(ErrorCode::IoError, "cannot open " + path.string());
    ds.trials.push_back(read_trial_csv(ts, key.first, key.second, path.string()));
  }
  return ds;
}

}  // namespace gaitrt
