#include "gaitrt/features.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"

#include "gaitrt/binary_io.hpp"
#include "gaitrt/format.hpp"

namespace gaitrt {

// ---------------------------------------------------------------------------
// Front end

FrontEnd::FrontEnd(const FrontEndConfig& cfg) : cfg_(cfg) {
  const double lp[1] = {cfg.fsr_cutoff_hz};
  fsr_ = design_butterworth(cfg.order, FilterKind::Lowpass, lp, cfg.rate_hz);
  imu_ = design_butterworth(cfg.order, FilterKind::Bandpass, cfg.imu_band_hz, cfg.rate_hz);
}

void FrontEnd::step(std::span<double> sensors) {
  if (sensors.size() != kSensorChannels) fail(ErrorCode::ShapeError, "front end expects 52 sensor channels");
  fsr_.step(sensors.first(2 * kFsrPerFoot));
  imu_.step(sensors.subspan(2 * kFsrPerFoot));
}

std::vector<std::string> frame_columns() {
  auto cols = sensor_columns();
  for (auto& c : ground_truth_columns()) cols.push_back(c);
  return cols;
}

ProcessedTrial preprocess_trial(const Trial& trial, const FrontEndConfig& cfg, double keep_rate_hz) {
  if (trial.sensors.channels != sensor_columns())
    fail(ErrorCode::MissingChannel, "trial sensors do not follow the column schema");
  if (trial.ground_truth.channels != ground_truth_columns())
    fail(ErrorCode::MissingChannel, "trial ground truth does not follow the column schema");
  const double ratio = cfg.rate_hz / keep_rate_hz;
  const auto keep_every = static_cast<std::size_t>(std::llround(ratio));
  if (keep_every < 1 || std::abs(ratio - static_cast<double>(keep_every)) > 1e-9)
    fail(ErrorCode::RangeError, "keep rate must divide the front-end rate");

  const SampleSeries up = resample_linear(trial.sensors, cfg.rate_hz);
  const SampleSeries& gt = trial.ground_truth;
  FrontEnd fe(cfg);

  ProcessedTrial out;
  out.subject_id = trial.subject_id;
  out.trial_id = trial.trial_id;
  out.strikes = trial.strikes;
  out.frames = SampleSeries(up.start_ms, keep_rate_hz, frame_columns());

  std::vector<double> frame(kSensorChannels + kTruthChannels);
  bool started = false;
  for (std::size_t r = 0; r < up.rows(); ++r) {
    std::copy(up.row(r).begin(), up.row(r).end(), frame.begin());
    fe.step(std::span<double>(frame).first(kSensorChannels));
    if (r % keep_every != 0) continue;
    const double t = up.time_ms(r);
    const double pos = (t - gt.start_ms) * gt.rate_hz / 1000.0;
    if (pos < 0.0) continue;
    auto j = static_cast<std::size_t>(std::floor(pos));
    if (j >= gt.rows() || (j + 1 == gt.rows() && pos > static_cast<double>(j))) break;
    const double frac = pos - static_cast<double>(j);
    for (std::size_t c = 0; c < kTruthChannels; ++c) {
      const double lo = gt.at(j, c);
      frame[kSensorChannels + c] = frac == 0.0 ? lo : lo + frac * (gt.at(j + 1, c) - lo);
    }
    if (!started) {
      out.frames.start_ms = t;
      started = true;
    }
    out.frames.append_row(frame);
  }
  if (out.frames.rows() == 0) fail(ErrorCode::AlignmentError, "sensor and ground-truth spans do not overlap");
  return out;
}

std::vector<ProcessedTrial> preprocess_dataset(const Dataset& ds, const FrontEndConfig& cfg, double keep_rate_hz) {
  std::vector<ProcessedTrial> out(ds.trials.size());
  std::vector<std::string> errors(ds.trials.size());
  std::vector<int> codes(ds.trials.size(), 0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < ds.trials.size(); ++i) {
    try {
      out[i] = preprocess_trial(ds.trials[i], cfg, keep_rate_hz);
    } catch (const Error& e) {
      codes[i] = static_cast<int>(e.code());
      errors[i] = e.what();
    }
  }
  for (std::size_t i = 0; i < codes.size(); ++i)
    if (codes[i] != 0) fail(static_cast<ErrorCode>(codes[i]), errors[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Configurations

std::string Role::name() const {
  const std::string suffix = side == Side::Own ? "" : (side == Side::Right ? "_r" : "_l");
  switch (kind) {
    case RoleKind::Imu: {
      const std::size_t seg = index / kImuAxes, axis = index % kImuAxes;
      std::string site;
      if (side == Side::Own) site = seg == 0 ? "shank" : "foot";
      else site = std::string(1, side == Side::Right ? 'r' : 'l') + (seg == 0 ? "s" : "f");
      return "imu_" + site + "_" + std::string(kImuAxisNames[axis]);
    }
    case RoleKind::Fsr:
      return side == Side::Own ? "fsr_" + std::to_string(index + 1)
                               : "fsr_" + suffix.substr(1) + std::to_string(index + 1);
    case RoleKind::VgrfMass: return "vgrf_mass" + suffix;
    case RoleKind::VgrfWeight: return "vgrf_bw" + suffix;
    case RoleKind::Angle: return "angle_" + std::string(kJointNames[index]) + suffix;
    case RoleKind::Moment: return "moment_" + std::string(kJointNames[index]) + suffix;
    case RoleKind::GcPercent: return "gc_percent";
    case RoleKind::LeadFlag: return "lead_flag";
  }
  return "?";
}

std::vector<std::string> ModelConfig::input_names() const {
  std::vector<std::string> out;
  for (const auto& r : inputs) out.push_back(r.name());
  return out;
}

std::vector<std::string> ModelConfig::output_names() const {
  std::vector<std::string> out;
  for (const auto& r : outputs) out.push_back(r.name());
  return out;
}

namespace {

Role role(RoleKind k, Side s = Side::Own, std::size_t i = 0) { return {k, s, static_cast<std::uint8_t>(i)}; }

void add_imus(std::vector<Role>& v, Side s) {
  for (std::size_t i = 0; i < 2 * kImuAxes; ++i) v.push_back(role(RoleKind::Imu, s, i));
}

void add_joints(std::vector<Role>& v, RoleKind k, Side s, bool ankle_only) {
  for (std::size_t j = ankle_only ? kAnkle : 0; j < kJointCount; ++j) v.push_back(role(k, s, j));
}

}  // namespace

ModelConfig model_config(std::string_view name) {
  ModelConfig c;
  c.name = std::string(name);
  const Role gc = role(RoleKind::GcPercent), flag = role(RoleKind::LeadFlag);
  if (name == "GRF") {
    c.own_clock_only = true;
    for (std::size_t i = 0; i < kFsrPerFoot; ++i) c.inputs.push_back(role(RoleKind::Fsr, Side::Own, i));
    c.inputs.push_back(gc);
    c.outputs.push_back(role(RoleKind::VgrfWeight));
    return c;
  }
  if (name.size() == 2 && name[0] == 'W' && name[1] >= '1' && name[1] <= '6') {
    const int w = name[1] - '0';
    const bool ankle_only = w <= 3;
    const int variant = (w - 1) % 3;  // 0: IMUs, 1: + own vGRF, 2: bilateral + both vGRF
    if (variant == 2) {
      c.bilateral = true;
      add_imus(c.inputs, Side::Right);
      add_imus(c.inputs, Side::Left);
      c.inputs.push_back(role(RoleKind::VgrfMass, Side::Right));
      c.inputs.push_back(role(RoleKind::VgrfMass, Side::Left));
      add_joints(c.outputs, RoleKind::Angle, Side::Right, ankle_only);
      add_joints(c.outputs, RoleKind::Angle, Side::Left, ankle_only);
    } else {
      add_imus(c.inputs, Side::Own);
      if (variant == 1) c.inputs.push_back(role(RoleKind::VgrfMass));
      add_joints(c.outputs, RoleKind::Angle, Side::Own, ankle_only);
    }
    c.inputs.push_back(gc);
    c.inputs.push_back(flag);
    return c;
  }
  if (name == "M_ankle" || name == "M_5joint") {
    const bool ankle_only = name == "M_ankle";
    add_joints(c.inputs, RoleKind::Angle, Side::Own, ankle_only);
    c.inputs.push_back(role(RoleKind::VgrfMass));
    c.inputs.push_back(gc);
    c.inputs.push_back(flag);
    add_joints(c.outputs, RoleKind::Moment, Side::Own, ankle_only);
    c.window = 10;
    c.default_k = 4;
    return c;
  }
  if (name == "S1" || name == "S2")
    fail(ErrorCode::RangeError, "model " + c.name + " has no defined input/output layout and is not provided");
  fail(ErrorCode::RangeError, "unknown model configuration '" + c.name + "'");
}

std::vector<std::string> model_names() {
  return {"GRF", "W1", "W2", "W3", "W4", "W5", "W6", "M_ankle", "M_5joint"};
}

// ---------------------------------------------------------------------------
// Row assembly

namespace {

std::string channel_of(const Role& r, Foot leg, double& scale) {
  const Foot f = r.foot(leg);
  scale = 1.0;
  switch (r.kind) {
    case RoleKind::Imu: {
      const std::size_t seg = r.index / kImuAxes, axis = r.index % kImuAxes;
      return imu_channel(seg == 0 ? shank_of(f) : foot_of(f), axis);
    }
    case RoleKind::Fsr: return fsr_channel(f, r.index);
    case RoleKind::VgrfMass: scale = kGravity; return gt_vgrf_channel(f);
    case RoleKind::VgrfWeight: return gt_vgrf_channel(f);
    case RoleKind::Angle: return gt_angle_channel(r.index, f);
    case RoleKind::Moment: return gt_moment_channel(r.index, f);
    default: return {};
  }
}

}  // namespace

RowAssembler::RowAssembler(std::span<const Role> roles, std::span<const std::string> channels, Foot leg) {
  for (const auto& r : roles) {
    Slot s;
    if (r.kind == RoleKind::GcPercent) s.column = -1;
    else if (r.kind == RoleKind::LeadFlag) s.column = -2;
    else {
      const std::string name = channel_of(r, leg, s.scale);
      auto it = std::find(channels.begin(), channels.end(), name);
      if (it == channels.end()) fail(ErrorCode::MissingChannel, "required channel '" + name + "' is missing");
      s.column = static_cast<int>(it - channels.begin());
    }
    slots_.push_back(s);
  }
}

void RowAssembler::fill(std::span<const double> frame, double gc, double flag, std::span<double> out) const {
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    const Slot& s = slots_[i];
    out[i] = s.column == -1 ? gc : (s.column == -2 ? flag : frame[static_cast<std::size_t>(s.column)] * s.scale);
  }
}

Matrix assemble_features(const ModelConfig& config, const SampleSeries& streams, std::span<const double> gc,
                         std::span<const double> flag, Foot leg) {
  streams.validate();
  const std::size_t n = streams.rows();
  if (gc.size() != n || flag.size() != n)
    fail(ErrorCode::AlignmentError, "GC% and flag need one value per stream sample");
  const RowAssembler rows(config.inputs, streams.channels, leg);
  Matrix X(n, rows.size());
  for (std::size_t r = 0; r < n; ++r) rows.fill(streams.row(r), gc[r], flag[r], X.row(r));
  return X;
}

Matrix assemble_features(const ModelConfig& config, std::span<const SampleSeries> streams,
                         std::span<const double> gc, std::span<const double> flag, Foot leg) {
  if (streams.empty()) fail(ErrorCode::MissingChannel, "no input streams");
  SampleSeries merged(streams[0].start_ms, streams[0].rate_hz, {}, 0);
  for (const auto& s : streams) {
    s.validate();
    if (s.start_ms != streams[0].start_ms || s.rate_hz != streams[0].rate_hz || s.rows() != streams[0].rows())
      fail(ErrorCode::AlignmentError, "input streams differ in start time, rate or length");
    for (const auto& c : s.channels) merged.channels.push_back(c);
  }
  const std::size_t n = streams[0].rows();
  merged.data.reserve(n * merged.channels.size());
  for (std::size_t r = 0; r < n; ++r)
    for (const auto& s : streams)
      for (double v : s.row(r)) merged.data.push_back(v);
  return assemble_features(config, merged, gc, flag, leg);
}

// ---------------------------------------------------------------------------
// Tables

Matrix FeatureTable::X_matrix() const {
  if (X.time != 1) fail(ErrorCode::ShapeError, "X_matrix needs window 1");
  Matrix m(X.batch, X.channels);
  m.data = X.data;
  return m;
}

FeatureTable FeatureTable::select(std::span<const std::size_t> rows) const {
  FeatureTable t;
  t.config = config;
  t.X = Tensor3(rows.size(), X.time, X.channels);
  t.Y = Matrix(rows.size(), Y.cols);
  const std::size_t xs = X.time * X.channels;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    std::copy_n(X.data.begin() + static_cast<std::ptrdiff_t>(r * xs), xs, t.X.data.begin() + static_cast<std::ptrdiff_t>(i * xs));
    std::copy_n(Y.data.begin() + static_cast<std::ptrdiff_t>(r * Y.cols), Y.cols,
                t.Y.data.begin() + static_cast<std::ptrdiff_t>(i * Y.cols));
    t.cycle.push_back(cycle[r]);
    t.subject.push_back(subject[r]);
    t.trial.push_back(trial[r]);
    t.time_ms.push_back(time_ms[r]);
    t.leg.push_back(leg[r]);
  }
  return t;
}

FeatureTable build_table(const ModelConfig& config, std::span<const ProcessedTrial> trials, const TableOptions& opt) {
  if (opt.row_stride < 1) fail(ErrorCode::RangeError, "row stride must be at least 1");
  FeatureTable t;
  t.config = config;
  const std::size_t w = config.window, nin = config.input_count(), nout = config.output_count();
  t.X = Tensor3(0, w, nin);
  t.Y = Matrix(0, nout);
  std::vector<double> xrow(nin), yrow(nout);

  for (const auto& tr : trials) {
    const SampleSeries& fr = tr.frames;
    const std::size_t n = fr.rows();
    for (Foot clock : kFeet) {
      const auto s = strike_times(tr.strikes, clock);
      if (s.size() < 2) continue;
      // GC% and stride index of every frame under this foot's clock.
      std::vector<double> gc(n, 0.0);
      std::vector<int> stride(n, -1);
      std::size_t k = 0;
      for (std::size_t r = 0; r < n; ++r) {
        const double time = fr.time_ms(r);
        while (k + 1 < s.size() && s[k + 1] <= time) ++k;
        if (time < s[k] || k + 1 >= s.size() || time < opt.settle_ms) continue;
        gc[r] = 100.0 * (time - s[k]) / (s[k + 1] - s[k]);
        stride[r] = static_cast<int>(k);
      }
      std::vector<Foot> legs{clock};
      if (!config.bilateral && !config.own_clock_only) legs.push_back(other(clock));
      for (Foot leg : legs) {
        const RowAssembler in(config.inputs, fr.channels, leg);
        const RowAssembler out(config.outputs, fr.channels, leg);
        const double flag = config.bilateral ? (clock == Foot::Right ? 1.0 : 0.0) : (leg == clock ? 1.0 : 0.0);
        for (std::size_t r = w - 1; r < n; ++r) {
          if (r % opt.row_stride != 0 || stride[r] < 0) continue;
          bool ok = true;
          for (std::size_t q = r + 1 - w; q < r && ok; ++q) ok = stride[q] >= 0;
          if (!ok) continue;
          for (std::size_t q = 0; q < w; ++q) {
            const std::size_t src = r + 1 - w + q;
            in.fill(fr.row(src), gc[src], flag, xrow);
            t.X.data.insert(t.X.data.end(), xrow.begin(), xrow.end());
          }
          out.fill(fr.row(r), gc[r], flag, yrow);
          t.Y.append_row(yrow);
          ++t.X.batch;
          t.cycle.push_back(((static_cast<std::int64_t>(tr.subject_id) * 1000 + tr.trial_id) * 2 +
                             static_cast<std::int64_t>(clock)) * 10000 + stride[r]);
          t.subject.push_back(tr.subject_id);
          t.trial.push_back(tr.trial_id);
          t.time_ms.push_back(fr.time_ms(r));
          t.leg.push_back(static_cast<std::uint8_t>(leg));
        }
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// Models

Tensor3 TrainedModel::as_windows(const Matrix& X) {
  Tensor3 t(X.rows, 1, X.cols);
  t.data = X.data;
  return t;
}

Matrix TrainedModel::predict(const Tensor3& X) {
  if (X.channels != config.input_count() || X.time != config.window)
    fail(ErrorCode::ShapeError, "model " + config.name + " expects windows of " + std::to_string(config.window) +
                                    " x " + std::to_string(config.input_count()));
  if (config.uses_resnet()) return resnet.predict(X);
  Matrix m(X.batch, X.channels);
  m.data = X.data;
  return predict_forest(forest, scaler_transform(forest.input_scaler, m));
}

TrainedModel train_model(const FeatureTable& table, std::span<const std::size_t> train_rows, const ModelSpec& spec,
                         std::uint64_t seed) {
  if (train_rows.empty()) fail(ErrorCode::EmptyInput, "no training rows");
  TrainedModel m;
  m.config = table.config;
  m.seed = seed;
  const FeatureTable sub = table.select(train_rows);
  if (table.config.uses_resnet()) {
    ResNetConfig arch = spec.resnet;
    arch.in_channels = table.config.input_count();
    arch.window = table.config.window;
    arch.n_out = table.config.output_count();
    TrainConfig tc = spec.train;
    tc.window_length = table.config.window;
    auto result = train_moments(sub.X, sub.Y, sub.cycle, arch, tc, seed);
    m.resnet = std::move(result.model);
  } else {
    const Matrix X = sub.X_matrix();
    const StandardScaler sc = scaler_fit(X);
    m.forest = fit_forest(scaler_transform(sc, X), sub.Y, spec.forest, seed);
    m.forest.input_scaler = sc;
  }
  return m;
}

namespace {
constexpr std::uint32_t kModelVersion = 1;
}

void write_model(std::ostream& os, TrainedModel& model) {
  nlohmann::json meta;
  meta["config"] = model.config.name;
  meta["family"] = model.config.uses_resnet() ? "resnet" : "forest";
  meta["inputs"] = model.config.input_names();
  meta["outputs"] = model.config.output_names();
  meta["window"] = model.config.window;
  meta["vgrf_input_units"] = "N/kg (body-mass normalized)";
  meta["vgrf_target_units"] = "body weights";
  meta["seed"] = model.seed;
  bin::put_magic(os, "GRTM", kModelVersion);
  bin::put_str(os, meta.dump());
  if (model.config.uses_resnet()) write_resnet(os, model.resnet);
  else write_forest(os, model.forest);
  if (!os) fail(ErrorCode::IoError, "model write failed");
}

TrainedModel read_model(std::istream& is) {
  const std::uint32_t version = bin::expect_magic(is, "GRTM");
  if (version != kModelVersion) fail(ErrorCode::FormatError, "unsupported model version " + std::to_string(version));
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bin::get_str(is));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("model metadata: ") + e.what());
  }
  TrainedModel m;
  try {
    m.config = model_config(meta.at("config").get<std::string>());
    if (meta.at("inputs").get<std::vector<std::string>>() != m.config.input_names() ||
        meta.at("outputs").get<std::vector<std::string>>() != m.config.output_names())
      fail(ErrorCode::ModelMismatch, "stored layout differs from configuration " + m.config.name);
    m.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::FormatError, std::string("model metadata: ") + e.what());
  }
  if (m.config.uses_resnet()) {
    m.resnet = read_resnet(is);
    if (m.resnet.config().in_channels != m.config.input_count() || m.resnet.config().n_out != m.config.output_count())
      fail(ErrorCode::ModelMismatch, "network shape differs from configuration " + m.config.name);
  } else {
    m.forest = read_forest(is);
    if (m.forest.n_features != m.config.input_count() || m.forest.n_outputs != m.config.output_count())
      fail(ErrorCode::ModelMismatch, "forest shape differs from configuration " + m.config.name);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Protocols

FoldPlan plan_folds(const FeatureTable& table, const EvalProtocol& protocol) {
  FoldPlan plan;
  const std::size_t n = table.rows();
  std::vector<std::size_t> fold_of(n);
  std::size_t folds = 0;
  if (protocol.mode == EvalMode::Intra) {
    std::vector<std::int64_t> cycles(table.cycle);
    std::sort(cycles.begin(), cycles.end());
    cycles.erase(std::unique(cycles.begin(), cycles.end()), cycles.end());
    const std::size_t k = protocol.k;
    if (k < 2 || cycles.size() < k)
      fail(ErrorCode::InsufficientData, "intra-subject protocol needs k >= 2 and at least k gait cycles (have " +
                                            std::to_string(cycles.size()) + ")");
    Rng rng(protocol.seed);
    rng.shuffle(cycles);
    std::map<std::int64_t, std::size_t> assign;
    for (std::size_t i = 0; i < cycles.size(); ++i) assign[cycles[i]] = i * k / cycles.size();
    for (std::size_t r = 0; r < n; ++r) fold_of[r] = assign.at(table.cycle[r]);
    folds = k;
    for (std::size_t f = 0; f < k; ++f) plan.labels.push_back("fold" + std::to_string(f + 1));
  } else {
    std::vector<int> subjects(table.subject);
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    if (subjects.size() < 2) fail(ErrorCode::InsufficientData, "inter-subject protocol needs at least 2 subjects");
    for (std::size_t r = 0; r < n; ++r)
      fold_of[r] = static_cast<std::size_t>(std::lower_bound(subjects.begin(), subjects.end(), table.subject[r]) -
                                            subjects.begin());
    folds = subjects.size();
    for (int s : subjects) plan.labels.push_back("subject" + std::to_string(s));
  }
  plan.test_rows.resize(folds);
  plan.train_rows.resize(folds);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t f = 0; f < folds; ++f) (fold_of[r] == f ? plan.test_rows : plan.train_rows)[f].push_back(r);
  return plan;
}

ProtocolResult run_protocol(const EvalProtocol& protocol, const FeatureTable& table, const ModelSpec& spec,
                            const AuditHook& audit) {
  const FoldPlan plan = plan_folds(table, protocol);
  ProtocolResult res;
  res.config = table.config.name;
  res.protocol = protocol;
  res.outputs = table.config.output_names();
  const std::size_t nout = table.config.output_count();
  for (std::size_t f = 0; f < plan.labels.size(); ++f) {
    TrainedModel model = train_model(table, plan.train_rows[f], spec, substream_seed(protocol.seed, f + 1));
    if (audit) audit({f, &table, plan.train_rows[f], plan.test_rows[f], &model});
    const FeatureTable test = table.select(plan.test_rows[f]);
    const Matrix pred = model.predict(test.X);
    FoldResult fr;
    fr.label = plan.labels[f];
    fr.train_rows = plan.train_rows[f].size();
    fr.test_rows = plan.test_rows[f].size();
    for (std::size_t o = 0; o < nout; ++o) {
      const auto truth = test.Y.column(o);
      const auto guess = pred.column(o);
      fr.per_output.push_back(compute_report(truth, guess));
    }
    res.folds.push_back(std::move(fr));
  }
  for (std::size_t o = 0; o < nout; ++o) {
    std::vector<MetricReport> per;
    for (const auto& fr : res.folds) per.push_back(fr.per_output[o]);
    res.aggregate.push_back(fold_aggregate(per));
  }
  return res;
}

std::string protocol_report(const ProtocolResult& r) {
  std::ostringstream os;
  os << "config=" << r.config << '\n'
     << "mode=" << (r.protocol.mode == EvalMode::Intra ? "intra" : "inter") << '\n'
     << "folds=" << r.folds.size() << '\n'
     << "seed=" << r.protocol.seed << '\n';
  for (const auto& f : r.folds) {
    os << f.label << ".train_rows=" << f.train_rows << '\n' << f.label << ".test_rows=" << f.test_rows << '\n';
    for (std::size_t o = 0; o < r.outputs.size(); ++o)
      os << to_key_value(f.per_output[o], f.label + "." + r.outputs[o] + ".");
  }
  for (std::size_t o = 0; o < r.outputs.size(); ++o) os << to_key_value(r.aggregate[o], "aggregate." + r.outputs[o] + ".");
  return os.str();
}

ProtocolConfig read_protocol_config(std::istream& is, const std::string& source) {
  const ConfigMap kv = read_key_values(is, source);
  auto where = [&](const std::string& key) { return source + ":" + std::to_string(kv.at(key).line) + ": "; };
  auto integer = [&](const std::string& key, long long lo) {
    long long v = 0;
    if (!parse_int(kv.at(key).text, v) || v < lo)
      fail(ErrorCode::FormatError, where(key) + key + " must be an integer >= " + std::to_string(lo));
    return v;
  };
  auto real = [&](const std::string& key) {
    double v = 0;
    if (!parse_double(kv.at(key).text, v) || !std::isfinite(v) || v < 0)
      fail(ErrorCode::FormatError, where(key) + key + " must be a non-negative number");
    return v;
  };

  ProtocolConfig pc;
  if (!kv.count("model")) fail(ErrorCode::FormatError, source + ": missing key 'model'");
  pc.model = model_config(kv.at("model").text);
  pc.protocol.k = pc.model.default_k;
  for (const auto& [key, value] : kv) {
    const std::string& v = value.text;
    if (key == "model") continue;
    else if (key == "mode") {
      if (v == "intra") pc.protocol.mode = EvalMode::Intra;
      else if (v == "inter") pc.protocol.mode = EvalMode::Inter;
      else fail(ErrorCode::FormatError, where(key) + "mode must be intra or inter");
    } else if (key == "k") pc.protocol.k = static_cast<std::size_t>(integer(key, 2));
    else if (key == "seed") pc.protocol.seed = static_cast<std::uint64_t>(integer(key, 0));
    else if (key == "dataset") pc.dataset = v;
    else if (key == "trees") pc.spec.forest.n_trees = static_cast<int>(integer(key, 1));
    else if (key == "max_depth") pc.spec.forest.max_depth = static_cast<int>(integer(key, 0));
    else if (key == "min_samples_leaf") pc.spec.forest.min_samples_leaf = static_cast<int>(integer(key, 1));
    else if (key == "epochs") pc.spec.train.max_epochs = static_cast<int>(integer(key, 1));
    else if (key == "patience") pc.spec.train.patience = static_cast<int>(integer(key, 1));
    else if (key == "batch_size") pc.spec.train.batch_size = static_cast<std::size_t>(integer(key, 1));
    else if (key == "resnet_c0") pc.spec.resnet.c0 = static_cast<std::size_t>(integer(key, 1));
    else if (key == "resnet_dense") pc.spec.resnet.dense = static_cast<std::size_t>(integer(key, 1));
    else if (key == "resnet_blocks") {
      pc.spec.resnet.block_channels.clear();
      std::stringstream ss(v);
      for (std::string item; std::getline(ss, item, ',');) {
        long long c = 0;
        if (!parse_int(trim(item), c) || c < 1)
          fail(ErrorCode::FormatError, where(key) + "resnet_blocks must be a comma list of positive integers");
        pc.spec.resnet.block_channels.push_back(static_cast<std::size_t>(c));
      }
    } else if (key == "settle_ms") pc.table.settle_ms = real(key);
    else if (key == "row_stride") pc.table.row_stride = static_cast<std::size_t>(integer(key, 1));
    else fail(ErrorCode::FormatError, where(key) + "unknown key '" + key + "'");
  }
  return pc;
}

// ---------------------------------------------------------------------------
// Chain

void check_chain(const ModelBundle& m) {
  auto bad = [](const std::string& what) { fail(ErrorCode::ModelMismatch, "cannot chain models: " + what); };
  if (m.grf.config.outputs != std::vector<Role>{Role{RoleKind::VgrfWeight, Side::Own, 0}} ||
      m.grf.config.window != 1 || m.grf.config.bilateral)
    bad("the GRF model must map one leg's insole to that leg's vGRF");
  const auto& a = m.angles.config;
  if (a.bilateral || a.window != 1) bad("the angle model must be unilateral with window 1");
  for (const auto& r : a.inputs)
    if (r.kind != RoleKind::Imu && r.kind != RoleKind::GcPercent && r.kind != RoleKind::LeadFlag)
      bad("the angle model may only read IMU channels, GC% and the flag");
  const auto& mm = m.moments.config;
  if (mm.bilateral || !mm.uses_resnet()) bad("the moment model must be a unilateral windowed network");
  for (const auto& r : mm.inputs) {
    if (r.side != Side::Own && r.kind != RoleKind::GcPercent && r.kind != RoleKind::LeadFlag)
      bad("the moment model may only read its own leg");
    if (r.kind == RoleKind::Angle && std::find(a.outputs.begin(), a.outputs.end(), r) == a.outputs.end())
      bad("the angle model does not provide " + r.name());
    if (r.kind != RoleKind::Angle && r.kind != RoleKind::VgrfMass && r.kind != RoleKind::GcPercent &&
        r.kind != RoleKind::LeadFlag)
      bad("unsupported moment input " + r.name());
  }
  if (mm.outputs.size() != kJointCount) bad("the moment model must predict five joint moments");
}

ChainEngine::ChainEngine(const ModelBundle& models, std::size_t window_spacing, ChainInputs inputs)
    : models_(models), spacing_(window_spacing), inputs_(inputs), columns_(frame_columns()) {
  check_chain(models_);
  if (spacing_ < 1) fail(ErrorCode::RangeError, "window spacing must be at least 1");
  for (Foot leg : kFeet) {
    const auto l = static_cast<std::size_t>(leg);
    grf_rows_[l] = RowAssembler(models_.grf.config.inputs, columns_, leg);
    angle_rows_[l] = RowAssembler(models_.angles.config.inputs, columns_, leg);
    moment_rows_[l] = RowAssembler(models_.moments.config.inputs, columns_, leg);
    for (std::size_t j = 0; j < kJointCount; ++j)
      angle_slots_[l].push_back(static_cast<std::size_t>(
          std::find(columns_.begin(), columns_.end(), gt_angle_channel(j, leg)) - columns_.begin()));
    vgrf_slot_[l] = static_cast<std::size_t>(
        std::find(columns_.begin(), columns_.end(), gt_vgrf_channel(leg)) - columns_.begin());
  }
  reset();
}

void ChainEngine::reset() {
  const std::size_t span = (models_.moments.config.window - 1) * spacing_ + 1;
  for (auto& h : history_) h.assign(span, std::vector<double>(models_.moments.config.input_count(), 0.0));
  for (auto& v : history_valid_) v.assign(span, 0);
}

void ChainEngine::step(std::span<const double> frame, const std::array<std::optional<double>, 2>& gc,
                       std::array<LegOutput, 2>& out, const StageHook& hook) {
  if (frame.size() != columns_.size()) fail(ErrorCode::ShapeError, "chain frame has the wrong width");
  frame_.assign(frame.begin(), frame.end());
  for (auto& o : out) o = LegOutput{};

  for (Foot leg : kFeet) {
    const auto l = static_cast<std::size_t>(leg);
    if (!gc[l]) continue;
    row_.resize(grf_rows_[l].size());
    grf_rows_[l].fill(frame_, *gc[l], 1.0, row_);
    models_.grf.forest.input_scaler.transform_inplace(row_);
    double v = 0.0;
    predict_row(models_.grf.forest, row_, std::span<double>(&v, 1), scratch_);
    out[l].vgrf_bw = v;
    out[l].grf_valid = true;
  }
  if (hook) hook(Stage::Grf);

  for (Foot leg : kFeet) {
    const auto l = static_cast<std::size_t>(leg);
    if (!gc[l]) continue;
    row_.resize(angle_rows_[l].size());
    angle_rows_[l].fill(frame_, *gc[l], 1.0, row_);
    models_.angles.forest.input_scaler.transform_inplace(row_);
    std::vector<double> pred(models_.angles.config.output_count());
    predict_row(models_.angles.forest, row_, pred, scratch_);
    for (std::size_t o = 0; o < pred.size(); ++o) {
      const Role& r = models_.angles.config.outputs[o];
      if (r.kind == RoleKind::Angle) out[l].angles[r.index] = pred[o];
    }
    out[l].angles_valid = true;
  }
  if (hook) hook(Stage::Angles);

  const auto& mc = models_.moments.config;
  for (Foot leg : kFeet) {
    const auto l = static_cast<std::size_t>(leg);
    auto& hist = history_[l];
    auto& valid = history_valid_[l];
    std::rotate(hist.begin(), hist.begin() + 1, hist.end());
    std::rotate(valid.begin(), valid.begin() + 1, valid.end());
    valid.back() = 0;
    if (!gc[l]) continue;
    if (inputs_ == ChainInputs::Predicted) {
      frame_[vgrf_slot_[l]] = out[l].vgrf_bw;
      for (std::size_t j = 0; j < kJointCount; ++j) frame_[angle_slots_[l][j]] = out[l].angles[j];
    }
    moment_rows_[l].fill(frame_, *gc[l], 1.0, hist.back());
    valid.back() = 1;
    bool ready = true;
    for (std::size_t q = 0; q < hist.size() && ready; q += spacing_) ready = valid[q] != 0;
    if (!ready) continue;
    Tensor3 x(1, mc.window, mc.input_count());
    for (std::size_t q = 0; q < mc.window; ++q)
      std::copy(hist[q * spacing_].begin(), hist[q * spacing_].end(),
                x.data.begin() + static_cast<std::ptrdiff_t>(q * mc.input_count()));
    const Matrix m = models_.moments.resnet.predict(x, 1);
    for (std::size_t o = 0; o < mc.output_count(); ++o) out[l].moments[mc.outputs[o].index] = m(0, o);
    out[l].moments_valid = true;
  }
  if (hook) hook(Stage::Moments);
}

std::vector<ChainSample> chain_predict(const ModelBundle& models, const ProcessedTrial& trial, Foot leg,
                                       ChainInputs inputs) {
  ChainEngine engine(models, 1, inputs);
  const auto strikes = strike_times(trial.strikes, leg);
  StrideClock clock;
  std::size_t next = 0;
  std::vector<ChainSample> out;
  std::array<LegOutput, 2> res;
  const auto l = static_cast<std::size_t>(leg);
  for (std::size_t r = 0; r < trial.frames.rows(); ++r) {
    const double t = trial.frames.time_ms(r);
    while (next < strikes.size() && strikes[next] <= t) clock.on_strike(leg, strikes[next++]);
    std::array<std::optional<double>, 2> gc{};
    if (clock.ready(leg)) gc[l] = clock.gc_percent(leg, t);
    engine.step(trial.frames.row(r), gc, res);
    if (res[l].moments_valid) out.push_back({t, res[l]});
  }
  if (out.empty()) fail(ErrorCode::WarmupIncomplete, "trial ends before the chain warms up");
  return out;
}

}  // namespace gaitrt
