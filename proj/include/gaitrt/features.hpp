#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <istream>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gaitrt/common.hpp"
#include "gaitrt/forest.hpp"
#include "gaitrt/metrics.hpp"
#include "gaitrt/resnet.hpp"
#include "gaitrt/schema.hpp"
#include "gaitrt/signal.hpp"
#include "gaitrt/synth.hpp"

namespace gaitrt {

// ---------------------------------------------------------------------------
// Streaming front end

struct FrontEndConfig {
  double rate_hz = 1000.0;
  int order = 5;
  double fsr_cutoff_hz = 3.0;
  std::array<double, 2> imu_band_hz{0.2, 10.0};
  bool operator==(const FrontEndConfig&) const = default;
};

/// Causal filters for one frame of the 52 sensor channels (sensor_columns
/// order): insole lowpass, IMU bandpass, zero initial state.
class FrontEnd {
 public:
  explicit FrontEnd(const FrontEndConfig& cfg = {});
  void step(std::span<double> sensors);
  const FrontEndConfig& config() const { return cfg_; }

 private:
  FrontEndConfig cfg_;
  IirFilter fsr_, imu_;
};

inline constexpr std::size_t kSensorChannels = 2 * kFsrPerFoot + 4 * kImuAxes;  // 52
inline constexpr std::size_t kTruthChannels = 2 + 4 * kJointCount + 2;          // 24

/// Sensor columns then ground-truth columns; a frame is one row of these.
std::vector<std::string> frame_columns();

/// A trial after the offline replica of the real-time front end: sensors
/// upsampled to 1 kHz, filtered from zero state, then kept every
/// `rate / keep_rate` ticks alongside the ground truth at the same instants.
struct ProcessedTrial {
  int subject_id = 0;
  int trial_id = 0;
  SampleSeries frames;  // frame_columns()
  std::vector<HeelStrikeEvent> strikes;
};

ProcessedTrial preprocess_trial(const Trial& trial, const FrontEndConfig& cfg = {}, double keep_rate_hz = 100.0);
std::vector<ProcessedTrial> preprocess_dataset(const Dataset& ds, const FrontEndConfig& cfg = {},
                                               double keep_rate_hz = 100.0);

// ---------------------------------------------------------------------------
// Model configurations

enum class RoleKind : std::uint8_t { Imu, Fsr, VgrfMass, VgrfWeight, Angle, Moment, GcPercent, LeadFlag };
// Own: the leg the row describes (unilateral models).
enum class Side : std::uint8_t { Own, Right, Left };

/// One feature or target slot. `index` is the FSR number, the joint, or for
/// IMUs segment * 9 + axis with segment 0 = shank, 1 = foot.
struct Role {
  RoleKind kind = RoleKind::GcPercent;
  Side side = Side::Own;
  std::uint8_t index = 0;

  std::string name() const;
  Foot foot(Foot leg) const { return side == Side::Own ? leg : (side == Side::Right ? Foot::Right : Foot::Left); }
  bool operator==(const Role&) const = default;
};

struct ModelConfig {
  std::string name;
  bool bilateral = false;
  // Rows only for the leg whose strikes define GC%; such models take no flag.
  bool own_clock_only = false;
  std::vector<Role> inputs;
  std::vector<Role> outputs;
  std::size_t window = 1;
  std::size_t default_k = 5;

  std::size_t input_count() const { return inputs.size(); }
  std::size_t output_count() const { return outputs.size(); }
  std::vector<std::string> input_names() const;
  std::vector<std::string> output_names() const;
  bool uses_resnet() const { return window > 1; }
  bool operator==(const ModelConfig&) const = default;
};

/// GRF, W1..W6, M_ankle, M_5joint. Throws RangeError for other names,
/// including the undefined S1 and S2.
ModelConfig model_config(std::string_view name);
std::vector<std::string> model_names();

/// Resolves roles against named frame channels for one leg; the vGRF of
/// angle and moment inputs is converted from body weights to N/kg.
class RowAssembler {
 public:
  RowAssembler() = default;
  // Throws MissingChannel.
  RowAssembler(std::span<const Role> roles, std::span<const std::string> channels, Foot leg);

  std::size_t size() const { return slots_.size(); }
  void fill(std::span<const double> frame, double gc, double flag, std::span<double> out) const;

 private:
  struct Slot {
    int column = -1;  // -1: GC%, -2: lead flag
    double scale = 1.0;
  };
  std::vector<Slot> slots_;
};

/// Rows of `config` inputs for every sample of `streams`. Several streams
/// must share start, rate and length (AlignmentError); gc and flag give one
/// value per sample.
Matrix assemble_features(const ModelConfig& config, const SampleSeries& streams, std::span<const double> gc,
                         std::span<const double> flag, Foot leg = Foot::Right);
Matrix assemble_features(const ModelConfig& config, std::span<const SampleSeries> streams,
                         std::span<const double> gc, std::span<const double> flag, Foot leg = Foot::Right);

// ---------------------------------------------------------------------------
// Feature tables

struct TableOptions {
  double settle_ms = 8000.0;  // filter transient excluded from every row
  std::size_t row_stride = 1;  // keep every n-th target row
};

/// Training/evaluation rows of one configuration. Every row belongs to
/// exactly one gait cycle: the stride of the clock foot containing the row
/// (the window's last sample for windowed models).
struct FeatureTable {
  ModelConfig config;
  Tensor3 X;  // (rows, window, inputs)
  Matrix Y;   // (rows, outputs)
  std::vector<std::int64_t> cycle;
  std::vector<int> subject;
  std::vector<int> trial;
  std::vector<double> time_ms;
  std::vector<std::uint8_t> leg;  // Foot of the row

  std::size_t rows() const { return Y.rows; }
  Matrix X_matrix() const;  // window == 1
  FeatureTable select(std::span<const std::size_t> rows) const;
};

FeatureTable build_table(const ModelConfig& config, std::span<const ProcessedTrial> trials,
                         const TableOptions& opt = {});

// ---------------------------------------------------------------------------
// Models

struct ModelSpec {
  ForestParams forest{200, 0, 2, 1, 0, true};
  ResNetConfig resnet{};
  TrainConfig train{};
};

struct TrainedModel {
  ModelConfig config;
  ForestModel forest;
  ResNetModel resnet;
  std::uint64_t seed = 0;

  // Windows in raw units: (rows, window, inputs).
  Matrix predict(const Tensor3& X);
  Matrix predict(const Matrix& X) { return predict(as_windows(X)); }
  static Tensor3 as_windows(const Matrix& X);
};

/// Forest: input scaler fit on the training rows, then a forest on the
/// scaled rows. ResNet: train_moments with validation cycles drawn from the
/// training rows only.
TrainedModel train_model(const FeatureTable& table, std::span<const std::size_t> train_rows, const ModelSpec& spec,
                         std::uint64_t seed);

void write_model(std::ostream& os, TrainedModel& model);
TrainedModel read_model(std::istream& is);

// ---------------------------------------------------------------------------
// Evaluation protocols

enum class EvalMode : std::uint8_t { Intra, Inter };

struct EvalProtocol {
  EvalMode mode = EvalMode::Intra;
  std::size_t k = 5;  // intra only; inter uses one fold per subject
  std::uint64_t seed = 0;
};

struct FoldPlan {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> test_rows;
  std::vector<std::vector<std::size_t>> train_rows;
};

/// Intra: cycles shuffled with the seed and dealt into k contiguous groups.
/// Inter: one fold per subject. Throws InsufficientData.
FoldPlan plan_folds(const FeatureTable& table, const EvalProtocol& protocol);

struct FoldAudit {
  std::size_t fold = 0;
  const FeatureTable* table = nullptr;
  std::span<const std::size_t> train_rows;
  std::span<const std::size_t> test_rows;
  const TrainedModel* model = nullptr;
};
using AuditHook = std::function<void(const FoldAudit&)>;

struct FoldResult {
  std::string label;
  std::size_t train_rows = 0, test_rows = 0;
  std::vector<MetricReport> per_output;
};

struct ProtocolResult {
  std::string config;
  EvalProtocol protocol;
  std::vector<std::string> outputs;
  std::vector<FoldResult> folds;
  std::vector<AggregateReport> aggregate;  // per output
};

ProtocolResult run_protocol(const EvalProtocol& protocol, const FeatureTable& table, const ModelSpec& spec,
                            const AuditHook& audit = {});

/// key=value lines: one per fold and output, then the aggregate.
std::string protocol_report(const ProtocolResult& r);

/// Evaluation run read from a key=value file ('#' starts a comment).
/// Keys: model, mode (intra|inter), k, seed, dataset, trees, max_depth,
/// min_samples_leaf, epochs, patience, batch_size, resnet_c0,
/// resnet_blocks (comma list), resnet_dense, settle_ms, row_stride.
/// k defaults to the model's own fold count.
struct ProtocolConfig {
  ModelConfig model;
  EvalProtocol protocol;
  std::string dataset;
  ModelSpec spec;
  TableOptions table;
};

// Throws FormatError with "source:line:" on unknown keys or bad values,
// RangeError for unknown models.
ProtocolConfig read_protocol_config(std::istream& is, const std::string& source = "<stream>");

// ---------------------------------------------------------------------------
// Chained inference

struct ModelBundle {
  TrainedModel grf;      // GRF
  TrainedModel angles;   // unilateral 5-angle model without vGRF input (W4)
  TrainedModel moments;  // M_5joint
};

/// Throws ModelMismatch when the three layouts cannot be chained.
void check_chain(const ModelBundle& models);

enum class ChainInputs : std::uint8_t { Predicted, GroundTruth };

struct LegOutput {
  bool grf_valid = false, angles_valid = false, moments_valid = false;
  double vgrf_bw = 0.0;
  std::array<double, kJointCount> angles{}, moments{};
};

/// Per-frame chain shared by offline evaluation and the real-time engine.
/// Moment windows sample the frame history every `window_spacing` frames.
class ChainEngine {
 public:
  ChainEngine(const ModelBundle& models, std::size_t window_spacing, ChainInputs inputs = ChainInputs::Predicted);

  enum class Stage : std::uint8_t { Grf, Angles, Moments };
  using StageHook = std::function<void(Stage)>;

  // frame: frame_columns() values; ground-truth slots are read only in
  // GroundTruth mode. gc[leg] is empty until that leg's clock is ready.
  void step(std::span<const double> frame, const std::array<std::optional<double>, 2>& gc,
            std::array<LegOutput, 2>& out, const StageHook& hook = {});
  void reset();

 private:
  ModelBundle models_;
  std::size_t spacing_;
  ChainInputs inputs_;
  std::array<RowAssembler, 2> grf_rows_, angle_rows_, moment_rows_;
  std::vector<std::vector<double>> history_[2];  // moment input rows, newest last
  std::vector<std::uint8_t> history_valid_[2];
  std::vector<double> scratch_, row_, frame_;
  std::vector<std::string> columns_;
  std::array<std::vector<std::size_t>, 2> angle_slots_;
  std::array<std::size_t, 2> vgrf_slot_{};
};

struct ChainSample {
  double time_ms = 0.0;
  LegOutput out;
};

/// Offline chain for one leg, GC% from a stride clock fed with the trial's
/// strikes. Rows before the clock and the moment window are ready are
/// dropped; WarmupIncomplete when none remain.
std::vector<ChainSample> chain_predict(const ModelBundle& models, const ProcessedTrial& trial, Foot leg,
                                       ChainInputs inputs = ChainInputs::Predicted);

}  // namespace gaitrt
