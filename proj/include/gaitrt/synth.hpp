#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "gaitrt/common.hpp"
#include "gaitrt/gait.hpp"
#include "gaitrt/schema.hpp"
#include "gaitrt/signal.hpp"

namespace gaitrt {

inline constexpr std::size_t kMaxHarmonics = 6;
inline constexpr double kSensorRateHz = 25.0;
inline constexpr double kGroundTruthRateHz = 100.0;

/// a0 + sum_k a_k cos(2 pi k u) + b_k sin(2 pi k u) over the stride phase
/// u = GC% / 100 in [0, 1).
struct FourierSeries {
  double a0 = 0.0;
  std::vector<double> a, b;  // harmonics 1..n, n <= kMaxHarmonics

  double value(double u) const;
  double d1(double u) const;  // d/du
  double d2(double u) const;  // d2/du2
  bool operator==(const FourierSeries&) const = default;
};

/// Two Gaussian bumps over the stance phase s in [0, 1], tapered to zero at
/// both ends and scaled so the curve's maximum equals max(amp1, amp2).
struct GrfShape {
  double amp1 = 1.1, amp2 = 1.05;  // body weights
  double center1 = 0.22, center2 = 0.78;
  double width1 = 0.12, width2 = 0.12;
  double valley = 0.75;
  bool operator==(const GrfShape&) const = default;
};

struct NoiseLevels {
  double accel = 0.05;  // m/s^2
  double gyro = 1.0;    // deg/s
  double mag = 0.5;     // uT
  double fsr = 0.01;    // dimensionless
  NoiseLevels scaled(double k) const { return {accel * k, gyro * k, mag * k, fsr * k}; }
  bool operator==(const NoiseLevels&) const = default;
};

/// Roll, pitch and yaw of one body segment, in degrees, with their first and
/// second time derivatives.
struct SegmentKinematics {
  std::array<double, 3> angle{}, rate{}, accel{};  // deg, deg/s, deg/s^2
};

struct SubjectProfile {
  int subject_id = 1;
  double mass_kg = 70.0;
  double height_cm = 175.0;
  // Whole milliseconds, a multiple of 40, so strikes land on both sample grids.
  double stride_period_ms = 1040.0;
  double stance_fraction = 0.6;
  std::array<FourierSeries, kJointCount> angles;   // deg
  std::array<FourierSeries, kJointCount> moments;  // N m / kg
  std::array<double, kJointCount> moment_grf_gain{};  // N m / kg per body weight
  GrfShape grf;
  std::array<double, 2> grf_band{1.0, 1.2};  // bounds on the vGRF peak, body weights
  std::array<std::array<double, 3>, kFsrPerFoot> fsr_weights{};  // heel, midfoot, forefoot
  double fsr_gain = 1.5;
  std::array<std::array<double, 3>, 4> mount_offset_deg{};  // per IMU site: roll, pitch, yaw
  NoiseLevels noise;
  // Normalizes the vGRF curve; set by finalize() after any edit of `grf`.
  double grf_scale = 0.0;

  void finalize();
  double weight_n() const { return mass_kg * kGravity; }
  double stride_period_s() const { return stride_period_ms / 1000.0; }
  // u is the phase of the leg's own stride.
  double vgrf_bw(double u) const;
  double angle_deg(std::size_t joint, double u) const { return angles[joint].value(u); }
  double moment_nm(std::size_t joint, double u) const;
  SegmentKinematics segment(ImuSite site, double u) const;
  // Stance-phase basis (heel, midfoot, forefoot) at phase u; zero in swing.
  std::array<double, 3> fsr_basis(double u) const;
  // Noise-free sensor readings; fsr before saturation noise is applied.
  std::array<double, kImuAxes> imu_clean(ImuSite site, double u) const;
  std::array<double, kFsrPerFoot> fsr_clean(double u) const;

  void validate() const;  // throws RangeError
  bool operator==(const SubjectProfile&) const = default;
};

/// Canonical gait shapes: hip flexion swinging about +-30 deg, knee flexion
/// 0..60 deg with two bumps, ankle within +-15 deg.
SubjectProfile base_profile(int subject_id = 1);
/// base_profile with seeded inter-subject variation of every parameter.
SubjectProfile random_profile(int subject_id, Rng& rng);

struct Subject {
  int id = 0;
  double mass_kg = 0.0;
  double height_cm = 0.0;
  double weight_n() const { return mass_kg * kGravity; }
  bool operator==(const Subject&) const = default;
};

/// One walking trial: 25 Hz sensors (sensor_columns), 100 Hz ground truth
/// (ground_truth_columns, noise-free) and heel-strike times of both feet.
struct Trial {
  int subject_id = 0;
  int trial_id = 0;
  SampleSeries sensors;
  SampleSeries ground_truth;
  std::vector<HeelStrikeEvent> strikes;  // sorted by time, then foot

  SampleSeries insole(Foot foot) const;
  SampleSeries imu(ImuSite site) const;
  bool operator==(const Trial&) const = default;
};

struct Dataset {
  std::vector<Subject> subjects;
  std::vector<Trial> trials;

  // Throws DataError for an unknown id.
  const Subject& subject(int id) const;
  std::vector<int> subject_ids() const;
  bool operator==(const Dataset&) const = default;
};

struct TrialOptions {
  double duration_s = 20.0;
  double noise_scale = 1.0;
  // Relative std of the per-trial scaling of angle harmonics.
  double trial_variation = 0.03;
};

/// Right heel strikes at k * T, left at (k + 1/2) * T, starting at t = 0.
/// Throws InsufficientDuration when shorter than two strides.
Trial generate_trial(const SubjectProfile& profile, int trial_id, const TrialOptions& opt, std::uint64_t seed);

struct CohortOptions {
  int trials_per_subject = 10;
  TrialOptions trial;
};

struct Cohort {
  std::vector<SubjectProfile> profiles;
  Dataset dataset;
};

/// Deterministic under `seed`; trials run in parallel on independent seed
/// substreams. Throws RangeError when n_subjects < 1.
Cohort generate_cohort(int n_subjects, std::uint64_t seed, const CohortOptions& opt = {});

/// Heel strikes recovered from the ground-truth GC% columns: a strike lies
/// where the phase wraps, or at a row whose phase is exactly 0.
std::vector<HeelStrikeEvent> strikes_from_gc(const SampleSeries& ground_truth,
                                             StrikeSource source = StrikeSource::Generator);

// Dataset directory: subjects.csv plus one sNN_tNN.csv per trial.
void write_trial_csv(std::ostream& os, const Trial& trial);
Trial read_trial_csv(std::istream& is, int subject_id, int trial_id, const std::string& source = "<stream>");
void write_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir);
std::string trial_file_name(int subject_id, int trial_id);

}  // namespace gaitrt
