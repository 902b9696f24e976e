#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gaitrt/common.hpp"

namespace gaitrt {

// Joint order is canonical everywhere: hip flexion, hip adduction, hip
// rotation, knee flexion, ankle flexion.
inline constexpr std::size_t kJointCount = 5;
inline constexpr std::array<std::string_view, kJointCount> kJointNames = {"hipflex", "hipadd", "hiprot",
                                                                          "kneeflex", "ankleflex"};
inline constexpr std::size_t kAnkle = 4;

inline constexpr std::size_t kFsrPerFoot = 8;
inline constexpr std::size_t kImuAxes = 9;
inline constexpr std::array<std::string_view, kImuAxes> kImuAxisNames = {"ax", "ay", "az", "gx", "gy",
                                                                        "gz", "mx", "my", "mz"};

// Sensor sites, numbered as the wire-format sensor ids.
enum class ImuSite : std::uint8_t { RightShank = 0, RightFoot = 1, LeftShank = 2, LeftFoot = 3 };
inline constexpr std::array<ImuSite, 4> kImuSites = {ImuSite::RightShank, ImuSite::RightFoot, ImuSite::LeftShank,
                                                     ImuSite::LeftFoot};
inline constexpr std::array<std::string_view, 4> kImuSiteCodes = {"rs", "rf", "ls", "lf"};

inline ImuSite shank_of(Foot f) { return f == Foot::Right ? ImuSite::RightShank : ImuSite::LeftShank; }
inline ImuSite foot_of(Foot f) { return f == Foot::Right ? ImuSite::RightFoot : ImuSite::LeftFoot; }
inline Foot leg_of(ImuSite s) { return (s == ImuSite::RightShank || s == ImuSite::RightFoot) ? Foot::Right : Foot::Left; }
inline bool is_foot_site(ImuSite s) { return s == ImuSite::RightFoot || s == ImuSite::LeftFoot; }

std::string fsr_channel(Foot foot, std::size_t index);  // index 0..7 -> fsr_r1..fsr_r8
std::string imu_channel(ImuSite site, std::size_t axis);
std::string gt_vgrf_channel(Foot foot);
std::string gt_angle_channel(std::size_t joint, Foot foot);
std::string gt_moment_channel(std::size_t joint, Foot foot);
std::string gt_gc_channel(Foot foot);

std::vector<std::string> fsr_channels(Foot foot);
std::vector<std::string> imu_channels(ImuSite site);

// 16 insole then 36 IMU columns.
std::vector<std::string> sensor_columns();
// vGRF (2), angles joint-major (10), moments joint-major (10), GC% (2).
std::vector<std::string> ground_truth_columns();
// time_ms, sensor columns, ground-truth columns.
std::vector<std::string> trial_columns();

}  // namespace gaitrt
