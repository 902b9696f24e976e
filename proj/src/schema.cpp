#include "gaitrt/schema.hpp"

namespace gaitrt {

namespace {
std::string side(Foot f) { return std::string(1, foot_letter(f)); }
}  // namespace

std::string fsr_channel(Foot foot, std::size_t index) {
  return "fsr_" + side(foot) + std::to_string(index + 1);
}

std::string imu_channel(ImuSite site, std::size_t axis) {
  return "imu_" + std::string(kImuSiteCodes[static_cast<std::size_t>(site)]) + "_" +
         std::string(kImuAxisNames[axis]);
}

std::string gt_vgrf_channel(Foot foot) { return "gt_vgrf_bw_" + side(foot); }

std::string gt_angle_channel(std::size_t joint, Foot foot) {
  return "gt_angle_" + std::string(kJointNames[joint]) + "_" + side(foot) + "_deg";
}

std::string gt_moment_channel(std::size_t joint, Foot foot) {
  return "gt_moment_" + std::string(kJointNames[joint]) + "_" + side(foot) + "_nm";
}

std::string gt_gc_channel(Foot foot) { return "gt_gc_percent_" + side(foot); }

std::vector<std::string> fsr_channels(Foot foot) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kFsrPerFoot; ++i) out.push_back(fsr_channel(foot, i));
  return out;
}

std::vector<std::string> imu_channels(ImuSite site) {
  std::vector<std::string> out;
  for (std::size_t a = 0; a < kImuAxes; ++a) out.push_back(imu_channel(site, a));
  return out;
}

std::vector<std::string> sensor_columns() {
  std::vector<std::string> out;
  for (Foot f : kFeet)
    for (auto& c : fsr_channels(f)) out.push_back(c);
  for (ImuSite s : kImuSites)
    for (auto& c : imu_channels(s)) out.push_back(c);
  return out;
}

std::vector<std::string> ground_truth_columns() {
  std::vector<std::string> out;
  for (Foot f : kFeet) out.push_back(gt_vgrf_channel(f));
  for (std::size_t j = 0; j < kJointCount; ++j)
    for (Foot f : kFeet) out.push_back(gt_angle_channel(j, f));
  for (std::size_t j = 0; j < kJointCount; ++j)
    for (Foot f : kFeet) out.push_back(gt_moment_channel(j, f));
  for (Foot f : kFeet) out.push_back(gt_gc_channel(f));
  return out;
}

std::vector<std::string> trial_columns() {
  std::vector<std::string> out{"time_ms"};
  for (auto& c : sensor_columns()) out.push_back(c);
  for (auto& c : ground_truth_columns()) out.push_back(c);
  return out;
}

}  // namespace gaitrt
