#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "gaitrt/forest.hpp"
#include "gaitrt/synth.hpp"
#include "test_util.hpp"

using namespace gaitrt;
using testutil::code_of;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// d/dt of a Fourier series in GC phase, written out from the definition.
double series_rate(const FourierSeries& f, double u, double period_s) {
  double v = 0.0;
  for (std::size_t k = 1; k <= f.a.size(); ++k) {
    const double w = kTwoPi * static_cast<double>(k);
    v += w * (-f.a[k - 1] * std::sin(w * u) + f.b[k - 1] * std::cos(w * u));
  }
  return v / period_s;
}

TrialOptions quiet(double seconds) {
  TrialOptions o;
  o.duration_s = seconds;
  o.noise_scale = 0.0;
  o.trial_variation = 0.0;
  return o;
}

double column_max(const SampleSeries& s, const std::string& name) {
  const auto c = s.column(s.channel_index(name));
  return *std::max_element(c.begin(), c.end());
}

}  // namespace

TEST_CASE("noise-free gyro channels equal the analytic segment-angle derivatives") {
  Rng rng(5);
  const SubjectProfile p = random_profile(3, rng);
  const Trial t = generate_trial(p, 1, quiet(4.0), 11);
  const double T = p.stride_period_s();
  double worst = 0.0;
  for (std::size_t i = 0; i < t.sensors.rows(); ++i) {
    const double time = t.sensors.time_ms(i);
    for (ImuSite site : kImuSites) {
      const Foot leg = leg_of(site);
      const double u = std::fmod(time + (leg == Foot::Left ? p.stride_period_ms / 2 : 0.0), p.stride_period_ms) /
                       p.stride_period_ms;
      const double knee = series_rate(p.angles[3], u, T);
      const double hip = series_rate(p.angles[0], u, T);
      const double roll = 0.5 * series_rate(p.angles[1], u, T);
      double pitch = hip - knee;
      double yaw = series_rate(p.angles[2], u, T);
      if (is_foot_site(site)) {
        pitch += series_rate(p.angles[4], u, T);
        yaw *= 1.2;
      }
      const double expect[3] = {roll, pitch, yaw};
      for (std::size_t a = 0; a < 3; ++a) {
        const double got = t.sensors.at(i, t.sensors.channel_index(imu_channel(site, 3 + a)));
        worst = std::max(worst, std::abs(got - expect[a]) / std::max(1.0, std::abs(expect[a])));
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("segment rates agree with a central difference of the segment angle") {
  const SubjectProfile p = base_profile();
  const double h = 1e-6;
  for (ImuSite site : kImuSites) {
    for (double u : {0.05, 0.31, 0.62, 0.9}) {
      const auto k = p.segment(site, u);
      for (std::size_t a = 0; a < 3; ++a) {
        const double fd = (p.segment(site, u + h).angle[a] - p.segment(site, u - h).angle[a]) / (2 * h) /
                          p.stride_period_s();
        CHECK(k.rate[a] == doctest::Approx(fd).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("heel strikes fall at whole multiples of the stride period") {
  Rng rng(8);
  const SubjectProfile p = random_profile(2, rng);
  const Trial t = generate_trial(p, 1, quiet(10.0), 3);
  const double T = p.stride_period_ms;
  int right = 0, left = 0;
  for (const auto& e : t.strikes) {
    const double k = e.foot == Foot::Right ? e.time_ms / T : e.time_ms / T - 0.5;
    CHECK(k == std::round(k));
    (e.foot == Foot::Right ? right : left)++;
  }
  CHECK(right == static_cast<int>(std::floor(t.ground_truth.end_ms() / T)) + 1);
  CHECK(left >= right - 1);
  CHECK(strikes_from_gc(t.ground_truth) == t.strikes);
}

TEST_CASE("stored GC% matches GC% recomputed from the heel strikes") {
  Rng rng(21);
  const SubjectProfile p = random_profile(4, rng);
  const Trial t = generate_trial(p, 1, quiet(6.0), 9);
  const double tol = 100.0 * (1000.0 / kGroundTruthRateHz) / p.stride_period_ms;
  for (Foot f : kFeet) {
    const auto times = strike_times(t.strikes, f);
    const std::size_t c = t.ground_truth.channel_index(gt_gc_channel(f));
    for (std::size_t i = 0; i < t.ground_truth.rows(); ++i) {
      const double time = t.ground_truth.time_ms(i);
      if (time < times.front() || time >= times.back()) continue;
      CHECK(std::abs(gc_percent_offline(times, time) - t.ground_truth.at(i, c)) <= tol);
    }
  }
}

TEST_CASE("vGRF peak lies in the configured band and vanishes in swing") {
  Rng rng(33);
  for (int s = 0; s < 6; ++s) {
    const SubjectProfile p = random_profile(s + 1, rng);
    const Trial t = generate_trial(p, 1, quiet(5.0), 1);
    for (Foot f : kFeet) {
      const double peak = column_max(t.ground_truth, gt_vgrf_channel(f));
      CHECK(peak >= p.grf_band[0]);
      CHECK(peak <= p.grf_band[1]);
    }
    const std::size_t v = t.ground_truth.channel_index(gt_vgrf_channel(Foot::Right));
    const std::size_t g = t.ground_truth.channel_index(gt_gc_channel(Foot::Right));
    for (std::size_t i = 0; i < t.ground_truth.rows(); ++i) {
      if (t.ground_truth.at(i, g) >= 100.0 * p.stance_fraction) CHECK(t.ground_truth.at(i, v) == 0.0);
      else CHECK(t.ground_truth.at(i, v) >= 0.0);
    }
  }
}

TEST_CASE("left leg ground truth is the right leg shifted by half a stride") {
  const SubjectProfile p = base_profile();
  const Trial t = generate_trial(p, 1, quiet(4.0), 2);
  const auto shift = static_cast<std::size_t>(p.stride_period_ms / 2 / 10.0);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const std::size_t r = t.ground_truth.channel_index(gt_moment_channel(j, Foot::Right));
    const std::size_t l = t.ground_truth.channel_index(gt_moment_channel(j, Foot::Left));
    const std::size_t ar = t.ground_truth.channel_index(gt_angle_channel(j, Foot::Right));
    const std::size_t al = t.ground_truth.channel_index(gt_angle_channel(j, Foot::Left));
    for (std::size_t i = shift; i < t.ground_truth.rows(); ++i) {
      CHECK(t.ground_truth.at(i, l) == t.ground_truth.at(i - shift, r));
      CHECK(t.ground_truth.at(i, al) == t.ground_truth.at(i - shift, ar));
    }
  }
}

TEST_CASE("generation is deterministic under the seed") {
  Rng a(77), b(77);
  const SubjectProfile pa = random_profile(1, a), pb = random_profile(1, b);
  CHECK(pa == pb);
  TrialOptions opt;
  opt.duration_s = 3.0;
  const Trial t1 = generate_trial(pa, 1, opt, 123);
  const Trial t2 = generate_trial(pb, 1, opt, 123);
  const Trial t3 = generate_trial(pa, 1, opt, 124);
  CHECK(t1 == t2);
  CHECK(t1.sensors.data != t3.sensors.data);
}

TEST_CASE("noisy insoles stay inside the unit interval") {
  TrialOptions opt;
  opt.duration_s = 3.0;
  opt.noise_scale = 5.0;
  const Trial t = generate_trial(base_profile(), 1, opt, 4);
  for (Foot f : kFeet) {
    const auto s = t.insole(f);
    for (double v : s.data) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("a trial shorter than two strides is rejected") {
  const SubjectProfile p = base_profile();
  TrialOptions opt;
  opt.duration_s = 2.0 * p.stride_period_s() - 0.01;
  CHECK(code_of([&] { generate_trial(p, 1, opt, 1); }) == ErrorCode::InsufficientDuration);
  opt.duration_s = 2.0 * p.stride_period_s();
  CHECK(code_of([&] { generate_trial(p, 1, opt, 1); }) == ErrorCode::Ok);
}

TEST_CASE("cohort: determinism, inter-subject variation, cycle counts") {
  const Cohort a = generate_cohort(8, 2024);
  const Cohort b = generate_cohort(8, 2024);
  CHECK(a.dataset == b.dataset);
  CHECK(a.profiles == b.profiles);
  REQUIRE(a.dataset.trials.size() == 80);
  for (std::size_t i = 0; i < a.profiles.size(); ++i)
    for (std::size_t j = i + 1; j < a.profiles.size(); ++j) {
      CHECK(a.profiles[i].stride_period_ms != a.profiles[j].stride_period_ms);
      CHECK(a.profiles[i].angles[0].a != a.profiles[j].angles[0].a);
    }
  for (int id : a.dataset.subject_ids()) {
    int cycles = 0;
    for (const auto& t : a.dataset.trials) {
      if (t.subject_id != id) continue;
      cycles += static_cast<int>(strike_times(t.strikes, Foot::Right).size()) - 1;
    }
    CHECK(cycles >= 150);
  }
  CHECK(code_of([] { generate_cohort(0, 1); }) == ErrorCode::RangeError);
}

TEST_CASE("dataset directory round trip is lossless") {
  CohortOptions opt;
  opt.trials_per_subject = 2;
  opt.trial.duration_s = 3.0;
  const Cohort c = generate_cohort(2, 99, opt);
  testutil::TempDir dir("synth_rt");
  write_dataset(dir.path(), c.dataset);
  const Dataset back = read_dataset(dir.path());
  CHECK(back == c.dataset);
}

TEST_CASE("trial CSV errors carry the right code and line") {
  TrialOptions opt;
  opt.duration_s = 2.5;
  const Trial t = generate_trial(base_profile(), 1, opt, 1);
  std::ostringstream os;
  write_trial_csv(os, t);
  const std::string text = os.str();

  SUBCASE("missing channel column") {
    std::string bad = text;
    const auto pos = bad.find(",imu_rf_gy");
    bad.erase(pos, std::string(",imu_rf_gy").size());
    std::istringstream is(bad);
    const auto msg = testutil::message_of([&] { read_trial_csv(is, 1, 1, "x.csv"); });
    CHECK(msg.find("x.csv:1:") != std::string::npos);
    std::istringstream is2(bad);
    CHECK(code_of([&] { read_trial_csv(is2, 1, 1); }) == ErrorCode::FormatError);
  }
  SUBCASE("truncated final row") {
    std::string bad = text.substr(0, text.size() - 1);
    bad = bad.substr(0, bad.rfind(',') - 5) + "\n";
    const auto lines = std::count(bad.begin(), bad.end(), '\n');
    std::istringstream is(bad);
    CHECK(code_of([&] { read_trial_csv(is, 1, 1); }) == ErrorCode::DataError);
    std::istringstream is2(bad);
    const auto msg = testutil::message_of([&] { read_trial_csv(is2, 1, 1, "x.csv"); });
    CHECK(msg.find("x.csv:" + std::to_string(lines) + ":") != std::string::npos);
  }
  SUBCASE("NaN in a sensor cell") {
    std::string bad = text;
    const auto line2 = bad.find('\n') + 1;
    const auto cell = bad.find(',', line2) + 1;
    bad.replace(cell, bad.find(',', cell) - cell, "nan");
    std::istringstream is(bad);
    CHECK(code_of([&] { read_trial_csv(is, 1, 1); }) == ErrorCode::DataError);
  }
}

TEST_CASE("a forest learns one subject's angles from its own sensors") {
  Rng rng(12);
  const SubjectProfile p = random_profile(1, rng);
  std::vector<Trial> trials;
  for (int k = 0; k < 5; ++k) {
    TrialOptions opt;
    opt.duration_s = 20.0;
    trials.push_back(generate_trial(p, k + 1, opt, 500 + static_cast<std::uint64_t>(k)));
  }
  // Right leg: shank and foot IMU samples plus GC% predict the five angles.
  auto rows = [&](const Trial& t, Matrix& X, Matrix& Y) {
    const std::size_t step = static_cast<std::size_t>(kGroundTruthRateHz / kSensorRateHz);
    const std::size_t gc = t.ground_truth.channel_index(gt_gc_channel(Foot::Right));
    for (std::size_t i = 0; i < t.sensors.rows() && i * step < t.ground_truth.rows(); ++i) {
      std::vector<double> x;
      for (ImuSite s : {ImuSite::RightShank, ImuSite::RightFoot})
        for (std::size_t a = 0; a < kImuAxes; ++a) x.push_back(t.sensors.at(i, t.sensors.channel_index(imu_channel(s, a))));
      x.push_back(t.ground_truth.at(i * step, gc));
      std::vector<double> y;
      for (std::size_t j = 0; j < kJointCount; ++j)
        y.push_back(t.ground_truth.at(i * step, t.ground_truth.channel_index(gt_angle_channel(j, Foot::Right))));
      X.append_row(x);
      Y.append_row(y);
    }
  };
  Matrix Xtr(0, 19), Ytr(0, 5), Xte(0, 19), Yte(0, 5);
  for (std::size_t k = 0; k < 4; ++k) rows(trials[k], Xtr, Ytr);
  rows(trials[4], Xte, Yte);
  ForestParams fp;
  fp.n_trees = 30;
  const ForestModel m = fit_forest(Xtr, Ytr, fp, 7);
  const Matrix pred = predict_forest(m, Xte);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    double se = 0.0;
    for (std::size_t r = 0; r < pred.rows; ++r) se += std::pow(pred(r, j) - Yte(r, j), 2);
    const double rmse = std::sqrt(se / static_cast<double>(pred.rows));
    INFO("joint ", j, " rmse ", rmse);
    CHECK(rmse < 3.0);
  }
}
