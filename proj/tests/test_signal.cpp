#include <cmath>
#include <vector>

#include "doctest.h"
#include "gaitrt/signal.hpp"
#include "oracles/filter_oracle.hpp"

using namespace gaitrt;

namespace {

SampleSeries single(double rate, std::vector<double> values, double start = 0.0) {
  SampleSeries s(start, rate, {"x"});
  s.data = std::move(values);
  return s;
}

}  // namespace

TEST_CASE("resample_linear reproduces affine signals exactly") {
  std::vector<double> v;
  for (int i = 0; i < 51; ++i) v.push_back(2.0 * (i / 25.0));
  auto out = resample_linear(single(25.0, v), 1000.0);
  CHECK(out.rate_hz == 1000.0);
  REQUIRE(out.rows() == 2001);
  for (std::size_t k = 0; k < out.rows(); ++k)
    CHECK(out.at(k, 0) == doctest::Approx(2.0 * (k / 1000.0)).epsilon(1e-15));
  // Input instants coinciding with output instants reproduce inputs bit-exactly.
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(out.at(i * 40, 0) == v[i]);
}

TEST_CASE("resample_linear two-point interpolation and row counts") {
  auto out = resample_linear(single(1.0, {0.0, 10.0}), 4.0);
  REQUIRE(out.rows() == 5);
  std::vector<double> want{0, 2.5, 5, 7.5, 10};
  for (std::size_t k = 0; k < 5; ++k) CHECK(out.at(k, 0) == want[k]);

  // 100 Hz -> 1 kHz gives 10x rows minus the edge.
  auto hundred = resample_linear(single(100.0, std::vector<double>(200, 1.0)), 1000.0);
  CHECK(hundred.rows() == 1991);
  CHECK(hundred.end_ms() == doctest::Approx(1990.0));
}

TEST_CASE("resample_linear rejects short input") {
  CHECK_THROWS_AS(resample_linear(single(10.0, {1.0}), 100.0), Error);
  try {
    resample_linear(single(10.0, {1.0}), 100.0);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientData);
  }
}

TEST_CASE("resample_linear is exact on affine signals for arbitrary rate pairs") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const double rate_in = 5.0 + std::floor(rng.uniform(0, 200));
    const double rate_out = 7.0 + std::floor(rng.uniform(0, 2000));
    const double a = rng.uniform(-5, 5), b = rng.uniform(-5, 5);
    std::vector<double> v;
    for (int i = 0; i < 30; ++i) v.push_back(a + b * i / rate_in);
    auto out = resample_linear(single(rate_in, v), rate_out);
    for (std::size_t k = 0; k < out.rows(); ++k) {
      const double t = k / rate_out;
      CHECK(std::abs(out.at(k, 0) - (a + b * t)) < 1e-12);
    }
  }
}

TEST_CASE("Butterworth lowpass: unit DC gain and half power at cutoff") {
  const double fc = 3.0;
  auto f = design_butterworth(5, FilterKind::Lowpass, std::vector<double>{fc}, 1000.0);
  CHECK(f.sections().size() == 3);
  CHECK(std::abs(oracle::filter_magnitude(f, 0.0L, 1000.0L) - 1.0L) < 1e-12L);
  const long double at_cut = oracle::filter_magnitude(f, fc, 1000.0L);
  CHECK(std::abs(at_cut * std::sqrt(2.0L) - 1.0L) < 1e-6L);
  CHECK(oracle::max_pole_radius(f) < 1.0 - 1e-9);
  // Expanded transfer function is monic with matching lengths.
  const auto b = f.numerator();
  const auto a = f.denominator();
  CHECK(b.size() == a.size());
  CHECK(a[0] == 1.0);
}

TEST_CASE("Butterworth bandpass 0.2-10 Hz at 1 kHz") {
  auto f = design_butterworth(5, FilterKind::Bandpass, std::vector<double>{0.2, 10.0}, 1000.0);
  CHECK(f.sections().size() == 5);
  CHECK(oracle::filter_magnitude(f, 0.0L, 1000.0L) < 1e-12L);
  CHECK(oracle::filter_magnitude(f, 100.0L, 1000.0L) < 0.01L);
  const long double mid = oracle::filter_magnitude(f, std::sqrt(0.2L * 10.0L), 1000.0L);
  CHECK(mid >= 0.99L);
  CHECK(mid <= 1.0L + 1e-12L);
  for (double fc : {0.2, 10.0})
    CHECK(std::abs(oracle::db(oracle::filter_magnitude(f, fc, 1000.0L)) + 3.0103) < 1e-3);
  CHECK(oracle::max_pole_radius(f) < 1.0 - 1e-9);
}

TEST_CASE("Butterworth design errors") {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Ok;
  };
  CHECK(code_of([] { design_butterworth(0, FilterKind::Lowpass, std::vector<double>{3.0}, 1000.0); }) ==
        ErrorCode::InvalidOrder);
  CHECK(code_of([] { design_butterworth(4, FilterKind::Lowpass, std::vector<double>{500.0}, 1000.0); }) ==
        ErrorCode::InvalidCutoff);
  CHECK(code_of([] {
          design_butterworth(4, FilterKind::Bandpass, std::vector<double>{10.0, 1.0}, 1000.0);
        }) == ErrorCode::InvalidCutoff);
  CHECK(code_of([] { design_butterworth(4, FilterKind::Bandpass, std::vector<double>{1.0}, 1000.0); }) ==
        ErrorCode::InvalidCutoff);
}

TEST_CASE("filter_stream settles to the DC gain") {
  auto lp = design_butterworth(5, FilterKind::Lowpass, std::vector<double>{3.0}, 1000.0);
  // Zero-state start rings; the envelope is below 1e-6 from 2.5 s on.
  auto out = filter_stream(lp, single(1000.0, std::vector<double>(4000, 1.0)));
  for (std::size_t i = 2500; i < 4000; ++i) CHECK(std::abs(out.at(i, 0) - 1.0) < 1e-6);

  auto bp = design_butterworth(5, FilterKind::Bandpass, std::vector<double>{0.2, 10.0}, 1000.0);
  auto out2 = filter_stream(bp, single(1000.0, std::vector<double>(30000, 1.0)));
  CHECK(std::abs(out2.at(29999, 0)) < 1e-6);
}

TEST_CASE("a primed filter holds a constant input with no transient") {
  auto lp = design_butterworth(2, FilterKind::Lowpass, std::vector<double>{6.0}, 1000.0);
  const std::vector<double> level{3.5, -2.0};
  lp.prime(level);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> x = level;
    lp.step(x);
    CHECK(x[0] == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(x[1] == doctest::Approx(-2.0).epsilon(1e-12));
  }
  auto bp = design_butterworth(3, FilterKind::Bandpass, std::vector<double>{0.5, 8.0}, 1000.0);
  bp.prime(std::vector<double>{4.0});
  std::vector<double> x{4.0};
  bp.step(x);
  CHECK(std::abs(x[0]) < 1e-12);  // zero DC gain
}

TEST_CASE("filter_stream chunking is bit-identical to one call") {
  Rng rng(11);
  SampleSeries sig(0.0, 1000.0, {"a", "b"});
  for (int i = 0; i < 1500; ++i) sig.append_row(std::vector<double>{rng.normal(), rng.uniform()});
  auto design = [] {
    return design_butterworth(5, FilterKind::Bandpass, std::vector<double>{0.2, 10.0}, 1000.0);
  };
  auto whole_filter = design();
  const auto whole = filter_stream(whole_filter, sig);
  for (std::size_t chunk : {1u, 7u, 64u}) {
    auto f = design();
    std::vector<double> joined;
    for (std::size_t b = 0; b < sig.rows(); b += chunk) {
      auto part = filter_stream(f, sig.slice(b, b + chunk));
      joined.insert(joined.end(), part.data.begin(), part.data.end());
    }
    CHECK(joined == whole.data);
  }
}

TEST_CASE("filter_stream rejects a channel-count change") {
  auto lp = design_butterworth(2, FilterKind::Lowpass, std::vector<double>{6.0}, 1000.0);
  filter_stream(lp, single(1000.0, {1, 2, 3}));
  SampleSeries two(0.0, 1000.0, {"a", "b"}, 3);
  CHECK_THROWS_AS(filter_stream(lp, two), Error);
}

TEST_CASE("StandardScaler hand values and zero-variance rule") {
  Matrix m(2, 1);
  m(0, 0) = 1;
  m(1, 0) = 3;
  auto s = scaler_fit(m);
  CHECK(s.mean[0] == 2.0);
  CHECK(s.stddev[0] == 1.0);
  Matrix q(1, 1, 2.0);
  CHECK(scaler_transform(s, q)(0, 0) == 0.0);

  Matrix c(3, 1, 5.0);
  auto sc = scaler_fit(c);
  auto t = scaler_transform(sc, c);
  for (double v : t.data) CHECK(v == 0.0);

  CHECK_THROWS_AS(scaler_transform(s, Matrix(1, 2)), Error);
  CHECK_THROWS_AS(scaler_fit(Matrix(0, 2)), Error);
}

TEST_CASE("StandardScaler moments and round trip on Gaussian data") {
  Rng rng(3);
  Matrix m(1000, 3);
  for (std::size_t r = 0; r < m.rows; ++r) {
    m(r, 0) = 4.0 + 2.0 * rng.normal();
    m(r, 1) = -100.0 + 0.01 * rng.normal();
    m(r, 2) = rng.uniform(0, 1e4);
  }
  auto s = scaler_fit(m);
  auto t = scaler_transform(s, m);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < t.rows; ++r) mean += t(r, j);
    mean /= t.rows;
    for (std::size_t r = 0; r < t.rows; ++r) var += (t(r, j) - mean) * (t(r, j) - mean);
    var /= t.rows;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-9);
  }
  auto back = scaler_inverse_transform(s, t);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    CHECK(std::abs(back.data[i] - m.data[i]) <= 1e-9 * std::max(1.0, std::abs(m.data[i])));
}
