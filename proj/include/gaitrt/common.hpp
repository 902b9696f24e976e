#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gaitrt {

// Machine-readable error categories. The numeric value doubles as the CLI
// exit status, so the order is part of the external interface.
enum class ErrorCode : int {
  Ok = 0,
  Usage = 2,
  InsufficientData = 10,
  InvalidCutoff,
  InvalidOrder,
  ShapeError,
  OutOfStride,
  WarmupIncomplete,
  EmptyTrial,
  EmptyInput,
  Diverged,
  RangeError,
  CorrelationUndefined,
  MissingChannel,
  AlignmentError,
  InsufficientDuration,
  FormatError,
  DataError,
  SensorTimeout,
  IoError,
  ModelMismatch,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

enum class Foot : std::uint8_t { Right = 0, Left = 1 };

inline constexpr Foot kFeet[2] = {Foot::Right, Foot::Left};
inline char foot_letter(Foot f) { return f == Foot::Right ? 'r' : 'l'; }
inline Foot other(Foot f) { return f == Foot::Right ? Foot::Left : Foot::Right; }

inline constexpr double kGravity = 9.81;

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  void append_row(std::span<const double> values);
  Matrix select_rows(std::span<const std::size_t> indices) const;
  std::vector<double> column(std::size_t c) const;

  bool operator==(const Matrix&) const = default;
};

// Seeded generator whose draws are fully specified (mt19937_64 output plus
// our own integer/real mappings), so results do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  // Uniform integer in [0, bound), bound > 0. Unbiased (rejection).
  std::uint64_t below(std::uint64_t bound);
  // Uniform real in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

// Independent seed for substream `index` of `seed` (splitmix64 mixing).
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace gaitrt
