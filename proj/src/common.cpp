#include "gaitrt/common.hpp"

#include <cmath>
#include <numbers>

namespace gaitrt {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Ok: return "Ok";
    case ErrorCode::Usage: return "Usage";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::InvalidCutoff: return "InvalidCutoff";
    case ErrorCode::InvalidOrder: return "InvalidOrder";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::OutOfStride: return "OutOfStride";
    case ErrorCode::WarmupIncomplete: return "WarmupIncomplete";
    case ErrorCode::EmptyTrial: return "EmptyTrial";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::Diverged: return "DivergedError";
    case ErrorCode::RangeError: return "RangeError";
    case ErrorCode::CorrelationUndefined: return "CorrelationUndefined";
    case ErrorCode::MissingChannel: return "MissingChannel";
    case ErrorCode::AlignmentError: return "AlignmentError";
    case ErrorCode::InsufficientDuration: return "InsufficientDuration";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::DataError: return "DataError";
    case ErrorCode::SensorTimeout: return "SensorTimeout";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ModelMismatch: return "ModelMismatch";
  }
  return "Unknown";
}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

void Matrix::append_row(std::span<const double> values) {
  if (rows == 0 && cols == 0) cols = values.size();
  if (values.size() != cols) fail(ErrorCode::ShapeError, "append_row: column count mismatch");
  data.insert(data.end(), values.begin(), values.end());
  ++rows;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
  return out;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next() { return engine_(); }

std::uint64_t Rng::below(std::uint64_t bound) {
  // Rejection on the top of the range keeps every residue equally likely.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
  std::uint64_t x;
  do {
    x = next();
  } while (x >= limit);
  return x % bound;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace gaitrt
