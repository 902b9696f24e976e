#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitrt/common.hpp"
#include "gaitrt/signal.hpp"

namespace gaitrt {

/// Dense (batch, time, channels) tensor, channels fastest.
struct Tensor3 {
  std::size_t batch = 0, time = 0, channels = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t b, std::size_t t, std::size_t c, double fill = 0.0)
      : batch(b), time(t), channels(c), data(b * t * c, fill) {}

  std::size_t size() const { return data.size(); }
  double& at(std::size_t b, std::size_t t, std::size_t c) { return data[(b * time + t) * channels + c]; }
  double at(std::size_t b, std::size_t t, std::size_t c) const { return data[(b * time + t) * channels + c]; }
  bool same_shape(const Tensor3& o) const { return batch == o.batch && time == o.time && channels == o.channels; }
  bool operator==(const Tensor3&) const = default;
};

enum class Mode : std::uint8_t { Train, Infer };

struct Param {
  std::vector<double> value;
  std::vector<double> grad;

  explicit Param(std::size_t n = 0) : value(n, 0.0), grad(n, 0.0) {}
  std::size_t size() const { return value.size(); }
};

/// Cross-correlation along time. Weight layout [k][in][out].
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1, std::size_t pad = 0);

  std::size_t out_time(std::size_t t) const;
  Tensor3 forward(const Tensor3& x);
  // Writes weight/bias gradients and returns d loss / d x.
  Tensor3 backward(const Tensor3& dy);

  std::size_t in = 0, out = 0, kernel = 1, stride = 1, pad = 0;
  Param weight, bias;

 private:
  std::vector<double> cols_;  // im2col of the last input
  std::size_t batch_ = 0, time_ = 0, out_time_ = 0;
};

/// Per-channel normalization over batch and time. Training mode updates the
/// running statistics with the unbiased batch variance.
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  Tensor3 forward(const Tensor3& x, Mode mode);
  Tensor3 backward(const Tensor3& dy);

  std::size_t channels = 0;
  double momentum = 0.1, eps = 1e-5;
  Param gamma, beta;
  std::vector<double> running_mean, running_var;

 private:
  Mode mode_ = Mode::Infer;
  std::vector<double> xhat_, inv_std_;
};

/// out = ReLU(bn2(conv2(ReLU(bn1(conv1(x))))) + shortcut(x)); the shortcut is
/// a 1x1 convolution when the channel count changes, else the identity.
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t in, std::size_t out, std::size_t kernel);

  Tensor3 forward(const Tensor3& x, Mode mode);
  Tensor3 backward(const Tensor3& dy);
  bool has_projection() const { return projection.has_value(); }

  Conv1d conv1, conv2;
  BatchNorm1d bn1, bn2;
  std::optional<Conv1d> projection;

 private:
  std::vector<std::uint8_t> mask1_, mask_out_;
};

/// Fully connected layer on (rows, in) matrices. Weight layout [in][out].
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out);

  Matrix forward(const Matrix& x);
  Matrix backward(const Matrix& dy);

  std::size_t in = 0, out = 0;
  Param weight, bias;

 private:
  Matrix x_;
};

struct ResNetConfig {
  std::size_t in_channels = 0;
  std::size_t window = 10;
  std::size_t n_out = 1;
  std::size_t k0 = 3;
  std::size_t s0 = 1;
  std::size_t c0 = 32;
  std::size_t kernel = 3;
  std::vector<std::size_t> block_channels{32, 64, 64, 128};
  std::size_t dense = 64;

  bool operator==(const ResNetConfig&) const = default;
};

/// Residual 1D CNN regressor. forward/backward operate on already-scaled
/// data; predict applies the stored input and target scalers.
class ResNetModel {
 public:
  ResNetModel() = default;
  ResNetModel(const ResNetConfig& cfg, std::uint64_t seed);

  const ResNetConfig& config() const { return cfg_; }
  Matrix forward(const Tensor3& x, Mode mode);
  Tensor3 backward(const Matrix& dout);

  // Parameter order is fixed: stem, blocks in order, hidden, output.
  std::vector<Param*> params();
  std::vector<BatchNorm1d*> batchnorms();
  std::size_t parameter_count();

  // Weights plus running statistics, flattened.
  std::vector<double> state();
  void load_state(std::span<const double> s);

  Matrix predict(const Tensor3& raw_windows, std::size_t batch = 256);

  StandardScaler input_scaler;
  StandardScaler target_scaler;

  Conv1d stem_conv;
  BatchNorm1d stem_bn;
  std::vector<ResidualBlock> blocks;
  Dense hidden, output;

 private:
  ResNetConfig cfg_;
  std::vector<std::uint8_t> stem_mask_, hidden_mask_;
  std::size_t pooled_time_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m, v;

  explicit AdamState(AdamConfig c = {}) : cfg(c) {}
};

/// One bias-corrected Adam update over every parameter's gradient.
void adam_step(std::span<Param* const> params, AdamState& state);
void adam_step(std::vector<double>& theta, std::span<const double> grad, AdamState& state, std::size_t slot = 0);

struct TrainConfig {
  int max_epochs = 500;
  int patience = 10;
  bool restore_best = true;
  std::size_t batch_size = 64;
  double validation_fraction = 0.1;
  std::size_t window_length = 10;
  std::size_t window_stride = 1;
  AdamConfig adam{};
};

struct TrainHistory {
  std::vector<double> train_loss;  // scaled-target MSE, mean over the epoch
  std::vector<double> val_mse;     // original target units
  int best_epoch = -1;
  double best_val_mse = 0.0;
  std::size_t train_windows = 0, val_windows = 0;
};

struct TrainResult {
  ResNetModel model;
  TrainHistory history;
};

/// Trains on windows X (raw units) and targets Y (raw units). `groups` gives
/// the gait cycle of each window; validation takes whole cycles.
TrainResult train_moments(const Tensor3& X, const Matrix& Y, std::span<const std::int64_t> groups,
                          const ResNetConfig& arch, const TrainConfig& cfg, std::uint64_t seed);

/// Validation MSE in target units, evaluated in fixed batch order.
double evaluate_mse(ResNetModel& model, const Tensor3& X, const Matrix& Y);

struct Windows {
  Tensor3 x;
  std::vector<std::size_t> target_row;  // last row of each window
};

Windows windowize(const Matrix& rows, std::size_t length, std::size_t stride);
Windows windowize(const SampleSeries& series, std::size_t length, std::size_t stride);

void write_resnet(std::ostream& os, ResNetModel& model);
ResNetModel read_resnet(std::istream& is);

}  // namespace gaitrt
