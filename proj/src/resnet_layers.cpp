#include <Eigen/Dense>
#include <cmath>

#include "gaitrt/resnet.hpp"

namespace gaitrt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapRow = Eigen::Map<Eigen::RowVectorXd>;
using CMapRow = Eigen::Map<const Eigen::RowVectorXd>;

}  // namespace

Conv1d::Conv1d(std::size_t in_, std::size_t out_, std::size_t kernel_, std::size_t stride_, std::size_t pad_)
    : in(in_), out(out_), kernel(kernel_), stride(stride_), pad(pad_), weight(kernel_ * in_ * out_), bias(out_) {
  if (in == 0 || out == 0 || kernel == 0 || stride == 0) fail(ErrorCode::ShapeError, "conv1d: zero dimension");
}

std::size_t Conv1d::out_time(std::size_t t) const {
  if (t + 2 * pad < kernel) fail(ErrorCode::ShapeError, "conv1d: input shorter than kernel");
  return (t + 2 * pad - kernel) / stride + 1;
}

Tensor3 Conv1d::forward(const Tensor3& x) {
  if (x.channels != in)
    fail(ErrorCode::ShapeError, "conv1d: expected " + std::to_string(in) + " channels, got " + std::to_string(x.channels));
  batch_ = x.batch;
  time_ = x.time;
  out_time_ = out_time(x.time);
  const std::size_t width = kernel * in;
  const std::size_t rows = batch_ * out_time_;
  cols_.assign(rows * width, 0.0);
  for (std::size_t b = 0; b < batch_; ++b)
    for (std::size_t to = 0; to < out_time_; ++to) {
      double* dst = &cols_[(b * out_time_ + to) * width];
      for (std::size_t kk = 0; kk < kernel; ++kk) {
        const auto ti = static_cast<std::ptrdiff_t>(to * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(time_)) continue;
        const double* src = &x.data[(b * time_ + static_cast<std::size_t>(ti)) * in];
        std::copy(src, src + in, dst + kk * in);
      }
    }
  Tensor3 y(batch_, out_time_, out);
  MapMat Y(y.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out));
  CMapMat C(cols_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
  CMapMat W(weight.value.data(), static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(out));
  Y.noalias() = C * W;
  CMapRow bvec(bias.value.data(), static_cast<Eigen::Index>(out));
  Y.rowwise() += bvec;
  return y;
}

Tensor3 Conv1d::backward(const Tensor3& dy) {
  if (dy.batch != batch_ || dy.time != out_time_ || dy.channels != out)
    fail(ErrorCode::ShapeError, "conv1d backward: gradient shape mismatch");
  const std::size_t width = kernel * in;
  const std::size_t rows = batch_ * out_time_;
  CMapMat D(dy.data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(out));
  CMapMat C(cols_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(width));
  MapMat dW(weight.grad.data(), static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(out));
  dW.noalias() = C.transpose() * D;
  for (std::size_t o = 0; o < out; ++o) bias.grad[o] = 0.0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out; ++o) bias.grad[o] += dy.data[r * out + o];

  CMapMat W(weight.value.data(), static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(out));
  RowMat dcols = D * W.transpose();
  Tensor3 dx(batch_, time_, in);
  for (std::size_t b = 0; b < batch_; ++b)
    for (std::size_t to = 0; to < out_time_; ++to) {
      const double* src = dcols.data() + (b * out_time_ + to) * width;
      for (std::size_t kk = 0; kk < kernel; ++kk) {
        const auto ti = static_cast<std::ptrdiff_t>(to * stride + kk) - static_cast<std::ptrdiff_t>(pad);
        if (ti < 0 || ti >= static_cast<std::ptrdiff_t>(time_)) continue;
        double* dst = &dx.data[(b * time_ + static_cast<std::size_t>(ti)) * in];
        for (std::size_t c = 0; c < in; ++c) dst[c] += src[kk * in + c];
      }
    }
  return dx;
}

BatchNorm1d::BatchNorm1d(std::size_t ch, double mom, double e)
    : channels(ch), momentum(mom), eps(e), gamma(ch), beta(ch), running_mean(ch, 0.0), running_var(ch, 1.0) {
  std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
}

Tensor3 BatchNorm1d::forward(const Tensor3& x, Mode mode) {
  if (x.channels != channels) fail(ErrorCode::ShapeError, "batchnorm: channel count mismatch");
  const std::size_t n = x.batch * x.time;
  mode_ = mode;
  Tensor3 y(x.batch, x.time, channels);
  xhat_.resize(x.size());
  inv_std_.resize(channels);
  if (mode == Mode::Train) {
    if (n < 2) fail(ErrorCode::ShapeError, "batchnorm: training needs at least two values per channel");
    std::vector<double> mean(channels, 0.0), var(channels, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < channels; ++c) mean[c] += x.data[r * channels + c];
    for (auto& m : mean) m /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = x.data[r * channels + c] - mean[c];
        var[c] += d * d;
      }
    for (std::size_t c = 0; c < channels; ++c) {
      const double biased = var[c] / static_cast<double>(n);
      inv_std_[c] = 1.0 / std::sqrt(biased + eps);
      running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
      running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c] / static_cast<double>(n - 1);
    }
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = r * channels + c;
        xhat_[i] = (x.data[i] - mean[c]) * inv_std_[c];
        y.data[i] = gamma.value[c] * xhat_[i] + beta.value[c];
      }
  } else {
    for (std::size_t c = 0; c < channels; ++c) inv_std_[c] = 1.0 / std::sqrt(running_var[c] + eps);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = r * channels + c;
        xhat_[i] = (x.data[i] - running_mean[c]) * inv_std_[c];
        y.data[i] = gamma.value[c] * xhat_[i] + beta.value[c];
      }
  }
  return y;
}

Tensor3 BatchNorm1d::backward(const Tensor3& dy) {
  if (dy.channels != channels || dy.size() != xhat_.size()) fail(ErrorCode::ShapeError, "batchnorm backward: shape mismatch");
  const std::size_t n = dy.batch * dy.time;
  std::fill(gamma.grad.begin(), gamma.grad.end(), 0.0);
  std::fill(beta.grad.begin(), beta.grad.end(), 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      gamma.grad[c] += dy.data[i] * xhat_[i];
      beta.grad[c] += dy.data[i];
    }
  Tensor3 dx(dy.batch, dy.time, channels);
  if (mode_ == Mode::Train) {
    const double nn = static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = r * channels + c;
        dx.data[i] = gamma.value[c] * inv_std_[c] / nn *
                     (nn * dy.data[i] - beta.grad[c] - xhat_[i] * gamma.grad[c]);
      }
  } else {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = r * channels + c;
        dx.data[i] = dy.data[i] * gamma.value[c] * inv_std_[c];
      }
  }
  return dx;
}

namespace {

void relu_inplace(Tensor3& t, std::vector<std::uint8_t>& mask) {
  mask.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    mask[i] = t.data[i] > 0.0;
    if (!mask[i]) t.data[i] = 0.0;
  }
}

void relu_backward_inplace(Tensor3& g, const std::vector<std::uint8_t>& mask) {
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!mask[i]) g.data[i] = 0.0;
}

}  // namespace

ResidualBlock::ResidualBlock(std::size_t in, std::size_t out, std::size_t kernel)
    : conv1(in, out, kernel, 1, kernel / 2),
      conv2(out, out, kernel, 1, kernel / 2),
      bn1(out),
      bn2(out) {
  if (kernel % 2 == 0) fail(ErrorCode::ShapeError, "residual block kernel must be odd");
  if (in != out) projection.emplace(in, out, 1, 1, 0);
}

Tensor3 ResidualBlock::forward(const Tensor3& x, Mode mode) {
  Tensor3 h = bn1.forward(conv1.forward(x), mode);
  relu_inplace(h, mask1_);
  Tensor3 f = bn2.forward(conv2.forward(h), mode);
  if (projection) {
    const Tensor3 s = projection->forward(x);
    for (std::size_t i = 0; i < f.size(); ++i) f.data[i] += s.data[i];
  } else {
    for (std::size_t i = 0; i < f.size(); ++i) f.data[i] += x.data[i];
  }
  relu_inplace(f, mask_out_);
  return f;
}

Tensor3 ResidualBlock::backward(const Tensor3& dy) {
  Tensor3 g = dy;
  relu_backward_inplace(g, mask_out_);
  Tensor3 dh = conv2.backward(bn2.backward(g));
  relu_backward_inplace(dh, mask1_);
  Tensor3 dx = conv1.backward(bn1.backward(dh));
  const Tensor3 ds = projection ? projection->backward(g) : g;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += ds.data[i];
  return dx;
}

Dense::Dense(std::size_t in_, std::size_t out_) : in(in_), out(out_), weight(in_ * out_), bias(out_) {}

Matrix Dense::forward(const Matrix& x) {
  if (x.cols != in) fail(ErrorCode::ShapeError, "dense: input width mismatch");
  x_ = x;
  Matrix y(x.rows, out);
  MapMat Y(y.data.data(), static_cast<Eigen::Index>(x.rows), static_cast<Eigen::Index>(out));
  CMapMat X(x.data.data(), static_cast<Eigen::Index>(x.rows), static_cast<Eigen::Index>(in));
  CMapMat W(weight.value.data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  Y.noalias() = X * W;
  Y.rowwise() += CMapRow(bias.value.data(), static_cast<Eigen::Index>(out));
  return y;
}

Matrix Dense::backward(const Matrix& dy) {
  if (dy.cols != out || dy.rows != x_.rows) fail(ErrorCode::ShapeError, "dense backward: shape mismatch");
  CMapMat D(dy.data.data(), static_cast<Eigen::Index>(dy.rows), static_cast<Eigen::Index>(out));
  CMapMat X(x_.data.data(), static_cast<Eigen::Index>(x_.rows), static_cast<Eigen::Index>(in));
  MapMat dW(weight.grad.data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  dW.noalias() = X.transpose() * D;
  for (std::size_t o = 0; o < out; ++o) bias.grad[o] = 0.0;
  for (std::size_t r = 0; r < dy.rows; ++r)
    for (std::size_t o = 0; o < out; ++o) bias.grad[o] += dy(r, o);
  Matrix dx(dy.rows, in);
  CMapMat W(weight.value.data(), static_cast<Eigen::Index>(in), static_cast<Eigen::Index>(out));
  MapMat dX(dx.data.data(), static_cast<Eigen::Index>(dy.rows), static_cast<Eigen::Index>(in));
  dX.noalias() = D * W.transpose();
  return dx;
}

}  // namespace gaitrt
