#include "gaitrt/resnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gaitrt/binary_io.hpp"

namespace gaitrt {

namespace {

constexpr char kMagic[5] = "GRTR";
constexpr std::uint32_t kVersion = 1;

void init_uniform(Param& p, double bound, Rng& rng) {
  for (auto& v : p.value) v = rng.uniform(-bound, bound);
}

void init_conv(Conv1d& c, Rng& rng) { init_uniform(c.weight, std::sqrt(6.0 / static_cast<double>(c.kernel * c.in)), rng); }

void scale_windows_inplace(Tensor3& x, const StandardScaler& s) {
  if (s.features() == 0) return;
  if (s.features() != x.channels) fail(ErrorCode::ShapeError, "input scaler width does not match window channels");
  for (std::size_t r = 0; r < x.batch * x.time; ++r) s.transform_inplace({x.data.data() + r * x.channels, x.channels});
}

Tensor3 gather(const Tensor3& x, std::span<const std::size_t> idx) {
  Tensor3 out(idx.size(), x.time, x.channels);
  const std::size_t w = x.time * x.channels;
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * w), w,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * w));
  return out;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) { return m.select_rows(idx); }

}  // namespace

ResNetModel::ResNetModel(const ResNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.in_channels == 0 || cfg.n_out == 0 || cfg.window == 0 || cfg.c0 == 0 || cfg.dense == 0)
    fail(ErrorCode::ShapeError, "resnet: zero-sized configuration");
  stem_conv = Conv1d(cfg.in_channels, cfg.c0, cfg.k0, cfg.s0, cfg.k0 / 2);
  stem_bn = BatchNorm1d(cfg.c0);
  std::size_t ch = cfg.c0;
  for (std::size_t out : cfg.block_channels) {
    blocks.emplace_back(ch, out, cfg.kernel);
    ch = out;
  }
  hidden = Dense(ch, cfg.dense);
  output = Dense(cfg.dense, cfg.n_out);
  (void)stem_conv.out_time(cfg.window);

  Rng rng(seed);
  init_conv(stem_conv, rng);
  for (auto& b : blocks) {
    init_conv(b.conv1, rng);
    init_conv(b.conv2, rng);
    if (b.projection) init_conv(*b.projection, rng);
  }
  init_uniform(hidden.weight, std::sqrt(6.0 / static_cast<double>(hidden.in)), rng);
  init_uniform(output.weight, 1.0 / std::sqrt(static_cast<double>(output.in)), rng);
}

Matrix ResNetModel::forward(const Tensor3& x, Mode mode) {
  if (x.time != cfg_.window || x.channels != cfg_.in_channels)
    fail(ErrorCode::ShapeError, "resnet: expected windows of " + std::to_string(cfg_.window) + " x " +
                                    std::to_string(cfg_.in_channels) + ", got " + std::to_string(x.time) + " x " +
                                    std::to_string(x.channels));
  Tensor3 h = stem_bn.forward(stem_conv.forward(x), mode);
  stem_mask_.resize(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    stem_mask_[i] = h.data[i] > 0.0;
    if (!stem_mask_[i]) h.data[i] = 0.0;
  }
  for (auto& b : blocks) h = b.forward(h, mode);

  pooled_time_ = h.time;
  Matrix g(h.batch, h.channels);
  for (std::size_t b = 0; b < h.batch; ++b)
    for (std::size_t c = 0; c < h.channels; ++c) {
      double s = 0.0;
      for (std::size_t t = 0; t < h.time; ++t) s += h.at(b, t, c);
      g(b, c) = s / static_cast<double>(h.time);
    }
  Matrix hd = hidden.forward(g);
  hidden_mask_.resize(hd.data.size());
  for (std::size_t i = 0; i < hd.data.size(); ++i) {
    hidden_mask_[i] = hd.data[i] > 0.0;
    if (!hidden_mask_[i]) hd.data[i] = 0.0;
  }
  return output.forward(hd);
}

Tensor3 ResNetModel::backward(const Matrix& dout) {
  Matrix dhd = output.backward(dout);
  for (std::size_t i = 0; i < dhd.data.size(); ++i)
    if (!hidden_mask_[i]) dhd.data[i] = 0.0;
  const Matrix dg = hidden.backward(dhd);
  Tensor3 dh(dg.rows, pooled_time_, dg.cols);
  const double inv_t = 1.0 / static_cast<double>(pooled_time_);
  for (std::size_t b = 0; b < dg.rows; ++b)
    for (std::size_t t = 0; t < pooled_time_; ++t)
      for (std::size_t c = 0; c < dg.cols; ++c) dh.at(b, t, c) = dg(b, c) * inv_t;
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) dh = it->backward(dh);
  for (std::size_t i = 0; i < dh.size(); ++i)
    if (!stem_mask_[i]) dh.data[i] = 0.0;
  return stem_conv.backward(stem_bn.backward(dh));
}

std::vector<Param*> ResNetModel::params() {
  std::vector<Param*> p{&stem_conv.weight, &stem_conv.bias, &stem_bn.gamma, &stem_bn.beta};
  for (auto& b : blocks) {
    for (Param* q : {&b.conv1.weight, &b.conv1.bias, &b.bn1.gamma, &b.bn1.beta, &b.conv2.weight, &b.conv2.bias,
                     &b.bn2.gamma, &b.bn2.beta})
      p.push_back(q);
    if (b.projection) {
      p.push_back(&b.projection->weight);
      p.push_back(&b.projection->bias);
    }
  }
  for (Param* q : {&hidden.weight, &hidden.bias, &output.weight, &output.bias}) p.push_back(q);
  return p;
}

std::vector<BatchNorm1d*> ResNetModel::batchnorms() {
  std::vector<BatchNorm1d*> out{&stem_bn};
  for (auto& b : blocks) {
    out.push_back(&b.bn1);
    out.push_back(&b.bn2);
  }
  return out;
}

std::size_t ResNetModel::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->size();
  return n;
}

std::vector<double> ResNetModel::state() {
  std::vector<double> s;
  for (auto* p : params()) s.insert(s.end(), p->value.begin(), p->value.end());
  for (auto* bn : batchnorms()) {
    s.insert(s.end(), bn->running_mean.begin(), bn->running_mean.end());
    s.insert(s.end(), bn->running_var.begin(), bn->running_var.end());
  }
  return s;
}

void ResNetModel::load_state(std::span<const double> s) {
  std::size_t k = 0;
  auto take = [&](std::vector<double>& dst) {
    if (k + dst.size() > s.size()) fail(ErrorCode::ModelMismatch, "resnet state is too short");
    std::copy_n(s.begin() + static_cast<std::ptrdiff_t>(k), dst.size(), dst.begin());
    k += dst.size();
  };
  for (auto* p : params()) take(p->value);
  for (auto* bn : batchnorms()) {
    take(bn->running_mean);
    take(bn->running_var);
  }
  if (k != s.size()) fail(ErrorCode::ModelMismatch, "resnet state length mismatch");
}

Matrix ResNetModel::predict(const Tensor3& raw, std::size_t batch) {
  Tensor3 x = raw;
  scale_windows_inplace(x, input_scaler);
  Matrix out(x.batch, cfg_.n_out);
  batch = std::max<std::size_t>(batch, 1);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < x.batch; start += batch) {
    const std::size_t end = std::min(x.batch, start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix z = forward(gather(x, idx), Mode::Infer);
    for (std::size_t r = 0; r < z.rows; ++r)
      for (std::size_t o = 0; o < cfg_.n_out; ++o) out(start + r, o) = z(r, o);
  }
  if (target_scaler.features() == cfg_.n_out) out = scaler_inverse_transform(target_scaler, out);
  return out;
}

void adam_step(std::vector<double>& theta, std::span<const double> grad, AdamState& st, std::size_t slot) {
  if (grad.size() != theta.size()) fail(ErrorCode::ShapeError, "adam: gradient size mismatch");
  if (st.m.size() <= slot) {
    st.m.resize(slot + 1);
    st.v.resize(slot + 1);
  }
  auto& m = st.m[slot];
  auto& v = st.v[slot];
  if (m.empty()) {
    m.assign(theta.size(), 0.0);
    v.assign(theta.size(), 0.0);
  }
  if (m.size() != theta.size()) fail(ErrorCode::ShapeError, "adam: state size mismatch");
  if (slot == 0) ++st.t;
  const auto& c = st.cfg;
  const double t = static_cast<double>(st.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * grad[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    theta[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

void adam_step(std::span<Param* const> params, AdamState& st) {
  for (std::size_t k = 0; k < params.size(); ++k) adam_step(params[k]->value, params[k]->grad, st, k);
}

Windows windowize(const Matrix& rows, std::size_t length, std::size_t stride) {
  if (length == 0 || stride == 0) fail(ErrorCode::RangeError, "windowize: length and stride must be positive");
  if (rows.rows < length) fail(ErrorCode::InsufficientData, "windowize: series shorter than one window");
  const std::size_t count = (rows.rows - length) / stride + 1;
  Windows w;
  w.x = Tensor3(count, length, rows.cols);
  w.target_row.resize(count);
  const std::size_t span = length * rows.cols;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t first = i * stride;
    std::copy_n(rows.data.begin() + static_cast<std::ptrdiff_t>(first * rows.cols), span,
                w.x.data.begin() + static_cast<std::ptrdiff_t>(i * span));
    w.target_row[i] = first + length - 1;
  }
  return w;
}

Windows windowize(const SampleSeries& series, std::size_t length, std::size_t stride) {
  Matrix m(series.rows(), series.cols());
  m.data = series.data;
  return windowize(m, length, stride);
}

double evaluate_mse(ResNetModel& model, const Tensor3& X, const Matrix& Y) {
  const Matrix p = model.predict(X);
  if (p.rows != Y.rows || p.cols != Y.cols) fail(ErrorCode::ShapeError, "evaluate_mse: target shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.data.size(); ++i) s += (p.data[i] - Y.data[i]) * (p.data[i] - Y.data[i]);
  return s / static_cast<double>(p.data.size());
}

TrainResult train_moments(const Tensor3& X, const Matrix& Y, std::span<const std::int64_t> groups,
                          const ResNetConfig& arch, const TrainConfig& cfg, std::uint64_t seed) {
  if (X.batch == 0) fail(ErrorCode::EmptyInput, "train_moments: no windows");
  if (Y.rows != X.batch || groups.size() != X.batch) fail(ErrorCode::ShapeError, "train_moments: X, Y, groups differ in length");
  if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0))
    fail(ErrorCode::RangeError, "validation fraction must lie in (0, 1)");
  if (cfg.batch_size < 2) fail(ErrorCode::RangeError, "batch size must be at least 2");
  for (double v : X.data)
    if (!std::isfinite(v)) fail(ErrorCode::DataError, "train_moments: non-finite input value");
  for (double v : Y.data)
    if (!std::isfinite(v)) fail(ErrorCode::DataError, "train_moments: non-finite target value");

  std::vector<std::int64_t> ids(groups.begin(), groups.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) fail(ErrorCode::EmptyInput, "train_moments: need at least two gait cycles");
  Rng split_rng(substream_seed(seed, 1));
  split_rng.shuffle(ids);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(ids.size()))), 1,
      ids.size() - 1);
  std::vector<std::int64_t> val_ids(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(val_ids.begin(), val_ids.end());

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < groups.size(); ++i)
    (std::binary_search(val_ids.begin(), val_ids.end(), groups[i]) ? val_idx : train_idx).push_back(i);
  if (train_idx.size() < 2) fail(ErrorCode::EmptyInput, "train_moments: training partition too small");

  ResNetConfig a = arch;
  a.in_channels = X.channels;
  a.window = X.time;
  a.n_out = Y.cols;
  TrainResult res{ResNetModel(a, substream_seed(seed, 0)), {}};
  ResNetModel& model = res.model;

  Tensor3 Xtr = gather(X, train_idx);
  const Matrix Ytr_raw = gather_rows(Y, train_idx);
  const Tensor3 Xval = gather(X, val_idx);
  const Matrix Yval = gather_rows(Y, val_idx);

  {
    Matrix flat(Xtr.batch * Xtr.time, Xtr.channels);
    flat.data = Xtr.data;
    model.input_scaler = scaler_fit(flat);
  }
  model.target_scaler = scaler_fit(Ytr_raw);
  for (auto& s : model.target_scaler.stddev)
    if (!(s > 0.0)) s = 1.0;
  scale_windows_inplace(Xtr, model.input_scaler);
  const Matrix Ytr = scaler_transform(model.target_scaler, Ytr_raw);

  auto params = model.params();
  AdamState adam(cfg.adam);
  Rng order_rng(substream_seed(seed, 2));
  std::vector<std::size_t> order(train_idx.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto& h = res.history;
  h.train_windows = train_idx.size();
  h.val_windows = val_idx.size();
  std::vector<double> best_state;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;  // batch statistics need two windows
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Tensor3 xb = gather(Xtr, idx);
      const Matrix yb = Ytr.select_rows(idx);
      const Matrix pred = model.forward(xb, Mode::Train);
      Matrix d(pred.rows, pred.cols);
      double loss = 0.0;
      const double n = static_cast<double>(pred.data.size());
      for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const double e = pred.data[i] - yb.data[i];
        loss += e * e;
        d.data[i] = 2.0 * e / n;
      }
      loss /= n;
      if (!std::isfinite(loss))
        fail(ErrorCode::Diverged, "training loss became non-finite at epoch " + std::to_string(epoch));
      model.backward(d);
      adam_step(params, adam);
      loss_sum += loss * static_cast<double>(idx.size());
      loss_count += idx.size();
    }
    h.train_loss.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(loss_count, 1)));
    const double val = evaluate_mse(model, Xval, Yval);
    if (!std::isfinite(val)) fail(ErrorCode::Diverged, "validation loss became non-finite at epoch " + std::to_string(epoch));
    h.val_mse.push_back(val);
    if (h.best_epoch < 0 || val < h.best_val_mse) {
      h.best_epoch = epoch;
      h.best_val_mse = val;
      since_best = 0;
      if (cfg.restore_best) best_state = model.state();
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (cfg.restore_best && !best_state.empty()) model.load_state(best_state);
  return res;
}

namespace {
void write_scaler(std::ostream& os, const StandardScaler& s) {
  bin::put_vec(os, s.mean);
  bin::put_vec(os, s.stddev);
}
StandardScaler read_scaler(std::istream& is) {
  StandardScaler s;
  s.mean = bin::get_vec<double>(is);
  s.stddev = bin::get_vec<double>(is);
  if (s.mean.size() != s.stddev.size()) fail(ErrorCode::FormatError, "scaler arrays differ in length");
  return s;
}
}  // namespace

void write_resnet(std::ostream& os, ResNetModel& model) {
  bin::put_magic(os, kMagic, kVersion);
  const auto& c = model.config();
  for (std::size_t v : {c.in_channels, c.window, c.n_out, c.k0, c.s0, c.c0, c.kernel, c.dense})
    bin::put<std::uint64_t>(os, v);
  std::vector<std::uint64_t> blocks(c.block_channels.begin(), c.block_channels.end());
  bin::put_vec(os, blocks);
  write_scaler(os, model.input_scaler);
  write_scaler(os, model.target_scaler);
  bin::put_vec(os, model.state());
}

ResNetModel read_resnet(std::istream& is) {
  const auto version = bin::expect_magic(is, kMagic);
  if (version != kVersion) fail(ErrorCode::FormatError, "unsupported resnet version " + std::to_string(version));
  ResNetConfig c;
  for (std::size_t* v : {&c.in_channels, &c.window, &c.n_out, &c.k0, &c.s0, &c.c0, &c.kernel, &c.dense}) {
    *v = bin::get<std::uint64_t>(is);
    if (*v > (1u << 20)) fail(ErrorCode::FormatError, "implausible resnet dimension");
  }
  const auto blocks = bin::get_vec<std::uint64_t>(is, 64);
  c.block_channels.assign(blocks.begin(), blocks.end());
  ResNetModel m(c, 0);
  m.input_scaler = read_scaler(is);
  m.target_scaler = read_scaler(is);
  const auto state = bin::get_vec<double>(is);
  try {
    m.load_state(state);
  } catch (const Error&) {
    fail(ErrorCode::FormatError, "resnet weights do not match the stored architecture");
  }
  return m;
}

}  // namespace gaitrt
