#include "gaitrt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "gaitrt/format.hpp"

namespace gaitrt {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) fail(ErrorCode::EmptyInput, "metrics: empty series");
  if (a.size() != b.size()) fail(ErrorCode::ShapeError, "metrics: series lengths differ");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double range_of(std::span<const double> y_true) {
  const auto [lo, hi] = std::minmax_element(y_true.begin(), y_true.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) fail(ErrorCode::RangeError, "ground truth has zero range");
  return range;
}

MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  out.n = v.size();
  if (v.empty()) return out;
  out.mean = mean_of(v);
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return out;
}

}  // namespace

double rmse(std::span<const double> y_true, std::span<const double> y_pred) {
  check_pair(y_true, y_pred);
  double ss = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) ss += (y_pred[i] - y_true[i]) * (y_pred[i] - y_true[i]);
  return std::sqrt(ss / static_cast<double>(y_true.size()));
}

double nrmse(std::span<const double> y_true, std::span<const double> y_pred) {
  const double e = rmse(y_true, y_pred);
  return 100.0 * e / range_of(y_true);
}

double nmae(std::span<const double> y_true, std::span<const double> y_pred) {
  check_pair(y_true, y_pred);
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += std::abs(y_pred[i] - y_true[i]);
  return 100.0 * (s / static_cast<double>(y_true.size())) / range_of(y_true);
}

double pearson_r(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const double ma = mean_of(a);
  const double mb = mean_of(b);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) fail(ErrorCode::CorrelationUndefined, "constant series has no correlation");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double r_squared(std::span<const double> y_true, std::span<const double> y_pred) {
  check_pair(y_true, y_pred);
  const double m = mean_of(y_true);
  double res = 0.0, tot = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    res += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    tot += (y_true[i] - m) * (y_true[i] - m);
  }
  if (!(tot > 0.0)) fail(ErrorCode::RangeError, "r^2 undefined for constant ground truth");
  return 1.0 - res / tot;
}

MetricReport compute_report(std::span<const double> y_true, std::span<const double> y_pred) {
  MetricReport r;
  r.rmse = rmse(y_true, y_pred);
  r.n_samples = y_true.size();
  auto attempt = [](auto&& fn) -> std::optional<double> {
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::RangeError && e.code() != ErrorCode::CorrelationUndefined) throw;
      return std::nullopt;
    }
  };
  r.nrmse = attempt([&] { return nrmse(y_true, y_pred); });
  r.nmae = attempt([&] { return nmae(y_true, y_pred); });
  r.pearson_r = attempt([&] { return pearson_r(y_true, y_pred); });
  r.r_squared = attempt([&] { return r_squared(y_true, y_pred); });
  return r;
}

AggregateReport fold_aggregate(std::span<const MetricReport> reports) {
  std::vector<double> e, n, a, p, q;
  for (const auto& r : reports) {
    e.push_back(r.rmse);
    if (r.nrmse) n.push_back(*r.nrmse);
    if (r.nmae) a.push_back(*r.nmae);
    if (r.pearson_r) p.push_back(*r.pearson_r);
    if (r.r_squared) q.push_back(*r.r_squared);
  }
  return {mean_std(e), mean_std(n), mean_std(a), mean_std(p), mean_std(q)};
}

std::array<double, kGcGridPoints> resample_to_gc_grid(const CycleTrace& trace) {
  const auto& g = trace.gc_percent;
  const auto& v = trace.values;
  if (g.empty() || g.size() != v.size()) fail(ErrorCode::ShapeError, "cycle trace needs matching non-empty arrays");
  std::array<double, kGcGridPoints> out{};
  std::size_t j = 0;
  for (std::size_t k = 0; k < kGcGridPoints; ++k) {
    const double x = static_cast<double>(k);
    if (x <= g.front()) {
      out[k] = v.front();
      continue;
    }
    if (x >= g.back()) {
      out[k] = v.back();
      continue;
    }
    while (g[j + 1] < x) ++j;
    const double w = (x - g[j]) / (g[j + 1] - g[j]);
    out[k] = v[j] + w * (v[j + 1] - v[j]);
  }
  return out;
}

GcProfile ensemble_average(std::span<const CycleTrace> cycles) {
  if (cycles.empty()) fail(ErrorCode::EmptyInput, "ensemble_average: no cycles");
  std::vector<std::array<double, kGcGridPoints>> grid;
  grid.reserve(cycles.size());
  for (const auto& c : cycles) grid.push_back(resample_to_gc_grid(c));
  GcProfile p;
  p.n_cycles = cycles.size();
  const double n = static_cast<double>(cycles.size());
  for (std::size_t k = 0; k < kGcGridPoints; ++k) {
    // Offsets from the first cycle keep identical cycles exactly zero-spread.
    const double ref = grid.front()[k];
    double s = 0.0;
    for (const auto& g : grid) s += g[k] - ref;
    const double m = ref + s / n;
    double ss = 0.0;
    for (const auto& g : grid) ss += (g[k] - m) * (g[k] - m);
    p.mean[k] = m;
    p.std[k] = std::sqrt(ss / n);
  }
  return p;
}

namespace {
void kv(std::ostringstream& os, const std::string& key, std::optional<double> v) {
  os << key << '=' << (v ? format_double(*v) : std::string("nan")) << '\n';
}
}  // namespace

std::string to_key_value(const MetricReport& r, const std::string& prefix) {
  std::ostringstream os;
  kv(os, prefix + "rmse", r.rmse);
  kv(os, prefix + "nrmse", r.nrmse);
  kv(os, prefix + "nmae", r.nmae);
  kv(os, prefix + "pearson_r", r.pearson_r);
  kv(os, prefix + "r_squared", r.r_squared);
  os << prefix << "n_samples=" << r.n_samples << '\n';
  return os.str();
}

std::string to_key_value(const AggregateReport& r, const std::string& prefix) {
  std::ostringstream os;
  const std::pair<const char*, const MeanStd*> items[] = {
      {"rmse", &r.rmse}, {"nrmse", &r.nrmse}, {"nmae", &r.nmae}, {"pearson_r", &r.pearson_r}, {"r_squared", &r.r_squared}};
  for (const auto& [name, ms] : items) {
    kv(os, prefix + name + ".mean", ms->mean);
    kv(os, prefix + name + ".std", ms->std);
    os << prefix << name << ".n=" << ms->n << '\n';
  }
  return os.str();
}

void write_reports_csv(std::ostream& os, std::span<const std::string> labels,
                       std::span<const MetricReport> reports) {
  if (labels.size() != reports.size()) fail(ErrorCode::ShapeError, "one label per report required");
  os << "label,rmse,nrmse,nmae,pearson_r,r_squared,n_samples\n";
  auto cell = [](std::optional<double> v) { return v ? format_double(*v) : std::string(); };
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    os << labels[i] << ',' << format_double(r.rmse) << ',' << cell(r.nrmse) << ',' << cell(r.nmae) << ','
       << cell(r.pearson_r) << ',' << cell(r.r_squared) << ',' << r.n_samples << '\n';
  }
}

}  // namespace gaitrt
