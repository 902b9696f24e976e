#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gaitrt/common.hpp"

namespace gaitrt {

// Each throws EmptyInput on empty input and ShapeError on a length mismatch.
double rmse(std::span<const double> y_true, std::span<const double> y_pred);
// Percent of the y_true range; RangeError when that range is zero.
double nrmse(std::span<const double> y_true, std::span<const double> y_pred);
double nmae(std::span<const double> y_true, std::span<const double> y_pred);
// Sample Pearson correlation; CorrelationUndefined when either series is constant.
double pearson_r(std::span<const double> a, std::span<const double> b);
// 1 - SSres/SStot; RangeError when y_true is constant.
double r_squared(std::span<const double> y_true, std::span<const double> y_pred);

/// Metrics that are undefined for the given data are left empty.
struct MetricReport {
  double rmse = 0.0;
  std::optional<double> nrmse;
  std::optional<double> nmae;
  std::optional<double> pearson_r;
  std::optional<double> r_squared;
  std::size_t n_samples = 0;
};

MetricReport compute_report(std::span<const double> y_true, std::span<const double> y_pred);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

/// Sample (N-1) standard deviation across reports; a metric missing from a
/// report is skipped for that report.
struct AggregateReport {
  MeanStd rmse, nrmse, nmae, pearson_r, r_squared;
};

AggregateReport fold_aggregate(std::span<const MetricReport> reports);

inline constexpr std::size_t kGcGridPoints = 101;

/// One stride of one variable: values sampled at increasing GC% in [0, 100].
struct CycleTrace {
  std::vector<double> gc_percent;
  std::vector<double> values;
};

/// Pointwise mean and population standard deviation on the 0..100 GC% grid.
struct GcProfile {
  std::array<double, kGcGridPoints> mean{};
  std::array<double, kGcGridPoints> std{};
  std::size_t n_cycles = 0;
};

/// Linear interpolation onto the grid; grid points outside a trace's GC%
/// span take the nearest end value.
std::array<double, kGcGridPoints> resample_to_gc_grid(const CycleTrace& trace);
GcProfile ensemble_average(std::span<const CycleTrace> cycles);

std::string to_key_value(const MetricReport& r, const std::string& prefix = "");
std::string to_key_value(const AggregateReport& r, const std::string& prefix = "");

/// CSV with one row per labelled report; undefined metrics are left blank.
void write_reports_csv(std::ostream& os, std::span<const std::string> labels,
                       std::span<const MetricReport> reports);

}  // namespace gaitrt
