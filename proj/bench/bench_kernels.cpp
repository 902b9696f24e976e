#include <benchmark/benchmark.h>

#include "gaitrt/forest.hpp"

using namespace gaitrt;

namespace {

struct Data {
  Matrix X, Y;
};

Data make_data(std::size_t n, std::size_t p, std::size_t q) {
  Rng rng(1);
  Data d{Matrix(n, p), Matrix(n, q)};
  for (auto& v : d.X.data) v = rng.normal();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t o = 0; o < q; ++o) d.Y(r, o) = d.X(r, o % p) * d.X(r, (o + 1) % p) + 0.1 * rng.normal();
  return d;
}

ForestParams bench_params() {
  ForestParams p;
  p.n_trees = 8;
  return p;
}

void BM_ForestFitSerial(benchmark::State& st) {
  const auto d = make_data(static_cast<std::size_t>(st.range(0)), 20, 1);
  for (auto _ : st) benchmark::DoNotOptimize(fit_forest_serial(d.X, d.Y, bench_params(), 3));
}

void BM_ForestFitOpenMP(benchmark::State& st) {
  const auto d = make_data(static_cast<std::size_t>(st.range(0)), 20, 1);
  for (auto _ : st) benchmark::DoNotOptimize(fit_forest(d.X, d.Y, bench_params(), 3));
}

void BM_ForestPredictSerial(benchmark::State& st) {
  const auto d = make_data(4000, 20, 5);
  ForestParams p;
  p.n_trees = 50;
  const auto m = fit_forest(d.X, d.Y, p, 3);
  for (auto _ : st) benchmark::DoNotOptimize(predict_forest_serial(m, d.X));
}

void BM_ForestPredictOpenMP(benchmark::State& st) {
  const auto d = make_data(4000, 20, 5);
  ForestParams p;
  p.n_trees = 50;
  const auto m = fit_forest(d.X, d.Y, p, 3);
  for (auto _ : st) benchmark::DoNotOptimize(predict_forest(m, d.X));
}

// Single-row latency for a 200-tree forest.
void BM_ForestPredictRow200(benchmark::State& st) {
  const auto d = make_data(5000, 20, 1);
  ForestParams p;
  p.n_trees = 200;
  const auto m = fit_forest(d.X, d.Y, p, 3);
  std::vector<double> out(1), scratch;
  std::size_t r = 0;
  for (auto _ : st) {
    predict_row(m, d.X.row(r), out, scratch);
    benchmark::DoNotOptimize(out.data());
    r = (r + 1) % d.X.rows;
  }
}

}  // namespace

BENCHMARK(BM_ForestFitSerial)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForestFitOpenMP)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForestPredictSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForestPredictOpenMP)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ForestPredictRow200)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
