#include "gaitrt/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gaitrt/binary_io.hpp"

namespace gaitrt {

namespace {

constexpr char kMagic[5] = "GRTF";
constexpr std::uint32_t kVersion = 1;

// Relative tolerance on impurity decreases, scaled by the node's SSE.
constexpr double kTieTolerance = 1e-10;

void check_training_shapes(const Matrix& X, const Matrix& Y) {
  if (X.rows == 0) fail(ErrorCode::EmptyInput, "forest: no training rows");
  if (X.rows != Y.rows) fail(ErrorCode::ShapeError, "forest: X and Y row counts differ");
  if (X.cols == 0 || Y.cols == 0) fail(ErrorCode::ShapeError, "forest: X and Y need at least one column");
  if (X.data.size() != X.rows * X.cols || Y.data.size() != Y.rows * Y.cols)
    fail(ErrorCode::ShapeError, "forest: matrix storage does not match its shape");
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double decrease = 0.0;
  std::size_t n_left = 0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, const Matrix& Y, const ForestParams& p, Rng& rng)
      : X_(X), Y_(Y), p_(p), rng_(rng), n_out_(Y.cols), mtry_(p.features_per_split(X.cols)) {
    order_.resize(X.cols);
    mean_.resize(n_out_);
    total_.resize(n_out_);
    left_sum_.resize(n_out_);
  }

  Tree build(std::vector<std::size_t> rows) {
    tree_ = Tree{};
    tree_.n_outputs = n_out_;
    rows_ = std::move(rows);

    struct Work {
      std::size_t begin, end;
      int depth;
      std::int32_t parent;
      bool is_left;
    };
    // Right child pushed first: the left child is always the next node.
    std::vector<Work> stack{{0, rows_.size(), 0, -1, false}};
    while (!stack.empty()) {
      const Work w = stack.back();
      stack.pop_back();
      const auto id = static_cast<std::int32_t>(tree_.node_count());
      if (w.parent >= 0 && !w.is_left) tree_.nodes[static_cast<std::size_t>(w.parent)].right = id;

      const double sse = node_stats(w.begin, w.end);
      tree_.nodes.push_back(TreeNode{});
      tree_.value.insert(tree_.value.end(), mean_.begin(), mean_.end());

      const std::size_t n = w.end - w.begin;
      if (n < static_cast<std::size_t>(std::max(p_.min_samples_split, 2))) continue;
      if (p_.max_depth > 0 && w.depth >= p_.max_depth) continue;
      if (pure(w.begin, w.end)) continue;

      const Split s = best_split(w.begin, w.end, sse);
      if (s.feature < 0) continue;

      const auto f = static_cast<std::size_t>(s.feature);
      auto mid = std::stable_partition(rows_.begin() + static_cast<std::ptrdiff_t>(w.begin),
                                       rows_.begin() + static_cast<std::ptrdiff_t>(w.end),
                                       [&](std::size_t r) { return X_(r, f) <= s.threshold; });
      const auto split_at = static_cast<std::size_t>(mid - rows_.begin());
      tree_.nodes[static_cast<std::size_t>(id)].feature = s.feature;
      tree_.nodes[static_cast<std::size_t>(id)].threshold = s.threshold;
      stack.push_back({split_at, w.end, w.depth + 1, id, false});
      stack.push_back({w.begin, split_at, w.depth + 1, id, true});
    }
    return std::move(tree_);
  }

 private:
  // Fills mean_ and returns the node's summed SSE (two-pass).
  double node_stats(std::size_t b, std::size_t e) {
    const double n = static_cast<double>(e - b);
    std::fill(mean_.begin(), mean_.end(), 0.0);
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t o = 0; o < n_out_; ++o) mean_[o] += Y_(rows_[i], o);
    for (auto& m : mean_) m /= n;
    double sse = 0.0;
    for (std::size_t i = b; i < e; ++i)
      for (std::size_t o = 0; o < n_out_; ++o) {
        const double d = Y_(rows_[i], o) - mean_[o];
        sse += d * d;
      }
    return sse;
  }

  bool pure(std::size_t b, std::size_t e) const {
    const std::size_t r0 = rows_[b];
    for (std::size_t i = b + 1; i < e; ++i)
      for (std::size_t o = 0; o < n_out_; ++o)
        if (Y_(rows_[i], o) != Y_(r0, o)) return false;
    return true;
  }

  Split best_split(std::size_t b, std::size_t e, double sse) {
    const std::size_t n = e - b;
    const std::size_t p = X_.cols;
    const auto min_leaf = static_cast<std::size_t>(std::max(p_.min_samples_leaf, 1));

    // Targets centred on the node mean, laid out [local row][output].
    centred_.resize(n * n_out_);
    std::fill(total_.begin(), total_.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < n_out_; ++o) {
        const double c = Y_(rows_[b + i], o) - mean_[o];
        centred_[i * n_out_ + o] = c;
        total_[o] += c;
      }
    double parent_proxy = 0.0;
    for (std::size_t o = 0; o < n_out_; ++o) parent_proxy += total_[o] * total_[o] / static_cast<double>(n);

    const double tol = kTieTolerance * sse;
    Split best;
    best.decrease = tol;  // a split must beat this to be taken

    std::iota(order_.begin(), order_.end(), std::size_t{0});
    const bool sample_features = static_cast<std::size_t>(mtry_) < p;
    std::size_t evaluated = 0;
    for (std::size_t k = 0; k < p && evaluated < static_cast<std::size_t>(mtry_); ++k) {
      if (sample_features) {
        const std::size_t j = k + static_cast<std::size_t>(rng_.below(p - k));
        std::swap(order_[k], order_[j]);
      }
      const std::size_t f = order_[k];

      sorted_.resize(n);
      for (std::size_t i = 0; i < n; ++i) sorted_[i] = {X_(rows_[b + i], f), static_cast<std::uint32_t>(i)};
      std::sort(sorted_.begin(), sorted_.end());
      if (sorted_.front().first == sorted_.back().first) continue;  // constant: not counted
      ++evaluated;

      std::fill(left_sum_.begin(), left_sum_.end(), 0.0);
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double* c = &centred_[sorted_[i].second * n_out_];
        for (std::size_t o = 0; o < n_out_; ++o) left_sum_[o] += c[o];
        const double a = sorted_[i].first;
        const double z = sorted_[i + 1].first;
        if (a == z) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        double proxy = 0.0;
        for (std::size_t o = 0; o < n_out_; ++o) {
          const double sr = total_[o] - left_sum_[o];
          proxy += left_sum_[o] * left_sum_[o] / static_cast<double>(nl) + sr * sr / static_cast<double>(nr);
        }
        const double decrease = proxy - parent_proxy;
        double thr = (a + z) * 0.5;
        if (!(thr < z)) thr = a;
        const bool better = decrease > best.decrease + tol ||
                            (best.feature >= 0 && std::abs(decrease - best.decrease) <= tol &&
                             (static_cast<int>(f) < best.feature ||
                              (static_cast<int>(f) == best.feature && thr < best.threshold)));
        if (better || (best.feature < 0 && decrease > tol)) {
          best = {static_cast<int>(f), thr, decrease, nl};
        }
      }
    }
    return best;
  }

  const Matrix& X_;
  const Matrix& Y_;
  const ForestParams& p_;
  Rng& rng_;
  std::size_t n_out_;
  int mtry_;
  Tree tree_;
  std::vector<std::size_t> rows_;
  std::vector<std::size_t> order_;
  std::vector<double> mean_, total_, left_sum_, centred_;
  std::vector<std::pair<double, std::uint32_t>> sorted_;
};

Tree fit_one(const Matrix& X, const Matrix& Y, const ForestParams& params, std::uint64_t seed, int t) {
  Rng rng(substream_seed(seed, static_cast<std::uint64_t>(t)));
  std::vector<std::size_t> sample(X.rows);
  if (params.bootstrap) {
    for (auto& s : sample) s = static_cast<std::size_t>(rng.below(X.rows));
  } else {
    std::iota(sample.begin(), sample.end(), std::size_t{0});
  }
  TreeBuilder builder(X, Y, params, rng);
  return builder.build(std::move(sample));
}

void check_params(const ForestParams& p) {
  if (p.n_trees < 1) fail(ErrorCode::RangeError, "forest: n_trees must be >= 1");
  if (p.min_samples_leaf < 1 || p.min_samples_split < 2)
    fail(ErrorCode::RangeError, "forest: min_samples_leaf >= 1 and min_samples_split >= 2 required");
  if (p.max_depth < 0) fail(ErrorCode::RangeError, "forest: max_depth must be >= 0");
}

}  // namespace

int ForestParams::features_per_split(std::size_t n_features) const {
  const int p = static_cast<int>(n_features);
  if (max_features < 0) return p;
  if (max_features == 0) return std::max(1, (p + 2) / 3);
  return std::min(max_features, p);
}

std::size_t Tree::leaf_index(std::span<const double> x) const {
  const TreeNode* n = nodes.data();
  std::size_t i = 0;
  while (n[i].feature >= 0)
    i = x[static_cast<std::size_t>(n[i].feature)] <= n[i].threshold ? i + 1 : static_cast<std::size_t>(n[i].right);
  return i;
}

std::span<const double> Tree::predict(std::span<const double> x) const {
  return {value.data() + leaf_index(x) * n_outputs, n_outputs};
}

int Tree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<int> d(node_count(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < node_count(); ++i) {
    deepest = std::max(deepest, d[i]);
    if (!nodes[i].is_leaf()) {
      d[left_of(i)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return deepest;
}

Tree fit_tree(const Matrix& X, const Matrix& Y, const ForestParams& params, Rng& rng,
              std::span<const std::size_t> sample) {
  check_training_shapes(X, Y);
  check_params(params);
  std::vector<std::size_t> rows;
  if (sample.empty()) {
    rows.resize(X.rows);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  } else {
    rows.assign(sample.begin(), sample.end());
    for (auto r : rows)
      if (r >= X.rows) fail(ErrorCode::ShapeError, "fit_tree: sample index out of range");
  }
  TreeBuilder builder(X, Y, params, rng);
  return builder.build(std::move(rows));
}

ForestModel fit_forest_serial(const Matrix& X, const Matrix& Y, const ForestParams& params,
                              std::uint64_t seed) {
  check_training_shapes(X, Y);
  check_params(params);
  ForestModel m{params, seed, X.cols, Y.cols, {}, {}};
  m.trees.resize(static_cast<std::size_t>(params.n_trees));
  for (int t = 0; t < params.n_trees; ++t) m.trees[static_cast<std::size_t>(t)] = fit_one(X, Y, params, seed, t);
  return m;
}

ForestModel fit_forest(const Matrix& X, const Matrix& Y, const ForestParams& params, std::uint64_t seed) {
  check_training_shapes(X, Y);
  check_params(params);
  ForestModel m{params, seed, X.cols, Y.cols, {}, {}};
  m.trees.resize(static_cast<std::size_t>(params.n_trees));
#pragma omp parallel for schedule(dynamic, 1)
  for (int t = 0; t < params.n_trees; ++t) m.trees[static_cast<std::size_t>(t)] = fit_one(X, Y, params, seed, t);
  return m;
}

void predict_row(const ForestModel& model, std::span<const double> x, std::span<double> out,
                 std::vector<double>& scratch) {
  const std::size_t nt = model.trees.size();
  const std::size_t no = model.n_outputs;
  scratch.resize(nt * no);
  for (std::size_t t = 0; t < nt; ++t) {
    const auto v = model.trees[t].predict(x);
    for (std::size_t o = 0; o < no; ++o) scratch[o * nt + t] = v[o];
  }
  for (std::size_t o = 0; o < no; ++o) {
    auto first = scratch.begin() + static_cast<std::ptrdiff_t>(o * nt);
    auto last = first + static_cast<std::ptrdiff_t>(nt);
    std::sort(first, last);
    double sum = 0.0;
    for (auto it = first; it != last; ++it) sum += *it;
    out[o] = sum / static_cast<double>(nt);
  }
}

namespace {
void check_predict_shapes(const ForestModel& model, const Matrix& X) {
  if (X.cols != model.n_features)
    fail(ErrorCode::ShapeError, "predict_forest: expected " + std::to_string(model.n_features) +
                                    " features, got " + std::to_string(X.cols));
  if (model.trees.empty()) fail(ErrorCode::ModelMismatch, "predict_forest: model has no trees");
}
}  // namespace

Matrix predict_forest_serial(const ForestModel& model, const Matrix& X) {
  check_predict_shapes(model, X);
  Matrix out(X.rows, model.n_outputs);
  std::vector<double> scratch;
  for (std::size_t r = 0; r < X.rows; ++r) predict_row(model, X.row(r), out.row(r), scratch);
  return out;
}

Matrix predict_forest(const ForestModel& model, const Matrix& X) {
  check_predict_shapes(model, X);
  Matrix out(X.rows, model.n_outputs);
  const auto n = static_cast<std::ptrdiff_t>(X.rows);
#pragma omp parallel
  {
    std::vector<double> scratch;
#pragma omp for schedule(static)
    for (std::ptrdiff_t r = 0; r < n; ++r)
      predict_row(model, X.row(static_cast<std::size_t>(r)), out.row(static_cast<std::size_t>(r)), scratch);
  }
  return out;
}

void write_forest(std::ostream& os, const ForestModel& m) {
  bin::put_magic(os, kMagic, kVersion);
  const auto& p = m.params;
  for (int v : {p.n_trees, p.max_depth, p.min_samples_split, p.min_samples_leaf, p.max_features})
    bin::put<std::int32_t>(os, v);
  bin::put<std::uint8_t>(os, p.bootstrap ? 1 : 0);
  bin::put<std::uint64_t>(os, m.seed);
  bin::put<std::uint64_t>(os, m.n_features);
  bin::put<std::uint64_t>(os, m.n_outputs);
  bin::put_vec(os, m.input_scaler.mean);
  bin::put_vec(os, m.input_scaler.stddev);
  bin::put<std::uint64_t>(os, m.trees.size());
  for (const auto& t : m.trees) {
    bin::put<std::uint64_t>(os, t.n_outputs);
    bin::put<std::uint64_t>(os, t.nodes.size());
    for (const auto& n : t.nodes) {
      bin::put<double>(os, n.threshold);
      bin::put<std::int32_t>(os, n.feature);
      bin::put<std::int32_t>(os, n.right);
    }
    bin::put_vec(os, t.value);
  }
}

ForestModel read_forest(std::istream& is) {
  const auto version = bin::expect_magic(is, kMagic);
  if (version != kVersion) fail(ErrorCode::FormatError, "unsupported forest version " + std::to_string(version));
  ForestModel m;
  auto& p = m.params;
  p.n_trees = bin::get<std::int32_t>(is);
  p.max_depth = bin::get<std::int32_t>(is);
  p.min_samples_split = bin::get<std::int32_t>(is);
  p.min_samples_leaf = bin::get<std::int32_t>(is);
  p.max_features = bin::get<std::int32_t>(is);
  p.bootstrap = bin::get<std::uint8_t>(is) != 0;
  m.seed = bin::get<std::uint64_t>(is);
  m.n_features = bin::get<std::uint64_t>(is);
  m.n_outputs = bin::get<std::uint64_t>(is);
  m.input_scaler.mean = bin::get_vec<double>(is);
  m.input_scaler.stddev = bin::get_vec<double>(is);
  const auto nt = bin::get<std::uint64_t>(is);
  if (nt > 100000) fail(ErrorCode::FormatError, "implausible tree count");
  m.trees.resize(nt);
  for (auto& t : m.trees) {
    t.n_outputs = bin::get<std::uint64_t>(is);
    const auto n = bin::get<std::uint64_t>(is);
    if (n == 0 || n > (1ull << 31)) fail(ErrorCode::FormatError, "implausible node count");
    t.nodes.resize(n);
    for (auto& node : t.nodes) {
      node.threshold = bin::get<double>(is);
      node.feature = bin::get<std::int32_t>(is);
      node.right = bin::get<std::int32_t>(is);
    }
    t.value = bin::get_vec<double>(is);
    if (t.value.size() != n * t.n_outputs || t.n_outputs != m.n_outputs)
      fail(ErrorCode::FormatError, "inconsistent tree arrays");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& node = t.nodes[i];
      if (node.is_leaf()) continue;
      if (static_cast<std::size_t>(node.feature) >= m.n_features || i + 1 >= n ||
          node.right <= static_cast<std::int32_t>(i + 1) || static_cast<std::uint64_t>(node.right) >= n)
        fail(ErrorCode::FormatError, "corrupt tree links");
    }
  }
  return m;
}

}  // namespace gaitrt
