#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "gaitrt/common.hpp"
#include "gaitrt/signal.hpp"

namespace gaitrt {

struct ForestParams {
  int n_trees = 100;
  int max_depth = 0;          // 0: unlimited
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  int max_features = 0;       // 0: ceil(n_features / 3); negative: all features
  bool bootstrap = true;

  int features_per_split(std::size_t n_features) const;
  bool operator==(const ForestParams&) const = default;
};

/// Internal node when feature >= 0: x[feature] <= threshold routes to the
/// next node in pre-order, otherwise to `right`.
struct TreeNode {
  double threshold = 0.0;
  std::int32_t feature = -1;
  std::int32_t right = -1;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

/// Regression tree flattened in pre-order. Every node keeps the per-output
/// mean of the training targets that reached it.
struct Tree {
  std::size_t n_outputs = 0;
  std::vector<TreeNode> nodes;
  std::vector<double> value;  // node_count * n_outputs

  std::size_t node_count() const { return nodes.size(); }
  static std::size_t left_of(std::size_t i) { return i + 1; }
  std::size_t leaf_index(std::span<const double> x) const;
  std::span<const double> predict(std::span<const double> x) const;
  int depth() const;

  bool operator==(const Tree&) const = default;
};

struct ForestModel {
  ForestParams params;
  std::uint64_t seed = 0;
  std::size_t n_features = 0;
  std::size_t n_outputs = 0;
  std::vector<Tree> trees;
  StandardScaler input_scaler;  // applied by the caller; empty when unused

  bool operator==(const ForestModel&) const = default;
};

/// Grows one CART regression tree on rows `sample` of (X, Y), all rows when
/// `sample` is empty. Split candidates are midpoints between consecutive
/// distinct values; the impurity is the summed per-output variance. Ties go
/// to the lowest feature index, then the lowest threshold.
Tree fit_tree(const Matrix& X, const Matrix& Y, const ForestParams& params, Rng& rng,
              std::span<const std::size_t> sample = {});

/// Tree-parallel (OpenMP) training. Tree t draws from substream t of `seed`,
/// so the result is bit-identical to fit_forest_serial.
ForestModel fit_forest(const Matrix& X, const Matrix& Y, const ForestParams& params, std::uint64_t seed);
ForestModel fit_forest_serial(const Matrix& X, const Matrix& Y, const ForestParams& params,
                              std::uint64_t seed);

/// Row-parallel (OpenMP) prediction; the reference below runs one row at a
/// time. Tree outputs are summed in sorted order so the mean does not depend
/// on tree order.
Matrix predict_forest(const ForestModel& model, const Matrix& X);
Matrix predict_forest_serial(const ForestModel& model, const Matrix& X);
void predict_row(const ForestModel& model, std::span<const double> x, std::span<double> out,
                 std::vector<double>& scratch);

void write_forest(std::ostream& os, const ForestModel& model);
ForestModel read_forest(std::istream& is);

}  // namespace gaitrt
