#pragma once

// Exhaustive CART reference: every (feature, threshold) pair is scored by the
// children's summed squared error computed from scratch.

#include <algorithm>
#include <cstddef>
#include <memory>
#include <vector>

namespace oracle {

struct CartNode {
  int feature = -1;
  double threshold = 0.0;
  std::vector<double> value;
  std::unique_ptr<CartNode> left, right;
};

struct CartOptions {
  int min_samples_split = 2;
  int min_samples_leaf = 1;
  int max_depth = 0;
};

using Rows = std::vector<std::vector<double>>;

inline std::vector<double> mean_of(const Rows& Y, const std::vector<std::size_t>& idx) {
  std::vector<double> m(Y[0].size(), 0.0);
  for (auto i : idx)
    for (std::size_t o = 0; o < m.size(); ++o) m[o] += Y[i][o];
  for (auto& v : m) v /= static_cast<double>(idx.size());
  return m;
}

inline double sse_of(const Rows& Y, const std::vector<std::size_t>& idx) {
  if (idx.empty()) return 0.0;
  const auto m = mean_of(Y, idx);
  double s = 0.0;
  for (auto i : idx)
    for (std::size_t o = 0; o < m.size(); ++o) s += (Y[i][o] - m[o]) * (Y[i][o] - m[o]);
  return s;
}

inline std::unique_ptr<CartNode> cart_grow(const Rows& X, const Rows& Y, const std::vector<std::size_t>& idx,
                                           const CartOptions& opt, int depth = 0) {
  auto node = std::make_unique<CartNode>();
  node->value = mean_of(Y, idx);
  bool pure = true;
  for (auto i : idx)
    if (Y[i] != Y[idx[0]]) pure = false;
  if (pure || static_cast<int>(idx.size()) < opt.min_samples_split) return node;
  if (opt.max_depth > 0 && depth >= opt.max_depth) return node;

  const double parent = sse_of(Y, idx);
  const double tol = 1e-10 * parent;
  int best_f = -1;
  double best_t = 0.0, best_sse = 0.0;
  for (std::size_t f = 0; f < X[0].size(); ++f) {
    std::vector<double> u;
    for (auto i : idx) u.push_back(X[i][f]);
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    for (std::size_t k = 0; k + 1 < u.size(); ++k) {
      double t = (u[k] + u[k + 1]) * 0.5;
      if (!(t < u[k + 1])) t = u[k];
      std::vector<std::size_t> l, r;
      for (auto i : idx) (X[i][f] <= t ? l : r).push_back(i);
      if (static_cast<int>(l.size()) < opt.min_samples_leaf || static_cast<int>(r.size()) < opt.min_samples_leaf)
        continue;
      const double s = sse_of(Y, l) + sse_of(Y, r);
      if (best_f < 0 || s < best_sse - tol) {
        best_f = static_cast<int>(f);
        best_t = t;
        best_sse = s;
      }
    }
  }
  if (best_f < 0 || !(parent - best_sse > tol)) return node;
  node->feature = best_f;
  node->threshold = best_t;
  std::vector<std::size_t> l, r;
  for (auto i : idx) (X[i][static_cast<std::size_t>(best_f)] <= best_t ? l : r).push_back(i);
  node->left = cart_grow(X, Y, l, opt, depth + 1);
  node->right = cart_grow(X, Y, r, opt, depth + 1);
  return node;
}

inline std::unique_ptr<CartNode> cart_fit(const Rows& X, const Rows& Y, const CartOptions& opt = {}) {
  std::vector<std::size_t> idx(X.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return cart_grow(X, Y, idx, opt);
}

// Pre-order flattening: (feature, threshold, value) per node.
struct FlatNode {
  int feature;
  double threshold;
  std::vector<double> value;
};

inline void cart_flatten(const CartNode& n, std::vector<FlatNode>& out) {
  out.push_back({n.feature, n.feature >= 0 ? n.threshold : 0.0, n.value});
  if (n.feature >= 0) {
    cart_flatten(*n.left, out);
    cart_flatten(*n.right, out);
  }
}

}  // namespace oracle
