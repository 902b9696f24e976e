#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "gaitrt/forest.hpp"
#include "oracles/cart_oracle.hpp"

using namespace gaitrt;

namespace {

Matrix mat(std::size_t r, std::size_t c, std::vector<double> v) {
  Matrix m(r, c);
  m.data = std::move(v);
  return m;
}

oracle::Rows rows_of(const Matrix& m) {
  oracle::Rows out;
  for (std::size_t r = 0; r < m.rows; ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
  return out;
}

ForestParams cart_params() {
  ForestParams p;
  p.n_trees = 1;
  p.bootstrap = false;
  p.max_features = -1;
  return p;
}

// True when the flattened tree equals the oracle's pre-order node list.
bool same_as_oracle(const Tree& t, const std::vector<oracle::FlatNode>& ref) {
  if (t.node_count() != ref.size()) return false;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (t.nodes[i].feature != ref[i].feature) return false;
    if (ref[i].feature >= 0 && t.nodes[i].threshold != ref[i].threshold) return false;
    for (std::size_t o = 0; o < t.n_outputs; ++o)
      if (std::abs(t.value[i * t.n_outputs + o] - ref[i].value[o]) > 1e-12) return false;
  }
  return true;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

}  // namespace

TEST_CASE("fit_tree: two distinct points split at the midpoint") {
  auto X = mat(2, 1, {0, 1});
  auto Y = mat(2, 1, {0, 10});
  Rng rng(1);
  Tree t = fit_tree(X, Y, cart_params(), rng);
  REQUIRE(t.node_count() == 3);
  CHECK(t.nodes[0].feature == 0);
  CHECK(t.nodes[0].threshold == 0.5);
  CHECK(t.predict(std::vector<double>{0.0})[0] == 0.0);
  CHECK(t.predict(std::vector<double>{1.0})[0] == 10.0);
}

TEST_CASE("fit_tree: constant targets give a single leaf") {
  auto X = mat(5, 2, {1, 9, 2, 8, 3, 7, 4, 6, 5, 5});
  auto Y = mat(5, 2, {3, -1, 3, -1, 3, -1, 3, -1, 3, -1});
  Rng rng(2);
  Tree t = fit_tree(X, Y, cart_params(), rng);
  CHECK(t.node_count() == 1);
  CHECK(t.value == std::vector<double>{3.0, -1.0});
}

TEST_CASE("fit_tree: errors") {
  Rng rng(3);
  CHECK(code_of([&] { fit_tree(Matrix(0, 2), Matrix(0, 1), cart_params(), rng); }) == ErrorCode::EmptyInput);
  CHECK(code_of([&] { fit_tree(Matrix(3, 2), Matrix(2, 1), cart_params(), rng); }) == ErrorCode::ShapeError);
}

TEST_CASE("fit_tree: 8-row, 2-feature root split matches the exhaustive oracle") {
  auto X = mat(8, 2, {0.3, 5, 1.2, 3, 2.5, 8, 0.9, 1, 3.1, 4, 1.7, 6, 2.2, 2, 0.1, 7});
  auto Y = mat(8, 1, {1, 4, 9, 2, 7, 5, 3, 8});
  Rng rng(4);
  Tree t = fit_tree(X, Y, cart_params(), rng);
  std::vector<oracle::FlatNode> ref;
  oracle::cart_flatten(*oracle::cart_fit(rows_of(X), rows_of(Y)), ref);
  CHECK(t.nodes[0].feature == ref[0].feature);
  CHECK(t.nodes[0].threshold == ref[0].threshold);
  CHECK(same_as_oracle(t, ref));
}

TEST_CASE("fit_tree: ties go to the lowest feature, then the lowest threshold") {
  // Both features separate the targets identically.
  auto X = mat(4, 2, {0, 10, 1, 11, 2, 12, 3, 13});
  auto Y = mat(4, 1, {0, 0, 5, 5});
  Rng rng(5);
  Tree t = fit_tree(X, Y, cart_params(), rng);
  CHECK(t.nodes[0].feature == 0);
  CHECK(t.nodes[0].threshold == 1.5);

  // Symmetric targets: thresholds 0.5 and 2.5 tie on feature 0.
  auto X2 = mat(4, 1, {0, 1, 2, 3});
  auto Y2 = mat(4, 1, {0, 1, 1, 0});
  Tree t2 = fit_tree(X2, Y2, cart_params(), rng);
  CHECK(t2.nodes[0].threshold == 0.5);
}

TEST_CASE("fit_tree: property sweep against exhaustive CART (<=10 rows, <=3 features, <=2 outputs)") {
  Rng gen(20240601);
  int checked = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const std::size_t n = 1 + gen.below(10);
    const std::size_t p = 1 + gen.below(3);
    const std::size_t q = 1 + gen.below(2);
    Matrix X(n, p), Y(n, q);
    for (auto& v : X.data) v = static_cast<double>(gen.below(5)) * 0.5;
    for (auto& v : Y.data) v = static_cast<double>(gen.below(7)) - 3.0;
    ForestParams params = cart_params();
    params.min_samples_leaf = 1 + static_cast<int>(gen.below(2));
    params.min_samples_split = 2 + static_cast<int>(gen.below(2));
    params.max_depth = static_cast<int>(gen.below(4));
    oracle::CartOptions opt{params.min_samples_split, params.min_samples_leaf, params.max_depth};

    std::vector<oracle::FlatNode> ref;
    oracle::cart_flatten(*oracle::cart_fit(rows_of(X), rows_of(Y), opt), ref);
    ForestModel m = fit_forest(X, Y, params, 7);
    INFO("trial " << trial << " n=" << n << " p=" << p << " q=" << q);
    CHECK(same_as_oracle(m.trees[0], ref));
    ++checked;
  }
  CHECK(checked == 400);
}

TEST_CASE("leaf values are the mean of the training rows that reach them") {
  Rng gen(11);
  Matrix X(40, 3), Y(40, 2);
  for (auto& v : X.data) v = gen.uniform();
  for (auto& v : Y.data) v = gen.normal();
  ForestParams p = cart_params();
  p.min_samples_leaf = 4;
  Rng rng(1);
  Tree t = fit_tree(X, Y, p, rng);
  std::vector<std::vector<std::size_t>> members(t.node_count());
  for (std::size_t r = 0; r < X.rows; ++r) members[t.leaf_index(X.row(r))].push_back(r);
  for (std::size_t leaf = 0; leaf < t.node_count(); ++leaf) {
    if (members[leaf].empty()) continue;
    CHECK(members[leaf].size() >= 4);
    for (std::size_t o = 0; o < 2; ++o) {
      double s = 0.0;
      for (auto r : members[leaf]) s += Y(r, o);
      CHECK(t.value[leaf * 2 + o] == doctest::Approx(s / static_cast<double>(members[leaf].size())).epsilon(1e-12));
    }
  }
}

TEST_CASE("fit_forest: one unbootstrapped tree memorizes distinct inputs") {
  Rng gen(12);
  Matrix X(50, 4), Y(50, 3);
  for (auto& v : X.data) v = gen.uniform();
  for (auto& v : Y.data) v = gen.normal();
  ForestParams p;
  p.n_trees = 1;
  p.bootstrap = false;
  auto m = fit_forest(X, Y, p, 99);
  CHECK(predict_forest(m, X) == Y);
}

TEST_CASE("fit_forest: seeded determinism and serial/parallel equality") {
  Rng gen(13);
  Matrix X(200, 6), Y(200, 2);
  for (auto& v : X.data) v = gen.normal();
  for (std::size_t r = 0; r < 200; ++r) {
    Y(r, 0) = std::sin(X(r, 0)) + 0.1 * gen.normal();
    Y(r, 1) = X(r, 1) * X(r, 2);
  }
  ForestParams p;
  p.n_trees = 12;
  auto a = fit_forest(X, Y, p, 42);
  auto b = fit_forest(X, Y, p, 42);
  auto s = fit_forest_serial(X, Y, p, 42);
  CHECK(a == b);
  CHECK(a == s);
  CHECK(predict_forest(a, X) == predict_forest_serial(s, X));
  auto c = fit_forest(X, Y, p, 43);
  CHECK_FALSE(a == c);
}

TEST_CASE("predict_forest: routing, averaging, order invariance and range") {
  auto X = mat(2, 1, {0, 1});
  auto Y = mat(2, 1, {0, 10});
  auto stump = fit_forest(X, Y, cart_params(), 1);
  CHECK(predict_forest(stump, mat(1, 1, {0.7}))(0, 0) == 10.0);

  ForestModel two{cart_params(), 0, 1, 1, {}, {}};
  for (double v : {2.0, 4.0}) {
    Tree leaf;
    leaf.n_outputs = 1;
    leaf.nodes = {TreeNode{}};
    leaf.value = {v};
    two.trees.push_back(leaf);
  }
  CHECK(predict_forest(two, mat(1, 1, {0.0}))(0, 0) == 3.0);
  CHECK(code_of([&] { predict_forest(two, Matrix(1, 2)); }) == ErrorCode::ShapeError);

  Rng gen(14);
  Matrix Xr(150, 5), Yr(150, 2);
  for (auto& v : Xr.data) v = gen.normal();
  for (auto& v : Yr.data) v = 3.0 * gen.normal();
  ForestParams p;
  p.n_trees = 30;
  auto m = fit_forest(Xr, Yr, p, 5);
  Matrix probe(100, 5);
  for (auto& v : probe.data) v = 2.0 * gen.normal();
  const Matrix base = predict_forest(m, probe);
  auto shuffled = m;
  gen.shuffle(shuffled.trees);
  std::reverse(shuffled.trees.begin() + 3, shuffled.trees.end());
  CHECK(predict_forest(shuffled, probe) == base);

  for (std::size_t o = 0; o < 2; ++o) {
    const auto col = Yr.column(o);
    const double lo = *std::min_element(col.begin(), col.end());
    const double hi = *std::max_element(col.begin(), col.end());
    for (std::size_t r = 0; r < probe.rows; ++r) {
      CHECK(base(r, o) >= lo);
      CHECK(base(r, o) <= hi);
    }
  }
}

TEST_CASE("max_features and depth limits") {
  ForestParams p;
  CHECK(p.features_per_split(20) == 7);
  CHECK(p.features_per_split(21) == 7);
  CHECK(p.features_per_split(40) == 14);
  CHECK(p.features_per_split(1) == 1);
  CHECK(p.features_per_split(2) == 1);
  p.max_features = -1;
  CHECK(p.features_per_split(9) == 9);

  Rng gen(15);
  Matrix X(300, 3), Y(300, 1);
  for (auto& v : X.data) v = gen.uniform();
  for (auto& v : Y.data) v = gen.normal();
  ForestParams shallow = cart_params();
  shallow.max_depth = 3;
  Rng rng(1);
  CHECK(fit_tree(X, Y, shallow, rng).depth() == 3);
}

TEST_CASE("forest serialization round-trips bit-exactly") {
  Rng gen(16);
  Matrix X(120, 4), Y(120, 3);
  for (auto& v : X.data) v = gen.normal();
  for (auto& v : Y.data) v = gen.normal();
  ForestParams p;
  p.n_trees = 8;
  p.max_depth = 12;
  auto m = fit_forest(X, Y, p, 77);
  m.input_scaler = {{0.1, 0.2, 0.3, 0.4}, {1.5, 2.5, 3.5, 1.0 / 3.0}};
  std::stringstream ss;
  write_forest(ss, m);
  auto back = read_forest(ss);
  CHECK(back == m);
  CHECK(predict_forest(back, X) == predict_forest(m, X));

  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK(code_of([&] { read_forest(truncated); }) == ErrorCode::FormatError);
  std::stringstream garbage("not a model");
  CHECK(code_of([&] { read_forest(garbage); }) == ErrorCode::FormatError);
}
