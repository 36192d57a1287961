#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "hybridguard/classifiers.hpp"

using namespace hybridguard;
using namespace hybridguard::classifiers;
namespace fs = std::filesystem;

namespace {

struct Toy {
  Matrix x;
  Labels y;
};

// Isotropic Gaussian blobs, `per_class` rows each, interleaved by class.
Toy blobs(const std::vector<std::vector<double>>& means, std::size_t per_class, double sd, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  const auto d = static_cast<Eigen::Index>(means[0].size());
  Toy t;
  t.x.resize(static_cast<Eigen::Index>(per_class * means.size()), d);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < means.size(); ++c, ++r) {
      for (Eigen::Index j = 0; j < d; ++j) t.x(r, j) = means[c][static_cast<std::size_t>(j)] + n(rng);
      t.y.push_back(static_cast<Label>(c));
    }
  return t;
}

double accuracy(const Labels& a, const Labels& b) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ok += a[i] == b[i];
  return static_cast<double>(ok) / static_cast<double>(a.size());
}

ClassifierSpec spec(Kind k, json hp = json::object(), std::uint64_t seed = 1) {
  ClassifierSpec s;
  s.kind = k;
  s.hyperparameters = std::move(hp);
  s.seed = seed;
  return s;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("hg_classifiers_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TreeNode leaf(std::vector<std::uint32_t> counts) {
  TreeNode n;
  n.counts = std::move(counts);
  return n;
}

// Lowest weighted child Gini over every feature and midpoint threshold.
double exhaustive_best_gini(const Matrix& x, const Labels& y, std::size_t classes) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    std::vector<double> vals;
    for (Eigen::Index i = 0; i < x.rows(); ++i) vals.push_back(x(i, f));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      const double thr = (vals[k] + vals[k + 1]) / 2.0;
      std::vector<std::uint32_t> l(classes, 0), r(classes, 0);
      for (Eigen::Index i = 0; i < x.rows(); ++i) ++(x(i, f) <= thr ? l : r)[static_cast<std::size_t>(y[static_cast<std::size_t>(i)])];
      double nl = 0, nr = 0;
      for (auto c : l) nl += c;
      for (auto c : r) nr += c;
      best = std::min(best, (nl * gini(l) + nr * gini(r)) / (nl + nr));
    }
  }
  return best;
}

}  // namespace

TEST(GaussianNb, SeparatedBlobsFollowBisector) {
  const auto t = blobs({{0, 0}, {10, 10}}, 200, 1.0, 3);
  const auto clf = fit(spec(Kind::gaussian_nb), t.x, t.y, 2);
  Matrix q(2, 2);
  q << 1, 1, 9, 9;
  EXPECT_EQ(clf.predict(q), (Labels{0, 1}));
}

TEST(GaussianNb, TrainingMeansMapToTheirClass) {
  const auto t = blobs({{0, 0, 0}, {3, -1, 2}, {-2, 4, 1}}, 100, 1.0, 4);
  const auto clf = fit(spec(Kind::gaussian_nb), t.x, t.y, 3);
  const auto st = clf.model().state();
  Matrix means(3, 3);
  for (int c = 0; c < 3; ++c)
    for (int j = 0; j < 3; ++j) means(c, j) = st["means"][c][j].get<double>();
  EXPECT_EQ(clf.predict(means), (Labels{0, 1, 2}));
}

TEST(GaussianNb, PosteriorMatchesClosedForm) {
  const auto t = blobs({{0, 0}, {2, 1}}, 50, 1.0, 5);
  const auto clf = fit(spec(Kind::gaussian_nb, {{"var_smoothing", 0.0}}), t.x, t.y, 2);
  // Oracle: per-class population moments and equal priors.
  std::vector<std::array<double, 2>> mu(2, {0, 0}), var(2, {0, 0});
  for (std::size_t i = 0; i < t.y.size(); ++i)
    for (int j = 0; j < 2; ++j) mu[static_cast<std::size_t>(t.y[i])][j] += t.x(static_cast<Eigen::Index>(i), j) / 50.0;
  for (std::size_t i = 0; i < t.y.size(); ++i)
    for (int j = 0; j < 2; ++j) {
      const double dv = t.x(static_cast<Eigen::Index>(i), j) - mu[static_cast<std::size_t>(t.y[i])][j];
      var[static_cast<std::size_t>(t.y[i])][j] += dv * dv / 50.0;
    }
  const double q[2] = {0.7, 0.4};
  double lj[2];
  for (int c = 0; c < 2; ++c) {
    lj[c] = std::log(0.5);
    for (int j = 0; j < 2; ++j)
      lj[c] += -0.5 * std::log(2 * M_PI * var[c][j]) - 0.5 * (q[j] - mu[c][j]) * (q[j] - mu[c][j]) / var[c][j];
  }
  const double p1 = 1.0 / (1.0 + std::exp(lj[0] - lj[1]));
  Matrix row(1, 2);
  row << q[0], q[1];
  EXPECT_NEAR(clf.predict_proba(row)(0, 1), p1, 1e-12);
}

TEST(GaussianNb, FarPointStillNormalized) {
  const auto t = blobs({{0, 0}, {1, 1}}, 30, 0.5, 6);
  const auto clf = fit(spec(Kind::gaussian_nb), t.x, t.y, 2);
  Matrix far(1, 2);
  far << 1e4, -1e4;
  EXPECT_NEAR(clf.predict_proba(far).row(0).sum(), 1.0, 1e-9);
}

TEST(DecisionTree, OneSplitSeparatesLine) {
  Matrix x(4, 1);
  x << 0, 1, 10, 11;
  const Labels y{0, 0, 1, 1};
  const auto clf = fit(spec(Kind::decision_tree), x, y, 2);
  EXPECT_EQ(clf.predict(x), y);
  const auto& tree = static_cast<const DecisionTreeModel&>(clf.model());
  EXPECT_EQ(tree.nodes().size(), 3u);
  EXPECT_DOUBLE_EQ(tree.nodes()[0].threshold, 5.5);
}

TEST(DecisionTree, RootSplitIsExhaustiveGiniMinimum) {
  Rng rng = make_rng(99);
  std::uniform_int_distribution<int> nrows(2, 8), nfeat(1, 3), val(0, 5), cls(0, 2);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int n = nrows(rng), d = nfeat(rng);
    Matrix x(n, d);
    Labels y;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) x(i, j) = val(rng);
      y.push_back(cls(rng));
    }
    const double oracle = exhaustive_best_gini(x, y, 3);
    const auto clf = fit(spec(Kind::decision_tree, {{"max_depth", 1}}), x, y, 3);
    const auto& nodes = static_cast<const DecisionTreeModel&>(clf.model()).nodes();
    const bool pure = std::count_if(nodes[0].counts.begin(), nodes[0].counts.end(), [](auto c) { return c > 0; }) <= 1;
    if (pure || !std::isfinite(oracle)) {
      EXPECT_TRUE(nodes[0].is_leaf());
      continue;
    }
    ASSERT_FALSE(nodes[0].is_leaf()) << "trial " << trial;
    const auto& l = nodes[static_cast<std::size_t>(nodes[0].left)].counts;
    const auto& r = nodes[static_cast<std::size_t>(nodes[0].right)].counts;
    double nl = 0, nr = 0;
    for (auto c : l) nl += c;
    for (auto c : r) nr += c;
    EXPECT_NEAR((nl * gini(l) + nr * gini(r)) / (nl + nr), oracle, 1e-12) << "trial " << trial;
    ++checked;
  }
  EXPECT_GT(checked, 100);
}

TEST(DecisionTree, DepthCapAndPurity) {
  const auto t = blobs({{0, 0}, {1, 0}, {0, 1}}, 40, 0.6, 7);
  const auto full = fit(spec(Kind::decision_tree), t.x, t.y, 3);
  EXPECT_EQ(accuracy(full.predict(t.x), t.y), 1.0);
  const auto stump = fit(spec(Kind::decision_tree, {{"max_depth", 1}}), t.x, t.y, 3);
  EXPECT_EQ(static_cast<const DecisionTreeModel&>(stump.model()).nodes().size(), 3u);
}

TEST(RandomForest, MajorityVoteAndTieRule) {
  // Single-leaf trees vote for the majority of their leaf histogram.
  auto tree = [](std::vector<std::uint32_t> c) { return DecisionTreeModel({leaf(std::move(c))}); };
  const RandomForestModel three({tree({5, 1}), tree({4, 0}), tree({0, 3})}, 2);
  const Matrix row = Matrix::Zero(1, 1);
  EXPECT_EQ(argmax(three.predict_proba(row).row(0)), 0);
  const RandomForestModel tie({tree({2, 0}), tree({0, 2})}, 2);
  EXPECT_EQ(argmax(tie.predict_proba(row).row(0)), 0);
  const RandomForestModel four({tree({1, 0}), tree({1, 0}), tree({1, 0}), tree({0, 1})}, 2);
  EXPECT_DOUBLE_EQ(four.predict_proba(row)(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(four.predict_proba(row)(0, 1), 0.25);
}

TEST(RandomForest, NotWorseThanSingleTreeOnNoisyData) {
  const auto train = blobs({{0, 0, 0, 0}, {1, 1, 0, 0}, {0, 1, 1, 1}}, 150, 1.0, 8);
  const auto test = blobs({{0, 0, 0, 0}, {1, 1, 0, 0}, {0, 1, 1, 1}}, 300, 1.0, 9);
  const auto tree = fit(spec(Kind::decision_tree), train.x, train.y, 3);
  const auto forest = fit(spec(Kind::random_forest, {{"n_trees", 100}}), train.x, train.y, 3);
  EXPECT_GE(accuracy(forest.predict(test.x), test.y), accuracy(tree.predict(test.x), test.y));
}

TEST(RandomForest, ThreadCountDoesNotChangeModel) {
  const auto t = blobs({{0, 0, 0}, {1, 1, 1}}, 60, 1.0, 10);
  const auto a = fit(spec(Kind::random_forest, {{"n_trees", 12}, {"threads", 1}}), t.x, t.y, 2);
  const auto b = fit(spec(Kind::random_forest, {{"n_trees", 12}, {"threads", 3}}), t.x, t.y, 2);
  EXPECT_EQ(a.model().state(), b.model().state());
}

TEST(LogisticRegression, SeparableDataFitsWell) {
  const auto t = blobs({{-2, -2}, {2, 2}}, 200, 1.0, 11);
  const auto clf = fit(spec(Kind::logistic_regression, {{"iterations", 2000}, {"l2", 1e-4}}), t.x, t.y, 2);
  EXPECT_GE(accuracy(clf.predict(t.x), t.y), 0.99);
}

TEST(LogisticRegression, SingleClassIsConstant) {
  const auto clf = fit(spec(Kind::logistic_regression), Matrix::Ones(5, 2), Labels(5, 1), 3);
  EXPECT_EQ(clf.predict(Matrix::Zero(3, 2)), (Labels{1, 1, 1}));
}

TEST(Mlp, LearnsXor) {
  Matrix x(4, 2);
  x << 0, 0, 0, 1, 1, 0, 1, 1;
  const Labels y{0, 1, 1, 0};
  Matrix xs = x.replicate(25, 1);
  Labels ys;
  for (int r = 0; r < 25; ++r) ys.insert(ys.end(), y.begin(), y.end());
  const auto clf = fit(spec(Kind::mlp, {{"hidden", 16}, {"epochs", 400}, {"batch_size", 20}, {"learning_rate", 0.01}}),
                       xs, ys, 2);
  EXPECT_EQ(clf.predict(x), y);
}

TEST(Contract, ProbabilitiesNormalizedAndArgmaxConsistent) {
  const auto t = blobs({{0, 0}, {1.5, 0}, {0, 1.5}}, 40, 1.0, 12);
  const auto q = blobs({{0, 0}, {1.5, 0}, {0, 1.5}}, 30, 2.0, 13);
  for (Kind k : {Kind::logistic_regression, Kind::gaussian_nb, Kind::decision_tree, Kind::random_forest, Kind::mlp}) {
    json hp = json::object();
    if (k == Kind::random_forest) hp = {{"n_trees", 9}};
    if (k == Kind::mlp) hp = {{"epochs", 20}};
    const auto clf = fit(spec(k, hp), t.x, t.y, 3);
    const Matrix p = clf.predict_proba(q.x);
    const Labels pred = clf.predict(q.x);
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-9) << to_string(k);
      EXPECT_GE(p.row(i).minCoeff(), 0.0);
      EXPECT_EQ(argmax(p.row(i)), pred[static_cast<std::size_t>(i)]) << to_string(k);
      EXPECT_LT(pred[static_cast<std::size_t>(i)], 3);
    }
  }
}

TEST(Contract, DeterministicPerSeed) {
  const auto t = blobs({{0, 0}, {1, 1}}, 50, 1.0, 14);
  for (Kind k : {Kind::logistic_regression, Kind::decision_tree, Kind::random_forest, Kind::mlp}) {
    json hp = k == Kind::random_forest ? json{{"n_trees", 5}} : k == Kind::mlp ? json{{"epochs", 5}} : json::object();
    const auto a = fit(spec(k, hp, 3), t.x, t.y, 2);
    const auto b = fit(spec(k, hp, 3), t.x, t.y, 2);
    EXPECT_EQ(a.predict_proba(t.x), b.predict_proba(t.x)) << to_string(k);
  }
}

TEST(Contract, WidthMismatchRejected) {
  const auto t = blobs({{0, 0}, {1, 1}}, 10, 1.0, 15);
  const auto clf = fit(spec(Kind::decision_tree), t.x, t.y, 2);
  EXPECT_THROW(clf.predict(Matrix::Zero(1, 3)), DataError);
}

TEST(Contract, InvalidInputsRejected) {
  EXPECT_THROW(fit(spec(Kind::decision_tree), Matrix(0, 2), {}, 2), DataError);
  EXPECT_THROW(fit(spec(Kind::decision_tree), Matrix::Zero(2, 1), {0, 2}, 2), DataError);
  EXPECT_THROW(fit(spec(Kind::decision_tree, {{"depth", 3}}), Matrix::Zero(2, 1), {0, 1}, 2), ConfigError);
  EXPECT_THROW(fit(spec(Kind::random_forest, {{"n_trees", 0}}), Matrix::Zero(2, 1), {0, 1}, 2), ConfigError);
  auto ext = spec(Kind::external);
  ext.external_name = "svm";
  EXPECT_THROW(fit(ext, Matrix::Zero(2, 1), {0, 1}, 2), ConfigError);
}

TEST(External, RegistryFactoryIsUsed) {
  class Constant : public Model {
   public:
    Kind kind() const override { return Kind::external; }
    Matrix predict_proba(const Matrix& rows) const override {
      Matrix p = Matrix::Zero(rows.rows(), 2);
      p.col(1).setOnes();
      return p;
    }
    json state() const override { return json::object(); }
  };
  ExternalRegistry reg;
  reg.add("svm", [](const Matrix&, const Labels&, std::size_t, const json&, std::uint64_t) {
    return std::make_shared<Constant>();
  });
  auto ext = spec(Kind::external);
  ext.external_name = "svm";
  const auto clf = fit(ext, Matrix::Zero(3, 2), {0, 1, 0}, 2, &reg);
  EXPECT_EQ(clf.predict(Matrix::Zero(2, 2)), (Labels{1, 1}));
  EXPECT_EQ(clf.external_name(), "svm");
}

TEST(Persistence, RoundTripPreservesPredictions) {
  const auto t = blobs({{0, 0}, {1.5, 0}, {0, 1.5}}, 30, 1.0, 16);
  const auto dir = scratch("persist");
  const std::vector<std::string> names{"a", "b", "c"};
  for (Kind k : {Kind::logistic_regression, Kind::gaussian_nb, Kind::decision_tree, Kind::random_forest, Kind::mlp}) {
    json hp = k == Kind::random_forest ? json{{"n_trees", 7}} : k == Kind::mlp ? json{{"epochs", 10}} : json::object();
    const auto clf = fit(spec(k, hp), t.x, t.y, 3);
    const auto stem = dir / to_string(k);
    const auto env = save_classifier(clf, stem, names);
    EXPECT_EQ(env["C"], 3);
    EXPECT_EQ(env["d"], 2);
    const auto back = load_classifier(fs::path(stem).concat(".json"));
    EXPECT_EQ(back.kind(), k);
    EXPECT_EQ(back.predict_proba(t.x), clf.predict_proba(t.x)) << to_string(k);
  }
  fs::remove_all(dir);
}
