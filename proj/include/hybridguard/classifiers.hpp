#pragma once

// Supervised classifiers behind one contract: logistic regression, Gaussian
// naive Bayes, CART decision tree, random forest, a one-hidden-layer MLP, and
// an `external` slot for learners registered at runtime.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridguard/common.hpp"
#include "hybridguard/neural.hpp"

namespace hybridguard::classifiers {

using nlohmann::json;

enum class Kind { logistic_regression, gaussian_nb, decision_tree, random_forest, mlp, external };

inline std::string to_string(Kind k) {
  switch (k) {
    case Kind::logistic_regression: return "logistic_regression";
    case Kind::gaussian_nb: return "gaussian_nb";
    case Kind::decision_tree: return "decision_tree";
    case Kind::random_forest: return "random_forest";
    case Kind::mlp: return "mlp";
    case Kind::external: return "external";
  }
  return "?";
}

inline Kind parse_kind(const std::string& s) {
  for (Kind k : {Kind::logistic_regression, Kind::gaussian_nb, Kind::decision_tree, Kind::random_forest, Kind::mlp,
                 Kind::external})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown classifier kind '" + s + "'");
}

/// Index of the largest entry; ties resolve to the lowest index.
inline Label argmax(const Eigen::Ref<const RowVector>& row) {
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return static_cast<Label>(best);
}

namespace detail {

/// Reads `key` from a hyperparameter object, recording it as known.
struct Params {
  const json& obj;
  std::set<std::string> seen;

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen.insert(key);
    if (!obj.is_object() || !obj.contains(key) || obj.at(key).is_null()) return fallback;
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("hyperparameter '" + key + "': " + e.what());
    }
  }

  void reject_unknown(const std::string& kind) const {
    if (!obj.is_object()) return;
    for (const auto& [k, _] : obj.items())
      if (!seen.count(k)) throw ConfigError("unknown hyperparameter '" + k + "' for " + kind);
  }
};

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

inline json vec_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

/// A fitted model. Implementations are immutable once constructed.
class Model {
 public:
  virtual ~Model() = default;
  virtual Kind kind() const = 0;
  /// Rows sum to 1.
  virtual Matrix predict_proba(const Matrix& rows) const = 0;
  /// Kind-specific state. Network-backed models also emit parameter blocks.
  virtual json state() const = 0;
  virtual const neural::MlpParams* network() const { return nullptr; }
  virtual const neural::MlpSpec* network_spec() const { return nullptr; }
};

class TrainedClassifier {
 public:
  TrainedClassifier() = default;
  TrainedClassifier(std::shared_ptr<const Model> model, std::size_t classes, std::size_t features, std::string name = {})
      : model_(std::move(model)), classes_(classes), features_(features), name_(std::move(name)) {}

  Kind kind() const { return model_->kind(); }
  std::size_t num_classes() const { return classes_; }
  std::size_t num_features() const { return features_; }
  const std::string& external_name() const { return name_; }
  const Model& model() const { return *model_; }

  Matrix predict_proba(const Matrix& rows) const {
    check(rows);
    return model_->predict_proba(rows);
  }

  Labels predict(const Matrix& rows) const {
    const Matrix p = predict_proba(rows);
    Labels out(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax(p.row(i));
    return out;
  }

 private:
  void check(const Matrix& rows) const {
    if (rows.cols() != static_cast<Eigen::Index>(features_))
      throw DataError("classifier expects " + std::to_string(features_) + " features, got " +
                      std::to_string(rows.cols()));
  }

  std::shared_ptr<const Model> model_;
  std::size_t classes_ = 0;
  std::size_t features_ = 0;
  std::string name_;
};

struct ClassifierSpec {
  Kind kind = Kind::decision_tree;
  json hyperparameters = json::object();
  std::uint64_t seed = 0;
  std::string external_name;  // kind == external only

  json to_json() const {
    json j = {{"kind", to_string(kind)}, {"hyperparameters", hyperparameters}, {"seed", seed}};
    if (kind == Kind::external) j["external_name"] = external_name;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Logistic regression (multinomial)

struct LogisticConfig {
  std::size_t iterations = 500;
  double learning_rate = 0.05;
  double l2 = 1e-4;

  static LogisticConfig parse(const json& j) {
    detail::Params p{j, {}};
    LogisticConfig c;
    c.iterations = p.get("iterations", c.iterations);
    c.learning_rate = p.get("learning_rate", c.learning_rate);
    c.l2 = p.get("l2", c.l2);
    p.reject_unknown("logistic_regression");
    if (c.learning_rate <= 0.0 || c.l2 < 0.0) throw ConfigError("logistic_regression: invalid hyperparameters");
    return c;
  }
};

class SoftmaxNetworkModel : public Model {
 public:
  SoftmaxNetworkModel(Kind kind, neural::MlpSpec spec, neural::MlpParams params, std::optional<Label> constant,
                      std::size_t classes)
      : kind_(kind), spec_(std::move(spec)), params_(std::move(params)), constant_(constant), classes_(classes) {}

  Kind kind() const override { return kind_; }

  Matrix predict_proba(const Matrix& rows) const override {
    if (constant_) {
      Matrix p = Matrix::Zero(rows.rows(), static_cast<Eigen::Index>(classes_));
      p.col(*constant_).setOnes();
      return p;
    }
    return detail::softmax_rows(neural::forward(params_, spec_, rows, neural::Mode::eval).output);
  }

  json state() const override {
    json j = {{"network", spec_.to_json()}};
    if (constant_) j["constant_class"] = *constant_;
    return j;
  }
  const neural::MlpParams* network() const override { return &params_; }
  const neural::MlpSpec* network_spec() const override { return &spec_; }

 private:
  Kind kind_;
  neural::MlpSpec spec_;
  neural::MlpParams params_;
  std::optional<Label> constant_;
  std::size_t classes_;
};

namespace detail {

inline Matrix one_hot(const Labels& y, std::size_t classes) {
  Matrix t = Matrix::Zero(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < y.size(); ++i) t(static_cast<Eigen::Index>(i), y[i]) = 1.0;
  return t;
}

inline std::optional<Label> single_class(const Labels& y) {
  for (Label v : y)
    if (v != y.front()) return std::nullopt;
  return y.front();
}

}  // namespace detail

inline std::shared_ptr<const Model> fit_logistic(const Matrix& x, const Labels& y, std::size_t classes,
                                                 const LogisticConfig& cfg, std::uint64_t seed) {
  neural::MlpSpec spec;
  spec.input_dim = static_cast<std::size_t>(x.cols());
  spec.output_dim = classes;
  spec.output_activation = neural::Activation::linear;
  auto params = neural::init_params(spec, seed);
  params.layers[0].weight.setZero();
  if (auto only = detail::single_class(y))
    return std::make_shared<SoftmaxNetworkModel>(Kind::logistic_regression, spec, params, only, classes);

  const Matrix target = detail::one_hot(y, classes);
  auto adam = neural::AdamState::for_params(params, {cfg.learning_rate, 0.9, 0.999, 1e-8});
  const double n = static_cast<double>(x.rows());
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto trace = neural::forward(params, spec, x, neural::Mode::eval);
    const Matrix grad_out = (detail::softmax_rows(trace.output) - target) / n;
    auto g = neural::backward(params, spec, trace, grad_out);
    g.params.layers[0].weight += cfg.l2 * params.layers[0].weight;
    neural::adam_step(adam, params, g.params);
  }
  return std::make_shared<SoftmaxNetworkModel>(Kind::logistic_regression, spec, std::move(params), std::nullopt,
                                               classes);
}

// ---------------------------------------------------------------------------
// Gaussian naive Bayes

struct GaussianNbConfig {
  double var_smoothing = 1e-9;

  static GaussianNbConfig parse(const json& j) {
    detail::Params p{j, {}};
    GaussianNbConfig c;
    c.var_smoothing = p.get("var_smoothing", c.var_smoothing);
    p.reject_unknown("gaussian_nb");
    if (c.var_smoothing < 0.0) throw ConfigError("gaussian_nb: var_smoothing must be >= 0");
    return c;
  }
};

class GaussianNbModel : public Model {
 public:
  GaussianNbModel(Matrix means, Matrix vars, Vector log_prior)
      : means_(std::move(means)), vars_(std::move(vars)), log_prior_(std::move(log_prior)) {}

  Kind kind() const override { return Kind::gaussian_nb; }

  Matrix log_joint(const Matrix& rows) const {
    const Eigen::Index C = means_.rows();
    Matrix out(rows.rows(), C);
    for (Eigen::Index c = 0; c < C; ++c) {
      if (!std::isfinite(log_prior_[c])) {
        out.col(c).setConstant(-std::numeric_limits<double>::infinity());
        continue;
      }
      const double log_norm = -0.5 * (2.0 * M_PI * vars_.row(c).array()).log().sum();
      for (Eigen::Index i = 0; i < rows.rows(); ++i)
        out(i, c) = log_prior_[c] + log_norm -
                    0.5 * ((rows.row(i) - means_.row(c)).array().square() / vars_.row(c).array()).sum();
    }
    return out;
  }

  Matrix predict_proba(const Matrix& rows) const override { return detail::softmax_rows(log_joint(rows)); }

  json state() const override {
    json means = json::array(), vars = json::array();
    for (Eigen::Index c = 0; c < means_.rows(); ++c) {
      means.push_back(detail::vec_json(means_.row(c).transpose()));
      vars.push_back(detail::vec_json(vars_.row(c).transpose()));
    }
    json prior = json::array();
    for (Eigen::Index c = 0; c < log_prior_.size(); ++c)
      prior.push_back(std::isfinite(log_prior_[c]) ? json(log_prior_[c]) : json(nullptr));
    return {{"means", means}, {"variances", vars}, {"log_prior", prior}};
  }

  static std::shared_ptr<const GaussianNbModel> from_state(const json& j) {
    const auto& means = j.at("means");
    const auto C = static_cast<Eigen::Index>(means.size());
    const auto d = static_cast<Eigen::Index>(C ? means[0].size() : 0);
    Matrix mu(C, d), var(C, d);
    Vector prior(C);
    for (Eigen::Index c = 0; c < C; ++c) {
      mu.row(c) = detail::json_vec(means[static_cast<std::size_t>(c)]).transpose();
      var.row(c) = detail::json_vec(j.at("variances")[static_cast<std::size_t>(c)]).transpose();
      const auto& lp = j.at("log_prior")[static_cast<std::size_t>(c)];
      prior[c] = lp.is_null() ? -std::numeric_limits<double>::infinity() : lp.get<double>();
    }
    return std::make_shared<GaussianNbModel>(std::move(mu), std::move(var), std::move(prior));
  }

 private:
  Matrix means_, vars_;
  Vector log_prior_;
};

inline std::shared_ptr<const Model> fit_gaussian_nb(const Matrix& x, const Labels& y, std::size_t classes,
                                                    const GaussianNbConfig& cfg) {
  const Eigen::Index d = x.cols();
  const auto C = static_cast<Eigen::Index>(classes);
  double max_var = 0.0;
  for (Eigen::Index j = 0; j < d; ++j)
    max_var = std::max(max_var, (x.col(j).array() - x.col(j).mean()).square().mean());
  const double floor = cfg.var_smoothing * max_var;

  Matrix mu = Matrix::Zero(C, d), var = Matrix::Ones(C, d);
  Vector prior = Vector::Constant(C, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> count(classes, 0);
  for (Label v : y) ++count[static_cast<std::size_t>(v)];
  for (Eigen::Index c = 0; c < C; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0) continue;
    Vector s = Vector::Zero(d);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) s += x.row(static_cast<Eigen::Index>(i)).transpose();
    const double nc = static_cast<double>(count[static_cast<std::size_t>(c)]);
    mu.row(c) = (s / nc).transpose();
    Vector ss = Vector::Zero(d);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == c) ss.array() += (x.row(static_cast<Eigen::Index>(i)) - mu.row(c)).transpose().array().square();
    var.row(c) = (ss / nc).transpose().array() + floor;
    prior[c] = std::log(nc / static_cast<double>(y.size()));
  }
  // All-constant data with zero smoothing would leave zero variances.
  var = var.unaryExpr([](double v) { return v > 0.0 ? v : std::numeric_limits<double>::min(); });
  return std::make_shared<GaussianNbModel>(std::move(mu), std::move(var), std::move(prior));
}

// ---------------------------------------------------------------------------
// CART

struct TreeConfig {
  std::size_t max_depth = 0;  // 0 = unlimited
  std::size_t min_samples_split = 2;
  std::size_t max_features = 0;  // candidate features per split; 0 = all

  static TreeConfig parse(const json& j) {
    detail::Params p{j, {}};
    TreeConfig c;
    c.max_depth = p.get("max_depth", c.max_depth);
    c.min_samples_split = p.get("min_samples_split", c.min_samples_split);
    c.max_features = p.get("max_features", c.max_features);
    p.reject_unknown("decision_tree");
    if (c.min_samples_split < 2) throw ConfigError("min_samples_split must be >= 2");
    return c;
  }
};

/// Split nodes send `x[feature] <= threshold` left. Leaves hold class counts.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<std::uint32_t> counts;

  bool is_leaf() const { return feature < 0; }
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double impurity = std::numeric_limits<double>::infinity();  // weighted child Gini
};

/// Gini impurity of a class histogram.
inline double gini(const std::vector<std::uint32_t>& counts) {
  double n = 0.0, sq = 0.0;
  for (auto c : counts) {
    n += c;
    sq += static_cast<double>(c) * c;
  }
  return n == 0.0 ? 0.0 : 1.0 - sq / (n * n);
}

namespace detail {

/// Best threshold on one feature over `idx`, scanning midpoints of sorted
/// distinct values. Returns the weighted child Gini (n_l·G_l + n_r·G_r)/n.
inline SplitChoice best_split_on(const Matrix& x, const Labels& y, const IndexList& idx, std::size_t classes,
                                 int feature, std::vector<std::pair<double, Label>>& buf) {
  buf.clear();
  for (auto i : idx) buf.emplace_back(x(static_cast<Eigen::Index>(i), feature), y[i]);
  std::sort(buf.begin(), buf.end());
  SplitChoice best;
  const double n = static_cast<double>(buf.size());
  std::vector<double> left(classes, 0.0), right(classes, 0.0);
  double sq_left = 0.0, sq_right = 0.0;
  for (const auto& [v, c] : buf) right[static_cast<std::size_t>(c)] += 1.0;
  for (double r : right) sq_right += r * r;
  for (std::size_t k = 0; k + 1 < buf.size(); ++k) {
    const auto c = static_cast<std::size_t>(buf[k].second);
    sq_left += 2.0 * left[c] + 1.0;
    sq_right -= 2.0 * right[c] - 1.0;
    left[c] += 1.0;
    right[c] -= 1.0;
    if (buf[k].first == buf[k + 1].first) continue;
    const double nl = static_cast<double>(k + 1), nr = n - nl;
    const double impurity = ((nl - sq_left / nl) + (nr - sq_right / nr)) / n;
    if (impurity < best.impurity) {
      double thr = 0.5 * (buf[k].first + buf[k + 1].first);
      if (!(thr < buf[k + 1].first)) thr = buf[k].first;
      best = {feature, thr, impurity};
    }
  }
  return best;
}

}  // namespace detail

class DecisionTreeModel : public Model {
 public:
  explicit DecisionTreeModel(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}

  Kind kind() const override { return Kind::decision_tree; }

  const TreeNode& leaf_for(const Eigen::Ref<const RowVector>& row) const {
    const TreeNode* n = &nodes_[0];
    while (!n->is_leaf()) n = &nodes_[static_cast<std::size_t>(row[n->feature] <= n->threshold ? n->left : n->right)];
    return *n;
  }

  Matrix predict_proba(const Matrix& rows) const override {
    const auto C = static_cast<Eigen::Index>(nodes_[0].counts.size());
    Matrix p(rows.rows(), C);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      const auto& counts = leaf_for(rows.row(i)).counts;
      double total = 0.0;
      for (auto c : counts) total += c;
      for (Eigen::Index c = 0; c < C; ++c) p(i, c) = counts[static_cast<std::size_t>(c)] / total;
    }
    return p;
  }

  const std::vector<TreeNode>& nodes() const { return nodes_; }

  json state() const override {
    json arr = json::array();
    for (const auto& n : nodes_) {
      if (n.is_leaf())
        arr.push_back({{"counts", n.counts}});
      else
        arr.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right},
                       {"counts", n.counts}});
    }
    return {{"nodes", arr}};
  }

  static std::vector<TreeNode> nodes_from_state(const json& j) {
    std::vector<TreeNode> nodes;
    for (const auto& n : j.at("nodes")) {
      TreeNode t;
      t.counts = n.at("counts").get<std::vector<std::uint32_t>>();
      if (n.contains("feature")) {
        t.feature = n.at("feature").get<int>();
        t.threshold = n.at("threshold").get<double>();
        t.left = n.at("left").get<int>();
        t.right = n.at("right").get<int>();
      }
      nodes.push_back(std::move(t));
    }
    if (nodes.empty()) throw DataError("empty decision tree");
    return nodes;
  }

 private:
  std::vector<TreeNode> nodes_;
};

/// Grows a CART tree on the rows in `idx` (duplicates allowed, as produced by
/// bootstrapping). With `max_features` < d, each split examines a random
/// subset of that many features, continuing through the remaining features
/// only if none of the sampled ones can split the node.
inline std::vector<TreeNode> grow_tree(const Matrix& x, const Labels& y, std::size_t classes, IndexList idx,
                                       const TreeConfig& cfg, Rng& rng) {
  const auto d = static_cast<std::size_t>(x.cols());
  const std::size_t m = cfg.max_features == 0 ? d : std::min(cfg.max_features, d);
  std::vector<TreeNode> nodes;
  struct Pending {
    int node;
    IndexList rows;
    std::size_t depth;
  };
  std::vector<Pending> stack;
  auto make_node = [&](const IndexList& rows) {
    TreeNode n;
    n.counts.assign(classes, 0);
    for (auto i : rows) ++n.counts[static_cast<std::size_t>(y[i])];
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size() - 1);
  };
  stack.push_back({make_node(idx), std::move(idx), 0});
  std::vector<std::pair<double, Label>> buf;
  std::vector<int> features(d);
  std::iota(features.begin(), features.end(), 0);

  while (!stack.empty()) {
    Pending cur = std::move(stack.back());
    stack.pop_back();
    const auto& counts = nodes[static_cast<std::size_t>(cur.node)].counts;
    const bool pure = std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }) <= 1;
    if (pure || cur.rows.size() < cfg.min_samples_split || (cfg.max_depth && cur.depth >= cfg.max_depth)) continue;

    if (m < d) {
      // Partial Fisher-Yates: the first k entries become a uniform sample.
      for (std::size_t k = 0; k < d; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, d - 1);
        std::swap(features[k], features[pick(rng)]);
      }
    }
    SplitChoice best;
    for (std::size_t k = 0; k < d; ++k) {
      if (k >= m && best.feature >= 0) break;
      const auto s = detail::best_split_on(x, y, cur.rows, classes, features[k], buf);
      if (s.impurity < best.impurity || (s.impurity == best.impurity && s.feature >= 0 && s.feature < best.feature))
        best = s;
    }
    if (best.feature < 0) continue;

    IndexList left, right;
    for (auto i : cur.rows)
      (x(static_cast<Eigen::Index>(i), best.feature) <= best.threshold ? left : right).push_back(i);
    const int l = make_node(left);
    const int r = make_node(right);
    auto& node = nodes[static_cast<std::size_t>(cur.node)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = l;
    node.right = r;
    stack.push_back({r, std::move(right), cur.depth + 1});
    stack.push_back({l, std::move(left), cur.depth + 1});
  }
  return nodes;
}

inline std::shared_ptr<const Model> fit_tree(const Matrix& x, const Labels& y, std::size_t classes,
                                             const TreeConfig& cfg, std::uint64_t seed) {
  IndexList idx(y.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, 0x7ee);
  return std::make_shared<DecisionTreeModel>(grow_tree(x, y, classes, std::move(idx), cfg, rng));
}

// ---------------------------------------------------------------------------
// Random forest

struct ForestConfig {
  std::size_t n_trees = 100;
  std::size_t max_depth = 0;
  std::size_t min_samples_split = 2;
  std::size_t max_features = 0;  // 0 = floor(sqrt(d))
  bool bootstrap = true;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  static ForestConfig parse(const json& j, std::uint64_t seed = 0) {
    detail::Params p{j, {}};
    ForestConfig c;
    c.seed = seed;
    c.n_trees = p.get("n_trees", c.n_trees);
    c.max_depth = p.get("max_depth", c.max_depth);
    c.min_samples_split = p.get("min_samples_split", c.min_samples_split);
    c.max_features = p.get("max_features", c.max_features);
    c.bootstrap = p.get("bootstrap", c.bootstrap);
    c.seed = p.get("seed", c.seed);
    c.threads = p.get("threads", c.threads);
    p.reject_unknown("random_forest");
    if (c.n_trees < 1) throw ConfigError("random_forest: n_trees must be >= 1");
    if (c.min_samples_split < 2) throw ConfigError("random_forest: min_samples_split must be >= 2");
    return c;
  }

  json to_json() const {
    return {{"n_trees", n_trees},         {"max_depth", max_depth}, {"min_samples_split", min_samples_split},
            {"max_features", max_features}, {"bootstrap", bootstrap}, {"seed", seed}};
  }
};

class RandomForestModel : public Model {
 public:
  RandomForestModel(std::vector<DecisionTreeModel> trees, std::size_t classes)
      : trees_(std::move(trees)), classes_(classes) {}

  Kind kind() const override { return Kind::random_forest; }

  /// Per-row vote counts, one vote per tree for its leaf majority class.
  Matrix votes(const Matrix& rows) const {
    Matrix v = Matrix::Zero(rows.rows(), static_cast<Eigen::Index>(classes_));
    for (const auto& t : trees_) {
      for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const auto& counts = t.leaf_for(rows.row(i)).counts;
        const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
        v(i, best) += 1.0;
      }
    }
    return v;
  }

  Matrix predict_proba(const Matrix& rows) const override {
    return votes(rows) / static_cast<double>(trees_.size());
  }

  const std::vector<DecisionTreeModel>& trees() const { return trees_; }

  json state() const override {
    json arr = json::array();
    for (const auto& t : trees_) arr.push_back(t.state());
    return {{"trees", arr}};
  }

 private:
  std::vector<DecisionTreeModel> trees_;
  std::size_t classes_;
};

/// Tree t is grown from seed + t, so the result does not depend on `threads`.
inline std::shared_ptr<const RandomForestModel> fit_forest(const Matrix& x, const Labels& y, std::size_t classes,
                                                           const ForestConfig& cfg) {
  const auto d = static_cast<std::size_t>(x.cols());
  TreeConfig tc;
  tc.max_depth = cfg.max_depth;
  tc.min_samples_split = cfg.min_samples_split;
  tc.max_features = cfg.max_features ? cfg.max_features
                                     : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(d))));
  std::vector<std::optional<DecisionTreeModel>> trees(cfg.n_trees);
  auto grow = [&](std::size_t t) {
    Rng rng = make_rng(cfg.seed + t, 0xf0e5u);
    IndexList idx(y.size());
    if (cfg.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, y.size() - 1);
      for (auto& i : idx) i = pick(rng);
    } else {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    }
    trees[t].emplace(grow_tree(x, y, classes, std::move(idx), tc, rng));
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.n_trees)));
  if (threads == 1) {
    for (std::size_t t = 0; t < cfg.n_trees; ++t) grow(t);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < cfg.n_trees; t += threads) grow(t);
      });
  }
  std::vector<DecisionTreeModel> out;
  out.reserve(cfg.n_trees);
  for (auto& t : trees) out.push_back(std::move(*t));
  return std::make_shared<RandomForestModel>(std::move(out), classes);
}

// ---------------------------------------------------------------------------
// MLP classifier

struct MlpClassifierConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double leaky_slope = 0.2;

  static MlpClassifierConfig parse(const json& j) {
    detail::Params p{j, {}};
    MlpClassifierConfig c;
    c.hidden = p.get("hidden", c.hidden);
    c.epochs = p.get("epochs", c.epochs);
    c.batch_size = p.get("batch_size", c.batch_size);
    c.learning_rate = p.get("learning_rate", c.learning_rate);
    c.leaky_slope = p.get("leaky_slope", c.leaky_slope);
    p.reject_unknown("mlp");
    if (c.hidden == 0 || c.batch_size == 0 || c.learning_rate <= 0.0) throw ConfigError("mlp: invalid hyperparameters");
    return c;
  }
};

inline std::shared_ptr<const Model> fit_mlp(const Matrix& x, const Labels& y, std::size_t classes,
                                            const MlpClassifierConfig& cfg, std::uint64_t seed) {
  neural::MlpSpec spec;
  spec.input_dim = static_cast<std::size_t>(x.cols());
  spec.layer_sizes = {cfg.hidden};
  spec.output_dim = classes;
  spec.leaky_slope = cfg.leaky_slope;
  spec.output_activation = neural::Activation::linear;
  auto params = neural::init_params(spec, seed);
  if (auto only = detail::single_class(y))
    return std::make_shared<SoftmaxNetworkModel>(Kind::mlp, spec, params, only, classes);

  auto adam = neural::AdamState::for_params(params, {cfg.learning_rate, 0.9, 0.999, 1e-8});
  IndexList order(y.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(seed, 0x31f, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Matrix xb(static_cast<Eigen::Index>(end - start), x.cols());
      Labels yb;
      for (std::size_t k = start; k < end; ++k) {
        xb.row(static_cast<Eigen::Index>(k - start)) = x.row(static_cast<Eigen::Index>(order[k]));
        yb.push_back(y[order[k]]);
      }
      const auto trace = neural::forward(params, spec, xb, neural::Mode::eval);
      const Matrix grad_out =
          (detail::softmax_rows(trace.output) - detail::one_hot(yb, classes)) / static_cast<double>(yb.size());
      neural::adam_step(adam, params, neural::backward(params, spec, trace, grad_out).params);
    }
  }
  return std::make_shared<SoftmaxNetworkModel>(Kind::mlp, spec, std::move(params), std::nullopt, classes);
}

// ---------------------------------------------------------------------------
// External learners

/// Factory for learners without a built-in implementation (SVM, boosting,
/// ...). Registered by name and selected with kind = external.
using ExternalFactory = std::function<std::shared_ptr<const Model>(const Matrix&, const Labels&, std::size_t classes,
                                                                   const json& hyperparameters, std::uint64_t seed)>;

class ExternalRegistry {
 public:
  void add(const std::string& name, ExternalFactory f) { factories_[name] = std::move(f); }
  const ExternalFactory* find(const std::string& name) const {
    const auto it = factories_.find(name);
    return it == factories_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::string, ExternalFactory> factories_;
};

/// Checks kind-specific hyperparameters without fitting.
inline void validate(const ClassifierSpec& spec) {
  switch (spec.kind) {
    case Kind::logistic_regression: LogisticConfig::parse(spec.hyperparameters); break;
    case Kind::gaussian_nb: GaussianNbConfig::parse(spec.hyperparameters); break;
    case Kind::decision_tree: TreeConfig::parse(spec.hyperparameters); break;
    case Kind::random_forest: ForestConfig::parse(spec.hyperparameters, spec.seed); break;
    case Kind::mlp: MlpClassifierConfig::parse(spec.hyperparameters); break;
    case Kind::external:
      if (spec.external_name.empty()) throw ConfigError("external classifier needs a name");
      break;
  }
}

inline TrainedClassifier fit(const ClassifierSpec& spec, const Matrix& x, const Labels& y, std::size_t classes,
                             const ExternalRegistry* registry = nullptr) {
  if (x.rows() == 0 || y.empty()) throw DataError("cannot fit a classifier on zero rows");
  if (static_cast<std::size_t>(x.rows()) != y.size()) throw DataError("feature rows and labels differ in length");
  for (Label v : y)
    if (v < 0 || static_cast<std::size_t>(v) >= classes) throw DataError("label outside class range");
  validate(spec);
  std::shared_ptr<const Model> model;
  switch (spec.kind) {
    case Kind::logistic_regression:
      model = fit_logistic(x, y, classes, LogisticConfig::parse(spec.hyperparameters), spec.seed);
      break;
    case Kind::gaussian_nb: model = fit_gaussian_nb(x, y, classes, GaussianNbConfig::parse(spec.hyperparameters)); break;
    case Kind::decision_tree:
      model = fit_tree(x, y, classes, TreeConfig::parse(spec.hyperparameters), spec.seed);
      break;
    case Kind::random_forest:
      model = fit_forest(x, y, classes, ForestConfig::parse(spec.hyperparameters, spec.seed));
      break;
    case Kind::mlp: model = fit_mlp(x, y, classes, MlpClassifierConfig::parse(spec.hyperparameters), spec.seed); break;
    case Kind::external: {
      const ExternalFactory* f = registry ? registry->find(spec.external_name) : nullptr;
      if (!f) throw ConfigError("no implementation registered for external classifier '" + spec.external_name + "'");
      model = (*f)(x, y, classes, spec.hyperparameters, spec.seed);
      break;
    }
  }
  return TrainedClassifier(std::move(model), classes, static_cast<std::size_t>(x.cols()), spec.external_name);
}

// ---------------------------------------------------------------------------
// Persistence. The JSON envelope records kind, d and C; network-backed models
// store their weights in a sibling parameter file.

inline json save_classifier(const TrainedClassifier& clf, const std::filesystem::path& stem,
                            const std::vector<std::string>& class_names) {
  json env = {{"schema_version", kSchemaVersion},
              {"kind", to_string(clf.kind())},
              {"d", clf.num_features()},
              {"C", clf.num_classes()},
              {"class_names", class_names},
              {"state", clf.model().state()}};
  if (clf.kind() == Kind::external) {
    env["external_name"] = clf.external_name();
  }
  if (const auto* p = clf.model().network()) {
    const auto bin = std::filesystem::path(stem).concat(".bin");
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw DataError("cannot write '" + bin.string() + "'");
    neural::write_params(out, *clf.model().network_spec(), *p, 0);
    env["params_file"] = bin.filename().string();
  }
  const auto path = std::filesystem::path(stem).concat(".json");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << env.dump(1) << '\n';
  return env;
}

inline TrainedClassifier load_classifier(const std::filesystem::path& json_path) {
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + json_path.string() + "'");
  const json env = json::parse(in);
  const Kind kind = parse_kind(env.at("kind").get<std::string>());
  const auto d = env.at("d").get<std::size_t>();
  const auto C = env.at("C").get<std::size_t>();
  const json& st = env.at("state");
  std::shared_ptr<const Model> model;
  switch (kind) {
    case Kind::logistic_regression:
    case Kind::mlp: {
      std::optional<Label> constant;
      if (st.contains("constant_class")) constant = st.at("constant_class").get<Label>();
      const auto bin = json_path.parent_path() / env.at("params_file").get<std::string>();
      std::ifstream pin(bin, std::ios::binary);
      if (!pin) throw DataError("cannot open '" + bin.string() + "'");
      auto file = neural::read_params(pin);
      model = std::make_shared<SoftmaxNetworkModel>(kind, file.spec, std::move(file.blocks.at(0)), constant, C);
      break;
    }
    case Kind::gaussian_nb: model = GaussianNbModel::from_state(st); break;
    case Kind::decision_tree: model = std::make_shared<DecisionTreeModel>(DecisionTreeModel::nodes_from_state(st)); break;
    case Kind::random_forest: {
      std::vector<DecisionTreeModel> trees;
      for (const auto& t : st.at("trees")) trees.emplace_back(DecisionTreeModel::nodes_from_state(t));
      model = std::make_shared<RandomForestModel>(std::move(trees), C);
      break;
    }
    case Kind::external: throw DataError("external classifiers cannot be restored from disk");
  }
  return TrainedClassifier(std::move(model), C, d, env.value("external_name", std::string{}));
}

}  // namespace hybridguard::classifiers
