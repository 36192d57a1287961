#pragma once

// Two-phase detector. Phase 1 classifies every row with a general model on
// its own MI-selected features; rows it does not label as a major attack are
// re-classified by a random forest trained on normal + minority rows.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridguard/classifiers.hpp"
#include "hybridguard/common.hpp"
#include "hybridguard/featsel.hpp"
#include "hybridguard/metrics.hpp"
#include "hybridguard/tabular.hpp"

namespace hybridguard::dualnet {

using classifiers::ClassifierSpec;
using classifiers::ForestConfig;
using classifiers::TrainedClassifier;
using nlohmann::json;

struct ClassPartition {
  Label normal = 0;
  std::set<Label> major;
  std::set<Label> minor;

  void validate(std::size_t classes) const {
    std::set<Label> all = major;
    for (Label m : minor)
      if (!all.insert(m).second) throw ConfigError("class " + std::to_string(m) + " is both major and minor");
    if (all.count(normal)) throw ConfigError("normal class also listed as an attack class");
    all.insert(normal);
    if (all.size() != classes) throw ConfigError("class partition does not cover every class");
    for (Label c : all)
      if (c < 0 || static_cast<std::size_t>(c) >= classes) throw ConfigError("class partition references unknown class");
  }

  json to_json(const std::vector<std::string>& names) const {
    auto named = [&](const std::set<Label>& s) {
      std::vector<std::string> out;
      for (Label c : s) out.push_back(names.at(static_cast<std::size_t>(c)));
      return out;
    };
    return {{"normal", names.at(static_cast<std::size_t>(normal))}, {"major", named(major)}, {"minor", named(minor)}};
  }

  static ClassPartition from_json(const json& j, const std::vector<std::string>& names) {
    std::vector<std::string> maj = j.value("major", std::vector<std::string>{});
    return partition_by_names(names, j.at("normal").get<std::string>(), maj,
                              j.at("minor").get<std::vector<std::string>>());
  }

  /// Classes absent from both lists become major.
  static ClassPartition partition_by_names(const std::vector<std::string>& names, const std::string& normal,
                                           const std::vector<std::string>& major_names,
                                           const std::vector<std::string>& minor_names) {
    auto find = [&](const std::string& n) {
      const auto it = std::find(names.begin(), names.end(), n);
      if (it == names.end()) throw ConfigError("partition references unknown class '" + n + "'");
      return static_cast<Label>(it - names.begin());
    };
    ClassPartition p;
    p.normal = find(normal);
    for (const auto& n : minor_names) p.minor.insert(find(n));
    if (major_names.empty()) {
      for (std::size_t c = 0; c < names.size(); ++c) {
        const auto l = static_cast<Label>(c);
        if (l != p.normal && !p.minor.count(l)) p.major.insert(l);
      }
    } else {
      for (const auto& n : major_names) p.major.insert(find(n));
    }
    p.validate(names.size());
    return p;
  }
};

/// Explicit lists. An empty major list means "every other attack class".
inline ClassPartition partition_classes(const std::vector<std::string>& class_names, const std::string& normal,
                                        const std::vector<std::string>& major, const std::vector<std::string>& minor) {
  if (class_names.size() < 2) throw ConfigError("need at least two classes to partition");
  return ClassPartition::partition_by_names(class_names, normal, major, minor);
}

/// Attack classes whose count is below θ × (largest attack-class count) are minor.
inline ClassPartition partition_classes(const Dataset& data, Label normal, double theta) {
  if (data.num_classes() < 2) throw ConfigError("need at least two classes to partition");
  if (normal < 0 || static_cast<std::size_t>(normal) >= data.num_classes()) throw ConfigError("normal class out of range");
  const auto counts = data.class_counts();
  std::size_t largest = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (static_cast<Label>(c) != normal) largest = std::max(largest, counts[c]);
  ClassPartition p;
  p.normal = normal;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    const auto l = static_cast<Label>(c);
    if (l == normal) continue;
    (static_cast<double>(counts[c]) < theta * static_cast<double>(largest) ? p.minor : p.major).insert(l);
  }
  return p;
}

/// Caps every class at the largest minority-class count by sampling without
/// replacement; retained rows keep their original order.
inline Dataset downsample_majority(const Dataset& group2, const std::set<Label>& minor, std::uint64_t seed) {
  const auto counts = group2.class_counts();
  std::size_t cap = 0;
  for (Label m : minor) cap = std::max(cap, counts.at(static_cast<std::size_t>(m)));
  if (cap == 0) return group2;
  std::vector<bool> keep(group2.rows(), true);
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] <= cap || minor.count(static_cast<Label>(c))) continue;
    IndexList idx = group2.rows_with_labels({static_cast<Label>(c)});
    Rng rng = make_rng(seed, 0xd5u, static_cast<std::uint32_t>(c));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = cap; k < idx.size(); ++k) keep[idx[k]] = false;
  }
  IndexList rows;
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (keep[i]) rows.push_back(i);
  return group2.take_rows(rows);
}

struct DualNetOptions {
  std::size_t k_features = 30;
  BinningSpec binning;
  /// Accept a Phase-1 minority prediction instead of routing it onward.
  bool trust_phase1_minor = false;
  /// Rank Phase-2 features after downsampling instead of before.
  bool rank_after_downsampling = false;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  json to_json() const {
    return {{"k_features", k_features},
            {"mi_bins", binning.bins},
            {"trust_phase1_minor", trust_phase1_minor},
            {"rank_after_downsampling", rank_after_downsampling},
            {"seed", seed}};
  }
};

struct Phase1Model {
  TrainedClassifier classifier;
  IndexList features;
};

struct Phase2Model {
  TrainedClassifier forest;
  IndexList features;
  std::vector<Label> labels;  // compact forest label -> dataset label
};

inline Matrix take_columns(const Matrix& x, const IndexList& cols) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = x.col(static_cast<Eigen::Index>(cols[j]));
  return out;
}

struct DualNetModel {
  ClassPartition partition;
  Phase1Model phase1;
  std::optional<Phase2Model> phase2;  // absent when there are no minority classes
  bool trust_phase1_minor = false;
  std::size_t feature_count = 0;
  std::size_t class_count = 0;
  json fingerprint;

  bool phase2_degenerate() const { return !phase2.has_value(); }

  /// True when a Phase-1 label is terminal.
  bool terminal(Label p1) const {
    return partition.major.count(p1) || (trust_phase1_minor && partition.minor.count(p1)) || !phase2;
  }

  Labels predict(const Matrix& rows) const {
    if (rows.cols() != static_cast<Eigen::Index>(feature_count))
      throw DataError("detector expects " + std::to_string(feature_count) + " features, got " +
                      std::to_string(rows.cols()));
    Labels out = phase1.classifier.predict(take_columns(rows, phase1.features));
    IndexList routed;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (!terminal(out[i])) routed.push_back(i);
    if (routed.empty()) return out;
    Matrix sub(static_cast<Eigen::Index>(routed.size()), static_cast<Eigen::Index>(phase2->features.size()));
    for (std::size_t r = 0; r < routed.size(); ++r)
      for (std::size_t j = 0; j < phase2->features.size(); ++j)
        sub(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) =
            rows(static_cast<Eigen::Index>(routed[r]), static_cast<Eigen::Index>(phase2->features[j]));
    const Labels p2 = phase2->forest.predict(sub);
    for (std::size_t r = 0; r < routed.size(); ++r) out[routed[r]] = phase2->labels[static_cast<std::size_t>(p2[r])];
    return out;
  }
};

/// Phase 1 on all rows and classes; Phase 2 on normal + minority rows.
inline DualNetModel train_dualnet(const Dataset& train, const ClassPartition& partition,
                                  const ClassifierSpec& phase1_spec, const ForestConfig& forest,
                                  const DualNetOptions& opt = {},
                                  const classifiers::ExternalRegistry* registry = nullptr) {
  train.validate();
  partition.validate(train.num_classes());
  if (opt.k_features == 0) throw ConfigError("k_features must be at least 1");
  DualNetModel m;
  m.partition = partition;
  m.trust_phase1_minor = opt.trust_phase1_minor;
  m.feature_count = train.cols();
  m.class_count = train.num_classes();
  m.fingerprint = {{"phase1", phase1_spec.to_json()}, {"forest", forest.to_json()}, {"options", opt.to_json()}};

  m.phase1.features = select_top_k(rank_features(train, opt.binning, opt.threads), opt.k_features);
  m.phase1.classifier = classifiers::fit(phase1_spec, take_columns(train.features, m.phase1.features), train.labels,
                                         train.num_classes(), registry);

  std::set<Label> group2_labels = partition.minor;
  group2_labels.insert(partition.normal);
  Dataset group2 = train.take_rows(train.rows_with_labels(group2_labels));
  bool any_minor = false;
  for (Label y : group2.labels) any_minor = any_minor || partition.minor.count(y);
  if (partition.minor.empty() || !any_minor) return m;

  // Compact label space {normal} ∪ minor, ascending by dataset id.
  Phase2Model p2;
  p2.labels.assign(group2_labels.begin(), group2_labels.end());
  std::map<Label, Label> to_compact;
  for (std::size_t i = 0; i < p2.labels.size(); ++i) to_compact[p2.labels[i]] = static_cast<Label>(i);

  auto compact = [&](const Dataset& d) {
    Dataset c;
    c.features = d.features;
    c.feature_names = d.feature_names;
    for (const auto& l : p2.labels) c.class_names.push_back(d.class_names[static_cast<std::size_t>(l)]);
    for (Label y : d.labels) c.labels.push_back(to_compact.at(y));
    return c;
  };

  Dataset balanced = downsample_majority(group2, partition.minor, opt.seed);
  p2.features = select_top_k(rank_features(compact(opt.rank_after_downsampling ? balanced : group2), opt.binning,
                                           opt.threads),
                             opt.k_features);
  const Dataset fit_on = compact(balanced);
  ForestConfig fc = forest;
  fc.threads = std::max(fc.threads, opt.threads);
  ClassifierSpec rf{classifiers::Kind::random_forest, fc.to_json(), fc.seed, {}};
  rf.hyperparameters["threads"] = fc.threads;
  p2.forest = classifiers::fit(rf, take_columns(fit_on.features, p2.features), fit_on.labels, p2.labels.size());
  m.phase2 = std::move(p2);
  return m;
}

// ---------------------------------------------------------------------------
// Combination sweep

struct Combination {
  std::string name;
  ClassifierSpec phase1;
};

/// Phase-1 learners paired with the Phase-2 forest, M1..M10. Entries without
/// a built-in learner use the external kind and need a registered factory.
inline std::vector<Combination> standard_combinations(std::uint64_t seed = 0) {
  using classifiers::Kind;
  auto spec = [seed](Kind k, std::string ext = {}) { return ClassifierSpec{k, json::object(), seed, std::move(ext)}; };
  return {{"M1", spec(Kind::logistic_regression)},
          {"M2", spec(Kind::gaussian_nb)},
          {"M3", spec(Kind::decision_tree)},
          {"M4", spec(Kind::external, "svm")},
          {"M5", spec(Kind::external, "gradient_boosting")},
          {"M6", spec(Kind::external, "bagging")},
          {"M7", spec(Kind::external, "adaboost")},
          {"M8", spec(Kind::external, "extra_trees")},
          {"M9", spec(Kind::mlp)},
          {"M10", spec(Kind::external, "xgboost")}};
}

inline std::optional<Combination> find_combination(const std::string& name, std::uint64_t seed = 0) {
  for (auto& c : standard_combinations(seed))
    if (c.name == name) return c;
  return std::nullopt;
}

struct CombinationResult {
  std::string name;
  metrics::EvaluationReport report;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double far = 0.0;

  static CombinationResult from_report(std::string name, metrics::EvaluationReport r) {
    CombinationResult c{std::move(name), std::move(r)};
    c.accuracy = c.report.accuracy;
    c.macro_f1 = c.report.macro_f1;
    c.far = c.report.far;
    return c;
  }
};

inline std::vector<CombinationResult> evaluate_combinations(const Dataset& train, const Dataset& test,
                                                            const std::vector<Combination>& combos,
                                                            const ClassPartition& partition, const ForestConfig& forest,
                                                            const DualNetOptions& opt = {},
                                                            const classifiers::ExternalRegistry* registry = nullptr,
                                                            std::vector<DualNetModel>* models = nullptr) {
  if (combos.empty()) throw ConfigError("no combination configured");
  std::vector<CombinationResult> out;
  for (const auto& c : combos) {
    DualNetModel m = train_dualnet(train, partition, c.phase1, forest, opt, registry);
    const Labels pred = m.predict(test.features);
    out.push_back(CombinationResult::from_report(
        c.name, metrics::evaluate(test.labels, pred, test.class_names, static_cast<std::size_t>(partition.normal))));
    if (models) models->push_back(std::move(m));
  }
  return out;
}

namespace detail {
/// M2 < M10: shorter names first, then lexicographic.
inline bool name_less(const std::string& a, const std::string& b) {
  return a.size() != b.size() ? a.size() < b.size() : a < b;
}
}  // namespace detail

/// Highest accuracy, then highest macro-F1, then lowest FAR, then name.
inline const CombinationResult& select_best(const std::vector<CombinationResult>& results) {
  if (results.empty()) throw ConfigError("no combination results to select from");
  const CombinationResult* best = &results.front();
  for (const auto& r : results) {
    if (r.accuracy != best->accuracy) {
      if (r.accuracy > best->accuracy) best = &r;
    } else if (r.macro_f1 != best->macro_f1) {
      if (r.macro_f1 > best->macro_f1) best = &r;
    } else if (r.far != best->far) {
      if (r.far < best->far) best = &r;
    } else if (detail::name_less(r.name, best->name)) {
      best = &r;
    }
  }
  return *best;
}

/// Table layout: model,accuracy,f1,precision,recall,far in percent. F1,
/// precision and recall are support-weighted averages.
inline void write_sweep_csv(std::ostream& out, const std::vector<CombinationResult>& results) {
  out << "model,accuracy,f1,precision,recall,far\n";
  for (const auto& r : results)
    out << r.name << ',' << metrics::percent(r.accuracy) << ',' << metrics::percent(r.report.weighted.f1) << ','
        << metrics::percent(r.report.weighted.precision) << ',' << metrics::percent(r.report.weighted.recall) << ','
        << metrics::percent(r.far) << '\n';
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_dualnet(const DualNetModel& m, const std::filesystem::path& dir, const std::string& name,
                         const std::vector<std::string>& class_names) {
  std::filesystem::create_directories(dir);
  json env = {{"schema_version", kSchemaVersion},
              {"name", name},
              {"partition", m.partition.to_json(class_names)},
              {"class_names", class_names},
              {"feature_count", m.feature_count},
              {"trust_phase1_minor", m.trust_phase1_minor},
              {"fingerprint", m.fingerprint},
              {"phase1", {{"features", m.phase1.features}, {"model", name + "_phase1.json"}}}};
  classifiers::save_classifier(m.phase1.classifier, dir / (name + "_phase1"), class_names);
  if (m.phase2) {
    std::vector<std::string> p2_names;
    for (Label l : m.phase2->labels) p2_names.push_back(class_names[static_cast<std::size_t>(l)]);
    classifiers::save_classifier(m.phase2->forest, dir / (name + "_phase2"), p2_names);
    env["phase2"] = {{"features", m.phase2->features}, {"labels", m.phase2->labels}, {"model", name + "_phase2.json"}};
  } else {
    env["phase2"] = nullptr;
    env["phase2_degenerate"] = true;
  }
  std::ofstream out(dir / (name + ".json"), std::ios::binary);
  if (!out) throw DataError("cannot write model envelope for " + name);
  out << env.dump(1) << '\n';
}

inline DualNetModel load_dualnet(const std::filesystem::path& envelope) {
  std::ifstream in(envelope, std::ios::binary);
  if (!in) throw DataError("cannot open '" + envelope.string() + "'");
  const json env = json::parse(in);
  const auto dir = envelope.parent_path();
  const auto names = env.at("class_names").get<std::vector<std::string>>();
  DualNetModel m;
  m.partition = ClassPartition::from_json(env.at("partition"), names);
  m.feature_count = env.at("feature_count").get<std::size_t>();
  m.class_count = names.size();
  m.trust_phase1_minor = env.at("trust_phase1_minor").get<bool>();
  m.fingerprint = env.at("fingerprint");
  m.phase1.features = env.at("phase1").at("features").get<IndexList>();
  m.phase1.classifier = classifiers::load_classifier(dir / env.at("phase1").at("model").get<std::string>());
  if (!env.at("phase2").is_null()) {
    Phase2Model p2;
    p2.features = env.at("phase2").at("features").get<IndexList>();
    p2.labels = env.at("phase2").at("labels").get<std::vector<Label>>();
    p2.forest = classifiers::load_classifier(dir / env.at("phase2").at("model").get<std::string>());
    m.phase2 = std::move(p2);
  }
  return m;
}

}  // namespace hybridguard::dualnet
