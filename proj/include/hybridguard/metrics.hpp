#pragma once

// Confusion matrices and detection rates at binary (attack vs normal) and
// multi-class granularity.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridguard/common.hpp"

namespace hybridguard::metrics {

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes, std::vector<std::string> names = {})
      : n_(classes), counts_(classes * classes, 0), names_(std::move(names)) {
    if (names_.empty())
      for (std::size_t c = 0; c < classes; ++c) names_.push_back(std::to_string(c));
    if (names_.size() != classes) throw DataError("class name count does not match class count");
  }

  std::size_t classes() const { return n_; }
  std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * n_ + pred]; }
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  const std::vector<std::string>& names() const { return names_; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t c = 0; c < n_; ++c) t += at(c, c);
    return t;
  }
  std::uint64_t row_sum(std::size_t c) const {
    std::uint64_t t = 0;
    for (std::size_t j = 0; j < n_; ++j) t += at(c, j);
    return t;
  }
  std::uint64_t col_sum(std::size_t c) const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += at(i, c);
    return t;
  }

  bool operator==(const ConfusionMatrix&) const = default;

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < n_; ++i) {
      std::vector<std::uint64_t> r(counts_.begin() + static_cast<std::ptrdiff_t>(i * n_),
                                   counts_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_));
      rows.push_back(r);
    }
    return {{"classes", names_}, {"counts", rows}};
  }

  /// Header row and first column carry class names (row = truth).
  void write_csv(std::ostream& out) const {
    out << "true\\pred";
    for (const auto& n : names_) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < n_; ++i) {
      out << names_[i];
      for (std::size_t j = 0; j < n_; ++j) out << ',' << at(i, j);
      out << '\n';
    }
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::uint64_t> counts_;
  std::vector<std::string> names_;
};

inline ConfusionMatrix confusion_matrix(const Labels& truth, const Labels& pred, std::size_t classes,
                                        std::vector<std::string> names = {}) {
  if (truth.size() != pred.size())
    throw DataError("confusion_matrix: " + std::to_string(truth.size()) + " truths vs " +
                    std::to_string(pred.size()) + " predictions");
  ConfusionMatrix m(classes, std::move(names));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || pred[i] < 0 || static_cast<std::size_t>(truth[i]) >= classes ||
        static_cast<std::size_t>(pred[i]) >= classes)
      throw DataError("confusion_matrix: label out of range at row " + std::to_string(i));
    ++m.at(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(pred[i]));
  }
  return m;
}

/// Positive class = attack.
struct BinaryCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const BinaryCounts&) const = default;
};

inline BinaryCounts collapse_to_binary(const ConfusionMatrix& m, std::size_t normal_class) {
  if (normal_class >= m.classes()) throw DataError("normal class index out of range");
  BinaryCounts b;
  for (std::size_t i = 0; i < m.classes(); ++i) {
    for (std::size_t j = 0; j < m.classes(); ++j) {
      const auto c = m.at(i, j);
      const bool attack_truth = i != normal_class, attack_pred = j != normal_class;
      if (attack_truth && attack_pred) b.tp += c;
      else if (attack_truth) b.fn += c;
      else if (attack_pred) b.fp += c;
      else b.tn += c;
    }
  }
  return b;
}

/// Rate with zero-denominator tracking; degenerate rates are reported as 0.
struct Rate {
  double value = 0.0;
  bool degenerate = false;
};

inline Rate ratio(double num, double den) {
  if (den == 0.0) return {0.0, true};
  return {num / den, false};
}

inline Rate harmonic(double p, double r) {
  if (p + r == 0.0) return {0.0, true};
  return {2.0 * p * r / (p + r), false};
}

struct Rates {
  Rate accuracy, precision, recall, f1, far;
};

inline Rates compute_rates(const BinaryCounts& c) {
  Rates r;
  r.accuracy = ratio(static_cast<double>(c.tp + c.tn), static_cast<double>(c.total()));
  r.precision = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
  r.recall = ratio(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  r.f1 = harmonic(r.precision.value, r.recall.value);
  r.far = ratio(static_cast<double>(c.fp), static_cast<double>(c.fp + c.tn));
  return r;
}

struct ClassScores {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::uint64_t support = 0;
};

/// One-vs-rest precision/recall/F1 for every class.
inline std::vector<ClassScores> per_class(const ConfusionMatrix& m) {
  std::vector<ClassScores> out(m.classes());
  for (std::size_t c = 0; c < m.classes(); ++c) {
    const double tp = static_cast<double>(m.at(c, c));
    out[c].precision = ratio(tp, static_cast<double>(m.col_sum(c))).value;
    out[c].recall = ratio(tp, static_cast<double>(m.row_sum(c))).value;
    out[c].f1 = harmonic(out[c].precision, out[c].recall).value;
    out[c].support = m.row_sum(c);
  }
  return out;
}

inline double macro_f1(const ConfusionMatrix& m) {
  if (m.classes() == 0) return 0.0;
  double s = 0.0;
  for (const auto& c : per_class(m)) s += c.f1;
  return s / static_cast<double>(m.classes());
}

struct Averages {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

inline Averages macro_metrics(const ConfusionMatrix& m) {
  Averages a;
  const auto pc = per_class(m);
  for (const auto& c : pc) {
    a.precision += c.precision;
    a.recall += c.recall;
    a.f1 += c.f1;
  }
  if (!pc.empty()) {
    const double k = static_cast<double>(pc.size());
    a.precision /= k;
    a.recall /= k;
    a.f1 /= k;
  }
  return a;
}

inline Averages weighted_metrics(const ConfusionMatrix& m) {
  Averages a;
  const double total = static_cast<double>(m.total());
  if (total == 0.0) return a;
  for (const auto& c : per_class(m)) {
    const double w = static_cast<double>(c.support) / total;
    a.precision += w * c.precision;
    a.recall += w * c.recall;
    a.f1 += w * c.f1;
  }
  return a;
}

/// Mean recall over a subset of classes, e.g. the minority attacks.
inline double mean_recall(const ConfusionMatrix& m, const std::vector<std::size_t>& classes) {
  if (classes.empty()) return 0.0;
  const auto pc = per_class(m);
  double s = 0.0;
  for (auto c : classes) s += pc.at(c).recall;
  return s / static_cast<double>(classes.size());
}

struct EvaluationReport {
  ConfusionMatrix confusion;
  std::size_t normal_class = 0;
  BinaryCounts binary;
  Rates binary_rates;
  double accuracy = 0.0;  // multi-class, trace / total
  double far = 0.0;
  double macro_f1 = 0.0;
  Averages macro;
  Averages weighted;
  std::vector<ClassScores> classes;

  nlohmann::json to_json() const {
    auto rate = [](const Rate& r) { return nlohmann::json{{"value", r.value}, {"degenerate", r.degenerate}}; };
    nlohmann::json per = nlohmann::json::array();
    for (std::size_t c = 0; c < classes.size(); ++c)
      per.push_back({{"class", confusion.names()[c]},
                     {"precision", classes[c].precision},
                     {"recall", classes[c].recall},
                     {"f1", classes[c].f1},
                     {"support", classes[c].support}});
    return {{"schema_version", kSchemaVersion},
            {"confusion_matrix", confusion.to_json()},
            {"normal_class", confusion.names()[normal_class]},
            {"binary",
             {{"tp", binary.tp},
              {"fp", binary.fp},
              {"tn", binary.tn},
              {"fn", binary.fn},
              {"accuracy", rate(binary_rates.accuracy)},
              {"precision", rate(binary_rates.precision)},
              {"recall", rate(binary_rates.recall)},
              {"f1", rate(binary_rates.f1)},
              {"far", rate(binary_rates.far)}}},
            {"accuracy", accuracy},
            {"far", far},
            {"macro_f1", macro_f1},
            {"macro", {{"precision", macro.precision}, {"recall", macro.recall}, {"f1", macro.f1}}},
            {"weighted", {{"precision", weighted.precision}, {"recall", weighted.recall}, {"f1", weighted.f1}}},
            {"per_class", per}};
  }
};

inline EvaluationReport evaluate(const Labels& truth, const Labels& pred, const std::vector<std::string>& class_names,
                                 std::size_t normal_class) {
  EvaluationReport r;
  r.confusion = confusion_matrix(truth, pred, class_names.size(), class_names);
  r.normal_class = normal_class;
  r.binary = collapse_to_binary(r.confusion, normal_class);
  r.binary_rates = compute_rates(r.binary);
  r.accuracy = ratio(static_cast<double>(r.confusion.trace()), static_cast<double>(r.confusion.total())).value;
  r.far = r.binary_rates.far.value;
  r.classes = per_class(r.confusion);
  r.macro = macro_metrics(r.confusion);
  r.macro_f1 = r.macro.f1;
  r.weighted = weighted_metrics(r.confusion);
  return r;
}

/// Percent with two decimals, as used in the exported result tables.
inline std::string percent(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << std::round(v * 10000.0) / 100.0;
  return os.str();
}

}  // namespace hybridguard::metrics
