#pragma once

// Labeled tabular data: CSV ingestion, cleaning, label encoding, scaling and
// the train/test split.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridguard/common.hpp"

namespace hybridguard {

/// Numeric feature matrix with encoded labels.
struct Dataset {
  Matrix features;
  Labels labels;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;

  std::size_t rows() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t num_classes() const { return class_names.size(); }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (Label y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }

  /// Throws DataError when any structural invariant is broken.
  void validate() const {
    if (labels.size() != rows())
      throw DataError("label count " + std::to_string(labels.size()) + " != row count " +
                      std::to_string(rows()));
    if (feature_names.size() != cols())
      throw DataError("feature name count does not match column count");
    std::set<std::string> names(feature_names.begin(), feature_names.end());
    if (names.size() != feature_names.size()) throw DataError("duplicate feature names");
    for (Label y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= class_names.size())
        throw DataError("label " + std::to_string(y) + " outside class dictionary");
  }

  Dataset take_rows(const IndexList& idx) const {
    Dataset out;
    out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
    out.labels.reserve(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(idx[i]));
      out.labels.push_back(labels[idx[i]]);
    }
    out.feature_names = feature_names;
    out.class_names = class_names;
    return out;
  }

  Dataset take_columns(const IndexList& cols_idx) const {
    Dataset out;
    out.features.resize(features.rows(), static_cast<Eigen::Index>(cols_idx.size()));
    for (std::size_t j = 0; j < cols_idx.size(); ++j) {
      out.features.col(static_cast<Eigen::Index>(j)) = features.col(static_cast<Eigen::Index>(cols_idx[j]));
      out.feature_names.push_back(feature_names[cols_idx[j]]);
    }
    out.labels = labels;
    out.class_names = class_names;
    return out;
  }

  /// Row indices of every sample whose label is in `keep`.
  IndexList rows_with_labels(const std::set<Label>& keep) const {
    IndexList idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (keep.count(labels[i])) idx.push_back(i);
    return idx;
  }
};

/// Appends `extra` below `base`. Both must share columns and class dictionary.
inline Dataset concat_rows(const Dataset& base, const Dataset& extra) {
  if (base.cols() != extra.cols() || base.class_names != extra.class_names)
    throw DataError("cannot concatenate datasets with different schemas");
  Dataset out;
  out.features.resize(base.features.rows() + extra.features.rows(), base.features.cols());
  out.features.topRows(base.features.rows()) = base.features;
  out.features.bottomRows(extra.features.rows()) = extra.features;
  out.labels = base.labels;
  out.labels.insert(out.labels.end(), extra.labels.begin(), extra.labels.end());
  out.feature_names = base.feature_names;
  out.class_names = base.class_names;
  return out;
}

// ---------------------------------------------------------------------------
// CSV

/// Result of reading a CSV before labels are encoded.
struct LoadedTable {
  Matrix features;
  std::vector<std::string> raw_labels;
  std::vector<std::string> feature_names;
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Splits RFC-4180 records. Quoted fields may contain separators, doubled
/// quotes and line breaks.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  bool next(std::vector<std::string>& fields) {
    fields.clear();
    if (in_.peek() == std::char_traits<char>::eof()) return false;
    std::string field;
    bool quoted = false;
    bool any = false;
    char c;
    while (in_.get(c)) {
      any = true;
      if (quoted) {
        if (c == '"') {
          if (in_.peek() == '"') {
            in_.get(c);
            field.push_back('"');
          } else {
            quoted = false;
          }
        } else {
          field.push_back(c);
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(std::move(field));
        field.clear();
      } else if (c == '\n') {
        break;
      } else if (c != '\r') {
        field.push_back(c);
      }
    }
    if (quoted) throw DataError("unterminated quoted field at record " + std::to_string(record_ + 1));
    fields.push_back(std::move(field));
    ++record_;
    return any;
  }

  std::size_t record() const { return record_; }

 private:
  std::istream& in_;
  std::size_t record_ = 0;
};

inline bool needs_quotes(std::string_view s) {
  return s.find_first_of(",\"\n\r") != std::string_view::npos;
}

inline std::string quote(std::string_view s) {
  if (!needs_quotes(s)) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

/// Parses one feature cell. Recognized missing/infinite tokens are mapped to
/// NaN / ±infinity; anything else non-numeric yields nullopt.
inline std::optional<double> parse_cell(std::string_view raw) {
  const std::string_view cell = detail::trim(raw);
  const std::string low = detail::lower(cell);
  if (low.empty() || low == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (low == "infinity" || low == "inf" || low == "+inf" || low == "+infinity")
    return std::numeric_limits<double>::infinity();
  if (low == "-infinity" || low == "-inf") return -std::numeric_limits<double>::infinity();
  std::string_view digits = cell;
  if (!digits.empty() && digits.front() == '+') digits.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size()) return std::nullopt;
  return value;
}

/// Column handling beyond plain numeric parsing.
struct CsvOptions {
  /// Nominal feature columns, ordinal-encoded in lexicographic order.
  std::set<std::string> categorical;
  /// Columns ignored entirely, e.g. row ids or a second label.
  std::set<std::string> drop;
};

inline LoadedTable load_csv(std::istream& in, const std::string& label_column, const CsvOptions& opt = {},
                            const std::string& source = "<stream>") {
  detail::CsvReader reader(in);
  std::vector<std::string> header;
  if (!reader.next(header)) throw DataError(source + ": missing header row");
  for (auto& h : header) h = std::string(detail::trim(h));

  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end())
    throw ConfigError(source + ": unknown label column '" + label_column + "'");
  const std::size_t label_idx = static_cast<std::size_t>(label_it - header.begin());
  for (const auto* names : {&opt.categorical, &opt.drop})
    for (const auto& n : *names)
      if (std::find(header.begin(), header.end(), n) == header.end() || n == label_column)
        throw ConfigError(source + ": cannot use column '" + n + "' as a categorical or dropped feature");

  enum class Role { label, numeric, categorical, dropped };
  std::vector<Role> role(header.size(), Role::numeric);
  LoadedTable table;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j == label_idx) role[j] = Role::label;
    else if (opt.drop.count(header[j])) role[j] = Role::dropped;
    else if (opt.categorical.count(header[j])) role[j] = Role::categorical;
    if (role[j] == Role::numeric || role[j] == Role::categorical) table.feature_names.push_back(header[j]);
  }
  const std::size_t d = table.feature_names.size();

  std::vector<double> values;
  std::vector<std::pair<std::size_t, std::string>> nominal;  // (flat index, raw)
  std::vector<std::string> fields;
  while (reader.next(fields)) {
    if (fields.size() == 1 && detail::trim(fields[0]).empty()) continue;  // blank line
    if (fields.size() != header.size())
      throw DataError(source + ": row " + std::to_string(reader.record() - 1) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(header.size()));
    for (std::size_t j = 0; j < fields.size(); ++j) {
      switch (role[j]) {
        case Role::label: table.raw_labels.emplace_back(detail::trim(fields[j])); break;
        case Role::dropped: break;
        case Role::categorical:
          nominal.emplace_back(values.size(), std::string(detail::trim(fields[j])));
          values.push_back(0.0);
          break;
        case Role::numeric: {
          const auto v = parse_cell(fields[j]);
          if (!v)
            throw DataError(source + ": non-numeric value '" + fields[j] + "' at row " +
                            std::to_string(reader.record() - 1) + ", column '" + header[j] + "'");
          values.push_back(*v);
        }
      }
    }
  }
  if (!nominal.empty()) {
    std::map<std::size_t, std::map<std::string, double>> codes;  // column -> category -> code
    for (const auto& [flat, raw] : nominal) codes[flat % d][raw] = 0.0;
    for (auto& [col, cats] : codes) {
      double next = 0.0;
      for (auto& [_, code] : cats) code = next++;
    }
    for (const auto& [flat, raw] : nominal) values[flat] = codes[flat % d][raw];
  }
  const auto n = static_cast<Eigen::Index>(table.raw_labels.size());
  table.features = Eigen::Map<Matrix>(values.data(), n, static_cast<Eigen::Index>(d));
  return table;
}

inline LoadedTable load_csv(const std::string& path, const std::string& label_column, const CsvOptions& opt = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return load_csv(in, label_column, opt, path);
}

/// Shortest representation that round-trips exactly.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "NaN";
  if (std::isinf(v)) return v > 0 ? "Infinity" : "-Infinity";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_csv(std::ostream& out, const Dataset& data, const std::string& label_column) {
  for (const auto& name : data.feature_names) out << detail::quote(name) << ',';
  out << detail::quote(label_column) << '\n';
  for (std::size_t i = 0; i < data.rows(); ++i) {
    for (std::size_t j = 0; j < data.cols(); ++j)
      out << format_double(data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << ',';
    out << detail::quote(data.class_names[static_cast<std::size_t>(data.labels[i])]) << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& data, const std::string& label_column) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(out, data, label_column);
}

// ---------------------------------------------------------------------------
// Label encoding

/// Bijection between category strings and {0..C-1}, ordered lexicographically.
class LabelEncoder {
 public:
  LabelEncoder() = default;

  explicit LabelEncoder(std::vector<std::string> categories) : classes_(std::move(categories)) {
    for (std::size_t i = 0; i < classes_.size(); ++i) {
      if (!index_.emplace(classes_[i], static_cast<Label>(i)).second)
        throw DataError("duplicate category '" + classes_[i] + "'");
    }
  }

  static LabelEncoder fit(const std::vector<std::string>& raw) {
    std::set<std::string> uniq(raw.begin(), raw.end());
    return LabelEncoder(std::vector<std::string>(uniq.begin(), uniq.end()));
  }

  Label encode(const std::string& category) const {
    const auto it = index_.find(category);
    if (it == index_.end()) throw DataError("unknown category '" + category + "'");
    return it->second;
  }

  Labels encode(const std::vector<std::string>& raw) const {
    Labels out;
    out.reserve(raw.size());
    for (const auto& s : raw) out.push_back(encode(s));
    return out;
  }

  const std::string& decode(Label y) const { return classes_.at(static_cast<std::size_t>(y)); }
  const std::vector<std::string>& classes() const { return classes_; }
  std::size_t size() const { return classes_.size(); }

  nlohmann::json to_json() const {
    nlohmann::json map = nlohmann::json::object();
    for (std::size_t i = 0; i < classes_.size(); ++i) map[classes_[i]] = i;
    return {{"schema_version", kSchemaVersion}, {"classes", classes_}, {"mapping", map}};
  }

  static LabelEncoder from_json(const nlohmann::json& j) {
    return LabelEncoder(j.at("classes").get<std::vector<std::string>>());
  }

 private:
  std::vector<std::string> classes_;
  std::map<std::string, Label> index_;
};

inline std::pair<Labels, LabelEncoder> encode_labels(const std::vector<std::string>& raw) {
  if (raw.empty()) throw DataError("cannot encode an empty label list");
  LabelEncoder enc = LabelEncoder::fit(raw);
  return {enc.encode(raw), std::move(enc)};
}

inline Dataset to_dataset(LoadedTable table, const LabelEncoder& encoder) {
  Dataset out;
  out.labels = encoder.encode(table.raw_labels);
  out.features = std::move(table.features);
  out.feature_names = std::move(table.feature_names);
  out.class_names = encoder.classes();
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Cleaning

enum class CleanPolicy { drop, impute_mean };

struct CleanReport {
  std::size_t rows_dropped_missing = 0;
  std::size_t rows_dropped_infinite = 0;
  std::size_t rows_dropped_outlier = 0;
  std::vector<std::string> columns_imputed;

  std::size_t total_dropped() const {
    return rows_dropped_missing + rows_dropped_infinite + rows_dropped_outlier;
  }

  nlohmann::json to_json() const {
    return {{"rows_dropped_missing", rows_dropped_missing},
            {"rows_dropped_infinite", rows_dropped_infinite},
            {"rows_dropped_outlier", rows_dropped_outlier},
            {"columns_imputed", columns_imputed}};
  }
};

namespace detail {

/// Leave-one-out z-score of every entry of `col`: each value is compared
/// against the mean and population deviation of the remaining values, so a
/// lone extreme value cannot mask itself by inflating the deviation.
inline Vector deleted_zscores(const Eigen::Ref<const Vector>& col) {
  const Eigen::Index n = col.size();
  Vector z = Vector::Zero(n);
  if (n < 2) return z;
  const double mean = col.mean();
  const double m2 = (col.array() - mean).square().sum();
  const double nd = static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double dev = col[i] - mean;
    const double rest_mean = (nd * mean - col[i]) / (nd - 1.0);
    const double rest_m2 = std::max(0.0, m2 - dev * dev * nd / (nd - 1.0));
    double rest_sd = n > 2 ? std::sqrt(rest_m2 / (nd - 2.0)) : 0.0;
    const double scale = 1e-12 * (std::abs(mean) + 1.0);
    const double diff = col[i] - rest_mean;
    if (std::abs(diff) <= scale) continue;
    if (rest_sd <= scale) rest_sd = 0.0;
    z[i] = rest_sd == 0.0 ? std::numeric_limits<double>::infinity() : std::abs(diff) / rest_sd;
  }
  return z;
}

}  // namespace detail

/// Removes or repairs missing and infinite cells and optionally drops rows
/// with any leave-one-out |z| above `outlier_zscore`.
inline std::pair<Dataset, CleanReport> clean(const Dataset& in, CleanPolicy policy,
                                             std::optional<double> outlier_zscore = std::nullopt) {
  if (outlier_zscore && !(*outlier_zscore > 0.0))
    throw ConfigError("outlier_zscore must be positive");
  CleanReport report;
  Dataset data = in;

  if (policy == CleanPolicy::drop) {
    IndexList keep;
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const auto row = data.features.row(static_cast<Eigen::Index>(i));
      if (row.array().isNaN().any()) {
        ++report.rows_dropped_missing;
      } else if (row.array().isInf().any()) {
        ++report.rows_dropped_infinite;
      } else {
        keep.push_back(i);
      }
    }
    if (keep.size() != data.rows()) data = data.take_rows(keep);
  } else {
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      auto col = data.features.col(j);
      double sum = 0.0;
      std::size_t n = 0;
      bool bad = false;
      for (Eigen::Index i = 0; i < col.size(); ++i) {
        if (std::isfinite(col[i])) {
          sum += col[i];
          ++n;
        } else {
          bad = true;
        }
      }
      if (!bad) continue;
      if (n == 0)
        throw DataError("column '" + data.feature_names[static_cast<std::size_t>(j)] +
                        "' has no finite value to impute from");
      const double mean = sum / static_cast<double>(n);
      for (Eigen::Index i = 0; i < col.size(); ++i)
        if (!std::isfinite(col[i])) col[i] = mean;
      report.columns_imputed.push_back(data.feature_names[static_cast<std::size_t>(j)]);
    }
  }

  if (outlier_zscore && data.rows() > 1) {
    std::vector<bool> outlier(data.rows(), false);
    for (Eigen::Index j = 0; j < data.features.cols(); ++j) {
      const Vector col = data.features.col(j);
      const Vector z = detail::deleted_zscores(col);
      for (Eigen::Index i = 0; i < z.size(); ++i)
        if (z[i] > *outlier_zscore) outlier[static_cast<std::size_t>(i)] = true;
    }
    IndexList keep;
    for (std::size_t i = 0; i < outlier.size(); ++i)
      if (!outlier[i]) keep.push_back(i);
    report.rows_dropped_outlier = data.rows() - keep.size();
    if (keep.size() != data.rows()) data = data.take_rows(keep);
  }
  return {std::move(data), std::move(report)};
}

// ---------------------------------------------------------------------------
// Scaling

enum class ScaleMethod { standardize, l2_normalize, minmax_symmetric };

inline std::string to_string(ScaleMethod m) {
  switch (m) {
    case ScaleMethod::standardize: return "standardize";
    case ScaleMethod::l2_normalize: return "l2_normalize";
    case ScaleMethod::minmax_symmetric: return "minmax_symmetric";
  }
  return "?";
}

inline ScaleMethod parse_scale_method(const std::string& s) {
  if (s == "standardize") return ScaleMethod::standardize;
  if (s == "l2_normalize") return ScaleMethod::l2_normalize;
  if (s == "minmax_symmetric") return ScaleMethod::minmax_symmetric;
  throw ConfigError("unknown scaler method '" + s + "'");
}

struct ScalerModel {
  ScaleMethod method = ScaleMethod::standardize;
  Vector mean;  // standardize
  Vector std;   // standardize; constant columns hold 1
  Vector min;   // minmax_symmetric
  Vector max;

  static ScalerModel fit(const Matrix& x, ScaleMethod method) {
    ScalerModel s;
    s.method = method;
    if (!x.allFinite()) throw DataError("cannot fit scaler on non-finite data; clean first");
    if (x.rows() == 0) throw DataError("cannot fit scaler on an empty dataset");
    const Eigen::Index d = x.cols();
    if (method == ScaleMethod::standardize) {
      s.mean = x.colwise().mean().transpose();
      s.std.resize(d);
      for (Eigen::Index j = 0; j < d; ++j) {
        const double var = (x.col(j).array() - s.mean[j]).square().mean();
        s.std[j] = var > 0.0 ? std::sqrt(var) : 1.0;
      }
    } else if (method == ScaleMethod::minmax_symmetric) {
      s.min = x.colwise().minCoeff().transpose();
      s.max = x.colwise().maxCoeff().transpose();
    }
    return s;
  }

  Matrix transform(const Matrix& x) const {
    Matrix out = x;
    switch (method) {
      case ScaleMethod::standardize:
        check_width(x);
        for (Eigen::Index j = 0; j < x.cols(); ++j)
          out.col(j) = (x.col(j).array() - mean[j]) / std[j];
        break;
      case ScaleMethod::l2_normalize:
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          const double norm = x.row(i).norm();
          if (norm > 0.0) out.row(i) /= norm;
        }
        break;
      case ScaleMethod::minmax_symmetric:
        check_width(x);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
          const double range = max[j] - min[j];
          if (range > 0.0)
            out.col(j) = 2.0 * (x.col(j).array() - min[j]) / range - 1.0;
          else
            out.col(j).setZero();
        }
        break;
    }
    return out;
  }

  Matrix inverse_transform(const Matrix& x) const {
    Matrix out = x;
    switch (method) {
      case ScaleMethod::standardize:
        check_width(x);
        for (Eigen::Index j = 0; j < x.cols(); ++j) out.col(j) = x.col(j).array() * std[j] + mean[j];
        break;
      case ScaleMethod::l2_normalize:
        throw ConfigError("l2_normalize cannot be inverted: row norms are discarded");
      case ScaleMethod::minmax_symmetric:
        check_width(x);
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
          const double range = max[j] - min[j];
          out.col(j) = (x.col(j).array() + 1.0) * 0.5 * range + min[j];
        }
        break;
    }
    return out;
  }

  Dataset transform(const Dataset& d) const {
    Dataset out = d;
    out.features = transform(d.features);
    return out;
  }

  Dataset inverse_transform(const Dataset& d) const {
    Dataset out = d;
    out.features = inverse_transform(d.features);
    return out;
  }

  nlohmann::json to_json() const {
    auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    nlohmann::json j = {{"schema_version", kSchemaVersion}, {"method", to_string(method)}};
    if (method == ScaleMethod::standardize) {
      j["per_feature_mean"] = vec(mean);
      j["per_feature_std"] = vec(std);
    } else if (method == ScaleMethod::minmax_symmetric) {
      j["per_feature_min"] = vec(min);
      j["per_feature_max"] = vec(max);
    }
    return j;
  }

  static ScalerModel from_json(const nlohmann::json& j) {
    auto vec = [](const nlohmann::json& a) {
      const auto v = a.get<std::vector<double>>();
      return Vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    ScalerModel s;
    s.method = parse_scale_method(j.at("method").get<std::string>());
    if (s.method == ScaleMethod::standardize) {
      s.mean = vec(j.at("per_feature_mean"));
      s.std = vec(j.at("per_feature_std"));
    } else if (s.method == ScaleMethod::minmax_symmetric) {
      s.min = vec(j.at("per_feature_min"));
      s.max = vec(j.at("per_feature_max"));
    }
    return s;
  }

 private:
  void check_width(const Matrix& x) const {
    const Eigen::Index d = method == ScaleMethod::standardize ? mean.size() : min.size();
    if (x.cols() != d) throw DataError("scaler fitted on " + std::to_string(d) + " features, got " +
                                       std::to_string(x.cols()));
  }
};

inline ScalerModel fit_scaler(const Dataset& data, ScaleMethod method) {
  return ScalerModel::fit(data.features, method);
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitOptions {
  std::size_t train_parts = 6;
  std::size_t test_parts = 1;
  std::uint64_t seed = 0;
  bool stratified = false;
};

inline std::size_t train_size_for(std::size_t n, std::size_t train_parts, std::size_t test_parts) {
  return n * train_parts / (train_parts + test_parts);
}

/// Seeded shuffle followed by a prefix split. In stratified mode the same rule
/// is applied inside every class and the pieces are concatenated in class order.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& data, const SplitOptions& opt) {
  if (data.rows() == 0) throw DataError("cannot split an empty dataset");
  if (opt.train_parts == 0 || opt.test_parts == 0) throw ConfigError("split parts must be positive");
  Rng rng = make_rng(opt.seed, 0x5b1u);
  IndexList train_idx, test_idx;
  auto split_group = [&](IndexList idx) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_train = train_size_for(idx.size(), opt.train_parts, opt.test_parts);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test_idx.insert(test_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  };
  if (opt.stratified) {
    for (std::size_t c = 0; c < data.num_classes(); ++c)
      split_group(data.rows_with_labels({static_cast<Label>(c)}));
  } else {
    IndexList all(data.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    split_group(std::move(all));
  }
  return {data.take_rows(train_idx), data.take_rows(test_idx)};
}

}  // namespace hybridguard
