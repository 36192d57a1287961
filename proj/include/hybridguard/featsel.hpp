#pragma once

// Mutual-information feature ranking over equal-frequency discretization.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridguard/common.hpp"
#include "hybridguard/tabular.hpp"

namespace hybridguard {

struct BinningSpec {
  std::size_t bins = 10;

  void validate() const {
    if (bins < 2) throw ConfigError("MI binning needs at least 2 bins");
  }
};

struct FeatureScore {
  std::size_t index = 0;
  double mi_nats = 0.0;
};

struct FeatureRanking {
  std::vector<FeatureScore> scores;  // descending MI, ties by ascending index

  nlohmann::json to_json(const std::vector<std::string>& names) const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : scores)
      arr.push_back({{"index", s.index}, {"name", names.at(s.index)}, {"mi_nats", s.mi_nats}});
    return arr;
  }
};

/// Maps each value to a bin id. When a column has at most `bins` distinct
/// values every distinct value gets its own bin; otherwise bins follow rank
/// quantiles, and equal values always share a bin.
inline std::vector<std::size_t> equal_frequency_bins(std::span<const double> values, std::size_t bins) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::size_t distinct = 0;
  for (std::size_t r = 0; r < n; ++r)
    if (r == 0 || values[order[r]] != values[order[r - 1]]) ++distinct;

  std::vector<std::size_t> bin(n, 0);
  std::size_t current = 0;
  std::size_t first_rank = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const bool new_value = r == 0 || values[order[r]] != values[order[r - 1]];
    if (new_value) {
      if (distinct <= bins) {
        current = r == 0 ? 0 : current + 1;
      } else {
        first_rank = r;
        current = first_rank * bins / n;
      }
    }
    bin[order[r]] = current;
  }
  return bin;
}

/// MI of a contingency table given as joint counts [bin][class]; cells are
/// summed bins-major then classes ascending.
inline double mutual_information_from_counts(const std::vector<std::vector<std::size_t>>& joint) {
  std::size_t n = 0;
  std::vector<std::size_t> class_tot;
  std::vector<std::size_t> bin_tot(joint.size(), 0);
  for (std::size_t b = 0; b < joint.size(); ++b) {
    if (joint[b].size() > class_tot.size()) class_tot.resize(joint[b].size(), 0);
    for (std::size_t c = 0; c < joint[b].size(); ++c) {
      bin_tot[b] += joint[b][c];
      class_tot[c] += joint[b][c];
      n += joint[b][c];
    }
  }
  if (n == 0) return 0.0;
  const double nd = static_cast<double>(n);
  double mi = 0.0;
  for (std::size_t b = 0; b < joint.size(); ++b) {
    for (std::size_t c = 0; c < joint[b].size(); ++c) {
      const std::size_t nbc = joint[b][c];
      if (nbc == 0) continue;
      const double p = static_cast<double>(nbc) / nd;
      mi += p * std::log(static_cast<double>(nbc) * nd /
                         (static_cast<double>(bin_tot[b]) * static_cast<double>(class_tot[c])));
    }
  }
  return std::max(0.0, mi);
}

inline double estimate_mutual_information(std::span<const double> feature, std::span<const Label> labels,
                                          const BinningSpec& binning = {}) {
  binning.validate();
  if (feature.size() != labels.size())
    throw DataError("feature has " + std::to_string(feature.size()) + " values but " +
                    std::to_string(labels.size()) + " labels");
  if (feature.empty()) return 0.0;
  const auto bin = equal_frequency_bins(feature, binning.bins);
  const std::size_t n_bins = *std::max_element(bin.begin(), bin.end()) + 1;
  const std::size_t n_classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  std::vector<std::vector<std::size_t>> joint(n_bins, std::vector<std::size_t>(n_classes, 0));
  for (std::size_t i = 0; i < feature.size(); ++i) ++joint[bin[i]][static_cast<std::size_t>(labels[i])];
  return mutual_information_from_counts(joint);
}

/// Scores every column against the labels. Columns are scored independently
/// (optionally on `threads` workers) and assembled in index order.
inline FeatureRanking rank_features(const Dataset& data, const BinningSpec& binning = {}, unsigned threads = 1) {
  binning.validate();
  const std::size_t d = data.cols();
  std::vector<double> mi(d, 0.0);
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<double> col(data.rows());
    for (std::size_t j = begin; j < end; ++j) {
      for (std::size_t i = 0; i < data.rows(); ++i)
        col[i] = data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      mi[j] = estimate_mutual_information(col, data.labels, binning);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(d, 1))));
  if (threads == 1) {
    work(0, d);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (d + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(d, b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
  }
  FeatureRanking ranking;
  for (std::size_t j = 0; j < d; ++j) ranking.scores.push_back({j, mi[j]});
  std::stable_sort(ranking.scores.begin(), ranking.scores.end(), [](const FeatureScore& a, const FeatureScore& b) {
    if (a.mi_nats != b.mi_nats) return a.mi_nats > b.mi_nats;
    return a.index < b.index;
  });
  return ranking;
}

inline IndexList select_top_k(const FeatureRanking& ranking, std::size_t k) {
  if (k == 0) throw ConfigError("k_features must be at least 1");
  IndexList subset;
  for (std::size_t i = 0; i < std::min(k, ranking.scores.size()); ++i) subset.push_back(ranking.scores[i].index);
  return subset;
}

}  // namespace hybridguard
