#pragma once

// Published dataset presets: class partitions, training counts, synthetic
// sample budgets, WCGAN-GP hyperparameters and the reference result rows.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "hybridguard/common.hpp"
#include "hybridguard/dualnet.hpp"
#include "hybridguard/wcgan.hpp"

namespace hybridguard::presets {

enum class Group { normal, major, minor };

struct ClassCount {
  std::string name;
  Group group;
  std::size_t train;      // rows in the 6:1 training split
  std::size_t augmented;  // after adding synthetic rows (minor classes only)
};

struct DatasetPreset {
  std::string key;
  std::string label_column;
  std::size_t total_rows = 0;
  std::size_t published_features = 0;  // as reported; may or may not count the label
  std::size_t synthetic_per_minor = 0;
  std::vector<ClassCount> classes;
  wcgan::GanConfig gan;
  std::string best_combination;

  std::string normal() const {
    for (const auto& c : classes)
      if (c.group == Group::normal) return c.name;
    throw ConfigError("preset without a normal class");
  }

  std::vector<std::string> names(Group g) const {
    std::vector<std::string> out;
    for (const auto& c : classes)
      if (c.group == g) out.push_back(c.name);
    return out;
  }

  /// Sorted, matching LabelEncoder ids.
  std::vector<std::string> class_names() const {
    std::vector<std::string> out;
    for (const auto& c : classes) out.push_back(c.name);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t train_rows() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.train;
    return n;
  }

  std::map<std::string, std::size_t> augmentation_plan() const {
    std::map<std::string, std::size_t> plan;
    for (const auto& c : classes)
      if (c.group == Group::minor) plan[c.name] = synthetic_per_minor;
    return plan;
  }

  dualnet::ClassPartition partition() const {
    return dualnet::partition_classes(class_names(), normal(), names(Group::major), names(Group::minor));
  }
};

namespace detail {
inline wcgan::GanConfig gan(std::size_t batch, double lr, double b1, double b2) {
  wcgan::GanConfig g;
  g.latent_dim = 64;
  g.batch_size = batch;
  g.n_critic = 5;
  g.gradient_penalty = 10.0;
  g.epochs = 1000;
  g.generator_adam = {lr, b1, b2, 1e-8};
  g.critic_adam = {lr, b1, b2, 1e-8};
  return g;
}
}  // namespace detail

inline const std::vector<DatasetPreset>& dataset_presets() {
  using G = Group;
  static const std::vector<DatasetPreset> all = [] {
    std::vector<DatasetPreset> v;

    DatasetPreset unsw;
    unsw.key = "unsw-nb15";
    unsw.label_column = "attack_cat";
    unsw.total_rows = 257673;
    unsw.published_features = 43;
    unsw.synthetic_per_minor = 4000;
    unsw.classes = {{"Normal", G::normal, 79673, 0},        {"Generic", G::major, 50488, 0},
                    {"Exploits", G::major, 38044, 0},       {"Fuzzers", G::major, 20830, 0},
                    {"DoS", G::major, 14077, 0},            {"Reconnaissance", G::major, 11984, 0},
                    {"Analysis", G::minor, 2292, 6292},     {"Backdoor", G::minor, 2017, 6017},
                    {"Shellcode", G::minor, 1309, 5309},    {"Worms", G::minor, 148, 4148}};
    // Published values; beta1/beta2 are unusually small for Adam.
    unsw.gan = detail::gan(128, 1e-4, 0.02, 0.009);
    unsw.best_combination = "M4";
    v.push_back(unsw);

    DatasetPreset cic;
    cic.key = "cic-ids2017";
    cic.label_column = "Label";
    cic.total_rows = 286552;
    cic.published_features = 78;
    cic.synthetic_per_minor = 4000;
    cic.classes = {{"BENIGN", G::normal, 194742, 0},
                   {"DoS Hulk", G::major, 19919, 0},
                   {"DDoS", G::major, 10858, 0},
                   {"PortScan", G::major, 13526, 0},
                   {"Bot", G::minor, 1677, 5677},
                   {"DoS GoldenEye", G::minor, 854, 4854},
                   {"DoS Slowhttptest", G::minor, 481, 4481},
                   {"DoS Slowloris", G::minor, 525, 4525},
                   {"FTP Patator", G::minor, 656, 4656},
                   {"Heartbleed", G::minor, 9, 4009},
                   {"Infiltration", G::minor, 31, 4031},
                   {"SSH Patator", G::minor, 469, 4469},
                   {"Web Attack - Brute Force", G::minor, 1292, 5292},
                   {"Web Attack - SQL Injection", G::minor, 18, 4018},
                   {"Web Attack - XSS", G::minor, 559, 4559}};
    cic.gan = detail::gan(256, 2e-4, 0.05, 0.9);
    cic.best_combination = "M2";
    v.push_back(cic);

    DatasetPreset iot;
    iot.key = "iotid20";
    iot.label_column = "Sub_Cat";
    iot.total_rows = 625783;
    iot.published_features = 82;
    iot.synthetic_per_minor = 12000;
    iot.classes = {{"Normal", G::normal, 34321, 0},
                   {"MiraiUDP_Flooding", G::major, 157384, 0},
                   {"DoSSynflooding", G::major, 51003, 0},
                   {"MiraiHostbruteforceg", G::major, 103892, 0},
                   {"MiraiAckflooding", G::major, 47211, 0},
                   {"MiraiHTTP_Flooding", G::major, 47769, 0},
                   {"Scan_Port_OS", G::major, 45477, 0},
                   {"Scan_Hostport", G::minor, 19022, 31022},
                   {"MITM_ARP_Spoofing", G::minor, 30306, 42306}};
    iot.gan = detail::gan(256, 2e-4, 0.05, 0.9);
    iot.best_combination = "M10";
    v.push_back(iot);
    return v;
  }();
  return all;
}

inline const DatasetPreset& dataset_preset(const std::string& key) {
  for (const auto& p : dataset_presets())
    if (p.key == key) return p;
  throw ConfigError("unknown dataset preset '" + key + "'");
}

/// A published result row, in percent.
struct PublishedRow {
  std::string model;
  double accuracy, f1, precision, recall, far;
};

/// Published two-phase results per combination, M1..M10, in percent.
inline std::vector<PublishedRow> published_combination_rows(const std::string& key) {
  if (key == "unsw-nb15")
    return {{"M1", 94.25, 95.29, 97.17, 94.25, 5.75},  {"M2", 76.49, 80.46, 92.44, 76.49, 11.94},
            {"M3", 91.46, 93.37, 96.75, 91.46, 12.99}, {"M4", 94.38, 95.46, 97.45, 94.38, 9.22},
            {"M5", 93.59, 94.74, 96.97, 93.59, 10.02}, {"M6", 91.29, 93.31, 96.85, 91.29, 14.03},
            {"M7", 93.65, 94.63, 96.65, 93.65, 7.29},  {"M8", 92.23, 94.00, 97.12, 92.23, 13.08},
            {"M9", 91.74, 93.48, 96.74, 91.74, 13.06}, {"M10", 92.08, 93.83, 96.96, 92.08, 13.09}};
  if (key == "cic-ids2017")
    return {{"M1", 58.74, 71.67, 97.42, 58.74, 46.19}, {"M2", 78.89, 86.36, 98.01, 78.89, 26.09},
            {"M3", 61.15, 72.75, 97.53, 61.15, 47.94}, {"M4", 58.75, 71.50, 97.45, 58.75, 47.01},
            {"M5", 60.62, 72.54, 97.43, 60.62, 47.62}, {"M6", 61.11, 72.72, 97.52, 61.11, 47.98},
            {"M7", 60.46, 72.60, 97.45, 60.46, 47.01}, {"M8", 61.14, 72.77, 97.53, 61.14, 47.84},
            {"M9", 62.61, 74.07, 97.51, 62.61, 45.85}, {"M10", 61.27, 72.84, 97.54, 61.27, 47.82}};
  if (key == "iotid20")
    return {{"M1", 97.1, 98.0, 98.4, 97.9, 0.1}, {"M2", 75.2, 74.9, 92.2, 75.2, 0.8},
            {"M3", 99.2, 99.2, 99.3, 99.2, 0.8}, {"M4", 98.4, 98.5, 98.7, 98.4, 0.2},
            {"M5", 99.4, 99.4, 99.5, 99.4, 0.2}, {"M6", 99.3, 99.3, 99.3, 99.3, 0.8},
            {"M7", 98.6, 98.6, 98.8, 98.6, 0.2}, {"M8", 99.1, 99.1, 99.2, 99.1, 0.7},
            {"M9", 98.6, 98.6, 98.8, 98.6, 0.5}, {"M10", 99.6, 99.6, 99.6, 99.6, 0.6}};
  throw ConfigError("unknown dataset preset '" + key + "'");
}

/// Rank keys only; the report is left empty.
inline std::vector<dualnet::CombinationResult> as_results(const std::vector<PublishedRow>& rows) {
  std::vector<dualnet::CombinationResult> out;
  for (const auto& r : rows) {
    dualnet::CombinationResult c;
    c.name = r.model;
    c.accuracy = r.accuracy / 100.0;
    c.macro_f1 = r.f1 / 100.0;
    c.far = r.far / 100.0;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace hybridguard::presets
