#pragma once

// End-to-end stages behind the command-line tool. Every stage reads its
// inputs from the output directory, writes its artifacts there and records
// hashes and timings in manifest.json.

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "hybridguard/classifiers.hpp"
#include "hybridguard/common.hpp"
#include "hybridguard/dualnet.hpp"
#include "hybridguard/featsel.hpp"
#include "hybridguard/metrics.hpp"
#include "hybridguard/presets.hpp"
#include "hybridguard/tabular.hpp"
#include "hybridguard/wcgan.hpp"

namespace hybridguard::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kLibraryVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Strict JSON reading

/// Object view that remembers which keys were read so leftovers can be
/// rejected as typos.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_null() && !obj_.is_object()) throw ConfigError(path_ + " must be an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.is_object() && obj_.contains(key) && !obj_.at(key).is_null();
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    try {
      return obj_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  const json& raw(const std::string& key) {
    static const json null;
    return has(key) ? obj_.at(key) : null;
  }

  std::string child(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    if (!obj_.is_object()) return;
    for (const auto& [k, _] : obj_.items())
      if (!seen_.count(k)) throw ConfigError("unknown key '" + path_ + "." + k + "'");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

inline neural::AdamConfig parse_adam(const json& j, const std::string& path, neural::AdamConfig a) {
  Section s(j, path);
  a.learning_rate = s.get("learning_rate", a.learning_rate);
  a.beta1 = s.get("beta1", a.beta1);
  a.beta2 = s.get("beta2", a.beta2);
  a.epsilon = s.get("epsilon", a.epsilon);
  s.finish();
  return a;
}

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  std::string preset;  // empty = none

  // data
  std::string input;  // raw file split by preprocess
  std::string train_file, test_file;  // or an existing split
  std::string label_column = "label";
  std::vector<std::string> categorical, dropped;

  // preprocess
  CleanPolicy clean_policy = CleanPolicy::drop;
  std::optional<double> outlier_zscore;
  std::vector<ScaleMethod> scaling{ScaleMethod::standardize};
  SplitOptions split;

  // gan
  wcgan::GanConfig gan;
  std::vector<std::string> gan_classes;  // empty = every class
  std::size_t checkpoint_every = 50;
  std::map<std::string, std::size_t> augmentation;

  // detection
  std::string normal_class;
  std::vector<std::string> major_classes, minor_classes;
  std::optional<double> minor_threshold;
  std::vector<std::string> combinations{"M1", "M2", "M3", "M9"};
  std::map<std::string, json> phase1_hyperparameters;
  classifiers::ForestConfig forest;
  dualnet::DualNetOptions detect;
  bool train_on_augmented = true;
  bool single_model_baseline = true;

  fs::path out_dir = "hybridguard-out";
  std::uint64_t seed = 0;
  unsigned threads = 1;

  /// Unknown keys anywhere raise ConfigError.
  static PipelineConfig parse(const json& root) {
    PipelineConfig c;
    Section top(root, "config");
    top.get<int>("schema_version", kSchemaVersion);
    c.preset = top.get<std::string>("preset", "");
    if (!c.preset.empty()) c.apply_preset(presets::dataset_preset(c.preset));
    c.seed = top.get("seed", c.seed);
    c.threads = top.get("threads", c.threads);
    c.out_dir = top.get<std::string>("out_dir", c.out_dir.string());

    {
      Section s(top.raw("data"), "config.data");
      c.input = s.get("input", c.input);
      c.train_file = s.get("train", c.train_file);
      c.test_file = s.get("test", c.test_file);
      c.label_column = s.get("label_column", c.label_column);
      c.categorical = s.get("categorical", c.categorical);
      c.dropped = s.get("drop", c.dropped);
      s.finish();
    }
    {
      Section s(top.raw("clean"), "config.clean");
      const auto policy = s.get<std::string>("policy", "drop");
      if (policy == "drop") c.clean_policy = CleanPolicy::drop;
      else if (policy == "impute_mean") c.clean_policy = CleanPolicy::impute_mean;
      else throw ConfigError("config.clean.policy must be 'drop' or 'impute_mean'");
      if (s.has("outlier_zscore")) c.outlier_zscore = s.get("outlier_zscore", 0.0);
      s.finish();
    }
    if (top.has("scaling")) {
      c.scaling.clear();
      for (const auto& m : top.get<std::vector<std::string>>("scaling", {})) c.scaling.push_back(parse_scale_method(m));
    }
    {
      Section s(top.raw("split"), "config.split");
      c.split.train_parts = s.get("train_parts", c.split.train_parts);
      c.split.test_parts = s.get("test_parts", c.split.test_parts);
      c.split.stratified = s.get("stratified", c.split.stratified);
      if (s.has("seed")) c.split_seed = s.get<std::uint64_t>("seed", 0);
      s.finish();
    }
    {
      Section s(top.raw("gan"), "config.gan");
      auto& g = c.gan;
      g.latent_dim = s.get("latent_dim", g.latent_dim);
      g.batch_size = s.get("batch_size", g.batch_size);
      g.n_critic = s.get("n_critic", g.n_critic);
      g.gradient_penalty = s.get("gradient_penalty", g.gradient_penalty);
      g.epochs = s.get("epochs", g.epochs);
      g.generator_layers = s.get("generator_layers", g.generator_layers);
      g.critic_layers = s.get("critic_layers", g.critic_layers);
      g.dropout = s.get("dropout", g.dropout);
      g.leaky_slope = s.get("leaky_slope", g.leaky_slope);
      if (s.has("adam")) g.generator_adam = g.critic_adam = parse_adam(s.raw("adam"), s.child("adam"), g.critic_adam);
      if (s.has("generator_adam"))
        g.generator_adam = parse_adam(s.raw("generator_adam"), s.child("generator_adam"), g.generator_adam);
      if (s.has("critic_adam")) g.critic_adam = parse_adam(s.raw("critic_adam"), s.child("critic_adam"), g.critic_adam);
      c.gan_classes = s.get("classes", c.gan_classes);
      c.checkpoint_every = s.get("checkpoint_every", c.checkpoint_every);
      if (s.has("seed")) c.gan_seed = s.get<std::uint64_t>("seed", 0);
      s.finish();
    }
    if (top.has("augmentation")) {
      Section s(top.raw("augmentation"), "config.augmentation");
      c.augmentation = s.get("plan", c.augmentation);
      s.finish();
    }
    {
      Section s(top.raw("partition"), "config.partition");
      c.normal_class = s.get("normal", c.normal_class);
      if (s.has("major")) c.major_classes = s.get("major", c.major_classes);
      if (s.has("minor")) c.minor_classes = s.get("minor", c.minor_classes);
      if (s.has("threshold")) c.minor_threshold = s.get("threshold", 0.0);
      s.finish();
    }
    {
      Section s(top.raw("detect"), "config.detect");
      c.combinations = s.get("combinations", c.combinations);
      c.phase1_hyperparameters = s.get("hyperparameters", c.phase1_hyperparameters);
      c.detect.k_features = s.get("k_features", c.detect.k_features);
      c.detect.binning.bins = s.get("mi_bins", c.detect.binning.bins);
      c.detect.trust_phase1_minor = s.get("trust_phase1_minor", c.detect.trust_phase1_minor);
      c.detect.rank_after_downsampling = s.get("rank_after_downsampling", c.detect.rank_after_downsampling);
      c.train_on_augmented = s.get("train_on_augmented", c.train_on_augmented);
      c.single_model_baseline = s.get("single_model_baseline", c.single_model_baseline);
      if (s.has("forest")) c.forest_json = s.raw("forest");
      s.finish();
    }
    top.finish();
    c.resolve();
    return c;
  }

  /// Applies overrides and derives per-stage seeds; call after editing fields.
  void resolve() {
    split.seed = split_seed.value_or(seed);
    gan.seed = gan_seed.value_or(seed);
    detect.seed = seed;
    forest = classifiers::ForestConfig::parse(forest_json, seed);
    forest.threads = threads;
    detect.threads = threads;
    validate();
  }

  void validate() const {
    if (input.empty() && (train_file.empty() || test_file.empty()))
      throw ConfigError("config.data needs 'input' or both 'train' and 'test'");
    if (!input.empty() && (!train_file.empty() || !test_file.empty()))
      throw ConfigError("config.data takes either 'input' or 'train'/'test', not both");
    if (label_column.empty()) throw ConfigError("config.data.label_column is empty");
    if (scaling.empty()) throw ConfigError("config.scaling needs at least one method");
    if (split.train_parts == 0 || split.test_parts == 0) throw ConfigError("config.split parts must be positive");
    gan.validate();
    if (checkpoint_every == 0) throw ConfigError("config.gan.checkpoint_every must be positive");
    if (normal_class.empty()) throw ConfigError("config.partition.normal is required");
    if (minor_threshold && !minor_classes.empty())
      throw ConfigError("config.partition takes either 'threshold' or explicit lists");
    if (combinations.empty()) throw ConfigError("no combination configured");
    for (const auto& name : combinations)
      if (!dualnet::find_combination(name)) throw ConfigError("unknown combination '" + name + "'");
    for (const auto& [name, _] : phase1_hyperparameters)
      if (std::find(combinations.begin(), combinations.end(), name) == combinations.end())
        throw ConfigError("hyperparameters given for unconfigured combination '" + name + "'");
    if (detect.k_features == 0) throw ConfigError("config.detect.k_features must be at least 1");
    detect.binning.validate();
    if (threads == 0) throw ConfigError("threads must be at least 1");
  }

  void apply_preset(const presets::DatasetPreset& p) {
    label_column = p.label_column;
    gan = p.gan;
    augmentation = p.augmentation_plan();
    normal_class = p.normal();
    major_classes = p.names(presets::Group::major);
    minor_classes = p.names(presets::Group::minor);
  }

  std::vector<dualnet::Combination> combination_specs() const {
    std::vector<dualnet::Combination> out;
    for (const auto& name : combinations) {
      auto c = *dualnet::find_combination(name, seed);
      if (const auto it = phase1_hyperparameters.find(name); it != phase1_hyperparameters.end())
        c.phase1.hyperparameters = it->second;
      out.push_back(std::move(c));
    }
    return out;
  }

  json to_json() const {
    std::vector<std::string> scale_names;
    for (auto m : scaling) scale_names.push_back(to_string(m));
    json hp = json::object();
    for (const auto& [k, v] : phase1_hyperparameters) hp[k] = v;
    json part = {{"normal", normal_class}, {"major", major_classes}, {"minor", minor_classes}};
    if (minor_threshold) part["threshold"] = *minor_threshold;
    json j = {{"schema_version", kSchemaVersion},
              {"preset", preset},
              {"data",
               {{"input", input},
                {"train", train_file},
                {"test", test_file},
                {"label_column", label_column},
                {"categorical", categorical},
                {"drop", dropped}}},
              {"clean",
               {{"policy", clean_policy == CleanPolicy::drop ? "drop" : "impute_mean"},
                {"outlier_zscore", outlier_zscore ? json(*outlier_zscore) : json(nullptr)}}},
              {"scaling", scale_names},
              {"split",
               {{"train_parts", split.train_parts},
                {"test_parts", split.test_parts},
                {"stratified", split.stratified},
                {"seed", split.seed}}},
              {"gan", gan.to_json()},
              {"augmentation", {{"plan", augmentation}}},
              {"partition", part},
              {"detect",
               {{"combinations", combinations},
                {"hyperparameters", hp},
                {"k_features", detect.k_features},
                {"mi_bins", detect.binning.bins},
                {"trust_phase1_minor", detect.trust_phase1_minor},
                {"rank_after_downsampling", detect.rank_after_downsampling},
                {"train_on_augmented", train_on_augmented},
                {"single_model_baseline", single_model_baseline},
                {"forest", forest.to_json()}}},
              {"seed", seed},
              {"threads", threads}};
    j["gan"]["classes"] = gan_classes;
    j["gan"]["checkpoint_every"] = checkpoint_every;
    return j;
  }

  std::optional<std::uint64_t> split_seed, gan_seed;
  json forest_json = json::object();
};

inline PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return PipelineConfig::parse(j);
}

// ---------------------------------------------------------------------------
// Files, hashes and the manifest

inline std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot hash missing file '" + path.string() + "'");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

/// Write to a sibling temp file then rename over the target.
inline void write_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = fs::path(path).concat(".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out.flush()) throw DataError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline void write_json(const fs::path& path, const json& j) { write_atomically(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing artifact '" + path.string() + "'; run the upstream stage first");
  return json::parse(in);
}

inline void require(const fs::path& path, const std::string& stage) {
  if (!fs::exists(path))
    throw DataError("missing artifact '" + path.filename().string() + "'; run '" + stage + "' first");
}

struct Layout {
  fs::path dir;
  fs::path manifest() const { return dir / "manifest.json"; }
  fs::path train() const { return dir / "train.csv"; }
  fs::path test() const { return dir / "test.csv"; }
  fs::path labels() const { return dir / "label_encoder.json"; }
  fs::path scalers() const { return dir / "scalers.json"; }
  fs::path clean_report() const { return dir / "clean_report.json"; }
  fs::path gan() const { return dir / "gan.bin"; }
  fs::path gan_checkpoint() const { return dir / "gan_checkpoint.bin"; }
  fs::path gan_loss() const { return dir / "gan_loss.csv"; }
  fs::path gan_epochs() const { return dir / "gan_epochs.csv"; }
  fs::path synthetic() const { return dir / "synthetic.csv"; }
  fs::path augmented() const { return dir / "train_augmented.csv"; }
  fs::path models() const { return dir / "models"; }
  fs::path reports() const { return dir / "reports"; }
};

/// Label column name used in every intermediate CSV.
inline constexpr const char* kLabelColumn = "label";

class Manifest {
 public:
  Manifest(const PipelineConfig& cfg) : layout_{cfg.out_dir} {
    if (fs::exists(layout_.manifest())) doc_ = read_json(layout_.manifest());
    doc_["schema_version"] = kSchemaVersion;
    doc_["library_version"] = kLibraryVersion;
    doc_["config"] = cfg.to_json();
    doc_["seeds"] = {{"master", cfg.seed}, {"split", cfg.split.seed}, {"gan", cfg.gan.seed}, {"forest", cfg.forest.seed}};
    if (!doc_.contains("artifacts")) doc_["artifacts"] = json::object();
    if (!doc_.contains("stages")) doc_["stages"] = json::object();
  }

  void record(const fs::path& artifact) {
    doc_["artifacts"][fs::relative(artifact, layout_.dir).generic_string()] = sha256_file(artifact);
  }

  std::optional<std::string> hash_of(const std::string& rel) const {
    if (!doc_["artifacts"].contains(rel)) return std::nullopt;
    return doc_["artifacts"][rel].get<std::string>();
  }

  void complete(const std::string& stage, double seconds, json details = json::object()) {
    details["seconds"] = seconds;
    doc_["stages"][stage] = std::move(details);
    write_json(layout_.manifest(), doc_);
  }

  const json& doc() const { return doc_; }

 private:
  Layout layout_;
  json doc_ = json::object();
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline LabelEncoder read_encoder(const Layout& l) { return LabelEncoder::from_json(read_json(l.labels())); }

inline Dataset read_split(const fs::path& path, const LabelEncoder& enc) {
  return to_dataset(load_csv(path.string(), kLabelColumn), enc);
}

// ---------------------------------------------------------------------------
// Stages

/// Load, clean, encode, scale and split. Scalers are fitted on the cleaned
/// table before splitting. With a pre-split input, each file is cleaned on
/// its own and the scalers are fitted on the training file only.
inline json run_preprocess(const PipelineConfig& cfg) {
  Stopwatch sw;
  const Layout l{cfg.out_dir};
  fs::create_directories(l.dir);
  Manifest manifest(cfg);
  CsvOptions csv;
  csv.categorical = {cfg.categorical.begin(), cfg.categorical.end()};
  csv.drop = {cfg.dropped.begin(), cfg.dropped.end()};

  Dataset train, test;
  json clean_json;
  std::vector<ScalerModel> scalers;
  auto fit_scalers = [&](Dataset& basis) {
    for (auto m : cfg.scaling) {
      scalers.push_back(ScalerModel::fit(basis.features, m));
      basis = scalers.back().transform(basis);
    }
  };
  auto apply_scalers = [&](Dataset d) {
    for (const auto& s : scalers) d = s.transform(d);
    return d;
  };

  LabelEncoder enc;
  if (!cfg.input.empty()) {
    LoadedTable raw = load_csv(cfg.input, cfg.label_column, csv);
    enc = LabelEncoder::fit(raw.raw_labels);
    auto [cleaned, report] = clean(to_dataset(std::move(raw), enc), cfg.clean_policy, cfg.outlier_zscore);
    clean_json = report.to_json();
    fit_scalers(cleaned);
    std::tie(train, test) = split_train_test(cleaned, cfg.split);
  } else {
    LoadedTable tr = load_csv(cfg.train_file, cfg.label_column, csv);
    LoadedTable te = load_csv(cfg.test_file, cfg.label_column, csv);
    if (tr.feature_names != te.feature_names) throw DataError("train and test files have different columns");
    std::vector<std::string> all = tr.raw_labels;
    all.insert(all.end(), te.raw_labels.begin(), te.raw_labels.end());
    enc = LabelEncoder::fit(all);
    auto [ctr, rtr] = clean(to_dataset(std::move(tr), enc), cfg.clean_policy, cfg.outlier_zscore);
    auto [cte, rte] = clean(to_dataset(std::move(te), enc), cfg.clean_policy, cfg.outlier_zscore);
    clean_json = {{"train", rtr.to_json()}, {"test", rte.to_json()}};
    fit_scalers(ctr);
    train = std::move(ctr);
    test = apply_scalers(std::move(cte));
  }
  if (std::find(enc.classes().begin(), enc.classes().end(), cfg.normal_class) == enc.classes().end())
    throw ConfigError("normal class '" + cfg.normal_class + "' does not occur in the data");

  write_csv(l.train().string(), train, kLabelColumn);
  write_csv(l.test().string(), test, kLabelColumn);
  write_json(l.labels(), enc.to_json());
  json sj = json::array();
  for (const auto& s : scalers) sj.push_back(s.to_json());
  write_json(l.scalers(), {{"schema_version", kSchemaVersion}, {"chain", sj}});
  clean_json["schema_version"] = kSchemaVersion;
  write_json(l.clean_report(), clean_json);

  for (const auto& p : {l.train(), l.test(), l.labels(), l.scalers(), l.clean_report()}) manifest.record(p);
  json details = {{"train_rows", train.rows()}, {"test_rows", test.rows()}, {"features", train.cols()},
                  {"classes", enc.classes()}};
  manifest.complete("preprocess", sw.seconds(), details);
  return details;
}

inline std::vector<Label> resolve_classes(const std::vector<std::string>& names, const std::vector<std::string>& all) {
  std::vector<Label> out;
  for (const auto& n : names) {
    const auto it = std::find(all.begin(), all.end(), n);
    if (it == all.end()) throw ConfigError("unknown class '" + n + "'");
    out.push_back(static_cast<Label>(it - all.begin()));
  }
  return out;
}

namespace detail {
/// Loss rows from an interrupted run that precede the resume epoch.
inline std::string loss_rows_before(const fs::path& csv, std::size_t epoch) {
  std::ifstream in(csv, std::ios::binary);
  std::string line, kept;
  if (!in || !std::getline(in, line)) return kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoull(line.substr(0, line.find(','))) < epoch) kept += line + "\n";
  }
  return kept;
}

inline std::string checkpoint_key(const PipelineConfig& cfg, const std::string& train_hash) {
  json k = cfg.gan.to_json();
  k["classes"] = cfg.gan_classes;
  k["train"] = train_hash;
  return k.dump();
}
}  // namespace detail

struct GanTrainOptions {
  bool resume = true;
  /// Stop after this many epochs in this invocation, leaving a checkpoint.
  std::optional<std::size_t> stop_after;
};

inline json run_gan_train(const PipelineConfig& cfg, const GanTrainOptions& opt = {}) {
  Stopwatch sw;
  const Layout l{cfg.out_dir};
  require(l.train(), "preprocess");
  Manifest manifest(cfg);
  const LabelEncoder enc = read_encoder(l);
  const Dataset train = read_split(l.train(), enc);
  wcgan::GanConfig gcfg = cfg.gan;
  gcfg.target_classes = resolve_classes(cfg.gan_classes, enc.classes());
  const std::string key = detail::checkpoint_key(cfg, sha256_file(l.train()));

  std::optional<wcgan::GanTrainer> trainer;
  std::string kept_rows;
  const fs::path key_file = fs::path(l.gan_checkpoint()).concat(".json");
  if (opt.resume && fs::exists(l.gan_checkpoint()) && fs::exists(key_file) &&
      read_json(key_file).value("key", "") == key) {
    std::ifstream in(l.gan_checkpoint(), std::ios::binary);
    auto ck = wcgan::load_checkpoint(in, gcfg);
    kept_rows = detail::loss_rows_before(l.gan_loss(), ck.next_epoch);
    trainer.emplace(gcfg, train, std::move(ck));
  } else {
    trainer.emplace(gcfg, train);
  }
  const std::size_t start_epoch = trainer->next_epoch();

  std::ofstream loss(l.gan_loss(), std::ios::binary | std::ios::trunc);
  wcgan::TrainLog::write_csv_header(loss);
  loss << kept_rows;
  std::size_t written = 0;
  auto save_checkpoint = [&] {
    std::ostringstream buf;
    wcgan::save_checkpoint(buf, trainer->checkpoint(), wcgan::generator_spec_for(gcfg, train.cols(), train.num_classes()),
                           wcgan::critic_spec_for(gcfg, train.cols(), train.num_classes()));
    write_atomically(l.gan_checkpoint(), buf.str());
    write_json(key_file, {{"key", key}, {"next_epoch", trainer->next_epoch()}});
  };
  std::size_t ran = 0;
  while (!trainer->done() && !(opt.stop_after && ran >= *opt.stop_after)) {
    trainer->run_epoch();
    ++ran;
    wcgan::TrainLog::write_csv_rows(loss, trainer->log().steps, written);
    written = trainer->log().steps.size();
    loss.flush();
    if (trainer->next_epoch() % cfg.checkpoint_every == 0) save_checkpoint();
  }
  loss.close();
  if (!trainer->done()) {
    save_checkpoint();
    json details = {{"completed", false}, {"next_epoch", trainer->next_epoch()}, {"resumed_from", start_epoch}};
    manifest.complete("gan-train", sw.seconds(), details);
    return details;
  }

  // Epoch summary is rebuilt from the full loss file so it covers resumed runs.
  {
    std::ifstream in(l.gan_loss(), std::ios::binary);
    std::string line;
    std::getline(in, line);
    std::map<std::size_t, std::array<double, 4>> agg;  // critic sum, n, gen sum, n
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::string epoch, kind, idx, value;
      std::getline(ls, epoch, ',');
      std::getline(ls, kind, ',');
      std::getline(ls, idx, ',');
      std::getline(ls, value, ',');
      auto& a = agg[std::stoull(epoch)];
      const double v = std::stod(value);
      if (kind == "critic") a[0] += v, a[1] += 1;
      else a[2] += v, a[3] += 1;
    }
    std::ostringstream out;
    out << "epoch,mean_critic_loss,mean_generator_loss\n";
    for (const auto& [e, a] : agg)
      out << e << ',' << format_double(a[1] > 0 ? a[0] / a[1] : 0.0) << ','
          << format_double(a[3] > 0 ? a[2] / a[3] : 0.0) << '\n';
    write_atomically(l.gan_epochs(), out.str());
  }
  std::ostringstream buf;
  wcgan::save_gan(buf, trainer->model());
  write_atomically(l.gan(), buf.str());
  for (const auto& p : {l.gan(), l.gan_loss(), l.gan_epochs()}) manifest.record(p);
  json details = {{"completed", true},
                  {"epochs", gcfg.epochs},
                  {"resumed_from", start_epoch},
                  {"batches_per_epoch", trainer->batches_per_epoch()}};
  manifest.complete("gan-train", sw.seconds(), details);
  return details;
}

inline wcgan::TrainedGan read_gan(const Layout& l) {
  require(l.gan(), "gan-train");
  std::ifstream in(l.gan(), std::ios::binary);
  return wcgan::load_gan(in);
}

/// Synthetic rows for the augmentation plan, or for one class when given.
inline json run_gan_sample(const PipelineConfig& cfg, std::optional<std::pair<std::string, std::size_t>> one = {}) {
  Stopwatch sw;
  const Layout l{cfg.out_dir};
  Manifest manifest(cfg);
  const auto gan = read_gan(l);
  const auto plan = one ? wcgan::plan_from_names({{one->first, one->second}}, gan.class_names)
                        : wcgan::plan_from_names(cfg.augmentation, gan.class_names);
  Dataset out;
  out.feature_names = gan.feature_names;
  out.class_names = gan.class_names;
  out.features.resize(0, static_cast<Eigen::Index>(gan.features()));
  for (const auto& [c, n] : plan) out = concat_rows(out, wcgan::sample_synthetic(gan, c, n, cfg.seed));
  write_csv(l.synthetic().string(), out, kLabelColumn);
  manifest.record(l.synthetic());
  json details = {{"rows", out.rows()}};
  manifest.complete("gan-sample", sw.seconds(), details);
  return details;
}

inline json run_augment(const PipelineConfig& cfg) {
  Stopwatch sw;
  const Layout l{cfg.out_dir};
  require(l.train(), "preprocess");
  Manifest manifest(cfg);
  const LabelEncoder enc = read_encoder(l);
  const Dataset train = read_split(l.train(), enc);
  Dataset augmented = train;
  if (!cfg.augmentation.empty()) {
    const auto gan = read_gan(l);
    augmented = wcgan::build_augmented_dataset(train, wcgan::plan_from_names(cfg.augmentation, enc.classes()), gan,
                                               cfg.seed);
  }
  write_csv(l.augmented().string(), augmented, kLabelColumn);
  manifest.record(l.augmented());
  json counts = json::object();
  const auto cc = augmented.class_counts();
  for (std::size_t c = 0; c < cc.size(); ++c) counts[enc.classes()[c]] = cc[c];
  json details = {{"rows", augmented.rows()}, {"class_counts", counts}};
  manifest.complete("augment", sw.seconds(), details);
  return details;
}

inline dualnet::ClassPartition make_partition(const PipelineConfig& cfg, const Dataset& train) {
  if (cfg.minor_threshold) {
    const auto normal = resolve_classes({cfg.normal_class}, train.class_names).front();
    return dualnet::partition_classes(train, normal, *cfg.minor_threshold);
  }
  return dualnet::partition_classes(train.class_names, cfg.normal_class, cfg.major_classes, cfg.minor_classes);
}

/// Phase-1 learner on its own, trained on the original rows.
struct SingleModel {
  classifiers::TrainedClassifier classifier;
  IndexList features;

  Labels predict(const Matrix& x) const { return classifier.predict(dualnet::take_columns(x, features)); }
};

inline void save_single(const SingleModel& m, const fs::path& dir, const std::string& name,
                        const std::vector<std::string>& class_names) {
  classifiers::save_classifier(m.classifier, dir / (name + "_classifier"), class_names);
  write_json(dir / (name + ".json"), {{"schema_version", kSchemaVersion},
                                      {"features", m.features},
                                      {"model", name + "_classifier.json"}});
}

inline SingleModel load_single(const fs::path& envelope) {
  const json j = read_json(envelope);
  return {classifiers::load_classifier(envelope.parent_path() / j.at("model").get<std::string>()),
          j.at("features").get<IndexList>()};
}

inline json run_detect_train(const PipelineConfig& cfg, const classifiers::ExternalRegistry* registry = nullptr) {
  Stopwatch sw;
  const Layout l{cfg.out_dir};
  require(l.train(), "preprocess");
  if (cfg.train_on_augmented) require(l.augmented(), "augment");
  Manifest manifest(cfg);
  const LabelEncoder enc = read_encoder(l);
  const Dataset original = read_split(l.train(), enc);
  const Dataset fit_on = cfg.train_on_augmented ? read_split(l.augmented(), enc) : original;
  const auto partition = make_partition(cfg, original);
  const auto combos = cfg.combination_specs();
  for (const auto& c : combos)
    if (c.phase1.kind == classifiers::Kind::external && (!registry || !registry->find(c.phase1.external_name)))
      throw ConfigError("combination " + c.name + " needs an external '" + c.phase1.external_name +
                        "' learner, which is not available");

  const fs::path dir = l.models();
  fs::create_directories(dir);
  json trained = json::array();
  for (const auto& c : combos) {
    const auto model = dualnet::train_dualnet(fit_on, partition, c.phase1, cfg.forest, cfg.detect, registry);
    dualnet::save_dualnet(model, dir, c.name, enc.classes());
    trained.push_back({{"name", c.name}, {"phase2_degenerate", model.phase2_degenerate()}});
    if (cfg.single_model_baseline) {
      SingleModel s;
      s.features = select_top_k(rank_features(original, cfg.detect.binning, cfg.threads), cfg.detect.k_features);
      s.classifier = classifiers::fit(c.phase1, dualnet::take_columns(original.features, s.features), original.labels,
                                      original.num_classes(), registry);
      save_single(s, dir, c.name + "_single", enc.classes());
    }
  }
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) manifest.record(e.path());
  json details = {{"models", trained}, {"partition", partition.to_json(enc.classes())},
                  {"trained_on", cfg.train_on_augmented ? "augmented" : "original"}, {"training_rows", fit_on.rows()}};
  manifest.complete("detect-train", sw.seconds(), details);
  return details;
}

inline void write_text(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ostringstream out;
  body(out);
  write_atomically(path, out.str());
}

/// Scores every trained model on the untouched test split.
inline json run_evaluate(const PipelineConfig& cfg) {
  Stopwatch sw;
  const Layout l{cfg.out_dir};
  require(l.test(), "preprocess");
  require(l.models(), "detect-train");
  Manifest manifest(cfg);
  const auto recorded = manifest.hash_of("test.csv");
  if (!recorded) throw DataError("manifest has no hash for test.csv; rerun 'preprocess'");
  if (*recorded != sha256_file(l.test())) throw DataError("test.csv changed since preprocess");

  const LabelEncoder enc = read_encoder(l);
  const Dataset test = read_split(l.test(), enc);
  const auto normal = static_cast<std::size_t>(resolve_classes({cfg.normal_class}, enc.classes()).front());
  fs::create_directories(l.reports());

  std::vector<dualnet::CombinationResult> results, singles;
  for (const auto& name : cfg.combinations) {
    require(l.models() / (name + ".json"), "detect-train");
    const auto model = dualnet::load_dualnet(l.models() / (name + ".json"));
    auto r = dualnet::CombinationResult::from_report(name, metrics::evaluate(test.labels, model.predict(test.features),
                                                                             enc.classes(), normal));
    write_json(l.reports() / (name + ".json"), r.report.to_json());
    write_text(l.reports() / (name + "_confusion.csv"), [&](std::ostream& o) { r.report.confusion.write_csv(o); });
    results.push_back(std::move(r));
    if (cfg.single_model_baseline) {
      const fs::path env = l.models() / (name + "_single.json");
      require(env, "detect-train");
      const auto s = load_single(env);
      auto rs = dualnet::CombinationResult::from_report(
          name, metrics::evaluate(test.labels, s.predict(test.features), enc.classes(), normal));
      write_json(l.reports() / (name + "_single.json"), rs.report.to_json());
      singles.push_back(std::move(rs));
    }
  }
  write_text(l.reports() / "sweep.csv", [&](std::ostream& o) { dualnet::write_sweep_csv(o, results); });
  if (!singles.empty())
    write_text(l.reports() / "sweep_single.csv", [&](std::ostream& o) { dualnet::write_sweep_csv(o, singles); });
  const auto& best = dualnet::select_best(results);
  write_json(l.reports() / "best.json", {{"schema_version", kSchemaVersion},
                                         {"model", best.name},
                                         {"accuracy", best.accuracy},
                                         {"macro_f1", best.macro_f1},
                                         {"far", best.far}});
  for (const auto& e : fs::directory_iterator(l.reports()))
    if (e.is_regular_file()) manifest.record(e.path());
  json details = {{"best", best.name}, {"test_rows", test.rows()}};
  manifest.complete("evaluate", sw.seconds(), details);
  return details;
}

/// Plot-ready per-class table plus a summary comparing each combination with
/// its Phase-1 learner alone.
inline json run_report(const PipelineConfig& cfg) {
  Stopwatch sw;
  const Layout l{cfg.out_dir};
  require(l.reports() / "best.json", "evaluate");
  Manifest manifest(cfg);
  const LabelEncoder enc = read_encoder(l);
  const Dataset original = read_split(l.train(), enc);
  const auto partition = make_partition(cfg, original);
  std::vector<std::size_t> minor(partition.minor.begin(), partition.minor.end());

  auto group_of = [&](std::size_t c) {
    const auto y = static_cast<Label>(c);
    return y == partition.normal ? "normal" : partition.major.count(y) ? "major" : "minor";
  };
  std::ostringstream per_class;
  per_class << "model,variant,class,group,precision,recall,f1,support\n";
  json models = json::array();
  auto summarize = [&](const json& rep, const std::string& name, const std::string& variant) {
    std::vector<double> recalls;
    const auto& pc = rep.at("per_class");
    for (std::size_t c = 0; c < pc.size(); ++c) {
      const auto& e = pc[c];
      per_class << name << ',' << variant << ',' << hybridguard::detail::quote(e.at("class").get<std::string>()) << ','
                << group_of(c) << ',' << format_double(e.at("precision").get<double>()) << ','
                << format_double(e.at("recall").get<double>()) << ',' << format_double(e.at("f1").get<double>()) << ','
                << e.at("support").get<std::uint64_t>() << '\n';
    }
    double minor_recall = 0.0;
    for (auto c : minor) minor_recall += pc.at(c).at("recall").get<double>();
    if (!minor.empty()) minor_recall /= static_cast<double>(minor.size());
    return json{{"model", name},
                {"variant", variant},
                {"accuracy", rep.at("accuracy")},
                {"macro_f1", rep.at("macro_f1")},
                {"far", rep.at("far")},
                {"minor_macro_recall", minor_recall}};
  };
  for (const auto& name : cfg.combinations) {
    const auto rep = read_json(l.reports() / (name + ".json"));
    json entry = {{"dualnet", summarize(rep, name, "dualnet")}};
    const fs::path single = l.reports() / (name + "_single.json");
    if (fs::exists(single)) entry["single"] = summarize(read_json(single), name, "single");
    models.push_back(entry);
  }
  write_atomically(l.dir / "per_class.csv", per_class.str());
  const json summary = {{"schema_version", kSchemaVersion},
                        {"best", read_json(l.reports() / "best.json").at("model")},
                        {"partition", partition.to_json(enc.classes())},
                        {"models", models}};
  write_json(l.dir / "report.json", summary);
  manifest.record(l.dir / "per_class.csv");
  manifest.record(l.dir / "report.json");
  manifest.complete("report", sw.seconds(), {{"best", summary.at("best")}});
  return summary;
}

}  // namespace hybridguard::pipeline
