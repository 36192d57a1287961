// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "gradcheck.hpp"
#include "hybridguard/classifiers.hpp"
#include "hybridguard/dualnet.hpp"
#include "hybridguard/featsel.hpp"
#include "hybridguard/metrics.hpp"
#include "hybridguard/neural.hpp"
#include "hybridguard/pipeline.hpp"
#include "hybridguard/presets.hpp"
#include "hybridguard/tabular.hpp"
#include "hybridguard/wcgan.hpp"

using namespace hybridguard;
namespace fs = std::filesystem;
namespace p = hybridguard::pipeline;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << (detail.tellp() > 0 ? "; " : "") << what;
    }
  }
};

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 1. Analytic MLP and penalty gradients against central differences.
void gradients(Outcome& o) {
  Timer t;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> width(1, 6), depth(0, 3), batch(1, 5);
  double worst_mlp = 0.0, worst_pen = 0.0;
  const int configs = 24;
  for (int c = 0; c < configs; ++c) {
    neural::MlpSpec s;
    s.input_dim = static_cast<std::size_t>(width(rng));
    for (int l = depth(rng); l > 0; --l) s.layer_sizes.push_back(static_cast<std::size_t>(width(rng)));
    s.output_dim = static_cast<std::size_t>(width(rng));
    s.output_activation = c % 2 ? neural::Activation::tanh : neural::Activation::linear;
    const auto params = neural::init_params(s, static_cast<std::uint64_t>(c));
    const Matrix x = hgtest::random_matrix(batch(rng), static_cast<Eigen::Index>(s.input_dim), rng);
    const Matrix r = hgtest::random_matrix(x.rows(), static_cast<Eigen::Index>(s.output_dim), rng);
    auto objective = [&](const neural::MlpParams& q, const Matrix& in) {
      return (neural::forward(q, s, in, neural::Mode::eval).output.array() * r.array()).sum();
    };
    const auto g = neural::backward(params, s, neural::forward(params, s, x, neural::Mode::eval), r);
    worst_mlp = std::max(worst_mlp, hgtest::relative_error(g.params.flatten(), hgtest::numeric_param_gradient(params, [&](const neural::MlpParams& q) { return objective(q, x); })));
    worst_mlp = std::max(worst_mlp, hgtest::relative_error(hgtest::to_vector(g.input), hgtest::numeric_input_gradient(x, [&](const Matrix& xx) { return objective(params, xx); })));

    // Penalty on a single-output critic with conditioning columns appended.
    neural::MlpSpec cs = s;
    cs.output_dim = 1;
    cs.output_activation = neural::Activation::linear;
    cs.layer_sizes.push_back(4);
    cs.input_dim = s.input_dim + 2;
    const auto cp = neural::init_params(cs, static_cast<std::uint64_t>(1000 + c));
    const Matrix xh = hgtest::random_matrix(4, static_cast<Eigen::Index>(cs.input_dim), rng);
    const auto pen = neural::penalty_param_gradient(cp, cs, xh, 10.0, s.input_dim);
    const auto num = hgtest::numeric_param_gradient(cp, [&](const neural::MlpParams& q) {
      return neural::penalty_param_gradient(q, cs, xh, 10.0, s.input_dim).value;
    });
    worst_pen = std::max(worst_pen, hgtest::relative_error(pen.gradient.flatten(), num));
  }
  const double secs = t.seconds();
  o.check(worst_mlp <= 1e-5, "MLP relative error " + fmt(worst_mlp));
  o.check(worst_pen <= 1e-4, "penalty relative error " + fmt(worst_pen));
  o.check(secs < 30.0, "runtime " + fmt(secs) + " s");
  o.detail << (o.pass ? "" : "; ") << configs << " configs, worst MLP " << fmt(worst_mlp, 3) << ", worst penalty "
           << fmt(worst_pen, 3) << ", " << fmt(secs, 3) << " s";
}

// 2. Closed-form loss values and the zero penalty of a unit-norm linear critic.
void loss_algebra(Outcome& o) {
  const auto c = wcgan::critic_loss(Vector{{1.0, 3.0}}, Vector{{0.0, 2.0}});
  o.check(c.loss == -1.0, "critic loss of means 2 and 1 is " + fmt(c.loss));
  o.check(wcgan::critic_loss(Vector{{1.0, 3.0}}, Vector{{0.0, 2.0}}, 0.5).loss == -0.5, "penalty not added");
  o.check(wcgan::generator_loss(Vector{{0.0, 2.0}}) == -1.0, "generator loss of mean 1");
  o.check(wcgan::generator_loss(Vector::Zero(3)) == 0.0, "generator loss of zeros");

  wcgan::Critic critic;
  critic.spec.input_dim = 3;
  critic.spec.output_dim = 1;
  critic.params.layers.push_back({(Matrix(1, 3) << 0.6, 0.8, 0.0).finished(), Vector::Zero(1)});
  std::mt19937_64 g(5);
  wcgan::ConditionedBatch real{hgtest::random_matrix(8, 2, g), Matrix::Ones(8, 1)};
  wcgan::ConditionedBatch fake{hgtest::random_matrix(8, 2, g), Matrix::Ones(8, 1)};
  Rng rng = make_rng(6);
  const double pen = wcgan::critic_loss(critic, real, fake, 10.0, rng).penalty;
  o.check(std::abs(pen) < 1e-12, "unit-norm penalty " + fmt(pen));
  o.detail << (o.pass ? "" : "; ") << "critic -1, generator -1 and 0, unit-norm penalty " << fmt(pen, 3);
}

// 3. Conditional recovery of a three-component Gaussian mixture.
void gan_toy(Outcome& o) {
  Timer t;
  Rng rng = make_rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  const double mx[3] = {-3.0, 3.0, 0.0}, my[3] = {0.0, 0.0, 4.0};
  Dataset d;
  d.features.resize(2000, 2);
  for (Eigen::Index i = 0; i < 2000; ++i) {
    const auto c = static_cast<std::size_t>(i % 3);
    d.features(i, 0) = mx[c] + n(rng);
    d.features(i, 1) = my[c] + n(rng);
    d.labels.push_back(static_cast<Label>(c));
  }
  d.feature_names = {"x", "y"};
  d.class_names = {"a", "b", "c"};
  d = ScalerModel::fit(d.features, ScaleMethod::standardize).transform(d);

  wcgan::GanConfig g;
  g.batch_size = 64;
  g.n_critic = 5;
  g.gradient_penalty = 10.0;
  g.epochs = 300;
  g.seed = 7;
  g.latent_dim = 16;
  g.generator_layers = {64, 64};
  g.critic_layers = {64, 64};
  g.generator_adam = g.critic_adam = {2e-4, 0.5, 0.9, 1e-8};
  const auto gan = wcgan::train(g, d).first;

  const auto probe = classifiers::fit({classifiers::Kind::gaussian_nb, json::object(), 0, {}}, d.features, d.labels, 3);
  double worst_dist = 0.0, worst_probe = 1.0;
  for (Label c = 0; c < 3; ++c) {
    const auto s = wcgan::sample_synthetic(gan, c, 1000, 99);
    const Matrix real = d.take_rows(d.rows_with_labels({c})).features;
    worst_dist = std::max(worst_dist, (s.features.colwise().mean() - real.colwise().mean()).norm());
    std::size_t hit = 0;
    for (Label y : probe.predict(s.features)) hit += y == c;
    worst_probe = std::min(worst_probe, static_cast<double>(hit) / 1000.0);
  }
  const double secs = t.seconds();
  o.check(worst_dist <= 0.5, "class mean distance " + fmt(worst_dist));
  o.check(worst_probe >= 0.8, "probe agreement " + fmt(worst_probe));
  o.check(secs < 300.0, "runtime " + fmt(secs) + " s");
  o.detail << (o.pass ? "" : "; ") << "max mean distance " << fmt(worst_dist, 3) << ", min probe agreement "
           << fmt(worst_probe, 3) << ", " << fmt(secs, 3) << " s";
}

// 4. Augmented per-class counts from the shipped presets.
void augmented_counts(Outcome& o) {
  wcgan::GanConfig g;
  g.epochs = 0;
  g.latent_dim = 2;
  g.batch_size = 1;
  g.generator_layers = {2};
  g.critic_layers = {2};
  std::size_t checked = 0;
  for (const auto& preset : presets::dataset_presets()) {
    Dataset d;
    for (const auto& c : preset.classes) d.class_names.push_back(c.name);
    d.feature_names = {"f0"};
    std::size_t rows = 0;
    for (const auto& c : preset.classes) rows += c.train;
    d.features = Matrix::Zero(static_cast<Eigen::Index>(rows), 1);
    for (std::size_t c = 0; c < preset.classes.size(); ++c) d.labels.insert(d.labels.end(), preset.classes[c].train, static_cast<Label>(c));
    const auto gan = wcgan::train(g, d).first;
    const auto out = wcgan::build_augmented_dataset(d, wcgan::plan_from_names(preset.augmentation_plan(), d.class_names), gan, 1);
    const auto counts = out.class_counts();
    for (std::size_t c = 0; c < preset.classes.size(); ++c) {
      const auto& cc = preset.classes[c];
      const std::size_t expect = cc.group == presets::Group::minor ? cc.augmented : cc.train;
      o.check(counts[c] == expect, preset.key + " " + cc.name + " " + std::to_string(counts[c]) + " != " + std::to_string(expect));
      checked += cc.group == presets::Group::minor;
    }
  }
  const std::map<std::string, std::pair<std::string, std::size_t>> published{
      {"Bot", {"cic-ids2017", 5677}}, {"Worms", {"unsw-nb15", 4148}}, {"MITM_ARP_Spoofing", {"iotid20", 42306}}};
  for (const auto& [name, where] : published)
    for (const auto& cc : presets::dataset_preset(where.first).classes)
      if (cc.name == name) o.check(cc.augmented == where.second, name + " preset count " + std::to_string(cc.augmented));
  o.detail << (o.pass ? "" : "; ") << checked << " minority counts reproduced";
}

// 5. 6:1 split sizes.
void split_sizes(Outcome& o) {
  const std::vector<std::array<std::size_t, 3>> rows{{257673, 220862, 36811}, {286552, 245616, 40936}, {625783, 536385, 89398}};
  for (const auto& [total, train, test] : rows) {
    Dataset d;
    d.features = Matrix::Zero(static_cast<Eigen::Index>(total), 1);
    d.labels.assign(total, 0);
    d.feature_names = {"f0"};
    d.class_names = {"only"};
    const auto [tr, te] = split_train_test(d, {6, 1, 3, false});
    o.check(tr.rows() == train && te.rows() == test,
            std::to_string(total) + " -> " + std::to_string(tr.rows()) + "/" + std::to_string(te.rows()));
    o.detail << (o.detail.tellp() > 0 ? ", " : "") << total << " -> " << tr.rows() << "/" << te.rows();
  }
}

// Contingency-table MI using ordered maps, independent of the estimator.
double brute_force_mi(const std::vector<double>& f, const Labels& y) {
  std::map<double, std::map<Label, std::size_t>> joint;
  std::map<double, std::size_t> fv;
  std::map<Label, std::size_t> cv;
  for (std::size_t i = 0; i < f.size(); ++i) {
    ++joint[f[i]][y[i]];
    ++fv[f[i]];
    ++cv[y[i]];
  }
  const double n = static_cast<double>(f.size());
  double mi = 0.0;
  for (const auto& [v, row] : joint)
    for (const auto& [c, k] : row)
      mi += static_cast<double>(k) / n *
            std::log(static_cast<double>(k) * n / (static_cast<double>(fv[v]) * static_cast<double>(cv[c])));
  return std::max(0.0, mi);
}

// 6. Mutual information equals the brute-force table on discrete inputs.
void mi_oracle(Outcome& o) {
  Rng rng = make_rng(6);
  std::size_t mismatches = 0;
  const int trials = 500;
  for (int trial = 0; trial < trials; ++trial) {
    std::uniform_int_distribution<int> nvals(1, 10), nclass(1, 6), nrows(1, 400);
    const int V = nvals(rng), C = nclass(rng), n = nrows(rng);
    std::uniform_int_distribution<int> pick_v(0, V - 1), pick_c(0, C - 1);
    std::vector<double> f;
    Labels y;
    for (int i = 0; i < n; ++i) {
      y.push_back(pick_c(rng));
      const int v = trial % 2 ? (y.back() * 3 + pick_v(rng) % 2) % V : pick_v(rng);
      f.push_back(1.5 * v - 4.0);
    }
    mismatches += estimate_mutual_information(f, y, {10}) == brute_force_mi(f, y) ? 0 : 1;
  }
  o.check(mismatches == 0, std::to_string(mismatches) + " of " + std::to_string(trials) + " tables differ");
  const double perfect = estimate_mutual_information(std::vector<double>{0, 0, 1, 1}, Labels{0, 0, 1, 1});
  o.check(std::abs(perfect - std::log(2.0)) <= 1e-12, "perfect dependence gives " + fmt(perfect, 17));
  o.detail << (o.pass ? "" : "; ") << trials << " random tables exact";
}

// 7. Binary rates and macro-F1 oracles.
void metrics_oracle(Outcome& o) {
  const auto r = metrics::compute_rates({9, 1, 89, 1});
  o.check(std::abs(r.accuracy.value - 0.98) <= 1e-12, "accuracy " + fmt(r.accuracy.value, 17));
  o.check(std::abs(r.precision.value - 0.9) <= 1e-12, "precision " + fmt(r.precision.value, 17));
  o.check(std::abs(r.recall.value - 0.9) <= 1e-12, "recall " + fmt(r.recall.value, 17));
  o.check(std::abs(r.f1.value - 0.9) <= 1e-12, "f1 " + fmt(r.f1.value, 17));
  o.check(std::abs(r.far.value - 1.0 / 90.0) <= 1e-12, "far " + fmt(r.far.value, 17));

  const std::uint64_t rows[3][3] = {{50, 3, 2}, {4, 30, 6}, {1, 7, 12}};
  metrics::ConfusionMatrix m(3);
  double oracle = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        m.at(i, j) = rows[i][j];
        const auto v = static_cast<double>(rows[i][j]);
        if (i == c && j == c) tp += v;
        else if (j == c) fp += v;
        else if (i == c) fn += v;
      }
    oracle += 2 * tp / (2 * tp + fp + fn) / 3.0;
  }
  o.check(std::abs(metrics::macro_f1(m) - oracle) <= 1e-12, "macro-F1 " + fmt(metrics::macro_f1(m), 17));
  o.detail << (o.pass ? "" : "; ") << "rates 0.98/0.9/0.9/0.9/" << fmt(r.far.value, 4) << ", macro-F1 "
           << fmt(metrics::macro_f1(m), 6) << " matches one-vs-rest";
}

// Imbalanced scenario: one normal class, two major and two minor attack
// classes. Majors shift features 0-3, each minor class shifts its own pair of
// features among 4-7, features 8-11 are noise.
void write_imbalanced(const fs::path& path) {
  const std::vector<std::pair<std::string, int>> classes{
      {"normal", 5000}, {"dos", 1000}, {"probe", 1000}, {"worm", 50}, {"shell", 50}};
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  std::ofstream out(path);
  for (int j = 0; j < 12; ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::size_t c = 0; c < classes.size(); ++c)
    for (int i = 0; i < classes[c].second; ++i) {
      for (int j = 0; j < 12; ++j) {
        double mean = 0.0;
        if (c == 1 && j < 2) mean = 3.0;
        if (c == 2 && j >= 2 && j < 4) mean = 3.0;
        if (c == 3 && j >= 4 && j < 6) mean = 4.0;
        if (c == 4 && j >= 6 && j < 8) mean = 4.0;
        out << format_double(mean + n(rng)) << ',';
      }
      out << classes[c].first << '\n';
    }
}

json imbalanced_config(const fs::path& dir) {
  return {{"data", {{"input", (dir / "raw.csv").string()}, {"label_column", "label"}}},
          {"split", {{"stratified", true}}},
          {"gan",
           {{"epochs", 300}, {"batch_size", 32}, {"latent_dim", 16}, {"generator_layers", {64, 64}},
            {"critic_layers", {64, 64}}, {"adam", {{"learning_rate", 2e-4}, {"beta1", 0.5}, {"beta2", 0.9}}},
            {"classes", {"worm", "shell"}}}},
          {"augmentation", {{"plan", {{"worm", 500}, {"shell", 500}}}}},
          {"partition", {{"normal", "normal"}, {"minor", {"worm", "shell"}}}},
          {"detect", {{"combinations", {"M1", "M2", "M3", "M9"}}, {"k_features", 4}}},
          {"out_dir", (dir / "out").string()},
          {"seed", 7}};
}

json run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_imbalanced(dir / "raw.csv");
  const auto cfg = p::PipelineConfig::parse(imbalanced_config(dir));
  p::run_preprocess(cfg);
  p::run_gan_train(cfg);
  p::run_augment(cfg);
  p::run_detect_train(cfg);
  p::run_evaluate(cfg);
  return p::run_report(cfg);
}

fs::path work_dir() { return fs::temp_directory_path() / "hybridguard_acceptance"; }

// 8. DualNet with augmentation against the Phase-1 learner alone.
void end_to_end(Outcome& o) {
  Timer t;
  const json rep = run_pipeline(work_dir() / "run_a");
  for (const auto& m : rep.at("models")) {
    const auto& dual = m.at("dualnet");
    const auto& single = m.at("single");
    const std::string name = dual.at("model");
    const double rd = dual.at("minor_macro_recall"), rs = single.at("minor_macro_recall");
    const double fd = dual.at("far"), fs_ = single.at("far");
    o.check(rd > rs, name + " minority recall " + fmt(rd) + " <= " + fmt(rs));
    o.check(fd - fs_ <= 0.02, name + " FAR rose " + fmt(100 * (fd - fs_)) + " pp");
    o.detail << (o.detail.tellp() > 0 ? ", " : "") << name << " recall " << fmt(rs, 3) << "->" << fmt(rd, 3) << " FAR "
             << fmt(100 * fs_, 3) << "->" << fmt(100 * fd, 3) << "%";
  }
  const double secs = t.seconds();
  o.check(secs < 600.0, "runtime " + fmt(secs) + " s");
  o.detail << ", " << fmt(secs, 3) << " s";
}

// 9. Best-combination selection on the published rows.
void selection(Outcome& o) {
  const auto unsw = dualnet::select_best(presets::as_results(presets::published_combination_rows("unsw-nb15"))).name;
  const auto iot = dualnet::select_best(presets::as_results(presets::published_combination_rows("iotid20"))).name;
  o.check(unsw == "M4", "UNSW-NB15 picks " + unsw);
  o.check(iot == "M10", "IoTID20 picks " + iot);
  o.detail << (o.pass ? "" : "; ") << "UNSW-NB15 " << unsw << ", IoTID20 " << iot;
}

// 10. A second full run reproduces every report byte for byte.
void determinism(Outcome& o) {
  const fs::path a = work_dir() / "run_a" / "out";
  if (!fs::exists(a / "report.json")) run_pipeline(work_dir() / "run_a");
  run_pipeline(work_dir() / "run_b");
  const fs::path b = work_dir() / "run_b" / "out";
  std::vector<fs::path> files{"report.json", "per_class.csv"};
  for (const auto& e : fs::directory_iterator(a / "reports")) files.push_back(fs::path("reports") / e.path().filename());
  for (const auto& f : files) o.check(slurp(a / f) == slurp(b / f) && fs::exists(b / f), f.string() + " differs");
  o.detail << (o.pass ? "" : "; ") << files.size() << " report files identical";
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"gradient correctness", gradients},
      {"loss algebra", loss_algebra},
      {"GAN toy recovery", gan_toy},
      {"augmented count arithmetic", augmented_counts},
      {"split arithmetic", split_sizes},
      {"MI oracle", mi_oracle},
      {"metrics oracle", metrics_oracle},
      {"two-phase end-to-end property", end_to_end},
      {"best-combination selection", selection},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << (o.detail.tellp() > 0 ? "; " : "") << "exception: " << e.what();
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
