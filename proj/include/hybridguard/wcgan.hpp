#pragma once

// Conditional Wasserstein GAN with gradient penalty for tabular rows.
//
// Labels condition both networks by one-hot concatenation: the generator sees
// [z | onehot(y)], the critic sees [x | onehot(y)]. Features are min-max scaled
// to [-1, 1] to match the generator's tanh output.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridguard/common.hpp"
#include "hybridguard/neural.hpp"
#include "hybridguard/tabular.hpp"

namespace hybridguard::wcgan {

using nlohmann::json;
using neural::AdamConfig;
using neural::AdamState;
using neural::MlpParams;
using neural::MlpSpec;

struct GanConfig {
  std::size_t latent_dim = 64;
  std::size_t batch_size = 128;
  std::size_t n_critic = 5;
  double gradient_penalty = 10.0;
  std::size_t epochs = 1000;
  std::vector<std::size_t> generator_layers{256, 512, 1024};
  std::vector<std::size_t> critic_layers{1024, 512, 256};
  double dropout = 0.3;
  double leaky_slope = 0.2;
  AdamConfig generator_adam{1e-4, 0.5, 0.9, 1e-8};
  AdamConfig critic_adam{1e-4, 0.5, 0.9, 1e-8};
  std::uint64_t seed = 0;
  std::vector<Label> target_classes;  // empty = train on every class

  void validate() const {
    if (latent_dim == 0 || batch_size == 0 || n_critic == 0)
      throw ConfigError("latent_dim, batch_size and n_critic must be positive");
    if (gradient_penalty < 0.0) throw ConfigError("gradient_penalty must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    for (const auto* a : {&generator_adam, &critic_adam})
      if (a->learning_rate <= 0.0 || a->beta1 < 0.0 || a->beta1 >= 1.0 || a->beta2 < 0.0 || a->beta2 >= 1.0)
        throw ConfigError("invalid Adam hyperparameters");
  }

  json to_json() const {
    return {{"latent_dim", latent_dim},
            {"batch_size", batch_size},
            {"n_critic", n_critic},
            {"gradient_penalty", gradient_penalty},
            {"epochs", epochs},
            {"generator_layers", generator_layers},
            {"critic_layers", critic_layers},
            {"dropout", dropout},
            {"leaky_slope", leaky_slope},
            {"generator_adam", generator_adam.to_json()},
            {"critic_adam", critic_adam.to_json()},
            {"seed", seed},
            {"target_classes", target_classes}};
  }
};

inline Matrix one_hot(const Labels& y, std::size_t classes) {
  Matrix t = Matrix::Zero(static_cast<Eigen::Index>(y.size()), static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < y.size(); ++i) t(static_cast<Eigen::Index>(i), y[i]) = 1.0;
  return t;
}

inline Matrix hconcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

/// Samples in [-1, 1] with their conditioning labels.
struct ConditionedBatch {
  Matrix samples;
  Matrix labels_onehot;

  Matrix critic_input() const { return hconcat(samples, labels_onehot); }
  Eigen::Index rows() const { return samples.rows(); }
};

struct CriticLoss {
  double loss = 0.0;
  double real_term = 0.0;  // mean D(x|y)
  double fake_term = 0.0;  // mean D(x~|y)
  double penalty = 0.0;
};

/// L(D) = -mean(real) + mean(fake) + penalty.
inline CriticLoss critic_loss(const Vector& real_scores, const Vector& fake_scores, double penalty = 0.0) {
  if (real_scores.size() != fake_scores.size()) throw DataError("real and fake batches differ in size");
  CriticLoss c;
  c.real_term = real_scores.size() ? real_scores.mean() : 0.0;
  c.fake_term = fake_scores.size() ? fake_scores.mean() : 0.0;
  c.penalty = penalty;
  c.loss = -c.real_term + c.fake_term + penalty;
  return c;
}

/// L(G) = -mean(fake).
inline double generator_loss(const Vector& fake_scores) {
  return fake_scores.size() ? -fake_scores.mean() : 0.0;
}

/// x̂ = ε·real + (1-ε)·fake with one ε per row.
inline Matrix interpolate(const Matrix& real, const Matrix& fake, const Vector& eps) {
  if (real.rows() != fake.rows() || real.cols() != fake.cols() || eps.size() != real.rows())
    throw DataError("interpolate: shape mismatch");
  Matrix out(real.rows(), real.cols());
  for (Eigen::Index i = 0; i < real.rows(); ++i) out.row(i) = eps[i] * real.row(i) + (1.0 - eps[i]) * fake.row(i);
  return out;
}

inline Matrix interpolate(const Matrix& real, const Matrix& fake, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector eps(real.rows());
  for (auto& e : eps) e = u(rng);
  return interpolate(real, fake, eps);
}

struct Critic {
  MlpSpec spec;
  MlpParams params;

  Vector scores(const ConditionedBatch& b, neural::Mode mode, Rng& rng) const {
    return neural::forward(params, spec, b.critic_input(), mode, rng).output.col(0);
  }
};

/// Full critic objective on concrete batches; the penalty is evaluated on
/// interpolates conditioned on the real rows' labels.
inline CriticLoss critic_loss(const Critic& critic, const ConditionedBatch& real, const ConditionedBatch& fake,
                              double lambda, Rng& rng, neural::Mode mode = neural::Mode::eval) {
  if (real.rows() != fake.rows() || real.samples.cols() != fake.samples.cols())
    throw DataError("real and fake batches differ in shape");
  const Vector rs = critic.scores(real, mode, rng);
  const Vector fs = critic.scores(fake, mode, rng);
  double pen = 0.0;
  if (lambda > 0.0) {
    const Matrix x_hat = interpolate(real.samples, fake.samples, rng);
    pen = neural::penalty_param_gradient(critic.params, critic.spec, hconcat(x_hat, real.labels_onehot), lambda,
                                         static_cast<std::size_t>(real.samples.cols()))
              .value;
  }
  return critic_loss(rs, fs, pen);
}

inline double generator_loss(const Critic& critic, const ConditionedBatch& fake, Rng& rng,
                             neural::Mode mode = neural::Mode::eval) {
  return generator_loss(critic.scores(fake, mode, rng));
}

struct TrainedGan {
  MlpSpec generator_spec;
  MlpParams generator;
  MlpSpec critic_spec;
  MlpParams critic;
  std::size_t classes = 0;
  std::size_t latent_dim = 0;
  ScalerModel scaler;  // minmax_symmetric over the training rows
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;
  GanConfig config;

  std::size_t features() const { return generator_spec.output_dim; }
};

enum class StepKind { critic, generator };

struct TrainLog {
  struct Step {
    std::size_t epoch;
    StepKind kind;
    std::size_t step_index;  // per kind, counted from the start of training
    double loss;
    bool operator==(const Step&) const = default;
  };
  struct Epoch {
    std::size_t epoch;
    double mean_critic_loss;
    double mean_generator_loss;
    double seconds;
  };
  std::vector<Step> steps;
  std::vector<Epoch> epochs;

  static void write_csv_header(std::ostream& out) { out << "epoch,step_kind,step_index,loss\n"; }

  static void write_csv_rows(std::ostream& out, const std::vector<Step>& steps, std::size_t from = 0) {
    for (std::size_t i = from; i < steps.size(); ++i) {
      const auto& s = steps[i];
      out << s.epoch << ',' << (s.kind == StepKind::critic ? "critic" : "generator") << ',' << s.step_index << ','
          << format_double(s.loss) << '\n';
    }
  }

  void write_csv(std::ostream& out) const {
    write_csv_header(out);
    write_csv_rows(out, steps);
  }

  std::size_t count(StepKind k) const {
    return static_cast<std::size_t>(std::count_if(steps.begin(), steps.end(), [k](const Step& s) { return s.kind == k; }));
  }
};

/// Mutable training state; enough to resume a run at an epoch boundary.
struct Checkpoint {
  std::size_t next_epoch = 0;
  MlpParams generator, critic;
  AdamState generator_adam, critic_adam;
  std::size_t critic_steps = 0, generator_steps = 0;
};

inline MlpSpec generator_spec_for(const GanConfig& cfg, std::size_t features, std::size_t classes) {
  MlpSpec s;
  s.input_dim = cfg.latent_dim + classes;
  s.layer_sizes = cfg.generator_layers;
  s.output_dim = features;
  s.leaky_slope = cfg.leaky_slope;
  s.output_activation = neural::Activation::tanh;
  s.dropout_rate = cfg.dropout;
  s.validate();
  return s;
}

inline MlpSpec critic_spec_for(const GanConfig& cfg, std::size_t features, std::size_t classes) {
  MlpSpec s;
  s.input_dim = features + classes;
  s.layer_sizes = cfg.critic_layers;
  s.output_dim = 1;
  s.leaky_slope = cfg.leaky_slope;
  s.output_activation = neural::Activation::linear;
  s.dropout_rate = cfg.dropout;
  s.validate();
  return s;
}

inline Matrix gaussian_noise(Eigen::Index rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix z(rows, static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = n(rng);
  return z;
}

/// Runs K critic updates then one generator update per minibatch.
class GanTrainer {
 public:
  GanTrainer(GanConfig cfg, const Dataset& train) : cfg_(std::move(cfg)) {
    cfg_.validate();
    prepare(train);
    ckpt_.generator = neural::init_params(gen_spec_, cfg_.seed * 2 + 1);
    ckpt_.critic = neural::init_params(critic_spec_, cfg_.seed * 2 + 2);
    ckpt_.generator_adam = AdamState::for_params(ckpt_.generator, cfg_.generator_adam);
    ckpt_.critic_adam = AdamState::for_params(ckpt_.critic, cfg_.critic_adam);
  }

  GanTrainer(GanConfig cfg, const Dataset& train, Checkpoint resume) : cfg_(std::move(cfg)) {
    cfg_.validate();
    prepare(train);
    ckpt_ = std::move(resume);
    if (ckpt_.generator.layers.size() != gen_spec_.num_layers() || ckpt_.critic.layers.size() != critic_spec_.num_layers())
      throw DataError("checkpoint does not match the configured networks");
  }

  bool done() const { return ckpt_.next_epoch >= cfg_.epochs; }
  std::size_t next_epoch() const { return ckpt_.next_epoch; }
  std::size_t batches_per_epoch() const { return rows_.size() / cfg_.batch_size; }
  const Checkpoint& checkpoint() const { return ckpt_; }
  const TrainLog& log() const { return log_; }
  const GanConfig& config() const { return cfg_; }

  void run_epoch() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t epoch = ckpt_.next_epoch;
    Rng rng = make_rng(cfg_.seed, 0x9a1u, epoch);
    IndexList order(rows_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    const auto M = static_cast<Eigen::Index>(cfg_.batch_size);
    const auto d = static_cast<std::size_t>(scaled_.cols());
    const double inv_m = 1.0 / static_cast<double>(M);
    double critic_sum = 0.0, gen_sum = 0.0;
    std::size_t critic_n = 0, gen_n = 0;

    for (std::size_t b = 0; b < batches_per_epoch(); ++b) {
      Matrix real(M, scaled_.cols());
      Labels y(static_cast<std::size_t>(M));
      for (Eigen::Index i = 0; i < M; ++i) {
        const std::size_t r = order[b * cfg_.batch_size + static_cast<std::size_t>(i)];
        real.row(i) = scaled_.row(static_cast<Eigen::Index>(r));
        y[static_cast<std::size_t>(i)] = labels_[r];
      }
      const Matrix cond = one_hot(y, classes_);
      const Matrix real_in = hconcat(real, cond);

      for (std::size_t k = 0; k < cfg_.n_critic; ++k) {
        const Matrix fake = neural::forward(ckpt_.generator, gen_spec_, hconcat(gaussian_noise(M, cfg_.latent_dim, rng), cond),
                                            neural::Mode::train, rng)
                                .output;
        const auto tr = neural::forward(ckpt_.critic, critic_spec_, real_in, neural::Mode::train, rng);
        const auto tf = neural::forward(ckpt_.critic, critic_spec_, hconcat(fake, cond), neural::Mode::train, rng);
        auto grad = neural::backward(ckpt_.critic, critic_spec_, tr, Matrix::Constant(M, 1, -inv_m)).params;
        grad += neural::backward(ckpt_.critic, critic_spec_, tf, Matrix::Constant(M, 1, inv_m)).params;
        double pen = 0.0;
        if (cfg_.gradient_penalty > 0.0) {
          const Matrix x_hat = interpolate(real, fake, rng);
          auto p = neural::penalty_param_gradient(ckpt_.critic, critic_spec_, hconcat(x_hat, cond),
                                                  cfg_.gradient_penalty, d);
          pen = p.value;
          grad += p.gradient;
        }
        const double loss = critic_loss(tr.output.col(0), tf.output.col(0), pen).loss;
        if (!std::isfinite(loss)) throw NumericError("critic loss diverged at epoch " + std::to_string(epoch));
        neural::adam_step(ckpt_.critic_adam, ckpt_.critic, grad);
        log_.steps.push_back({epoch, StepKind::critic, ckpt_.critic_steps++, loss});
        critic_sum += loss;
        ++critic_n;
      }

      const auto tg = neural::forward(ckpt_.generator, gen_spec_, hconcat(gaussian_noise(M, cfg_.latent_dim, rng), cond),
                                      neural::Mode::train, rng);
      const auto tc = neural::forward(ckpt_.critic, critic_spec_, hconcat(tg.output, cond), neural::Mode::train, rng);
      const double loss = generator_loss(tc.output.col(0));
      if (!std::isfinite(loss)) throw NumericError("generator loss diverged at epoch " + std::to_string(epoch));
      const Matrix dx = neural::backward(ckpt_.critic, critic_spec_, tc, Matrix::Constant(M, 1, -inv_m))
                            .input.leftCols(static_cast<Eigen::Index>(d));
      neural::adam_step(ckpt_.generator_adam, ckpt_.generator, neural::backward(ckpt_.generator, gen_spec_, tg, dx).params);
      log_.steps.push_back({epoch, StepKind::generator, ckpt_.generator_steps++, loss});
      gen_sum += loss;
      ++gen_n;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log_.epochs.push_back({epoch, critic_n ? critic_sum / static_cast<double>(critic_n) : 0.0,
                           gen_n ? gen_sum / static_cast<double>(gen_n) : 0.0, secs});
    ++ckpt_.next_epoch;
  }

  TrainedGan model() const {
    TrainedGan g;
    g.generator_spec = gen_spec_;
    g.generator = ckpt_.generator;
    g.critic_spec = critic_spec_;
    g.critic = ckpt_.critic;
    g.classes = classes_;
    g.latent_dim = cfg_.latent_dim;
    g.scaler = scaler_;
    g.feature_names = feature_names_;
    g.class_names = class_names_;
    g.config = cfg_;
    return g;
  }

 private:
  void prepare(const Dataset& train) {
    train.validate();
    classes_ = train.num_classes();
    feature_names_ = train.feature_names;
    class_names_ = train.class_names;
    for (Label c : cfg_.target_classes)
      if (c < 0 || static_cast<std::size_t>(c) >= classes_) throw ConfigError("target class out of range");
    if (cfg_.target_classes.empty()) {
      rows_.resize(train.rows());
      std::iota(rows_.begin(), rows_.end(), std::size_t{0});
    } else {
      rows_ = train.rows_with_labels({cfg_.target_classes.begin(), cfg_.target_classes.end()});
    }
    if (rows_.size() < cfg_.batch_size)
      throw DataError("only " + std::to_string(rows_.size()) + " training rows for batch size " +
                      std::to_string(cfg_.batch_size) + "; use a smaller batch_size");
    const Dataset used = train.take_rows(rows_);
    scaler_ = ScalerModel::fit(used.features, ScaleMethod::minmax_symmetric);
    scaled_ = scaler_.transform(used.features);
    labels_ = used.labels;
    gen_spec_ = generator_spec_for(cfg_, train.cols(), classes_);
    critic_spec_ = critic_spec_for(cfg_, train.cols(), classes_);
  }

  GanConfig cfg_;
  std::size_t classes_ = 0;
  IndexList rows_;
  Matrix scaled_;
  Labels labels_;
  ScalerModel scaler_;
  std::vector<std::string> feature_names_, class_names_;
  MlpSpec gen_spec_, critic_spec_;
  Checkpoint ckpt_;
  TrainLog log_;
};

inline std::pair<TrainedGan, TrainLog> train(const GanConfig& cfg, const Dataset& train_data) {
  GanTrainer t(cfg, train_data);
  while (!t.done()) t.run_epoch();
  return {t.model(), t.log()};
}

/// Draws `count` rows for `class_id` in original feature units.
inline Dataset sample_synthetic(const TrainedGan& gan, Label class_id, std::size_t count, std::uint64_t seed) {
  if (class_id < 0 || static_cast<std::size_t>(class_id) >= gan.classes)
    throw DataError("class id " + std::to_string(class_id) + " out of range");
  Dataset out;
  out.feature_names = gan.feature_names;
  out.class_names = gan.class_names;
  out.labels.assign(count, class_id);
  if (count == 0) {
    out.features.resize(0, static_cast<Eigen::Index>(gan.features()));
    return out;
  }
  Rng rng = make_rng(seed, 0x5a3u, static_cast<std::uint32_t>(class_id));
  const auto n = static_cast<Eigen::Index>(count);
  const Matrix z = gaussian_noise(n, gan.latent_dim, rng);
  const Matrix cond = one_hot(out.labels, gan.classes);
  const Matrix scaled = neural::forward(gan.generator, gan.generator_spec, hconcat(z, cond), neural::Mode::eval).output;
  out.features = gan.scaler.inverse_transform(scaled);
  return out;
}

/// Synthetic rows to add per class id.
using AugmentationPlan = std::map<Label, std::size_t>;

inline AugmentationPlan plan_from_names(const std::map<std::string, std::size_t>& by_name,
                                        const std::vector<std::string>& class_names) {
  AugmentationPlan plan;
  for (const auto& [name, n] : by_name) {
    const auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end()) throw ConfigError("augmentation plan references unknown class '" + name + "'");
    plan[static_cast<Label>(it - class_names.begin())] = n;
  }
  return plan;
}

/// Original rows unchanged, then synthetic rows per class in ascending class id.
inline Dataset build_augmented_dataset(const Dataset& train, const AugmentationPlan& plan, const TrainedGan& gan,
                                       std::uint64_t seed) {
  if (train.class_names != gan.class_names || train.cols() != gan.features())
    throw DataError("GAN was trained on a different schema");
  Dataset out = train;
  for (const auto& [c, n] : plan) {
    if (c < 0 || static_cast<std::size_t>(c) >= train.num_classes()) throw ConfigError("plan class out of range");
    if (n == 0) continue;
    out = concat_rows(out, sample_synthetic(gan, c, n, seed));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

inline void save_gan(std::ostream& out, const TrainedGan& g) {
  // Two parameter files in one stream: generator then critic, each with its
  // own header. The first header's "extra" carries the envelope.
  json env = {{"schema_version", kSchemaVersion},
              {"config", g.config.to_json()},
              {"classes", g.classes},
              {"latent_dim", g.latent_dim},
              {"class_names", g.class_names},
              {"feature_names", g.feature_names},
              {"scaler", g.scaler.to_json()},
              {"noise", "standard_normal"},
              {"conditioning", "one_hot_concat"}};
  neural::write_params(out, g.generator_spec, {&g.generator}, env);
  neural::write_params(out, g.critic_spec, {&g.critic}, {{"role", "critic"}});
}

inline TrainedGan load_gan(std::istream& in) {
  auto gen = neural::read_params(in);
  auto cri = neural::read_params(in);
  const json& env = gen.extra;
  TrainedGan g;
  g.generator_spec = gen.spec;
  g.generator = std::move(gen.blocks.at(0));
  g.critic_spec = cri.spec;
  g.critic = std::move(cri.blocks.at(0));
  g.classes = env.at("classes").get<std::size_t>();
  g.latent_dim = env.at("latent_dim").get<std::size_t>();
  g.class_names = env.at("class_names").get<std::vector<std::string>>();
  g.feature_names = env.at("feature_names").get<std::vector<std::string>>();
  g.scaler = ScalerModel::from_json(env.at("scaler"));
  const json& c = env.at("config");
  g.config.latent_dim = c.at("latent_dim");
  g.config.batch_size = c.at("batch_size");
  g.config.n_critic = c.at("n_critic");
  g.config.gradient_penalty = c.at("gradient_penalty");
  g.config.epochs = c.at("epochs");
  g.config.generator_layers = c.at("generator_layers").get<std::vector<std::size_t>>();
  g.config.critic_layers = c.at("critic_layers").get<std::vector<std::size_t>>();
  g.config.dropout = c.at("dropout");
  g.config.leaky_slope = c.at("leaky_slope");
  g.config.seed = c.at("seed");
  g.config.target_classes = c.at("target_classes").get<std::vector<Label>>();
  return g;
}

inline void save_checkpoint(std::ostream& out, const Checkpoint& c, const MlpSpec& gen_spec, const MlpSpec& critic_spec) {
  json extra = {{"next_epoch", c.next_epoch},
                {"critic_steps", c.critic_steps},
                {"generator_steps", c.generator_steps},
                {"generator_adam_step", c.generator_adam.step},
                {"critic_adam_step", c.critic_adam.step}};
  neural::write_params(out, gen_spec, {&c.generator, &c.generator_adam.m, &c.generator_adam.v}, extra);
  neural::write_params(out, critic_spec, {&c.critic, &c.critic_adam.m, &c.critic_adam.v}, {{"role", "critic"}});
}

inline Checkpoint load_checkpoint(std::istream& in, const GanConfig& cfg) {
  auto gen = neural::read_params(in);
  auto cri = neural::read_params(in);
  if (gen.blocks.size() != 3 || cri.blocks.size() != 3) throw DataError("malformed GAN checkpoint");
  Checkpoint c;
  const json& e = gen.extra;
  c.next_epoch = e.at("next_epoch").get<std::size_t>();
  c.critic_steps = e.at("critic_steps").get<std::size_t>();
  c.generator_steps = e.at("generator_steps").get<std::size_t>();
  c.generator = std::move(gen.blocks[0]);
  c.generator_adam = {cfg.generator_adam, e.at("generator_adam_step").get<std::uint64_t>(), std::move(gen.blocks[1]),
                      std::move(gen.blocks[2])};
  c.critic = std::move(cri.blocks[0]);
  c.critic_adam = {cfg.critic_adam, e.at("critic_adam_step").get<std::uint64_t>(), std::move(cri.blocks[1]),
                   std::move(cri.blocks[2])};
  return c;
}

}  // namespace hybridguard::wcgan
