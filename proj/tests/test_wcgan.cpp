#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "hybridguard/presets.hpp"
#include "hybridguard/wcgan.hpp"

using namespace hybridguard;
using namespace hybridguard::wcgan;

namespace {

// Gaussian blobs in d dimensions with the given per-class row counts.
Dataset toy(const std::vector<std::size_t>& counts, std::size_t d, std::uint64_t seed,
            std::vector<std::string> names = {}) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::size_t total = 0;
  for (auto c : counts) total += c;
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(d));
  Eigen::Index r = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t i = 0; i < counts[c]; ++i, ++r) {
      for (std::size_t j = 0; j < d; ++j)
        out.features(r, static_cast<Eigen::Index>(j)) = 3.0 * static_cast<double>(c) + n(rng);
      out.labels.push_back(static_cast<Label>(c));
    }
  for (std::size_t j = 0; j < d; ++j) out.feature_names.push_back("f" + std::to_string(j));
  if (names.empty())
    for (std::size_t c = 0; c < counts.size(); ++c) names.push_back("c" + std::to_string(c));
  out.class_names = std::move(names);
  return out;
}

GanConfig tiny(std::size_t epochs, std::size_t batch = 8) {
  GanConfig g;
  g.latent_dim = 4;
  g.batch_size = batch;
  g.n_critic = 5;
  g.epochs = epochs;
  g.generator_layers = {8};
  g.critic_layers = {8};
  g.seed = 3;
  return g;
}

}  // namespace

TEST(CriticLoss, ScoreMeans) {
  const auto c = critic_loss(Vector{{1.0, 3.0}}, Vector{{0.0, 2.0}});
  EXPECT_DOUBLE_EQ(c.loss, -1.0);
  EXPECT_DOUBLE_EQ(c.real_term, 2.0);
  EXPECT_DOUBLE_EQ(c.fake_term, 1.0);
  EXPECT_DOUBLE_EQ(critic_loss(Vector{{0.3, -4.0}}, Vector{{0.3, -4.0}}).loss, 0.0);
  EXPECT_THROW(critic_loss(Vector{{1.0}}, Vector{{1.0, 2.0}}), DataError);
}

TEST(CriticLoss, AlgebraOnRandomScores) {
  Rng rng = make_rng(1);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int t = 0; t < 50; ++t) {
    Vector r(7), f(7);
    for (auto& v : r) v = n(rng);
    for (auto& v : f) v = n(rng);
    EXPECT_EQ(critic_loss(r, f).loss, -r.mean() + f.mean());
  }
}

TEST(CriticLoss, UnitNormLinearCriticHasNoPenalty) {
  Critic critic;
  critic.spec.input_dim = 3;
  critic.spec.output_dim = 1;
  critic.params.layers.push_back({(Matrix(1, 3) << 0.6, 0.8, 0.0).finished(), Vector::Zero(1)});
  std::mt19937_64 g(2);
  ConditionedBatch real{hgtest::random_matrix(6, 2, g), Matrix::Zero(6, 1)};
  ConditionedBatch fake{hgtest::random_matrix(6, 2, g), Matrix::Zero(6, 1)};
  real.labels_onehot.setOnes();
  fake.labels_onehot.setOnes();
  Rng rng = make_rng(3);
  EXPECT_NEAR(critic_loss(critic, real, fake, 10.0, rng).penalty, 0.0, 1e-15);
}

TEST(GeneratorLoss, Examples) {
  EXPECT_DOUBLE_EQ(generator_loss(Vector{{0.0, 2.0}}), -1.0);
  EXPECT_DOUBLE_EQ(generator_loss(Vector::Zero(4)), 0.0);
  EXPECT_DOUBLE_EQ(generator_loss(Vector{{2.5}}), -2.5);
}

TEST(Interpolate, Endpoints) {
  const Matrix real = (Matrix(2, 2) << 0, 0, 1, 1).finished();
  const Matrix fake = (Matrix(2, 2) << 2, 2, 5, 5).finished();
  EXPECT_EQ(interpolate(real, fake, Vector::Ones(2)), real);
  EXPECT_EQ(interpolate(real, fake, Vector::Zero(2)), fake);
  const Matrix mid = interpolate(real, fake, Vector::Constant(2, 0.25));
  EXPECT_DOUBLE_EQ(mid(0, 0), 1.5);
  EXPECT_THROW(interpolate(real, Matrix::Zero(3, 2), Vector::Ones(2)), DataError);
}

// ε weights the real row: x̂ = ε·real + (1−ε)·fake.
TEST(Interpolate, EpsilonWeightsTheRealRow) {
  const Matrix real = Matrix::Zero(1, 2);
  const Matrix fake = Matrix::Constant(1, 2, 2.0);
  const Matrix x = interpolate(real, fake, Vector::Constant(1, 0.25));
  EXPECT_DOUBLE_EQ(x(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(x(0, 1), 1.5);
  EXPECT_DOUBLE_EQ(interpolate(fake, real, Vector::Constant(1, 0.25))(0, 0), 0.5);
}

TEST(Interpolate, RandomEpsilonStaysOnSegment) {
  std::mt19937_64 g(5);
  const Matrix real = hgtest::random_matrix(50, 3, g), fake = hgtest::random_matrix(50, 3, g);
  Rng rng = make_rng(6);
  const Matrix x = interpolate(real, fake, rng);
  for (Eigen::Index i = 0; i < 50; ++i) {
    const double eps = (x(i, 0) - fake(i, 0)) / (real(i, 0) - fake(i, 0));
    EXPECT_GE(eps, -1e-12);
    EXPECT_LE(eps, 1.0 + 1e-12);
    for (Eigen::Index j = 1; j < 3; ++j) EXPECT_NEAR(x(i, j), eps * real(i, j) + (1 - eps) * fake(i, j), 1e-9);
  }
}

// The critic update direction is the sum of the two score-term gradients and
// the penalty gradient. Checked against finite differences of the full
// objective on a 2-feature critic with fixed interpolates.
TEST(CriticGradient, MatchesFiniteDifferenceOfFullObjective) {
  neural::MlpSpec spec;
  spec.input_dim = 2 + 2;
  spec.layer_sizes = {5, 4};
  spec.output_dim = 1;
  const auto params = neural::init_params(spec, 9);
  std::mt19937_64 g(4);
  const Matrix cond = (Matrix(4, 2) << 1, 0, 0, 1, 1, 0, 0, 1).finished();
  const Matrix real = hgtest::random_matrix(4, 2, g), fake = hgtest::random_matrix(4, 2, g);
  const Matrix x_hat = interpolate(real, fake, Vector{{0.1, 0.5, 0.7, 0.9}});
  const double lambda = 10.0;
  auto objective = [&](const neural::MlpParams& p) {
    const Vector rs = neural::forward(p, spec, hconcat(real, cond), neural::Mode::eval).output.col(0);
    const Vector fs = neural::forward(p, spec, hconcat(fake, cond), neural::Mode::eval).output.col(0);
    return critic_loss(rs, fs, neural::penalty_param_gradient(p, spec, hconcat(x_hat, cond), lambda, 2).value).loss;
  };
  const auto tr = neural::forward(params, spec, hconcat(real, cond), neural::Mode::eval);
  const auto tf = neural::forward(params, spec, hconcat(fake, cond), neural::Mode::eval);
  auto grad = neural::backward(params, spec, tr, Matrix::Constant(4, 1, -0.25)).params;
  grad += neural::backward(params, spec, tf, Matrix::Constant(4, 1, 0.25)).params;
  grad += neural::penalty_param_gradient(params, spec, hconcat(x_hat, cond), lambda, 2).gradient;
  EXPECT_LT(hgtest::relative_error(grad.flatten(), hgtest::numeric_param_gradient(params, objective)), 1e-4);
}

TEST(Train, ZeroEpochsReturnsInitialNetworks) {
  const auto data = toy({20, 20}, 3, 1);
  const auto [gan, log] = train(tiny(0), data);
  EXPECT_TRUE(log.steps.empty());
  EXPECT_TRUE(log.epochs.empty());
  const auto spec = generator_spec_for(tiny(0), 3, 2);
  EXPECT_TRUE(gan.generator == neural::init_params(spec, 3 * 2 + 1));
  EXPECT_EQ(gan.generator_spec.input_dim, 4u + 2u);
  EXPECT_EQ(gan.generator_spec.output_dim, 3u);
  EXPECT_EQ(gan.critic_spec.input_dim, 3u + 2u);
}

TEST(Train, StepCountsFollowCriticRatio) {
  const auto data = toy({100, 100}, 2, 2);
  auto cfg = tiny(1, 2);
  const auto [gan, log] = train(cfg, data);
  EXPECT_EQ(log.count(StepKind::critic), 500u);
  EXPECT_EQ(log.count(StepKind::generator), 100u);
  ASSERT_EQ(log.epochs.size(), 1u);
  // Every generator step is preceded by exactly five critic steps.
  std::size_t run = 0;
  for (const auto& s : log.steps) {
    if (s.kind == StepKind::critic) {
      ++run;
    } else {
      EXPECT_EQ(run, 5u);
      run = 0;
    }
  }
}

TEST(Train, TooFewRowsForBatch) {
  const auto data = toy({3, 3}, 2, 3);
  try {
    train(tiny(1, 8), data);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("batch_size"), std::string::npos);
  }
}

TEST(Train, BitIdenticalLogsForSameSeed) {
  const auto data = toy({40, 40}, 3, 4);
  const auto a = train(tiny(2), data);
  const auto b = train(tiny(2), data);
  ASSERT_EQ(a.second.steps.size(), b.second.steps.size());
  for (std::size_t i = 0; i < a.second.steps.size(); ++i) EXPECT_EQ(a.second.steps[i].loss, b.second.steps[i].loss);
  EXPECT_TRUE(a.first.generator == b.first.generator);
  EXPECT_TRUE(a.first.critic == b.first.critic);
}

TEST(Train, ResumeFromCheckpointMatchesUninterrupted) {
  const auto data = toy({40, 40}, 3, 5);
  const auto cfg = tiny(4);
  const auto full = train(cfg, data);

  GanTrainer first(cfg, data);
  first.run_epoch();
  first.run_epoch();
  std::stringstream buf;
  save_checkpoint(buf, first.checkpoint(), first.model().generator_spec, first.model().critic_spec);
  GanTrainer second(cfg, data, load_checkpoint(buf, cfg));
  EXPECT_EQ(second.next_epoch(), 2u);
  while (!second.done()) second.run_epoch();

  EXPECT_TRUE(second.model().generator == full.first.generator);
  EXPECT_TRUE(second.model().critic == full.first.critic);
  const auto& tail = second.log().steps;
  const auto& ref = full.second.steps;
  ASSERT_EQ(first.log().steps.size() + tail.size(), ref.size());
  for (std::size_t i = 0; i < tail.size(); ++i) {
    const auto& r = ref[first.log().steps.size() + i];
    EXPECT_EQ(tail[i].loss, r.loss);
    EXPECT_EQ(tail[i].step_index, r.step_index);
    EXPECT_EQ(tail[i].epoch, r.epoch);
  }
}

TEST(Train, TargetClassesRestrictRows) {
  const auto data = toy({40, 10, 10}, 2, 6);
  auto cfg = tiny(1, 4);
  cfg.target_classes = {1, 2};
  GanTrainer t(cfg, data);
  EXPECT_EQ(t.batches_per_epoch(), 5u);
  cfg.target_classes = {3};
  EXPECT_THROW(GanTrainer(cfg, data), ConfigError);
}

TEST(Sample, LabelsDeterminismAndRange) {
  const auto data = toy({30, 30}, 3, 7);
  const auto [gan, log] = train(tiny(2), data);
  const auto a = sample_synthetic(gan, 1, 50, 11);
  const auto b = sample_synthetic(gan, 1, 50, 11);
  EXPECT_EQ(a.features, b.features);
  for (Label y : a.labels) EXPECT_EQ(y, 1);
  for (Eigen::Index j = 0; j < 3; ++j) {
    const double lo = data.features.col(j).minCoeff(), hi = data.features.col(j).maxCoeff();
    const double slack = 1e-9 * (hi - lo);
    EXPECT_GE(a.features.col(j).minCoeff(), lo - slack);
    EXPECT_LE(a.features.col(j).maxCoeff(), hi + slack);
  }
  EXPECT_EQ(sample_synthetic(gan, 0, 0, 1).rows(), 0u);
  EXPECT_THROW(sample_synthetic(gan, 2, 1, 1), DataError);
}

TEST(Augment, PublishedCountsForThreeClasses) {
  // Bot (CIC), Worms (UNSW) and MITM_ARP_Spoofing (IoTID20) training counts.
  const auto data = toy({1677, 30306, 148}, 2, 8, {"Bot", "MITM_ARP_Spoofing", "Worms"});
  const auto [gan, log] = train(tiny(0), data);
  const AugmentationPlan plan = plan_from_names({{"Bot", 4000}, {"Worms", 4000}, {"MITM_ARP_Spoofing", 12000}},
                                                data.class_names);
  const auto out = build_augmented_dataset(data, plan, gan, 1);
  const auto counts = out.class_counts();
  EXPECT_EQ(counts[0], 5677u);
  EXPECT_EQ(counts[1], 42306u);
  EXPECT_EQ(counts[2], 4148u);
}

TEST(Augment, OriginalRowsFirstAndUnchanged) {
  const auto data = toy({20, 20}, 2, 9);
  const auto [gan, log] = train(tiny(0), data);
  const auto out = build_augmented_dataset(data, {{1, 7}, {0, 3}}, gan, 2);
  ASSERT_EQ(out.rows(), 50u);
  EXPECT_EQ(out.features.topRows(40), data.features);
  const Labels tail(out.labels.begin() + 40, out.labels.end());
  EXPECT_EQ(tail, (Labels{0, 0, 0, 1, 1, 1, 1, 1, 1, 1}));
  EXPECT_THROW(plan_from_names({{"nope", 1}}, data.class_names), ConfigError);
}

TEST(Augment, PresetPlansReproduceAugmentedCounts) {
  for (const std::string key : {"unsw-nb15", "cic-ids2017", "iotid20"}) {
    const auto p = presets::dataset_preset(key);
    const auto plan = p.augmentation_plan();
    for (const auto& c : p.classes) {
      if (c.group != presets::Group::minor) continue;
      EXPECT_EQ(c.train + plan.at(c.name), c.augmented) << key << " " << c.name;
    }
  }
}

TEST(Persistence, GanRoundTrip) {
  const auto data = toy({30, 30}, 3, 10);
  const auto [gan, log] = train(tiny(1), data);
  std::stringstream buf;
  save_gan(buf, gan);
  const auto back = load_gan(buf);
  EXPECT_TRUE(back.generator == gan.generator);
  EXPECT_TRUE(back.critic == gan.critic);
  EXPECT_EQ(back.class_names, gan.class_names);
  EXPECT_EQ(sample_synthetic(back, 0, 5, 1).features, sample_synthetic(gan, 0, 5, 1).features);
}

TEST(TrainLogCsv, Format) {
  TrainLog log;
  log.steps.push_back({0, StepKind::critic, 0, -1.5});
  log.steps.push_back({0, StepKind::generator, 0, 0.25});
  std::ostringstream out;
  log.write_csv(out);
  const std::string s = out.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "epoch,step_kind,step_index,loss");
  EXPECT_NE(s.find("0,critic,0,"), std::string::npos);
  EXPECT_NE(s.find("0,generator,0,"), std::string::npos);
}
