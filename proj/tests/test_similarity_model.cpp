#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "anneal/similarity_model.hpp"
#include "oracles.hpp"

using namespace anneal;

namespace {

ModelConfig golden_config() {
  ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.encoder_hidden = {16};
  cfg.embedding_dim = 8;
  cfg.head_dims = {8, 8, 8};
  return cfg;
}

SiameseModel golden_model() {
  Rng rng(2024);
  return SiameseModel::create(golden_config(), rng);
}

const std::vector<double> kX1{-0.3, -0.2, -0.1, 0.0, 0.1, 0.2};
const std::vector<double> kX2{0.25, 0.1, 0.55, -0.2, 0.85, -0.5};

}  // namespace

TEST(Losses, ContrastiveTable) {
  EXPECT_NEAR(contrastive_loss(1.0, kSimilar, 0.1), 0.0, 1e-9);
  EXPECT_NEAR(contrastive_loss(0.05, kDissimilar, 0.1), 0.0, 1e-9);
  EXPECT_NEAR(contrastive_loss(0.6, kDissimilar, 0.1), 0.5, 1e-9);
}

TEST(Losses, BceTable) {
  EXPECT_NEAR(bce_loss(1.0, kSimilar), 0.0, 1e-9);
  EXPECT_NEAR(bce_loss(0.5, kSimilar), std::log(2.0), 1e-9);
  EXPECT_NEAR(bce_loss(0.5, kDissimilar), std::log(2.0), 1e-9);
  EXPECT_NEAR(bce_loss(0.5, kDissimilar), 0.693147, 1e-6);
  EXPECT_TRUE(std::isfinite(bce_loss(0.0, kSimilar)));
  EXPECT_NEAR(bce_loss(0.0, kSimilar), -std::log(1e-12), 1e-9);
}

TEST(Losses, CombinedTable) {
  EXPECT_EQ(combined_loss(0.7, 0.693147, 0.0), 0.7);
  EXPECT_EQ(combined_loss(0.7, 0.693147, 1.0), 0.693147);
  EXPECT_NEAR(combined_loss(0.7, 0.693147, 0.1), 0.6993147, 1e-9);
}

TEST(Losses, CombinedIsLinearInBeta) {
  for (double beta : {0.0, 0.1, 0.5, 1.0}) {
    const double a = 0.37, b = 1.91;
    EXPECT_NEAR(combined_loss(a, b, beta), a + beta * (b - a), 1e-12);
  }
}

TEST(Losses, ContrastiveNonNegativeAndZeroSet) {
  for (double s = -1.0; s <= 1.0; s += 0.01) {
    for (double m : {0.0, 0.1, 0.5}) {
      EXPECT_GE(contrastive_loss(s, kSimilar, m), 0.0);
      EXPECT_GE(contrastive_loss(s, kDissimilar, m), 0.0);
      EXPECT_EQ(contrastive_loss(s, kDissimilar, m) == 0.0, s <= m);
    }
  }
  EXPECT_EQ(contrastive_loss(1.0, kSimilar, 0.1), 0.0);
  EXPECT_GT(contrastive_loss(0.999, kSimilar, 0.1), 0.0);
}

TEST(SiameseModel, ShapesFollowConfig) {
  auto m = golden_model();
  EXPECT_EQ(m.encoder.in_dim(), 6u);
  EXPECT_EQ(m.encoder.out_dim(), 8u);
  EXPECT_EQ(m.similarity_head.layers.size(), 3u);
  EXPECT_EQ(m.similarity_head.in_dim(), 8u);
  EXPECT_EQ(m.classifier.layers.size(), 3u);
  EXPECT_EQ(m.classifier.in_dim(), 16u);
  EXPECT_EQ(m.classifier.out_dim(), 1u);
  EXPECT_EQ(m.classifier.layers.back().activation, nn::Activation::sigmoid);
}

TEST(SiameseModel, ConfigValidation) {
  auto cfg = golden_config();
  cfg.margin = 2.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = golden_config();
  cfg.beta = -0.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = golden_config();
  cfg.input_dim = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(SiameseModel, GoldenEmbedding) {
  const auto m = golden_model();
  const std::vector<double> golden{0.027131349710490194, -0.12988317876969846, 0.048103638307265675,
                                   -0.047817863621342341, -0.068777747963983199, 0.083838277496694147,
                                   -0.14554605824606154, 0.003553955464745108};
  const auto f = embed(m, kX1);
  ASSERT_EQ(f.size(), golden.size());
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(f[i], golden[i], 1e-12);
}

TEST(SiameseModel, GoldenPrediction) {
  const auto m = golden_model();
  const auto p = predict_pair(m, kX1, kX2);
  EXPECT_NEAR(p.s, 0.93554218157949121, 1e-12);
  EXPECT_NEAR(p.y_hat, 0.52555544350077465, 1e-12);
}

TEST(SiameseModel, IdenticalInputsGiveUnitSimilarity) {
  const auto m = golden_model();
  EXPECT_EQ(embed(m, kX2), embed(m, kX2));
  EXPECT_NEAR(predict_pair(m, kX2, kX2).s, 1.0, 1e-9);
}

TEST(SiameseModel, SimilarityIsOrderInvariant) {
  const auto m = golden_model();
  EXPECT_DOUBLE_EQ(predict_pair(m, kX1, kX2).s, predict_pair(m, kX2, kX1).s);
}

TEST(SiameseModel, PredictionRanges) {
  const auto m = golden_model();
  Rng rng(5);
  std::normal_distribution<double> n(0.0, 10.0);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(6), b(6);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    const auto p = predict_pair(m, a, b);
    EXPECT_GE(p.s, -1.0);
    EXPECT_LE(p.s, 1.0);
    EXPECT_GT(p.y_hat, 0.0);
    EXPECT_LT(p.y_hat, 1.0);
  }
}

TEST(SiameseModel, WrongInputWidthThrows) {
  const auto m = golden_model();
  EXPECT_THROW(embed(m, std::vector<double>(5, 0.0)), DimensionError);
}

class FullObjectiveGradient : public ::testing::TestWithParam<int> {};

TEST_P(FullObjectiveGradient, MatchesFiniteDifferences) {
  for (double beta : {0.0, 0.1, 0.5, 1.0}) {
    const auto r = oracle::check_model_gradient(static_cast<std::uint64_t>(GetParam()), beta);
    EXPECT_TRUE(r.ok()) << "beta " << beta << " rel " << r.max_rel_error << " abs " << r.max_abs_error;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, FullObjectiveGradient, ::testing::Range(100, 110));

TEST(Gradients, BetaExtremesSilenceOneHead) {
  for (double beta : {0.0, 1.0}) {
    auto cfg = golden_config();
    cfg.beta = beta;
    Rng rng(11);
    const auto m = SiameseModel::create(cfg, rng);
    auto g = ModelGradients::zeros_like(m);
    accumulate_pair_gradient(m, kX1, kX2, kDissimilar, g, 1.0);
    accumulate_pair_gradient(m, kX2, kX1, kSimilar, g, 1.0);
    const auto bc = nn::flatten(g.classifier.blocks());
    const auto sh = nn::flatten(g.similarity_head.blocks());
    auto all_zero = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    };
    if (beta == 0.0) {
      EXPECT_TRUE(all_zero(bc));
      EXPECT_FALSE(all_zero(sh));
    } else {
      EXPECT_TRUE(all_zero(sh));
      EXPECT_FALSE(all_zero(bc));
    }
  }
}

namespace {

std::vector<ImageRecord> two_clusters(int per, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  std::vector<ImageRecord> recs;
  for (int i = 0; i < 2 * per; ++i) {
    const int c = i < per ? 0 : 1;
    std::vector<double> f(4);
    for (std::size_t d = 0; d < 4; ++d) f[d] = (c == 0 ? 1.0 : -1.0) * (d % 2 ? 1.0 : 0.5) + n(rng);
    recs.push_back({i, f, c, Split::train});
  }
  return recs;
}

}  // namespace

TEST(Training, ZeroLearningRateLeavesParametersAndTraceConstant) {
  Dataset d(two_clusters(10, 1));
  LabeledSet t;
  for (ImageId i = 0; i < 19; ++i) t.add({{i, i + 1}, d.at(i).oracle_class == d.at(i + 1).oracle_class, Provenance::seed});
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.learning_rate = 0.0;
  Rng rng(3);
  auto m = SiameseModel::create(cfg, rng);
  const auto before = nn::flatten(m.parameter_blocks());
  const auto ex = training_examples(t, d);
  const auto trace = train_epochs(m, ex, {5, 4}, rng);
  EXPECT_EQ(nn::flatten(m.parameter_blocks()), before);
  ASSERT_EQ(trace.size(), 5u);
  for (double v : trace) EXPECT_NEAR(v, trace[0], 1e-12);
}

TEST(Training, SeparableClustersReduceLoss) {
  Dataset d(two_clusters(20, 2));
  LabeledSet t;
  Rng pick(4);
  std::uniform_int_distribution<ImageId> u(0, 39);
  while (t.size() < 120) {
    const ImageId a = u(pick), b = u(pick);
    if (a == b) continue;
    t.add({canonicalize(a, b), d.at(a).oracle_class == d.at(b).oracle_class, Provenance::seed});
  }
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.encoder_hidden = {16};
  cfg.embedding_dim = 8;
  cfg.head_dims = {8, 8, 8};
  cfg.learning_rate = 1e-2;
  Rng rng(5);
  auto m = SiameseModel::create(cfg, rng);
  const auto trace = train_epochs(m, training_examples(t, d), {50, 16}, rng);
  EXPECT_LT(trace.back(), trace.front());
}

TEST(Training, SingleSimilarDuplicatePairConverges) {
  std::vector<ImageRecord> recs{{0, {0.3, -0.7, 1.2}, 0, Split::train}, {1, {0.3, -0.7, 1.2}, 0, Split::train}};
  Dataset d(recs);
  LabeledSet t;
  t.add({{0, 1}, kSimilar, Provenance::seed});
  ModelConfig cfg;
  cfg.input_dim = 3;
  Rng rng(6);
  auto m = SiameseModel::create(cfg, rng);
  train_epochs(m, training_examples(t, d), {200, 1}, rng);
  EXPECT_LT(pair_loss(m, d.features(0), d.features(1), kSimilar).contrastive, 1e-3);
}

TEST(Training, EmptySetThrows) {
  ModelConfig cfg;
  cfg.input_dim = 3;
  Rng rng(1);
  auto m = SiameseModel::create(cfg, rng);
  EXPECT_THROW(train_epochs(m, {}, {1, 1}, rng), Error);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto m = golden_model();
  // push some optimizer state in
  Rng rng(9);
  std::vector<ImageRecord> recs{{0, kX1, 0, Split::train}, {1, kX2, 1, Split::train}};
  Dataset d(recs);
  LabeledSet t;
  t.add({{0, 1}, kDissimilar, Provenance::seed});
  train_epochs(m, training_examples(t, d), {3, 1}, rng);

  std::stringstream ss;
  save_checkpoint(ss, m);
  const auto back = load_checkpoint(ss);
  EXPECT_EQ(back.encoder.layers.size(), m.encoder.layers.size());
  for (std::size_t i = 0; i < m.encoder.layers.size(); ++i) {
    EXPECT_EQ(back.encoder.layers[i].weights, m.encoder.layers[i].weights);
    EXPECT_EQ(back.encoder.layers[i].bias, m.encoder.layers[i].bias);
  }
  auto mm = m;
  auto bb = back;
  EXPECT_EQ(nn::flatten(bb.parameter_blocks()), nn::flatten(mm.parameter_blocks()));
  EXPECT_EQ(back.adam, m.adam);
  EXPECT_EQ(back.config.margin, m.config.margin);
  EXPECT_EQ(back.config.head_dims, m.config.head_dims);
  const auto p1 = predict_pair(m, kX1, kX2), p2 = predict_pair(back, kX1, kX2);
  EXPECT_EQ(p1.s, p2.s);
  EXPECT_EQ(p1.y_hat, p2.y_hat);
}

TEST(Checkpoint, CorruptionDetected) {
  const auto m = golden_model();
  std::stringstream ss;
  save_checkpoint(ss, m);
  std::string text = ss.str();
  EXPECT_THROW({
    std::istringstream bad("not-a-checkpoint\n");
    load_checkpoint(bad);
  }, Error);
  // truncate halfway
  std::istringstream cut(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(cut), Error);
  // tamper with the config hash line
  const auto pos = text.find("config_hash ");
  ASSERT_NE(pos, std::string::npos);
  text[pos + 12] = text[pos + 12] == '0' ? '1' : '0';
  std::istringstream tampered(text);
  EXPECT_THROW(load_checkpoint(tampered), Error);
}
