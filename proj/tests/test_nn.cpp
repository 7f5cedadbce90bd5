#include <gtest/gtest.h>

#include <random>

#include "anneal/nn.hpp"

using namespace anneal;
using namespace anneal::nn;

namespace {

Mlp tiny_mlp(std::mt19937_64& rng, std::size_t in, std::vector<LayerSpec> specs) {
  return Mlp::make(in, specs, rng);
}

}  // namespace

TEST(Matrix, IdentityAndAccess) {
  auto m = Matrix::identity(3);
  EXPECT_EQ(m.rows(), 3u);
  EXPECT_EQ(m(1, 1), 1.0);
  EXPECT_EQ(m(0, 2), 0.0);
  m(0, 2) = 4.0;
  EXPECT_EQ(m.row(0)[2], 4.0);
}

TEST(Activation, RoundTripNames) {
  for (auto a : {Activation::relu, Activation::sigmoid, Activation::identity})
    EXPECT_EQ(activation_from_string(to_string(a)), a);
  EXPECT_THROW(activation_from_string("tanh"), Error);
}

TEST(Activation, ReluDerivativeAtZeroIsZero) {
  EXPECT_EQ(activate_derivative(Activation::relu, 0.0, 0.0), 0.0);
  EXPECT_EQ(activate_derivative(Activation::relu, 1e-9, 1e-9), 1.0);
}

TEST(Activation, SigmoidStableAtExtremes) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_GT(sigmoid(800.0), 0.999);
  EXPECT_GE(sigmoid(-800.0), 0.0);
  EXPECT_TRUE(std::isfinite(sigmoid(-800.0)));
}

TEST(Mlp, IdentityConfigurationPassesInputThrough) {
  Mlp m;
  m.layers.push_back({Matrix::identity(4), Vector(4, 0.0), Activation::identity});
  const Vector x{1.5, -2.0, 0.0, 3.25};
  EXPECT_EQ(predict(m, x), x);
  EXPECT_EQ(forward(m, x).output, x);
}

TEST(Mlp, GlorotInitBoundsAndZeroBias) {
  std::mt19937_64 rng(3);
  const LayerSpec specs[] = {{20, Activation::relu}};
  auto m = Mlp::make(30, specs, rng);
  const double limit = std::sqrt(6.0 / 50.0);
  for (double w : m.layers[0].weights.data()) EXPECT_LE(std::abs(w), limit);
  for (double b : m.layers[0].bias) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(m.parameter_count(), 30u * 20u + 20u);
}

TEST(Mlp, WrongInputWidthNamesLayer) {
  std::mt19937_64 rng(1);
  auto m = tiny_mlp(rng, 3, {{4, Activation::relu}, {2, Activation::identity}});
  try {
    forward(m, Vector(5, 1.0));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.layer(), 0u);
  }
}

TEST(Mlp, ValidateCatchesChainMismatch) {
  std::mt19937_64 rng(1);
  auto m = tiny_mlp(rng, 3, {{4, Activation::relu}, {2, Activation::identity}});
  m.layers[1].weights = Matrix(2, 5);
  try {
    m.validate();
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_EQ(e.layer(), 1u);
  }
}

TEST(Mlp, PredictMatchesForward) {
  std::mt19937_64 rng(9);
  auto m = tiny_mlp(rng, 5, {{7, Activation::relu}, {3, Activation::sigmoid}});
  const Vector x{0.1, -0.3, 0.7, 1.1, -2.0};
  EXPECT_EQ(predict(m, x), forward(m, x).output);
}

class MlpGradient : public ::testing::TestWithParam<int> {};

TEST_P(MlpGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(GetParam());
  auto m = tiny_mlp(rng, 4, {{5, Activation::relu}, {4, Activation::sigmoid}, {3, Activation::identity}});
  std::normal_distribution<double> n01;
  for (auto& l : m.layers)
    for (auto& b : l.bias) b = 0.1 * n01(rng);
  Vector x(4), target(3);
  for (auto& v : x) v = n01(rng);
  for (auto& v : target) v = n01(rng);

  // L = 0.5 * |y - target|^2
  auto loss_at = [&](const Mlp& mm) {
    const auto y = predict(mm, x);
    double l = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) l += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
    return l;
  };
  const auto fr = forward(m, x);
  Vector dy(3);
  for (std::size_t i = 0; i < 3; ++i) dy[i] = fr.output[i] - target[i];
  const auto br = backward(m, fr.tape, dy);
  const auto analytic = flatten(br.parameter_gradients.blocks());

  const auto blocks = m.parameter_blocks();
  const auto base = flatten(blocks);
  const auto numeric = finite_diff_gradient(
      [&](std::span<const double> p) {
        assign(blocks, p);
        return loss_at(m);
      },
      base, 1e-6);
  assign(blocks, base);
  ASSERT_EQ(analytic.size(), numeric.size());
  for (std::size_t i = 0; i < analytic.size(); ++i)
    EXPECT_NEAR(analytic[i], numeric[i], 1e-6 + 1e-5 * std::abs(numeric[i])) << "parameter " << i;

  // input gradient as well
  const auto num_x = finite_diff_gradient(
      [&](std::span<const double> xx) {
        const auto y = predict(m, xx);
        double l = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) l += 0.5 * (y[i] - target[i]) * (y[i] - target[i]);
        return l;
      },
      x, 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(br.input_gradient[i], num_x[i], 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Seeds, MlpGradient, ::testing::Range(1, 11));

TEST(Adam, FirstStepMovesByLearningRate) {
  // With bias correction the first update is lr * g / (|g| + eps) per entry.
  Vector p{1.0, -2.0, 0.5};
  const Vector g{0.3, -4.0, 0.0};
  auto st = AdamState::for_size(3, 0.01);
  std::span<double> pb(p);
  std::span<const double> gb(g);
  adam_step(std::span<const std::span<double>>(&pb, 1), std::span<const std::span<const double>>(&gb, 1), st);
  EXPECT_NEAR(p[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.01 * 4.0 / (4.0 + 1e-8), 1e-15);
  EXPECT_EQ(p[2], 0.5);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, SecondStepMatchesHandComputation) {
  Vector p{0.0};
  auto st = AdamState::for_size(1, 0.1);
  std::span<double> pb(p);
  const double gs[] = {1.0, -0.5};
  double m = 0, v = 0, ref = 0;
  for (int t = 1; t <= 2; ++t) {
    const double g = gs[t - 1];
    std::span<const double> gb(&gs[t - 1], 1);
    adam_step(std::span<const std::span<double>>(&pb, 1), std::span<const std::span<const double>>(&gb, 1), st);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(p[0], ref, 1e-15);
}

TEST(Adam, SizeMismatchThrows) {
  Vector p{0.0, 1.0};
  const Vector g{1.0};
  auto st = AdamState::for_size(2, 0.1);
  std::span<double> pb(p);
  std::span<const double> gb(g);
  EXPECT_THROW(adam_step(std::span<const std::span<double>>(&pb, 1),
                         std::span<const std::span<const double>>(&gb, 1), st),
               DimensionError);
}

TEST(Cosine, KnownValues) {
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 2}, Vector{2, 4}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 2}, Vector{-1, -2}), -1.0);
  EXPECT_EQ(cosine_similarity(Vector{0, 0}, Vector{1, 1}), 0.0);
  EXPECT_TRUE(cosine_similarity_checked(Vector{0, 0}, Vector{1, 1}).zero_norm);
}

TEST(Cosine, StaysInUnitInterval) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 1000; ++t) {
    Vector a(6), b(6);
    for (auto& x : a) x = n01(rng);
    for (auto& x : b) x = n01(rng);
    const double s = cosine_similarity(a, b);
    EXPECT_LE(s, 1.0);
    EXPECT_GE(s, -1.0);
    EXPECT_DOUBLE_EQ(cosine_similarity(a, a), 1.0);
  }
}

TEST(Cosine, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 20; ++t) {
    Vector a(5), b(5);
    for (auto& x : a) x = n01(rng);
    for (auto& x : b) x = n01(rng);
    Vector ga, gb;
    cosine_similarity_gradient(a, b, ga, gb);
    const auto na = finite_diff_gradient([&](std::span<const double> p) { return cosine_similarity(p, b); }, a, 1e-6);
    const auto nb = finite_diff_gradient([&](std::span<const double> p) { return cosine_similarity(a, p); }, b, 1e-6);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_NEAR(ga[i], na[i], 1e-7);
      EXPECT_NEAR(gb[i], nb[i], 1e-7);
    }
  }
}

TEST(FiniteDiff, NonFiniteLossThrows) {
  const Vector p{1.0};
  EXPECT_THROW(finite_diff_gradient([](std::span<const double>) { return std::nan(""); }, p, 1e-3),
               NumericError);
}
