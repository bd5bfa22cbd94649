#include <gtest/gtest.h>

#include <random>

#include "tomodiff/denoiser.hpp"

namespace tomodiff::denoiser {
namespace {

DenoiserParams Toy(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return MakeDenoiser({8, 16, 8, 1000}, rng);
}

TEST(StepEmbedding, ZeroStepAlternates) {
  const Vector e = StepEmbedding(0, 16);
  for (Index i = 0; i < 16; ++i) EXPECT_EQ(e(i), i % 2 == 0 ? 0.0 : 1.0);
}

TEST(StepEmbedding, Deterministic) { EXPECT_TRUE(StepEmbedding(417, 64) == StepEmbedding(417, 64)); }

TEST(StepEmbedding, PairwiseDistinct) {
  std::vector<Vector> all;
  for (int t = 1; t <= 1000; ++t) all.push_back(StepEmbedding(t, 64));
  double closest = 1e300;
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = a + 1; b < all.size(); ++b) closest = std::min(closest, (all[a] - all[b]).norm());
  }
  EXPECT_GT(closest, 1e-6);
}

TEST(StepEmbedding, NegativeStepRejected) { EXPECT_THROW(StepEmbedding(-1, 8), RangeError); }

TEST(PredictNoise, ZeroWeightsGiveZero) {
  const DenoiserParams p = ZeroDenoiser({8, 16, 8, 1000});
  std::mt19937_64 rng(1);
  const int step[1] = {123};
  EXPECT_EQ(PredictNoise(p, nn::StandardNormal(8, 5, rng), step).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PredictNoise, DeterministicAndStepSensitive) {
  const DenoiserParams p = Toy(2);
  std::mt19937_64 rng(3);
  const Matrix x = nn::StandardNormal(8, 1, rng);
  const int t1[1] = {10}, t2[1] = {900};
  EXPECT_TRUE(PredictNoise(p, x, t1) == PredictNoise(p, x, t1));
  EXPECT_GT((PredictNoise(p, x, t1) - PredictNoise(p, x, t2)).norm(), 1e-8);
}

TEST(PredictNoise, PerColumnStepsMatchSingleStepCalls) {
  const DenoiserParams p = Toy(4);
  std::mt19937_64 rng(5);
  const Matrix x = nn::StandardNormal(8, 3, rng);
  const std::vector<int> steps{1, 500, 1000};
  const Matrix batched = PredictNoise(p, x, steps);
  for (Index c = 0; c < 3; ++c) {
    EXPECT_LE((batched.col(c) - PredictNoise(p, Vector(x.col(c)), steps[static_cast<std::size_t>(c)])).norm(), 1e-12);
  }
}

TEST(PredictNoise, Validation) {
  const DenoiserParams p = Toy(6);
  const Matrix x = Matrix::Zero(8, 2);
  const int zero[1] = {0}, high[1] = {1001};
  EXPECT_THROW(PredictNoise(p, x, zero), RangeError);
  EXPECT_THROW(PredictNoise(p, x, high), RangeError);
  const std::vector<int> three{1, 2, 3};
  EXPECT_THROW(PredictNoise(p, x, three), ShapeError);
  const int ok[1] = {1};
  EXPECT_THROW(PredictNoise(p, Matrix(Matrix::Zero(7, 1)), ok), ShapeError);
  std::mt19937_64 rng(1);
  EXPECT_THROW(MakeDenoiser({8, 18, 8, 10}, rng), ValidationError);
}

TEST(PredictNoise, FiniteForLargeInputs) {
  const DenoiserParams p = Toy(7);
  std::mt19937_64 rng(8);
  Matrix x = nn::StandardNormal(8, 20, rng);
  x = x.array().rowwise() / x.colwise().norm().array() * 1e3;
  const int t[1] = {1};
  EXPECT_TRUE(PredictNoise(p, x, t).allFinite());
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  const DenoiserParams p = Toy(9);
  std::mt19937_64 rng(10);
  const Matrix x = nn::StandardNormal(8, 2, rng);
  const Matrix weights = nn::StandardNormal(8, 2, rng);
  const std::vector<int> steps{37, 640};
  ForwardCache cache;
  PredictNoise(p, x, steps, &cache);
  const Matrix grad = Backward(p, cache, weights, {});
  auto objective = [&](const Matrix& xx) { return (weights.array() * PredictNoise(p, xx, steps).array()).sum(); };
  for (Index i = 0; i < x.size(); ++i) {
    Matrix up = x, down = x;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    const double fd = (objective(up) - objective(down)) / 2e-6;
    EXPECT_LE(std::abs(fd - grad.data()[i]), 1e-4 * std::max(std::abs(fd), 1e-3)) << i;
  }
}

TEST(Backward, ParameterGradientMatchesFiniteDifferences) {
  DenoiserParams p = Toy(11);
  std::mt19937_64 rng(12);
  const Matrix x = nn::StandardNormal(8, 3, rng);
  const Matrix weights = nn::StandardNormal(8, 3, rng);
  const std::vector<int> steps{5, 50, 500};
  ForwardCache cache;
  PredictNoise(p, x, steps, &cache);
  std::vector<double> grad(p.theta.size(), 0.0);
  Backward(p, cache, weights, grad);
  auto objective = [&] { return (weights.array() * PredictNoise(p, x, steps).array()).sum(); };
  std::uniform_int_distribution<std::size_t> pick(0, p.theta.size() - 1);
  int checked = 0;
  for (int probe = 0; probe < 200 && checked < 25; ++probe) {
    const std::size_t i = pick(rng);
    const double saved = p.theta[i];
    p.theta[i] = saved + 1e-6;
    const double up = objective();
    p.theta[i] = saved - 1e-6;
    const double down = objective();
    p.theta[i] = saved;
    const double fd = (up - down) / 2e-6;
    if (std::abs(fd) < 1e-7 && std::abs(grad[i]) < 1e-7) continue;
    EXPECT_LE(std::abs(fd - grad[i]), 1e-4 * std::max(std::abs(fd), std::abs(grad[i]))) << "param " << i;
    ++checked;
  }
  EXPECT_EQ(checked, 25);
}

}  // namespace
}  // namespace tomodiff::denoiser
