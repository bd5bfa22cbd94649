#include <gtest/gtest.h>

#include <random>

#include "tomodiff/preprocess.hpp"
#include "tomodiff/trainer.hpp"

namespace tomodiff::preprocess {
namespace {

Matrix RandomTm(Index n, Index batch, std::mt19937_64& rng) {
  std::lognormal_distribution<double> volume(3.0, 1.5);
  Matrix x(n, batch);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = volume(rng);
  return x;
}

AutoencoderParams Random(const AutoencoderDims& dims, std::uint64_t seed, const Matrix& fit_on) {
  std::mt19937_64 rng(seed);
  AutoencoderParams p = MakeAutoencoder(dims, rng);
  p.scaling = FitScaling(fit_on.transpose());
  return p;
}

TEST(Embed, ZeroWeightsGiveZeroLatent) {
  const AutoencoderParams p = ZeroAutoencoder({6, 5, 3});
  std::mt19937_64 rng(1);
  const Matrix h = Embed(p, RandomTm(6, 4, rng));
  EXPECT_EQ(h.rows(), 3);
  EXPECT_EQ(h.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Embed, ReferenceLatentSizes) {
  std::mt19937_64 rng(2);
  for (const auto& [model, k] : {std::pair{trainer::ModelConfig::Abilene(), 128}, std::pair{trainer::ModelConfig::Geant(), 256}}) {
    const AutoencoderParams p = MakeAutoencoder(model.autoencoder_dims(), rng);
    const Vector h = Embed(p, Vector(RandomTm(model.flows, 1, rng).col(0)));
    EXPECT_EQ(h.size(), k);
    EXPECT_TRUE(h.allFinite());
  }
}

TEST(Embed, NonFiniteAndNegativeInputsRejected) {
  const AutoencoderParams p = ZeroAutoencoder({4, 3, 2});
  Matrix x = Matrix::Ones(4, 1);
  x(2, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(Embed(p, x), ValidationError);
  x(2, 0) = -1.0;
  EXPECT_THROW(Embed(p, x), ValidationError);
  EXPECT_THROW(Embed(p, Matrix(Matrix::Ones(5, 1))), ShapeError);
}

TEST(Embed, Deterministic) {
  std::mt19937_64 rng(3);
  const Matrix x = RandomTm(10, 3, rng);
  const AutoencoderParams p = Random({10, 8, 4}, 7, x);
  EXPECT_TRUE(Embed(p, x) == Embed(p, x));
  const Matrix h = Embed(p, x);
  EXPECT_TRUE(Recover(p, h) == Recover(p, h));
}

TEST(ValidateDims, LatentMustBeSmallerThanInput) {
  EXPECT_THROW(ZeroAutoencoder({4, 3, 4}), ValidationError);
  EXPECT_THROW(ZeroAutoencoder({4, 0, 2}), ValidationError);
}

TEST(Recover, ZeroWeightsGiveConstantOutput) {
  const AutoencoderParams p = ZeroAutoencoder({6, 5, 3});
  std::mt19937_64 rng(4);
  const Matrix x = Recover(p, nn::StandardNormal(3, 5, rng));
  for (Index c = 1; c < x.cols(); ++c) EXPECT_TRUE(x.col(c) == x.col(0));
}

TEST(Recover, OutputIsNonnegative) {
  std::mt19937_64 rng(5);
  const Matrix data = RandomTm(12, 50, rng);
  const AutoencoderParams p = Random({12, 10, 6}, 11, data);
  const Matrix x = Recover(p, Matrix(10.0 * nn::StandardNormal(6, 500, rng)));
  EXPECT_GE(x.minCoeff(), 0.0);
  EXPECT_TRUE(x.allFinite());
}

TEST(Recover, ShapeMismatch) {
  const AutoencoderParams p = ZeroAutoencoder({6, 5, 3});
  EXPECT_THROW(Recover(p, Matrix(Matrix::Zero(4, 1))), ShapeError);
}

TEST(Recover, MatchesUnscaleAwayFromZero) {
  // For log-volumes well above zero the softplus is the identity to double precision.
  ScalingState s{Vector::Constant(3, 4.0), Vector::Constant(3, 0.5)};
  Matrix r(3, 1);
  r << 0.3, -1.0, 2.0;
  EXPECT_LE(((OutputMap(s, r) - Unscale(s, r)).array() / Unscale(s, r).array()).abs().maxCoeff(), 1e-12);
}

TEST(MeanSquaredNorm, HandEvaluated) {
  Matrix target(2, 1), recon(2, 1);
  target << 1.0, 2.0;
  recon << 2.0, 4.0;
  EXPECT_NEAR(MeanSquaredNorm(target, recon), 5.0, 1e-12);
  EXPECT_EQ(MeanSquaredNorm(target, target), 0.0);
}

TEST(ReconstructionLoss, NonnegativeAndBatchMean) {
  std::mt19937_64 rng(6);
  const Matrix data = RandomTm(8, 6, rng);
  const AutoencoderParams p = Random({8, 6, 3}, 2, data);
  const double whole = ReconstructionLoss(p, data);
  double sum = 0.0;
  for (Index c = 0; c < data.cols(); ++c) sum += ReconstructionLoss(p, Matrix(data.col(c)));
  EXPECT_GE(whole, 0.0);
  EXPECT_NEAR(whole, sum / static_cast<double>(data.cols()), 1e-12 * (1.0 + whole));
  EXPECT_THROW(ReconstructionLoss(p, Matrix(8, 0)), ValidationError);
}

TEST(Scaling, RoundTrip) {
  std::mt19937_64 rng(7);
  Matrix x = RandomTm(9, 40, rng);
  x(0, 0) = 0.0;
  x(3, 2) = 1e-7;
  x(5, 5) = 1e9;
  const ScalingState s = FitScaling(x.transpose());
  const Matrix back = Unscale(s, Scale(s, x));
  for (Index i = 0; i < x.size(); ++i) {
    const double ref = x.data()[i];
    EXPECT_LE(std::abs(back.data()[i] - ref), 1e-9 * std::max(ref, 1e-300) + 1e-15) << ref;
  }
}

TEST(Scaling, ConstantFlowGetsUnitStddev) {
  Matrix train = Matrix::Ones(5, 2);
  train.col(1) << 1, 2, 3, 4, 5;
  const ScalingState s = FitScaling(train);
  EXPECT_EQ(s.stddev(0), 1.0);
  EXPECT_GT(s.stddev(1), 0.0);
}

// Analytic reconstruction-loss gradient against central differences.
TEST(ReconstructionLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const Matrix data = RandomTm(10, 5, rng);
  AutoencoderParams p = Random({10, 7, 4}, 3, data);
  std::vector<double> grad;
  ReconstructionLossAndGrad(p, data, grad);
  std::uniform_int_distribution<std::size_t> pick(0, p.theta.size() - 1);
  int checked = 0;
  for (int probe = 0; probe < 40 && checked < 10; ++probe) {
    const std::size_t i = pick(rng);
    const double saved = p.theta[i];
    const double h = 1e-6;
    p.theta[i] = saved + h;
    const double up = ReconstructionLoss(p, data);
    p.theta[i] = saved - h;
    const double down = ReconstructionLoss(p, data);
    p.theta[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    if (std::abs(fd) < 1e-6 && std::abs(grad[i]) < 1e-6) continue;
    EXPECT_LE(std::abs(fd - grad[i]), 1e-4 * std::max(std::abs(fd), std::abs(grad[i]))) << "param " << i;
    ++checked;
  }
  EXPECT_EQ(checked, 10);
}

TEST(RecoverBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  const Matrix data = RandomTm(10, 20, rng);
  const AutoencoderParams p = Random({10, 7, 4}, 5, data);
  const Matrix h = nn::StandardNormal(4, 3, rng);
  const Matrix weights = nn::StandardNormal(10, 3, rng);
  auto objective = [&](const Matrix& hh) { return (weights.array() * Recover(p, hh).array()).sum(); };
  const Matrix grad = RecoverBackward(p, h, weights);
  for (Index i = 0; i < h.size(); ++i) {
    Matrix up = h, down = h;
    up.data()[i] += 1e-6;
    down.data()[i] -= 1e-6;
    const double fd = (objective(up) - objective(down)) / 2e-6;
    EXPECT_LE(std::abs(fd - grad.data()[i]), 1e-4 * std::max(std::abs(fd), 1e-3));
  }
}

}  // namespace
}  // namespace tomodiff::preprocess
