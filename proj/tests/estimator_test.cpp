#include <gtest/gtest.h>

#include <algorithm>

#include "tomodiff/checkpoint.hpp"
#include "tomodiff/estimator.hpp"
#include "tomodiff/toy.hpp"

namespace tomodiff::estimator {
namespace {

data::RoutingMatrix Row11() {
  Matrix a(1, 2);
  a << 1, 1;
  return {a};
}

const trainer::ModelCheckpoint& ToyModel() {
  static const trainer::ModelCheckpoint model = [] {
    trainer::ModelConfig m;
    m.flows = 16;
    m.latent = 8;
    m.encoder_hidden = 24;
    m.denoiser_width = 16;
    m.step_embedding = 8;
    m.diffusion_steps = 100;
    trainer::TrainConfig t;
    t.pretrain_epochs = 40;
    t.joint_epochs = 40;
    t.batch_size = 32;
    t.learning_rate = 2e-3;
    t.seed = 3;
    return trainer::Train(m, t, toy::TwoRegimeSeries(288, {}).values);
  }();
  return model;
}

data::RoutingMatrix ToyRouting() {
  return data::BuildRoutingMatrix(toy::FourNodeTopology(), data::RoutingPolicy::kDeterministic);
}

diffusion::SamplerConfig FiveStepDdim(double eta = 0.0) { return {diffusion::SamplerMode::kDdim, 5, eta, {}}; }

TEST(Residual, HandEvaluated) {
  Matrix x(1, 2), y(1, 1);
  x << 1, 2;
  y << 5;
  EXPECT_NEAR(Residual(Row11(), x, y, Norm::kL2), 4.0, 1e-12);
  EXPECT_NEAR(Residual(Row11(), x, y, Norm::kL1), 2.0, 1e-12);
  y << 3;
  EXPECT_EQ(Residual(Row11(), x, y, Norm::kL2), 0.0);
}

TEST(Residual, ShapeMismatch) {
  EXPECT_THROW(Residual(Row11(), Matrix::Ones(1, 3), Matrix::Ones(1, 1), Norm::kL2), ShapeError);
  EXPECT_THROW(Residual(Row11(), Matrix::Ones(1, 2), Matrix::Ones(1, 2), Norm::kL2), ShapeError);
}

TEST(BaselineLeastNorm, Examples) {
  Matrix y(1, 1);
  y << 4;
  const Matrix x = BaselineLeastNorm(Row11(), y);
  EXPECT_NEAR(x(0, 0), 2.0, 1e-12);
  EXPECT_NEAR(x(0, 1), 2.0, 1e-12);

  Matrix loads(2, 3);
  loads << 1, 2, 3, 4, 5, 6;
  EXPECT_LE((BaselineLeastNorm({Matrix::Identity(3, 3)}, loads) - loads).norm(), 1e-12);
  EXPECT_EQ(BaselineLeastNorm(ToyRouting(), Matrix::Zero(2, 5)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BaselineLeastNorm, SatisfiesSystemWhenNonnegative) {
  const data::RoutingMatrix a = ToyRouting();
  std::mt19937_64 rng(1);
  Matrix x = nn::StandardNormal(4, 16, rng).cwiseAbs();
  const Matrix y = x * a.entries.transpose();
  const Matrix xh = BaselineLeastNorm(a, y);
  EXPECT_GE(xh.minCoeff(), 0.0);
  // Clipping can only remove negative mass; the unclipped solve is exact.
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a.entries);
  EXPECT_LE((a.entries * cod.solve(y.transpose()) - y.transpose()).norm(), 1e-9 * y.norm());
}

TEST(InitSearch, SingleCandidateIsReturned) {
  const auto& c = ToyModel();
  const Matrix y = toy::TwoRegimeSeries(3, {}).values * ToyRouting().entries.transpose();
  const InitResult r = InitSearch(c, ToyRouting(), y, 1, FiveStepDdim(), 7);
  for (const Index j : r.chosen) EXPECT_EQ(j, 0);
}

TEST(InitSearch, PlantedExactCandidateWinsAndTiesGoLow) {
  const auto& c = ToyModel();
  const data::RoutingMatrix a = ToyRouting();
  const auto s = c.schedule();
  std::mt19937_64 rng(11);
  diffusion::NoiseBundle candidates = diffusion::RandomBundle(s, FiveStepDdim(), 8, 10, rng);
  candidates.terminal.col(7) = candidates.terminal.col(3);  // duplicate of the planted one
  const Matrix x = diffusion::Sample(s, c.denoiser, c.autoencoder, candidates, FiveStepDdim());
  const Matrix y = (a.entries * x.col(3)).transpose();
  const InitResult r = SelectInitialization(c, a, y, candidates, FiveStepDdim());
  EXPECT_EQ(r.chosen[0], 3);
  EXPECT_EQ(r.residuals(0), 0.0);
}

TEST(InitSearch, SelectionIsBruteForceMinimum) {
  const auto& c = ToyModel();
  const data::RoutingMatrix a = ToyRouting();
  const auto s = c.schedule();
  const Matrix y = toy::TwoRegimeSeries(6, {.seed = 9}).values * a.entries.transpose();
  std::mt19937_64 rng(5);
  const diffusion::NoiseBundle candidates = diffusion::RandomBundle(s, FiveStepDdim(), 8, 64, rng);
  const InitResult r = SelectInitialization(c, a, y, candidates, FiveStepDdim());
  const Matrix ax = a.entries * diffusion::Sample(s, c.denoiser, c.autoencoder, candidates, FiveStepDdim());
  for (Index t = 0; t < y.rows(); ++t) {
    std::vector<double> all;
    for (Index j = 0; j < 64; ++j) all.push_back((ax.col(j) - y.row(t).transpose()).squaredNorm());
    const auto min_it = std::min_element(all.begin(), all.end());
    EXPECT_EQ(r.chosen[static_cast<std::size_t>(t)], min_it - all.begin());
    EXPECT_EQ(r.residuals(t), *min_it);
    std::nth_element(all.begin(), all.begin() + 32, all.end());
    EXPECT_LE(r.residuals(t), all[32]);
  }
}

TEST(Estimate, ZeroEpochsReturnsInitialization) {
  const auto& c = ToyModel();
  const data::RoutingMatrix a = ToyRouting();
  const Matrix y = toy::TwoRegimeSeries(4, {}).values * a.entries.transpose();
  EstimateConfig cfg;
  cfg.opt_epochs = 0;
  cfg.init_candidates = 16;
  cfg.sampler = FiveStepDdim();
  cfg.seed = 4;
  const InitResult init = InitSearch(c, a, y, 16, cfg.sampler, 4);
  const EstimateResult r = Estimate(c, a, y, cfg);
  EXPECT_TRUE(r.estimates == init.samples.transpose());
  EXPECT_EQ(r.trajectory.size(), 1u);
  EXPECT_EQ(r.epochs_run, 0);
}

TEST(Estimate, TrajectoryDescentAndFrozenModel) {
  const auto& c = ToyModel();
  const std::uint32_t before = checkpoint::ParameterChecksum(c);
  const data::RoutingMatrix a = ToyRouting();
  const Matrix y = toy::TwoRegimeSeries(5, {.seed = 2}).values * a.entries.transpose();
  EstimateConfig cfg;
  cfg.opt_epochs = 60;
  cfg.init_candidates = 8;
  cfg.sampler = FiveStepDdim(0.3);
  const EstimateResult r = Estimate(c, a, y, cfg);
  ASSERT_EQ(r.trajectory.size(), 61u);
  EXPECT_LE(r.trajectory.back(), r.trajectory.front());
  EXPECT_GE(r.estimates.minCoeff(), 0.0);
  EXPECT_NEAR(r.trajectory.back(), r.final_residuals.mean(), 1e-12 * (1.0 + r.trajectory.back()));
  EXPECT_EQ(checkpoint::ParameterChecksum(c), before);
  EXPECT_EQ(r.unobservable.size(), 16u);
  EXPECT_TRUE(r.unobservable[0]);  // a -> a
}

TEST(Estimate, L1NormAlsoDescends) {
  const auto& c = ToyModel();
  const data::RoutingMatrix a = ToyRouting();
  const Matrix y = toy::TwoRegimeSeries(3, {.seed = 5}).values * a.entries.transpose();
  EstimateConfig cfg;
  cfg.opt_epochs = 30;
  cfg.init_candidates = 8;
  cfg.norm = Norm::kL1;
  cfg.sampler = FiveStepDdim();
  const EstimateResult r = Estimate(c, a, y, cfg);
  EXPECT_LE(r.trajectory.back(), r.trajectory.front());
}

TEST(Estimate, Validation) {
  const auto& c = ToyModel();
  const data::RoutingMatrix a = ToyRouting();
  EstimateConfig cfg;
  cfg.init_candidates = 0;
  EXPECT_THROW(Estimate(c, a, Matrix::Ones(1, 5), cfg), ValidationError);
  cfg = EstimateConfig{};
  cfg.sampler = FiveStepDdim();
  EXPECT_THROW(Estimate(c, a, Matrix::Ones(1, 4), cfg), ShapeError);
  EXPECT_THROW(Estimate(c, {Matrix::Identity(9, 9)}, Matrix::Ones(1, 9), cfg), ShapeError);
  EXPECT_THROW(Estimate(c, a, Matrix::Constant(1, 5, -1.0), cfg), ValidationError);
}

TEST(Estimate, NonFiniteGradientIsOptimizationError) {
  trainer::ModelCheckpoint c = ToyModel();
  c.autoencoder.scaling.mean.setConstant(2000.0);  // expm1 overflows
  EstimateConfig cfg;
  cfg.opt_epochs = 3;
  cfg.init_candidates = 2;
  cfg.sampler = FiveStepDdim();
  try {
    Estimate(c, ToyRouting(), Matrix::Ones(1, 5), cfg);
    FAIL() << "expected OptimizationError";
  } catch (const OptimizationError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
  }
}

// The residual gradient reaching X is A^T r, so flows with all-zero routing
// columns receive exactly zero.
TEST(ObjectiveGradient, UnobservableFlowsGetNoResidualGradient) {
  const data::RoutingMatrix a = ToyRouting();
  std::mt19937_64 rng(8);
  const Matrix r = nn::StandardNormal(5, 3, rng);
  const Matrix grad_x = a.entries.transpose() * r;
  const auto mask = a.UnobservableMask();
  int masked = 0;
  for (Index i = 0; i < 16; ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    ++masked;
    EXPECT_EQ(grad_x.row(i).cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_EQ(masked, 4);
}

TEST(ObjectiveGradient, MatchesFiniteDifferences) {
  const auto& c = ToyModel();
  const data::RoutingMatrix a = ToyRouting();
  const auto s = c.schedule();
  const diffusion::SamplerConfig sampler = FiveStepDdim(0.5);
  std::mt19937_64 rng(21);
  const diffusion::NoiseBundle bundle = diffusion::RandomBundle(s, sampler, 8, 2, rng);
  const Matrix y = (toy::TwoRegimeSeries(2, {}).values * a.entries.transpose()).transpose();
  const diffusion::NoiseBundle grad = ObjectiveGradient(c, s, a.entries, y, bundle, sampler, Norm::kL2);
  auto objective = [&](const diffusion::NoiseBundle& b) {
    return ColumnResiduals(a.entries, diffusion::Sample(s, c.denoiser, c.autoencoder, b, sampler), y, Norm::kL2).sum();
  };
  int probes = 0;
  for (std::size_t v = 0; v < bundle.noises.size() + 1; ++v) {
    for (Index i = 0; i < 8; i += 2) {
      for (Index col = 0; col < 2; ++col) {
        diffusion::NoiseBundle plus = bundle, minus = bundle;
        Matrix& p = v == 0 ? plus.terminal : plus.noises[v - 1];
        Matrix& m = v == 0 ? minus.terminal : minus.noises[v - 1];
        const double h = 1e-5;
        p(i, col) += h;
        m(i, col) -= h;
        const double fd = (objective(plus) - objective(minus)) / (2.0 * h);
        const double an = (v == 0 ? grad.terminal : grad.noises[v - 1])(i, col);
        EXPECT_LE(std::abs(fd - an), 1e-3 * std::max(std::abs(fd), 1e-6)) << "vector " << v << " entry " << i;
        ++probes;
      }
    }
  }
  EXPECT_GE(probes, 20);
}

// With every flow observed, estimation is limited only by how well R can
// represent the target, which the autoencoder round trip bounds.
TEST(Estimate, FullObservationReachesReconstructionFloor) {
  const auto& c = ToyModel();
  const data::RoutingMatrix a{Matrix::Identity(16, 16)};
  const Matrix truth = toy::TwoRegimeSeries(288, {}).values.topRows(4);
  const Matrix recon = preprocess::Recover(c.autoencoder, preprocess::Embed(c.autoencoder, Matrix(truth.transpose())));
  EstimateConfig cfg;
  cfg.opt_epochs = 500;
  cfg.init_candidates = 64;
  cfg.sampler = FiveStepDdim();
  const EstimateResult r = Estimate(c, a, truth, cfg);
  for (Index t = 0; t < truth.rows(); ++t) {
    const double floor = (recon.col(t) - truth.row(t).transpose()).norm() / truth.row(t).norm();
    const double err = (r.estimates.row(t) - truth.row(t)).norm() / truth.row(t).norm();
    EXPECT_LE(err, floor) << "timepoint " << t;
  }
}

}  // namespace
}  // namespace tomodiff::estimator
