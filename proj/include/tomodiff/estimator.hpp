#pragma once

// Traffic-matrix estimation from link loads with the trained model as a prior.
//
// For each timepoint the estimator picks the best of N_init random noise
// bundles (smallest squared tomography residual, lowest index on ties), then
// runs Adam on the bundle vectors through the frozen sampler and recovery
// network to minimize ||A X(bundle) - Y||. Timepoints are independent
// coordinates of the joint objective; each keeps its best iterate.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "tomodiff/data.hpp"
#include "tomodiff/diffusion.hpp"
#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"
#include "tomodiff/preprocess.hpp"
#include "tomodiff/trainer.hpp"

namespace tomodiff::estimator {

enum class Norm { kL2, kL1 };  // kL2 is the squared L2 norm

struct EstimateConfig {
  int opt_epochs = 500;      // I_opt
  int init_candidates = 64;  // N_init
  Norm norm = Norm::kL2;
  double step_size = 1e-2;
  diffusion::SamplerConfig sampler;
  std::uint64_t seed = 0;
  double stall_tolerance = 1e-8;  // per-timepoint early exit

  void Validate() const {
    if (opt_epochs < 0) throw ValidationError("opt_epochs must be >= 0");
    if (init_candidates < 1) throw ValidationError("init_candidates must be >= 1");
    if (!(step_size > 0.0)) throw ValidationError("step_size must be positive");
  }
};

// Per-column residual of A x - y; x is n x B, y is m x B.
inline Vector ColumnResiduals(const Matrix& a, const Matrix& x, const Matrix& y, Norm norm) {
  if (a.cols() != x.rows() || a.rows() != y.rows() || x.cols() != y.cols()) {
    throw ShapeError("residual shapes disagree: A is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     ", X has " + std::to_string(x.rows()) + " rows, Y has " + std::to_string(y.rows()));
  }
  const Matrix r = a * x - y;
  return norm == Norm::kL2 ? Vector(r.colwise().squaredNorm().transpose())
                           : Vector(r.cwiseAbs().colwise().sum().transpose());
}

// Mean over the batch of the chosen norm. Rows are timepoints: X is B x n, Y is B x m.
inline double Residual(const data::RoutingMatrix& a, const Matrix& x_rows, const Matrix& y_rows, Norm norm) {
  if (x_rows.rows() == 0) throw ValidationError("empty batch");
  return ColumnResiduals(a.entries, x_rows.transpose(), y_rows.transpose(), norm).mean();
}

// Minimum-L2-norm solution of A x = y per row of Y, clipped at zero.
inline Matrix BaselineLeastNorm(const data::RoutingMatrix& a, const Matrix& y_rows) {
  if (y_rows.cols() != a.links()) throw ShapeError("link-load width does not match routing matrix");
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(a.entries);
  const Matrix x = cod.solve(y_rows.transpose());
  return x.cwiseMax(0.0).transpose();
}

struct InitResult {
  diffusion::NoiseBundle bundle;     // one column per timepoint
  std::vector<Index> chosen;         // candidate index per timepoint
  Vector residuals;                  // squared residual of the chosen candidate
  Matrix samples;                    // n x B TMs of the chosen candidates
};

inline void CheckInputs(const trainer::ModelCheckpoint& c, const data::RoutingMatrix& a, const Matrix& y_rows) {
  if (a.flows() != c.model.flows) {
    throw ShapeError("routing matrix has " + std::to_string(a.flows()) + " flow columns, checkpoint expects " +
                     std::to_string(c.model.flows));
  }
  if (y_rows.cols() != a.links()) {
    throw ShapeError("link loads have " + std::to_string(y_rows.cols()) + " columns, routing matrix has " +
                     std::to_string(a.links()) + " links");
  }
  for (Index i = 0; i < y_rows.size(); ++i) {
    if (!(y_rows.data()[i] >= 0.0) || !std::isfinite(y_rows.data()[i])) {
      throw ValidationError("link loads must be finite and nonnegative");
    }
  }
}

// Picks, for every timepoint, the candidate (column of `candidates`) whose
// sampled TM has the smallest squared residual.
inline InitResult SelectInitialization(const trainer::ModelCheckpoint& c, const data::RoutingMatrix& a,
                                       const Matrix& y_rows, const diffusion::NoiseBundle& candidates,
                                       const diffusion::SamplerConfig& sampler) {
  CheckInputs(c, a, y_rows);
  const diffusion::NoiseSchedule schedule = c.schedule();
  const Matrix x = diffusion::Sample(schedule, c.denoiser, c.autoencoder, candidates, sampler);
  const Matrix ax = a.entries * x;  // m x N
  const Index batch = y_rows.rows();
  InitResult out;
  out.chosen.resize(static_cast<std::size_t>(batch));
  out.residuals.resize(batch);
  out.samples.resize(x.rows(), batch);
  out.bundle.terminal.resize(candidates.latent(), batch);
  out.bundle.noises.assign(candidates.noises.size(), Matrix(candidates.latent(), batch));
  for (Index i = 0; i < batch; ++i) {
    double best = std::numeric_limits<double>::infinity();
    Index best_j = 0;
    for (Index j = 0; j < ax.cols(); ++j) {
      const double r = (ax.col(j) - y_rows.row(i).transpose()).squaredNorm();
      if (r < best) {
        best = r;
        best_j = j;
      }
    }
    out.chosen[static_cast<std::size_t>(i)] = best_j;
    out.residuals(i) = best;
    out.samples.col(i) = x.col(best_j);
    out.bundle.SetColumn(i, candidates.Column(best_j));
  }
  return out;
}

// Draws N_init standard-normal candidate bundles from `seed` and selects per timepoint.
inline InitResult InitSearch(const trainer::ModelCheckpoint& c, const data::RoutingMatrix& a, const Matrix& y_rows,
                             int init_candidates, const diffusion::SamplerConfig& sampler, std::uint64_t seed) {
  if (init_candidates < 1) throw ValidationError("init_candidates must be >= 1");
  std::mt19937_64 rng(seed);
  const diffusion::NoiseBundle candidates =
      diffusion::RandomBundle(c.schedule(), sampler, c.model.latent, init_candidates, rng);
  return SelectInitialization(c, a, y_rows, candidates, sampler);
}

struct EstimateResult {
  Matrix estimates;                // B x n
  Vector final_residuals;          // per timepoint, chosen norm
  std::vector<double> trajectory;  // I_opt + 1 batch-mean residuals
  std::vector<bool> unobservable;  // flows with all-zero routing columns
  std::vector<Index> init_choice;  // selected candidate per timepoint
  int epochs_run = 0;
};

namespace detail {

struct MatrixAdam {
  Matrix m;
  Matrix v;
};

}  // namespace detail

// Gradient of sum_b ||A x_b - y_b|| with respect to every bundle vector, plus
// the per-column residuals at the current bundle.
inline diffusion::NoiseBundle ObjectiveGradient(const trainer::ModelCheckpoint& c, const diffusion::NoiseSchedule& s,
                                                const Matrix& a, const Matrix& y, const diffusion::NoiseBundle& bundle,
                                                const diffusion::SamplerConfig& sampler, Norm norm,
                                                Vector* residuals = nullptr, Matrix* samples = nullptr) {
  diffusion::SampleTrace trace;
  const Matrix h0 = diffusion::SampleLatent(s, c.denoiser, bundle, sampler, &trace);
  const Matrix x = preprocess::Recover(c.autoencoder, h0);
  const Matrix r = a * x - y;
  if (residuals) {
    *residuals = norm == Norm::kL2 ? Vector(r.colwise().squaredNorm().transpose())
                                   : Vector(r.cwiseAbs().colwise().sum().transpose());
  }
  if (samples) *samples = x;
  const Matrix grad_r = norm == Norm::kL2 ? Matrix(2.0 * r) : Matrix(r.unaryExpr([](double v) {
    return static_cast<double>((v > 0.0) - (v < 0.0));
  }));
  const Matrix grad_x = a.transpose() * grad_r;
  const Matrix grad_h0 = preprocess::RecoverBackward(c.autoencoder, h0, grad_x);
  return diffusion::SampleBackward(c.denoiser, trace, bundle, grad_h0);
}

inline EstimateResult EstimateFrom(const trainer::ModelCheckpoint& c, const data::RoutingMatrix& a,
                                   const Matrix& y_rows, const EstimateConfig& config, const InitResult& init) {
  config.Validate();
  CheckInputs(c, a, y_rows);
  const diffusion::NoiseSchedule schedule = c.schedule();
  const Matrix y = y_rows.transpose();
  const Index batch = y.cols();

  EstimateResult result;
  result.unobservable = a.UnobservableMask();
  result.init_choice = init.chosen;

  diffusion::NoiseBundle bundle = init.bundle;
  Vector best = ColumnResiduals(a.entries, init.samples, y, config.norm);
  Matrix best_x = init.samples;
  result.trajectory.push_back(best.mean());

  std::vector<detail::MatrixAdam> moments;
  for (const Matrix* v : bundle.vectors()) moments.push_back({Matrix::Zero(v->rows(), v->cols()), Matrix::Zero(v->rows(), v->cols())});
  std::vector<bool> active(static_cast<std::size_t>(batch), true);
  for (Index b = 0; b < batch; ++b) active[static_cast<std::size_t>(b)] = best(b) >= config.stall_tolerance;

  const nn::AdamConfig adam;
  for (int epoch = 0; epoch < config.opt_epochs; ++epoch) {
    Vector current;
    Matrix x;
    const diffusion::NoiseBundle grad =
        ObjectiveGradient(c, schedule, a.entries, y, bundle, config.sampler, config.norm, &current, &x);
    if (epoch > 0) result.trajectory.push_back(current.mean());
    for (Index b = 0; b < batch; ++b) {
      if (current(b) < best(b)) {
        best(b) = current(b);
        best_x.col(b) = x.col(b);
      }
      if (current(b) < config.stall_tolerance) active[static_cast<std::size_t>(b)] = false;
    }
    const auto grads = grad.vectors();
    for (const Matrix* g : grads) {
      if (!g->allFinite()) throw OptimizationError("non-finite gradient at epoch " + std::to_string(epoch + 1));
    }
    const double step = static_cast<double>(epoch + 1);
    const double bc1 = 1.0 - std::pow(adam.beta1, step);
    const double bc2 = 1.0 - std::pow(adam.beta2, step);
    std::vector<Matrix*> params{&bundle.terminal};
    for (Matrix& z : bundle.noises) params.push_back(&z);
    for (std::size_t p = 0; p < params.size(); ++p) {
      const Matrix& g = *grads[p];
      detail::MatrixAdam& st = moments[p];
      for (Index b = 0; b < batch; ++b) {
        if (!active[static_cast<std::size_t>(b)]) continue;
        st.m.col(b) = adam.beta1 * st.m.col(b) + (1.0 - adam.beta1) * g.col(b);
        st.v.col(b) = adam.beta2 * st.v.col(b) + (1.0 - adam.beta2) * g.col(b).cwiseAbs2();
        params[p]->col(b).array() -=
            config.step_size * (st.m.col(b).array() / bc1) / ((st.v.col(b).array() / bc2).sqrt() + adam.epsilon);
      }
    }
    ++result.epochs_run;
  }
  if (config.opt_epochs > 0) {
    const Matrix x = diffusion::Sample(schedule, c.denoiser, c.autoencoder, bundle, config.sampler);
    const Vector last = ColumnResiduals(a.entries, x, y, config.norm);
    for (Index b = 0; b < batch; ++b) {
      if (last(b) < best(b)) {
        best(b) = last(b);
        best_x.col(b) = x.col(b);
      }
    }
    result.trajectory.push_back(best.mean());
  }
  result.estimates = best_x.transpose();
  result.final_residuals = best;
  return result;
}

// Full estimation: initialization search, then gradient descent on the bundles.
inline EstimateResult Estimate(const trainer::ModelCheckpoint& c, const data::RoutingMatrix& a, const Matrix& y_rows,
                               const EstimateConfig& config) {
  config.Validate();
  const InitResult init = InitSearch(c, a, y_rows, config.init_candidates, config.sampler, config.seed);
  return EstimateFrom(c, a, y_rows, config, init);
}

}  // namespace tomodiff::estimator
