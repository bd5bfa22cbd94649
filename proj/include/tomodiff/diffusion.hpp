#pragma once

// Noise schedule, closed-form forward noising, the simplified training loss,
// and the DDPM / DDIM reverse samplers.
//
// Sampling never draws random numbers: the terminal latent and every per-step
// noise come from a NoiseBundle, so a sample is a pure (and differentiable)
// function of the bundle. SampleTrace records what the backward pass needs.

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tomodiff/denoiser.hpp"
#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"
#include "tomodiff/preprocess.hpp"

namespace tomodiff::diffusion {

enum class DdpmVariance {
  kBeta,       // sigma_t^2 = beta_t
  kPosterior,  // sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
};

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  // Betas for steps 1..T, in order.
  explicit NoiseSchedule(std::vector<double> betas) {
    if (betas.empty()) throw ValidationError("schedule needs at least one step");
    const std::size_t steps = betas.size();
    beta_.assign(steps + 1, 0.0);
    alpha_.assign(steps + 1, 1.0);
    alpha_bar_.assign(steps + 1, 1.0);
    for (std::size_t t = 1; t <= steps; ++t) {
      const double b = betas[t - 1];
      if (!(b > 0.0 && b < 1.0)) throw ValidationError("beta_" + std::to_string(t) + " outside (0,1)");
      if (t > 1 && b < beta_[t - 1]) throw ValidationError("betas must be non-decreasing");
      beta_[t] = b;
      alpha_[t] = 1.0 - b;
      alpha_bar_[t] = alpha_bar_[t - 1] * alpha_[t];
    }
  }

  int steps() const { return static_cast<int>(beta_.size()) - 1; }

  double beta(int t) const { return beta_.at(CheckStep(t, 1)); }
  double alpha(int t) const { return alpha_.at(CheckStep(t, 1)); }
  // abar_0 = 1 by convention.
  double alpha_bar(int t) const { return alpha_bar_.at(CheckStep(t, 0)); }

  double sigma(int t, DdpmVariance variance = DdpmVariance::kBeta) const {
    if (variance == DdpmVariance::kBeta) return std::sqrt(beta(t));
    return std::sqrt((1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t));
  }

  double beta_start() const { return beta_.size() > 1 ? beta_[1] : 0.0; }
  double beta_end() const { return beta_.empty() ? 0.0 : beta_.back(); }

  std::size_t CheckStep(int t, int lowest) const {
    if (t < lowest || t > steps()) {
      throw RangeError("step " + std::to_string(t) + " outside " + std::to_string(lowest) + ".." +
                       std::to_string(steps()));
    }
    return static_cast<std::size_t>(t);
  }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

// Betas interpolated linearly from beta_start (step 1) to beta_end (step T).
inline NoiseSchedule LinearSchedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ValidationError("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValidationError("need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
inline Matrix ForwardNoise(const NoiseSchedule& s, const Matrix& x0, int t, const Matrix& eps) {
  s.CheckStep(t, 1);
  const double ab = s.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

// Per-column steps.
inline Matrix ForwardNoise(const NoiseSchedule& s, const Matrix& x0, std::span<const int> steps,
                           const Matrix& eps) {
  Matrix out(x0.rows(), x0.cols());
  for (Index c = 0; c < x0.cols(); ++c) {
    const double ab = s.alpha_bar(steps[static_cast<std::size_t>(c)]);
    out.col(c) = std::sqrt(ab) * x0.col(c) + std::sqrt(1.0 - ab) * eps.col(c);
  }
  return out;
}

// Noise predictor used by the loss: (x_t, per-column steps) -> eps estimate.
using NoisePredictor = std::function<Matrix(const Matrix&, std::span<const int>)>;

inline NoisePredictor Predictor(const denoiser::DenoiserParams& params) {
  return [&params](const Matrix& x, std::span<const int> t) { return denoiser::PredictNoise(params, x, t); };
}

// Monte-Carlo estimate of E ||eps - eps_theta(x_t, t)||^2, reported per
// latent element: one uniform t and one standard-normal eps per column.
inline double DiffusionLoss(const NoiseSchedule& s, const NoisePredictor& predict, const Matrix& x0,
                            std::mt19937_64& rng) {
  if (x0.cols() == 0) throw ValidationError("empty batch");
  std::uniform_int_distribution<int> pick(1, s.steps());
  std::vector<int> steps(static_cast<std::size_t>(x0.cols()));
  for (int& t : steps) t = pick(rng);
  const Matrix eps = nn::StandardNormal(x0.rows(), x0.cols(), rng);
  const Matrix x_t = ForwardNoise(s, x0, steps, eps);
  return (eps - predict(x_t, steps)).squaredNorm() / static_cast<double>(x0.size());
}

// Loss for given steps/noises plus its gradient with respect to the denoiser
// parameters. x0 is treated as a constant.
inline double DiffusionLossAndGrad(const NoiseSchedule& s, const denoiser::DenoiserParams& params,
                                   const Matrix& x0, std::span<const int> steps, const Matrix& eps,
                                   std::vector<double>& grad) {
  grad.assign(params.theta.size(), 0.0);
  const Matrix x_t = ForwardNoise(s, x0, steps, eps);
  denoiser::ForwardCache cache;
  const Matrix pred = denoiser::PredictNoise(params, x_t, steps, &cache);
  const Matrix diff = pred - eps;
  const double count = static_cast<double>(x0.size());
  denoiser::Backward(params, cache, (2.0 / count) * diff, grad);
  return diff.squaredNorm() / count;
}

// Reverse-step coefficients: x_prev = a * x_t + c * eps_theta + noise * z.
struct StepCoefficients {
  double a = 0.0;
  double c = 0.0;
  double noise = 0.0;
};

inline StepCoefficients DdpmCoefficients(const NoiseSchedule& s, int t, DdpmVariance variance) {
  s.CheckStep(t, 1);
  const double alpha = s.alpha(t);
  const double ab = s.alpha_bar(t);
  StepCoefficients k;
  k.a = 1.0 / std::sqrt(alpha);
  k.c = -(1.0 - alpha) / (std::sqrt(alpha) * std::sqrt(1.0 - ab));
  k.noise = t > 1 ? s.sigma(t, variance) : 0.0;
  return k;
}

inline double DdimSigma(const NoiseSchedule& s, int t, int t_prev, double eta) {
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

inline StepCoefficients DdimCoefficients(const NoiseSchedule& s, int t, int t_prev, double eta) {
  s.CheckStep(t, 1);
  s.CheckStep(t_prev, 0);
  if (t_prev >= t) throw RangeError("DDIM needs t_prev < t");
  if (!(eta >= 0.0 && eta <= 1.0)) throw RangeError("eta must lie in [0,1]");
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t_prev);
  const double sigma = DdimSigma(s, t, t_prev, eta);
  double dir_var = 1.0 - ab_prev - sigma * sigma;
  // sigma^2 <= 1 - abar_prev holds analytically; only rounding can undercut it.
  if (dir_var < -1e-12) throw RangeError("DDIM sigma exceeds its bound");
  dir_var = std::max(dir_var, 0.0);
  StepCoefficients k;
  k.a = std::sqrt(ab_prev / ab);
  k.c = -std::sqrt(ab_prev) * std::sqrt(1.0 - ab) / std::sqrt(ab) + std::sqrt(dir_var);
  k.noise = sigma;
  return k;
}

inline Matrix ApplyStep(const StepCoefficients& k, const Matrix& x_t, const Matrix& eps, const Matrix& z) {
  Matrix out = k.a * x_t + k.c * eps;
  if (k.noise != 0.0) out += k.noise * z;
  return out;
}

// x0 estimate implied by x_t and a noise prediction.
inline Matrix PredictX0(const NoiseSchedule& s, const Matrix& x_t, int t, const Matrix& eps) {
  const double ab = s.alpha_bar(t);
  return (x_t - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
}

// One DDPM reverse step with an externally supplied noise prediction.
inline Matrix DdpmStepFromEps(const NoiseSchedule& s, const Matrix& x_t, int t, const Matrix& eps,
                              const Matrix& z, DdpmVariance variance = DdpmVariance::kBeta) {
  return ApplyStep(DdpmCoefficients(s, t, variance), x_t, eps, z);
}

inline Matrix DdimStepFromEps(const NoiseSchedule& s, const Matrix& x_t, int t, int t_prev, double eta,
                              const Matrix& eps, const Matrix& z) {
  return ApplyStep(DdimCoefficients(s, t, t_prev, eta), x_t, eps, z);
}

inline Matrix DdpmStep(const NoiseSchedule& s, const denoiser::DenoiserParams& d, const Matrix& x_t, int t,
                       const Matrix& z, DdpmVariance variance = DdpmVariance::kBeta) {
  const int step[1] = {t};
  return DdpmStepFromEps(s, x_t, t, denoiser::PredictNoise(d, x_t, step), z, variance);
}

inline Matrix DdimStep(const NoiseSchedule& s, const denoiser::DenoiserParams& d, const Matrix& x_t, int t,
                       int t_prev, double eta, const Matrix& z) {
  const int step[1] = {t};
  return DdimStepFromEps(s, x_t, t, t_prev, eta, denoiser::PredictNoise(d, x_t, step), z);
}

enum class SamplerMode { kDdpm, kDdim };

struct SamplerConfig {
  SamplerMode mode = SamplerMode::kDdim;
  int ddim_steps = 50;
  double eta = 0.0;
  DdpmVariance ddpm_variance = DdpmVariance::kBeta;
};

// Reverse transitions in sampling order as (t, t_prev) pairs.
inline std::vector<std::pair<int, int>> Timeline(const NoiseSchedule& s, const SamplerConfig& c) {
  std::vector<int> seq;
  if (c.mode == SamplerMode::kDdpm) {
    for (int t = 1; t <= s.steps(); ++t) seq.push_back(t);
  } else {
    if (c.ddim_steps < 1 || c.ddim_steps > s.steps()) {
      throw ValidationError("DDIM step count must lie in 1.." + std::to_string(s.steps()));
    }
    if (!(c.eta >= 0.0 && c.eta <= 1.0)) throw ValidationError("eta must lie in [0,1]");
    for (int i = 1; i <= c.ddim_steps; ++i) {
      seq.push_back(static_cast<int>(std::lround(static_cast<double>(i) * s.steps() / c.ddim_steps)));
    }
  }
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = seq.size(); i-- > 0;) out.emplace_back(seq[i], i == 0 ? 0 : seq[i - 1]);
  return out;
}

// Number of per-step noise vectors a bundle carries: one per reverse step
// except the last, or none for deterministic DDIM.
inline std::size_t NoiseCount(const NoiseSchedule& s, const SamplerConfig& c) {
  const std::size_t steps = Timeline(s, c).size();
  if (c.mode == SamplerMode::kDdim && c.eta == 0.0) return 0;
  return steps - 1;
}

struct NoiseBundle {
  Matrix terminal;             // x_T, k x B
  std::vector<Matrix> noises;  // noises[i] feeds the i-th reverse step, each k x B

  Index batch() const { return terminal.cols(); }
  Index latent() const { return terminal.rows(); }

  // Column b of every vector, as its own single-column bundle.
  NoiseBundle Column(Index b) const {
    NoiseBundle out{terminal.col(b), {}};
    for (const Matrix& z : noises) out.noises.emplace_back(z.col(b));
    return out;
  }
  void SetColumn(Index b, const NoiseBundle& src) {
    terminal.col(b) = src.terminal.col(0);
    for (std::size_t i = 0; i < noises.size(); ++i) noises[i].col(b) = src.noises[i].col(0);
  }
  std::vector<const Matrix*> vectors() const {
    std::vector<const Matrix*> out{&terminal};
    for (const Matrix& z : noises) out.push_back(&z);
    return out;
  }
};

inline NoiseBundle RandomBundle(const NoiseSchedule& s, const SamplerConfig& c, Index latent, Index batch,
                                std::mt19937_64& rng) {
  NoiseBundle b{nn::StandardNormal(latent, batch, rng), {}};
  const std::size_t count = NoiseCount(s, c);
  for (std::size_t i = 0; i < count; ++i) b.noises.push_back(nn::StandardNormal(latent, batch, rng));
  return b;
}

inline void CheckBundle(const NoiseSchedule& s, const SamplerConfig& c, Index latent, const NoiseBundle& b) {
  if (b.terminal.rows() != latent) {
    throw ShapeError("bundle latent dimension " + std::to_string(b.terminal.rows()) + " != " + std::to_string(latent));
  }
  const std::size_t expected = NoiseCount(s, c);
  if (b.noises.size() != expected) {
    throw ShapeError("bundle carries " + std::to_string(b.noises.size()) + " noise vectors, sampler needs " +
                     std::to_string(expected));
  }
  for (const Matrix& z : b.noises) {
    if (z.rows() != latent || z.cols() != b.terminal.cols()) throw ShapeError("bundle noise vector shape mismatch");
  }
}

struct SampleTrace {
  std::vector<StepCoefficients> coeffs;
  std::vector<denoiser::ForwardCache> caches;
};

// Runs the reverse chain to H_0 (k x B).
inline Matrix SampleLatent(const NoiseSchedule& s, const denoiser::DenoiserParams& d, const NoiseBundle& bundle,
                           const SamplerConfig& c, SampleTrace* trace = nullptr) {
  CheckBundle(s, c, d.dims.latent, bundle);
  const auto timeline = Timeline(s, c);
  if (trace) {
    trace->coeffs.clear();
    trace->caches.assign(timeline.size(), {});
  }
  Matrix x = bundle.terminal;
  for (std::size_t i = 0; i < timeline.size(); ++i) {
    const auto [t, t_prev] = timeline[i];
    const StepCoefficients k = c.mode == SamplerMode::kDdpm ? DdpmCoefficients(s, t, c.ddpm_variance)
                                                            : DdimCoefficients(s, t, t_prev, c.eta);
    const int step[1] = {t};
    const Matrix eps = denoiser::PredictNoise(d, x, step, trace ? &trace->caches[i] : nullptr);
    Matrix next = k.a * x + k.c * eps;
    if (i < bundle.noises.size() && k.noise != 0.0) next += k.noise * bundle.noises[i];
    x = std::move(next);
    if (trace) trace->coeffs.push_back(k);
  }
  return x;
}

// Full pipeline: bundle -> H_0 -> recovered TM batch (n x B).
inline Matrix Sample(const NoiseSchedule& s, const denoiser::DenoiserParams& d,
                     const preprocess::AutoencoderParams& ae, const NoiseBundle& bundle, const SamplerConfig& c) {
  return preprocess::Recover(ae, SampleLatent(s, d, bundle, c));
}

// Gradient of a scalar loss with respect to every bundle vector, given dL/dH_0.
inline NoiseBundle SampleBackward(const denoiser::DenoiserParams& d, const SampleTrace& trace,
                                  const NoiseBundle& bundle, const Matrix& grad_h0) {
  NoiseBundle grad{Matrix(), std::vector<Matrix>(bundle.noises.size())};
  Matrix g = grad_h0;
  for (std::size_t i = trace.coeffs.size(); i-- > 0;) {
    const StepCoefficients& k = trace.coeffs[i];
    if (i < grad.noises.size()) grad.noises[i] = k.noise * g;
    Matrix through_eps = denoiser::Backward(d, trace.caches[i], k.c * g, {});
    g = k.a * g + through_eps;
  }
  grad.terminal = std::move(g);
  return grad;
}

}  // namespace tomodiff::diffusion
