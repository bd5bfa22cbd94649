#pragma once

// Embedding / recovery networks that map traffic matrices to and from the
// latent space the diffusion model works in.
//
// Pipeline: X -> log1p -> per-flow standardization (scaled space) -> E -> H
//           H -> R -> scaled space -> unstandardize -> softplus -> expm1 -> X
// E has two dense layers with a LeakyReLU between them, R has one. The
// softplus in log space keeps recovered flows nonnegative.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"

namespace tomodiff::preprocess {

// Softplus sharpness used by the nonnegativity map.
inline constexpr double kOutputSharpness = 20.0;

struct AutoencoderDims {
  Index input = 0;   // n, flows per TM
  Index hidden = 0;  // width of the first embedding layer
  Index latent = 0;  // k
};

// Per-flow statistics of log1p(X) over the training set.
struct ScalingState {
  Vector mean;
  Vector stddev;
};

struct AutoencoderLayout {
  nn::Dense enc1;
  nn::Dense enc2;
  nn::Dense dec;
  std::size_t total = 0;

  explicit AutoencoderLayout(const AutoencoderDims& d) {
    nn::LayoutBuilder b;
    enc1 = b.Add(d.input, d.hidden);
    enc2 = b.Add(d.hidden, d.latent);
    dec = b.Add(d.latent, d.input);
    total = b.total();
  }
};

struct AutoencoderParams {
  AutoencoderDims dims;
  std::vector<double> theta;
  ScalingState scaling;

  AutoencoderLayout layout() const { return AutoencoderLayout(dims); }
};

inline void ValidateDims(const AutoencoderDims& d) {
  if (d.input < 1 || d.hidden < 1 || d.latent < 1) throw ValidationError("autoencoder dimensions must be positive");
  if (d.latent >= d.input) throw ValidationError("latent dimension must be smaller than input dimension");
}

inline ScalingState IdentityScaling(Index n) { return {Vector::Zero(n), Vector::Ones(n)}; }

// Statistics from a T x n training matrix; constant flows get unit stddev.
inline ScalingState FitScaling(const Matrix& train_values) {
  if (train_values.rows() == 0) throw ValidationError("cannot fit scaling on an empty series");
  const Matrix logs = train_values.array().log1p().matrix();
  ScalingState s;
  s.mean = logs.colwise().mean().transpose();
  s.stddev.resize(logs.cols());
  for (Index j = 0; j < logs.cols(); ++j) {
    const double var = (logs.col(j).array() - s.mean(j)).square().mean();
    const double sd = std::sqrt(var);
    s.stddev(j) = sd > 1e-8 ? nn::SnapToFloat(sd) : 1.0;
    s.mean(j) = nn::SnapToFloat(s.mean(j));
  }
  return s;
}

// Column-batched: x is n x B.
inline Matrix Scale(const ScalingState& s, const Matrix& x) {
  Matrix out = x.array().log1p().matrix();
  out.colwise() -= s.mean;
  out.array().colwise() /= s.stddev.array();
  return out;
}

inline Matrix Unscale(const ScalingState& s, const Matrix& scaled) {
  Matrix u = scaled.array().colwise() * s.stddev.array();
  u.colwise() += s.mean;
  return u.array().expm1().matrix();
}

inline AutoencoderParams MakeAutoencoder(const AutoencoderDims& dims, std::mt19937_64& rng) {
  ValidateDims(dims);
  AutoencoderParams p{dims, {}, IdentityScaling(dims.input)};
  const AutoencoderLayout layout(dims);
  p.theta.assign(layout.total, 0.0);
  nn::InitDense(layout.enc1, p.theta, rng);
  nn::InitDense(layout.enc2, p.theta, rng);
  nn::InitDense(layout.dec, p.theta, rng);
  nn::SnapToFloat(p.theta);
  return p;
}

inline AutoencoderParams ZeroAutoencoder(const AutoencoderDims& dims) {
  ValidateDims(dims);
  return {dims, std::vector<double>(AutoencoderLayout(dims).total, 0.0), IdentityScaling(dims.input)};
}

inline void CheckTmBatch(const AutoencoderParams& p, const Matrix& x) {
  if (x.rows() != p.dims.input) {
    throw ShapeError("TM vector has " + std::to_string(x.rows()) + " entries, expected " +
                     std::to_string(p.dims.input));
  }
  for (Index c = 0; c < x.cols(); ++c) {
    for (Index r = 0; r < x.rows(); ++r) {
      if (!std::isfinite(x(r, c))) throw ValidationError("non-finite TM entry");
      if (x(r, c) < 0.0) throw ValidationError("negative TM entry");
    }
  }
}

struct EncoderCache {
  Matrix scaled;  // n x B
  Matrix pre1;    // hidden x B
  Matrix hidden;  // hidden x B
};

inline Matrix EmbedScaled(const AutoencoderParams& p, const Matrix& scaled, EncoderCache* cache = nullptr) {
  const AutoencoderLayout l = p.layout();
  Matrix pre1 = l.enc1.Forward(p.theta, scaled);
  Matrix hidden = nn::LeakyRelu(pre1);
  Matrix h = l.enc2.Forward(p.theta, hidden);
  if (cache) *cache = {scaled, std::move(pre1), std::move(hidden)};
  return h;
}

// x is n x B nonnegative; returns the k x B latent batch.
inline Matrix Embed(const AutoencoderParams& p, const Matrix& x) {
  CheckTmBatch(p, x);
  return EmbedScaled(p, Scale(p.scaling, x));
}

inline Vector Embed(const AutoencoderParams& p, const Vector& x) {
  return Embed(p, Matrix(x)).col(0);
}

inline void CheckLatentBatch(const AutoencoderParams& p, const Matrix& h) {
  if (h.rows() != p.dims.latent) {
    throw ShapeError("latent vector has " + std::to_string(h.rows()) + " entries, expected " +
                     std::to_string(p.dims.latent));
  }
}

// R's raw output in scaled space.
inline Matrix RecoverScaled(const AutoencoderParams& p, const Matrix& h) {
  CheckLatentBatch(p, h);
  return p.layout().dec.Forward(p.theta, h);
}

namespace detail {

inline double Softplus(double u) {
  const double z = kOutputSharpness * u;
  return (z > 30.0 ? z : std::log1p(std::exp(z))) / kOutputSharpness;
}

inline double Sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace detail

// Maps R's scaled-space output to nonnegative traffic volumes.
inline Matrix OutputMap(const ScalingState& s, const Matrix& recovered_scaled) {
  Matrix u = recovered_scaled.array().colwise() * s.stddev.array();
  u.colwise() += s.mean;
  return u.unaryExpr([](double v) { return std::expm1(detail::Softplus(v)); });
}

inline Matrix Recover(const AutoencoderParams& p, const Matrix& h) {
  return OutputMap(p.scaling, RecoverScaled(p, h));
}

inline Vector Recover(const AutoencoderParams& p, const Vector& h) { return Recover(p, Matrix(h)).col(0); }

// dL/dH for L a function of Recover(p, h), given dL/dX.
inline Matrix RecoverBackward(const AutoencoderParams& p, const Matrix& h, const Matrix& grad_x) {
  const AutoencoderLayout l = p.layout();
  const Matrix r = l.dec.Forward(p.theta, h);
  Matrix grad_r(r.rows(), r.cols());
  for (Index c = 0; c < r.cols(); ++c) {
    for (Index i = 0; i < r.rows(); ++i) {
      const double u = r(i, c) * p.scaling.stddev(i) + p.scaling.mean(i);
      const double sp = detail::Softplus(u);
      // d/du expm1(softplus(u)) = exp(softplus(u)) * sigmoid(beta u)
      const double du = std::exp(sp) * detail::Sigmoid(kOutputSharpness * u);
      grad_r(i, c) = grad_x(i, c) * du * p.scaling.stddev(i);
    }
  }
  return l.dec.W(std::span<const double>(p.theta)).transpose() * grad_r;
}

// Mean over the batch of squared L2 distance between two n x B matrices.
inline double MeanSquaredNorm(const Matrix& target, const Matrix& reconstruction) {
  if (target.rows() != reconstruction.rows() || target.cols() != reconstruction.cols()) {
    throw ShapeError("reconstruction shape mismatch");
  }
  if (target.cols() == 0) throw ValidationError("empty batch");
  return (target - reconstruction).squaredNorm() / static_cast<double>(target.cols());
}

// Mean over the batch of ||S - R(E(S))||^2 in scaled space; x is n x B.
inline double ReconstructionLoss(const AutoencoderParams& p, const Matrix& x) {
  CheckTmBatch(p, x);
  if (x.cols() == 0) throw ValidationError("empty batch");
  const Matrix s = Scale(p.scaling, x);
  return MeanSquaredNorm(s, RecoverScaled(p, EmbedScaled(p, s)));
}

// Loss plus its gradient with respect to every entry of p.theta.
inline double ReconstructionLossAndGrad(const AutoencoderParams& p, const Matrix& x, std::vector<double>& grad) {
  CheckTmBatch(p, x);
  if (x.cols() == 0) throw ValidationError("empty batch");
  const AutoencoderLayout l = p.layout();
  grad.assign(p.theta.size(), 0.0);
  EncoderCache cache;
  const Matrix h = EmbedScaled(p, Scale(p.scaling, x), &cache);
  const Matrix r = l.dec.Forward(p.theta, h);
  const Matrix diff = r - cache.scaled;
  const double batch = static_cast<double>(x.cols());
  const double loss = diff.squaredNorm() / batch;

  const Matrix grad_r = (2.0 / batch) * diff;
  const Matrix grad_h = l.dec.Backward(p.theta, grad, h, grad_r);
  const Matrix grad_hidden = l.enc2.Backward(p.theta, grad, cache.hidden, grad_h);
  l.enc1.BackwardParamsOnly(grad, cache.scaled, nn::LeakyReluBackward(cache.pre1, grad_hidden));
  return loss;
}

}  // namespace tomodiff::preprocess
