#pragma once

// Noise-prediction network eps(x_t, t) over flat latent vectors.
//
// A 1-D bottleneck with U-Net skip topology:
//   in:    k      -> w
//   down1: w      -> w/2
//   down2: w/2    -> w/4
//   mid:   w/4    -> w/4
//   up2:   [mid, down2]  (w/2) -> w/2
//   up1:   [up2, down1]  (w)   -> w
//   out:   [up1, in]     (2w)  -> k
// Every block adds a projection of the step embedding before its LeakyReLU.

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"

namespace tomodiff::denoiser {

struct DenoiserDims {
  Index latent = 0;          // k
  Index width = 64;          // w, divisible by 4
  Index embedding = 64;      // sinusoidal step-embedding size, even
  int max_step = 1000;       // T_s; valid steps are 1..max_step
};

// Sinusoidal encoding: entries 2i and 2i+1 are sin(t f_i) and cos(t f_i) with
// f_i = 10000^(-i / (dim/2)).
inline Vector StepEmbedding(int t, Index dim) {
  if (t < 0) throw RangeError("step index must be nonnegative");
  Vector e(dim);
  const Index half = dim / 2;
  for (Index i = 0; i < dim; ++i) {
    const Index pair = i / 2;
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(pair) /
                                 static_cast<double>(std::max<Index>(half, 1)));
    e(i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
  }
  return e;
}

inline constexpr std::size_t kBlocks = 6;  // in, down1, down2, mid, up2, up1

struct DenoiserLayout {
  nn::Dense embed;
  std::array<nn::Dense, kBlocks> block;
  std::array<nn::Dense, kBlocks> step_proj;
  nn::Dense out;
  std::size_t total = 0;

  explicit DenoiserLayout(const DenoiserDims& d) {
    const Index w = d.width;
    const std::array<Index, kBlocks> in_dims{d.latent, w, w / 2, w / 4, w / 2, w};
    const std::array<Index, kBlocks> out_dims{w, w / 2, w / 4, w / 4, w / 2, w};
    nn::LayoutBuilder b;
    embed = b.Add(d.embedding, d.embedding);
    for (std::size_t i = 0; i < kBlocks; ++i) {
      block[i] = b.Add(in_dims[i], out_dims[i]);
      step_proj[i] = b.Add(d.embedding, out_dims[i]);
    }
    out = b.Add(2 * w, d.latent);
    total = b.total();
  }
};

struct DenoiserParams {
  DenoiserDims dims;
  std::vector<double> theta;

  DenoiserLayout layout() const { return DenoiserLayout(dims); }
};

inline void ValidateDims(const DenoiserDims& d) {
  if (d.latent < 1) throw ValidationError("denoiser latent dimension must be positive");
  if (d.width < 4 || d.width % 4 != 0) throw ValidationError("denoiser width must be a positive multiple of 4");
  if (d.embedding < 2 || d.embedding % 2 != 0) throw ValidationError("step embedding size must be even");
  if (d.max_step < 1) throw ValidationError("max_step must be >= 1");
}

inline DenoiserParams MakeDenoiser(const DenoiserDims& dims, std::mt19937_64& rng) {
  ValidateDims(dims);
  const DenoiserLayout l(dims);
  DenoiserParams p{dims, std::vector<double>(l.total, 0.0)};
  nn::InitDense(l.embed, p.theta, rng);
  for (std::size_t i = 0; i < kBlocks; ++i) {
    nn::InitDense(l.block[i], p.theta, rng);
    nn::InitDense(l.step_proj[i], p.theta, rng);
  }
  nn::InitDense(l.out, p.theta, rng);
  nn::SnapToFloat(p.theta);
  return p;
}

inline DenoiserParams ZeroDenoiser(const DenoiserDims& dims) {
  ValidateDims(dims);
  return {dims, std::vector<double>(DenoiserLayout(dims).total, 0.0)};
}

struct ForwardCache {
  Matrix x;
  Matrix emb_raw;
  Matrix emb_pre;
  Matrix emb;
  std::array<Matrix, kBlocks> input;  // block inputs (after skip concatenation)
  std::array<Matrix, kBlocks> pre;
  std::array<Matrix, kBlocks> act;
  Matrix out_input;
};

namespace detail {

inline Matrix Concat(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top;
  out.bottomRows(bottom.rows()) = bottom;
  return out;
}

}  // namespace detail

// x_t is k x B; `steps` holds either one step for the whole batch or one per column.
inline Matrix PredictNoise(const DenoiserParams& p, const Matrix& x_t, std::span<const int> steps,
                           ForwardCache* cache = nullptr) {
  const Index batch = x_t.cols();
  if (x_t.rows() != p.dims.latent) {
    throw ShapeError("denoiser input has " + std::to_string(x_t.rows()) + " rows, expected " +
                     std::to_string(p.dims.latent));
  }
  if (steps.size() != 1 && static_cast<Index>(steps.size()) != batch) {
    throw ShapeError("step list must have one entry or one per column");
  }
  for (const int t : steps) {
    if (t < 1 || t > p.dims.max_step) {
      throw RangeError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(p.dims.max_step));
    }
  }
  const DenoiserLayout l = p.layout();
  const std::span<const double> theta(p.theta);

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.x = x_t;
  c.emb_raw.resize(p.dims.embedding, batch);
  if (steps.size() == 1) {
    c.emb_raw.colwise() = StepEmbedding(steps[0], p.dims.embedding);
  } else {
    for (Index b = 0; b < batch; ++b) c.emb_raw.col(b) = StepEmbedding(steps[static_cast<std::size_t>(b)], p.dims.embedding);
  }
  c.emb_pre = l.embed.Forward(theta, c.emb_raw);
  c.emb = nn::LeakyRelu(c.emb_pre);

  auto run_block = [&](std::size_t i, Matrix input) {
    c.pre[i] = l.block[i].Forward(theta, input) + l.step_proj[i].Forward(theta, c.emb);
    c.act[i] = nn::LeakyRelu(c.pre[i]);
    c.input[i] = std::move(input);
  };
  run_block(0, x_t);
  run_block(1, c.act[0]);
  run_block(2, c.act[1]);
  run_block(3, c.act[2]);
  run_block(4, detail::Concat(c.act[3], c.act[2]));
  run_block(5, detail::Concat(c.act[4], c.act[1]));
  c.out_input = detail::Concat(c.act[5], c.act[0]);
  return l.out.Forward(theta, c.out_input);
}

inline Vector PredictNoise(const DenoiserParams& p, const Vector& x_t, int t) {
  const int step[1] = {t};
  return PredictNoise(p, Matrix(x_t), step).col(0);
}

// Backpropagates dL/d(output) through a cached forward pass. Parameter
// gradients accumulate into `grad` when it is non-empty; returns dL/dx_t.
inline Matrix Backward(const DenoiserParams& p, const ForwardCache& c, const Matrix& grad_out,
                       std::span<double> grad) {
  const DenoiserLayout l = p.layout();
  const std::span<const double> theta(p.theta);
  const Index w = p.dims.width;

  std::array<Matrix, kBlocks> grad_act;
  for (std::size_t i = 0; i < kBlocks; ++i) grad_act[i] = Matrix::Zero(c.act[i].rows(), c.act[i].cols());
  Matrix grad_emb = Matrix::Zero(c.emb.rows(), c.emb.cols());

  const Matrix grad_out_in = l.out.Backward(theta, grad, c.out_input, grad_out);
  grad_act[5] += grad_out_in.topRows(w);
  grad_act[0] += grad_out_in.bottomRows(w);

  auto back_block = [&](std::size_t i) -> Matrix {
    const Matrix grad_pre = nn::LeakyReluBackward(c.pre[i], grad_act[i]);
    grad_emb += l.step_proj[i].Backward(theta, grad, c.emb, grad_pre);
    return l.block[i].Backward(theta, grad, c.input[i], grad_pre);
  };

  const Matrix g5 = back_block(5);  // input [act4; act1]
  grad_act[4] += g5.topRows(w / 2);
  grad_act[1] += g5.bottomRows(w / 2);
  const Matrix g4 = back_block(4);  // input [act3; act2]
  grad_act[3] += g4.topRows(w / 4);
  grad_act[2] += g4.bottomRows(w / 4);
  grad_act[2] += back_block(3);
  grad_act[1] += back_block(2);
  grad_act[0] += back_block(1);
  Matrix grad_x = back_block(0);

  l.embed.BackwardParamsOnly(grad, c.emb_raw, nn::LeakyReluBackward(c.emb_pre, grad_emb));
  return grad_x;
}

}  // namespace tomodiff::denoiser
