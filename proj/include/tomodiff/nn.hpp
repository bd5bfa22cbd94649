#pragma once

// Minimal dense-network building blocks with hand-written backward passes.
// Every network keeps its parameters in one flat std::vector<double>; layers
// are views at fixed offsets into that buffer, which keeps optimizer state,
// checksums and serialization trivial.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tomodiff/error.hpp"

namespace tomodiff {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

namespace nn {

inline constexpr double kLeakySlope = 0.01;

inline Matrix LeakyRelu(const Matrix& pre) {
  return pre.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
}

// dL/dpre given dL/dout and the pre-activation.
inline Matrix LeakyReluBackward(const Matrix& pre, const Matrix& grad_out) {
  return grad_out.binaryExpr(pre, [](double g, double v) { return v > 0.0 ? g : kLeakySlope * g; });
}

// Fully connected layer y = W x + b over column-batched inputs. W is stored
// column-major (out x in) at `offset`, followed by b.
struct Dense {
  Index in = 0;
  Index out = 0;
  std::size_t offset = 0;

  std::size_t size() const { return static_cast<std::size_t>(out * in + out); }

  ConstMatrixMap W(std::span<const double> theta) const {
    return ConstMatrixMap(theta.data() + offset, out, in);
  }
  ConstVectorMap b(std::span<const double> theta) const {
    return ConstVectorMap(theta.data() + offset + out * in, out);
  }
  MatrixMap W(std::span<double> theta) const { return MatrixMap(theta.data() + offset, out, in); }
  VectorMap b(std::span<double> theta) const {
    return VectorMap(theta.data() + offset + out * in, out);
  }

  Matrix Forward(std::span<const double> theta, const Matrix& x) const {
    Matrix y = W(theta) * x;
    y.colwise() += b(theta);
    return y;
  }

  // Accumulates parameter gradients into `grad` (when non-empty) and returns dL/dx.
  Matrix Backward(std::span<const double> theta, std::span<double> grad, const Matrix& x,
                  const Matrix& grad_out) const {
    if (!grad.empty()) {
      W(grad).noalias() += grad_out * x.transpose();
      b(grad) += grad_out.rowwise().sum();
    }
    return W(theta).transpose() * grad_out;
  }

  // Same as Backward but skips dL/dx when the input is a leaf.
  void BackwardParamsOnly(std::span<double> grad, const Matrix& x, const Matrix& grad_out) const {
    if (grad.empty()) return;
    W(grad).noalias() += grad_out * x.transpose();
    b(grad) += grad_out.rowwise().sum();
  }
};

// Hands out consecutive parameter ranges while a network layout is declared.
class LayoutBuilder {
 public:
  Dense Add(Index in, Index out) {
    Dense layer{in, out, total_};
    total_ += layer.size();
    return layer;
  }
  std::size_t total() const { return total_; }

 private:
  std::size_t total_ = 0;
};

// Kaiming-style uniform fan-in initialization for weights; biases start at zero.
inline void InitDense(const Dense& layer, std::span<double> theta, std::mt19937_64& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(layer.in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto w = layer.W(theta);
  for (Index c = 0; c < w.cols(); ++c) {
    for (Index r = 0; r < w.rows(); ++r) w(r, c) = dist(rng);
  }
  layer.b(theta).setZero();
}

// Parameters live in double precision in memory but are persisted as float32,
// so every optimizer update snaps values onto the float grid. This keeps
// save/load bit-exact.
inline double SnapToFloat(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void SnapToFloat(std::span<double> values) {
  for (double& v : values) v = SnapToFloat(v);
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One Adam update; `snap` rounds parameters and moments to float32 afterwards.
inline void AdamStep(const AdamConfig& config, double learning_rate, AdamState& state,
                     std::span<double> theta, std::span<const double> grad, bool snap) {
  if (state.m.size() != theta.size() || grad.size() != theta.size()) {
    throw ShapeError("optimizer state does not match parameter count");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double m = config.beta1 * state.m[i] + (1.0 - config.beta1) * grad[i];
    double v = config.beta2 * state.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    if (snap) {
      m = SnapToFloat(m);
      v = SnapToFloat(v);
    }
    state.m[i] = m;
    state.v[i] = v;
    const double update = learning_rate * (m / bc1) / (std::sqrt(v / bc2) + config.epsilon);
    theta[i] = snap ? SnapToFloat(theta[i] - update) : theta[i] - update;
  }
}

inline Matrix StandardNormal(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix out(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) out(r, c) = dist(rng);
  }
  return out;
}

inline bool AllFinite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace nn
}  // namespace tomodiff
