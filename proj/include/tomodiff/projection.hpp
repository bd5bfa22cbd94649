#pragma once

// Joint 2-D projections of real and synthetic TM sets (PCA and Barnes-Hut t-SNE).
// Both sets are stacked and fitted together so their coordinates share one frame.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"

namespace tomodiff::projection {

enum class Method { kPca, kTsne };

struct TsneParams {
  double perplexity = 30.0;
  double theta = 0.5;  // Barnes-Hut opening angle
  int iterations = 1000;
  double learning_rate = 200.0;
  double early_exaggeration = 12.0;
  int exaggeration_iterations = 250;
  std::uint64_t seed = 0;
};

struct ProjectionResult {
  Method method = Method::kPca;
  Matrix real;       // N_real x 2
  Matrix synthetic;  // N_synth x 2
  TsneParams tsne;   // parameters used when method == kTsne
  Vector explained_variance;  // PCA only: variances of the two components
};

inline Matrix Stack(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ValidationError("both sample sets must be nonempty");
  if (a.cols() != b.cols()) throw ShapeError("sample sets differ in dimensionality");
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

// Rows are samples. Each component's largest-magnitude loading is positive.
inline Matrix Pca(const Matrix& samples, Vector* variances = nullptr) {
  if (samples.rows() < 2) throw ValidationError("PCA needs at least 2 samples for 2 components");
  const Matrix centered = samples.rowwise() - samples.colwise().mean();
  const Matrix cov = centered.transpose() * centered / static_cast<double>(samples.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  const Index d = samples.cols();
  Matrix components = Matrix::Zero(d, 2);
  Vector var = Vector::Zero(2);
  for (Index c = 0; c < std::min<Index>(2, d); ++c) {
    const Index col = d - 1 - c;  // eigenvalues ascend
    Vector v = eig.eigenvectors().col(col);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    components.col(c) = v;
    var(c) = std::max(eig.eigenvalues()(col), 0.0);
  }
  if (variances) *variances = var;
  return centered * components;
}

namespace detail {

struct QuadNode {
  double cx = 0.0, cy = 0.0, half = 0.0;  // square cell: center and half width
  double com_x = 0.0, com_y = 0.0;
  int count = 0;
  bool leaf = true;
  std::vector<int> points;  // leaf only: points sharing one location
  int child[4] = {-1, -1, -1, -1};
};

class QuadTree {
 public:
  explicit QuadTree(const Matrix& y) : y_(y) {
    const double min_x = y.col(0).minCoeff(), max_x = y.col(0).maxCoeff();
    const double min_y = y.col(1).minCoeff(), max_y = y.col(1).maxCoeff();
    const double half = 0.5 * std::max(max_x - min_x, max_y - min_y) + 1e-5;
    nodes_.push_back(Cell(0.5 * (min_x + max_x), 0.5 * (min_y + max_y), half));
    for (Index i = 0; i < y.rows(); ++i) Insert(0, static_cast<int>(i), 0);
  }

  // Accumulates the repulsive force on point i and the normalization sum.
  void Repulsion(int i, double theta, double& fx, double& fy, double& sum_q) const { Visit(0, i, theta, fx, fy, sum_q); }

 private:
  static QuadNode Cell(double cx, double cy, double half) {
    QuadNode n;
    n.cx = cx;
    n.cy = cy;
    n.half = half;
    return n;
  }

  void Insert(int node, int p, int depth) {
    const double px = y_(p, 0), py = y_(p, 1);
    {
      QuadNode& n = nodes_[static_cast<std::size_t>(node)];
      n.com_x = (n.com_x * n.count + px) / (n.count + 1);
      n.com_y = (n.com_y * n.count + py) / (n.count + 1);
      ++n.count;
      if (n.leaf) {
        const bool fits = n.points.empty() || depth > 48 ||
                          (y_(n.points[0], 0) == px && y_(n.points[0], 1) == py);
        if (fits) {
          n.points.push_back(p);
          return;
        }
        n.leaf = false;
      }
    }
    std::vector<int> moved;
    moved.swap(nodes_[static_cast<std::size_t>(node)].points);
    for (const int q : moved) InsertChild(node, q, depth);
    InsertChild(node, p, depth);
  }

  void InsertChild(int node, int p, int depth) {
    const QuadNode& n = nodes_[static_cast<std::size_t>(node)];
    const int q = (y_(p, 0) >= n.cx ? 1 : 0) + (y_(p, 1) >= n.cy ? 2 : 0);
    if (n.child[q] < 0) {
      const double h = 0.5 * n.half;
      const QuadNode c = Cell(n.cx + (q & 1 ? h : -h), n.cy + (q & 2 ? h : -h), h);
      nodes_.push_back(c);
      nodes_[static_cast<std::size_t>(node)].child[q] = static_cast<int>(nodes_.size() - 1);
    }
    Insert(nodes_[static_cast<std::size_t>(node)].child[q], p, depth + 1);
  }

  void Visit(int node, int i, double theta, double& fx, double& fy, double& sum_q) const {
    const QuadNode& n = nodes_[static_cast<std::size_t>(node)];
    if (n.count == 0) return;
    const double dx = y_(i, 0) - n.com_x, dy = y_(i, 1) - n.com_y;
    const double d2 = dx * dx + dy * dy;
    if (n.leaf || (2.0 * n.half) * (2.0 * n.half) < theta * theta * d2) {
      int count = n.count;
      if (n.leaf && std::find(n.points.begin(), n.points.end(), i) != n.points.end()) --count;
      if (count == 0) return;
      const double q = 1.0 / (1.0 + d2);
      const double mult = count * q;
      sum_q += mult;
      fx += mult * q * dx;
      fy += mult * q * dy;
      return;
    }
    for (const int c : n.child) {
      if (c >= 0) Visit(c, i, theta, fx, fy, sum_q);
    }
  }

  const Matrix& y_;
  std::vector<QuadNode> nodes_;
};

struct SparseRow {
  std::vector<Index> cols;
  std::vector<double> vals;
};

// Conditional affinities over the K nearest neighbours, calibrated to the
// perplexity by bisection on the Gaussian precision, then symmetrized.
inline std::vector<SparseRow> InputAffinities(const Matrix& x, double perplexity) {
  const Index n = x.rows();
  const Index k = std::min<Index>(n - 1, static_cast<Index>(3.0 * perplexity));
  const Vector sq = x.rowwise().squaredNorm();
  std::vector<SparseRow> cond(static_cast<std::size_t>(n));
  std::vector<double> dist(static_cast<std::size_t>(n));
  std::vector<Index> order(static_cast<std::size_t>(n));
  const double target = std::log(perplexity);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      dist[static_cast<std::size_t>(j)] = std::max(0.0, sq(i) + sq(j) - 2.0 * x.row(i).dot(x.row(j)));
    }
    std::iota(order.begin(), order.end(), Index{0});
    std::partial_sort(order.begin(), order.begin() + k + 1, order.end(), [&](Index a, Index b) {
      const double da = a == i ? -1.0 : dist[static_cast<std::size_t>(a)];
      const double db = b == i ? -1.0 : dist[static_cast<std::size_t>(b)];
      return da < db || (da == db && a < b);
    });
    std::vector<Index> nbrs(order.begin() + 1, order.begin() + k + 1);
    std::vector<double> p(static_cast<std::size_t>(k));
    double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0.0, h = 0.0;
      for (Index m = 0; m < k; ++m) {
        const double d = dist[static_cast<std::size_t>(nbrs[static_cast<std::size_t>(m)])];
        p[static_cast<std::size_t>(m)] = std::exp(-beta * d);
        sum += p[static_cast<std::size_t>(m)];
      }
      if (sum <= 0.0) sum = std::numeric_limits<double>::min();
      for (Index m = 0; m < k; ++m) {
        const double d = dist[static_cast<std::size_t>(nbrs[static_cast<std::size_t>(m)])];
        h += beta * d * p[static_cast<std::size_t>(m)];
      }
      h = h / sum + std::log(sum);
      for (double& v : p) v /= sum;
      const double diff = h - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : 0.5 * (beta + lo);
      }
    }
    cond[static_cast<std::size_t>(i)] = {std::move(nbrs), std::move(p)};
  }
  // P_ij = (p_j|i + p_i|j) / (2N)
  std::vector<std::vector<std::pair<Index, double>>> sym(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const SparseRow& row = cond[static_cast<std::size_t>(i)];
    for (std::size_t m = 0; m < row.cols.size(); ++m) {
      sym[static_cast<std::size_t>(i)].emplace_back(row.cols[m], row.vals[m]);
      sym[static_cast<std::size_t>(row.cols[m])].emplace_back(i, row.vals[m]);
    }
  }
  std::vector<SparseRow> out(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& entries = sym[static_cast<std::size_t>(i)];
    std::sort(entries.begin(), entries.end());
    SparseRow& row = out[static_cast<std::size_t>(i)];
    for (const auto& [j, v] : entries) {
      if (!row.cols.empty() && row.cols.back() == j) {
        row.vals.back() += v;
      } else {
        row.cols.push_back(j);
        row.vals.push_back(v);
      }
    }
    for (double& v : row.vals) v /= 2.0 * static_cast<double>(n);
  }
  return out;
}

}  // namespace detail

// Rows are samples; returns N x 2 embedding.
inline Matrix Tsne(const Matrix& samples, const TsneParams& params) {
  const Index n = samples.rows();
  if (n < 3) throw ValidationError("t-SNE needs at least 3 samples");
  Matrix x = samples.rowwise() - samples.colwise().mean();
  const double scale = x.cwiseAbs().maxCoeff();
  if (scale > 0.0) x /= scale;
  const double perplexity = std::min(params.perplexity, static_cast<double>(n - 1) / 3.0);
  const auto p = detail::InputAffinities(x, perplexity);

  std::mt19937_64 rng(params.seed);
  Matrix y = 1e-2 * nn::StandardNormal(n, 2, rng);
  Matrix update = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix grad(n, 2);
  for (int iter = 0; iter < params.iterations; ++iter) {
    const double exaggeration = iter < params.exaggeration_iterations ? params.early_exaggeration : 1.0;
    const double momentum = iter < params.exaggeration_iterations ? 0.5 : 0.8;
    const detail::QuadTree tree(y);
    double sum_q = 0.0;
    Matrix repulsive = Matrix::Zero(n, 2);
    for (Index i = 0; i < n; ++i) {
      double fx = 0.0, fy = 0.0;
      tree.Repulsion(static_cast<int>(i), params.theta, fx, fy, sum_q);
      repulsive(i, 0) = fx;
      repulsive(i, 1) = fy;
    }
    for (Index i = 0; i < n; ++i) {
      double ax = 0.0, ay = 0.0;
      const auto& row = p[static_cast<std::size_t>(i)];
      for (std::size_t m = 0; m < row.cols.size(); ++m) {
        const Index j = row.cols[m];
        const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        ax += row.vals[m] * q * dx;
        ay += row.vals[m] * q * dy;
      }
      grad(i, 0) = 4.0 * (exaggeration * ax - repulsive(i, 0) / sum_q);
      grad(i, 1) = 4.0 * (exaggeration * ay - repulsive(i, 1) / sum_q);
    }
    for (Index i = 0; i < n; ++i) {
      for (Index d = 0; d < 2; ++d) {
        const bool same_sign = (grad(i, d) > 0.0) == (update(i, d) > 0.0);
        gains(i, d) = same_sign ? std::max(gains(i, d) * 0.8, 0.01) : gains(i, d) + 0.2;
        update(i, d) = momentum * update(i, d) - params.learning_rate * gains(i, d) * grad(i, d);
        y(i, d) += update(i, d);
      }
    }
    y = y.rowwise() - y.colwise().mean();
  }
  return y;
}

inline ProjectionResult Project2d(const Matrix& real, const Matrix& synthetic, Method method,
                                  const TsneParams& params = {}) {
  const Matrix all = Stack(real, synthetic);
  ProjectionResult r;
  r.method = method;
  r.tsne = params;
  const Matrix coords = method == Method::kPca ? Pca(all, &r.explained_variance) : Tsne(all, params);
  if (!coords.allFinite()) throw ValidationError("projection produced non-finite coordinates");
  r.real = coords.topRows(real.rows());
  r.synthetic = coords.bottomRows(synthetic.rows());
  return r;
}

}  // namespace tomodiff::projection
