#pragma once

// Estimation error metrics: RMSE and TRE per timepoint, SRE per flow, their
// summary rows, and the empirical CDF of normalized absolute errors.
// Undefined values (zero denominators) are excluded and counted, never coerced.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"

namespace tomodiff::metrics {

inline void CheckSameLength(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw ShapeError("vector lengths differ");
  if (a.size() == 0) throw ValidationError("empty vector");
}

inline double Rmse(const Vector& truth, const Vector& estimate) {
  CheckSameLength(truth, estimate);
  return std::sqrt((truth - estimate).squaredNorm() / static_cast<double>(truth.size()));
}

// Mean absolute error over mean true value at one timepoint.
inline double Tre(const Vector& truth, const Vector& estimate) {
  CheckSameLength(truth, estimate);
  const double denom = truth.mean();
  if (!(denom > 0.0)) throw UndefinedMetricError("TRE undefined for an all-zero true TM");
  return (truth - estimate).cwiseAbs().mean() / denom;
}

// Time-mean absolute error of one flow over its time-mean true volume.
// Series are T x n.
inline double Sre(Index flow, const Matrix& truth, const Matrix& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols()) throw ShapeError("series shapes differ");
  if (flow < 0 || flow >= truth.cols()) throw RangeError("flow index out of range");
  if (truth.rows() == 0) throw ValidationError("empty series");
  const double denom = truth.col(flow).mean();
  if (!(denom > 0.0)) throw UndefinedMetricError("SRE undefined for zero-volume flow " + std::to_string(flow));
  return (truth.col(flow) - estimate.col(flow)).cwiseAbs().mean() / denom;
}

struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double stddev = 0.0;  // population (divide by count)
  double max = 0.0;
  std::size_t count = 0;
};

inline Summary Summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (const double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (const double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  s.max = values.back();
  return s;
}

// A metric evaluated over an index set, with exclusions recorded.
struct MetricSeries {
  std::vector<double> values;
  std::vector<Index> index;     // timepoint or flow of each value
  std::vector<Index> excluded;  // indices where the metric is undefined
  Summary summary;
};

struct MetricReport {
  MetricSeries rmse;  // per timepoint
  MetricSeries tre;   // per timepoint
  MetricSeries sre;   // per flow
};

inline MetricReport Evaluate(const Matrix& truth, const Matrix& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols()) {
    throw ShapeError("true and estimated series differ in shape");
  }
  if (truth.rows() == 0 || truth.cols() == 0) throw ValidationError("empty series");
  MetricReport r;
  for (Index t = 0; t < truth.rows(); ++t) {
    const Vector x = truth.row(t).transpose();
    const Vector xh = estimate.row(t).transpose();
    r.rmse.values.push_back(Rmse(x, xh));
    r.rmse.index.push_back(t);
    if (x.mean() > 0.0) {
      r.tre.values.push_back(Tre(x, xh));
      r.tre.index.push_back(t);
    } else {
      r.tre.excluded.push_back(t);
    }
  }
  for (Index i = 0; i < truth.cols(); ++i) {
    if (truth.col(i).mean() > 0.0) {
      r.sre.values.push_back(Sre(i, truth, estimate));
      r.sre.index.push_back(i);
    } else {
      r.sre.excluded.push_back(i);
    }
  }
  r.rmse.summary = Summarize(r.rmse.values);
  r.tre.summary = Summarize(r.tre.values);
  r.sre.summary = Summarize(r.sre.values);
  return r;
}

// Right-continuous empirical CDF.
class EmpiricalCdf {
 public:
  explicit EmpiricalCdf(std::vector<double> samples) : sorted_(std::move(samples)) {
    if (sorted_.empty()) throw ValidationError("empirical CDF needs at least one sample");
    std::sort(sorted_.begin(), sorted_.end());
  }

  double operator()(double x) const {
    const auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
  }

  // (value, CDF at value) at every distinct sample value, ascending.
  std::vector<std::pair<double, double>> Steps() const {
    std::vector<std::pair<double, double>> out;
    const auto n = static_cast<double>(sorted_.size());
    for (std::size_t i = 0; i < sorted_.size(); ++i) {
      if (i + 1 < sorted_.size() && sorted_[i + 1] == sorted_[i]) continue;
      out.emplace_back(sorted_[i], static_cast<double>(i + 1) / n);
    }
    return out;
  }

  const std::vector<double>& samples() const { return sorted_; }

 private:
  std::vector<double> sorted_;
};

// |x - x_hat| over every entry, divided by the largest true flow volume.
inline std::vector<double> NormalizedAbsoluteErrors(const Matrix& truth, const Matrix& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols()) throw ShapeError("series shapes differ");
  const double scale = truth.size() ? truth.maxCoeff() : 0.0;
  if (!(scale > 0.0)) throw UndefinedMetricError("maximum flow volume is zero");
  std::vector<double> out(static_cast<std::size_t>(truth.size()));
  for (Index i = 0; i < truth.size(); ++i) {
    out[static_cast<std::size_t>(i)] = std::abs(truth.data()[i] - estimate.data()[i]) / scale;
  }
  return out;
}

enum class Aggregation { kMean, kSum };

// Collapses consecutive groups of `group` rows (e.g. 12 five-minute samples
// into one hourly record). A trailing partial group is aggregated as is.
inline Matrix AggregateRows(const Matrix& series, Index group, Aggregation how) {
  if (group < 1) throw ValidationError("aggregation group must be >= 1");
  const Index out_rows = (series.rows() + group - 1) / group;
  Matrix out(out_rows, series.cols());
  for (Index g = 0; g < out_rows; ++g) {
    const Index begin = g * group;
    const Index count = std::min(group, series.rows() - begin);
    const auto block = series.middleRows(begin, count);
    if (how == Aggregation::kSum) {
      out.row(g) = block.colwise().sum();
    } else {
      out.row(g) = block.colwise().mean();
    }
  }
  return out;
}

}  // namespace tomodiff::metrics
