#pragma once

// Small synthetic network and traffic process for tests, demos and the
// end-to-end fixture: four nodes on a directed ring with one chord, and a
// traffic process that alternates between a daytime and a night-time flow
// profile under a smooth diurnal level.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "tomodiff/data.hpp"

namespace tomodiff::toy {

// a->b->c->d->a plus a->c: 4 nodes, 5 directed links, every OD pair reachable.
inline data::Topology FourNodeTopology() {
  return data::Topology({"a", "b", "c", "d"},
                        {{"a", "b", 1.0}, {"b", "c", 1.0}, {"c", "d", 1.0}, {"d", "a", 1.0}, {"a", "c", 1.0}});
}

struct ProcessConfig {
  Index nodes = 4;
  double interval_seconds = 300.0;
  double noise = 0.05;  // multiplicative log-normal jitter
  std::uint64_t seed = 1;
};

// Flow j at time t: profile_{regime(t)}[j] * level(t) * jitter. The regime is
// "day" when the diurnal phase is positive, "night" otherwise; the two
// profiles share log-normal base volumes but reweight them differently.
inline data::TrafficMatrixSeries TwoRegimeSeries(Index timepoints, const ProcessConfig& config) {
  const Index n = config.nodes * config.nodes;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> reweight(0.3, 1.7);
  Vector base(n), day(n), night(n);
  for (Index j = 0; j < n; ++j) base(j) = std::exp(3.0 + 1.2 * normal(rng));
  for (Index j = 0; j < n; ++j) day(j) = base(j) * reweight(rng);
  for (Index j = 0; j < n; ++j) night(j) = base(j) * reweight(rng);

  const double samples_per_day = 86400.0 / config.interval_seconds;
  Matrix values(timepoints, n);
  for (Index t = 0; t < timepoints; ++t) {
    const double phase = std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / samples_per_day);
    const double level = 1.0 + 0.6 * phase;
    const Vector& profile = phase >= 0.0 ? day : night;
    for (Index j = 0; j < n; ++j) values(t, j) = profile(j) * level * std::exp(config.noise * normal(rng));
  }
  return data::MakeSeries(std::move(values), config.interval_seconds, "bytes");
}

}  // namespace tomodiff::toy
