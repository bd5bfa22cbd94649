#pragma once

// Traffic-matrix series, topologies, routing matrices and link loads.
//
// Flows are indexed row-major over the |V| x |V| traffic matrix: the flow from
// node i to node j (in declared node order) has index i * |V| + j. Diagonal
// (i -> i) flows stay in the vector and get all-zero routing columns.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tomodiff/csv.hpp"
#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"

namespace tomodiff::data {

struct Link {
  std::string src;
  std::string dst;
  double weight = 1.0;
};

class Topology {
 public:
  Topology() = default;

  // Validates: no self loops, endpoints declared, positive finite weights,
  // unique node ids.
  Topology(std::vector<std::string> nodes, std::vector<Link> links)
      : nodes_(std::move(nodes)), links_(std::move(links)) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!index_.emplace(nodes_[i], i).second) {
        throw TopologyError("duplicate node id '" + nodes_[i] + "'");
      }
    }
    for (std::size_t l = 0; l < links_.size(); ++l) {
      const Link& link = links_[l];
      if (link.src == link.dst) throw TopologyError("self-loop link at node '" + link.src + "'");
      if (!index_.contains(link.src) || !index_.contains(link.dst)) {
        throw TopologyError("link " + std::to_string(l) + " (" + link.src + " -> " + link.dst +
                            ") references an undeclared node");
      }
      if (!(link.weight > 0.0) || !std::isfinite(link.weight)) {
        throw TopologyError("link " + std::to_string(l) + " has non-positive weight");
      }
    }
  }

  // Directed edge list, one `src dst weight` per line (weight optional,
  // default 1), '#' starts a comment. Nodes are declared in order of first
  // appearance; a line `node <id>` declares a node explicitly.
  static Topology Load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open topology '" + path + "'");
    std::vector<std::string> nodes;
    std::map<std::string, bool> seen;
    std::vector<Link> links;
    auto declare = [&](const std::string& id) {
      if (seen.emplace(id, true).second) nodes.push_back(id);
    };
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream fields(line);
      std::vector<std::string> tokens;
      for (std::string tok; fields >> tok;) tokens.push_back(tok);
      if (tokens.empty()) continue;
      if (tokens[0] == "node" && tokens.size() == 2) {
        declare(tokens[1]);
        continue;
      }
      if (tokens.size() != 2 && tokens.size() != 3) {
        throw ParseError("topology '" + path + "' line " + std::to_string(line_no) +
                         ": expected `src dst [weight]`");
      }
      double weight = 1.0;
      if (tokens.size() == 3) {
        const auto parsed = csv::ParseDouble(tokens[2]);
        if (!parsed) {
          throw ParseError("topology '" + path + "' line " + std::to_string(line_no) +
                           ": bad weight '" + tokens[2] + "'");
        }
        weight = *parsed;
      }
      declare(tokens[0]);
      declare(tokens[1]);
      links.push_back({tokens[0], tokens[1], weight});
    }
    return Topology(std::move(nodes), std::move(links));
  }

  const std::vector<std::string>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t link_count() const { return links_.size(); }
  std::size_t flow_count() const { return nodes_.size() * nodes_.size(); }

  std::size_t NodeIndex(const std::string& id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw TopologyError("unknown node '" + id + "'");
    return it->second;
  }

  std::size_t FlowIndex(std::size_t src, std::size_t dst) const { return src * nodes_.size() + dst; }

 private:
  std::vector<std::string> nodes_;
  std::vector<Link> links_;
  std::map<std::string, std::size_t> index_;
};

struct TrafficMatrixSeries {
  Matrix values;                    // T x n, one flattened TM per row
  std::vector<double> timestamps;   // seconds, strictly increasing
  double interval_seconds = 300.0;
  std::string unit = "bytes";

  Index timepoints() const { return values.rows(); }
  Index flows() const { return values.cols(); }

  TrafficMatrixSeries Slice(Index begin, Index count) const {
    TrafficMatrixSeries out;
    out.values = values.middleRows(begin, count);
    out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + begin + count);
    out.interval_seconds = interval_seconds;
    out.unit = unit;
    return out;
  }
};

inline void Validate(const TrafficMatrixSeries& series) {
  if (static_cast<Index>(series.timestamps.size()) != series.timepoints()) {
    throw ValidationError("timestamp count does not match row count");
  }
  for (Index t = 0; t < series.timepoints(); ++t) {
    for (Index j = 0; j < series.flows(); ++j) {
      const double v = series.values(t, j);
      if (!std::isfinite(v) || v < 0.0) {
        throw ValidationError("TM row " + std::to_string(t) + " flow " + std::to_string(j) +
                              " is negative or non-finite");
      }
    }
    if (t > 0 && !(series.timestamps[t] > series.timestamps[t - 1])) {
      throw ValidationError("timestamps not strictly increasing at row " + std::to_string(t));
    }
  }
}

// Builds a series from a T x n matrix with evenly spaced timestamps.
inline TrafficMatrixSeries MakeSeries(Matrix values, double interval_seconds,
                                      std::string unit = "bytes", double start = 0.0) {
  TrafficMatrixSeries s;
  s.values = std::move(values);
  s.interval_seconds = interval_seconds;
  s.unit = std::move(unit);
  s.timestamps.resize(static_cast<std::size_t>(s.values.rows()));
  for (std::size_t t = 0; t < s.timestamps.size(); ++t) {
    s.timestamps[t] = start + interval_seconds * static_cast<double>(t);
  }
  Validate(s);
  return s;
}

struct TmLayout {
  std::optional<std::size_t> flows;  // expected row width (|V|^2); inferred when empty
  bool timestamp_column = false;     // first column holds a timestamp in seconds
  double interval_seconds = 300.0;
  std::string unit = "bytes";

  static TmLayout ForNodes(std::size_t nodes, double interval_seconds) {
    TmLayout layout;
    layout.flows = nodes * nodes;
    layout.interval_seconds = interval_seconds;
    return layout;
  }
  // 12 routers, 5-minute samples.
  static TmLayout Abilene() { return ForNodes(12, 300.0); }
  // 23 routers, 15-minute samples.
  static TmLayout Geant() { return ForNodes(23, 900.0); }
};

inline TrafficMatrixSeries LoadTmSeries(const std::string& path, const TmLayout& layout) {
  const csv::Table table = csv::ReadNumeric(path);
  const std::size_t offset = layout.timestamp_column ? 1 : 0;
  std::optional<std::size_t> width;
  if (layout.flows) width = *layout.flows + offset;
  Matrix raw = csv::ToMatrix(table, width, "TM series '" + path + "'");
  if (layout.timestamp_column && raw.cols() < 1) throw ParseError("missing timestamp column");
  TrafficMatrixSeries series;
  series.interval_seconds = layout.interval_seconds;
  series.unit = layout.unit;
  series.values = raw.rightCols(raw.cols() - static_cast<Index>(offset));
  series.timestamps.resize(static_cast<std::size_t>(raw.rows()));
  for (Index t = 0; t < raw.rows(); ++t) {
    series.timestamps[static_cast<std::size_t>(t)] =
        layout.timestamp_column ? raw(t, 0) : layout.interval_seconds * static_cast<double>(t);
  }
  if (layout.flows) {
    const auto root = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(*layout.flows))));
    if (root * root != *layout.flows) {
      throw ValidationError("declared flow count " + std::to_string(*layout.flows) + " is not |V|^2");
    }
  }
  Validate(series);
  return series;
}

inline void SaveTmSeries(const std::string& path, const TrafficMatrixSeries& series) {
  csv::WriteMatrix(path, series.values);
}

inline Index SamplesPerWeek(double interval_seconds) {
  const double per_week = 7.0 * 86400.0 / interval_seconds;
  const double rounded = std::round(per_week);
  if (!(interval_seconds > 0.0) || std::abs(per_week - rounded) > 1e-9 || rounded < 1.0) {
    throw ValidationError("sampling interval does not divide a week evenly");
  }
  return static_cast<Index>(rounded);
}

// Contiguous split: the first `train_weeks` weeks, then the next `test_weeks`.
inline std::pair<TrafficMatrixSeries, TrafficMatrixSeries> SplitTrainTest(
    const TrafficMatrixSeries& series, Index train_weeks, Index test_weeks) {
  if (train_weeks < 0 || test_weeks < 0) throw RangeError("week counts must be nonnegative");
  const Index per_week = SamplesPerWeek(series.interval_seconds);
  const Index train = train_weeks * per_week;
  const Index test = test_weeks * per_week;
  if (train + test > series.timepoints()) {
    throw RangeError("series has " + std::to_string(series.timepoints()) + " samples, split needs " +
                     std::to_string(train + test));
  }
  return {series.Slice(0, train), series.Slice(train, test)};
}

struct RoutingMatrix {
  Matrix entries;  // m x n

  Index links() const { return entries.rows(); }
  Index flows() const { return entries.cols(); }

  // Flows whose column is entirely zero: not visible on any link.
  std::vector<bool> UnobservableMask() const {
    std::vector<bool> mask(static_cast<std::size_t>(flows()));
    for (Index j = 0; j < flows(); ++j) mask[static_cast<std::size_t>(j)] = entries.col(j).cwiseAbs().maxCoeff() == 0.0;
    return mask;
  }

  Index Rank() const {
    Eigen::ColPivHouseholderQR<Matrix> qr(entries);
    return qr.rank();
  }
};

inline void Validate(const RoutingMatrix& a) {
  for (Index i = 0; i < a.entries.rows(); ++i) {
    for (Index j = 0; j < a.entries.cols(); ++j) {
      const double v = a.entries(i, j);
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ValidationError("routing entry (" + std::to_string(i) + "," + std::to_string(j) +
                              ") outside [0,1]");
      }
    }
  }
}

inline RoutingMatrix LoadRoutingMatrix(const std::string& path) {
  RoutingMatrix a{csv::ToMatrix(csv::ReadNumeric(path), std::nullopt, "routing matrix '" + path + "'")};
  Validate(a);
  return a;
}

inline void SaveRoutingMatrix(const std::string& path, const RoutingMatrix& a) {
  csv::WriteMatrix(path, a.entries);
}

enum class RoutingPolicy { kDeterministic, kEcmp };

namespace detail {

inline bool NearlyEqual(double a, double b) {
  return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

// All-pairs shortest distances (Floyd-Warshall over the cheapest parallel link).
inline Matrix AllPairsDistances(const Topology& topo) {
  const auto v = static_cast<Index>(topo.node_count());
  const double inf = std::numeric_limits<double>::infinity();
  Matrix dist = Matrix::Constant(v, v, inf);
  for (Index i = 0; i < v; ++i) dist(i, i) = 0.0;
  for (const Link& link : topo.links()) {
    const auto s = static_cast<Index>(topo.NodeIndex(link.src));
    const auto d = static_cast<Index>(topo.NodeIndex(link.dst));
    dist(s, d) = std::min(dist(s, d), link.weight);
  }
  for (Index k = 0; k < v; ++k) {
    for (Index i = 0; i < v; ++i) {
      if (dist(i, k) == inf) continue;
      for (Index j = 0; j < v; ++j) {
        const double via = dist(i, k) + dist(k, j);
        if (via < dist(i, j)) dist(i, j) = via;
      }
    }
  }
  return dist;
}

}  // namespace detail

// Deterministic: one shortest path per OD pair, ties broken by the
// lexicographically smallest node-id sequence (then lowest link index among
// parallel links). ECMP: each equal-cost shortest path carries an equal share.
inline RoutingMatrix BuildRoutingMatrix(const Topology& topo, RoutingPolicy policy) {
  const std::size_t v = topo.node_count();
  const auto m = static_cast<Index>(topo.link_count());
  const Matrix dist = detail::AllPairsDistances(topo);

  std::vector<std::size_t> src_of(topo.link_count()), dst_of(topo.link_count());
  std::vector<std::vector<std::size_t>> out_links(v);
  for (std::size_t l = 0; l < topo.link_count(); ++l) {
    src_of[l] = topo.NodeIndex(topo.links()[l].src);
    dst_of[l] = topo.NodeIndex(topo.links()[l].dst);
    out_links[src_of[l]].push_back(l);
  }
  auto on_shortest = [&](std::size_t l, std::size_t target) {
    const double w = topo.links()[l].weight;
    return detail::NearlyEqual(dist(static_cast<Index>(src_of[l]), static_cast<Index>(target)),
                               w + dist(static_cast<Index>(dst_of[l]), static_cast<Index>(target)));
  };

  RoutingMatrix a{Matrix::Zero(m, static_cast<Index>(v * v))};
  for (std::size_t s = 0; s < v; ++s) {
    for (std::size_t d = 0; d < v; ++d) {
      if (s == d) continue;
      if (!std::isfinite(dist(static_cast<Index>(s), static_cast<Index>(d)))) {
        throw TopologyError("no path for OD pair " + topo.nodes()[s] + " -> " + topo.nodes()[d]);
      }
      const auto col = static_cast<Index>(topo.FlowIndex(s, d));
      if (policy == RoutingPolicy::kDeterministic) {
        std::size_t at = s;
        while (at != d) {
          std::optional<std::size_t> best;
          for (const std::size_t l : out_links[at]) {
            if (!on_shortest(l, d)) continue;
            if (!best) {
              best = l;
              continue;
            }
            const std::string& cand = topo.nodes()[dst_of[l]];
            const std::string& incumbent = topo.nodes()[dst_of[*best]];
            const double wc = topo.links()[l].weight;
            const double wb = topo.links()[*best].weight;
            if (cand < incumbent || (cand == incumbent && wc < wb)) best = l;
          }
          a.entries(static_cast<Index>(*best), col) = 1.0;
          at = dst_of[*best];
        }
      } else {
        // Count shortest paths through each DAG link: paths(s -> u) * paths(v -> d).
        std::vector<std::size_t> order;
        for (std::size_t u = 0; u < v; ++u) {
          const double ds = dist(static_cast<Index>(s), static_cast<Index>(u));
          const double dd = dist(static_cast<Index>(u), static_cast<Index>(d));
          if (std::isfinite(ds) && std::isfinite(dd) &&
              detail::NearlyEqual(ds + dd, dist(static_cast<Index>(s), static_cast<Index>(d)))) {
            order.push_back(u);
          }
        }
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
          return dist(static_cast<Index>(s), static_cast<Index>(x)) <
                 dist(static_cast<Index>(s), static_cast<Index>(y));
        });
        std::vector<double> from_src(v, 0.0), to_dst(v, 0.0);
        from_src[s] = 1.0;
        for (const std::size_t u : order) {
          for (const std::size_t l : out_links[u]) {
            if (on_shortest(l, d) && detail::NearlyEqual(dist(static_cast<Index>(s), static_cast<Index>(u)) +
                                                             topo.links()[l].weight,
                                                         dist(static_cast<Index>(s), static_cast<Index>(dst_of[l])))) {
              from_src[dst_of[l]] += from_src[u];
            }
          }
        }
        to_dst[d] = 1.0;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
          for (const std::size_t l : out_links[*it]) {
            if (on_shortest(l, d)) to_dst[*it] += to_dst[dst_of[l]];
          }
        }
        const double total = from_src[d];
        for (const std::size_t u : order) {
          for (const std::size_t l : out_links[u]) {
            if (on_shortest(l, d) && detail::NearlyEqual(dist(static_cast<Index>(s), static_cast<Index>(u)) +
                                                             topo.links()[l].weight,
                                                         dist(static_cast<Index>(s), static_cast<Index>(dst_of[l])))) {
              a.entries(static_cast<Index>(l), col) = from_src[u] * to_dst[dst_of[l]] / total;
            }
          }
        }
      }
    }
  }
  return a;
}

struct LinkLoadSeries {
  Matrix values;  // T x m
  std::vector<double> timestamps;
  double interval_seconds = 300.0;
  std::string unit = "bytes";

  Index timepoints() const { return values.rows(); }
  Index links() const { return values.cols(); }
};

inline LinkLoadSeries ComputeLinkLoads(const RoutingMatrix& a, const TrafficMatrixSeries& x) {
  if (a.flows() != x.flows()) {
    throw ShapeError("routing matrix has " + std::to_string(a.flows()) + " flow columns, series has " +
                     std::to_string(x.flows()));
  }
  LinkLoadSeries y;
  y.values = x.values * a.entries.transpose();
  y.timestamps = x.timestamps;
  y.interval_seconds = x.interval_seconds;
  y.unit = x.unit;
  return y;
}

inline LinkLoadSeries LoadLinkLoads(const std::string& path, double interval_seconds = 300.0) {
  LinkLoadSeries y;
  y.values = csv::ToMatrix(csv::ReadNumeric(path), std::nullopt, "link loads '" + path + "'");
  y.interval_seconds = interval_seconds;
  y.timestamps.resize(static_cast<std::size_t>(y.values.rows()));
  for (std::size_t t = 0; t < y.timestamps.size(); ++t) y.timestamps[t] = interval_seconds * static_cast<double>(t);
  for (Index t = 0; t < y.values.rows(); ++t) {
    for (Index i = 0; i < y.values.cols(); ++i) {
      if (!(y.values(t, i) >= 0.0) || !std::isfinite(y.values(t, i))) {
        throw ValidationError("link load row " + std::to_string(t) + " has a negative or non-finite entry");
      }
    }
  }
  return y;
}

}  // namespace tomodiff::data
