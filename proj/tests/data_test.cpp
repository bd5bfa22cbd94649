#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "tomodiff/data.hpp"

namespace tomodiff::data {
namespace {

std::string TempPath(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("tomodiff_data_" + name)).string();
}

void WriteText(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

Topology Line() {
  return Topology({"A", "B", "C"}, {{"A", "B", 1}, {"B", "A", 1}, {"B", "C", 1}, {"C", "B", 1}});
}

Topology Diamond() {
  // Forward links first (indices 0..3), reverse links after them.
  return Topology({"A", "B", "C", "D"}, {{"A", "B", 1},
                                         {"B", "D", 1},
                                         {"A", "C", 1},
                                         {"C", "D", 1},
                                         {"B", "A", 1},
                                         {"D", "B", 1},
                                         {"C", "A", 1},
                                         {"D", "C", 1}});
}

// Random strongly connected topology: a bidirectional ring plus random chords.
Topology RandomTopology(std::size_t nodes, std::size_t chords, std::mt19937_64& rng) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < nodes; ++i) ids.push_back("n" + std::to_string(i));
  std::vector<Link> links;
  std::uniform_int_distribution<int> weight(1, 3);
  for (std::size_t i = 0; i < nodes; ++i) {
    const std::size_t j = (i + 1) % nodes;
    links.push_back({ids[i], ids[j], static_cast<double>(weight(rng))});
    links.push_back({ids[j], ids[i], static_cast<double>(weight(rng))});
  }
  std::uniform_int_distribution<std::size_t> pick(0, nodes - 1);
  for (std::size_t c = 0; c < chords; ++c) {
    const std::size_t a = pick(rng), b = pick(rng);
    if (a != b) links.push_back({ids[a], ids[b], static_cast<double>(weight(rng))});
  }
  return Topology(ids, links);
}

TEST(ParseDouble, AcceptsTinyAndRejectsOverflow) {
  EXPECT_EQ(*csv::ParseDouble("5.7601910104717665e-316"), 5.7601910104717665e-316);
  EXPECT_EQ(*csv::ParseDouble("1e-400"), 0.0);
  EXPECT_FALSE(csv::ParseDouble("1e400").has_value());
  EXPECT_FALSE(csv::ParseDouble("12abc").has_value());
  EXPECT_FALSE(csv::ParseDouble("").has_value());
}

TEST(WriteMatrix, RoundTripsExtremeValues) {
  Matrix m(1, 4);
  m << std::numeric_limits<double>::denorm_min(), 1e-310, 0.1, std::numeric_limits<double>::max();
  const std::string path = (std::filesystem::temp_directory_path() / "tomodiff_extremes.csv").string();
  csv::WriteMatrix(path, m);
  EXPECT_TRUE(csv::ToMatrix(csv::ReadNumeric(path), 4, path) == m);
}

TEST(LoadTmSeries, PassesValuesThrough) {
  const std::string path = TempPath("ones.csv");
  WriteText(path, "1.0,1.0,1.0,1.0\n1.0,1.0,1.0,1.0\n1.0,1.0,1.0,1.0\n");
  TmLayout layout;
  layout.flows = 4;
  const TrafficMatrixSeries s = LoadTmSeries(path, layout);
  EXPECT_EQ(s.timepoints(), 3);
  EXPECT_EQ(s.flows(), 4);
  EXPECT_TRUE((s.values.array() == 1.0).all());
  EXPECT_DOUBLE_EQ(s.timestamps[2], 600.0);
}

TEST(LoadTmSeries, ReferenceLayoutsHaveSquaredRouterCounts) {
  for (const auto& [layout, nodes] : {std::pair{TmLayout::Abilene(), 12}, std::pair{TmLayout::Geant(), 23}}) {
    const std::size_t n = static_cast<std::size_t>(nodes * nodes);
    std::string row;
    for (std::size_t j = 0; j < n; ++j) row += (j ? "," : "") + std::to_string(j);
    const std::string path = TempPath("ref.csv");
    WriteText(path, row + "\n" + row + "\n");
    const TrafficMatrixSeries s = LoadTmSeries(path, layout);
    EXPECT_EQ(static_cast<std::size_t>(s.flows()), n);
  }
  EXPECT_EQ(TmLayout::Abilene().flows, 144u);
  EXPECT_EQ(TmLayout::Geant().flows, 529u);
}

TEST(LoadTmSeries, HeaderRowIsSkipped) {
  const std::string path = TempPath("header.csv");
  WriteText(path, "f0,f1,f2,f3\n1,2,3,4\n");
  const TrafficMatrixSeries s = LoadTmSeries(path, TmLayout{});
  EXPECT_EQ(s.timepoints(), 1);
  EXPECT_DOUBLE_EQ(s.values(0, 3), 4.0);
}

TEST(LoadTmSeries, WrongWidthNamesRow) {
  const std::string path = TempPath("bad.csv");
  WriteText(path, "1,2,3,4\n1,2,3\n");
  TmLayout layout;
  layout.flows = 4;
  try {
    LoadTmSeries(path, layout);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
}

TEST(LoadTmSeries, NegativeValueRejected) {
  const std::string path = TempPath("neg.csv");
  WriteText(path, "1,2,3,4\n1,-2,3,4\n");
  EXPECT_THROW(LoadTmSeries(path, TmLayout{}), ValidationError);
}

TEST(LoadTmSeries, ZeroRowsAreKept) {
  const std::string path = TempPath("gap.csv");
  WriteText(path, "1,2,3,4\n0,0,0,0\n5,6,7,8\n");
  const TrafficMatrixSeries s = LoadTmSeries(path, TmLayout{});
  ASSERT_EQ(s.timepoints(), 3);
  EXPECT_EQ(s.values.row(1).sum(), 0.0);
}

TEST(LoadTmSeries, TimestampColumnMustIncrease) {
  const std::string path = TempPath("ts.csv");
  WriteText(path, "0,1,1,1,1\n300,1,1,1,1\n300,1,1,1,1\n");
  TmLayout layout;
  layout.timestamp_column = true;
  EXPECT_THROW(LoadTmSeries(path, layout), ValidationError);
}

TrafficMatrixSeries IndexSeries(Index rows, double interval) {
  Matrix v(rows, 1);
  for (Index t = 0; t < rows; ++t) v(t, 0) = static_cast<double>(t);
  return MakeSeries(v, interval);
}

TEST(SplitTrainTest, AbileneWeeks) {
  const Index week = 2016;  // 7 days of 5-minute samples
  const auto series = IndexSeries(17 * week + 100, 300.0);
  const auto [train, test] = SplitTrainTest(series, 16, 1);
  EXPECT_EQ(train.timepoints(), 16 * week);
  EXPECT_EQ(test.timepoints(), week);
  EXPECT_EQ(train.values(train.timepoints() - 1, 0), 16 * week - 1);
  EXPECT_EQ(test.values(0, 0), 16 * week);
}

TEST(SplitTrainTest, GeantWeeks) {
  const Index week = 672;  // 7 days of 15-minute samples
  const auto series = IndexSeries(12 * week, 900.0);
  const auto [train, test] = SplitTrainTest(series, 11, 1);
  EXPECT_EQ(train.timepoints(), 11 * week);
  EXPECT_EQ(test.timepoints(), week);
  EXPECT_EQ(test.values(0, 0), 11 * week);
  EXPECT_EQ(test.values(week - 1, 0), 12 * week - 1);
}

TEST(SplitTrainTest, ZeroTrainWeeksGivesPrefixTest) {
  const auto series = IndexSeries(3 * 672, 900.0);
  const auto [train, test] = SplitTrainTest(series, 0, 2);
  EXPECT_EQ(train.timepoints(), 0);
  EXPECT_EQ(test.timepoints(), 2 * 672);
  EXPECT_EQ(test.values(0, 0), 0.0);
}

TEST(SplitTrainTest, InsufficientDataIsRangeError) {
  const auto series = IndexSeries(100, 900.0);
  EXPECT_THROW(SplitTrainTest(series, 1, 1), RangeError);
}

TEST(Topology, RejectsSelfLoopsAndUnknownNodes) {
  EXPECT_THROW(Topology({"A"}, {{"A", "A", 1}}), TopologyError);
  EXPECT_THROW(Topology({"A"}, {{"A", "B", 1}}), TopologyError);
}

TEST(Topology, LoadsEdgeListWithComments) {
  const std::string path = TempPath("topo.txt");
  WriteText(path, "# comment\nA B 2\nB A   # default weight\n\nB C 1.5\n");
  const Topology t = Topology::Load(path);
  ASSERT_EQ(t.node_count(), 3u);
  ASSERT_EQ(t.link_count(), 3u);
  EXPECT_EQ(t.nodes()[2], "C");
  EXPECT_DOUBLE_EQ(t.links()[0].weight, 2.0);
  EXPECT_DOUBLE_EQ(t.links()[1].weight, 1.0);
}

TEST(BuildRoutingMatrix, LineDeterministic) {
  const Topology t = Line();
  const RoutingMatrix a = BuildRoutingMatrix(t, RoutingPolicy::kDeterministic);
  ASSERT_EQ(a.links(), 4);
  ASSERT_EQ(a.flows(), 9);
  const Index ac = static_cast<Index>(t.FlowIndex(0, 2));
  // Hand-run shortest path A -> B -> C uses links 0 (A,B) and 2 (B,C).
  EXPECT_EQ(a.entries(0, ac), 1.0);
  EXPECT_EQ(a.entries(1, ac), 0.0);
  EXPECT_EQ(a.entries(2, ac), 1.0);
  EXPECT_EQ(a.entries(3, ac), 0.0);
}

TEST(BuildRoutingMatrix, SameEndpointFlowHasZeroColumn) {
  const Topology t = Line();
  const RoutingMatrix a = BuildRoutingMatrix(t, RoutingPolicy::kDeterministic);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a.entries.col(static_cast<Index>(t.FlowIndex(i, i))).cwiseAbs().sum(), 0.0);
  const auto mask = a.UnobservableMask();
  EXPECT_TRUE(mask[0]);
  EXPECT_FALSE(mask[1]);
}

TEST(BuildRoutingMatrix, DiamondEcmpSplitsEvenly) {
  const Topology t = Diamond();
  const RoutingMatrix a = BuildRoutingMatrix(t, RoutingPolicy::kEcmp);
  const Index ad = static_cast<Index>(t.FlowIndex(0, 3));
  for (Index l = 0; l < 4; ++l) EXPECT_DOUBLE_EQ(a.entries(l, ad), 0.5);
}

TEST(BuildRoutingMatrix, DeterministicTieBreakIsLexicographic) {
  const Topology t = Diamond();
  const RoutingMatrix a = BuildRoutingMatrix(t, RoutingPolicy::kDeterministic);
  const Index ad = static_cast<Index>(t.FlowIndex(0, 3));
  // A-B-D precedes A-C-D.
  EXPECT_EQ(a.entries(0, ad), 1.0);
  EXPECT_EQ(a.entries(1, ad), 1.0);
  EXPECT_EQ(a.entries(2, ad), 0.0);
  EXPECT_EQ(a.entries(3, ad), 0.0);
}

TEST(BuildRoutingMatrix, DisconnectedPairNamed) {
  const Topology t({"A", "B", "C"}, {{"A", "B", 1}, {"B", "A", 1}});
  try {
    BuildRoutingMatrix(t, RoutingPolicy::kDeterministic);
    FAIL() << "expected TopologyError";
  } catch (const TopologyError& e) {
    EXPECT_NE(std::string(e.what()).find("A -> C"), std::string::npos) << e.what();
  }
}

TEST(ComputeLinkLoads, IdentityRoutingCopiesTm) {
  RoutingMatrix a{Matrix::Identity(4, 4)};
  Matrix x(2, 4);
  x << 1, 2, 3, 4, 5, 6, 7, 8;
  const auto y = ComputeLinkLoads(a, MakeSeries(x, 300.0));
  EXPECT_EQ(y.values, x);
}

TEST(ComputeLinkLoads, LineSingleFlow) {
  const Topology t = Line();
  const RoutingMatrix a = BuildRoutingMatrix(t, RoutingPolicy::kDeterministic);
  Matrix x = Matrix::Zero(1, 9);
  x(0, static_cast<Index>(t.FlowIndex(0, 2))) = 5.0;
  const auto y = ComputeLinkLoads(a, MakeSeries(x, 300.0));
  EXPECT_EQ(y.values(0, 0), 5.0);
  EXPECT_EQ(y.values(0, 2), 5.0);
  EXPECT_EQ(y.values(0, 1), 0.0);
  EXPECT_EQ(y.values(0, 3), 0.0);
}

TEST(ComputeLinkLoads, ZeroTmGivesZeroLoads) {
  const RoutingMatrix a = BuildRoutingMatrix(Line(), RoutingPolicy::kEcmp);
  const auto y = ComputeLinkLoads(a, MakeSeries(Matrix::Zero(3, 9), 300.0));
  EXPECT_EQ(y.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ComputeLinkLoads, ShapeMismatch) {
  RoutingMatrix a{Matrix::Identity(4, 4)};
  EXPECT_THROW(ComputeLinkLoads(a, MakeSeries(Matrix::Ones(1, 9), 300.0)), ShapeError);
}

// Single-flow round trip: the loaded links form one contiguous shortest path.
TEST(RoutingProperties, SingleFlowLoadsFollowOnePath) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Topology t = RandomTopology(6, 5, rng);
    const RoutingMatrix a = BuildRoutingMatrix(t, RoutingPolicy::kDeterministic);
    const Matrix dist = detail::AllPairsDistances(t);
    for (std::size_t s = 0; s < t.node_count(); ++s) {
      for (std::size_t d = 0; d < t.node_count(); ++d) {
        if (s == d) continue;
        Matrix x = Matrix::Zero(1, a.flows());
        x(0, static_cast<Index>(t.FlowIndex(s, d))) = 7.0;
        const Matrix y = ComputeLinkLoads(a, MakeSeries(x, 300.0)).values;
        // Walk the loaded links from s; each must continue the path and the
        // weights must add up to the shortest distance.
        std::set<Index> loaded;
        for (Index l = 0; l < y.cols(); ++l) {
          if (y(0, l) != 0.0) {
            EXPECT_EQ(y(0, l), 7.0);
            loaded.insert(l);
          }
        }
        std::size_t at = s;
        double length = 0.0;
        std::size_t hops = 0;
        while (at != d && hops <= loaded.size()) {
          bool advanced = false;
          for (const Index l : loaded) {
            const Link& link = t.links()[static_cast<std::size_t>(l)];
            if (t.NodeIndex(link.src) == at) {
              at = t.NodeIndex(link.dst);
              length += link.weight;
              advanced = true;
              break;
            }
          }
          ASSERT_TRUE(advanced);
          ++hops;
        }
        EXPECT_EQ(at, d);
        EXPECT_EQ(hops, loaded.size());
        EXPECT_NEAR(length, dist(static_cast<Index>(s), static_cast<Index>(d)), 1e-12);
      }
    }
  }
}

TEST(RoutingProperties, EcmpCutConservation) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Topology t = RandomTopology(7, 8, rng);
    const RoutingMatrix a = BuildRoutingMatrix(t, RoutingPolicy::kEcmp);
    const Matrix dist = detail::AllPairsDistances(t);
    std::bernoulli_distribution coin(0.5);
    for (std::size_t s = 0; s < t.node_count(); ++s) {
      for (std::size_t d = 0; d < t.node_count(); ++d) {
        if (s == d) continue;
        const Index col = static_cast<Index>(t.FlowIndex(s, d));
        EXPECT_GE(a.entries.col(col).minCoeff(), 0.0);
        EXPECT_LE(a.entries.col(col).maxCoeff(), 1.0 + 1e-12);
        // Arbitrary cut separating s from d: net outward flow is 1.
        std::vector<bool> side(t.node_count());
        for (std::size_t v = 0; v < side.size(); ++v) side[v] = coin(rng);
        side[s] = true;
        side[d] = false;
        double net = 0.0;
        // Distance-ball cut: shortest paths cross it exactly once.
        const double radius = 0.5 * dist(static_cast<Index>(s), static_cast<Index>(d));
        double ball = 0.0;
        for (std::size_t l = 0; l < t.link_count(); ++l) {
          const std::size_t u = t.NodeIndex(t.links()[l].src), v = t.NodeIndex(t.links()[l].dst);
          const double e = a.entries(static_cast<Index>(l), col);
          if (side[u] && !side[v]) net += e;
          if (!side[u] && side[v]) net -= e;
          const bool in_u = dist(static_cast<Index>(s), static_cast<Index>(u)) <= radius;
          const bool in_v = dist(static_cast<Index>(s), static_cast<Index>(v)) <= radius;
          if (in_u && !in_v) ball += e;
        }
        EXPECT_NEAR(net, 1.0, 1e-12);
        EXPECT_NEAR(ball, 1.0, 1e-12);
      }
    }
  }
}

TEST(RoutingProperties, LinkLoadsAreLinear) {
  std::mt19937_64 rng(3);
  const Topology t = RandomTopology(5, 4, rng);
  const RoutingMatrix a = BuildRoutingMatrix(t, RoutingPolicy::kEcmp);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  Matrix x1(4, a.flows()), x2(4, a.flows());
  for (Index i = 0; i < x1.size(); ++i) {
    x1.data()[i] = u(rng);
    x2.data()[i] = u(rng);
  }
  const double ca = 2.5, cb = 0.75;
  const Matrix lhs = ComputeLinkLoads(a, MakeSeries(ca * x1 + cb * x2, 300.0)).values;
  const Matrix rhs = ca * ComputeLinkLoads(a, MakeSeries(x1, 300.0)).values +
                     cb * ComputeLinkLoads(a, MakeSeries(x2, 300.0)).values;
  EXPECT_LE((lhs - rhs).norm(), 1e-9 * rhs.norm());
}

TEST(RoutingProperties, ReferenceTopologiesAreUnderdetermined) {
  const Topology abilene = Topology::Load(std::string(TOMODIFF_SOURCE_DIR) + "/data/abilene.topo");
  ASSERT_EQ(abilene.node_count(), 12u);
  for (const auto policy : {RoutingPolicy::kDeterministic, RoutingPolicy::kEcmp}) {
    const RoutingMatrix a = BuildRoutingMatrix(abilene, policy);
    EXPECT_EQ(a.flows(), 144);
    EXPECT_LT(a.Rank(), a.flows());
  }
  std::mt19937_64 rng(23);
  const Topology geant_sized = RandomTopology(23, 14, rng);
  const RoutingMatrix a = BuildRoutingMatrix(geant_sized, RoutingPolicy::kDeterministic);
  EXPECT_EQ(a.flows(), 529);
  EXPECT_LT(a.Rank(), a.flows());
}

TEST(RoutingMatrixIo, RoundTrip) {
  const RoutingMatrix a = BuildRoutingMatrix(Diamond(), RoutingPolicy::kEcmp);
  const std::string path = TempPath("routing.csv");
  SaveRoutingMatrix(path, a);
  EXPECT_EQ(LoadRoutingMatrix(path).entries, a.entries);
}

}  // namespace
}  // namespace tomodiff::data
