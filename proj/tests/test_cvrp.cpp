#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vrptune/cvrp.hpp"

using namespace vrptune;

namespace {

// Layout follows the CVRPLib X-set files: header keywords, coordinates,
// demands, depot list terminated by -1.
constexpr const char* kMinimal = R"(NAME : tiny-n3
COMMENT : hand fixture
TYPE : CVRP
DIMENSION : 3
EDGE_WEIGHT_TYPE : EUC_2D
CAPACITY : 10
NODE_COORD_SECTION
1 0 0
2 3 4
3 6 0
DEMAND_SECTION
1 0
2 4
3 7
DEPOT_SECTION
 1
 -1
EOF
)";

Instance square(double cap = 10.0) {
  return Instance("sq", {0, 0}, {{1, {3, 4}, 1}, {2, {6, 0}, 1}}, cap);
}

}  // namespace

TEST(Parse, MinimalFile) {
  const auto inst = parse_instance(kMinimal);
  EXPECT_EQ(inst.name(), "tiny-n3");
  EXPECT_EQ(inst.size(), 2);
  EXPECT_EQ(inst.capacity(), 10);
  EXPECT_EQ(inst.depot(), (Point{0, 0}));
  EXPECT_EQ(inst.customers()[1].pos, (Point{6, 0}));
  EXPECT_EQ(inst.customers()[1].demand, 7);
  EXPECT_EQ(inst.rounding(), Rounding::nearest_integer);
}

TEST(Parse, DemandExceedingCapacity) {
  std::string text = kMinimal;
  text.replace(text.find("3 7\n"), 4, "3 15\n");
  try {
    parse_instance(text);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("demand exceeds capacity"), std::string::npos);
    EXPECT_EQ(e.line(), 14);
  }
}

TEST(Parse, ReportsMissingSectionsAndBadFields) {
  std::string no_demand = kMinimal;
  no_demand.erase(no_demand.find("DEMAND_SECTION"), std::string("DEMAND_SECTION\n1 0\n2 4\n3 7\n").size());
  EXPECT_THROW(parse_instance(no_demand), ParseError);

  std::string bad_num = kMinimal;
  bad_num.replace(bad_num.find("2 3 4"), 5, "2 3 x4");
  try {
    parse_instance(bad_num);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 9);
  }

  std::string geo = kMinimal;
  geo.replace(geo.find("EUC_2D"), 6, "GEO");
  EXPECT_THROW(parse_instance(geo), ParseError);
}

TEST(Parse, RoundTripIsIdentity) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto inst = oracle::random_instance(seed, 1 + static_cast<int>(seed % 9), 25.0);
    const auto once = parse_instance(serialize_instance(inst));
    const auto twice = parse_instance(serialize_instance(once));
    EXPECT_EQ(once, twice);
    EXPECT_EQ(once.customers(), inst.customers());
  }
  const auto tiny = parse_instance(kMinimal);
  EXPECT_EQ(parse_instance(serialize_instance(tiny)), tiny);
}

TEST(Parse, NonUnitDepotIsSeparated) {
  const char* text = R"(NAME : d2
DIMENSION : 3
CAPACITY : 5
EDGE_WEIGHT_TYPE : EUC_2D
NODE_COORD_SECTION
1 10 10
2 0 0
3 20 20
DEMAND_SECTION
1 2
2 0
3 3
DEPOT_SECTION
2
-1
EOF
)";
  const auto inst = parse_instance(text);
  EXPECT_EQ(inst.depot(), (Point{0, 0}));
  ASSERT_EQ(inst.size(), 2);
  EXPECT_EQ(inst.customers()[0].demand, 2);
  EXPECT_EQ(inst.customers()[1].pos, (Point{20, 20}));
}

TEST(Distance, RoundingAndMetric) {
  const Instance a("a", {0, 0}, {{1, {3, 4}, 1}}, 10);
  EXPECT_EQ(a.distance(0, 1), 5.0);
  const Instance b("b", {0, 0}, {{1, {1, 1}, 1}}, 10);
  EXPECT_EQ(b.distance(0, 1), 1.0);
  const Instance c("c", {0, 0}, {{1, {1, 1}, 1}}, 10, Rounding::exact_float);
  EXPECT_NEAR(c.distance(0, 1), std::sqrt(2.0), 1e-15);
  EXPECT_THROW(a.distance(0, 2), std::out_of_range);

  const auto r = oracle::random_instance(3, 30);
  for (int i = 0; i <= r.size(); ++i) {
    EXPECT_EQ(r.distance(i, i), 0.0);
    for (int j = 0; j <= r.size(); ++j) {
      EXPECT_EQ(r.distance(i, j), r.distance(j, i));
      EXPECT_GE(r.distance(i, j), 0.0);
    }
  }
}

TEST(Evaluate, OutAndBack) {
  const Instance a("a", {0, 0}, {{1, {3, 4}, 1}}, 10);
  const auto ev = evaluate_routes(a, {{1}});
  EXPECT_EQ(ev.cost, 10.0);
  EXPECT_TRUE(ev.feasible);
}

TEST(Evaluate, CapacityViolations) {
  const Instance inst("ov", {0, 0},
                      {{1, {1, 0}, 3}, {2, {2, 0}, 3}, {3, {0, 1}, 3}, {4, {0, 2}, 3}}, 5);
  const auto ev = evaluate_routes(inst, {{1, 2}, {3, 4}});
  EXPECT_FALSE(ev.feasible);
  ASSERT_EQ(ev.violations.size(), 2u);
  for (const auto& v : ev.violations) {
    EXPECT_EQ(v.kind, ViolationKind::overloaded_route);
    EXPECT_EQ(v.amount, 1.0);
  }
}

TEST(Evaluate, MissingDuplicateUnknown) {
  const auto inst = square();
  const auto ev = evaluate_routes(inst, {{1}, {1}});
  EXPECT_FALSE(ev.feasible);
  ASSERT_EQ(ev.violations.size(), 2u);
  EXPECT_EQ(ev.violations[0].kind, ViolationKind::duplicate_customer);
  EXPECT_EQ(ev.violations[0].subject, 1);
  EXPECT_EQ(ev.violations[1].kind, ViolationKind::missing_customer);
  EXPECT_EQ(ev.violations[1].subject, 2);
  EXPECT_THROW(evaluate_routes(inst, {{1, 7}}), std::out_of_range);
}

TEST(Evaluate, MatchesLegByLegOracle) {
  const auto inst = oracle::random_instance(11, 4, 100.0);
  std::vector<int> perm{1, 2, 3, 4};
  do {
    const std::vector<std::vector<int>> routes{{perm[0], perm[1]}, {perm[2]}, {perm[3]}};
    EXPECT_DOUBLE_EQ(evaluate_routes(inst, routes).cost, oracle::leg_sum(inst, routes));
  } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST(Gap, Definition) {
  EXPECT_EQ(gap(100.0, 100.0), 0.0);
  EXPECT_NEAR(gap(104.0, 100.0), 0.04, 1e-15);
  EXPECT_THROW(gap(1.0, 0.0), std::invalid_argument);
  EXPECT_THROW(gap(1.0, std::optional<double>{}), std::invalid_argument);
  // Display format: objective 25739 at 0.05% gap renders as in published tables.
  EXPECT_EQ(format_percent(0.0005), "0.05%");
}

TEST(SolutionFile, WriteThenRead) {
  const auto inst = oracle::random_instance(5, 6, 12.0);
  const auto sol = make_solution(inst, {{1, 2}, {3, 4, 5}, {6}});
  const auto text = format_solution(sol);
  EXPECT_EQ(text.substr(0, 14), "Route #1: 1 2\n");
  const auto back = parse_solution(text, inst);
  EXPECT_EQ(back.routes, sol.routes);
  EXPECT_EQ(back.cost, sol.cost);
}

TEST(BksTable, Parses) {
  const auto t = parse_bks_table("# comment\nX-n101-k25 27591\nX-n106-k14 26362 # trailing\n\n");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.at("X-n106-k14"), 26362);
  EXPECT_THROW(parse_bks_table("a b c\n"), ParseError);
}

TEST(InstanceInvariants, Rejected) {
  EXPECT_THROW(Instance("x", {0, 0}, {}, 10), InvalidInstance);
  EXPECT_THROW(Instance("x", {0, 0}, {{1, {0, 0}, 11}}, 10), InvalidInstance);
  EXPECT_THROW(Instance("x", {0, 0}, {{2, {0, 0}, 1}}, 10), InvalidInstance);
  EXPECT_THROW(Instance("x", {0, 0}, {{1, {0, 0}, 1}}, 0), InvalidInstance);
}
