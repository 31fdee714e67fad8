#include <gtest/gtest.h>

#include <set>

#include "oracles.hpp"
#include "vrptune/hgs.hpp"

using namespace vrptune;

namespace {

Instance line_instance() {
  return Instance("line", {0, 0}, {{1, {1, 0}, 4}, {2, {2, 0}, 4}, {3, {3, 0}, 4}}, 8);
}

HgsConfig small_config(std::uint64_t seed, long iterations) {
  HgsConfig c;
  c.population_size = 10;
  c.generation_size = 10;
  c.elite_fraction = 0.3;
  c.granularity = 10;
  c.budget.max_iterations = iterations;
  c.budget.max_no_improve = 0;
  c.seed = seed;
  return c;
}

// Explicitly builds every neighbor reachable by one move from `routes` for the
// pair (u, v) and returns the best penalized cost among them, recomputed from
// scratch.
double best_neighbor_cost(const Instance& inst, const std::vector<Route>& routes, int u, int v,
                          const OperatorToggles& ops, double penalty) {
  double best = std::numeric_limits<double>::infinity();
  auto locate = [&](int c) {
    for (std::size_t r = 0; r < routes.size(); ++r)
      for (std::size_t i = 0; i < routes[r].size(); ++i)
        if (routes[r][i] == c) return std::pair<int, int>(int(r), int(i));
    return std::pair<int, int>(-1, -1);
  };
  auto consider = [&](std::vector<Route> rs) {
    std::erase_if(rs, [](const Route& r) { return r.empty(); });
    best = std::min(best, penalized_cost(inst, rs, penalty));
  };
  const auto [ru, iu] = locate(u);
  const auto [rv, iv] = locate(v);
  if (ops.relocate) {
    for (bool after : {true, false}) {
      auto rs = routes;
      rs[ru].erase(rs[ru].begin() + iu);
      auto& target = rs[rv];
      const auto it = std::find(target.begin(), target.end(), v);
      target.insert(after ? it + 1 : it, u);
      consider(rs);
    }
    auto rs = routes;
    rs[ru].erase(rs[ru].begin() + iu);
    rs.push_back({u});
    consider(rs);
  }
  for (int k = 1; k <= 3; ++k) {
    const bool on = k == 1 ? ops.swap11 : k == 2 ? ops.swap22 : ops.swap33;
    if (!on) continue;
    if (ru == rv) {
      if (k == 1) {
        auto rs = routes;
        std::swap(rs[ru][iu], rs[ru][iv]);
        consider(rs);
      }
      continue;
    }
    if (iu + k > int(routes[ru].size()) || iv + k > int(routes[rv].size())) continue;
    auto rs = routes;
    std::swap_ranges(rs[ru].begin() + iu, rs[ru].begin() + iu + k, rs[rv].begin() + iv);
    consider(rs);
  }
  if (ops.two_opt && ru == rv) {
    const int i = std::min(iu, iv), j = std::max(iu, iv);
    auto a = routes;
    std::reverse(a[ru].begin() + i + 1, a[ru].begin() + j + 1);
    consider(a);
    auto b = routes;
    std::reverse(b[ru].begin() + i, b[ru].begin() + j);
    consider(b);
  }
  if (ops.two_opt_star && ru != rv) {
    const auto& A = routes[ru];
    const auto& B = routes[rv];
    auto rs = routes;
    Route r1(A.begin(), A.begin() + iu + 1), r2(B.begin(), B.begin() + iv + 1);
    r1.insert(r1.end(), B.begin() + iv + 1, B.end());
    r2.insert(r2.end(), A.begin() + iu + 1, A.end());
    rs[ru] = r1;
    rs[rv] = r2;
    consider(rs);
    Route c1(A.begin(), A.begin() + iu + 1), c2;
    for (int t = iv; t >= 0; --t) c1.push_back(B[t]);
    for (int t = int(A.size()) - 1; t > iu; --t) c2.push_back(A[t]);
    c2.insert(c2.end(), B.begin() + iv + 1, B.end());
    auto rs2 = routes;
    rs2[ru] = c1;
    rs2[rv] = c2;
    consider(rs2);
  }
  return best;
}

std::vector<std::vector<int>> nearest_by_brute_force(const Instance& inst, int g) {
  std::vector<std::vector<int>> out(inst.size() + 1);
  for (int u = 1; u <= inst.size(); ++u) {
    std::vector<std::pair<double, int>> all;
    for (int v = 1; v <= inst.size(); ++v)
      if (v != u) all.push_back({oracle::leg(inst, u, v), v});
    std::sort(all.begin(), all.end());
    for (int k = 0; k < std::min<int>(g, int(all.size())); ++k) out[u].push_back(all[k].second);
  }
  return out;
}

}  // namespace

TEST(Split, LineExample) {
  const auto inst = line_instance();
  const std::vector<int> tour{1, 2, 3};
  const auto s = split(tour, inst, 1000.0);
  EXPECT_EQ(s.routes, (std::vector<Route>{{1}, {2, 3}}));
  EXPECT_EQ(s.cost, 8.0);
  EXPECT_TRUE(s.feasible);
  EXPECT_EQ(oracle::exhaustive_split(inst, tour, 1000.0), 8.0);
}

TEST(Split, SingleCustomer) {
  const Instance inst("one", {0, 0}, {{1, {3, 4}, 2}}, 5);
  const std::vector<int> tour{1};
  EXPECT_EQ(split(tour, inst, 1.0).routes, (std::vector<Route>{{1}}));
}

TEST(Split, MatchesExhaustiveSegmentation) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(trial % 10);
    const auto inst = oracle::random_instance(1000 + trial, n, 12.0, 6);
    std::vector<int> tour(n);
    std::iota(tour.begin(), tour.end(), 1);
    shuffle(tour, rng);
    for (double penalty : {0.5, 10.0, 1e4}) {
      const auto s = split(tour, inst, penalty);
      EXPECT_EQ(penalized_cost(inst, s.routes, penalty), oracle::exhaustive_split(inst, tour, penalty));
    }
  }
}

TEST(Split, SingleRouteIffCheapest) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 6;
    auto inst = oracle::random_instance(500 + trial, n, 1000.0, 5);
    std::vector<int> tour(n);
    std::iota(tour.begin(), tour.end(), 1);
    shuffle(tour, rng);
    const auto s = split(tour, inst, 1e6);
    const bool single_is_cheapest = oracle::leg_sum(inst, {tour}) <= oracle::exhaustive_split(inst, tour, 1e6);
    EXPECT_EQ(s.routes.size() == 1, single_is_cheapest);
  }
}

TEST(Crossover, IdenticalParents) {
  const std::vector<int> p{3, 1, 4, 2, 5};
  Rng rng(1);
  EXPECT_EQ(ox_crossover(p, p, rng), p);
}

TEST(Crossover, SliceKeepsPermutation) {
  const std::vector<int> a{1, 2, 3, 4}, b{4, 3, 2, 1};
  const auto child = ox_crossover(a, b, 2, 3);
  EXPECT_EQ(std::multiset<int>(child.begin(), child.end()), (std::multiset<int>{1, 2, 3, 4}));
  EXPECT_EQ(child[2], 3);
  EXPECT_EQ(child[3], 4);
  // remaining ids in parent_b order starting after the slice end
  EXPECT_EQ(child, (std::vector<int>{2, 1, 3, 4}));
}

TEST(Crossover, DeterministicAndClosed) {
  Rng g(5);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> a(12), b(12);
    std::iota(a.begin(), a.end(), 1);
    std::iota(b.begin(), b.end(), 1);
    shuffle(a, g);
    shuffle(b, g);
    Rng r1(t), r2(t);
    const auto c1 = ox_crossover(a, b, r1);
    EXPECT_EQ(c1, ox_crossover(a, b, r2));
    auto sorted = c1;
    std::sort(sorted.begin(), sorted.end());
    EXPECT_EQ(sorted, std::vector<int>({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}));
  }
}

TEST(Crossover, MismatchedSets) {
  const std::vector<int> a{1, 2, 3}, b{1, 2, 4};
  Rng rng(1);
  EXPECT_THROW(ox_crossover(a, b, rng), std::invalid_argument);
}

TEST(LocalSearch, RemovesCrossing) {
  const Instance inst("sq", {0, 0}, {{1, {0, 20}, 1}, {2, {20, 20}, 1}, {3, {20, 0}, 1}, {4, {10, -10}, 1}}, 100);
  HgsConfig cfg;
  cfg.operators = {false, false, false, false, true, false};
  LocalSearch ls(inst, cfg);
  ls.set_penalty(100.0);
  const auto start = individual_from_routes(inst, {{1, 3, 2, 4}}, 100.0);
  Rng rng(3);
  const auto out = ls.run(start, rng);
  EXPECT_LT(out.cost, start.cost);
  EXPECT_EQ(out.cost, oracle::best_route_cost(inst, 0b1111));
  EXPECT_EQ(out.cost, oracle::exact_cvrp(inst));
}

TEST(LocalSearch, FixedPointUnchanged) {
  const auto inst = oracle::random_instance(21, 25, 20.0);
  HgsConfig cfg;
  LocalSearch ls(inst, cfg);
  ls.set_penalty(50.0);
  Rng rng(8);
  std::vector<int> tour(25);
  std::iota(tour.begin(), tour.end(), 1);
  const auto once = ls.run(make_individual(inst, tour, 50.0), rng);
  const auto twice = ls.run(once, rng);
  EXPECT_EQ(twice.routes, once.routes);
  EXPECT_EQ(twice.penalized_cost, once.penalized_cost);
}

TEST(LocalSearch, NeverIncreasesPenalizedCost) {
  const auto inst = oracle::random_instance(31, 20, 15.0);
  HgsConfig cfg;
  cfg.operators.swap33 = true;
  LocalSearch ls(inst, cfg);
  Rng rng(77);
  std::vector<int> tour(20);
  std::iota(tour.begin(), tour.end(), 1);
  for (int t = 0; t < 1000; ++t) {
    const double penalty = t % 3 == 0 ? 0.5 : t % 3 == 1 ? 5.0 : 500.0;
    ls.set_penalty(penalty);
    shuffle(tour, rng);
    const auto in = make_individual(inst, tour, penalty);
    const auto out = ls.run(in, rng);
    ASSERT_LE(out.penalized_cost, in.penalized_cost + 1e-9);
    ASSERT_NEAR(out.penalized_cost, penalized_cost(inst, out.routes, penalty), 1e-9);
  }
}

TEST(LocalSearch, OutputIsLocalOptimumOfEveryOperator) {
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const auto inst = oracle::random_instance(seed * 13, 18, 14.0);
    HgsConfig cfg;
    cfg.granularity = 6;
    cfg.operators.swap33 = seed % 2 == 0;
    const double penalty = seed % 3 == 0 ? 2.0 : 40.0;
    LocalSearch ls(inst, cfg);
    ls.set_penalty(penalty);
    EXPECT_EQ(ls.neighbors(), nearest_by_brute_force(inst, 6));
    std::vector<int> tour(18);
    std::iota(tour.begin(), tour.end(), 1);
    Rng rng(seed);
    shuffle(tour, rng);
    const auto out = ls.run(make_individual(inst, tour, penalty), rng);
    const double here = penalized_cost(inst, out.routes, penalty);
    for (int u = 1; u <= inst.size(); ++u)
      for (int v : ls.neighbors()[u])
        EXPECT_GE(best_neighbor_cost(inst, out.routes, u, v, cfg.operators, penalty), here - 1e-6)
            << "improving move left for pair " << u << "," << v;
  }
}

TEST(BiasedFitness, IdenticalPopulationRanksByCostOnly) {
  const auto inst = oracle::random_instance(3, 8, 100.0);
  std::vector<int> tour{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<Individual> pop(4, make_individual(inst, tour, 1.0));
  for (int i = 0; i < 4; ++i) pop[i].penalized_cost = 10.0 + i;
  std::vector<const Individual*> ptrs;
  for (auto& p : pop) ptrs.push_back(&p);
  const auto div = diversity_contributions(ptrs, 2);
  for (double d : div) EXPECT_EQ(d, 0.0);
  const auto fit = biased_fitness(ptrs, 1, 2);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(fit[i], i / 3.0);
}

TEST(BiasedFitness, CheaperFirst) {
  const auto inst = oracle::random_instance(3, 5, 100.0);
  auto a = make_individual(inst, {1, 2, 3, 4, 5}, 1.0);
  auto b = make_individual(inst, {5, 4, 3, 2, 1}, 1.0);
  a.penalized_cost = 1.0;
  b.penalized_cost = 2.0;
  std::vector<const Individual*> ptrs{&b, &a};
  EXPECT_EQ(fitness_ranking(ptrs, 1, 1).front(), 1u);
}

TEST(BiasedFitness, FiveIndividualHandCase) {
  // Six customers; each individual is a single route (capacity is large).
  const Instance inst("h", {0, 0},
                      {{1, {1, 0}, 1}, {2, {2, 0}, 1}, {3, {3, 0}, 1}, {4, {4, 0}, 1}, {5, {5, 0}, 1}, {6, {6, 0}, 1}},
                      100);
  std::vector<std::vector<Route>> route_sets{
      {{1, 2, 3, 4, 5, 6}}, {{1, 2, 3, 4, 6, 5}}, {{6, 5, 4, 3, 2, 1}}, {{2, 1, 3, 4, 5, 6}}, {{1, 3, 5, 2, 4, 6}}};
  std::vector<Individual> pop;
  for (auto& rs : route_sets) pop.push_back(individual_from_routes(inst, rs, 1.0));
  const std::vector<double> costs{5.0, 3.0, 4.0, 1.0, 2.0};
  for (int i = 0; i < 5; ++i) pop[i].penalized_cost = costs[i];
  std::vector<const Individual*> ptrs;
  for (auto& p : pop) ptrs.push_back(&p);

  // Independent recomputation: broken pairs counted from explicit successor
  // and predecessor tables, then both rank terms built by hand.
  auto tables = [](const Route& r) {
    std::vector<int> succ(7, 0), pred(7, 0);
    for (std::size_t i = 0; i < r.size(); ++i) {
      succ[r[i]] = i + 1 < r.size() ? r[i + 1] : 0;
      pred[r[i]] = i > 0 ? r[i - 1] : 0;
    }
    return std::pair(succ, pred);
  };
  auto bp = [&](int a, int b) {
    auto [sa, pa] = tables(route_sets[a][0]);
    auto [sb, pb] = tables(route_sets[b][0]);
    int diff = 0;
    for (int j = 1; j <= 6; ++j) {
      if (sa[j] != sb[j] && sa[j] != pb[j]) ++diff;
      if (pa[j] == 0 && pb[j] != 0 && sb[j] != 0) ++diff;
    }
    return diff / 6.0;
  };
  const int n_closest = 2;
  std::vector<double> div(5);
  for (int i = 0; i < 5; ++i) {
    std::vector<double> d;
    for (int j = 0; j < 5; ++j)
      if (j != i) d.push_back(bp(i, j));
    std::sort(d.begin(), d.end());
    div[i] = (d[0] + d[1]) / 2.0;
  }
  const auto got_div = diversity_contributions(ptrs, n_closest);
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(got_div[i], div[i], 1e-12);

  auto rank_min = [](const std::vector<double>& key) {
    std::vector<double> r(key.size());
    for (std::size_t i = 0; i < key.size(); ++i) {
      int less = 0;
      for (double k : key) less += k < key[i];
      r[i] = less;
    }
    return r;
  };
  const auto cost_rank = rank_min(costs);
  std::vector<double> neg(5);
  for (int i = 0; i < 5; ++i) neg[i] = -div[i];
  const auto div_rank = rank_min(neg);
  const auto fit = biased_fitness(ptrs, 2, n_closest);
  for (int i = 0; i < 5; ++i)
    EXPECT_NEAR(fit[i], cost_rank[i] / 4.0 + (1.0 - 2.0 / 5.0) * div_rank[i] / 4.0, 1e-12) << i;
}

TEST(Penalty, AdaptsTowardTarget) {
  EXPECT_GT(adapt_penalty(10.0, 0.0, 0.2, 1.2), 10.0);
  EXPECT_LT(adapt_penalty(10.0, 0.9, 0.2, 1.2), 10.0);
  EXPECT_EQ(adapt_penalty(10.0, 0.2, 0.2, 1.2), 10.0);
}

TEST(Config, Validation) {
  HgsConfig c;
  EXPECT_TRUE(validate_hgs_config(c).empty());
  c.population_size = 1;
  const auto v = validate_hgs_config(c);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v.front(), "population_size >= 2");
  HgsConfig g;
  g.granularity = 10;
  EXPECT_FALSE(validate_hgs_config(g, 5).empty());
}

TEST(Run, SingleCustomer) {
  const Instance inst("one", {0, 0}, {{1, {3, 4}, 2}}, 5);
  const auto r = run_hgs(inst, small_config(1, 20));
  EXPECT_TRUE(r.best.feasible);
  EXPECT_EQ(r.best.routes, (std::vector<Route>{{1}}));
  EXPECT_EQ(r.best.cost, 10.0);
}

TEST(Run, DeterministicTrace) {
  const auto inst = oracle::random_instance(17, 40, 30.0);
  const auto a = run_hgs(inst, small_config(5, 300));
  const auto b = run_hgs(inst, small_config(5, 300));
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].iteration, b.trace[i].iteration);
    EXPECT_EQ(a.trace[i].best_cost, b.trace[i].best_cost);
  }
  EXPECT_EQ(a.best.routes, b.best.routes);
  for (std::size_t i = 1; i < a.trace.size(); ++i) EXPECT_LT(a.trace[i].best_cost, a.trace[i - 1].best_cost);
}

TEST(Run, ReportedFeasibilityIsTrue) {
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const auto inst = oracle::random_instance(s, 30, 12.0);
    const auto r = run_hgs(inst, small_config(s, 150));
    const auto ev = evaluate_solution(inst, r.best);
    EXPECT_EQ(ev.feasible, r.best.feasible);
    EXPECT_NEAR(ev.cost, r.best.cost, 1e-9);
  }
}

TEST(Run, MatchesExactOptimumOnSixCustomers) {
  int matches = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto inst = oracle::random_instance(7000 + seed, 6, 10.0, 5);
    const auto r = run_hgs(inst, small_config(seed, 200));
    if (r.best.feasible && std::fabs(r.best.cost - oracle::exact_cvrp(inst)) < 1e-9) ++matches;
  }
  EXPECT_GE(matches, 95);
}

TEST(Run, PenaltyRisesWhenOffspringInfeasible) {
  // Tight capacity, low starting penalty: most offspring are infeasible.
  const auto inst = oracle::random_instance(41, 40, 6.0, 5);
  auto cfg = small_config(3, 250);
  cfg.capacity_penalty_init = 0.01;
  cfg.target_feasible_ratio = 0.9;
  Hgs hgs(inst, cfg);
  hgs.initialize();
  const double before = hgs.penalty();
  hgs.iterate(100);
  EXPECT_GT(hgs.penalty(), before);

  auto easy = small_config(3, 250);
  easy.capacity_penalty_init = 50.0;
  easy.target_feasible_ratio = 0.05;
  Hgs loose(oracle::random_instance(42, 40, 1000.0, 5), easy);
  loose.initialize();
  const double b2 = loose.penalty();
  loose.iterate(100);
  EXPECT_LT(loose.penalty(), b2);
}
