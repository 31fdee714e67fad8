#include <gtest/gtest.h>

#include "oracles.hpp"
#include "vrptune/harness.hpp"

using namespace vrptune;

namespace {

RunMetrics row(const std::string& name, int n, double obj, int run = 0, std::optional<double> bks = std::nullopt) {
  RunMetrics m;
  m.instance_name = name;
  m.n = n;
  m.run = run;
  m.objective = obj;
  m.bks = bks;
  if (bks) m.gap = gap(obj, *bks);
  return m;
}

BenchmarkReport hand_set(const std::string& method, std::array<double, 4> obj) {
  std::vector<RunMetrics> rows;
  const std::array<std::string, 4> names{"a", "b", "c", "d"};
  for (std::size_t i = 0; i < 4; ++i) rows.push_back(row(names[i], 150, obj[i]));
  return build_report(method, rows);
}

}  // namespace

TEST(Buckets, IntervalMembership) {
  EXPECT_EQ(bucket_label(*bucket_of(350)), "[200,400)");
  EXPECT_EQ(*bucket_of(100), 0u);
  EXPECT_EQ(*bucket_of(199), 0u);
  EXPECT_EQ(*bucket_of(200), 1u);
  EXPECT_EQ(*bucket_of(1000), 4u);
  EXPECT_EQ(bucket_label(4), "[800,1000]");
  EXPECT_FALSE(bucket_of(99));
  EXPECT_FALSE(bucket_of(1001));
}

TEST(Buckets, MeansPerInstanceThenPerBucket) {
  const auto rep = build_report("m", {row("x", 150, 100, 0, 90), row("x", 150, 110, 1, 90), row("y", 350, 50, 0)});
  EXPECT_EQ(rep.buckets[0].instances, 1u);
  EXPECT_DOUBLE_EQ(rep.buckets[0].obj_mean, 105.0);
  EXPECT_NEAR(*rep.buckets[0].gap_mean, 15.0 / 90.0, 1e-15);
  EXPECT_EQ(rep.buckets[1].instances, 1u);
  EXPECT_FALSE(rep.buckets[1].gap_mean);
  EXPECT_EQ(rep.buckets[2].instances, 0u);
}

TEST(Ranks, TiesShareTheMeanRank) {
  EXPECT_EQ(average_ranks({3, 1, 2}), (std::vector<double>{3, 1, 2}));
  EXPECT_EQ(average_ranks({5, 5}), (std::vector<double>{1.5, 1.5}));
  EXPECT_EQ(average_ranks({2, 1, 2, 2}), (std::vector<double>{3, 1, 3, 3}));
}

TEST(Compare, DominatingMethod) {
  const auto c = compare({hand_set("A", {1, 2, 3, 4}), hand_set("B", {2, 3, 4, 5})});
  EXPECT_DOUBLE_EQ(c.average_rank[0], 1.0);
  EXPECT_DOUBLE_EQ(c.average_rank[1], 2.0);
  EXPECT_EQ(c.bc[0], 4);
  EXPECT_EQ(c.bc[1], 0);
}

TEST(Compare, ExactTieGivesOnePointFive) {
  const auto c = compare({hand_set("A", {1, 2, 3, 4}), hand_set("B", {1, 3, 4, 5})});
  EXPECT_DOUBLE_EQ(c.rank[0][0], 1.5);
  EXPECT_DOUBLE_EQ(c.rank[0][1], 1.5);
  EXPECT_EQ(c.bc[1], 1);
}

TEST(Compare, HandRankedFixture) {
  // Ranks worked out by hand:
  //   a: A 1, B 2, C 3      b: C 1, A/B 2.5
  //   c: B 1, A 2, C 3      d: A/C 1.5, B 3
  const auto c = compare({hand_set("A", {10, 20, 30, 40}), hand_set("B", {11, 20, 29, 41}),
                          hand_set("C", {12, 19, 31, 40})});
  EXPECT_DOUBLE_EQ(c.average_rank[0], 1.75);
  EXPECT_DOUBLE_EQ(c.average_rank[1], 2.125);
  EXPECT_DOUBLE_EQ(c.average_rank[2], 2.125);
  EXPECT_EQ(c.bc, (std::vector<int>{2, 1, 2}));
}

TEST(Compare, InstanceMismatchIsAnError) {
  auto b = hand_set("B", {1, 2, 3, 4});
  b.per_instance.pop_back();
  EXPECT_THROW(compare({hand_set("A", {1, 2, 3, 4}), b}), std::invalid_argument);
  EXPECT_THROW(compare({hand_set("A", {1, 2, 3, 4})}), std::invalid_argument);
}

TEST(Reports, SavedOutputsReproduceByteIdentically) {
  std::vector<BenchmarkReport> sets{hand_set("A", {10, 20, 30, 40}), hand_set("B", {11, 20, 29, 41})};
  sets[0].per_instance[0].trace = {{1, 0.5, 12.0}, {2, 1.25, 10.0}};
  apply_comparison(sets, compare(sets));
  std::vector<BenchmarkReport> loaded;
  for (const auto& s : sets) loaded.push_back(report_from_json(json::parse(to_json(s).dump())));
  for (std::size_t k = 0; k < sets.size(); ++k) {
    EXPECT_EQ(to_json(loaded[k]).dump(), to_json(sets[k]).dump());
    EXPECT_EQ(report_csv(loaded[k]), report_csv(sets[k]));
  }
  EXPECT_EQ(comparison_csv(compare(loaded)), comparison_csv(compare(sets)));
}

TEST(Reports, CsvHasTheTableColumns) {
  auto r = hand_set("A", {10, 20, 30, 40});
  r.bc = 2;
  r.average_rank = 1.5;
  const auto csv = report_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,bucket,instances,Obj,Gap");
  EXPECT_NE(csv.find("A,BC,,2,"), std::string::npos);
  EXPECT_NE(csv.find("A,Rank,,1.50,"), std::string::npos);
}

TEST(Budget, FactorTimesSize) {
  EXPECT_DOUBLE_EQ(time_budget_for(500, 2.4), 1200.0);
  EXPECT_DOUBLE_EQ(time_budget_for(100, 2.4), 240.0);
  EXPECT_DOUBLE_EQ(time_budget_for(500, 2.4, 10.0), 10.0);
  EXPECT_DOUBLE_EQ(BenchOptions{}.budget_factor, 2.4);
}

TEST(Bench, TwoInstancesThreeRunsGiveSixRows) {
  const std::vector<Instance> insts{oracle::random_instance(1, 15).with_bks(1.0), oracle::random_instance(2, 12)};
  BenchOptions opt;
  opt.runs = 3;
  opt.cycles = 1;
  opt.seed = 5;
  const auto rep = bench(default_assembly(), insts, opt, "default");
  ASSERT_EQ(rep.per_instance.size(), 6u);
  std::set<std::uint64_t> seeds;
  for (std::size_t k = 0; k < 6; ++k) {
    const auto& m = rep.per_instance[k];
    EXPECT_EQ(m.instance_name, insts[k / 3].name());
    EXPECT_EQ(m.run, int(k % 3));
    EXPECT_EQ(m.gap.has_value(), m.bks.has_value());
    for (std::size_t i = 1; i < m.trace.size(); ++i) EXPECT_LE(m.trace[i].best_cost, m.trace[i - 1].best_cost);
    seeds.insert(m.seed);
  }
  EXPECT_EQ(seeds.size(), 6u);
  EXPECT_EQ(missing_bks(insts), (std::vector<std::string>{insts[1].name()}));

  opt.workers = 3;
  const auto again = bench(default_assembly(), insts, opt, "default");
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(again.per_instance[k].objective, rep.per_instance[k].objective);
}

TEST(Bench, SolveRevalidatesAndScoresAgainstBks) {
  const auto inst = oracle::random_instance(4, 8);
  const double opt = oracle::exact_cvrp(inst);
  RunBudget b;
  b.cycles = 2;
  const auto [sol, m] = solve_instance(default_assembly(), inst.with_bks(opt), b, 3);
  EXPECT_TRUE(evaluate_solution(inst, sol).feasible);
  EXPECT_GE(m.objective, opt - 1e-9);
  ASSERT_TRUE(m.gap);
  EXPECT_GE(*m.gap, -1e-12);
}

TEST(Synthetic, SeededAndVersioned) {
  const SyntheticSpec spec{4, 500, Layout::clustered, DemandLaw::small, 10.0, 7};
  const auto a = generate_instances(spec);
  const auto b = generate_instances(spec);
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a, b);
  for (const auto& i : a) {
    EXPECT_EQ(i.size(), 500);
    EXPECT_EQ(i.name().rfind("syn1-clustered-n500-s7-", 0), 0u);
    EXPECT_NE(serialize_instance(i), "");
  }
  EXPECT_NE(serialize_instance(a[0]), serialize_instance(a[1]));
  auto other = spec;
  other.seed = 8;
  EXPECT_NE(generate_instances(other)[0].customers(), a[0].customers());
}

TEST(Synthetic, DemandLawsAndCapacity) {
  for (auto law : {DemandLaw::unit, DemandLaw::small, DemandLaw::large, DemandLaw::heavy})
    for (auto layout : {Layout::uniform, Layout::clustered, Layout::mixed}) {
      const auto inst = generate_instances({1, 120, layout, law, 8.0, 3})[0];
      double largest = 0;
      for (const auto& c : inst.customers()) {
        largest = std::max(largest, c.demand);
        EXPECT_GE(c.pos.x, 0.0);
        EXPECT_LE(c.pos.x, 1000.0);
        EXPECT_GE(c.pos.y, 0.0);
        EXPECT_LE(c.pos.y, 1000.0);
      }
      EXPECT_GE(inst.capacity(), largest);
      EXPECT_NEAR(inst.capacity(), std::max(largest, std::ceil(8.0 * inst.total_demand() / 120)), 0.0);
      if (law == DemandLaw::unit) EXPECT_EQ(largest, 1.0);
    }
  EXPECT_THROW(generate_instances({0, 10}), std::invalid_argument);
}

TEST(Config, DefaultsMatchTheProtocol) {
  const auto s = config_snapshot(AppConfig{});
  EXPECT_EQ(s["k"], 9);
  EXPECT_EQ(s["cp"], 1.0);
  EXPECT_EQ(s["epsilon"], 0.5);
  EXPECT_EQ(s["search"]["eval_budget"], 1000);
  EXPECT_EQ(s["budget_factor"], 2.4);
  EXPECT_EQ(s["runs"], 10);
  EXPECT_EQ(s["backend"], "mock");
  EXPECT_TRUE(validate_config(AppConfig{}).empty());
}

TEST(Config, ParsesEveryKind) {
  const auto c = parse_config(R"(# comment
seed = 42
lambda = 0.25   # inline
train_files = ["a.vrp", "b #1.vrp"]
ablation = "no-smd"

[search]
eval_budget = 1_000
pruning = false

[synthetic]
count = 4
n = 500
layout = "clustered"
seed = 7

[llm]
model = "m"
)",
                              "x.toml");
  EXPECT_EQ(c.search.seed, 42u);
  EXPECT_EQ(c.search.wsmd.lambda, 0.25);
  EXPECT_EQ(c.train_files, (std::vector<std::string>{"a.vrp", "b #1.vrp"}));
  EXPECT_EQ(c.ablation, Ablation::no_smd);
  EXPECT_EQ(c.search.eval_budget, 1000);
  EXPECT_FALSE(c.search.pruning);
  ASSERT_TRUE(c.synthetic);
  EXPECT_EQ(*c.synthetic, (SyntheticSpec{4, 500, Layout::clustered, DemandLaw::small, 10.0, 7}));
  EXPECT_EQ(c.llm.model_name, "m");
}

TEST(Config, ErrorsCarryFileAndLine) {
  auto msg = [](std::string_view text) {
    try {
      parse_config(text, "cfg.toml");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_EQ(msg("k = 9\nbogus = 1\n").rfind("cfg.toml:2:", 0), 0u);
  EXPECT_NE(msg("k = 9\nbogus = 1\n").find("unknown key"), std::string::npos);
  EXPECT_EQ(msg("\n\nk = \"nine\"\n").rfind("cfg.toml:3:", 0), 0u);
  EXPECT_EQ(msg("k = 2.5\n").rfind("cfg.toml:1:", 0), 0u);
  EXPECT_EQ(msg("[search\n").rfind("cfg.toml:1:", 0), 0u);
  EXPECT_EQ(msg("k\n").rfind("cfg.toml:1:", 0), 0u);
  EXPECT_EQ(msg("k = 1\nk = 2\n").rfind("cfg.toml:2:", 0), 0u);
  EXPECT_EQ(msg("ablation = \"nope\"\n").rfind("cfg.toml:1:", 0), 0u);
  EXPECT_EQ(msg("[synthetic]\nlayout = \"ring\"\n").rfind("cfg.toml:2:", 0), 0u);
}

TEST(Config, DeskProfileIsValidAndSmall) {
  const auto d = desk_profile();
  EXPECT_TRUE(validate_config(d).empty());
  EXPECT_EQ(d.search.eval_budget, 100);
  EXPECT_EQ(d.synthetic->n, 100);
  EXPECT_LT(d.search.per_eval_iteration_scale, 1.0);
}

TEST(Ablation, ModesChangeTheSearchConfig) {
  EXPECT_EQ(kAblationModes.size(), 6u);
  for (auto a : kAblationModes) EXPECT_EQ(ablation_from(to_string(a)), a);
  EXPECT_FALSE(ablation_from("w/o-everything"));

  SearchConfig c;
  apply_ablation(c, Ablation::fixed_decomp);
  ASSERT_TRUE(c.pinned[1]);
  EXPECT_EQ(std::get<DecompositionDescriptor>(c.pinned[1]->descriptor).params.strategy_id,
            DecompositionParams{}.strategy_id);
  EXPECT_FALSE(c.pinned[0] || c.pinned[2]);

  c = {};
  apply_ablation(c, Ablation::fixed_param);
  ASSERT_TRUE(c.pinned[2]);
  EXPECT_EQ(std::get<SubSolverDescriptor>(c.pinned[2]->descriptor).config, SubSolverDescriptor{}.config);
  EXPECT_TRUE(c.clear_tier1_overrides);

  c = {};
  apply_ablation(c, Ablation::no_pruning);
  EXPECT_FALSE(c.pruning);
  c = {};
  apply_ablation(c, Ablation::no_regrowth);
  EXPECT_TRUE(c.pruning);
  EXPECT_FALSE(c.regrowth);
  c = {};
  apply_ablation(c, Ablation::no_wmd);
  EXPECT_EQ(c.wsmd.lambda, 1.0);
  apply_ablation(c, Ablation::no_smd);
  EXPECT_EQ(c.wsmd.lambda, 0.0);
}

TEST(Svg, PlotsTheTrace) {
  const auto svg = convergence_svg({{0, 0.0, 120.0}, {5, 1.5, 100.0}, {9, 3.0, 95.0}}, "x-n101");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_NE(svg.find("x-n101"), std::string::npos);
  EXPECT_NE(convergence_svg({}, "empty").find("</svg>"), std::string::npos);
}

TEST(Reference, UsesBksWhenPresentAndRunsOtherwise) {
  const auto inst = oracle::random_instance(6, 8);
  ReferenceOptions opt;
  opt.iterations = 300;
  opt.max_no_improve = 200;
  const auto refs = with_references({inst.with_bks(123.0), inst}, opt, 2);
  EXPECT_EQ(refs[0].reference, 123.0);
  EXPECT_NEAR(refs[1].reference, oracle::exact_cvrp(inst), 1e-9);
}
