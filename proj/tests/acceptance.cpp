// Acceptance checks. `acceptance N` runs criterion N, no argument runs all;
// each prints one PASS/FAIL line.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>

#include "oracles.hpp"
#include "vrptune/harness.hpp"

using namespace vrptune;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

RewardRecord hashed_reward(const SolverAssembly& a) {
  RewardRecord r;
  r.assembly = a;
  r.mean_gap = double(hash_string(a.canonical_text) % 1000) / 1000.0;
  r.reward = reward_of(r.mean_gap);
  r.per_instance_gaps = {r.mean_gap};
  return r;
}

const AnalyzerReport& small_report() {
  static const AnalyzerReport r = analyze({oracle::random_instance(3, 30)});
  return r;
}

SearchConfig mock_search(std::uint64_t seed, long budget) {
  SearchConfig c;
  c.k = 4;
  c.eval_budget = budget;
  c.seed = seed;
  return c;
}

/// Texts from every tier of the mock, for distance checks.
std::vector<std::string> mock_texts(int per_tier) {
  MockGenerator gen;
  std::vector<std::string> out;
  for (int tier = 1; tier <= 3; ++tier)
    for (const auto& c : gen.generate(make_context(tier, {}, small_report()), per_tier, 11)) out.push_back(c.text());
  return out;
}

// --------------------------------------------------------------------------

Outcome exactness() {
  int matches = 0;
  const int total = 30;
  for (int i = 0; i < total; ++i) {
    const int n = 5 + i % 3;
    const auto inst = oracle::random_instance(9100 + static_cast<std::uint64_t>(i), n, 10.0, 5);
    HgsConfig c;
    c.granularity = n - 1;
    c.budget.max_iterations = 2000;
    c.budget.max_no_improve = 1000;
    c.seed = static_cast<std::uint64_t>(i) + 1;
    const auto r = run_hgs(inst, c);
    matches += r.best.feasible && std::fabs(r.best.cost - oracle::exact_cvrp(inst)) < 1e-9;
  }
  return {matches * 100 >= 95 * total, fmt("%d/%d runs reach the brute-force optimum", matches, total)};
}

Outcome split_optimality() {
  Rng rng(2024);
  int exact = 0, total = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 10;
    const auto inst = oracle::random_instance(5000 + static_cast<std::uint64_t>(trial), n, 12.0, 6);
    std::vector<int> tour(static_cast<std::size_t>(n));
    std::iota(tour.begin(), tour.end(), 1);
    shuffle(tour, rng);
    const double penalty = std::array{0.5, 10.0, 1e4}[static_cast<std::size_t>(trial % 3)];
    const auto s = split(tour, inst, penalty);
    exact += penalized_cost(inst, s.routes, penalty) == oracle::exhaustive_split(inst, tour, penalty);
    ++total;
  }
  return {exact == total, fmt("%d/%d tours match exhaustive segmentation exactly", exact, total)};
}

Outcome uct_and_backprop() {
  const double s1 = uct_score(0.5, 10, 3, 1.0), s2 = uct_score(0.4, 10, 1, 1.0);
  MockGenerator mock;
  const auto cs = mock.generate(make_context(1, {}, small_report()), 2, 9);
  Tree t;
  t[0].visits = 10;
  const auto a = t.add_child(0, cs[0].component, "mock");
  const auto b = t.add_child(0, cs[1].component, "mock");
  t[a].q_bar = 0.5;
  t[a].visits = 3;
  t[b].q_bar = 0.4;
  t[b].visits = 1;
  const bool picks_second = select(t, 1.0).path == std::vector<std::size_t>{0, b};
  const bool hand = std::fabs(s1 - 1.7390) <= 1e-4 && std::fabs(s2 - 2.5460) <= 1e-4 && picks_second;

  Rng rng(77);
  double worst = 0.0;
  for (int seq = 0; seq < 10000; ++seq) {
    Tree bt;
    const auto c = bt.add_child(0, cs[0].component, "mock");
    const int len = 1 + static_cast<int>(uniform_index(rng, 50));
    double sum = 0.0;
    for (int i = 0; i < len; ++i) {
      const double r = uniform_real(rng);
      sum += r;
      backpropagate(bt, {0, c}, r);
    }
    worst = std::max(worst, std::fabs(bt[c].q_bar - sum / len));
  }
  return {hand && worst <= 1e-12,
          fmt("scores %.4f / %.4f, second child %s; worst running-mean error %.2e over 10^4 sequences", s1, s2,
              picks_second ? "selected" : "not selected", worst)};
}

Outcome wsmd_properties() {
  WsmdConfig cfg;
  std::vector<TokenizedCandidate> cs;
  for (const auto& t : mock_texts(3)) cs.push_back(tokenize_and_embed(t));
  double self = 0.0, asym = 0.0, limit = 0.0;
  for (std::size_t i = 0; i < cs.size(); ++i)
    for (std::size_t j = 0; j < cs.size(); ++j) {
      if (j < i) continue;
      const auto ab = fused_distance(cs[i], cs[j], 1.3, cfg);
      if (i == j) {
        // the fused distance short-circuits identical inputs; check the transport terms as well
        self = std::max({self, ab.distance, wmd(cs[i], cs[i], cfg), smd(cs[i], cs[i], cfg)});
        continue;
      }
      const auto ba = fused_distance(cs[j], cs[i], 1.3, cfg);
      asym = std::max(asym, std::fabs(ab.distance - ba.distance));
      if (i + 1 == j) {
        WsmdConfig w0 = cfg, w1 = cfg;
        w0.lambda = 0.0;
        w1.lambda = 1.0;
        const auto r0 = fused_distance(cs[i], cs[j], 1.3, w0);
        const auto r1 = fused_distance(cs[i], cs[j], 1.3, w1);
        limit = std::max({limit, std::fabs(r0.distance - r0.d_wmd), std::fabs(r1.distance - 1.3 * r1.d_smd)});
      }
    }

  Rng rng(17);
  double oracle_err = 0.0;
  const Eigen::MatrixXd half = Eigen::MatrixXd::Constant(2, 2, 0.5);
  auto unit_rows = [&](int n) {
    Eigen::MatrixXd e(n, 64);
    for (int r = 0; r < n; ++r) {
      for (int k = 0; k < 64; ++k) e(r, k) = uniform_real(rng, -1.0, 1.0);
      e.row(r).normalize();
    }
    return e;
  };
  for (int trial = 0; trial < 200; ++trial) {
    const auto ea = unit_rows(2), eb = unit_rows(2);
    auto c = [&](int i, int j) { return (ea.row(i) - eb.row(j)).norm(); };
    const double exact = std::min(0.5 * (c(0, 0) + c(1, 1)), 0.5 * (c(0, 1) + c(1, 0)));
    const double got = wmd(TokenizedCandidate{{"a", "b"}, ea, half}, TokenizedCandidate{{"c", "d"}, eb, half}, cfg);
    oracle_err = std::max(oracle_err, std::fabs(got - exact));
  }

  double marginal = 0.0;
  for (std::size_t i = 0; i + 1 < cs.size(); ++i) {
    const auto ba = detail::token_bag(cs[i]), bb = detail::token_bag(cs[i + 1]);
    const auto cost = detail::pairwise_euclidean(ba.rows, bb.rows);
    const auto s = sinkhorn(cost, ba.weight, bb.weight, cfg.ot_regularization, cfg.ot_max_iterations,
                            cfg.convergence_tolerance, nullptr, true);
    marginal = std::max({marginal, (s.plan.rowwise().sum() - ba.weight).cwiseAbs().maxCoeff(),
                         (s.plan.colwise().sum().transpose() - bb.weight).cwiseAbs().maxCoeff()});
  }
  const bool ok = self <= 1e-6 && asym <= 1e-9 && limit == 0.0 && oracle_err <= 1e-3 && marginal <= 1e-6;
  return {ok, fmt("self %.1e, asymmetry %.1e, lambda limits %.1e, 2-token oracle %.1e, marginals %.1e", self, asym,
                  limit, oracle_err, marginal)};
}

Solution angular_elite(const Instance& inst) {
  std::vector<int> order(static_cast<std::size_t>(inst.size()));
  std::iota(order.begin(), order.end(), 1);
  const Point d = inst.depot();
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const Point pa = inst.coord(a), pb = inst.coord(b);
    return std::atan2(pa.y - d.y, pa.x - d.x) < std::atan2(pb.y - d.y, pb.x - d.x);
  });
  std::vector<Route> routes{{}};
  double load = 0.0;
  for (int c : order) {
    if (load + inst.demand(c) > inst.capacity()) {
      routes.emplace_back();
      load = 0.0;
    }
    routes.back().push_back(c);
    load += inst.demand(c);
  }
  return make_solution(inst, routes);
}

Outcome partition_legitimacy() {
  long checks = 0, violations = 0;
  for (int i = 0; i < 1000; ++i) {
    Rng rng(derive_seed(31, static_cast<std::uint64_t>(i)));
    const int n = uniform_int(rng, 20, 200);
    const SyntheticSpec spec{1, n, i % 2 ? Layout::clustered : Layout::uniform, DemandLaw::small, 8.0,
                             static_cast<std::uint64_t>(i)};
    const auto inst = generate_instances(spec)[0];
    const auto elite = angular_elite(inst);
    for (const auto& s : strategy_catalog()) {
      DecompositionParams p;
      p.strategy_id = std::string(s.id);
      p.seed = static_cast<std::uint64_t>(i);
      if (i % 3 == 0) {
        p.target_size.reset();
        p.cluster_count = uniform_int(rng, 1, 8);
      } else {
        p.target_size = uniform_int(rng, 10, 100);
      }
      violations += !validate_partition(inst, decompose(inst, elite, p)).ok;
      ++checks;
    }
  }
  return {violations == 0 && strategy_catalog().size() == 11,
          fmt("%ld violations in %ld decompositions (11 strategies x 1000 instances)", violations, checks)};
}

/// Evaluations spent until `target` distinct nodes have been scored; -1 when
/// the budget runs out first.
long evaluations_to_reach(SearchConfig cfg, std::size_t target, Generator& gen, SearchLog& log) {
  Search s(cfg, gen, small_report(), hashed_reward, log);
  while (!s.done()) {
    s.step();
    if (distinct_evaluated_nodes(s.tree()) >= target) return s.stats().evaluations;
  }
  return -1;
}

/// Sibling pairs of the final tree, measured with the kappa of the last
/// expansion of their parent.
std::vector<double> sibling_distances(Search& s, const SearchLog& log) {
  std::map<std::size_t, double> kappa;
  for (const auto& l : log.lines()) {
    const auto e = json::parse(l);
    if (e["event"] == "expand" && e.contains("kappa")) kappa[e["node"].get<std::size_t>()] = e["kappa"].get<double>();
  }
  std::vector<double> out;
  for (const auto& [node, k] : kappa) {
    const auto live = s.tree().live_children(node);
    for (std::size_t i = 0; i < live.size(); ++i)
      for (std::size_t j = i + 1; j < live.size(); ++j)
        out.push_back(s.distance(s.tree()[live[i]].component->canonical_text(),
                                 s.tree()[live[j]].component->canonical_text(), k)
                          .distance);
  }
  return out;
}

Outcome pruning_efficiency() {
  MockOptions mo;
  mo.duplicate_rate = 0.5;
  const std::size_t target = 12;
  long full_total = 0, plain_total = 0, worse = 0, unreached = 0, pairs = 0, unsound = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    MockGenerator g1(mo), g2(mo);
    SearchLog l1, l2;
    auto cfg = mock_search(seed, 40);
    const long full = evaluations_to_reach(cfg, target, g1, l1);
    cfg.pruning = false;
    const long plain = evaluations_to_reach(cfg, target, g2, l2);
    unreached += full < 0 || plain < 0;
    full_total += full;
    plain_total += plain;
    worse += full > plain;

    // soundness audit on a complete full-mode run
    MockGenerator g3(mo);
    SearchLog l3;
    Search s(mock_search(seed, 40), g3, small_report(), hashed_reward, l3);
    s.run();
    for (double d : sibling_distances(s, l3)) {
      ++pairs;
      unsound += d <= s.config().epsilon;
    }
  }
  return {unreached == 0 && full_total < plain_total && worse == 0 && unsound == 0,
          fmt("tree size %zu after %ld evaluations with pruning vs %ld without (20 seeds, worse in %ld); "
              "%ld/%ld retained sibling pairs within epsilon",
              target, full_total, plain_total, worse, unsound, pairs)};
}

Outcome regrowth_diversity() {
  MockOptions mo;
  mo.duplicate_rate = 0.5;
  double with_sum = 0.0, without_sum = 0.0;
  int higher = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    double mean[2];
    for (bool regrowth : {true, false}) {
      MockGenerator g(mo);
      SearchLog log;
      auto cfg = mock_search(seed, 30);
      cfg.regrowth = regrowth;
      Search s(cfg, g, small_report(), hashed_reward, log);
      s.run();
      const auto d = sibling_distances(s, log);
      mean[regrowth ? 0 : 1] = d.empty() ? 0.0 : std::accumulate(d.begin(), d.end(), 0.0) / double(d.size());
    }
    with_sum += mean[0];
    without_sum += mean[1];
    higher += mean[0] > mean[1];
  }
  return {with_sum > without_sum, fmt("mean sibling distance %.4f with regrowth vs %.4f without (higher in %d/20 seeds)",
                                      with_sum / 20, without_sum / 20, higher)};
}

Outcome decomposition_benefit() {
  const auto insts = generate_instances({10, 300, Layout::clustered, DemandLaw::small, 10.0, 8});
  const auto barycenter = default_assembly();
  DecompositionDescriptor whole;
  whole.params.target_size.reset();
  whole.params.cluster_count = 1;
  const auto single = assemble(barycenter.tier1, whole, barycenter.tier3);
  int wins = 0;
  RunBudget b;
  b.seconds = 30.0;
  std::string costs;
  for (std::size_t i = 0; i < insts.size(); ++i) {
    const auto seed = static_cast<std::uint64_t>(i) + 1;
    const double d = solve_instance(barycenter, insts[i], b, seed).second.objective;
    const double s = solve_instance(single, insts[i], b, seed).second.objective;
    wins += d <= s;
    costs += fmt(" %.0f/%.0f", d, s);
  }
  return {wins >= 7, fmt("barycenter <= single subproblem on %d/10 paired seeds (costs%s)", wins, costs.c_str())};
}

Outcome search_benefit() {
  AppConfig app = desk_profile();
  app.synthetic->count = 1;
  const auto train = with_references(training_instances(app), app.reference);
  const auto report = analyze({train.front().instance});
  int not_worse = 0;
  double found_sum = 0.0, default_sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto cfg = app.search;
    cfg.seed = seed;
    const auto evaluator = make_evaluator(train, cfg);
    const auto def = evaluator(default_assembly());
    MockGenerator gen;
    SearchLog log;
    const auto r = develop(cfg, gen, report, evaluator, log);
    not_worse += r.record.mean_gap <= def.mean_gap;
    found_sum += r.record.mean_gap;
    default_sum += def.mean_gap;
  }
  return {not_worse >= 18, fmt("found assembly gap <= default in %d/20 seeds (mean %.3f%% vs %.3f%%)", not_worse,
                               100 * found_sum / 20, 100 * default_sum / 20)};
}

Outcome determinism() {
  AppConfig app = desk_profile();
  app.synthetic->count = 1;
  app.search.eval_budget = 20;
  app.search.seed = 5;
  std::string logs[2], checkpoints[2], best[2];
  for (int i = 0; i < 2; ++i) {
    std::ostringstream os;
    SearchLog log(&os);
    auto gen = make_generator(app);
    const auto run = run_develop(app, *gen, log);
    logs[i] = os.str();
    checkpoints[i] = run.result.checkpoint.dump(2);
    best[i] = assembly_to_json(run.result.best).dump(2);
  }
  const bool ok = !logs[0].empty() && logs[0] == logs[1] && checkpoints[0] == checkpoints[1] && best[0] == best[1];
  return {ok, fmt("logs %s (%zu bytes), checkpoints %s, best assemblies %s", logs[0] == logs[1] ? "identical" : "differ",
                  logs[0].size(), checkpoints[0] == checkpoints[1] ? "identical" : "differ",
                  best[0] == best[1] ? "identical" : "differ")};
}

Outcome protocol_defaults() {
  const auto s = config_snapshot(parse_config("", "empty.toml"));
  const bool ok = s["k"] == 9 && s["cp"] == 1.0 && s["epsilon"] == 0.5 && s["search"]["eval_budget"] == 1000 &&
                  s["budget_factor"] == 2.4 && time_budget_for(500, s["budget_factor"].get<double>()) == 1200.0;
  return {ok, fmt("K=%d Cp=%.1f eps=%.1f eval_budget=%ld budget factor %.1f", s["k"].get<int>(), s["cp"].get<double>(),
                  s["epsilon"].get<double>(), s["search"]["eval_budget"].get<long>(),
                  s["budget_factor"].get<double>())};
}

struct AblationRun {
  SearchLog log;
  std::vector<json> events(const std::string& kind) const {
    std::vector<json> out;
    for (const auto& l : log.lines())
      if (auto e = json::parse(l); e["event"] == kind) out.push_back(std::move(e));
    return out;
  }
};

std::unique_ptr<AblationRun> run_mode(Ablation mode, std::uint64_t seed) {
  auto r = std::make_unique<AblationRun>();
  MockOptions mo;
  mo.duplicate_rate = 0.5;
  MockGenerator gen(mo);
  auto cfg = mock_search(seed, 25);
  apply_ablation(cfg, mode);
  develop(cfg, gen, small_report(), hashed_reward, r->log);
  return r;
}

Outcome ablation_wiring() {
  const auto def = default_assembly();
  std::vector<std::string> failures;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto full = run_mode(Ablation::full, seed);
    std::set<std::string> full_t2;
    for (const auto& e : full->events("evaluate")) full_t2.insert(assembly_from_json(e["assembly"]).tier2.params.strategy_id);
    check(full_t2.size() > 1, "full run explores tier 2");
    check(!full->events("prune").empty() && !full->events("regrow").empty(), "full run prunes and regrows");

    const auto fd = run_mode(Ablation::fixed_decomp, seed);
    for (const auto& e : fd->events("evaluate")) check(assembly_from_json(e["assembly"]).tier2 == def.tier2, "fixed-decomp tier 2");
    for (const auto& e : fd->events("expand"))
      if (e["tier"] == 2)
        for (const auto& c : e["children"]) check(c["source"] == "pinned", "fixed-decomp pinned children");

    const auto fp = run_mode(Ablation::fixed_param, seed);
    std::set<std::string> fp_t2;
    for (const auto& e : fp->events("evaluate")) {
      const auto a = assembly_from_json(e["assembly"]);
      check(a.tier3 == def.tier3, "fixed-param tier 3");
      check(a.tier1.global_hgs_overrides.empty(), "fixed-param tier-1 overrides");
      fp_t2.insert(a.tier2.params.strategy_id);
    }
    check(fp_t2.size() > 1, "fixed-param explores tier 2");

    const auto np = run_mode(Ablation::no_pruning, seed);
    check(np->events("prune").empty() && np->events("regrow").empty(), "no-pruning events");
    for (const auto& e : np->events("expand"))
      for (const auto& c : e["children"]) check(!c.value("pruned", false), "no-pruning children");

    const auto nr = run_mode(Ablation::no_regrowth, seed);
    check(!nr->events("prune").empty(), "no-regrowth still prunes");
    check(nr->events("regrow").empty(), "no-regrowth regrow events");

    const auto nw = run_mode(Ablation::no_wmd, seed);
    const auto ns = run_mode(Ablation::no_smd, seed);
    check(!nw->events("prune").empty() && !ns->events("prune").empty(), "distance variants prune");
    for (const auto& e : nw->events("prune"))
      check(e["distance"].get<double>() == e["kappa"].get<double>() * e["d_smd"].get<double>(), "no-wmd distance");
    for (const auto& e : ns->events("prune"))
      check(e["distance"].get<double>() == e["d_wmd"].get<double>(), "no-smd distance");
    check(nw->log.lines() != full->log.lines() && ns->log.lines() != full->log.lines(), "distance variants change the run");
  }

  // w/o pruning consumes at least as many evaluations per unit of tree growth
  MockOptions mo;
  mo.duplicate_rate = 0.5;
  long full_evals = 0, plain_evals = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    MockGenerator g1(mo), g2(mo);
    SearchLog l1, l2;
    auto cfg = mock_search(seed, 40);
    full_evals += evaluations_to_reach(cfg, 12, g1, l1);
    apply_ablation(cfg, Ablation::no_pruning);
    plain_evals += evaluations_to_reach(cfg, 12, g2, l2);
  }
  check(plain_evals >= full_evals, "no-pruning evaluations per growth");
  std::set<std::string> unique(failures.begin(), failures.end());
  std::string msg = fmt("6 modes x 3 seeds; evaluations to tree size 12: %ld full, %ld w/o pruning", full_evals, plain_evals);
  for (const auto& f : unique) msg += "; failed: " + f;
  return {failures.empty(), msg};
}

struct Criterion {
  int id;
  const char* name;
  double limit_seconds;
  std::function<Outcome()> run;
};

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "exactness on small instances", 60, exactness},
      {2, "split optimality", 10, split_optimality},
      {3, "UCT and backpropagation", 5, uct_and_backprop},
      {4, "distance properties", 30, wsmd_properties},
      {5, "partition legitimacy", 60, partition_legitimacy},
      {6, "pruning efficiency", 600, pruning_efficiency},
      {7, "regrowth diversity", 600, regrowth_diversity},
      {8, "decomposition benefit", 900, decomposition_benefit},
      {9, "desk-scale search benefit", 1800, search_benefit},
      {10, "determinism", 0, determinism},
      {11, "protocol defaults", 0, protocol_defaults},
      {12, "ablation wiring", 600, ablation_wiring},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  bool all_pass = true;
  for (const auto& c : criteria()) {
    if (!wanted.empty() && !wanted.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = c.limit_seconds <= 0 || secs < c.limit_seconds;
    if (!in_time) o.detail += fmt("; over the %.0f s limit", c.limit_seconds);
    const bool pass = o.pass && in_time;
    all_pass = all_pass && pass;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  }
  return all_pass ? 0 : 1;
}
