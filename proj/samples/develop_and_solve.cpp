// Small end-to-end run: search an assembly with the mock generator on two
// synthetic instances, then compare it with the default assembly on a
// held-out instance.
#include <iostream>

#include "vrptune/harness.hpp"

using namespace vrptune;

int main(int argc, char** argv) {
  AppConfig cfg = desk_profile();
  cfg.search.eval_budget = argc > 1 ? std::stol(argv[1]) : 20;

  MockGenerator gen;
  SearchLog log;
  const auto run = run_develop(cfg, gen, log);
  std::cout << "evaluations " << run.result.stats.evaluations << ", expansions " << run.result.stats.expansions
            << ", pruned " << run.result.stats.pruned << "\n";
  std::cout << "best training gap " << format_percent(run.result.record.mean_gap) << "\n";
  std::cout << run.result.best.canonical_text << "\n";

  const auto held_out = generate_instances({1, 150, Layout::clustered, DemandLaw::small, 10.0, 99})[0];
  RunBudget budget;
  budget.cycles = 1;
  budget.iteration_scale = 0.2;
  for (const auto& [name, a] : {std::pair{"default", default_assembly()}, std::pair{"found", run.result.best}}) {
    const auto [sol, m] = solve_instance(a, held_out, budget, 1);
    std::cout << name << ": " << m.objective << " with " << sol.routes.size() << " routes in "
              << m.wall_seconds << " s\n";
  }
}
