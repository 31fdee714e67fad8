// vrptune command line: develop, solve, bench, compare, ablate, gen-instances.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "vrptune/harness.hpp"

namespace fs = std::filesystem;
using namespace vrptune;

namespace {

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> backend;
  std::optional<double> lambda, epsilon, cp, time_budget, budget_factor;
  std::optional<int> k;
  std::optional<std::string> output_dir;
};

void add_global_flags(CLI::App& app, GlobalFlags& g) {
  app.add_option("--config", g.config, "TOML configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--workers", g.workers, "concurrent runs or evaluations")->check(CLI::PositiveNumber);
  app.add_option("--backend", g.backend, "candidate generator")->check(CLI::IsMember({"mock", "llm"}));
  app.add_option("--lambda", g.lambda, "semantic/structural weight")->check(CLI::Range(0.0, 1.0));
  app.add_option("--epsilon", g.epsilon, "pruning threshold");
  app.add_option("--k", g.k, "candidates per expansion");
  app.add_option("--cp", g.cp, "UCT exploration constant");
  app.add_option("--time-budget", g.time_budget, "seconds per run, overrides the budget factor");
  app.add_option("--budget-factor", g.budget_factor, "seconds per customer");
  app.add_option("-o,--output-dir", g.output_dir, "where outputs go");
}

/// File first, then flags on top.
AppConfig load_config(const GlobalFlags& g) {
  AppConfig c;
  if (!g.config.empty()) c = parse_config(read_file(g.config), g.config);
  if (g.seed) c.search.seed = *g.seed;
  if (g.workers) c.workers = *g.workers;
  if (g.backend) c.backend = *g.backend;
  if (g.lambda) c.search.wsmd.lambda = *g.lambda;
  if (g.epsilon) c.search.epsilon = *g.epsilon;
  if (g.k) c.search.k = *g.k;
  if (g.cp) c.search.cp = *g.cp;
  if (g.time_budget) c.time_budget = *g.time_budget;
  if (g.budget_factor) c.budget_factor = *g.budget_factor;
  if (g.output_dir) c.output_dir = *g.output_dir;
  if (auto v = validate_config(c); !v.empty()) throw ConfigError("invalid configuration: " + v.front());
  return c;
}

std::vector<std::string> expand_paths(const std::vector<std::string>& in) {
  std::vector<std::string> out;
  for (const auto& p : in) {
    if (fs::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".vrp") found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

std::vector<Instance> load_instances(const std::vector<std::string>& paths, const std::string& bks_file) {
  std::map<std::string, double> bks;
  if (!bks_file.empty()) bks = parse_bks_table(read_file(bks_file));
  std::vector<Instance> out;
  for (const auto& p : expand_paths(paths)) {
    auto inst = load_instance(p);
    if (auto it = bks.find(inst.name()); it != bks.end()) inst = inst.with_bks(it->second);
    out.push_back(std::move(inst));
  }
  if (out.empty()) throw std::runtime_error("no instances found");
  return out;
}

SolverAssembly load_assembly(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw AssemblyError(path + ": " + e.what());
  }
  if (j.contains("assembly")) j = j.at("assembly");
  return assembly_from_json(j);
}

void write_json(const fs::path& p, const json& j) { write_file(p.string(), j.dump(2) + "\n"); }

int do_develop(const AppConfig& c, const std::string& resume, const std::string& label) {
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  std::optional<json> resume_from;
  if (!resume.empty()) resume_from = json::parse(read_file(resume));
  write_json(dir / "config.json", config_snapshot(c));
  std::ofstream log_file(dir / "search_log.jsonl", resume_from ? std::ios::app : std::ios::trunc);
  SearchLog log(&log_file);
  auto gen = make_generator(c);
  const auto run = run_develop(c, *gen, log, resume_from ? &*resume_from : nullptr);
  write_json(dir / "best_assembly.json", assembly_to_json(run.result.best));
  write_json(dir / "checkpoint.json", run.result.checkpoint);
  write_json(dir / "summary.json", develop_summary(run));
  const auto& st = run.result.stats;
  std::cout << label << ": " << st.evaluations << " evaluations, " << st.expansions << " expansions, " << st.pruned
            << " pruned, " << st.regrown << " regrown\n"
            << "best mean gap " << format_percent(run.result.record.mean_gap) << " (evaluation "
            << run.result.best_evaluation << ")\n"
            << "wrote " << (dir / "best_assembly.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical solver design for large-scale CVRP"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  add_global_flags(app, g);

  auto* develop_cmd = app.add_subcommand("develop", "search for a solver assembly on training instances");
  std::string resume;
  develop_cmd->add_option("--resume", resume, "tree checkpoint to continue from")->check(CLI::ExistingFile);

  auto* solve_cmd = app.add_subcommand("solve", "run an assembly on one instance");
  std::string assembly_path, instance_path;
  std::optional<double> bks_value;
  bool svg = false;
  solve_cmd->add_option("assembly", assembly_path, "assembly JSON")->required()->check(CLI::ExistingFile);
  solve_cmd->add_option("instance", instance_path, "instance file")->required()->check(CLI::ExistingFile);
  solve_cmd->add_option("--bks", bks_value, "reference cost for the gap");
  solve_cmd->add_flag("--svg", svg, "write a convergence plot");

  auto* bench_cmd = app.add_subcommand("bench", "benchmark an assembly over instances and runs");
  std::vector<std::string> bench_inputs;
  std::string bks_file, method = "assembly";
  std::optional<int> runs;
  long cycles = 0;
  bench_cmd->add_option("assembly", assembly_path, "assembly JSON")->required()->check(CLI::ExistingFile);
  bench_cmd->add_option("instances", bench_inputs, "instance files or directories")->required();
  bench_cmd->add_option("--bks-file", bks_file, "table of 'name cost' lines")->check(CLI::ExistingFile);
  bench_cmd->add_option("--runs", runs, "independent runs per instance")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--cycles", cycles, "cap runs by cycles instead of time");
  bench_cmd->add_option("--method", method, "name in reports");
  bench_cmd->add_flag("--svg", svg, "write one convergence plot per instance");

  auto* compare_cmd = app.add_subcommand("compare", "BC counts and average ranks of saved reports");
  std::vector<std::string> reports;
  compare_cmd->add_option("reports", reports, "report JSON files")->required()->expected(2, -1);

  auto* ablate_cmd = app.add_subcommand("ablate", "develop under an ablation mode");
  std::string mode;
  std::vector<std::string> mode_names;
  for (auto a : kAblationModes) mode_names.push_back(to_string(a));
  ablate_cmd->add_option("mode", mode, "ablation mode")->required()->check(CLI::IsMember(mode_names));

  auto* gen_cmd = app.add_subcommand("gen-instances", "write synthetic instances");
  SyntheticSpec spec;
  std::string layout = "uniform", demand = "small";
  bool spec_flags = false;
  gen_cmd->add_option("--count", spec.count)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--n", spec.n)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--layout", layout)->check(CLI::IsMember({"uniform", "clustered", "mixed"}));
  gen_cmd->add_option("--demand", demand)->check(CLI::IsMember({"unit", "small", "large", "heavy"}));
  gen_cmd->add_option("--route-size", spec.route_size);
  gen_cmd->add_flag("--from-flags", spec_flags, "ignore the config [synthetic] section");

  CLI11_PARSE(app, argc, argv);

  try {
    auto c = load_config(g);
    if (*develop_cmd) return do_develop(c, resume, "develop");

    if (*ablate_cmd) {
      c.ablation = *ablation_from(mode);
      c.output_dir = (fs::path(c.output_dir) / mode).string();
      return do_develop(c, "", "ablate " + mode);
    }

    if (*solve_cmd) {
      const auto a = load_assembly(assembly_path);
      auto inst = load_instance(instance_path);
      if (bks_value) inst = inst.with_bks(*bks_value);
      RunBudget b;
      b.seconds = time_budget_for(inst.size(), c.budget_factor, c.time_budget);
      b.threads = static_cast<int>(c.workers);
      std::cerr << "time budget " << b.seconds << " s\n";
      const auto [sol, m] = solve_instance(a, inst, b, c.search.seed);
      const fs::path dir = c.output_dir;
      fs::create_directories(dir);
      write_file((dir / (inst.name() + ".sol")).string(), format_solution(sol));
      write_json(dir / (inst.name() + ".metrics.json"), to_json(m));
      write_file((dir / (inst.name() + ".trace.csv")).string(), trace_csv(m.trace));
      if (svg) write_file((dir / (inst.name() + ".svg")).string(), convergence_svg(m.trace, inst.name()));
      std::cout << inst.name() << " cost " << detail::format_double(m.objective);
      if (m.gap) std::cout << " gap " << format_percent(*m.gap);
      std::cout << "\n";
      return 0;
    }

    if (*bench_cmd) {
      const auto a = load_assembly(assembly_path);
      const auto insts = load_instances(bench_inputs, bks_file.empty() ? c.bks_file : bks_file);
      for (const auto& name : missing_bks(insts)) std::cerr << "warning: no BKS for " << name << "; gap not reported\n";
      BenchOptions opt;
      opt.runs = runs.value_or(c.runs);
      opt.budget_factor = c.budget_factor;
      opt.time_budget = c.time_budget;
      opt.cycles = cycles;
      opt.seed = c.search.seed;
      opt.workers = c.workers;
      const auto rep = bench(a, insts, opt, method);
      const fs::path dir = c.output_dir;
      fs::create_directories(dir);
      write_json(dir / (method + ".report.json"), to_json(rep));
      write_file((dir / (method + ".report.csv")).string(), report_csv(rep));
      write_file((dir / (method + ".runs.csv")).string(), runs_csv(rep));
      if (svg)
        for (const auto& m : rep.per_instance)
          if (m.run == 0)
            write_file((dir / (m.instance_name + "." + method + ".svg")).string(),
                       convergence_svg(m.trace, m.instance_name + " " + method));
      std::cout << report_csv(rep);
      return 0;
    }

    if (*compare_cmd) {
      std::vector<BenchmarkReport> sets;
      for (const auto& r : reports) sets.push_back(report_from_json(json::parse(read_file(r))));
      const auto cmp = compare(sets);
      apply_comparison(sets, cmp);
      const fs::path dir = c.output_dir;
      fs::create_directories(dir);
      write_file((dir / "comparison.csv").string(), comparison_csv(cmp));
      for (const auto& s : sets) write_file((dir / (s.method + ".table.csv")).string(), report_csv(s));
      std::cout << comparison_csv(cmp);
      return 0;
    }

    if (*gen_cmd) {
      if (c.synthetic && !spec_flags) {
        spec = *c.synthetic;
      } else {
        spec.layout = *layout_from(layout);
        spec.demand = *demand_law_from(demand);
        spec.seed = c.search.seed;
      }
      const fs::path dir = c.output_dir;
      fs::create_directories(dir);
      for (const auto& inst : generate_instances(spec)) {
        const auto p = dir / (inst.name() + ".vrp");
        write_file(p.string(), serialize_instance(inst));
        std::cout << p.string() << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
