#ifndef VRPTUNE_HIERARCHY_HPP
#define VRPTUNE_HIERARCHY_HPP

// Three-tier solver descriptors, their canonical text, and the decomposed
// HGS main loop that executes an assembled solver.

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <future>
#include <iterator>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvrp.hpp"
#include "decomposition.hpp"
#include "hgs.hpp"

namespace vrptune {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class EliteRule { best_feasible, best_penalized, tournament_top };
enum class ReintegrationRule { replace_if_improves, always_replace, population_insert };

inline std::string to_string(EliteRule r) {
  switch (r) {
    case EliteRule::best_feasible: return "best-feasible";
    case EliteRule::best_penalized: return "best-penalized";
    case EliteRule::tournament_top: return "tournament-of-top-p";
  }
  return "";
}

inline std::string to_string(ReintegrationRule r) {
  switch (r) {
    case ReintegrationRule::replace_if_improves: return "replace-if-route-set-improves";
    case ReintegrationRule::always_replace: return "always-replace";
    case ReintegrationRule::population_insert: return "population-insert";
  }
  return "";
}

inline std::optional<EliteRule> elite_rule_from(std::string_view s) {
  for (auto r : {EliteRule::best_feasible, EliteRule::best_penalized, EliteRule::tournament_top})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

inline std::optional<ReintegrationRule> reintegration_rule_from(std::string_view s) {
  for (auto r : {ReintegrationRule::replace_if_improves, ReintegrationRule::always_replace,
                 ReintegrationRule::population_insert})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

struct FrameworkDescriptor {
  int target_subproblem_size = 60;
  long trigger_period = 500;
  EliteRule elite_rule = EliteRule::best_feasible;
  double tournament_fraction = 0.2;  // used by tournament-of-top-p only
  ReintegrationRule reintegration_rule = ReintegrationRule::replace_if_improves;
  double budget_split = 0.5;  // share of a cycle's wall clock given to the global phase
  json global_hgs_overrides = json::object();
  friend bool operator==(const FrameworkDescriptor&, const FrameworkDescriptor&) = default;
};

struct DecompositionDescriptor {
  DecompositionParams params;
  friend bool operator==(const DecompositionDescriptor&, const DecompositionDescriptor&) = default;
};

struct SubSolverDescriptor {
  HgsConfig config;
  double budget_seconds = 0.0;  // per subproblem, 0 = derived from the cycle split
  long budget_iterations = 0;   // per subproblem, 0 = derived from the cycle split
  friend bool operator==(const SubSolverDescriptor&, const SubSolverDescriptor&) = default;
};

using Descriptor = std::variant<FrameworkDescriptor, DecompositionDescriptor, SubSolverDescriptor>;

inline int tier_of(const Descriptor& d) { return static_cast<int>(d.index()) + 1; }

// ---------------------------------------------------------------- JSON ---

namespace detail {

class FieldReader {
 public:
  FieldReader(const json& j, std::string prefix, std::vector<std::string>& errors)
      : j_(j), prefix_(std::move(prefix)), errors_(errors) {
    if (!j_.is_object()) errors_.push_back(prefix_ + " must be an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.emplace_back(key);
    if (!j_.is_object() || !j_.contains(key)) return;
    const auto& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw std::invalid_argument("bool");
        out = v.get<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("number");
        const double d = v.get<double>();
        if (d != std::floor(d)) throw std::invalid_argument("integer");
        out = static_cast<T>(d);
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw std::invalid_argument("number");
        out = v.get<T>();
      } else {
        out = v.get<T>();
      }
    } catch (const std::exception&) {
      errors_.push_back(prefix_ + key + " has the wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.emplace_back(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

  void reject_unknown() {
    if (!j_.is_object()) return;
    for (const auto& [k, v] : j_.items())
      if (std::find(seen_.begin(), seen_.end(), k) == seen_.end()) errors_.push_back("unknown field " + prefix_ + k);
  }

 private:
  const json& j_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::vector<std::string> seen_;
};

}  // namespace detail

inline json to_json(const HgsConfig& c) {
  return {{"population_size", c.population_size},
          {"generation_size", c.generation_size},
          {"elite_fraction", c.elite_fraction},
          {"granularity", c.granularity},
          {"capacity_penalty_init", c.capacity_penalty_init},
          {"penalty_adapt_factor", c.penalty_adapt_factor},
          {"target_feasible_ratio", c.target_feasible_ratio},
          {"diversity_neighbors", c.diversity_neighbors},
          {"operators",
           {{"relocate", c.operators.relocate},
            {"swap11", c.operators.swap11},
            {"swap22", c.operators.swap22},
            {"swap33", c.operators.swap33},
            {"two_opt", c.operators.two_opt},
            {"two_opt_star", c.operators.two_opt_star}}},
          {"budget",
           {{"max_iterations", c.budget.max_iterations},
            {"max_no_improve", c.budget.max_no_improve},
            {"seconds", c.budget.seconds}}},
          {"seed", c.seed}};
}

/// Reads the fields present in `j` over `base`; unknown fields are errors.
inline HgsConfig hgs_config_from_json(const json& j, std::vector<std::string>& errors, HgsConfig base = {},
                                      const std::string& prefix = "") {
  detail::FieldReader r(j, prefix, errors);
  r.read("population_size", base.population_size);
  r.read("generation_size", base.generation_size);
  r.read("elite_fraction", base.elite_fraction);
  r.read("granularity", base.granularity);
  r.read("capacity_penalty_init", base.capacity_penalty_init);
  r.read("penalty_adapt_factor", base.penalty_adapt_factor);
  r.read("target_feasible_ratio", base.target_feasible_ratio);
  r.read("diversity_neighbors", base.diversity_neighbors);
  r.read("seed", base.seed);
  if (const auto* ops = r.sub("operators")) {
    detail::FieldReader o(*ops, prefix + "operators.", errors);
    o.read("relocate", base.operators.relocate);
    o.read("swap11", base.operators.swap11);
    o.read("swap22", base.operators.swap22);
    o.read("swap33", base.operators.swap33);
    o.read("two_opt", base.operators.two_opt);
    o.read("two_opt_star", base.operators.two_opt_star);
    o.reject_unknown();
  }
  if (const auto* b = r.sub("budget")) {
    detail::FieldReader o(*b, prefix + "budget.", errors);
    o.read("max_iterations", base.budget.max_iterations);
    o.read("max_no_improve", base.budget.max_no_improve);
    o.read("seconds", base.budget.seconds);
    o.reject_unknown();
  }
  r.reject_unknown();
  return base;
}

inline json to_json(const FrameworkDescriptor& d) {
  return {{"target_subproblem_size", d.target_subproblem_size},
          {"trigger_period", d.trigger_period},
          {"elite_selection_rule", to_string(d.elite_rule)},
          {"tournament_fraction", d.tournament_fraction},
          {"reintegration_rule", to_string(d.reintegration_rule)},
          {"budget_split", d.budget_split},
          {"global_hgs_overrides", d.global_hgs_overrides}};
}

inline json to_json(const DecompositionDescriptor& d) {
  json j{{"strategy_id", d.params.strategy_id}, {"seed", d.params.seed}};
  if (d.params.target_size) j["target_size"] = *d.params.target_size;
  if (d.params.cluster_count) j["cluster_count"] = *d.params.cluster_count;
  json ss = json::object();
  for (const auto& [k, v] : d.params.strategy_specific) ss[k] = v;
  j["strategy_specific"] = ss;
  return j;
}

inline json to_json(const SubSolverDescriptor& d) {
  return {{"config", to_json(d.config)},
          {"budget_per_subproblem", {{"seconds", d.budget_seconds}, {"iterations", d.budget_iterations}}}};
}

inline json to_json(const Descriptor& d) {
  return std::visit([](const auto& x) { return to_json(x); }, d);
}

struct ParsedDescriptor {
  std::optional<Descriptor> descriptor;
  std::vector<std::string> errors;
};

/// Strict parse of a tier descriptor; absent fields keep their defaults.
inline ParsedDescriptor parse_descriptor(int tier, const json& j) {
  ParsedDescriptor out;
  auto& e = out.errors;
  if (tier == 1) {
    FrameworkDescriptor d;
    detail::FieldReader r(j, "", e);
    r.read("target_subproblem_size", d.target_subproblem_size);
    r.read("trigger_period", d.trigger_period);
    r.read("tournament_fraction", d.tournament_fraction);
    r.read("budget_split", d.budget_split);
    if (const auto* v = r.sub("elite_selection_rule")) {
      if (!v->is_string() || !elite_rule_from(v->get<std::string>()))
        e.emplace_back("elite_selection_rule must be one of best-feasible, best-penalized, tournament-of-top-p");
      else
        d.elite_rule = *elite_rule_from(v->get<std::string>());
    }
    if (const auto* v = r.sub("reintegration_rule")) {
      if (!v->is_string() || !reintegration_rule_from(v->get<std::string>()))
        e.emplace_back(
            "reintegration_rule must be one of replace-if-route-set-improves, always-replace, population-insert");
      else
        d.reintegration_rule = *reintegration_rule_from(v->get<std::string>());
    }
    if (const auto* v = r.sub("global_hgs_overrides")) {
      if (!v->is_object())
        e.emplace_back("global_hgs_overrides must be an object");
      else
        d.global_hgs_overrides = *v;
    }
    r.reject_unknown();
    out.descriptor = d;
  } else if (tier == 2) {
    DecompositionDescriptor d;
    detail::FieldReader r(j, "", e);
    r.read("strategy_id", d.params.strategy_id);
    r.read("seed", d.params.seed);
    int ts = 0, cc = 0;
    const bool has_ts = j.is_object() && j.contains("target_size");
    const bool has_cc = j.is_object() && j.contains("cluster_count");
    r.read("target_size", ts);
    r.read("cluster_count", cc);
    if (has_ts || has_cc) {
      d.params.target_size.reset();
      d.params.cluster_count.reset();
      if (has_ts) d.params.target_size = ts;
      if (has_cc) d.params.cluster_count = cc;
    }
    if (const auto* v = r.sub("strategy_specific")) {
      if (!v->is_object()) {
        e.emplace_back("strategy_specific must be an object");
      } else {
        for (const auto& [k, x] : v->items()) {
          if (!x.is_number())
            e.push_back("strategy_specific." + k + " must be a number");
          else
            d.params.strategy_specific[k] = x.get<double>();
        }
      }
    }
    r.reject_unknown();
    out.descriptor = d;
  } else if (tier == 3) {
    SubSolverDescriptor d;
    detail::FieldReader r(j, "", e);
    if (const auto* c = r.sub("config")) d.config = hgs_config_from_json(*c, e, d.config, "config.");
    if (const auto* b = r.sub("budget_per_subproblem")) {
      detail::FieldReader o(*b, "budget_per_subproblem.", e);
      o.read("seconds", d.budget_seconds);
      o.read("iterations", d.budget_iterations);
      o.reject_unknown();
    }
    r.reject_unknown();
    out.descriptor = d;
  } else {
    e.push_back("tier must be 1, 2 or 3");
  }
  if (!e.empty()) out.descriptor.reset();
  return out;
}

// ---------------------------------------------------------- validation ---

inline std::vector<std::string> validate_descriptor(const FrameworkDescriptor& d) {
  std::vector<std::string> v;
  if (d.target_subproblem_size < 2) v.emplace_back("target_subproblem_size m >= 2");
  if (d.trigger_period < 1) v.emplace_back("F >= 1");
  if (!(d.budget_split > 0.0 && d.budget_split < 1.0)) v.emplace_back("budget_split in (0,1)");
  if (!(d.tournament_fraction > 0.0 && d.tournament_fraction <= 1.0)) v.emplace_back("tournament_fraction in (0,1]");
  std::vector<std::string> e;
  const auto cfg = hgs_config_from_json(d.global_hgs_overrides, e, HgsConfig{}, "global_hgs_overrides.");
  for (auto& s : e) v.push_back(std::move(s));
  for (auto& s : validate_hgs_config(cfg)) v.push_back("global_hgs_overrides: " + s);
  return v;
}

inline std::vector<std::string> validate_descriptor(const DecompositionDescriptor& d) {
  return validate_decomposition_params(d.params);
}

inline std::vector<std::string> validate_descriptor(const SubSolverDescriptor& d) {
  // the runner always supplies a per-subproblem budget
  HgsConfig c = d.config;
  if (c.budget.max_iterations == 0) c.budget.max_iterations = 1;
  auto v = validate_hgs_config(c);
  if (d.budget_seconds < 0.0) v.emplace_back("budget_per_subproblem.seconds >= 0");
  if (d.budget_iterations < 0) v.emplace_back("budget_per_subproblem.iterations >= 0");
  return v;
}

inline std::vector<std::string> validate_descriptor(const Descriptor& d) {
  return std::visit([](const auto& x) { return validate_descriptor(x); }, d);
}

/// Validates raw generator output for a tier: schema errors first, then
/// bounds.
inline std::vector<std::string> validate_descriptor(int tier, const json& j) {
  auto p = parse_descriptor(tier, j);
  if (!p.descriptor) return p.errors;
  return validate_descriptor(*p.descriptor);
}

// ------------------------------------------------------ canonical text ---

namespace detail {

inline std::string canonical_number(double v) {
  if (v == 0.0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void flatten(const json& j, const std::string& path, std::vector<std::string>& lines) {
  if (j.is_object()) {
    if (j.empty()) lines.push_back(path + " = {}");
    for (const auto& [k, v] : j.items()) flatten(v, path.empty() ? k : path + "." + k, lines);
  } else if (j.is_array()) {
    if (j.empty()) lines.push_back(path + " = []");
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], path + "[" + std::to_string(i) + "]", lines);
  } else if (j.is_boolean()) {
    lines.push_back(path + " = " + (j.get<bool>() ? "true" : "false"));
  } else if (j.is_number()) {
    lines.push_back(path + " = " + canonical_number(j.get<double>()));
  } else if (j.is_string()) {
    lines.push_back(path + " = " + j.get<std::string>());
  } else {
    lines.push_back(path + " = null");
  }
}

inline std::string collapse_ws(std::string_view s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
    } else {
      if (space) out += ' ';
      out += c;
      space = false;
    }
  }
  return out;
}

}  // namespace detail

/// A "tier = N" line, then key-sorted "path = value" lines for the fields
/// that differ from the tier's defaults, then the rationale. Leaving the
/// shared defaults out keeps the text about what a component changes.
inline std::string canonical_text(const Descriptor& d, std::string_view rationale) {
  const auto prefix = "tier" + std::to_string(tier_of(d));
  std::vector<std::string> lines, defaults;
  detail::flatten(to_json(d), prefix, lines);
  std::visit([&](const auto& x) { detail::flatten(to_json(std::decay_t<decltype(x)>{}), prefix, defaults); }, d);
  std::sort(lines.begin(), lines.end());
  std::sort(defaults.begin(), defaults.end());
  std::vector<std::string> changed;
  std::set_difference(lines.begin(), lines.end(), defaults.begin(), defaults.end(), std::back_inserter(changed));
  std::string out = "tier = " + std::to_string(tier_of(d)) + "\n";
  for (const auto& l : changed) out += l + "\n";
  out += "rationale = " + detail::collapse_ws(rationale) + "\n";
  return out;
}

/// One tier's candidate: descriptor plus the generator's rationale text.
struct Component {
  Descriptor descriptor;
  std::string rationale;

  int tier() const { return tier_of(descriptor); }
  std::string canonical_text() const { return vrptune::canonical_text(descriptor, rationale); }
  json to_json() const { return {{"tier", tier()}, {"descriptor", vrptune::to_json(descriptor)}, {"rationale", rationale}}; }
};

inline Component component_from_json(const json& j) {
  if (!j.is_object() || !j.contains("tier") || !j.contains("descriptor"))
    throw std::invalid_argument("component needs tier and descriptor");
  auto p = parse_descriptor(j.at("tier").get<int>(), j.at("descriptor"));
  if (!p.descriptor) throw std::invalid_argument("component: " + p.errors.front());
  return {*p.descriptor, j.value("rationale", "")};
}

struct SolverAssembly {
  FrameworkDescriptor tier1;
  DecompositionDescriptor tier2;
  SubSolverDescriptor tier3;
  std::array<std::string, 3> rationale;
  std::string canonical_text;
};

class AssemblyError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline SolverAssembly assemble(const FrameworkDescriptor& t1, const DecompositionDescriptor& t2,
                               const SubSolverDescriptor& t3, std::array<std::string, 3> rationale = {}) {
  const std::array<Descriptor, 3> ds{t1, t2, t3};
  for (const auto& d : ds)
    if (auto v = validate_descriptor(d); !v.empty())
      throw AssemblyError("tier " + std::to_string(tier_of(d)) + " invalid: " + v.front());
  SolverAssembly a{t1, t2, t3, std::move(rationale), {}};
  for (std::size_t i = 0; i < 3; ++i) a.canonical_text += vrptune::canonical_text(ds[i], a.rationale[i]);
  return a;
}

inline SolverAssembly assemble(const Component& c1, const Component& c2, const Component& c3) {
  if (c1.tier() != 1 || c2.tier() != 2 || c3.tier() != 3) throw AssemblyError("components out of tier order");
  return assemble(std::get<FrameworkDescriptor>(c1.descriptor), std::get<DecompositionDescriptor>(c2.descriptor),
                  std::get<SubSolverDescriptor>(c3.descriptor), {c1.rationale, c2.rationale, c3.rationale});
}

inline json assembly_to_json(const SolverAssembly& a) {
  return {{"schema_version", kSchemaVersion},
          {"tier1", to_json(a.tier1)},
          {"tier2", to_json(a.tier2)},
          {"tier3", to_json(a.tier3)},
          {"rationale", {{"tier1", a.rationale[0]}, {"tier2", a.rationale[1]}, {"tier3", a.rationale[2]}}}};
}

inline SolverAssembly assembly_from_json(const json& j) {
  if (!j.is_object() || j.value("schema_version", 0) != kSchemaVersion)
    throw AssemblyError("unsupported assembly schema_version");
  std::array<Descriptor, 3> ds;
  for (int t = 1; t <= 3; ++t) {
    const auto key = "tier" + std::to_string(t);
    if (!j.contains(key)) throw AssemblyError("missing " + key);
    auto p = parse_descriptor(t, j.at(key));
    if (!p.descriptor) throw AssemblyError(key + ": " + p.errors.front());
    ds[static_cast<std::size_t>(t) - 1] = *p.descriptor;
  }
  std::array<std::string, 3> rat;
  if (j.contains("rationale"))
    for (int t = 1; t <= 3; ++t)
      rat[static_cast<std::size_t>(t) - 1] = j.at("rationale").value("tier" + std::to_string(t), "");
  return assemble(std::get<FrameworkDescriptor>(ds[0]), std::get<DecompositionDescriptor>(ds[1]),
                  std::get<SubSolverDescriptor>(ds[2]), rat);
}

/// Default assembly; matches the plain decomposed HGS with barycenter
/// clustering.
inline SolverAssembly default_assembly() {
  return assemble(FrameworkDescriptor{}, DecompositionDescriptor{}, SubSolverDescriptor{},
                  {"decomposed hgs with periodic subproblem phases",
                   "route barycenter k-means over the elite routes",
                   "default hybrid genetic search configuration"});
}

// ---------------------------------------------------------------- runs ---

struct RunBudget {
  double seconds = 0.0;  // wall clock for the whole run; 0 = no limit
  long cycles = 0;       // global/subproblem cycles; 0 = no limit
  int threads = 1;       // subproblems solved concurrently
  /// Multiplies the trigger period (and so the derived subproblem
  /// generations); below 1 it gives short iteration-capped runs.
  double iteration_scale = 1.0;
};

struct DecompositionEvent {
  long cycle = 0;
  std::size_t subproblems = 0;
  bool partition_ok = false;
  double elite_cost = 0.0;
  double reintegrated_cost = 0.0;
  std::size_t accepted = 0;
};

struct AssemblyResult {
  Solution best;
  std::vector<TracePoint> trace;  // incumbent after each phase
  std::vector<DecompositionEvent> events;
  long global_iterations = 0;
  long cycles = 0;
};

/// Replaces the customers of `sub_customers` inside `routes` by the routes of
/// `sub_routes` (global ids). Other customers keep their route order.
inline std::vector<Route> reintegrate(const std::vector<Route>& routes, const std::vector<int>& sub_customers,
                                      const std::vector<Route>& sub_routes) {
  std::vector<Route> out;
  for (const auto& r : routes) {
    Route kept;
    for (int c : r)
      if (!std::binary_search(sub_customers.begin(), sub_customers.end(), c)) kept.push_back(c);
    if (!kept.empty()) out.push_back(std::move(kept));
  }
  for (const auto& r : sub_routes)
    if (!r.empty()) out.push_back(r);
  return out;
}

/// Effective global-phase HGS configuration: defaults with the tier-1
/// overrides applied.
inline HgsConfig global_config(const FrameworkDescriptor& t1) {
  std::vector<std::string> e;
  return hgs_config_from_json(t1.global_hgs_overrides, e);
}

/// Runs an assembled solver on `inst`. With only `budget.cycles` set, the run
/// is fully determined by (assembly, instance, seed).
inline AssemblyResult run_assembly(const SolverAssembly& a, const Instance& inst, const RunBudget& budget,
                                   std::uint64_t seed) {
  using Clock = std::chrono::steady_clock;
  if (budget.seconds <= 0.0 && budget.cycles <= 0) throw std::invalid_argument("run budget must be positive");
  const auto start = Clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  HgsConfig gcfg = global_config(a.tier1);
  gcfg.seed = derive_seed(seed, 0x676c6f62ULL);
  gcfg.budget.seconds = budget.seconds;
  gcfg.budget.max_iterations = 0;
  if (gcfg.budget.max_no_improve == 0) gcfg.budget.max_no_improve = HgsBudget{}.max_no_improve;
  gcfg.granularity = std::min(gcfg.granularity, std::max(1, inst.size() - 1));
  Hgs hgs(inst, gcfg);

  AssemblyResult res;
  auto incumbent = [&]() -> double {
    const auto b = hgs.best_feasible();
    return b ? b->cost : std::numeric_limits<double>::infinity();
  };
  auto record = [&] {
    const double c = incumbent();
    if (std::isfinite(c) && (res.trace.empty() || c < res.trace.back().best_cost))
      res.trace.push_back({hgs.iterations(), elapsed(), c});
  };

  const bool timed = budget.seconds > 0.0;
  const double s = a.tier1.budget_split;
  if (!(budget.iteration_scale > 0.0)) throw std::invalid_argument("iteration_scale must be positive");
  const long period = std::max<long>(1, std::lround(double(a.tier1.trigger_period) * budget.iteration_scale));
  for (long cycle = 0; budget.cycles == 0 || cycle < budget.cycles; ++cycle) {
    if (timed && elapsed() >= budget.seconds) break;
    const double phase_start = elapsed();
    hgs.iterate(period, timed ? budget.seconds - elapsed() : 0.0);
    res.global_iterations = hgs.iterations();
    record();
    res.cycles = cycle + 1;
    if (timed && elapsed() >= budget.seconds) break;
    const double global_time = elapsed() - phase_start;

    std::optional<Individual> elite;
    switch (a.tier1.elite_rule) {
      case EliteRule::best_feasible:
        elite = hgs.best_feasible();
        break;
      case EliteRule::best_penalized:
        if (const auto* p = hgs.best_penalized()) elite = *p;
        break;
      case EliteRule::tournament_top:
        elite = hgs.tournament_top(a.tier1.tournament_fraction);
        break;
    }
    if (!elite) elite = hgs.best_feasible();
    if (!elite) {
      if (const auto* p = hgs.best_penalized()) elite = *p;
    }
    if (!elite) continue;

    DecompositionParams dp = a.tier2.params;
    if (!dp.cluster_count) dp.target_size = a.tier1.target_subproblem_size;
    if (dp.cluster_count) dp.cluster_count = std::min(*dp.cluster_count, inst.size());
    dp.seed = derive_seed(dp.seed, seed, static_cast<std::uint64_t>(cycle));
    const auto subs = decompose(inst, elite->solution(), dp);
    DecompositionEvent ev;
    ev.cycle = cycle;
    ev.subproblems = subs.size();
    ev.partition_ok = validate_partition(inst, subs).ok;
    ev.elite_cost = elite->cost;

    // per-subproblem budgets
    double sub_seconds = 0.0;
    long sub_iters = a.tier3.budget_iterations;
    const std::size_t waves =
        (subs.size() + static_cast<std::size_t>(std::max(1, budget.threads)) - 1) / std::max(1, budget.threads);
    if (timed) {
      const double phase = std::min(global_time * (1.0 - s) / s, budget.seconds - elapsed());
      sub_seconds = std::max(1e-3, phase / static_cast<double>(std::max<std::size_t>(1, waves)));
      if (a.tier3.budget_seconds > 0.0) sub_seconds = std::min(sub_seconds, a.tier3.budget_seconds);
    } else if (sub_iters == 0) {
      sub_iters = std::max<long>(1, std::lround(double(period) * (1.0 - s) / s /
                                                double(std::max<std::size_t>(1, subs.size()))));
    }

    auto solve = [&](std::size_t i) -> std::optional<std::vector<Route>> {
      const auto& sp = subs[i];
      const auto& li = sp.local_instance;
      if (li.size() < 2) return std::nullopt;
      HgsConfig c = a.tier3.config;
      c.seed = derive_seed(seed, static_cast<std::uint64_t>(cycle) + 1, i);
      c.granularity = std::min(c.granularity, std::max(1, li.size() - 1));
      c.budget.seconds = timed ? sub_seconds : 0.0;
      c.budget.max_iterations = sub_iters;
      if (c.budget.max_iterations == 0 && c.budget.seconds == 0.0 && c.budget.max_no_improve == 0)
        c.budget.max_iterations = 1;
      Hgs sub(li, c);
      // seed the subproblem population with the elite's routes restricted to it
      std::vector<int> to_local(static_cast<std::size_t>(inst.size()) + 1, 0);
      for (int l = 1; l <= li.size(); ++l) to_local[static_cast<std::size_t>(sp.to_global(l))] = l;
      std::vector<Route> seeded;
      for (const auto& r : elite->routes) {
        Route lr;
        for (int g : r)
          if (to_local[static_cast<std::size_t>(g)]) lr.push_back(to_local[static_cast<std::size_t>(g)]);
        if (!lr.empty()) seeded.push_back(std::move(lr));
      }
      sub.insert_routes(seeded);
      sub.iterate(timed ? 0 : sub_iters);
      const auto best = sub.best_feasible();
      if (!best) return std::nullopt;
      std::vector<Route> global_routes;
      for (const auto& r : best->routes) {
        Route g;
        for (int l : r) g.push_back(sp.to_global(l));
        global_routes.push_back(std::move(g));
      }
      return global_routes;
    };

    std::vector<std::optional<std::vector<Route>>> solved(subs.size());
    if (budget.threads > 1 && subs.size() > 1) {
      for (std::size_t w = 0; w < subs.size(); w += static_cast<std::size_t>(budget.threads)) {
        std::vector<std::future<std::optional<std::vector<Route>>>> fs;
        for (std::size_t i = w; i < std::min(subs.size(), w + static_cast<std::size_t>(budget.threads)); ++i)
          fs.push_back(std::async(std::launch::async, solve, i));
        for (std::size_t i = 0; i < fs.size(); ++i) solved[w + i] = fs[i].get();
      }
    } else {
      for (std::size_t i = 0; i < subs.size(); ++i) solved[i] = solve(i);
    }

    // serial reintegration in subproblem order
    std::vector<Route> working = elite->routes;
    double working_cost = evaluate_routes(inst, working).cost;
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!solved[i]) continue;
      auto candidate = reintegrate(working, subs[i].customer_ids, *solved[i]);
      const double cc = evaluate_routes(inst, candidate).cost;
      switch (a.tier1.reintegration_rule) {
        case ReintegrationRule::replace_if_improves:
          if (cc < working_cost - 1e-9) {
            working = std::move(candidate);
            working_cost = cc;
            ++ev.accepted;
          }
          break;
        case ReintegrationRule::always_replace:
          working = std::move(candidate);
          working_cost = cc;
          ++ev.accepted;
          break;
        case ReintegrationRule::population_insert:
          hgs.insert_routes(reintegrate(elite->routes, subs[i].customer_ids, *solved[i]));
          ++ev.accepted;
          break;
      }
    }
    if (a.tier1.reintegration_rule != ReintegrationRule::population_insert && ev.accepted > 0)
      hgs.insert_routes(working);
    ev.reintegrated_cost = working_cost;
    res.events.push_back(ev);
    record();
  }
  const auto r = hgs.result();
  res.best = r.best;
  res.global_iterations = hgs.iterations();
  return res;
}

inline AssemblyResult run_assembly(const SolverAssembly& a, const Instance& inst, double seconds, std::uint64_t seed) {
  return run_assembly(a, inst, RunBudget{seconds, 0, 1}, seed);
}

}  // namespace vrptune

#endif  // VRPTUNE_HIERARCHY_HPP
