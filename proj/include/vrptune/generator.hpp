// Component generation: instance analyzer, prompt assembly, a seeded mock
// backend and an HTTP chat backend, plus the regrowth loop.
#ifndef VRPTUNE_GENERATOR_HPP
#define VRPTUNE_GENERATOR_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "httplib.h"
// <resolv.h> defines _res, which Eigen uses as a parameter name
#ifdef _res
#undef _res
#endif

#include "cvrp.hpp"
#include "decomposition.hpp"
#include "hierarchy.hpp"
#include "rng.hpp"

namespace vrptune {

// ------------------------------------------------------------ analyzer ---

struct AnalyzerReport {
  double n_customers = 0.0;
  std::array<double, 4> bounding_box{};  // min x, min y, max x, max y
  double nn_mean = 0.0;                  // nearest neighbor distance
  double nn_std = 0.0;
  double cluster_tendency = 0.0;  // best k-means silhouette for k = 2..8, floored at 0
  int best_k = 2;
  double depot_centrality = 0.0;  // depot to customer centroid over the box diagonal
  double demand_mean = 0.0;       // all three relative to capacity
  double demand_std = 0.0;
  double demand_max = 0.0;
  std::string summary_text;
  friend bool operator==(const AnalyzerReport&, const AnalyzerReport&) = default;
};

inline std::string summarize(const AnalyzerReport& r) {
  auto num = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  std::string layout = r.cluster_tendency > 0.5    ? "strongly clustered"
                       : r.cluster_tendency > 0.35 ? "moderately clustered"
                                                   : "close to uniform";
  std::string depot = r.depot_centrality < 0.1 ? "central" : r.depot_centrality < 0.3 ? "off-center" : "eccentric";
  std::ostringstream os;
  os << "customers: " << num(r.n_customers) << "\n"
     << "bounding box: [" << num(r.bounding_box[0]) << ", " << num(r.bounding_box[1]) << "] to ["
     << num(r.bounding_box[2]) << ", " << num(r.bounding_box[3]) << "]\n"
     << "nearest neighbor distance: mean " << num(r.nn_mean) << ", std " << num(r.nn_std) << "\n"
     << "spatial pattern: " << layout << " (silhouette " << num(r.cluster_tendency) << " at k = " << r.best_k
     << ")\n"
     << "depot: " << depot << " (offset " << num(r.depot_centrality) << " of the diagonal)\n"
     << "demand / capacity: mean " << num(r.demand_mean) << ", std " << num(r.demand_std) << ", max "
     << num(r.demand_max) << "\n";
  return os.str();
}

namespace detail {

/// Mean silhouette of a labelling; points alone in their cluster score 0.
inline double silhouette(const std::vector<Point>& pts, const std::vector<std::size_t>& label, std::size_t k) {
  const std::size_t n = pts.size();
  std::vector<double> size(k, 0.0);
  for (auto l : label) size[l] += 1.0;
  double total = 0.0;
  std::vector<double> sum(k);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sum.begin(), sum.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum[label[j]] += euclidean(pts[i], pts[j]);
    const auto own = label[i];
    if (size[own] <= 1.0) continue;
    const double a = sum[own] / (size[own] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c)
      if (c != own && size[c] > 0.0) b = std::min(b, sum[c] / size[c]);
    if (!std::isfinite(b)) continue;
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

inline AnalyzerReport analyze_one(const Instance& inst) {
  AnalyzerReport r;
  const auto& cs = inst.customers();
  const std::size_t n = cs.size();
  r.n_customers = static_cast<double>(n);
  r.bounding_box = {cs[0].pos.x, cs[0].pos.y, cs[0].pos.x, cs[0].pos.y};
  Point centroid{0.0, 0.0};
  for (const auto& c : cs) {
    r.bounding_box[0] = std::min(r.bounding_box[0], c.pos.x);
    r.bounding_box[1] = std::min(r.bounding_box[1], c.pos.y);
    r.bounding_box[2] = std::max(r.bounding_box[2], c.pos.x);
    r.bounding_box[3] = std::max(r.bounding_box[3], c.pos.y);
    centroid.x += c.pos.x / double(n);
    centroid.y += c.pos.y / double(n);
  }
  std::vector<double> nn(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) best = std::min(best, euclidean(cs[i].pos, cs[j].pos));
    nn[i] = n > 1 ? best : 0.0;
  }
  for (double d : nn) r.nn_mean += d / double(n);
  for (double d : nn) r.nn_std += (d - r.nn_mean) * (d - r.nn_mean) / double(n);
  r.nn_std = std::sqrt(r.nn_std);

  const double diag = std::hypot(r.bounding_box[2] - r.bounding_box[0], r.bounding_box[3] - r.bounding_box[1]);
  r.depot_centrality = diag > 0.0 ? std::min(1.0, euclidean(inst.depot(), centroid) / diag) : 0.0;

  const double q = inst.capacity();
  for (const auto& c : cs) {
    r.demand_mean += c.demand / q / double(n);
    r.demand_max = std::max(r.demand_max, c.demand / q);
  }
  for (const auto& c : cs) r.demand_std += (c.demand / q - r.demand_mean) * (c.demand / q - r.demand_mean) / double(n);
  r.demand_std = std::sqrt(r.demand_std);

  std::vector<Unit> units;
  std::vector<Point> pts;
  for (const auto& c : cs) {
    units.push_back({{c.id}, c.pos});
    pts.push_back(c.pos);
  }
  r.cluster_tendency = 0.0;
  for (std::size_t k = 2; k <= 8 && k < n; ++k) {
    Rng rng(derive_seed(0x616e616c, k));
    const auto groups = kmeans(units, k, rng);
    std::vector<std::size_t> label(n, 0);
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (auto u : groups[g]) label[u] = g;
    const double s = silhouette(pts, label, groups.size());
    if (s > r.cluster_tendency) {
      r.cluster_tendency = s;
      r.best_k = static_cast<int>(k);
    }
  }
  return r;
}

}  // namespace detail

/// Statistics averaged over the instances (best_k is taken from the first).
inline AnalyzerReport analyze(const std::vector<Instance>& instances) {
  if (instances.empty()) throw std::invalid_argument("analyze needs at least one instance");
  AnalyzerReport out;
  const double w = 1.0 / double(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto r = detail::analyze_one(instances[i]);
    if (i == 0) out.best_k = r.best_k;
    out.n_customers += w * r.n_customers;
    for (int b = 0; b < 4; ++b) out.bounding_box[b] += w * r.bounding_box[b];
    out.nn_mean += w * r.nn_mean;
    out.nn_std += w * r.nn_std;
    out.cluster_tendency += w * r.cluster_tendency;
    out.depot_centrality += w * r.depot_centrality;
    out.demand_mean += w * r.demand_mean;
    out.demand_std += w * r.demand_std;
    out.demand_max += w * r.demand_max;
  }
  out.summary_text = summarize(out);
  return out;
}

inline json to_json(const AnalyzerReport& r) {
  return {{"n_customers", r.n_customers},
          {"bounding_box", r.bounding_box},
          {"nearest_neighbor", {{"mean", r.nn_mean}, {"std", r.nn_std}}},
          {"cluster_tendency", r.cluster_tendency},
          {"best_k", r.best_k},
          {"depot_centrality", r.depot_centrality},
          {"demand", {{"mean", r.demand_mean}, {"std", r.demand_std}, {"max", r.demand_max}}},
          {"summary_text", r.summary_text}};
}

// -------------------------------------------------------------- schema ---

/// Field listing handed to the generator for one tier.
inline json descriptor_schema(int tier) {
  auto field = [](std::string type, json lo, json hi, json dflt, std::string meaning) {
    return json{{"type", type}, {"min", lo}, {"max", hi}, {"default", dflt}, {"meaning", meaning}};
  };
  auto choice = [](std::vector<std::string> values, std::string dflt, std::string meaning) {
    return json{{"type", "enum"}, {"values", values}, {"default", dflt}, {"meaning", meaning}};
  };
  const HgsConfig h;
  json hgs = {
      {"population_size", field("integer", 2, 200, h.population_size, "individuals kept after survivor selection")},
      {"generation_size", field("integer", 1, 400, h.generation_size, "offspring added before survivor selection")},
      {"elite_fraction", field("number", 0.01, 1.0, h.elite_fraction, "share of the population ranked as elite")},
      {"granularity", field("integer", 1, 100, h.granularity, "neighbor list size for local search")},
      {"capacity_penalty_init", field("number", 0.01, 100.0, h.capacity_penalty_init, "initial load penalty")},
      {"penalty_adapt_factor", field("number", 1.01, 5.0, h.penalty_adapt_factor, "penalty multiplier")},
      {"target_feasible_ratio", field("number", 0.01, 0.99, h.target_feasible_ratio, "target share of feasible offspring")},
      {"diversity_neighbors", field("integer", 1, 50, h.diversity_neighbors, "closest individuals for diversity")},
      {"operators", {{"type", "object"},
                     {"fields", {"relocate", "swap11", "swap22", "swap33", "two_opt", "two_opt_star"}},
                     {"meaning", "boolean toggles for the local search moves"}}},
  };
  json fields;
  if (tier == 1) {
    fields = {
        {"target_subproblem_size", field("integer", 2, 1000, 60, "customers per subproblem")},
        {"trigger_period", field("integer", 1, 100000, 500, "global generations between decomposition phases")},
        {"elite_selection_rule", choice({"best-feasible", "best-penalized", "tournament-of-top-p"}, "best-feasible",
                                        "individual whose routes are decomposed")},
        {"tournament_fraction", field("number", 0.01, 1.0, 0.2, "top share used by tournament-of-top-p")},
        {"reintegration_rule",
         choice({"replace-if-route-set-improves", "always-replace", "population-insert"},
                "replace-if-route-set-improves", "how subproblem solutions return to the global search")},
        {"budget_split", field("number", 0.01, 0.99, 0.5, "share of each cycle spent in the global phase")},
        {"global_hgs_overrides", {{"type", "object"}, {"fields", hgs}, {"meaning", "partial HGS settings for the global phase"}}},
    };
  } else if (tier == 2) {
    std::vector<std::string> ids;
    for (const auto& s : strategy_catalog()) ids.emplace_back(s.id);
    fields = {
        {"strategy_id", choice(ids, "route_barycenter_kmeans", "decomposition strategy from the library")},
        {"target_size", field("integer", 2, 1000, 60, "customers per subproblem; omit when cluster_count is set")},
        {"cluster_count", field("integer", 1, 1000, nullptr, "number of subproblems; omit when target_size is set")},
        {"strategy_specific", {{"type", "object"}, {"meaning", "parameters listed for the chosen strategy"}}},
        {"seed", field("integer", 0, 1000000, 1, "decomposition seed")},
    };
  } else if (tier == 3) {
    fields = {
        {"config", {{"type", "object"}, {"fields", hgs}, {"meaning", "HGS settings for every subproblem"}}},
        {"budget_per_subproblem",
         {{"type", "object"},
          {"fields", {{"seconds", field("number", 0, 3600, 0, "0 derives it from the cycle split")},
                      {"iterations", field("integer", 0, 1000000, 0, "0 derives it from the cycle split")}}}}},
    };
  } else {
    throw std::invalid_argument("tier must be 1, 2 or 3");
  }
  return {{"tier", tier}, {"fields", fields}};
}

/// Tier-2 few-shot material: the catalog plus one worked descriptor per
/// strategy.
inline std::string fewshot_library() {
  json examples = json::array();
  for (const auto& s : strategy_catalog()) {
    DecompositionDescriptor d;
    d.params.strategy_id = std::string(s.id);
    for (const auto& p : s.params) d.params.strategy_specific[std::string(p.name)] = p.fallback;
    examples.push_back({{"descriptor", to_json(d)}, {"rationale", std::string(s.summary)}});
  }
  return json{{"catalog", catalog_json()}, {"worked_examples", examples}}.dump(2);
}

// ------------------------------------------------------------- context ---

struct PromptContext {
  int tier = 1;
  std::vector<Component> path;  // descriptors chosen at shallower tiers
  AnalyzerReport report;
  std::string fewshot;  // tier 2 only
  std::vector<std::string> negative_constraints;  // canonical texts, regrowth only
  json schema;
};

inline PromptContext make_context(int tier, std::vector<Component> path, const AnalyzerReport& report,
                                  std::vector<std::string> negative = {}) {
  PromptContext c;
  c.tier = tier;
  c.path = std::move(path);
  c.report = report;
  if (tier == 2) c.fewshot = fewshot_library();
  c.negative_constraints = std::move(negative);
  c.schema = descriptor_schema(tier);
  return c;
}

inline std::string path_context_text(const PromptContext& c) {
  if (c.path.empty()) return "(none, this is the first tier)\n";
  std::string out;
  for (const auto& comp : c.path) out += comp.canonical_text();
  return out;
}

struct Candidate {
  Component component;
  std::string source;  // mock, llm or fallback
  int repairs = 0;
  std::string text() const { return component.canonical_text(); }
};

struct GeneratorEvent {
  std::string kind;  // accepted, repair, fallback, unreachable
  int tier = 0;
  int slot = 0;
  int attempt = 0;
  std::string message;
};

/// Backend interface. Implementations must return descriptors that pass
/// validate_descriptor.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::vector<Candidate> generate(const PromptContext& ctx, int k, std::uint64_t seed) = 0;
  /// One regrowth proposal for a context with negative constraints.
  virtual Candidate propose_distinct(const PromptContext& ctx, std::uint64_t seed) = 0;
  virtual std::string name() const = 0;

  const std::vector<GeneratorEvent>& events() const noexcept { return events_; }
  void clear_events() { events_.clear(); }

 protected:
  void log(GeneratorEvent e) { events_.push_back(std::move(e)); }

 private:
  std::vector<GeneratorEvent> events_;
};

// ---------------------------------------------------------------- mock ---

/// One entry of the mock's tier-1 or tier-3 catalog: a sampler for a family
/// of descriptors sharing a rationale.
struct MockFamily {
  std::string id;
  std::string rationale;
  std::function<Descriptor(Rng&)> sample;
};

namespace detail {

inline double round_to(double v, double step) {
  const double inv = std::round(1.0 / step);  // steps are 1/integer
  return std::round(v * inv) / inv;
}

inline double jitter(Rng& rng, double lo, double hi, double step = 0.01) {
  return std::clamp(round_to(uniform_real(rng, lo, hi), step), lo, hi);
}

}  // namespace detail

inline const std::vector<MockFamily>& mock_families(int tier) {
  using detail::jitter;
  static const std::vector<MockFamily> tier1{
      {"frequent_small",
       "decompose often into small subproblems so local improvements surface quickly and are merged only when "
       "they lower the total cost",
       [](Rng& rng) -> Descriptor {
         FrameworkDescriptor d;
         d.target_subproblem_size = uniform_int(rng, 25, 50);
         d.trigger_period = uniform_int(rng, 10, 30) * 10;
         d.budget_split = jitter(rng, 0.4, 0.6);
         return d;
       }},
      {"rare_large",
       "rare decomposition phases over large subproblems keep most effort on the global population while still "
       "polishing whole regions",
       [](Rng& rng) -> Descriptor {
         FrameworkDescriptor d;
         d.target_subproblem_size = uniform_int(rng, 80, 150);
         d.trigger_period = uniform_int(rng, 8, 20) * 100;
         d.reintegration_rule = ReintegrationRule::always_replace;
         d.budget_split = jitter(rng, 0.6, 0.8);
         return d;
       }},
      {"tournament_diverse",
       "tournament selection among top individuals picks varied elites, and subproblem solutions re-enter the "
       "population as new individuals to keep diversity",
       [](Rng& rng) -> Descriptor {
         FrameworkDescriptor d;
         d.target_subproblem_size = uniform_int(rng, 40, 100);
         d.trigger_period = uniform_int(rng, 3, 8) * 100;
         d.elite_rule = EliteRule::tournament_top;
         d.tournament_fraction = jitter(rng, 0.1, 0.4);
         d.reintegration_rule = ReintegrationRule::population_insert;
         d.budget_split = jitter(rng, 0.3, 0.7);
         return d;
       }},
      {"penalized_elite",
       "decompose around the best penalized individual with a larger global population, letting slightly "
       "infeasible elites steer which regions get repaired",
       [](Rng& rng) -> Descriptor {
         FrameworkDescriptor d;
         d.target_subproblem_size = uniform_int(rng, 50, 90);
         d.trigger_period = uniform_int(rng, 4, 12) * 50;
         d.elite_rule = EliteRule::best_penalized;
         d.budget_split = jitter(rng, 0.4, 0.7);
         d.global_hgs_overrides = {{"population_size", uniform_int(rng, 15, 40)},
                                   {"generation_size", uniform_int(rng, 20, 60)}};
         return d;
       }},
  };
  static const std::vector<MockFamily> tier3{
      {"intensify",
       "small population with dense neighborhoods and triple swaps intensifies the search inside each subproblem",
       [](Rng& rng) -> Descriptor {
         SubSolverDescriptor d;
         d.config.population_size = uniform_int(rng, 10, 20);
         d.config.generation_size = uniform_int(rng, 10, 25);
         d.config.elite_fraction = jitter(rng, 0.2, 0.5);
         d.config.granularity = uniform_int(rng, 15, 30);
         d.config.operators.swap33 = true;
         return d;
       }},
      {"explore",
       "large population and generous offspring counts keep the subproblem search diverse before converging",
       [](Rng& rng) -> Descriptor {
         SubSolverDescriptor d;
         d.config.population_size = uniform_int(rng, 30, 50);
         d.config.generation_size = uniform_int(rng, 40, 80);
         d.config.elite_fraction = jitter(rng, 0.1, 0.3);
         d.config.diversity_neighbors = uniform_int(rng, 3, 8);
         return d;
       }},
      {"penalty_driven",
       "aggressive penalty adaptation pushes offspring back toward capacity feasibility after each generation",
       [](Rng& rng) -> Descriptor {
         SubSolverDescriptor d;
         d.config.capacity_penalty_init = jitter(rng, 0.5, 3.0);
         d.config.penalty_adapt_factor = jitter(rng, 1.1, 1.6);
         d.config.target_feasible_ratio = jitter(rng, 0.1, 0.4);
         return d;
       }},
      {"lean_operators",
       "a lean operator set with short neighbor lists makes each generation cheap so more generations fit the "
       "budget",
       [](Rng& rng) -> Descriptor {
         SubSolverDescriptor d;
         d.config.granularity = uniform_int(rng, 8, 15);
         d.config.operators.swap22 = false;
         d.config.operators.two_opt_star = bernoulli(rng, 0.5);
         d.config.generation_size = uniform_int(rng, 20, 40);
         return d;
       }},
  };
  static const std::vector<MockFamily> tier2 = [] {
    std::vector<MockFamily> out;
    for (const auto& s : strategy_catalog()) {
      const std::string id(s.id);
      out.push_back({id, "partition with " + id + ": " + std::string(s.summary), [id](Rng& rng) -> Descriptor {
                       DecompositionDescriptor d;
                       d.params.strategy_id = id;
                       d.params.target_size = uniform_int(rng, 30, 120);
                       d.params.seed = uniform_int(rng, 1, 1000);
                       for (const auto& p : find_strategy(id)->params)
                         d.params.strategy_specific[std::string(p.name)] =
                             p.integer ? double(uniform_int(rng, int(p.min), int(p.max)))
                                       : detail::jitter(rng, p.min, p.max);
                       return d;
                     }});
    }
    return out;
  }();
  if (tier == 1) return tier1;
  if (tier == 2) return tier2;
  if (tier == 3) return tier3;
  throw std::invalid_argument("tier must be 1, 2 or 3");
}

/// Family of a canonical text produced by the mock catalog, matched by the
/// tier-2 strategy family or the tier-1/3 rationale.
inline std::optional<std::string> mock_family_of(int tier, std::string_view text) {
  if (tier == 2) {
    if (text.rfind("tier = 2\n", 0) != 0) return std::nullopt;
    for (const auto& s : strategy_catalog())
      if (text.find("tier2.strategy_id = " + std::string(s.id) + "\n") != std::string_view::npos)
        return std::string(s.family);
    // the default strategy is implied by a missing strategy_id line
    return std::string(find_strategy(DecompositionParams{}.strategy_id)->family);
  }
  for (const auto& f : mock_families(tier))
    if (text.find(detail::collapse_ws(f.rationale)) != std::string_view::npos) return f.id;
  return std::nullopt;
}

inline std::string family_key(int tier, const MockFamily& f) {
  if (tier == 2) return std::string(find_strategy(f.id)->family);
  return f.id;
}

struct MockOptions {
  double duplicate_rate = 0.0;  // chance that a slot copies an earlier slot
  /// Per tier, the family ids the mock may use; empty means all.
  std::array<std::vector<std::string>, 3> allowed;
};

/// Samples families uniformly and jitters numbers inside schema bounds.
/// Output depends only on (seed, context, k).
class MockGenerator : public Generator {
 public:
  explicit MockGenerator(MockOptions opt = {}) : opt_(std::move(opt)) {}

  std::vector<const MockFamily*> families(int tier) const {
    std::vector<const MockFamily*> out;
    const auto& allow = opt_.allowed[static_cast<std::size_t>(tier) - 1];
    for (const auto& f : mock_families(tier))
      if (allow.empty() || std::find(allow.begin(), allow.end(), f.id) != allow.end()) out.push_back(&f);
    return out;
  }

  std::vector<Candidate> generate(const PromptContext& ctx, int k, std::uint64_t seed) override {
    Rng rng(context_seed(ctx, seed));
    const auto fams = families(ctx.tier);
    std::vector<Candidate> out;
    for (int i = 0; i < k; ++i) {
      if (i > 0 && opt_.duplicate_rate > 0.0 && bernoulli(rng, opt_.duplicate_rate)) {
        out.push_back(out[uniform_index(rng, out.size())]);
        continue;
      }
      out.push_back(draw(*fams[uniform_index(rng, fams.size())], rng));
    }
    for (int i = 0; i < k; ++i) log({"accepted", ctx.tier, i, 0, "mock"});
    return out;
  }

  Candidate propose_distinct(const PromptContext& ctx, std::uint64_t seed) override {
    Rng rng(context_seed(ctx, seed));
    std::vector<std::string> banned;
    for (const auto& t : ctx.negative_constraints)
      if (auto f = mock_family_of(ctx.tier, t)) banned.push_back(*f);
    std::vector<const MockFamily*> pool;
    const auto fams = families(ctx.tier);
    for (const auto* f : fams)
      if (std::find(banned.begin(), banned.end(), family_key(ctx.tier, *f)) == banned.end()) pool.push_back(f);
    if (pool.empty()) pool = fams;
    return draw(*pool[uniform_index(rng, pool.size())], rng);
  }

  std::string name() const override { return "mock"; }

 private:
  static std::uint64_t context_seed(const PromptContext& ctx, std::uint64_t seed) {
    std::uint64_t h = derive_seed(seed, static_cast<std::uint64_t>(ctx.tier));
    for (const auto& c : ctx.path) h = derive_seed(h, hash_string(c.canonical_text()));
    for (const auto& t : ctx.negative_constraints) h = derive_seed(h, hash_string(t));
    return h;
  }

  static Candidate draw(const MockFamily& f, Rng& rng) { return {{f.sample(rng), f.rationale}, "mock", 0}; }

  MockOptions opt_;
};

// ----------------------------------------------------------------- llm ---

struct LlmEndpointConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string path = "/v1/chat/completions";
  std::string model_name = "default";
  double temperature = 0.8;
  double regrowth_temperature = 1.0;
  int max_output_tokens = 1024;
  double timeout_seconds = 60.0;
  int max_retries = 2;  // transport retries per request
  std::string api_key_env_var_name = "VRPTUNE_API_KEY";
};

inline std::vector<std::string> validate_endpoint(const LlmEndpointConfig& c) {
  std::vector<std::string> v;
  if (c.temperature < 0.0 || c.regrowth_temperature < 0.0) v.emplace_back("temperature >= 0");
  if (c.max_retries < 0) v.emplace_back("max_retries >= 0");
  if (!(c.timeout_seconds > 0.0)) v.emplace_back("timeout_seconds > 0");
  if (c.max_output_tokens < 1) v.emplace_back("max_output_tokens >= 1");
  return v;
}

struct HttpRequest {
  std::string base_url;
  std::string path;
  std::string body;
  std::string bearer;  // empty when no key is configured
  double timeout_seconds = 60.0;
};

/// Returns the response body, or nullopt on a transport failure or non-2xx
/// status.
using ChatTransport = std::function<std::optional<std::string>(const HttpRequest&)>;

/// Plain HTTP(S) POST through cpp-httplib.
inline ChatTransport http_transport() {
  return [](const HttpRequest& req) -> std::optional<std::string> {
    httplib::Client cli(req.base_url);
    const auto secs = static_cast<time_t>(req.timeout_seconds);
    const auto usecs = static_cast<time_t>((req.timeout_seconds - double(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!req.bearer.empty()) headers.emplace("Authorization", "Bearer " + req.bearer);
    auto res = cli.Post(req.path, headers, req.body, "application/json");
    if (!res || res->status < 200 || res->status >= 300) return std::nullopt;
    return res->body;
  };
}

/// Prompt templates read from versioned text files. Placeholders:
/// {analyzer_report} {path_context} {schema} {fewshot} {negative_constraints}.
class PromptTemplates {
 public:
  explicit PromptTemplates(std::string dir = default_dir()) : dir_(std::move(dir)) {
    system_ = load("system.txt");
    for (int t = 1; t <= 3; ++t) tier_[static_cast<std::size_t>(t) - 1] = load("tier" + std::to_string(t) + ".txt");
    regrow_ = load("regrow.txt");
    repair_ = load("repair.txt");
  }

  static std::string default_dir() {
    if (const char* env = std::getenv("VRPTUNE_PROMPT_DIR")) return env;
#ifdef VRPTUNE_PROMPT_DIR
    return VRPTUNE_PROMPT_DIR;
#else
    return "prompts";
#endif
  }

  const std::string& system() const noexcept { return system_; }

  std::string render(const PromptContext& c) const {
    std::string t = tier_[static_cast<std::size_t>(c.tier) - 1];
    if (!c.negative_constraints.empty()) t += "\n" + regrow_;
    std::string neg;
    for (const auto& n : c.negative_constraints) neg += "---\n" + n;
    return fill(t, {{"{analyzer_report}", c.report.summary_text},
                    {"{path_context}", path_context_text(c)},
                    {"{schema}", c.schema.dump(2)},
                    {"{fewshot}", c.fewshot},
                    {"{negative_constraints}", neg}});
  }

  std::string repair(const std::string& errors) const { return fill(repair_, {{"{errors}", errors}}); }

 private:
  std::string load(const std::string& name) const {
    std::ifstream in(dir_ + "/" + name);
    if (!in) throw std::runtime_error("missing prompt template " + dir_ + "/" + name);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  static std::string fill(std::string t, const std::vector<std::pair<std::string, std::string>>& subs) {
    for (const auto& [key, value] : subs)
      for (std::size_t pos = 0; (pos = t.find(key, pos)) != std::string::npos; pos += value.size())
        t.replace(pos, key.size(), value);
    return t;
  }

  std::string dir_;
  std::string system_;
  std::array<std::string, 3> tier_;
  std::string regrow_;
  std::string repair_;
};

/// Parses a reply of the form {"descriptor": {...}, "rationale": "..."}.
/// A bare descriptor object is accepted with an empty rationale.
inline std::variant<Component, std::string> parse_reply(int tier, const std::string& content) {
  std::string_view s = content;
  // tolerate a fenced block around the object
  const auto open = s.find('{'), close = s.rfind('}');
  if (open == std::string_view::npos || close == std::string_view::npos || close < open)
    return std::string("reply contains no JSON object");
  const auto j = json::parse(s.substr(open, close - open + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::string("reply is not valid JSON");
  json desc = j;
  std::string rationale;
  if (j.contains("descriptor")) {
    desc = j.at("descriptor");
    if (j.contains("rationale")) {
      if (!j.at("rationale").is_string()) return std::string("rationale must be a string");
      rationale = j.at("rationale").get<std::string>();
    }
    for (const auto& [k, _] : j.items())
      if (k != "descriptor" && k != "rationale") return "unknown field " + k;
  }
  auto p = parse_descriptor(tier, desc);
  if (!p.descriptor) return p.errors.front();
  if (auto v = validate_descriptor(*p.descriptor); !v.empty()) return v.front();
  return Component{*p.descriptor, rationale};
}

/// Chat-completions backend. Each slot gets up to two repair re-prompts;
/// after that, or when the endpoint is unreachable, slots are filled from
/// the catalog.
class LlmGenerator : public Generator {
 public:
  static constexpr int kRepairs = 2;

  LlmGenerator(LlmEndpointConfig cfg, ChatTransport transport, PromptTemplates templates = PromptTemplates{},
               std::ostream* warn = &std::cerr)
      : cfg_(std::move(cfg)), transport_(std::move(transport)), templates_(std::move(templates)), warn_(warn) {}

  std::vector<Candidate> generate(const PromptContext& ctx, int k, std::uint64_t seed) override {
    std::vector<Candidate> out;
    for (int i = 0; i < k; ++i) out.push_back(slot(ctx, i, derive_seed(seed, static_cast<std::uint64_t>(i))));
    return out;
  }

  Candidate propose_distinct(const PromptContext& ctx, std::uint64_t seed) override { return slot(ctx, 0, seed); }

  std::string name() const override { return "llm"; }

  long requests() const noexcept { return requests_; }

 private:
  Candidate slot(const PromptContext& ctx, int index, std::uint64_t seed) {
    json messages = json::array({{{"role", "system"}, {"content", templates_.system()}},
                                 {{"role", "user"}, {"content", templates_.render(ctx)}}});
    const double temp = ctx.negative_constraints.empty() ? cfg_.temperature : cfg_.regrowth_temperature;
    for (int attempt = 0; attempt <= kRepairs; ++attempt) {
      const auto content = chat(messages, temp);
      if (!content) {
        log({"unreachable", ctx.tier, index, attempt, cfg_.base_url});
        if (warn_) *warn_ << "warning: generator endpoint unreachable, sampling from the catalog\n";
        return fallback(ctx, index, seed, attempt);
      }
      auto parsed = parse_reply(ctx.tier, *content);
      if (auto* c = std::get_if<Component>(&parsed)) {
        log({"accepted", ctx.tier, index, attempt, "repairs " + std::to_string(attempt)});
        return {*c, "llm", attempt};
      }
      const auto& err = std::get<std::string>(parsed);
      if (attempt == kRepairs) break;
      log({"repair", ctx.tier, index, attempt + 1, err});
      messages.push_back({{"role", "assistant"}, {"content", *content}});
      messages.push_back({{"role", "user"}, {"content", templates_.repair(err)}});
    }
    return fallback(ctx, index, seed, kRepairs);
  }

  Candidate fallback(const PromptContext& ctx, int index, std::uint64_t seed, int repairs) {
    log({"fallback", ctx.tier, index, repairs, "catalog sample"});
    MockGenerator mock;
    auto c = ctx.negative_constraints.empty() ? mock.generate(ctx, 1, seed).front() : mock.propose_distinct(ctx, seed);
    c.source = "fallback";
    c.repairs = repairs;
    return c;
  }

  std::optional<std::string> chat(const json& messages, double temperature) {
    HttpRequest req;
    req.base_url = cfg_.base_url;
    req.path = cfg_.path;
    req.timeout_seconds = cfg_.timeout_seconds;
    if (const char* key = std::getenv(cfg_.api_key_env_var_name.c_str())) req.bearer = key;
    req.body = json{{"model", cfg_.model_name},
                    {"messages", messages},
                    {"temperature", temperature},
                    {"max_tokens", cfg_.max_output_tokens}}
                   .dump();
    for (int t = 0; t <= cfg_.max_retries; ++t) {
      ++requests_;
      auto body = transport_(req);
      if (!body) continue;
      const auto j = json::parse(*body, nullptr, false);
      if (j.is_discarded()) continue;
      try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const json::exception&) {
        continue;
      }
    }
    return std::nullopt;
  }

  LlmEndpointConfig cfg_;
  ChatTransport transport_;
  PromptTemplates templates_;
  std::ostream* warn_;
  long requests_ = 0;
};

// ------------------------------------------------------------- regrowth ---

using TextDistance = std::function<double(const std::string&, const std::string&)>;

struct RegrowResult {
  std::optional<Candidate> candidate;
  int attempts = 0;
  /// Per attempt: the distance to the closest constraint, or for a rejected
  /// attempt the first one found at or below epsilon.
  std::vector<double> min_distance;
};

/// Accepts the first proposal whose distance to every negative constraint
/// exceeds epsilon.
inline RegrowResult regrow(const PromptContext& ctx, Generator& gen, const TextDistance& distance, double epsilon,
                           int max_attempts, std::uint64_t seed) {
  if (ctx.negative_constraints.empty()) throw std::invalid_argument("regrow needs negative constraints");
  RegrowResult r;
  for (int a = 0; a < max_attempts; ++a) {
    ++r.attempts;
    auto c = gen.propose_distinct(ctx, derive_seed(seed, static_cast<std::uint64_t>(a)));
    const auto text = c.text();
    double closest = std::numeric_limits<double>::infinity();
    for (const auto& n : ctx.negative_constraints) {
      closest = std::min(closest, distance(text, n));
      if (closest <= epsilon) break;
    }
    r.min_distance.push_back(closest);
    if (closest > epsilon) {
      r.candidate = std::move(c);
      break;
    }
  }
  return r;
}

}  // namespace vrptune

#endif  // VRPTUNE_GENERATOR_HPP
