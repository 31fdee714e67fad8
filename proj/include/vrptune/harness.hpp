// Benchmark harness: synthetic instances, reference costs, benchmark runs,
// size-bucket reports, rank comparison, convergence plots, configuration
// files and ablation modes.
#ifndef VRPTUNE_HARNESS_HPP
#define VRPTUNE_HARNESS_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvrp.hpp"
#include "generator.hpp"
#include "hgs.hpp"
#include "hierarchy.hpp"
#include "mcts.hpp"
#include "rng.hpp"

namespace vrptune {

// ----------------------------------------------------------- synthetic ---

inline constexpr int kSyntheticVersion = 1;

enum class Layout { uniform, clustered, mixed };
enum class DemandLaw { unit, small, large, heavy };

inline std::string to_string(Layout l) {
  switch (l) {
    case Layout::uniform: return "uniform";
    case Layout::clustered: return "clustered";
    case Layout::mixed: return "mixed";
  }
  return "";
}

inline std::string to_string(DemandLaw d) {
  switch (d) {
    case DemandLaw::unit: return "unit";
    case DemandLaw::small: return "small";
    case DemandLaw::large: return "large";
    case DemandLaw::heavy: return "heavy";
  }
  return "";
}

inline std::optional<Layout> layout_from(std::string_view s) {
  for (auto l : {Layout::uniform, Layout::clustered, Layout::mixed})
    if (to_string(l) == s) return l;
  return std::nullopt;
}

inline std::optional<DemandLaw> demand_law_from(std::string_view s) {
  for (auto d : {DemandLaw::unit, DemandLaw::small, DemandLaw::large, DemandLaw::heavy})
    if (to_string(d) == s) return d;
  return std::nullopt;
}

struct SyntheticSpec {
  int count = 4;
  int n = 500;
  Layout layout = Layout::uniform;
  DemandLaw demand = DemandLaw::small;
  double route_size = 10.0;  // mean customers per route the capacity allows
  std::uint64_t seed = 0;
  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

namespace detail {

inline constexpr double kGrid = 1000.0;

inline Point clustered_point(Rng& rng, const std::vector<Point>& centers) {
  for (;;) {
    const auto& c = centers[uniform_index(rng, centers.size())];
    // exponential radius around the center, as in the X benchmark generator
    const double r = -40.0 * std::log(1.0 - uniform_real(rng));
    const double a = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
    const Point p{std::round(c.x + r * std::cos(a)), std::round(c.y + r * std::sin(a))};
    if (p.x >= 0 && p.x <= kGrid && p.y >= 0 && p.y <= kGrid) return p;
  }
}

inline double draw_demand(Rng& rng, DemandLaw law) {
  switch (law) {
    case DemandLaw::unit: return 1.0;
    case DemandLaw::small: return uniform_int(rng, 1, 10);
    case DemandLaw::large: return uniform_int(rng, 50, 100);
    case DemandLaw::heavy: return bernoulli(rng, 0.7) ? uniform_int(rng, 1, 10) : uniform_int(rng, 50, 100);
  }
  return 1.0;
}

}  // namespace detail

inline std::vector<std::string> validate_synthetic(const SyntheticSpec& s) {
  std::vector<std::string> v;
  if (s.count < 1) v.emplace_back("count >= 1");
  if (s.n < 1) v.emplace_back("n >= 1");
  if (!(s.route_size >= 1.0)) v.emplace_back("route_size >= 1");
  return v;
}

/// Seeded instances on a 1000 x 1000 integer grid with a central depot.
inline std::vector<Instance> generate_instances(const SyntheticSpec& spec) {
  if (auto v = validate_synthetic(spec); !v.empty()) throw std::invalid_argument("synthetic spec: " + v.front());
  std::vector<Instance> out;
  for (int i = 0; i < spec.count; ++i) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(kSyntheticVersion), static_cast<std::uint64_t>(i)));
    std::vector<Point> centers;
    const int n_centers = uniform_int(rng, 3, 8);
    for (int c = 0; c < n_centers; ++c)
      centers.push_back({std::round(uniform_real(rng, 0, detail::kGrid)), std::round(uniform_real(rng, 0, detail::kGrid))});
    std::vector<Customer> cs;
    double total = 0.0, largest = 0.0;
    for (int k = 1; k <= spec.n; ++k) {
      const bool clustered =
          spec.layout == Layout::clustered || (spec.layout == Layout::mixed && k <= spec.n / 2);
      const Point p = clustered ? detail::clustered_point(rng, centers)
                                : Point{std::round(uniform_real(rng, 0, detail::kGrid)),
                                        std::round(uniform_real(rng, 0, detail::kGrid))};
      const double q = detail::draw_demand(rng, spec.demand);
      total += q;
      largest = std::max(largest, q);
      cs.push_back({k, p, q});
    }
    const double cap = std::max(largest, std::ceil(spec.route_size * total / spec.n));
    const std::string name = "syn" + std::to_string(kSyntheticVersion) + "-" + to_string(spec.layout) + "-n" +
                             std::to_string(spec.n) + "-s" + std::to_string(spec.seed) + "-" + std::to_string(i);
    out.emplace_back(name, Point{detail::kGrid / 2, detail::kGrid / 2}, std::move(cs), cap);
  }
  return out;
}

// ----------------------------------------------------------- reference ---

struct ReferenceOptions {
  long iterations = 5000;
  long max_no_improve = 2000;
  std::uint64_t seed = 0x7265660aULL;
  friend bool operator==(const ReferenceOptions&, const ReferenceOptions&) = default;
};

/// Cost of a long default-HGS run; the gap denominator for instances
/// without a BKS.
inline double reference_cost(const Instance& inst, const ReferenceOptions& opt = {}) {
  HgsConfig c;
  c.seed = opt.seed;
  c.budget.max_iterations = opt.iterations;
  c.budget.max_no_improve = opt.max_no_improve;
  c.granularity = std::min(c.granularity, std::max(1, inst.size() - 1));
  const auto r = run_hgs(inst, c);
  if (!r.best.feasible) throw std::runtime_error("reference run found no feasible solution for " + inst.name());
  return r.best.cost;
}

/// BKS when present, otherwise a reference run. Runs `threads` instances at
/// a time.
inline std::vector<TrainingInstance> with_references(const std::vector<Instance>& insts,
                                                     const ReferenceOptions& opt = {}, unsigned threads = 1) {
  std::vector<TrainingInstance> out(insts.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < insts.size();)
      out[i] = {insts[i], insts[i].bks() ? *insts[i].bks() : reference_cost(insts[i], opt)};
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(threads, insts.size()); ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  return out;
}

// ------------------------------------------------------------- metrics ---

struct RunMetrics {
  std::string instance_name;
  int n = 0;
  int run = 0;
  double objective = 0.0;
  std::optional<double> bks;
  std::optional<double> gap;
  double wall_seconds = 0.0;
  std::vector<TracePoint> trace;
  std::uint64_t seed = 0;
};

inline constexpr std::array<std::pair<int, int>, 5> kBuckets{{{100, 200}, {200, 400}, {400, 600}, {600, 800}, {800, 1000}}};

/// Index into kBuckets; the last bucket is closed on the right.
inline std::optional<std::size_t> bucket_of(int n) {
  for (std::size_t i = 0; i < kBuckets.size(); ++i) {
    const auto [lo, hi] = kBuckets[i];
    if (n >= lo && (n < hi || (i + 1 == kBuckets.size() && n == hi))) return i;
  }
  return std::nullopt;
}

inline std::string bucket_label(std::size_t i) {
  const auto [lo, hi] = kBuckets.at(i);
  return "[" + std::to_string(lo) + "," + std::to_string(hi) + (i + 1 == kBuckets.size() ? "]" : ")");
}

struct BucketStats {
  std::size_t instances = 0;
  double obj_mean = 0.0;
  std::optional<double> gap_mean;
};

struct BenchmarkReport {
  std::string method;
  std::array<BucketStats, 5> buckets{};
  std::optional<int> bc;
  std::optional<double> average_rank;
  std::vector<RunMetrics> per_instance;  // one row per (instance, run)
};

struct InstanceSummary {
  std::string name;
  int n = 0;
  double objective = 0.0;  // mean over runs
  std::optional<double> gap;
};

/// Per-instance means over runs, in first-appearance order.
inline std::vector<InstanceSummary> summarize_instances(const std::vector<RunMetrics>& rows) {
  std::vector<InstanceSummary> out;
  std::map<std::string, std::size_t> at;
  std::vector<std::pair<double, int>> obj;
  std::vector<std::pair<double, int>> gaps;
  for (const auto& r : rows) {
    auto [it, fresh] = at.emplace(r.instance_name, out.size());
    if (fresh) {
      out.push_back({r.instance_name, r.n, 0.0, std::nullopt});
      obj.emplace_back(0.0, 0);
      gaps.emplace_back(0.0, 0);
    }
    obj[it->second].first += r.objective;
    obj[it->second].second += 1;
    if (r.gap) {
      gaps[it->second].first += *r.gap;
      gaps[it->second].second += 1;
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].objective = obj[i].first / obj[i].second;
    if (gaps[i].second) out[i].gap = gaps[i].first / gaps[i].second;
  }
  return out;
}

inline BenchmarkReport build_report(std::string method, std::vector<RunMetrics> rows) {
  BenchmarkReport rep;
  rep.method = std::move(method);
  std::array<double, 5> gsum{};
  std::array<int, 5> gcount{};
  for (const auto& s : summarize_instances(rows)) {
    const auto b = bucket_of(s.n);
    if (!b) continue;
    auto& st = rep.buckets[*b];
    st.instances += 1;
    st.obj_mean += s.objective;
    if (s.gap) {
      gsum[*b] += *s.gap;
      gcount[*b] += 1;
    }
  }
  for (std::size_t b = 0; b < 5; ++b) {
    if (rep.buckets[b].instances) rep.buckets[b].obj_mean /= double(rep.buckets[b].instances);
    if (gcount[b]) rep.buckets[b].gap_mean = gsum[b] / gcount[b];
  }
  rep.per_instance = std::move(rows);
  return rep;
}

// ------------------------------------------------------------ compare ---

/// Ranks ascending, 1 = smallest; tied values share the mean of their ranks.
inline std::vector<double> average_ranks(const std::vector<double>& values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> rank(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (double(i + 1) + double(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

struct Comparison {
  std::vector<std::string> methods;
  std::vector<std::string> instances;
  std::vector<std::vector<double>> objective;  // [instance][method]
  std::vector<std::vector<double>> rank;
  std::vector<double> average_rank;
  std::vector<int> bc;
};

inline Comparison compare(const std::vector<BenchmarkReport>& reports) {
  if (reports.size() < 2) throw std::invalid_argument("compare needs at least two result sets");
  Comparison c;
  std::vector<std::map<std::string, double>> by;
  for (const auto& r : reports) {
    c.methods.push_back(r.method);
    auto& m = by.emplace_back();
    for (const auto& s : summarize_instances(r.per_instance)) m[s.name] = s.objective;
  }
  for (const auto& [name, _] : by.front()) c.instances.push_back(name);
  for (std::size_t k = 1; k < by.size(); ++k) {
    std::vector<std::string> names;
    for (const auto& [name, _] : by[k]) names.push_back(name);
    if (names != c.instances) throw std::invalid_argument("result sets cover different instances: " + c.methods[k]);
  }
  c.average_rank.assign(reports.size(), 0.0);
  c.bc.assign(reports.size(), 0);
  for (const auto& name : c.instances) {
    std::vector<double> obj;
    for (const auto& m : by) obj.push_back(m.at(name));
    const auto r = average_ranks(obj);
    const double best = *std::min_element(obj.begin(), obj.end());
    for (std::size_t k = 0; k < obj.size(); ++k) {
      c.average_rank[k] += r[k];
      c.bc[k] += obj[k] == best;
    }
    c.objective.push_back(obj);
    c.rank.push_back(r);
  }
  for (auto& r : c.average_rank) r /= double(c.instances.size());
  return c;
}

/// Copies BC and average rank from a comparison back into its reports.
inline void apply_comparison(std::vector<BenchmarkReport>& reports, const Comparison& c) {
  for (std::size_t k = 0; k < reports.size(); ++k) {
    reports[k].bc = c.bc[k];
    reports[k].average_rank = c.average_rank[k];
  }
}

// ------------------------------------------------------------ outputs ---

inline json to_json(const RunMetrics& m) {
  json trace = json::array();
  for (const auto& p : m.trace) trace.push_back({p.iteration, p.elapsed_seconds, p.best_cost});
  return {{"instance", m.instance_name},
          {"n", m.n},
          {"run", m.run},
          {"objective", m.objective},
          {"bks", m.bks ? json(*m.bks) : json()},
          {"gap", m.gap ? json(*m.gap) : json()},
          {"wall_seconds", m.wall_seconds},
          {"trace", trace},
          {"seed", m.seed}};
}

inline RunMetrics run_metrics_from_json(const json& j) {
  RunMetrics m;
  m.instance_name = j.at("instance").get<std::string>();
  m.n = j.at("n").get<int>();
  m.run = j.at("run").get<int>();
  m.objective = j.at("objective").get<double>();
  if (!j.at("bks").is_null()) m.bks = j.at("bks").get<double>();
  if (!j.at("gap").is_null()) m.gap = j.at("gap").get<double>();
  m.wall_seconds = j.at("wall_seconds").get<double>();
  for (const auto& p : j.at("trace")) m.trace.push_back({p[0].get<long>(), p[1].get<double>(), p[2].get<double>()});
  m.seed = j.at("seed").get<std::uint64_t>();
  return m;
}

inline json to_json(const BenchmarkReport& r) {
  json buckets = json::array();
  for (std::size_t b = 0; b < 5; ++b)
    buckets.push_back({{"bucket", bucket_label(b)},
                       {"instances", r.buckets[b].instances},
                       {"obj", r.buckets[b].obj_mean},
                       {"gap", r.buckets[b].gap_mean ? json(*r.buckets[b].gap_mean) : json()}});
  json rows = json::array();
  for (const auto& m : r.per_instance) rows.push_back(to_json(m));
  return {{"method", r.method},
          {"buckets", buckets},
          {"bc", r.bc ? json(*r.bc) : json()},
          {"average_rank", r.average_rank ? json(*r.average_rank) : json()},
          {"per_instance", rows}};
}

/// Rebuilds a report from its JSON; bucket figures are recomputed from the
/// rows, so reports stay a function of the stored metrics.
inline BenchmarkReport report_from_json(const json& j) {
  std::vector<RunMetrics> rows;
  for (const auto& m : j.at("per_instance")) rows.push_back(run_metrics_from_json(m));
  auto r = build_report(j.at("method").get<std::string>(), std::move(rows));
  if (!j.at("bc").is_null()) r.bc = j.at("bc").get<int>();
  if (!j.at("average_rank").is_null()) r.average_rank = j.at("average_rank").get<double>();
  return r;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

/// Table 1 layout: one row per size bucket with Obj and Gap, then BC and
/// average rank.
inline std::string report_csv(const BenchmarkReport& r) {
  std::ostringstream os;
  os << "method,bucket,instances,Obj,Gap\n";
  for (std::size_t b = 0; b < 5; ++b) {
    const auto& s = r.buckets[b];
    os << r.method << "," << bucket_label(b) << "," << s.instances << ","
       << (s.instances ? detail::fixed(s.obj_mean, 0) : "") << ","
       << (s.gap_mean ? format_percent(*s.gap_mean) : "") << "\n";
  }
  os << r.method << ",BC,," << (r.bc ? std::to_string(*r.bc) : "") << ",\n";
  os << r.method << ",Rank,," << (r.average_rank ? detail::fixed(*r.average_rank, 2) : "") << ",\n";
  return os.str();
}

inline std::string runs_csv(const BenchmarkReport& r) {
  std::ostringstream os;
  os << "instance,n,run,seed,objective,bks,gap,wall_seconds\n";
  for (const auto& m : r.per_instance)
    os << m.instance_name << "," << m.n << "," << m.run << "," << m.seed << "," << detail::format_double(m.objective) << ","
       << (m.bks ? detail::format_double(*m.bks) : "") << "," << (m.gap ? detail::format_double(*m.gap) : "") << ","
       << detail::fixed(m.wall_seconds, 3) << "\n";
  return os.str();
}

inline std::string comparison_csv(const Comparison& c) {
  std::ostringstream os;
  os << "method,BC,Rank\n";
  for (std::size_t k = 0; k < c.methods.size(); ++k)
    os << c.methods[k] << "," << c.bc[k] << "," << detail::fixed(c.average_rank[k], 4) << "\n";
  os << "\ninstance";
  for (const auto& m : c.methods) os << "," << m << "," << m << "_rank";
  os << "\n";
  for (std::size_t i = 0; i < c.instances.size(); ++i) {
    os << c.instances[i];
    for (std::size_t k = 0; k < c.methods.size(); ++k)
      os << "," << detail::format_double(c.objective[i][k]) << "," << detail::format_double(c.rank[i][k]);
    os << "\n";
  }
  return os.str();
}

/// Step plot of best cost against elapsed time.
inline std::string convergence_svg(const std::vector<TracePoint>& trace, const std::string& title) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << " " << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
     << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">seconds</text>\n";
  if (!trace.empty()) {
    double t1 = trace.back().elapsed_seconds, c0 = trace.front().best_cost, c1 = trace.back().best_cost;
    if (t1 <= 0.0) t1 = 1.0;
    if (c0 <= c1) c0 = c1 + 1.0;
    auto x = [&](double t) { return L + (W - L - R) * t / t1; };
    auto y = [&](double c) { return T + (H - T - B) * (c0 - c) / (c0 - c1); };
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < trace.size(); ++i) {
      if (i > 0) os << detail::fixed(x(trace[i].elapsed_seconds), 1) << "," << detail::fixed(y(trace[i - 1].best_cost), 1) << " ";
      os << detail::fixed(x(trace[i].elapsed_seconds), 1) << "," << detail::fixed(y(trace[i].best_cost), 1) << " ";
    }
    os << "\"/>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << T + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::format_double(c0) << "</text>\n";
    os << "<text x=\"" << L - 6 << "\" y=\"" << H - B
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::format_double(c1) << "</text>\n";
    os << "<text x=\"" << W - R << "\" y=\"" << H - B + 16
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << detail::fixed(t1, 1) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// -------------------------------------------------------------- bench ---

inline double time_budget_for(int n, double budget_factor, std::optional<double> override_seconds = std::nullopt) {
  if (override_seconds) return *override_seconds;
  return budget_factor * double(n);
}

struct BenchOptions {
  int runs = 10;
  double budget_factor = 2.4;
  std::optional<double> time_budget;  // overrides budget_factor * N
  long cycles = 0;                    // when > 0 (and no time budget applies), cycle-capped runs
  std::uint64_t seed = 0;
  unsigned workers = 1;
};

/// One deployment run. The solution is re-validated before any metric is
/// recorded.
inline std::pair<Solution, RunMetrics> solve_instance(const SolverAssembly& a, const Instance& inst,
                                                      const RunBudget& budget, std::uint64_t seed, int run = 0) {
  const auto t0 = std::chrono::steady_clock::now();
  auto res = run_assembly(a, inst, budget, seed);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto ev = evaluate_solution(inst, res.best);
  if (!ev.feasible || res.best.routes.empty())
    throw std::runtime_error("no feasible solution for " + inst.name());
  RunMetrics m;
  m.instance_name = inst.name();
  m.n = inst.size();
  m.run = run;
  m.objective = ev.cost;
  m.bks = inst.bks();
  if (m.bks) m.gap = gap(m.objective, *m.bks);
  m.wall_seconds = wall;
  m.trace = std::move(res.trace);
  m.seed = seed;
  return {std::move(res.best), std::move(m)};
}

inline std::uint64_t run_seed(std::uint64_t master, const std::string& instance, int run) {
  return derive_seed(master, hash_string(instance), static_cast<std::uint64_t>(run));
}

/// Every (instance, run) pair, `workers` at a time; rows come back in
/// (instance, run) order whatever the completion order.
inline BenchmarkReport bench(const SolverAssembly& a, const std::vector<Instance>& instances, const BenchOptions& opt,
                             const std::string& method = "method") {
  if (opt.runs < 1) throw std::invalid_argument("runs >= 1");
  std::vector<std::pair<std::size_t, int>> jobs;
  for (std::size_t i = 0; i < instances.size(); ++i)
    for (int r = 0; r < opt.runs; ++r) jobs.emplace_back(i, r);
  std::vector<RunMetrics> rows(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
      const auto& inst = instances[jobs[k].first];
      RunBudget b;
      if (opt.cycles > 0 && !opt.time_budget) b.cycles = opt.cycles;
      else b.seconds = time_budget_for(inst.size(), opt.budget_factor, opt.time_budget);
      try {
        rows[k] = solve_instance(a, inst, b, run_seed(opt.seed, inst.name(), jobs[k].second), jobs[k].second).second;
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(std::max(1u, opt.workers), jobs.size()); ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);
  return build_report(method, std::move(rows));
}

/// Names of instances lacking a BKS; gap columns stay empty for them.
inline std::vector<std::string> missing_bks(const std::vector<Instance>& instances) {
  std::vector<std::string> out;
  for (const auto& i : instances)
    if (!i.bks()) out.push_back(i.name());
  return out;
}

// ----------------------------------------------------------- ablation ---

enum class Ablation { full, fixed_decomp, fixed_param, no_pruning, no_regrowth, no_wmd, no_smd };

inline constexpr std::array<Ablation, 6> kAblationModes{Ablation::fixed_decomp, Ablation::fixed_param,
                                                        Ablation::no_pruning,   Ablation::no_regrowth,
                                                        Ablation::no_wmd,       Ablation::no_smd};

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::fixed_decomp: return "fixed-decomp";
    case Ablation::fixed_param: return "fixed-param";
    case Ablation::no_pruning: return "no-pruning";
    case Ablation::no_regrowth: return "no-regrowth";
    case Ablation::no_wmd: return "no-wmd";
    case Ablation::no_smd: return "no-smd";
  }
  return "";
}

inline std::optional<Ablation> ablation_from(std::string_view s) {
  for (auto a : {Ablation::full, Ablation::fixed_decomp, Ablation::fixed_param, Ablation::no_pruning,
                 Ablation::no_regrowth, Ablation::no_wmd, Ablation::no_smd})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

inline void apply_ablation(SearchConfig& c, Ablation a) {
  const auto def = default_assembly();
  switch (a) {
    case Ablation::full:
      break;
    case Ablation::fixed_decomp:
      c.pinned[1] = Component{def.tier2, def.rationale[1]};
      break;
    case Ablation::fixed_param:
      c.pinned[2] = Component{def.tier3, def.rationale[2]};
      c.clear_tier1_overrides = true;
      break;
    case Ablation::no_pruning:
      c.pruning = false;
      break;
    case Ablation::no_regrowth:
      c.regrowth = false;
      break;
    case Ablation::no_wmd:
      c.wsmd.lambda = 1.0;
      break;
    case Ablation::no_smd:
      c.wsmd.lambda = 0.0;
      break;
  }
}

// ------------------------------------------------------------- config ---

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AppConfig {
  SearchConfig search;
  std::string backend = "mock";
  double duplicate_rate = 0.0;  // mock only
  LlmEndpointConfig llm;
  std::vector<std::string> train_files;
  std::optional<SyntheticSpec> synthetic;
  std::string bks_file;
  ReferenceOptions reference;
  double budget_factor = 2.4;
  std::optional<double> time_budget;
  int runs = 10;
  unsigned workers = 1;
  std::string output_dir = ".";
  Ablation ablation = Ablation::full;
};

namespace detail {

/// Splits a value at top level: strings, numbers, booleans and flat arrays.
inline json parse_toml_value(std::string_view v, const std::string& where) {
  v = trim(v);
  if (v.empty()) throw ConfigError(where + ": missing value");
  if (v.front() == '[') {
    if (v.back() != ']') throw ConfigError(where + ": unterminated array");
    json arr = json::array();
    std::string_view inner = v.substr(1, v.size() - 2);
    std::size_t i = 0;
    while (i < inner.size()) {
      std::size_t j = i;
      bool quoted = false;
      while (j < inner.size() && (quoted || inner[j] != ',')) {
        if (inner[j] == '"') quoted = !quoted;
        ++j;
      }
      const auto item = trim(inner.substr(i, j - i));
      if (!item.empty()) arr.push_back(parse_toml_value(item, where));
      i = j + 1;
    }
    return arr;
  }
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ConfigError(where + ": unterminated string");
    return std::string(v.substr(1, v.size() - 2));
  }
  if (v == "true") return true;
  if (v == "false") return false;
  double d = 0.0;
  std::string s(v);
  std::erase(s, '_');
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(where + ": cannot read value '" + std::string(v) + "'");
  return d;
}

}  // namespace detail

/// Flat TOML subset: `[section]` headers, `key = value` lines, `#` comments,
/// strings, numbers, booleans and one-line arrays. Returns "section.key" ->
/// value with the line each came from.
inline std::map<std::string, std::pair<json, int>> parse_toml(std::string_view text, const std::string& origin) {
  std::map<std::string, std::pair<json, int>> out;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string where = origin + ":" + std::to_string(lineno);
    std::string line;
    bool quoted = false;
    for (char c : raw) {
      if (c == '"') quoted = !quoted;
      if (c == '#' && !quoted) break;
      line += c;
    }
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(detail::trim(t.substr(1, t.size() - 2)));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    const auto key = std::string(detail::trim(t.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    const auto full = section.empty() ? key : section + "." + key;
    if (out.contains(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
    out[full] = {detail::parse_toml_value(t.substr(eq + 1), where), lineno};
  }
  return out;
}

/// Reads a configuration file over the defaults. Unknown keys and values of
/// the wrong type are errors carrying the file and line.
inline AppConfig parse_config(std::string_view text, const std::string& origin = "config", AppConfig cfg = {}) {
  const auto kv = parse_toml(text, origin);
  for (const auto& [key, entry] : kv) {
    const auto& [v, line] = entry;
    const std::string where = origin + ":" + std::to_string(line) + ": " + key;
    auto num = [&]() -> double {
      if (!v.is_number()) throw ConfigError(where + " must be a number");
      return v.get<double>();
    };
    auto integer = [&]() -> long {
      const double d = num();
      if (d != std::floor(d)) throw ConfigError(where + " must be an integer");
      return static_cast<long>(d);
    };
    auto str = [&]() -> std::string {
      if (!v.is_string()) throw ConfigError(where + " must be a string");
      return v.get<std::string>();
    };
    auto boolean = [&]() -> bool {
      if (!v.is_boolean()) throw ConfigError(where + " must be true or false");
      return v.get<bool>();
    };
    auto synth = [&]() -> SyntheticSpec& {
      if (!cfg.synthetic) cfg.synthetic = SyntheticSpec{};
      return *cfg.synthetic;
    };
    auto& s = cfg.search;
    if (key == "seed") s.seed = static_cast<std::uint64_t>(integer());
    else if (key == "workers") cfg.workers = static_cast<unsigned>(integer());
    else if (key == "backend") cfg.backend = str();
    else if (key == "lambda") s.wsmd.lambda = num();
    else if (key == "epsilon") s.epsilon = num();
    else if (key == "k") s.k = static_cast<int>(integer());
    else if (key == "cp") s.cp = num();
    else if (key == "time_budget") cfg.time_budget = num();
    else if (key == "budget_factor") cfg.budget_factor = num();
    else if (key == "runs") cfg.runs = static_cast<int>(integer());
    else if (key == "output_dir") cfg.output_dir = str();
    else if (key == "bks_file") cfg.bks_file = str();
    else if (key == "ablation") {
      const auto a = ablation_from(str());
      if (!a) throw ConfigError(where + ": unknown ablation mode");
      cfg.ablation = *a;
    } else if (key == "train_files") {
      if (!v.is_array()) throw ConfigError(where + " must be an array of paths");
      cfg.train_files.clear();
      for (const auto& p : v) {
        if (!p.is_string()) throw ConfigError(where + " must be an array of paths");
        cfg.train_files.push_back(p.get<std::string>());
      }
    } else if (key == "search.eval_budget") s.eval_budget = integer();
    else if (key == "search.rollout_count") s.rollout_count = static_cast<int>(integer());
    else if (key == "search.per_eval_seconds") s.per_eval_seconds = num();
    else if (key == "search.per_eval_cycles") s.per_eval_cycles = integer();
    else if (key == "search.iteration_scale") s.per_eval_iteration_scale = num();
    else if (key == "search.pruning") s.pruning = boolean();
    else if (key == "search.regrowth") s.regrowth = boolean();
    else if (key == "search.regrow_attempts") s.regrow_attempts = static_cast<int>(integer());
    else if (key == "search.refill_limit") s.refill_limit = static_cast<int>(integer());
    else if (key == "search.deterministic") s.deterministic = boolean();
    else if (key == "search.threads") s.threads = static_cast<unsigned>(integer());
    else if (key == "mock.duplicate_rate") cfg.duplicate_rate = num();
    else if (key == "synthetic.count") synth().count = static_cast<int>(integer());
    else if (key == "synthetic.n") synth().n = static_cast<int>(integer());
    else if (key == "synthetic.seed") synth().seed = static_cast<std::uint64_t>(integer());
    else if (key == "synthetic.route_size") synth().route_size = num();
    else if (key == "synthetic.layout") {
      const auto l = layout_from(str());
      if (!l) throw ConfigError(where + ": expected uniform, clustered or mixed");
      synth().layout = *l;
    } else if (key == "synthetic.demand") {
      const auto d = demand_law_from(str());
      if (!d) throw ConfigError(where + ": expected unit, small, large or heavy");
      synth().demand = *d;
    } else if (key == "reference.iterations") cfg.reference.iterations = integer();
    else if (key == "reference.max_no_improve") cfg.reference.max_no_improve = integer();
    else if (key == "reference.seed") cfg.reference.seed = static_cast<std::uint64_t>(integer());
    else if (key == "llm.base_url") cfg.llm.base_url = str();
    else if (key == "llm.path") cfg.llm.path = str();
    else if (key == "llm.model") cfg.llm.model_name = str();
    else if (key == "llm.temperature") cfg.llm.temperature = num();
    else if (key == "llm.regrowth_temperature") cfg.llm.regrowth_temperature = num();
    else if (key == "llm.max_output_tokens") cfg.llm.max_output_tokens = static_cast<int>(integer());
    else if (key == "llm.timeout_seconds") cfg.llm.timeout_seconds = num();
    else if (key == "llm.max_retries") cfg.llm.max_retries = static_cast<int>(integer());
    else if (key == "llm.api_key_env") cfg.llm.api_key_env_var_name = str();
    else throw ConfigError(where + ": unknown key");
  }
  return cfg;
}

inline std::vector<std::string> validate_config(const AppConfig& c) {
  auto v = validate_search_config(c.search);
  if (c.backend != "mock" && c.backend != "llm") v.emplace_back("backend must be mock or llm");
  if (!(c.duplicate_rate >= 0.0 && c.duplicate_rate < 1.0)) v.emplace_back("mock.duplicate_rate in [0,1)");
  if (!(c.budget_factor > 0.0)) v.emplace_back("budget_factor > 0");
  if (c.time_budget && !(*c.time_budget > 0.0)) v.emplace_back("time_budget > 0");
  if (c.runs < 1) v.emplace_back("runs >= 1");
  if (c.workers < 1) v.emplace_back("workers >= 1");
  if (c.synthetic)
    for (auto& e : validate_synthetic(*c.synthetic)) v.push_back("synthetic: " + e);
  if (c.reference.iterations < 1) v.emplace_back("reference.iterations >= 1");
  for (auto& e : validate_endpoint(c.llm)) v.push_back("llm: " + e);
  return v;
}

/// Every setting, for logs and for protocol checks.
inline json config_snapshot(const AppConfig& c) {
  const auto& s = c.search;
  json j = {{"seed", s.seed},
            {"workers", c.workers},
            {"backend", c.backend},
            {"lambda", s.wsmd.lambda},
            {"epsilon", s.epsilon},
            {"k", s.k},
            {"cp", s.cp},
            {"time_budget", c.time_budget ? json(*c.time_budget) : json()},
            {"budget_factor", c.budget_factor},
            {"runs", c.runs},
            {"output_dir", c.output_dir},
            {"bks_file", c.bks_file},
            {"ablation", to_string(c.ablation)},
            {"train_files", c.train_files},
            {"search",
             {{"eval_budget", s.eval_budget},
              {"rollout_count", s.rollout_count},
              {"per_eval_seconds", s.per_eval_seconds},
              {"per_eval_cycles", s.per_eval_cycles},
              {"iteration_scale", s.per_eval_iteration_scale},
              {"pruning", s.pruning},
              {"regrowth", s.regrowth},
              {"regrow_attempts", s.regrow_attempts},
              {"refill_limit", s.refill_limit},
              {"deterministic", s.deterministic},
              {"threads", s.threads}}},
            {"mock", {{"duplicate_rate", c.duplicate_rate}}},
            {"reference",
             {{"iterations", c.reference.iterations},
              {"max_no_improve", c.reference.max_no_improve},
              {"seed", c.reference.seed}}},
            {"llm",
             {{"base_url", c.llm.base_url},
              {"path", c.llm.path},
              {"model", c.llm.model_name},
              {"temperature", c.llm.temperature},
              {"regrowth_temperature", c.llm.regrowth_temperature},
              {"max_output_tokens", c.llm.max_output_tokens},
              {"timeout_seconds", c.llm.timeout_seconds},
              {"max_retries", c.llm.max_retries},
              {"api_key_env", c.llm.api_key_env_var_name}}}};
  if (c.synthetic)
    j["synthetic"] = {{"count", c.synthetic->count},
                      {"n", c.synthetic->n},
                      {"layout", to_string(c.synthetic->layout)},
                      {"demand", to_string(c.synthetic->demand)},
                      {"route_size", c.synthetic->route_size},
                      {"seed", c.synthetic->seed}};
  return j;
}

/// Small named profile for desk-scale runs: N = 100 training instances,
/// 100 evaluations, one short cycle per evaluation.
inline AppConfig desk_profile() {
  AppConfig c;
  c.search.k = 4;
  c.search.eval_budget = 100;
  c.search.per_eval_cycles = 1;
  c.search.per_eval_iteration_scale = 0.02;
  c.synthetic = SyntheticSpec{2, 100, Layout::uniform, DemandLaw::small, 10.0, 0};
  c.reference.iterations = 3000;
  c.reference.max_no_improve = 1500;
  return c;
}

// ------------------------------------------------------------ develop ---

/// Loads training instances from files (with BKS from the table, when
/// given) or generates the synthetic set.
inline std::vector<Instance> training_instances(const AppConfig& c) {
  std::vector<Instance> out;
  std::map<std::string, double> bks;
  if (!c.bks_file.empty()) bks = parse_bks_table(read_file(c.bks_file));
  for (const auto& f : c.train_files) {
    auto inst = load_instance(f);
    if (auto it = bks.find(inst.name()); it != bks.end()) inst = inst.with_bks(it->second);
    out.push_back(std::move(inst));
  }
  if (c.synthetic) {
    auto syn = generate_instances(*c.synthetic);
    out.insert(out.end(), syn.begin(), syn.end());
  }
  if (out.empty()) throw ConfigError("no training instances: set train_files or a [synthetic] section");
  return out;
}

inline std::unique_ptr<Generator> make_generator(const AppConfig& c, std::ostream* warn = &std::cerr) {
  if (c.backend == "llm") return std::make_unique<LlmGenerator>(c.llm, http_transport(), PromptTemplates(), warn);
  MockOptions opt;
  opt.duplicate_rate = c.duplicate_rate;
  return std::make_unique<MockGenerator>(opt);
}

/// Search config with the ablation mode applied.
inline SearchConfig effective_search(const AppConfig& c) {
  auto s = c.search;
  apply_ablation(s, c.ablation);
  return s;
}

inline json to_json(const SearchStats& s) {
  return {{"evaluations", s.evaluations}, {"cache_hits", s.cache_hits},       {"expansions", s.expansions},
          {"pruned", s.pruned},           {"regrowth_attempts", s.regrowth_attempts}, {"regrown", s.regrown},
          {"degraded", s.degraded}};
}

struct DevelopRun {
  std::vector<TrainingInstance> train;
  SearchConfig search;  // after the ablation
  DevelopResult result;
};

/// Training set with references, analyzer report, evaluator and search,
/// wired from one configuration.
inline DevelopRun run_develop(const AppConfig& c, Generator& gen, SearchLog& log, const json* resume = nullptr) {
  if (auto v = validate_config(c); !v.empty()) throw ConfigError("invalid configuration: " + v.front());
  DevelopRun out;
  const auto insts = training_instances(c);
  out.train = with_references(insts, c.reference, c.workers);
  out.search = effective_search(c);
  const auto report = analyze(insts);
  const auto evaluator = make_evaluator(out.train, out.search, c.workers);
  out.result = develop(out.search, gen, report, evaluator, log, resume);
  return out;
}

/// Summary written next to the best assembly.
inline json develop_summary(const DevelopRun& r) {
  json names = json::array();
  for (const auto& t : r.train) names.push_back({{"instance", t.instance.name()}, {"reference", t.reference}});
  return {{"best_evaluation", r.result.best_evaluation},
          {"record", to_json(r.result.record)},
          {"stats", to_json(r.result.stats)},
          {"training", names}};
}

}  // namespace vrptune

#endif  // VRPTUNE_HARNESS_HPP
