#ifndef VRPTUNE_HGS_HPP
#define VRPTUNE_HGS_HPP

// Hybrid genetic search for the CVRP: giant-tour encoding, Split, order
// crossover, granular local search, biased fitness and an adaptive capacity
// penalty. Used for the global search and for every subproblem.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cvrp.hpp"
#include "rng.hpp"

namespace vrptune {

struct OperatorToggles {
  bool relocate = true;
  bool swap11 = true;
  bool swap22 = true;
  bool swap33 = false;  // expensive; meant for small subproblems
  bool two_opt = true;
  bool two_opt_star = true;
  friend bool operator==(const OperatorToggles&, const OperatorToggles&) = default;
};

/// Zero means "no limit" for every field. With seconds > 0 the no-improvement
/// limit triggers a population restart instead of termination.
struct HgsBudget {
  long max_iterations = 0;
  long max_no_improve = 5000;
  double seconds = 0.0;
  friend bool operator==(const HgsBudget&, const HgsBudget&) = default;
};

struct HgsConfig {
  int population_size = 25;
  int generation_size = 40;
  double elite_fraction = 0.16;
  int granularity = 20;
  /// Initial penalty per unit of excess load, as a multiple of
  /// (max distance / max demand) of the instance.
  double capacity_penalty_init = 1.0;
  double penalty_adapt_factor = 1.2;
  double target_feasible_ratio = 0.2;
  int diversity_neighbors = 5;
  OperatorToggles operators;
  HgsBudget budget;
  std::uint64_t seed = 1;
  friend bool operator==(const HgsConfig&, const HgsConfig&) = default;
};

/// Returns one message per violated bound; empty when valid.
/// `n_customers` > 0 additionally checks granularity <= N - 1.
inline std::vector<std::string> validate_hgs_config(const HgsConfig& c, int n_customers = 0) {
  std::vector<std::string> v;
  if (c.population_size < 2) v.emplace_back("population_size >= 2");
  if (c.generation_size < 1) v.emplace_back("generation_size >= 1");
  if (!(c.elite_fraction > 0.0 && c.elite_fraction <= 1.0)) v.emplace_back("elite_fraction in (0,1]");
  if (c.elite_fraction * c.population_size < 1.0) v.emplace_back("elite_fraction * population_size >= 1");
  if (c.granularity < 1) v.emplace_back("granularity >= 1");
  if (n_customers > 0 && c.granularity > n_customers - 1 && n_customers > 1)
    v.emplace_back("granularity <= N - 1");
  if (!(c.capacity_penalty_init > 0.0)) v.emplace_back("capacity_penalty_init > 0");
  if (!(c.penalty_adapt_factor > 1.0)) v.emplace_back("penalty_adapt_factor > 1");
  if (!(c.target_feasible_ratio > 0.0 && c.target_feasible_ratio < 1.0))
    v.emplace_back("target_feasible_ratio in (0,1)");
  if (c.diversity_neighbors < 1) v.emplace_back("diversity_neighbors >= 1");
  if (c.budget.max_iterations < 0 || c.budget.max_no_improve < 0 || c.budget.seconds < 0)
    v.emplace_back("budget limits >= 0");
  if (c.budget.max_iterations == 0 && c.budget.max_no_improve == 0 && c.budget.seconds == 0.0)
    v.emplace_back("budget needs at least one positive limit");
  return v;
}

inline double excess_load(const Instance& inst, const std::vector<Route>& routes) {
  double ex = 0.0;
  for (const auto& r : routes) ex += std::max(0.0, route_load(inst, r) - inst.capacity());
  return ex;
}

inline double penalized_cost(const Instance& inst, const std::vector<Route>& routes, double penalty) {
  double c = 0.0;
  for (const auto& r : routes) c += route_cost(inst, r);
  return c + penalty * excess_load(inst, routes);
}

/// Penalty scale used to turn a relative coefficient into cost units.
inline double penalty_scale(const Instance& inst) {
  double max_d = 0.0, max_q = 0.0;
  for (int i = 0; i <= inst.size(); ++i)
    for (int j = i + 1; j <= inst.size(); ++j) max_d = std::max(max_d, inst.dist(i, j));
  for (const auto& c : inst.customers()) max_q = std::max(max_q, c.demand);
  if (max_q <= 0.0) return 1.0;
  return std::clamp(max_d / max_q, 0.1, 1000.0);
}

// ---------------------------------------------------------------------------
// Split

/// Optimal segmentation of a giant tour into routes under the penalized
/// objective (distance + penalty * excess load). O(N^2) shortest path.
inline Solution split(std::span<const int> giant_tour, const Instance& inst, double penalty) {
  const std::size_t n = giant_tour.size();
  std::vector<double> pot(n + 1, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> pred(n + 1, 0);
  pot[0] = 0.0;
  const double cap = inst.capacity();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(pot[i])) continue;
    double load = 0.0;
    double inner = 0.0;
    for (std::size_t j = i; j < n; ++j) {
      const int c = giant_tour[j];
      load += inst.demand(c);
      if (j > i) inner += inst.dist(giant_tour[j - 1], c);
      const double seg = inst.dist(0, giant_tour[i]) + inner + inst.dist(c, 0) +
                         penalty * std::max(0.0, load - cap);
      if (pot[i] + seg < pot[j + 1]) {
        pot[j + 1] = pot[i] + seg;
        pred[j + 1] = i;
      }
    }
  }
  std::vector<Route> routes;
  for (std::size_t j = n; j > 0; j = pred[j]) {
    routes.emplace_back(giant_tour.begin() + static_cast<std::ptrdiff_t>(pred[j]),
                        giant_tour.begin() + static_cast<std::ptrdiff_t>(j));
  }
  std::reverse(routes.begin(), routes.end());
  return make_solution(inst, std::move(routes));
}

// ---------------------------------------------------------------------------
// Order crossover

inline void check_same_ids(std::span<const int> a, std::span<const int> b) {
  std::vector<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  if (sa != sb || std::adjacent_find(sa.begin(), sa.end()) != sa.end())
    throw std::invalid_argument("crossover parents must be permutations of the same id set");
}

/// OX with an explicit inclusive slice [start, end] of parent_a (wrapping when
/// end < start); remaining ids follow parent_b order starting after `end`.
inline std::vector<int> ox_crossover(std::span<const int> parent_a, std::span<const int> parent_b,
                                     std::size_t start, std::size_t end) {
  check_same_ids(parent_a, parent_b);
  const std::size_t n = parent_a.size();
  if (n == 0) return {};
  if (start >= n || end >= n) throw std::out_of_range("crossover slice out of range");
  const int max_id = *std::max_element(parent_a.begin(), parent_a.end());
  std::vector<char> taken(static_cast<std::size_t>(max_id) + 1, 0);
  std::vector<int> child(n, 0);
  std::size_t pos = start;
  for (;;) {
    child[pos] = parent_a[pos];
    taken[static_cast<std::size_t>(parent_a[pos])] = 1;
    if (pos == end) break;
    pos = (pos + 1) % n;
  }
  std::size_t write = (end + 1) % n;
  for (std::size_t k = 1; k <= n; ++k) {
    const int id = parent_b[(end + k) % n];
    if (taken[static_cast<std::size_t>(id)]) continue;
    child[write] = id;
    write = (write + 1) % n;
  }
  return child;
}

inline std::vector<int> ox_crossover(std::span<const int> parent_a, std::span<const int> parent_b, Rng& rng) {
  const std::size_t n = parent_a.size();
  if (n == 0) {
    check_same_ids(parent_a, parent_b);
    return {};
  }
  const std::size_t start = uniform_index(rng, n);
  std::size_t end = uniform_index(rng, n);
  if (n > 1) {
    while (end == start) end = uniform_index(rng, n);
  }
  return ox_crossover(parent_a, parent_b, start, end);
}

// ---------------------------------------------------------------------------
// Individual

struct Individual {
  std::vector<int> giant_tour;
  std::vector<Route> routes;
  double cost = 0.0;
  double excess = 0.0;
  double penalized_cost = 0.0;
  bool feasible = false;
  std::vector<int> successor;    // 0 = depot
  std::vector<int> predecessor;  // 0 = depot

  void evaluate(const Instance& inst, double penalty) {
    cost = 0.0;
    excess = 0.0;
    successor.assign(static_cast<std::size_t>(inst.size()) + 1, 0);
    predecessor.assign(static_cast<std::size_t>(inst.size()) + 1, 0);
    for (const auto& r : routes) {
      cost += route_cost(inst, r);
      excess += std::max(0.0, route_load(inst, r) - inst.capacity());
      for (std::size_t i = 0; i < r.size(); ++i) {
        predecessor[r[i]] = i == 0 ? 0 : r[i - 1];
        successor[r[i]] = i + 1 == r.size() ? 0 : r[i + 1];
      }
    }
    feasible = excess <= 1e-9;
    penalized_cost = cost + penalty * excess;
  }

  Solution solution() const { return Solution{routes, cost, feasible}; }
};

inline Individual make_individual(const Instance& inst, std::vector<int> tour, double penalty) {
  Individual ind;
  ind.routes = split(tour, inst, penalty).routes;
  ind.giant_tour = std::move(tour);
  ind.evaluate(inst, penalty);
  return ind;
}

inline Individual individual_from_routes(const Instance& inst, std::vector<Route> routes, double penalty) {
  Individual ind;
  std::erase_if(routes, [](const Route& r) { return r.empty(); });
  ind.routes = std::move(routes);
  for (const auto& r : ind.routes) ind.giant_tour.insert(ind.giant_tour.end(), r.begin(), r.end());
  ind.evaluate(inst, penalty);
  return ind;
}

/// Normalized broken-pairs distance between two individuals.
inline double broken_pairs_distance(const Individual& a, const Individual& b) {
  const std::size_t n = a.successor.size();
  if (n <= 1) return 0.0;
  int differences = 0;
  for (std::size_t j = 1; j < n; ++j) {
    if (a.successor[j] != b.successor[j] && a.successor[j] != b.predecessor[j]) ++differences;
    if (a.predecessor[j] == 0 && b.predecessor[j] != 0 && b.successor[j] != 0) ++differences;
  }
  return static_cast<double>(differences) / static_cast<double>(n - 1);
}

/// Nearest-neighbor lists: the `granularity` closest customers of each
/// customer (ties broken by id). Index 0 is unused.
inline std::vector<std::vector<int>> granular_neighbors(const Instance& inst, int granularity) {
  const int n = inst.size();
  const int g = std::max(0, std::min(granularity, n - 1));
  std::vector<std::vector<int>> out(static_cast<std::size_t>(n) + 1);
  std::vector<int> others;
  for (int u = 1; u <= n; ++u) {
    others.clear();
    for (int v = 1; v <= n; ++v)
      if (v != u) others.push_back(v);
    std::partial_sort(others.begin(), others.begin() + g, others.end(), [&](int a, int b) {
      const double da = inst.dist(u, a), db = inst.dist(u, b);
      return da != db ? da < db : a < b;
    });
    out[u].assign(others.begin(), others.begin() + g);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Local search

class LocalSearch {
 public:
  static constexpr double kEps = 1e-7;

  LocalSearch(const Instance& inst, const HgsConfig& cfg)
      : inst_(&inst), ops_(cfg.operators), neighbors_(granular_neighbors(inst, cfg.granularity)) {}

  const std::vector<std::vector<int>>& neighbors() const noexcept { return neighbors_; }
  void set_penalty(double p) noexcept { penalty_ = p; }
  double penalty() const noexcept { return penalty_; }
  void set_operators(const OperatorToggles& ops) noexcept { ops_ = ops; }

  /// Descends to a local optimum of all enabled operators.
  Individual run(const Individual& in, Rng& rng) {
    load(in.routes);
    std::vector<int> order(static_cast<std::size_t>(inst_->size()));
    std::iota(order.begin(), order.end(), 1);
    shuffle(order, rng);
    bool improved = true;
    while (improved) {
      improved = false;
      for (int u : order) {
        for (int v : neighbors_[u]) {
          if (try_moves(u, v)) improved = true;
        }
        if (ops_.relocate && relocate_to_new_route(u)) improved = true;
      }
    }
    std::vector<Route> routes;
    for (auto& r : routes_)
      if (!r.nodes.empty()) routes.push_back(r.nodes);
    return individual_from_routes(*inst_, std::move(routes), penalty_);
  }

 private:
  struct RouteData {
    std::vector<int> nodes;
    std::vector<double> prefix_load;  // prefix_load[i] = load of nodes[0..i]
    double load = 0.0;
  };

  double d(int a, int b) const noexcept { return inst_->dist(a, b); }
  double q(int c) const noexcept { return inst_->customers()[static_cast<std::size_t>(c) - 1].demand; }
  double pen(double load) const noexcept { return penalty_ * std::max(0.0, load - inst_->capacity()); }

  int prev(int r, int i) const noexcept { return i == 0 ? 0 : routes_[r].nodes[i - 1]; }
  int next(int r, int i) const noexcept {
    const auto& n = routes_[r].nodes;
    return i + 1 == static_cast<int>(n.size()) ? 0 : n[i + 1];
  }
  int size_of(int r) const noexcept { return static_cast<int>(routes_[r].nodes.size()); }
  double prefix(int r, int i) const noexcept { return i < 0 ? 0.0 : routes_[r].prefix_load[i]; }
  double seg_load(int r, int i, int j) const noexcept { return prefix(r, j) - prefix(r, i - 1); }

  void load(const std::vector<Route>& routes) {
    routes_.clear();
    route_of_.assign(static_cast<std::size_t>(inst_->size()) + 1, -1);
    pos_of_.assign(static_cast<std::size_t>(inst_->size()) + 1, -1);
    for (const auto& r : routes) {
      if (r.empty()) continue;
      routes_.push_back({r, {}, 0.0});
      rebuild(static_cast<int>(routes_.size()) - 1);
    }
  }

  void rebuild(int r) {
    auto& rd = routes_[r];
    rd.prefix_load.resize(rd.nodes.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < rd.nodes.size(); ++i) {
      acc += q(rd.nodes[i]);
      rd.prefix_load[i] = acc;
      route_of_[rd.nodes[i]] = r;
      pos_of_[rd.nodes[i]] = static_cast<int>(i);
    }
    rd.load = acc;
  }

  void commit(int r1, std::vector<int> n1, int r2, std::vector<int> n2) {
    routes_[r1].nodes = std::move(n1);
    rebuild(r1);
    if (r2 >= 0 && r2 != r1) {
      routes_[r2].nodes = std::move(n2);
      rebuild(r2);
    }
  }

  double inter_penalty_delta(int r1, double new1, int r2, double new2) const noexcept {
    return pen(new1) - pen(routes_[r1].load) + pen(new2) - pen(routes_[r2].load);
  }

  bool try_moves(int u, int v) {
    if (ops_.relocate && (relocate(u, v, true) || relocate(u, v, false))) return true;
    if (ops_.swap11 && swap_segments(u, v, 1)) return true;
    if (ops_.swap22 && swap_segments(u, v, 2)) return true;
    if (ops_.swap33 && swap_segments(u, v, 3)) return true;
    if (ops_.two_opt && route_of_[u] == route_of_[v] && (two_opt(u, v, true) || two_opt(u, v, false))) return true;
    if (ops_.two_opt_star && route_of_[u] != route_of_[v] && (two_opt_star(u, v, false) || two_opt_star(u, v, true)))
      return true;
    return false;
  }

  // Moves u next to v: after v when `after`, otherwise before v.
  bool relocate(int u, int v, bool after) {
    const int ru = route_of_[u], iu = pos_of_[u], rv = route_of_[v], iv = pos_of_[v];
    const int pu = prev(ru, iu), nu = next(ru, iu);
    const int a = after ? v : prev(rv, iv);
    const int b = after ? next(rv, iv) : v;
    if (a == u || b == u) return false;
    double delta = -d(pu, u) - d(u, nu) + d(pu, nu) - d(a, b) + d(a, u) + d(u, b);
    if (ru != rv) delta += inter_penalty_delta(ru, routes_[ru].load - q(u), rv, routes_[rv].load + q(u));
    if (delta > -kEps) return false;
    if (ru == rv) {
      auto nodes = routes_[ru].nodes;
      nodes.erase(nodes.begin() + iu);
      const auto it = std::find(nodes.begin(), nodes.end(), v);
      nodes.insert(after ? it + 1 : it, u);
      commit(ru, std::move(nodes), -1, {});
    } else {
      auto n1 = routes_[ru].nodes;
      auto n2 = routes_[rv].nodes;
      n1.erase(n1.begin() + iu);
      n2.insert(n2.begin() + (after ? iv + 1 : iv), u);
      commit(ru, std::move(n1), rv, std::move(n2));
    }
    return true;
  }

  bool relocate_to_new_route(int u) {
    const int ru = route_of_[u], iu = pos_of_[u];
    if (size_of(ru) < 2) return false;
    const int pu = prev(ru, iu), nu = next(ru, iu);
    const double delta = -d(pu, u) - d(u, nu) + d(pu, nu) + 2.0 * d(0, u) + pen(routes_[ru].load - q(u)) -
                         pen(routes_[ru].load) + pen(q(u));
    if (delta > -kEps) return false;
    auto n1 = routes_[ru].nodes;
    n1.erase(n1.begin() + iu);
    routes_.push_back({{u}, {}, 0.0});
    commit(ru, std::move(n1), static_cast<int>(routes_.size()) - 1, {u});
    return true;
  }

  // Exchanges the k-node segment starting at u with the one starting at v.
  // k = 1 also applies within a route; longer segments only across routes.
  bool swap_segments(int u, int v, int k) {
    const int ru = route_of_[u], iu = pos_of_[u], rv = route_of_[v], iv = pos_of_[v];
    if (ru == rv) {
      if (k != 1) return false;
      return swap_within(u, v);
    }
    if (iu + k > size_of(ru) || iv + k > size_of(rv)) return false;
    const int ul = routes_[ru].nodes[iu + k - 1], vl = routes_[rv].nodes[iv + k - 1];
    const int pu = prev(ru, iu), nu = next(ru, iu + k - 1);
    const int pv = prev(rv, iv), nv = next(rv, iv + k - 1);
    const double lu = seg_load(ru, iu, iu + k - 1), lv = seg_load(rv, iv, iv + k - 1);
    double delta = -d(pu, u) - d(ul, nu) - d(pv, v) - d(vl, nv) + d(pu, v) + d(vl, nu) + d(pv, u) + d(ul, nv);
    delta += inter_penalty_delta(ru, routes_[ru].load - lu + lv, rv, routes_[rv].load - lv + lu);
    if (delta > -kEps) return false;
    auto n1 = routes_[ru].nodes;
    auto n2 = routes_[rv].nodes;
    std::swap_ranges(n1.begin() + iu, n1.begin() + iu + k, n2.begin() + iv);
    commit(ru, std::move(n1), rv, std::move(n2));
    return true;
  }

  bool swap_within(int u, int v) {
    const int r = route_of_[u], iu = pos_of_[u], iv = pos_of_[v];
    const int pu = prev(r, iu), nu = next(r, iu), pv = prev(r, iv), nv = next(r, iv);
    double delta;
    if (nu == v) {
      delta = -d(pu, u) - d(v, nv) + d(pu, v) + d(u, nv);
    } else if (nv == u) {
      delta = -d(pv, v) - d(u, nu) + d(pv, u) + d(v, nu);
    } else {
      delta = -d(pu, u) - d(u, nu) - d(pv, v) - d(v, nv) + d(pu, v) + d(v, nu) + d(pv, u) + d(u, nv);
    }
    if (delta > -kEps) return false;
    auto nodes = routes_[r].nodes;
    std::swap(nodes[iu], nodes[iv]);
    commit(r, std::move(nodes), -1, {});
    return true;
  }

  // Intra-route reversal making u and v adjacent. `tail` removes the edges
  // leaving the two nodes, otherwise the edges entering them.
  bool two_opt(int u, int v, bool tail) {
    const int r = route_of_[u];
    int i = pos_of_[u], j = pos_of_[v];
    if (i > j) std::swap(i, j);
    const int a = routes_[r].nodes[i], b = routes_[r].nodes[j];
    double delta;
    int from, to;  // reversed range [from, to]
    if (tail) {
      const int na = next(r, i), nb = next(r, j);
      if (na == b) return false;
      delta = -d(a, na) - d(b, nb) + d(a, b) + d(na, nb);
      from = i + 1;
      to = j;
    } else {
      const int pa = prev(r, i), pb = prev(r, j);
      if (pb == a) return false;
      delta = -d(pa, a) - d(pb, b) + d(pa, pb) + d(a, b);
      from = i;
      to = j - 1;
    }
    if (delta > -kEps) return false;
    auto nodes = routes_[r].nodes;
    std::reverse(nodes.begin() + from, nodes.begin() + to + 1);
    commit(r, std::move(nodes), -1, {});
    return true;
  }

  // Inter-route tail exchange after u and v. `cross` joins u to v (reversing
  // both heads), otherwise u is joined to v's successor.
  bool two_opt_star(int u, int v, bool cross) {
    const int ru = route_of_[u], iu = pos_of_[u], rv = route_of_[v], iv = pos_of_[v];
    const int nu = next(ru, iu), nv = next(rv, iv);
    const double head_u = prefix(ru, iu), head_v = prefix(rv, iv);
    const double tail_u = routes_[ru].load - head_u, tail_v = routes_[rv].load - head_v;
    double delta;
    double l1, l2;
    if (cross) {
      delta = -d(u, nu) - d(v, nv) + d(u, v) + d(nu, nv);
      l1 = head_u + head_v;
      l2 = tail_u + tail_v;
    } else {
      delta = -d(u, nu) - d(v, nv) + d(u, nv) + d(v, nu);
      l1 = head_u + tail_v;
      l2 = head_v + tail_u;
    }
    delta += inter_penalty_delta(ru, l1, rv, l2);
    if (delta > -kEps) return false;
    const auto& a = routes_[ru].nodes;
    const auto& b = routes_[rv].nodes;
    std::vector<int> n1(a.begin(), a.begin() + iu + 1), n2;
    if (cross) {
      n1.insert(n1.end(), b.rbegin() + (static_cast<long>(b.size()) - iv - 1), b.rend());
      n2.assign(a.rbegin(), a.rbegin() + (static_cast<long>(a.size()) - iu - 1));
      n2.insert(n2.end(), b.begin() + iv + 1, b.end());
    } else {
      n1.insert(n1.end(), b.begin() + iv + 1, b.end());
      n2.assign(b.begin(), b.begin() + iv + 1);
      n2.insert(n2.end(), a.begin() + iu + 1, a.end());
    }
    commit(ru, std::move(n1), rv, std::move(n2));
    if (routes_[ru].nodes.empty() || routes_[rv].nodes.empty()) compact();
    return true;
  }

  void compact() {
    std::erase_if(routes_, [](const RouteData& r) { return r.nodes.empty(); });
    for (int r = 0; r < static_cast<int>(routes_.size()); ++r) rebuild(r);
  }

  const Instance* inst_;
  OperatorToggles ops_;
  std::vector<std::vector<int>> neighbors_;
  double penalty_ = 1.0;
  std::vector<RouteData> routes_;
  std::vector<int> route_of_;
  std::vector<int> pos_of_;
};

// ---------------------------------------------------------------------------
// Biased fitness

namespace detail {

// Ranks with ties sharing the lowest rank; `key` is minimized.
inline std::vector<double> shared_min_ranks(const std::vector<double>& key) {
  const std::size_t n = key.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  std::vector<double> rank(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = idx[k];
    rank[i] = (k > 0 && key[i] == key[idx[k - 1]]) ? rank[idx[k - 1]] : static_cast<double>(k);
  }
  return rank;
}

}  // namespace detail

/// Average broken-pairs distance of each member to its `n_closest` nearest
/// other members.
inline std::vector<double> diversity_contributions(std::span<const Individual* const> pop, int n_closest) {
  const std::size_t n = pop.size();
  std::vector<double> out(n, 0.0);
  if (n < 2) return out;
  std::vector<double> dists;
  for (std::size_t i = 0; i < n; ++i) {
    dists.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dists.push_back(broken_pairs_distance(*pop[i], *pop[j]));
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, n_closest)), dists.size());
    std::partial_sort(dists.begin(), dists.begin() + static_cast<long>(k), dists.end());
    out[i] = std::accumulate(dists.begin(), dists.begin() + static_cast<long>(k), 0.0) / static_cast<double>(k);
  }
  return out;
}

/// Biased fitness (lower is better): normalized cost rank plus
/// (1 - n_elite / n) times normalized diversity rank (most diverse = 0).
inline std::vector<double> biased_fitness(std::span<const Individual* const> pop, int n_elite, int n_closest) {
  const std::size_t n = pop.size();
  if (n == 0) return {};
  if (n == 1) return {0.0};
  std::vector<double> cost(n), neg_div(n);
  const auto div = diversity_contributions(pop, n_closest);
  for (std::size_t i = 0; i < n; ++i) {
    cost[i] = pop[i]->penalized_cost;
    neg_div[i] = -div[i];
  }
  const auto cost_rank = detail::shared_min_ranks(cost);
  const auto div_rank = detail::shared_min_ranks(neg_div);
  const double weight = 1.0 - static_cast<double>(n_elite) / static_cast<double>(n);
  std::vector<double> fit(n);
  for (std::size_t i = 0; i < n; ++i)
    fit[i] = cost_rank[i] / double(n - 1) + weight * div_rank[i] / double(n - 1);
  return fit;
}

/// Indices sorted by biased fitness (best first, ties by index).
inline std::vector<std::size_t> fitness_ranking(std::span<const Individual* const> pop, int n_elite, int n_closest) {
  const auto fit = biased_fitness(pop, n_elite, n_closest);
  std::vector<std::size_t> idx(pop.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fit[a] < fit[b]; });
  return idx;
}

/// One adaptation step of the capacity penalty from the feasible fraction of
/// a window of offspring.
inline double adapt_penalty(double penalty, double feasible_fraction, double target, double factor) {
  if (feasible_fraction < target - 0.05) penalty *= factor;
  else if (feasible_fraction > target + 0.05) penalty /= factor;
  return std::clamp(penalty, 1e-3, 1e6);
}

// ---------------------------------------------------------------------------
// Main loop

struct TracePoint {
  long iteration = 0;
  double elapsed_seconds = 0.0;
  double best_cost = 0.0;
};

struct HgsResult {
  Solution best;  // feasible flag false when no feasible solution was found
  std::vector<TracePoint> trace;
  long iterations = 0;
};

inline std::string trace_csv(const std::vector<TracePoint>& trace) {
  std::ostringstream os;
  os << "elapsed_seconds,best_cost\n";
  for (const auto& p : trace) os << p.elapsed_seconds << "," << detail::format_double(p.best_cost) << "\n";
  return os.str();
}

/// Stateful HGS so callers (the decomposition loop) can interleave
/// iterations with external insertions.
class Hgs {
 public:
  using Clock = std::chrono::steady_clock;
  /// Offspring per penalty adaptation step.
  static constexpr std::size_t kPenaltyWindow = 20;

  Hgs(const Instance& inst, const HgsConfig& cfg)
      : inst_(inst), cfg_(cfg), ls_(inst_, cfg_), rng_(cfg.seed), start_(Clock::now()) {
    if (auto v = validate_hgs_config(cfg_); !v.empty()) throw std::invalid_argument("invalid HgsConfig: " + v.front());
    scale_ = penalty_scale(inst_);
    penalty_ = cfg_.capacity_penalty_init * scale_;
    ls_.set_penalty(penalty_);
    n_elite_ = std::max(1, static_cast<int>(std::lround(cfg_.elite_fraction * cfg_.population_size)));
  }

  Hgs(const Hgs&) = delete;
  Hgs& operator=(const Hgs&) = delete;

  const Instance& instance() const noexcept { return inst_; }
  double penalty() const noexcept { return penalty_; }
  long iterations() const noexcept { return iterations_; }
  const std::vector<TracePoint>& trace() const noexcept { return trace_; }
  std::size_t feasible_count() const noexcept { return feasible_.size(); }
  std::size_t infeasible_count() const noexcept { return infeasible_.size(); }

  void initialize() {
    if (initialized_) return;
    initialized_ = true;
    const int n_init = 4 * cfg_.population_size;
    std::vector<int> tour(static_cast<std::size_t>(inst_.size()));
    for (int k = 0; k < n_init; ++k) {
      std::iota(tour.begin(), tour.end(), 1);
      shuffle(tour, rng_);
      auto ind = ls_.run(make_individual(inst_, tour, penalty_), rng_);
      insert(std::move(ind));
      if (time_up()) break;
    }
  }

  /// Runs up to `n` generations (0 = until the configured budget ends);
  /// returns the number performed.
  long iterate(long n = 0, double seconds = 0.0) {
    initialize();
    const auto phase_start = Clock::now();
    long done = 0;
    while (n == 0 || done < n) {
      if (cfg_.budget.max_iterations > 0 && iterations_ >= cfg_.budget.max_iterations) break;
      if (time_up()) break;
      if (seconds > 0.0 && std::chrono::duration<double>(Clock::now() - phase_start).count() >= seconds) break;
      if (since_improve_ >= cfg_.budget.max_no_improve && cfg_.budget.max_no_improve > 0) {
        if (cfg_.budget.seconds > 0.0 || n > 0) {
          restart();
        } else {
          break;
        }
      }
      step();
      ++done;
    }
    return done;
  }

  /// Adds an externally produced individual (e.g. a reintegrated solution).
  void insert_routes(std::vector<Route> routes) {
    initialize();
    auto ind = individual_from_routes(inst_, std::move(routes), penalty_);
    insert(std::move(ind));
  }

  std::optional<Individual> best_feasible() const { return best_; }

  /// Best individual by penalized cost across both subpopulations.
  const Individual* best_penalized() const {
    const Individual* best = nullptr;
    for (const auto* pop : {&feasible_, &infeasible_})
      for (const auto& ind : *pop)
        if (!best || ind.penalized_cost < best->penalized_cost) best = &ind;
    return best;
  }

  /// Tournament of size 2 over the top `fraction` of the feasible
  /// subpopulation by cost.
  std::optional<Individual> tournament_top(double fraction) {
    if (feasible_.empty()) return best_;
    std::vector<const Individual*> sorted;
    for (const auto& ind : feasible_) sorted.push_back(&ind);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](auto* a, auto* b) { return a->penalized_cost < b->penalized_cost; });
    const std::size_t top = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * sorted.size())));
    const auto* a = sorted[uniform_index(rng_, top)];
    const auto* b = sorted[uniform_index(rng_, top)];
    return a->penalized_cost <= b->penalized_cost ? *a : *b;
  }

  HgsResult result() const {
    HgsResult r;
    r.iterations = iterations_;
    r.trace = trace_;
    if (best_) {
      r.best = best_->solution();
    } else if (const auto* b = best_penalized()) {
      r.best = b->solution();
      r.best.feasible = false;
    }
    return r;
  }

  /// Offspring feasibility window; exposed for inspection.
  const std::vector<char>& feasibility_window() const noexcept { return window_; }

 private:
  bool time_up() const {
    return cfg_.budget.seconds > 0.0 &&
           std::chrono::duration<double>(Clock::now() - start_).count() >= cfg_.budget.seconds;
  }

  const Individual& select_parent() {
    const auto pick = [&]() -> const Individual& {
      const std::size_t total = feasible_.size() + infeasible_.size();
      const std::size_t k = uniform_index(rng_, total);
      return k < feasible_.size() ? feasible_[k] : infeasible_[k - feasible_.size()];
    };
    const auto fitness_of = [&](const Individual& ind) {
      const bool feas = &ind >= feasible_.data() && &ind < feasible_.data() + feasible_.size();
      const auto& fit = feas ? fit_feasible_ : fit_infeasible_;
      const auto& pop = feas ? feasible_ : infeasible_;
      return fit[static_cast<std::size_t>(&ind - pop.data())];
    };
    const Individual& a = pick();
    const Individual& b = pick();
    return fitness_of(a) <= fitness_of(b) ? a : b;
  }

  void refresh_fitness() {
    fit_feasible_ = fitness_of(feasible_);
    fit_infeasible_ = fitness_of(infeasible_);
  }

  std::vector<double> fitness_of(const std::vector<Individual>& pop) const {
    std::vector<const Individual*> ptrs;
    for (const auto& ind : pop) ptrs.push_back(&ind);
    return biased_fitness(ptrs, n_elite_, cfg_.diversity_neighbors);
  }

  void step() {
    refresh_fitness();
    const Individual& pa = select_parent();
    const Individual& pb = select_parent();
    auto child_tour = ox_crossover(pa.giant_tour, pb.giant_tour, rng_);
    auto child = ls_.run(make_individual(inst_, std::move(child_tour), penalty_), rng_);
    ++iterations_;
    ++since_improve_;
    window_.push_back(child.feasible ? 1 : 0);
    insert(std::move(child));
    if (window_.size() >= kPenaltyWindow) {
      const double frac = std::accumulate(window_.begin(), window_.end(), 0.0) / double(window_.size());
      set_penalty(adapt_penalty(penalty_, frac, cfg_.target_feasible_ratio, cfg_.penalty_adapt_factor));
      window_.clear();
    }
  }

  void set_penalty(double p) {
    penalty_ = p;
    ls_.set_penalty(p);
    for (auto& ind : infeasible_) ind.penalized_cost = ind.cost + p * ind.excess;
  }

  void insert(Individual ind) {
    if (ind.feasible && (!best_ || ind.cost < best_->cost - 1e-9)) {
      best_ = ind;
      since_improve_ = 0;
      trace_.push_back({iterations_, std::chrono::duration<double>(Clock::now() - start_).count(), ind.cost});
    }
    auto& pop = ind.feasible ? feasible_ : infeasible_;
    pop.push_back(std::move(ind));
    if (static_cast<int>(pop.size()) > cfg_.population_size + cfg_.generation_size) survivors(pop);
  }

  // Removes members until population_size remain: clones first, then the
  // worst biased fitness. The n_elite cheapest feasible members are kept.
  void survivors(std::vector<Individual>& pop) {
    const bool protect = &pop == &feasible_;
    while (static_cast<int>(pop.size()) > cfg_.population_size) {
      std::vector<const Individual*> ptrs;
      for (const auto& ind : pop) ptrs.push_back(&ind);
      std::vector<char> is_elite(pop.size(), 0);
      if (protect) {
        std::vector<std::size_t> idx(pop.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(),
                         [&](std::size_t a, std::size_t b) { return pop[a].penalized_cost < pop[b].penalized_cost; });
        for (int e = 0; e < n_elite_ && e < static_cast<int>(idx.size()); ++e) is_elite[idx[e]] = 1;
      }
      const auto fit = biased_fitness(ptrs, n_elite_, cfg_.diversity_neighbors);
      std::size_t worst = pop.size();
      bool worst_clone = false;
      for (std::size_t i = 0; i < pop.size(); ++i) {
        if (is_elite[i]) continue;
        bool clone = false;
        for (std::size_t j = 0; j < pop.size() && !clone; ++j)
          clone = j != i && broken_pairs_distance(pop[i], pop[j]) < 1e-12;
        if (worst == pop.size() || (clone && !worst_clone) || (clone == worst_clone && fit[i] > fit[worst])) {
          worst = i;
          worst_clone = clone;
        }
      }
      if (worst == pop.size()) break;
      pop.erase(pop.begin() + static_cast<long>(worst));
    }
  }

  void restart() {
    feasible_.clear();
    infeasible_.clear();
    since_improve_ = 0;
    initialized_ = false;
    initialize();
  }

  Instance inst_;
  HgsConfig cfg_;
  LocalSearch ls_;
  Rng rng_;
  Clock::time_point start_;
  double scale_ = 1.0;
  double penalty_ = 1.0;
  int n_elite_ = 1;
  bool initialized_ = false;
  long iterations_ = 0;
  long since_improve_ = 0;
  std::vector<Individual> feasible_;
  std::vector<Individual> infeasible_;
  std::vector<double> fit_feasible_;
  std::vector<double> fit_infeasible_;
  std::vector<char> window_;
  std::optional<Individual> best_;
  std::vector<TracePoint> trace_;
};

/// Runs HGS until its configured budget is exhausted.
inline HgsResult run_hgs(const Instance& inst, const HgsConfig& cfg) {
  Hgs hgs(inst, cfg);
  hgs.iterate();
  return hgs.result();
}

}  // namespace vrptune

#endif  // VRPTUNE_HGS_HPP
