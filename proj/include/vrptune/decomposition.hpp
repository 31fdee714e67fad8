#ifndef VRPTUNE_DECOMPOSITION_HPP
#define VRPTUNE_DECOMPOSITION_HPP

// Partitioning of a CVRP instance into independent subproblems. Every
// strategy returns a partition of the customer set; route-based strategies
// keep the routes of a guiding elite solution intact.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvrp.hpp"
#include "rng.hpp"

namespace vrptune {

struct StrategyParam {
  std::string_view name;
  double min;
  double max;
  double fallback;
  bool integer;
  std::string_view meaning;
};

struct StrategyInfo {
  std::string_view id;
  std::string_view family;
  bool requires_elite;
  std::vector<StrategyParam> params;
  std::string_view summary;
};

inline const std::vector<StrategyInfo>& strategy_catalog() {
  static const std::vector<StrategyInfo> catalog{
      {"route_barycenter_kmeans", "route", true, {},
       "cluster the routes of the elite solution by the barycenter of their customers with k-means; routes stay whole"},
      {"customer_kmeans", "centroid", false, {},
       "k-means over customer coordinates seeded by farthest point sampling"},
      {"capacity_balanced_kmeans", "centroid", false,
       {{"slack", 1.0, 1.5, 1.1, false, "cluster demand limit as a multiple of the mean cluster demand"}},
       "k-means whose assignment step fills clusters in distance order up to a demand limit"},
      {"polar_sweep", "angular", false,
       {{"start_angle", 0.0, 6.283185307179586, 0.0, false, "ray around the depot where the sweep begins"}},
       "sort customers by polar angle around the depot and cut the sweep into equal sectors"},
      {"angular_radial", "angular", false,
       {{"start_angle", 0.0, 6.283185307179586, 0.0, false, "ray around the depot where the sweep begins"},
        {"rings", 1.0, 3.0, 2.0, true, "radial bands per angular sector"}},
       "angular sectors around the depot, each split into rings by distance to the depot"},
      {"voronoi_farthest", "centroid", false, {},
       "voronoi cells of farthest point seeds; every customer joins its nearest seed"},
      {"density_clustering", "density", false,
       {{"radius_factor", 0.5, 3.0, 1.5, false, "neighborhood radius as a multiple of the mean nearest neighbor distance"},
        {"min_points", 2.0, 10.0, 4.0, true, "neighbors needed for a core point"}},
       "density based clustering; noise points join the nearest cluster centroid"},
      {"elite_route_grouping", "route", true, {},
       "shuffle the routes of the elite solution and group consecutive routes; routes stay whole"},
      {"spatial_grid", "spatial", false, {},
       "overlay a uniform grid on the bounding box; each non empty cell is a subproblem"},
      {"agglomerative", "spatial", false, {},
       "bottom up merging of mutually nearest clusters until the target size is reached"},
      {"kd_median", "spatial", false, {},
       "recursively halve the largest group at the median of its wider axis"},
  };
  return catalog;
}

inline const StrategyInfo* find_strategy(std::string_view id) {
  for (const auto& s : strategy_catalog())
    if (s.id == id) return &s;
  return nullptr;
}

/// Machine-readable catalog listing (identifier, required params, bounds).
inline nlohmann::json catalog_json() {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& s : strategy_catalog()) {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : s.params)
      params.push_back({{"name", p.name},
                        {"min", p.min},
                        {"max", p.max},
                        {"default", p.fallback},
                        {"integer", p.integer},
                        {"meaning", p.meaning}});
    out.push_back({{"id", s.id},
                   {"family", s.family},
                   {"requires_elite", s.requires_elite},
                   {"granularity", {{"target_size", {{"min", 2}, {"max", 1000}}}, {"cluster_count", {{"min", 1}, {"max", 1000}}}}},
                   {"params", params},
                   {"summary", s.summary}});
  }
  return out;
}

struct DecompositionParams {
  std::string strategy_id = "route_barycenter_kmeans";
  std::optional<int> target_size = 60;
  std::optional<int> cluster_count;
  std::map<std::string, double> strategy_specific;
  std::uint64_t seed = 1;
  friend bool operator==(const DecompositionParams&, const DecompositionParams&) = default;

  double param(std::string_view name) const {
    if (auto it = strategy_specific.find(std::string(name)); it != strategy_specific.end()) return it->second;
    if (const auto* s = find_strategy(strategy_id))
      for (const auto& p : s->params)
        if (p.name == name) return p.fallback;
    throw std::invalid_argument("unknown strategy parameter " + std::string(name));
  }
};

/// Bounds check independent of any instance. Cluster count 1 is accepted as
/// the degenerate single-subproblem case.
inline std::vector<std::string> validate_decomposition_params(const DecompositionParams& p) {
  std::vector<std::string> v;
  const auto* s = find_strategy(p.strategy_id);
  if (!s) v.push_back("strategy_id '" + p.strategy_id + "' not in catalog");
  if (p.target_size.has_value() == p.cluster_count.has_value())
    v.emplace_back("exactly one of target_size, cluster_count");
  if (p.target_size && *p.target_size < 2) v.emplace_back("target_size >= 2");
  if (p.cluster_count && *p.cluster_count < 1) v.emplace_back("cluster_count >= 1");
  if (s) {
    for (const auto& [key, value] : p.strategy_specific) {
      const auto it = std::find_if(s->params.begin(), s->params.end(), [&](const auto& q) { return q.name == key; });
      if (it == s->params.end()) {
        v.push_back("unknown parameter '" + key + "' for " + p.strategy_id);
      } else if (!(value >= it->min && value <= it->max)) {
        v.push_back(key + " in [" + detail::format_double(it->min) + "," + detail::format_double(it->max) + "]");
      } else if (it->integer && value != std::floor(value)) {
        v.push_back(key + " must be an integer");
      }
    }
  }
  return v;
}

struct SubProblem {
  std::vector<int> customer_ids;  // global ids, ascending
  Instance local_instance;
  std::vector<int> id_map;  // id_map[local - 1] = global id

  int to_global(int local) const { return id_map.at(static_cast<std::size_t>(local) - 1); }
};

inline SubProblem make_subproblem(const Instance& inst, std::vector<int> ids, std::size_t index) {
  std::sort(ids.begin(), ids.end());
  std::vector<Customer> cs;
  cs.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& g = inst.customers().at(static_cast<std::size_t>(ids[i]) - 1);
    cs.push_back({static_cast<int>(i) + 1, g.pos, g.demand});
  }
  Instance local(inst.name() + "/sub" + std::to_string(index), inst.depot(), std::move(cs), inst.capacity(),
                 inst.rounding());
  return SubProblem{ids, std::move(local), ids};
}

/// Mean of the route's customer coordinates (depot excluded).
inline Point route_barycenter(const Route& route, const Instance& inst) {
  if (route.empty()) throw std::invalid_argument("barycenter of an empty route");
  Point p;
  for (int c : route) {
    const Point q = inst.coord(c);
    p.x += q.x;
    p.y += q.y;
  }
  p.x /= static_cast<double>(route.size());
  p.y /= static_cast<double>(route.size());
  return p;
}

struct PartitionReport {
  bool ok = true;
  std::vector<int> missing;
  std::vector<int> duplicated;
  std::vector<std::size_t> empty_subproblems;
  std::vector<std::string> other;
};

inline PartitionReport validate_partition(const Instance& inst, const std::vector<SubProblem>& subs) {
  PartitionReport rep;
  std::vector<int> count(static_cast<std::size_t>(inst.size()) + 1, 0);
  for (std::size_t s = 0; s < subs.size(); ++s) {
    const auto& sp = subs[s];
    if (sp.customer_ids.empty()) {
      rep.empty_subproblems.push_back(s);
      continue;
    }
    for (int c : sp.customer_ids) {
      if (c < 1 || c > inst.size()) {
        rep.other.push_back("subproblem " + std::to_string(s) + " has unknown id " + std::to_string(c));
        continue;
      }
      ++count[static_cast<std::size_t>(c)];
    }
    const auto& li = sp.local_instance;
    if (sp.id_map.size() != sp.customer_ids.size() || li.size() != static_cast<int>(sp.customer_ids.size())) {
      rep.other.push_back("subproblem " + std::to_string(s) + " id_map size mismatch");
      continue;
    }
    std::vector<int> image = sp.id_map;
    std::sort(image.begin(), image.end());
    std::vector<int> ids = sp.customer_ids;
    std::sort(ids.begin(), ids.end());
    if (image != ids || std::adjacent_find(image.begin(), image.end()) != image.end())
      rep.other.push_back("subproblem " + std::to_string(s) + " id_map is not a bijection onto its customers");
    if (li.capacity() != inst.capacity()) rep.other.push_back("subproblem " + std::to_string(s) + " capacity differs");
    if (li.depot() != inst.depot()) rep.other.push_back("subproblem " + std::to_string(s) + " depot differs");
    for (int local = 1; local <= li.size(); ++local) {
      const int g = sp.id_map[static_cast<std::size_t>(local) - 1];
      if (g < 1 || g > inst.size()) continue;
      if (li.demand(local) != inst.demand(g) || li.coord(local) != inst.coord(g))
        rep.other.push_back("subproblem " + std::to_string(s) + " local customer " + std::to_string(local) +
                            " does not match global " + std::to_string(g));
      if (li.demand(local) > li.capacity()) rep.other.push_back("demand above capacity");
    }
  }
  for (int c = 1; c <= inst.size(); ++c) {
    if (count[static_cast<std::size_t>(c)] == 0) rep.missing.push_back(c);
    if (count[static_cast<std::size_t>(c)] > 1) rep.duplicated.push_back(c);
  }
  rep.ok = rep.missing.empty() && rep.duplicated.empty() && rep.empty_subproblems.empty() && rep.other.empty();
  return rep;
}

namespace detail {

struct Unit {
  std::vector<int> customers;
  Point center;
};

using Group = std::vector<std::size_t>;  // indices into the unit list

inline double sq(Point a, Point b) { return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y); }

inline std::size_t group_size(const std::vector<Unit>& units, const Group& g) {
  std::size_t n = 0;
  for (auto u : g) n += units[u].customers.size();
  return n;
}

inline Point group_center(const std::vector<Unit>& units, const Group& g) {
  Point p;
  double w = 0.0;
  for (auto u : g) {
    const double k = static_cast<double>(units[u].customers.size());
    p.x += units[u].center.x * k;
    p.y += units[u].center.y * k;
    w += k;
  }
  if (w > 0) {
    p.x /= w;
    p.y /= w;
  }
  return p;
}

/// Customer coordinates with exact duplicates moved apart by a tiny
/// seed-derived offset so geometric strategies never see coincident points.
inline std::vector<Point> working_coords(const Instance& inst, std::uint64_t seed) {
  std::vector<Point> pts(static_cast<std::size_t>(inst.size()) + 1);
  pts[0] = inst.depot();
  double minx = inst.depot().x, maxx = minx, miny = inst.depot().y, maxy = miny;
  for (const auto& c : inst.customers()) {
    pts[static_cast<std::size_t>(c.id)] = c.pos;
    minx = std::min(minx, c.pos.x);
    maxx = std::max(maxx, c.pos.x);
    miny = std::min(miny, c.pos.y);
    maxy = std::max(maxy, c.pos.y);
  }
  const double scale = std::max(1.0, std::hypot(maxx - minx, maxy - miny)) * 1e-7;
  std::map<std::pair<double, double>, int> seen;
  for (int c = 1; c <= inst.size(); ++c) {
    auto& p = pts[static_cast<std::size_t>(c)];
    const int k = seen[{p.x, p.y}]++;
    if (k == 0) continue;
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    const double ang = uniform_real(rng, 0.0, 2.0 * std::numbers::pi);
    p.x += scale * k * std::cos(ang);
    p.y += scale * k * std::sin(ang);
  }
  return pts;
}

inline std::size_t nearest_center(Point p, const std::vector<Point>& centers) {
  std::size_t best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = sq(p, centers[c]);
    if (d < bd) {
      bd = d;
      best = c;
    }
  }
  return best;
}

inline std::vector<Point> farthest_point_seeds(const std::vector<Unit>& units, std::size_t k, Rng& rng) {
  std::vector<Point> centers;
  if (units.empty() || k == 0) return centers;
  centers.push_back(units[uniform_index(rng, units.size())].center);
  std::vector<double> best(units.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    std::size_t far = 0;
    double fd = -1.0;
    for (std::size_t u = 0; u < units.size(); ++u) {
      best[u] = std::min(best[u], sq(units[u].center, centers.back()));
      if (best[u] > fd) {
        fd = best[u];
        far = u;
      }
    }
    if (fd <= 0.0) break;
    centers.push_back(units[far].center);
  }
  return centers;
}

inline std::vector<Group> groups_from_labels(const std::vector<std::size_t>& label, std::size_t k) {
  std::vector<Group> groups(k);
  for (std::size_t u = 0; u < label.size(); ++u) groups[label[u]].push_back(u);
  std::erase_if(groups, [](const Group& g) { return g.empty(); });
  return groups;
}

/// Lloyd iterations (at most 50 or until the assignment is a fixpoint).
inline std::vector<Group> kmeans(const std::vector<Unit>& units, std::size_t k, Rng& rng) {
  auto centers = farthest_point_seeds(units, k, rng);
  std::vector<std::size_t> label(units.size(), 0);
  for (int it = 0; it < 50; ++it) {
    bool changed = it == 0;
    for (std::size_t u = 0; u < units.size(); ++u) {
      const auto c = nearest_center(units[u].center, centers);
      if (c != label[u]) changed = true;
      label[u] = c;
    }
    if (!changed) break;
    std::vector<Point> sum(centers.size());
    std::vector<double> cnt(centers.size(), 0.0);
    for (std::size_t u = 0; u < units.size(); ++u) {
      sum[label[u]].x += units[u].center.x;
      sum[label[u]].y += units[u].center.y;
      cnt[label[u]] += 1.0;
    }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (cnt[c] > 0) centers[c] = {sum[c].x / cnt[c], sum[c].y / cnt[c]};
  }
  return groups_from_labels(label, centers.size());
}

inline std::vector<Group> capacity_balanced(const std::vector<Unit>& units, const std::vector<double>& demand,
                                            std::size_t k, double slack, Rng& rng) {
  auto centers = farthest_point_seeds(units, k, rng);
  const double total = std::accumulate(demand.begin(), demand.end(), 0.0);
  const double limit = slack * total / static_cast<double>(std::max<std::size_t>(1, centers.size()));
  std::vector<std::size_t> label(units.size(), 0);
  for (int it = 0; it < 20; ++it) {
    struct Cand {
      double d;
      std::size_t u, c;
    };
    std::vector<Cand> cands;
    cands.reserve(units.size() * centers.size());
    for (std::size_t u = 0; u < units.size(); ++u)
      for (std::size_t c = 0; c < centers.size(); ++c) cands.push_back({sq(units[u].center, centers[c]), u, c});
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      return a.d != b.d ? a.d < b.d : (a.u != b.u ? a.u < b.u : a.c < b.c);
    });
    std::vector<double> load(centers.size(), 0.0);
    std::vector<char> done(units.size(), 0);
    std::vector<std::size_t> next(units.size(), 0);
    for (const auto& cd : cands) {
      if (done[cd.u] || load[cd.c] + demand[cd.u] > limit) continue;
      done[cd.u] = 1;
      next[cd.u] = cd.c;
      load[cd.c] += demand[cd.u];
    }
    for (std::size_t u = 0; u < units.size(); ++u)
      if (!done[u]) next[u] = nearest_center(units[u].center, centers);
    const bool changed = it == 0 || next != label;
    label = next;
    if (!changed) break;
    std::vector<Point> sum(centers.size());
    std::vector<double> cnt(centers.size(), 0.0);
    for (std::size_t u = 0; u < units.size(); ++u) {
      sum[label[u]].x += units[u].center.x;
      sum[label[u]].y += units[u].center.y;
      cnt[label[u]] += 1.0;
    }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (cnt[c] > 0) centers[c] = {sum[c].x / cnt[c], sum[c].y / cnt[c]};
  }
  return groups_from_labels(label, centers.size());
}

inline double polar_angle(Point p, Point depot, double start) {
  double a = std::atan2(p.y - depot.y, p.x - depot.x) - start;
  a = std::fmod(a, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a;
}

/// Cuts an ordered unit sequence into k contiguous chunks of balanced
/// customer count.
inline std::vector<Group> chunk(const std::vector<std::size_t>& order, const std::vector<Unit>& units, std::size_t k) {
  std::size_t total = 0;
  for (auto u : order) total += units[u].customers.size();
  std::vector<Group> groups;
  std::size_t acc = 0;
  Group cur;
  for (auto u : order) {
    cur.push_back(u);
    acc += units[u].customers.size();
    const double boundary = static_cast<double>(total) * static_cast<double>(groups.size() + 1) / static_cast<double>(k);
    if (static_cast<double>(acc) >= boundary - 1e-9 && groups.size() + 1 < k) {
      groups.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) groups.push_back(std::move(cur));
  return groups;
}

inline std::vector<Group> polar_sweep(const std::vector<Unit>& units, Point depot, std::size_t k, double start) {
  std::vector<std::size_t> order(units.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> ang(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) ang[u] = polar_angle(units[u].center, depot, start);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return ang[a] < ang[b]; });
  return chunk(order, units, k);
}

inline std::vector<Group> angular_radial(const std::vector<Unit>& units, Point depot, std::size_t k, double start,
                                         std::size_t rings) {
  rings = std::max<std::size_t>(1, std::min(rings, k));
  const std::size_t sectors = (k + rings - 1) / rings;
  std::vector<Group> out;
  for (auto& sector : polar_sweep(units, depot, sectors, start)) {
    std::stable_sort(sector.begin(), sector.end(),
                     [&](auto a, auto b) { return sq(units[a].center, depot) < sq(units[b].center, depot); });
    for (auto& g : chunk(sector, units, std::min(rings, sector.size()))) out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<Group> voronoi(const std::vector<Unit>& units, std::size_t k, Rng& rng) {
  const auto seeds = farthest_point_seeds(units, k, rng);
  std::vector<std::size_t> label(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) label[u] = nearest_center(units[u].center, seeds);
  return groups_from_labels(label, seeds.size());
}

/// Halves group `g` at the median of its wider axis (balanced by customers).
inline std::pair<Group, Group> median_split(const std::vector<Unit>& units, Group g) {
  double minx = std::numeric_limits<double>::infinity(), maxx = -minx, miny = minx, maxy = -minx;
  for (auto u : g) {
    minx = std::min(minx, units[u].center.x);
    maxx = std::max(maxx, units[u].center.x);
    miny = std::min(miny, units[u].center.y);
    maxy = std::max(maxy, units[u].center.y);
  }
  const bool by_x = (maxx - minx) >= (maxy - miny);
  std::stable_sort(g.begin(), g.end(), [&](auto a, auto b) {
    const double ka = by_x ? units[a].center.x : units[a].center.y;
    const double kb = by_x ? units[b].center.x : units[b].center.y;
    return ka != kb ? ka < kb : a < b;
  });
  auto halves = chunk(g, units, 2);
  if (halves.size() < 2) return {halves.front(), {}};
  return {halves[0], halves[1]};
}

inline std::vector<Group> kd_median(const std::vector<Unit>& units, std::size_t k) {
  std::vector<Group> groups{Group(units.size())};
  std::iota(groups[0].begin(), groups[0].end(), 0);
  while (groups.size() < k) {
    std::size_t pick = groups.size();
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (groups[i].size() < 2) continue;
      if (pick == groups.size() || group_size(units, groups[i]) > group_size(units, groups[pick])) pick = i;
    }
    if (pick == groups.size()) break;
    auto [a, b] = median_split(units, groups[pick]);
    if (b.empty()) break;
    groups[pick] = std::move(a);
    groups.push_back(std::move(b));
  }
  return groups;
}

inline std::vector<Group> spatial_grid(const std::vector<Unit>& units, std::size_t k) {
  double minx = std::numeric_limits<double>::infinity(), maxx = -minx, miny = minx, maxy = -minx;
  for (const auto& u : units) {
    minx = std::min(minx, u.center.x);
    maxx = std::max(maxx, u.center.x);
    miny = std::min(miny, u.center.y);
    maxy = std::max(maxy, u.center.y);
  }
  const auto gx = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(k))));
  const std::size_t gy = (k + gx - 1) / gx;
  const double w = std::max(maxx - minx, 1e-12), h = std::max(maxy - miny, 1e-12);
  std::vector<std::size_t> label(units.size());
  for (std::size_t u = 0; u < units.size(); ++u) {
    auto cx = static_cast<std::size_t>((units[u].center.x - minx) / w * static_cast<double>(gx));
    auto cy = static_cast<std::size_t>((units[u].center.y - miny) / h * static_cast<double>(gy));
    cx = std::min(cx, gx - 1);
    cy = std::min(cy, gy - 1);
    label[u] = cy * gx + cx;
  }
  return groups_from_labels(label, gx * gy);
}

inline std::vector<Group> agglomerative(const std::vector<Unit>& units, std::size_t k, double cap) {
  std::vector<Group> groups;
  std::vector<Point> centers;
  std::vector<std::size_t> sizes;
  for (std::size_t u = 0; u < units.size(); ++u) {
    groups.push_back({u});
    centers.push_back(units[u].center);
    sizes.push_back(units[u].customers.size());
  }
  while (groups.size() > k) {
    const std::size_t c = groups.size();
    std::vector<std::size_t> nn(c, c);
    std::vector<double> nd(c, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        if (i == j || static_cast<double>(sizes[i] + sizes[j]) > cap) continue;
        const double d = sq(centers[i], centers[j]);
        if (d < nd[i]) {
          nd[i] = d;
          nn[i] = j;
        }
      }
    std::vector<std::pair<double, std::size_t>> mutual;
    for (std::size_t i = 0; i < c; ++i)
      if (nn[i] < c && nn[i] > i && nn[nn[i]] == i) mutual.push_back({nd[i], i});
    if (mutual.empty()) {
      bool any = false;
      for (std::size_t i = 0; i < c; ++i) any = any || nn[i] < c;
      if (!any) {
        cap *= 1.5;  // nothing fits under the cap: relax it
        continue;
      }
      // no mutual pair but some valid pair: merge the globally closest
      std::size_t best = c;
      for (std::size_t i = 0; i < c; ++i)
        if (nn[i] < c && (best == c || nd[i] < nd[best])) best = i;
      mutual.push_back({nd[best], best});
      if (nn[best] < best) std::swap(mutual.back().second, nn[best]), nn[nn[best]] = best;
    }
    std::sort(mutual.begin(), mutual.end());
    std::vector<char> gone(c, 0);
    std::size_t budget = groups.size() - k;
    for (const auto& [d, i] : mutual) {
      if (budget == 0) break;
      const std::size_t j = nn[i];
      if (gone[i] || gone[j]) continue;
      const double wi = double(sizes[i]), wj = double(sizes[j]);
      centers[i] = {(centers[i].x * wi + centers[j].x * wj) / (wi + wj), (centers[i].y * wi + centers[j].y * wj) / (wi + wj)};
      sizes[i] += sizes[j];
      groups[i].insert(groups[i].end(), groups[j].begin(), groups[j].end());
      gone[j] = 1;
      --budget;
    }
    std::vector<Group> g2;
    std::vector<Point> c2;
    std::vector<std::size_t> s2;
    for (std::size_t i = 0; i < c; ++i) {
      if (gone[i]) continue;
      g2.push_back(std::move(groups[i]));
      c2.push_back(centers[i]);
      s2.push_back(sizes[i]);
    }
    groups = std::move(g2);
    centers = std::move(c2);
    sizes = std::move(s2);
  }
  return groups;
}

inline std::vector<Group> density(const std::vector<Unit>& units, std::size_t k, double radius_factor,
                                  std::size_t min_points) {
  const std::size_t n = units.size();
  double mean_nn = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double b = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) b = std::min(b, sq(units[i].center, units[j].center));
    mean_nn += n > 1 ? std::sqrt(b) : 0.0;
  }
  mean_nn /= static_cast<double>(std::max<std::size_t>(1, n));
  const double r2 = std::pow(radius_factor * mean_nn, 2);
  std::vector<std::vector<std::size_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && sq(units[i].center, units[j].center) <= r2) nbrs[i].push_back(j);
  constexpr std::size_t kNoise = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> label(n, kNoise);
  std::size_t clusters = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kNoise || nbrs[i].size() + 1 < min_points) continue;
    std::vector<std::size_t> stack{i};
    label[i] = clusters;
    while (!stack.empty()) {
      const auto p = stack.back();
      stack.pop_back();
      if (nbrs[p].size() + 1 < min_points) continue;  // border point
      for (auto q : nbrs[p])
        if (label[q] == kNoise) {
          label[q] = clusters;
          stack.push_back(q);
        }
    }
    ++clusters;
  }
  if (clusters == 0) {
    std::fill(label.begin(), label.end(), 0);
    clusters = 1;
  }
  auto groups = groups_from_labels(
      [&] {
        // noise joins the nearest cluster centroid
        std::vector<Point> cent(clusters);
        std::vector<double> cnt(clusters, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          if (label[i] != kNoise) {
            cent[label[i]].x += units[i].center.x;
            cent[label[i]].y += units[i].center.y;
            cnt[label[i]] += 1.0;
          }
        for (std::size_t c = 0; c < clusters; ++c) cent[c] = {cent[c].x / cnt[c], cent[c].y / cnt[c]};
        auto out = label;
        for (std::size_t i = 0; i < n; ++i)
          if (out[i] == kNoise) out[i] = nearest_center(units[i].center, cent);
        return out;
      }(),
      clusters);
  // reconcile the density-driven cluster count with k
  while (groups.size() > k) {
    std::size_t small = 0;
    for (std::size_t i = 1; i < groups.size(); ++i)
      if (group_size(units, groups[i]) < group_size(units, groups[small])) small = i;
    const Point cs = group_center(units, groups[small]);
    std::size_t target = groups.size();
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (i == small) continue;
      const double d = sq(cs, group_center(units, groups[i]));
      if (d < bd) {
        bd = d;
        target = i;
      }
    }
    groups[target].insert(groups[target].end(), groups[small].begin(), groups[small].end());
    groups.erase(groups.begin() + static_cast<long>(small));
  }
  while (groups.size() < k) {
    std::size_t big = groups.size();
    for (std::size_t i = 0; i < groups.size(); ++i)
      if (groups[i].size() >= 2 && (big == groups.size() || group_size(units, groups[i]) > group_size(units, groups[big])))
        big = i;
    if (big == groups.size()) break;
    auto [a, b] = median_split(units, groups[big]);
    if (b.empty()) break;
    groups[big] = std::move(a);
    groups.push_back(std::move(b));
  }
  return groups;
}

/// Enforces ceil(m/2) <= |group| <= 2m (in customers) except for at most one
/// remainder group and groups made of a single oversized unit.
inline std::vector<Group> balance(const std::vector<Unit>& units, std::vector<Group> groups, std::size_t m) {
  const std::size_t lo = (m + 1) / 2, hi = 2 * m;
  for (std::size_t i = 0; i < groups.size();) {
    if (group_size(units, groups[i]) > hi && groups[i].size() > 1) {
      auto [a, b] = median_split(units, groups[i]);
      if (!b.empty()) {
        groups[i] = std::move(a);
        groups.push_back(std::move(b));
        continue;
      }
    }
    ++i;
  }
  for (;;) {
    std::size_t small = groups.size();
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (group_size(units, groups[i]) >= lo) continue;
      if (small == groups.size() || group_size(units, groups[i]) < group_size(units, groups[small])) small = i;
    }
    if (small == groups.size()) break;
    const Point cs = group_center(units, groups[small]);
    const std::size_t ss = group_size(units, groups[small]);
    std::size_t target = groups.size();
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < groups.size(); ++i) {
      if (i == small || ss + group_size(units, groups[i]) > hi) continue;
      const double d = sq(cs, group_center(units, groups[i]));
      if (d < bd) {
        bd = d;
        target = i;
      }
    }
    if (target == groups.size()) {
      // the only undersized group left with nowhere to go is the remainder
      std::size_t others = 0;
      for (std::size_t i = 0; i < groups.size(); ++i)
        if (i != small && group_size(units, groups[i]) < lo) ++others;
      if (others == 0) break;
      // two undersized groups always fit together
      for (std::size_t i = 0; i < groups.size(); ++i)
        if (i != small && group_size(units, groups[i]) < lo) {
          target = i;
          break;
        }
    }
    groups[target].insert(groups[target].end(), groups[small].begin(), groups[small].end());
    groups.erase(groups.begin() + static_cast<long>(small));
  }
  return groups;
}

}  // namespace detail

class DecompositionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Partitions the customers of `inst` into subproblems with the catalog
/// strategy named in `params`.
inline std::vector<SubProblem> decompose(const Instance& inst, const std::optional<Solution>& elite,
                                         const DecompositionParams& params) {
  if (auto v = validate_decomposition_params(params); !v.empty()) throw DecompositionError(v.front());
  const auto* info = find_strategy(params.strategy_id);
  const int n = inst.size();
  if (params.cluster_count && *params.cluster_count > n)
    throw DecompositionError("cluster_count " + std::to_string(*params.cluster_count) + " exceeds N = " +
                             std::to_string(n));
  if (info->requires_elite && (!elite || elite->routes.empty()))
    throw DecompositionError(params.strategy_id + " needs an elite solution");

  std::size_t k = params.cluster_count
                      ? static_cast<std::size_t>(*params.cluster_count)
                      : static_cast<std::size_t>((n + *params.target_size - 1) / *params.target_size);
  k = std::max<std::size_t>(1, k);

  const auto pts = detail::working_coords(inst, params.seed);
  std::vector<detail::Unit> units;
  std::vector<double> unit_demand;
  if (info->requires_elite) {
    std::vector<int> seen(static_cast<std::size_t>(n) + 1, 0);
    for (const auto& r : elite->routes) {
      if (r.empty()) continue;
      detail::Unit u{r, {}};
      double q = 0.0;
      for (int c : r) {
        if (c < 1 || c > n || seen[static_cast<std::size_t>(c)]++)
          throw DecompositionError("elite solution is not a partition of the customers");
        u.center.x += pts[static_cast<std::size_t>(c)].x;
        u.center.y += pts[static_cast<std::size_t>(c)].y;
        q += inst.demand(c);
      }
      u.center.x /= static_cast<double>(r.size());
      u.center.y /= static_cast<double>(r.size());
      units.push_back(std::move(u));
      unit_demand.push_back(q);
    }
    for (int c = 1; c <= n; ++c)
      if (!seen[static_cast<std::size_t>(c)]) throw DecompositionError("elite solution misses customer " + std::to_string(c));
  } else {
    for (int c = 1; c <= n; ++c) {
      units.push_back({{c}, pts[static_cast<std::size_t>(c)]});
      unit_demand.push_back(inst.demand(c));
    }
  }
  k = std::min(k, units.size());

  Rng rng(derive_seed(params.seed, hash_string(params.strategy_id)));
  std::vector<detail::Group> groups;
  const std::string& id = params.strategy_id;
  if (k <= 1) {
    groups.assign(1, detail::Group(units.size()));
    std::iota(groups[0].begin(), groups[0].end(), 0);
  } else if (id == "route_barycenter_kmeans" || id == "customer_kmeans") {
    groups = detail::kmeans(units, k, rng);
  } else if (id == "capacity_balanced_kmeans") {
    groups = detail::capacity_balanced(units, unit_demand, k, params.param("slack"), rng);
  } else if (id == "polar_sweep") {
    groups = detail::polar_sweep(units, inst.depot(), k, params.param("start_angle"));
  } else if (id == "angular_radial") {
    groups = detail::angular_radial(units, inst.depot(), k, params.param("start_angle"),
                                    static_cast<std::size_t>(params.param("rings")));
  } else if (id == "voronoi_farthest") {
    groups = detail::voronoi(units, k, rng);
  } else if (id == "density_clustering") {
    groups = detail::density(units, k, params.param("radius_factor"), static_cast<std::size_t>(params.param("min_points")));
  } else if (id == "elite_route_grouping") {
    std::vector<std::size_t> order(units.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order, rng);
    groups = detail::chunk(order, units, k);
  } else if (id == "spatial_grid") {
    groups = detail::spatial_grid(units, k);
  } else if (id == "agglomerative") {
    const double cap = params.target_size ? double(*params.target_size)
                                          : std::ceil(double(n) / double(k)) * 1.25;
    groups = detail::agglomerative(units, k, cap);
  } else if (id == "kd_median") {
    groups = detail::kd_median(units, k);
  } else {
    throw DecompositionError("strategy " + id + " has no implementation");
  }
  std::erase_if(groups, [](const detail::Group& g) { return g.empty(); });
  if (params.target_size && k > 1) groups = detail::balance(units, std::move(groups), static_cast<std::size_t>(*params.target_size));

  std::vector<SubProblem> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    std::vector<int> ids;
    for (auto u : g) ids.insert(ids.end(), units[u].customers.begin(), units[u].customers.end());
    out.push_back(make_subproblem(inst, std::move(ids), out.size()));
  }
  return out;
}

}  // namespace vrptune

#endif  // VRPTUNE_DECOMPOSITION_HPP
