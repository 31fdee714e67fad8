#ifndef VRPTUNE_CVRP_HPP
#define VRPTUNE_CVRP_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace vrptune {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline double euclidean(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

enum class Rounding { nearest_integer, exact_float };

struct Customer {
  int id = 0;
  Point pos;
  double demand = 0.0;
  friend bool operator==(const Customer&, const Customer&) = default;
};

/// Raised for malformed instance, solution or table files. `line` is 1-based,
/// 0 when the problem is not tied to a line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

class InvalidInstance : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Immutable CVRP instance. Node 0 is the depot, nodes 1..N the customers.
/// Copies share the distance matrix.
class Instance {
 public:
  Instance() = default;

  Instance(std::string name, Point depot, std::vector<Customer> customers, double capacity,
           Rounding rounding = Rounding::nearest_integer, std::optional<double> bks = std::nullopt)
      : name_(std::move(name)),
        depot_(depot),
        customers_(std::move(customers)),
        capacity_(capacity),
        rounding_(rounding),
        bks_(bks) {
    if (customers_.empty()) throw InvalidInstance("instance needs at least one customer");
    if (!(capacity_ > 0.0)) throw InvalidInstance("capacity must be positive");
    for (std::size_t i = 0; i < customers_.size(); ++i) {
      const auto& c = customers_[i];
      if (c.id != static_cast<int>(i) + 1)
        throw InvalidInstance("customer ids must be contiguous 1..N");
      if (c.demand < 0.0) throw InvalidInstance("negative demand for customer " + std::to_string(c.id));
      if (c.demand > capacity_)
        throw InvalidInstance("demand exceeds capacity for customer " + std::to_string(c.id));
    }
    if (bks_ && !(*bks_ > 0.0)) throw InvalidInstance("bks must be positive");
    build_matrix();
  }

  const std::string& name() const noexcept { return name_; }
  Point depot() const noexcept { return depot_; }
  const std::vector<Customer>& customers() const noexcept { return customers_; }
  int size() const noexcept { return static_cast<int>(customers_.size()); }
  double capacity() const noexcept { return capacity_; }
  Rounding rounding() const noexcept { return rounding_; }
  const std::optional<double>& bks() const noexcept { return bks_; }

  Instance with_bks(std::optional<double> bks) const {
    Instance copy = *this;
    if (bks && !(*bks > 0.0)) throw InvalidInstance("bks must be positive");
    copy.bks_ = bks;
    return copy;
  }

  Point coord(int node) const {
    check_node(node);
    return node == 0 ? depot_ : customers_[node - 1].pos;
  }

  double demand(int node) const {
    check_node(node);
    return node == 0 ? 0.0 : customers_[node - 1].demand;
  }

  double total_demand() const {
    double s = 0.0;
    for (const auto& c : customers_) s += c.demand;
    return s;
  }

  /// Checked distance between nodes a and b (0 = depot).
  double distance(int a, int b) const {
    check_node(a);
    check_node(b);
    return dist(a, b);
  }

  /// Unchecked hot-path accessor.
  double dist(int a, int b) const noexcept { return (*matrix_)[static_cast<std::size_t>(a) * stride_ + b]; }

  friend bool operator==(const Instance& a, const Instance& b) {
    return a.name_ == b.name_ && a.depot_ == b.depot_ && a.customers_ == b.customers_ &&
           a.capacity_ == b.capacity_ && a.rounding_ == b.rounding_ && a.bks_ == b.bks_;
  }

 private:
  void check_node(int node) const {
    if (node < 0 || node > size()) throw std::out_of_range("invalid node id " + std::to_string(node));
  }

  void build_matrix() {
    stride_ = customers_.size() + 1;
    auto m = std::make_shared<std::vector<double>>(stride_ * stride_, 0.0);
    for (std::size_t a = 0; a < stride_; ++a) {
      const Point pa = a == 0 ? depot_ : customers_[a - 1].pos;
      for (std::size_t b = a + 1; b < stride_; ++b) {
        const Point pb = b == 0 ? depot_ : customers_[b - 1].pos;
        double d = euclidean(pa, pb);
        if (rounding_ == Rounding::nearest_integer) d = std::round(d);
        (*m)[a * stride_ + b] = d;
        (*m)[b * stride_ + a] = d;
      }
    }
    matrix_ = std::move(m);
  }

  std::string name_;
  Point depot_;
  std::vector<Customer> customers_;
  double capacity_ = 0.0;
  Rounding rounding_ = Rounding::nearest_integer;
  std::optional<double> bks_;
  std::size_t stride_ = 0;
  std::shared_ptr<const std::vector<double>> matrix_;
};

using Route = std::vector<int>;

struct Solution {
  std::vector<Route> routes;
  double cost = 0.0;
  bool feasible = false;
};

enum class ViolationKind { overloaded_route, missing_customer, duplicate_customer, empty_route };

struct Violation {
  ViolationKind kind;
  int subject;  // route index or customer id
  double amount = 0.0;
};

struct Evaluation {
  double cost = 0.0;
  bool feasible = false;
  std::vector<Violation> violations;
};

inline double route_cost(const Instance& inst, const Route& route) {
  if (route.empty()) return 0.0;
  double c = inst.dist(0, route.front());
  for (std::size_t i = 1; i < route.size(); ++i) c += inst.dist(route[i - 1], route[i]);
  return c + inst.dist(route.back(), 0);
}

inline double route_load(const Instance& inst, const Route& route) {
  double q = 0.0;
  for (int c : route) q += inst.demand(c);
  return q;
}

inline Evaluation evaluate_routes(const Instance& inst, const std::vector<Route>& routes) {
  Evaluation ev;
  std::vector<int> seen(inst.size() + 1, 0);
  for (std::size_t r = 0; r < routes.size(); ++r) {
    const auto& route = routes[r];
    if (route.empty()) {
      ev.violations.push_back({ViolationKind::empty_route, static_cast<int>(r)});
      continue;
    }
    for (int c : route) {
      if (c < 1 || c > inst.size()) throw std::out_of_range("unknown customer id " + std::to_string(c));
      ++seen[c];
    }
    ev.cost += route_cost(inst, route);
    const double load = route_load(inst, route);
    if (load > inst.capacity() + 1e-9)
      ev.violations.push_back({ViolationKind::overloaded_route, static_cast<int>(r), load - inst.capacity()});
  }
  for (int c = 1; c <= inst.size(); ++c) {
    if (seen[c] == 0) ev.violations.push_back({ViolationKind::missing_customer, c});
    if (seen[c] > 1) ev.violations.push_back({ViolationKind::duplicate_customer, c, double(seen[c] - 1)});
  }
  ev.feasible = ev.violations.empty();
  return ev;
}

inline Evaluation evaluate_solution(const Instance& inst, const Solution& sol) {
  return evaluate_routes(inst, sol.routes);
}

inline Solution make_solution(const Instance& inst, std::vector<Route> routes) {
  std::erase_if(routes, [](const Route& r) { return r.empty(); });
  Solution s;
  const auto ev = evaluate_routes(inst, routes);
  s.routes = std::move(routes);
  s.cost = ev.cost;
  s.feasible = ev.feasible;
  return s;
}

/// Relative gap (objective - bks) / bks.
inline double gap(double objective, double bks) {
  if (!(bks > 0.0)) throw std::invalid_argument("gap needs a positive reference cost");
  return (objective - bks) / bks;
}

inline double gap(double objective, const std::optional<double>& bks) {
  if (!bks) throw std::invalid_argument("gap needs a reference cost; none available");
  return gap(objective, *bks);
}

/// Formats a ratio as a percentage with two decimals, e.g. 0.0005 -> "0.05%".
inline std::string format_percent(double ratio) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f%%", ratio * 100.0);
  return buf;
}

// ---------------------------------------------------------------------------
// TSPLIB / CVRPLib I/O

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_number(std::string_view tok, int line, const char* field) {
  std::string t(tok);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v))
    throw ParseError(std::string("malformed numeric field ") + field + " '" + t + "'", line);
  return v;
}

inline long parse_integer(std::string_view tok, int line, const char* field) {
  long v = 0;
  const auto* b = tok.data();
  const auto* e = tok.data() + tok.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || p != e)
    throw ParseError(std::string("malformed integer field ") + field + " '" + std::string(tok) + "'", line);
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  if (v == std::floor(v) && std::fabs(v) < 1e15) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.17g", v);
  }
  return buf;
}

}  // namespace detail

/// Parses TSPLIB-style CVRP text (EUC_2D only, single depot, single capacity).
inline Instance parse_instance(std::string_view text, Rounding rounding = Rounding::nearest_integer) {
  using namespace detail;
  std::string name;
  long dimension = -1;
  std::optional<double> capacity;
  int capacity_line = 0;
  std::string edge_type;
  std::map<long, std::pair<Point, int>> coords;
  std::map<long, std::pair<double, int>> demands;
  std::vector<long> depots;
  bool saw_coord = false, saw_demand = false, saw_depot = false;

  enum class Section { none, coords, demands, depots } section = Section::none;
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const auto line = trim(raw);
    if (line.empty()) continue;

    const auto colon = line.find(':');
    const char lead = line.front();
    const bool is_data = std::isdigit(static_cast<unsigned char>(lead)) != 0 || lead == '-' || lead == '+';
    if (!is_data) {
      std::string key(trim(colon == std::string_view::npos ? line : line.substr(0, colon)));
      const std::string value(colon == std::string_view::npos ? std::string_view{} : trim(line.substr(colon + 1)));
      section = Section::none;
      if (key == "EOF") break;
      if (key == "NAME") {
        name = value;
      } else if (key == "DIMENSION") {
        dimension = parse_integer(value, lineno, "DIMENSION");
      } else if (key == "CAPACITY") {
        if (capacity) throw ParseError("multiple CAPACITY entries (heterogeneous fleets unsupported)", lineno);
        capacity = parse_number(value, lineno, "CAPACITY");
        capacity_line = lineno;
      } else if (key == "EDGE_WEIGHT_TYPE") {
        edge_type = value;
        if (edge_type != "EUC_2D") throw ParseError("unsupported EDGE_WEIGHT_TYPE '" + edge_type + "'", lineno);
      } else if (key == "NODE_COORD_SECTION") {
        section = Section::coords;
        saw_coord = true;
      } else if (key == "DEMAND_SECTION") {
        section = Section::demands;
        saw_demand = true;
      } else if (key == "DEPOT_SECTION") {
        section = Section::depots;
        saw_depot = true;
      } else if (key == "VEHICLE_CAPACITY_SECTION" || key == "CAPACITIES") {
        throw ParseError("heterogeneous fleets are not supported", lineno);
      } else if (key.size() > 8 && key.ends_with("_SECTION")) {
        throw ParseError("unsupported section " + key, lineno);
      }
      // other header keywords (TYPE, COMMENT, ...) are informational
      continue;
    }

    const auto toks = split_ws(line);
    switch (section) {
      case Section::coords: {
        if (toks.size() != 3) throw ParseError("expected 'id x y' in NODE_COORD_SECTION", lineno);
        const long id = parse_integer(toks[0], lineno, "node id");
        if (coords.count(id)) throw ParseError("duplicate node id " + std::to_string(id), lineno);
        coords[id] = {{parse_number(toks[1], lineno, "x"), parse_number(toks[2], lineno, "y")}, lineno};
        break;
      }
      case Section::demands: {
        if (toks.size() != 2) throw ParseError("expected 'id demand' in DEMAND_SECTION", lineno);
        const long id = parse_integer(toks[0], lineno, "node id");
        const double q = parse_number(toks[1], lineno, "demand");
        if (q < 0) throw ParseError("negative demand", lineno);
        demands[id] = {q, lineno};
        break;
      }
      case Section::depots: {
        for (auto t : toks) {
          const long id = parse_integer(t, lineno, "depot id");
          if (id == -1) {
            section = Section::none;
            break;
          }
          depots.push_back(id);
        }
        break;
      }
      default:
        throw ParseError("unexpected content '" + std::string(line) + "'", lineno);
    }
  }

  if (!saw_coord) throw ParseError("missing section NODE_COORD_SECTION", 0);
  if (!saw_demand) throw ParseError("missing section DEMAND_SECTION", 0);
  if (!capacity) throw ParseError("missing CAPACITY", 0);
  if (edge_type.empty()) throw ParseError("missing EDGE_WEIGHT_TYPE", 0);
  if (!(*capacity > 0)) throw ParseError("CAPACITY must be positive", capacity_line);
  if (dimension >= 0 && static_cast<long>(coords.size()) != dimension)
    throw ParseError("DIMENSION " + std::to_string(dimension) + " does not match " +
                         std::to_string(coords.size()) + " coordinates",
                     0);
  long depot_id = saw_depot && !depots.empty() ? depots.front() : coords.begin()->first;
  if (depots.size() > 1) throw ParseError("multiple depots are not supported", 0);
  if (!coords.count(depot_id)) throw ParseError("depot id " + std::to_string(depot_id) + " has no coordinates", 0);

  std::vector<Customer> customers;
  int next = 1;
  for (const auto& [id, entry] : coords) {
    if (id == depot_id) continue;
    const auto d = demands.find(id);
    if (d == demands.end()) throw ParseError("missing demand for node " + std::to_string(id), entry.second);
    if (d->second.first > *capacity)
      throw ParseError("demand exceeds capacity for node " + std::to_string(id), d->second.second);
    customers.push_back({next++, entry.first, d->second.first});
  }
  if (customers.empty()) throw ParseError("instance has no customers", 0);
  return Instance(name, coords.at(depot_id).first, std::move(customers), *capacity, rounding);
}

/// TSPLIB text with the depot as node 1 and customers as nodes 2..N+1.
inline std::string serialize_instance(const Instance& inst) {
  using detail::format_double;
  std::ostringstream os;
  os << "NAME : " << inst.name() << "\n";
  os << "TYPE : CVRP\n";
  os << "DIMENSION : " << inst.size() + 1 << "\n";
  os << "EDGE_WEIGHT_TYPE : EUC_2D\n";
  os << "CAPACITY : " << format_double(inst.capacity()) << "\n";
  os << "NODE_COORD_SECTION\n";
  os << 1 << " " << format_double(inst.depot().x) << " " << format_double(inst.depot().y) << "\n";
  for (const auto& c : inst.customers())
    os << c.id + 1 << " " << format_double(c.pos.x) << " " << format_double(c.pos.y) << "\n";
  os << "DEMAND_SECTION\n";
  os << "1 0\n";
  for (const auto& c : inst.customers()) os << c.id + 1 << " " << format_double(c.demand) << "\n";
  os << "DEPOT_SECTION\n 1\n -1\nEOF\n";
  return os.str();
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

inline Instance load_instance(const std::string& path, Rounding rounding = Rounding::nearest_integer) {
  return parse_instance(read_file(path), rounding);
}

/// CVRPLib `.sol` text: `Route #k: ids...` lines followed by `Cost <value>`.
inline std::string format_solution(const Solution& sol) {
  std::ostringstream os;
  for (std::size_t r = 0; r < sol.routes.size(); ++r) {
    os << "Route #" << r + 1 << ":";
    for (int c : sol.routes[r]) os << " " << c;
    os << "\n";
  }
  os << "Cost " << detail::format_double(sol.cost) << "\n";
  return os.str();
}

inline Solution parse_solution(std::string_view text, const Instance& inst) {
  using namespace detail;
  std::vector<Route> routes;
  std::optional<double> cost;
  int lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (line.starts_with("Route")) {
      const auto colon = line.find(':');
      if (colon == std::string_view::npos) throw ParseError("route line without ':'", lineno);
      Route r;
      for (auto t : split_ws(line.substr(colon + 1))) r.push_back(static_cast<int>(parse_integer(t, lineno, "customer")));
      routes.push_back(std::move(r));
    } else if (line.starts_with("Cost")) {
      const auto toks = split_ws(line);
      if (toks.size() != 2) throw ParseError("expected 'Cost <value>'", lineno);
      cost = parse_number(toks[1], lineno, "cost");
    } else {
      throw ParseError("unexpected line in solution file", lineno);
    }
  }
  if (!cost) throw ParseError("missing Cost line", 0);
  auto sol = make_solution(inst, std::move(routes));
  if (std::fabs(sol.cost - *cost) > 1e-6 * std::max(1.0, *cost))
    throw ParseError("stated cost " + format_double(*cost) + " differs from recomputed " + format_double(sol.cost), 0);
  return sol;
}

/// Two-column `instance_name cost` table; `#` starts a comment.
inline std::map<std::string, double> parse_bks_table(std::string_view text) {
  using namespace detail;
  std::map<std::string, double> out;
  int lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    auto line = trim(raw);
    if (const auto h = line.find('#'); h != std::string_view::npos) line = trim(line.substr(0, h));
    if (line.empty()) continue;
    const auto toks = split_ws(line);
    if (toks.size() != 2) throw ParseError("expected 'instance_name cost'", lineno);
    const double v = parse_number(toks[1], lineno, "cost");
    if (!(v > 0)) throw ParseError("bks must be positive", lineno);
    out[std::string(toks[0])] = v;
  }
  return out;
}

}  // namespace vrptune

#endif  // VRPTUNE_CVRP_HPP
