// Monte Carlo tree search over the three tiers: UCT selection, expansion with
// semantic pruning and regrowth, rollout, evaluation and backpropagation.
#ifndef VRPTUNE_MCTS_HPP
#define VRPTUNE_MCTS_HPP

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvrp.hpp"
#include "generator.hpp"
#include "hierarchy.hpp"
#include "rng.hpp"
#include "wsmd.hpp"

namespace vrptune {

struct SearchConfig {
  int k = 9;
  double cp = 1.0;
  double epsilon = 0.5;
  long eval_budget = 1000;
  int rollout_count = 1;
  double per_eval_seconds = 0.0;  // per training instance; 0 = cycle cap only
  long per_eval_cycles = 2;
  double per_eval_iteration_scale = 1.0;  // see RunBudget::iteration_scale
  std::uint64_t seed = 0;
  WsmdConfig wsmd;
  bool pruning = true;
  bool regrowth = true;
  int regrow_attempts = 3;
  /// Extra expansions per node, spent when selection ends on a leaf that
  /// was already scored and the node has fewer than k live children.
  int refill_limit = 2;
  /// Tiers fixed to one component; the generator is not asked for them.
  std::array<std::optional<Component>, 3> pinned;
  bool clear_tier1_overrides = false;  // tier-1 candidates keep default global HGS settings
  bool deterministic = true;           // no wall-clock fields in the log
  unsigned threads = 1;                // distance batches
};

inline std::vector<std::string> validate_search_config(const SearchConfig& c) {
  std::vector<std::string> v;
  if (c.k < 1) v.emplace_back("k >= 1");
  if (!(c.cp >= 0.0)) v.emplace_back("cp >= 0");
  if (!(c.epsilon >= 0.0)) v.emplace_back("epsilon >= 0");
  if (c.eval_budget < 1) v.emplace_back("eval_budget >= 1");
  if (c.rollout_count < 1) v.emplace_back("rollout_count >= 1");
  if (c.regrow_attempts < 1) v.emplace_back("regrow_attempts >= 1");
  if (c.refill_limit < 0) v.emplace_back("refill_limit >= 0");
  if (c.per_eval_seconds < 0.0 || c.per_eval_cycles < 0 || (c.per_eval_seconds == 0.0 && c.per_eval_cycles == 0))
    v.emplace_back("per-evaluation budget must be positive");
  if (!(c.per_eval_iteration_scale > 0.0)) v.emplace_back("per_eval_iteration_scale > 0");
  for (std::size_t t = 0; t < 3; ++t)
    if (c.pinned[t] && c.pinned[t]->tier() != static_cast<int>(t) + 1) v.emplace_back("pinned component in wrong tier");
  for (auto& e : validate_wsmd_config(c.wsmd)) v.push_back("wsmd: " + e);
  return v;
}

// ------------------------------------------------------------- reward ---

struct RewardRecord {
  SolverAssembly assembly;
  double mean_gap = 0.0;  // clamped at 0
  double reward = 0.0;
  std::vector<double> per_instance_gaps;  // raw, may be negative
  bool failed = false;
};

inline double reward_of(double mean_gap) { return 1.0 / (1.0 + std::max(0.0, mean_gap)); }

inline json to_json(const RewardRecord& r) {
  return {{"assembly", assembly_to_json(r.assembly)},
          {"mean_gap", r.mean_gap},
          {"reward", r.reward},
          {"per_instance_gaps", r.per_instance_gaps},
          {"failed", r.failed}};
}

inline RewardRecord reward_record_from_json(const json& j) {
  RewardRecord r;
  r.assembly = assembly_from_json(j.at("assembly"));
  r.mean_gap = j.at("mean_gap").get<double>();
  r.reward = j.at("reward").get<double>();
  r.per_instance_gaps = j.at("per_instance_gaps").get<std::vector<double>>();
  r.failed = j.at("failed").get<bool>();
  return r;
}

struct TrainingInstance {
  Instance instance;
  double reference = 0.0;  // BKS or a strong baseline cost
};

/// Runs `a` on every training instance and turns the mean gap into
/// R = 1/(1+gap). A run without a feasible solution, or one that throws,
/// yields R = 0.
inline RewardRecord evaluate(const SolverAssembly& a, const std::vector<TrainingInstance>& train,
                             const RunBudget& budget, std::uint64_t seed, unsigned threads = 1) {
  if (train.empty()) throw std::invalid_argument("evaluation needs training instances");
  RewardRecord r;
  r.assembly = a;
  std::vector<std::optional<double>> cost(train.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < train.size();) {
      try {
        const auto res = run_assembly(a, train[i].instance, budget, derive_seed(seed, i));
        if (res.best.feasible && !res.best.routes.empty()) cost[i] = res.best.cost;
      } catch (const std::exception&) {
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(threads, train.size()); ++t) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  double sum = 0.0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (!cost[i]) {
      r.failed = true;
      r.per_instance_gaps.clear();
      break;
    }
    r.per_instance_gaps.push_back(gap(*cost[i], train[i].reference));
    sum += r.per_instance_gaps.back();
  }
  if (r.failed) return r;
  r.mean_gap = std::max(0.0, sum / double(train.size()));
  r.reward = reward_of(r.mean_gap);
  return r;
}

using Evaluator = std::function<RewardRecord(const SolverAssembly&)>;

/// Evaluator with one fixed seed, so repeated assemblies score the same and
/// the search can cache them.
inline Evaluator make_evaluator(std::vector<TrainingInstance> train, const SearchConfig& cfg, unsigned threads = 1) {
  const RunBudget budget{cfg.per_eval_seconds, cfg.per_eval_cycles, 1, cfg.per_eval_iteration_scale};
  const auto seed = derive_seed(cfg.seed, 0x6576616cULL);
  return [train = std::move(train), budget, seed, threads](const SolverAssembly& a) {
    return evaluate(a, train, budget, seed, threads);
  };
}

// --------------------------------------------------------------- tree ---

struct TreeNode {
  int tier_level = 0;
  std::optional<Component> component;  // none at the root
  long visits = 0;
  double q_bar = 0.0;
  std::vector<std::size_t> children;  // creation order
  bool pruned = false;
  std::size_t creation_index = 0;  // also the node's index in the tree
  std::size_t parent = 0;
  bool expanded = false;
  int refills = 0;
  std::string source;  // generator source, pinned or regrown
};

class Tree {
 public:
  Tree() { nodes_.push_back({}); }

  std::size_t size() const noexcept { return nodes_.size(); }
  const TreeNode& operator[](std::size_t i) const { return nodes_.at(i); }
  TreeNode& operator[](std::size_t i) { return nodes_.at(i); }
  const TreeNode& root() const { return nodes_.front(); }

  std::size_t add_child(std::size_t parent, Component c, std::string source, bool pruned = false) {
    TreeNode n;
    n.tier_level = nodes_.at(parent).tier_level + 1;
    if (n.tier_level > 3) throw std::logic_error("tier-3 nodes have no children");
    if (c.tier() != n.tier_level) throw std::invalid_argument("child component in wrong tier");
    n.component = std::move(c);
    n.pruned = pruned;
    n.creation_index = nodes_.size();
    n.parent = parent;
    n.source = std::move(source);
    nodes_.push_back(std::move(n));
    nodes_[parent].children.push_back(nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  std::vector<std::size_t> live_children(std::size_t id) const {
    std::vector<std::size_t> out;
    for (auto c : nodes_.at(id).children)
      if (!nodes_[c].pruned) out.push_back(c);
    return out;
  }

  /// Components from the root's child down to `id`.
  std::vector<Component> path_components(std::size_t id) const {
    std::vector<Component> out;
    for (; id != 0; id = nodes_.at(id).parent) out.push_back(*nodes_[id].component);
    std::reverse(out.begin(), out.end());
    return out;
  }

  std::vector<std::size_t> path_to(std::size_t id) const {
    std::vector<std::size_t> out{id};
    while (id != 0) out.push_back(id = nodes_.at(id).parent);
    std::reverse(out.begin(), out.end());
    return out;
  }

  json to_json() const {
    json ns = json::array();
    for (const auto& n : nodes_)
      ns.push_back({{"id", n.creation_index},
                    {"parent", n.parent},
                    {"tier", n.tier_level},
                    {"component", n.component ? n.component->to_json() : json(nullptr)},
                    {"visits", n.visits},
                    {"q_bar", n.q_bar},
                    {"pruned", n.pruned},
                    {"expanded", n.expanded},
                    {"refills", n.refills},
                    {"source", n.source}});
    return ns;
  }

  static Tree from_json(const json& ns) {
    Tree t;
    if (!ns.is_array() || ns.empty()) throw std::invalid_argument("tree needs at least a root");
    for (std::size_t i = 1; i < ns.size(); ++i) {
      const auto& j = ns[i];
      const auto parent = j.at("parent").get<std::size_t>();
      if (parent >= i || j.at("id").get<std::size_t>() != i) throw std::invalid_argument("tree nodes out of order");
      t.add_child(parent, component_from_json(j.at("component")), j.value("source", ""), j.at("pruned").get<bool>());
    }
    for (std::size_t i = 0; i < ns.size(); ++i) {
      t.nodes_[i].visits = ns[i].at("visits").get<long>();
      t.nodes_[i].q_bar = ns[i].at("q_bar").get<double>();
      t.nodes_[i].expanded = ns[i].at("expanded").get<bool>();
      t.nodes_[i].refills = ns[i].value("refills", 0);
    }
    return t;
  }

 private:
  std::vector<TreeNode> nodes_;
};

inline double uct_score(double q_bar, long parent_visits, long child_visits, double cp) {
  return q_bar + cp * std::sqrt(2.0 * std::log(double(parent_visits)) / double(child_visits));
}

struct Selection {
  std::vector<std::size_t> path;  // root first
  bool blocked = false;           // last node has children but all are pruned
};

/// Descends from the root. Unvisited children go first in creation order;
/// otherwise the highest UCT score wins, ties to the lowest creation index.
inline Selection select(const Tree& tree, double cp) {
  Selection s;
  std::size_t cur = 0;
  s.path.push_back(cur);
  for (;;) {
    const auto& node = tree[cur];
    if (node.children.empty()) return s;
    const auto live = tree.live_children(cur);
    if (live.empty()) {
      s.blocked = true;
      return s;
    }
    std::size_t best = live.front();
    double best_score = -std::numeric_limits<double>::infinity();
    for (auto c : live) {
      if (tree[c].visits == 0) {
        best = c;
        break;
      }
      const double u = uct_score(tree[c].q_bar, node.visits, tree[c].visits, cp);
      if (u > best_score) {
        best_score = u;
        best = c;
      }
    }
    s.path.push_back(cur = best);
  }
}

/// N first, then the running mean.
inline void backpropagate(Tree& tree, const std::vector<std::size_t>& path, double reward) {
  if (!(reward >= 0.0 && reward <= 1.0)) throw std::invalid_argument("reward outside [0,1]");
  for (auto id : path) {
    auto& n = tree[id];
    n.visits += 1;
    n.q_bar += (reward - n.q_bar) / double(n.visits);
  }
}

/// Number of distinct (parent, canonical text) pairs among evaluated,
/// unpruned nodes: the tree growth that an evaluation can actually buy.
inline std::size_t distinct_evaluated_nodes(const Tree& tree) {
  std::set<std::pair<std::size_t, std::string>> seen;
  for (std::size_t i = 1; i < tree.size(); ++i)
    if (!tree[i].pruned && tree[i].visits > 0) seen.emplace(tree[i].parent, tree[i].component->canonical_text());
  return seen.size();
}

// -------------------------------------------------------------- search ---

/// JSONL event sink. Lines are kept in memory and, when a stream is given,
/// written as they arrive.
class SearchLog {
 public:
  explicit SearchLog(std::ostream* out = nullptr) : out_(out) {}

  void write(json event) {
    std::string line = event.dump();
    if (out_) *out_ << line << '\n' << std::flush;
    lines_.push_back(std::move(line));
  }
  const std::vector<std::string>& lines() const noexcept { return lines_; }
  std::size_t count(std::string_view event) const {
    std::size_t n = 0;
    for (const auto& l : lines_) n += json::parse(l).at("event").get<std::string>() == event;
    return n;
  }

 private:
  std::ostream* out_;
  std::vector<std::string> lines_;
};

struct SearchStats {
  long evaluations = 0;
  long cache_hits = 0;
  long expansions = 0;
  long pruned = 0;
  long regrowth_attempts = 0;
  long regrown = 0;
  long degraded = 0;  // generator repairs, fallbacks and outages
};

struct BestRecord {
  RewardRecord record;
  long evaluation = 0;  // 1-based index of the evaluation that found it
};

class Search {
 public:
  Search(SearchConfig cfg, Generator& gen, AnalyzerReport report, Evaluator evaluator, SearchLog& log)
      : cfg_(std::move(cfg)), gen_(gen), report_(std::move(report)), evaluator_(std::move(evaluator)), log_(log) {
    if (auto v = validate_search_config(cfg_); !v.empty()) throw std::invalid_argument("search config: " + v.front());
    start_ = std::chrono::steady_clock::now();
  }

  const Tree& tree() const noexcept { return tree_; }
  const SearchStats& stats() const noexcept { return stats_; }
  const std::optional<BestRecord>& best() const noexcept { return best_; }
  const SearchConfig& config() const noexcept { return cfg_; }
  bool done() const noexcept { return stats_.evaluations >= cfg_.eval_budget; }

  /// One select / expand / rollout / evaluate / backpropagate round.
  void step() {
    if (done()) return;
    const long iter = iteration_++;
    auto sel = select(tree_, cfg_.cp);
    std::size_t leaf = sel.path.back();
    if (sel.blocked) {
      emit({{"event", "blocked"}, {"iteration", iter}, {"node", leaf}});
      expand(leaf, iter);
    } else if (tree_[leaf].tier_level < 3 && !tree_[leaf].expanded) {
      expand(leaf, iter);
    } else if (tree_[leaf].tier_level == 3 && tree_[leaf].visits > 0) {
      // scoring this leaf again would only hit the cache; widen the path instead
      if (const auto at = refill_target(sel.path)) {
        ++tree_[*at].refills;
        expand(*at, iter, true);
        if (select_from(*at)) {
          sel.path.resize(static_cast<std::size_t>(tree_[*at].tier_level) + 1);
          leaf = *at;
        }
      }
    }
    // descend into the first fresh child, if the expansion produced one
    if (const auto next = select_from(leaf)) sel.path.push_back(leaf = *next);
    for (int r = 0; r < cfg_.rollout_count && !done(); ++r) {
      const auto rollout_seed = derive_seed(cfg_.seed, 0x726f6c6cULL, static_cast<std::uint64_t>(iter * 64 + r));
      auto [assembly, sampled] = rollout(leaf, rollout_seed);
      const auto rec = score(assembly);
      ++stats_.evaluations;
      backpropagate(tree_, sel.path, rec.first.reward);
      json ev = {{"event", "evaluate"},
                 {"iteration", iter},
                 {"evaluation", stats_.evaluations},
                 {"path", sel.path},
                 {"rollout", sampled},
                 {"assembly", assembly_to_json(assembly)},
                 {"reward", rec.first.reward},
                 {"mean_gap", rec.first.mean_gap},
                 {"per_instance_gaps", rec.first.per_instance_gaps},
                 {"failed", rec.first.failed},
                 {"cached", rec.second}};
      emit(std::move(ev));
      if (!best_ || rec.first.reward > best_->record.reward) {
        best_ = BestRecord{rec.first, stats_.evaluations};
        emit({{"event", "best"}, {"evaluation", stats_.evaluations}, {"reward", rec.first.reward}});
      }
    }
  }

  void run() {
    while (!done()) step();
  }

  /// Fills the missing tiers below `node` with one generator sample each;
  /// no tree nodes are added.
  std::pair<SolverAssembly, json> rollout(std::size_t node, std::uint64_t seed) {
    auto path = tree_.path_components(node);
    json sampled = json::array();
    for (int tier = static_cast<int>(path.size()) + 1; tier <= 3; ++tier) {
      Component c;
      if (const auto& pin = cfg_.pinned[static_cast<std::size_t>(tier) - 1]) {
        c = *pin;
      } else {
        const auto before = gen_.events().size();
        c = gen_.generate(make_context(tier, path, report_), 1, derive_seed(seed, static_cast<std::uint64_t>(tier)))
                .front()
                .component;
        log_generator_events(before, -1, static_cast<long>(node));
        adjust(c);
      }
      sampled.push_back(c.to_json());
      path.push_back(std::move(c));
    }
    return {assemble(path[0], path[1], path[2]), sampled};
  }

  json checkpoint() const {
    json cache = json::array();
    for (const auto& [text, rec] : cache_) cache.push_back({{"key", text}, {"record", to_json(rec)}});
    json j = {{"schema_version", kSchemaVersion},
              {"iteration", iteration_},
              {"evaluations", stats_.evaluations},
              {"stats",
               {{"cache_hits", stats_.cache_hits},
                {"expansions", stats_.expansions},
                {"pruned", stats_.pruned},
                {"regrowth_attempts", stats_.regrowth_attempts},
                {"regrown", stats_.regrown},
                {"degraded", stats_.degraded}}},
              {"tree", tree_.to_json()},
              {"cache", cache},
              {"best", best_ ? json{{"evaluation", best_->evaluation}, {"record", to_json(best_->record)}} : json()}};
    return j;
  }

  /// Restores tree, counters, cache and best record; the configuration
  /// (including eval_budget) comes from the constructor.
  void resume(const json& j) {
    if (j.value("schema_version", 0) != kSchemaVersion) throw std::invalid_argument("unsupported checkpoint schema");
    tree_ = Tree::from_json(j.at("tree"));
    iteration_ = j.at("iteration").get<long>();
    stats_.evaluations = j.at("evaluations").get<long>();
    const auto& s = j.at("stats");
    stats_.cache_hits = s.at("cache_hits").get<long>();
    stats_.expansions = s.at("expansions").get<long>();
    stats_.pruned = s.at("pruned").get<long>();
    stats_.regrowth_attempts = s.at("regrowth_attempts").get<long>();
    stats_.regrown = s.at("regrown").get<long>();
    stats_.degraded = s.at("degraded").get<long>();
    cache_.clear();
    for (const auto& e : j.at("cache")) cache_.emplace(e.at("key").get<std::string>(), reward_record_from_json(e.at("record")));
    best_.reset();
    if (!j.at("best").is_null())
      best_ = BestRecord{reward_record_from_json(j.at("best").at("record")), j.at("best").at("evaluation").get<long>()};
  }

  /// Pairwise fused distance with the given kappa; tokenization and self
  /// costs are cached by text.
  DistanceReport distance(const std::string& a, const std::string& b, double kappa_value) {
    const auto& ta = tokens(a);
    const auto& tb = tokens(b);
    return fuse(raw_distance(ta.first, tb.first, cfg_.wsmd, &ta.second, &tb.second), kappa_value, cfg_.wsmd.lambda);
  }

  /// Asks the generator for K children of `node`, prunes equivalent ones
  /// against each other and the live siblings, then regrows pruned slots.
  void expand(std::size_t node, long iter, bool refill = false) {
    ++stats_.expansions;
    tree_[node].expanded = true;
    const int tier = tree_[node].tier_level + 1;
    const auto path = tree_.path_components(node);
    json event = {{"event", "expand"}, {"iteration", iter}, {"node", node}, {"tier", tier}};
    if (refill) event["refill"] = true;

    if (const auto& pin = cfg_.pinned[static_cast<std::size_t>(tier) - 1]) {
      if (tree_.live_children(node).empty()) tree_.add_child(node, *pin, "pinned");
      event["children"] = json::array({{{"id", tree_[node].children.back()}, {"source", "pinned"},
                                        {"text", pin->canonical_text()}}});
      emit(std::move(event));
      return;
    }

    const auto seed = derive_seed(cfg_.seed, 0x6578706eULL, static_cast<std::uint64_t>(iter));
    const auto ctx = make_context(tier, path, report_);
    const auto before = gen_.events().size();
    auto fresh = gen_.generate(ctx, cfg_.k, seed);
    for (auto& c : fresh) adjust(c.component);
    log_generator_events(before, iter, static_cast<long>(node));

    const auto existing = tree_.live_children(node);
    const std::size_t first_id = tree_.size();
    std::vector<bool> keep(fresh.size(), true);
    double kappa_value = 1.0;
    std::vector<std::pair<std::size_t, std::size_t>> pruned_slots;  // fresh slot, survivor node id

    if (cfg_.pruning) {
      std::vector<std::string> texts;
      std::vector<PruneCandidate> pc;
      for (auto id : existing) {
        texts.push_back(tree_[id].component->canonical_text());
        pc.push_back({tree_[id].visits > 0 ? std::optional<double>(tree_[id].q_bar) : std::nullopt, id});
      }
      for (std::size_t i = 0; i < fresh.size(); ++i) {
        texts.push_back(fresh[i].text());
        pc.push_back({std::nullopt, first_id + i});
      }
      const auto batch = pair_batch(texts);
      kappa_value = batch.kappa();
      const auto res = prune_set(pc, batch, cfg_.epsilon, kappa_value, cfg_.wsmd.lambda);
      for (const auto& p : res.pruned) {
        const auto pruned_id = pc[p.pruned].creation_index, kept_id = pc[p.kept].creation_index;
        if (p.pruned < existing.size()) {
          tree_[existing[p.pruned]].pruned = true;
        } else {
          keep[p.pruned - existing.size()] = false;
          pruned_slots.emplace_back(p.pruned - existing.size(), kept_id);
        }
        ++stats_.pruned;
        emit({{"event", "prune"},
              {"iteration", iter},
              {"node", node},
              {"pruned", pruned_id},
              {"kept", kept_id},
              {"d_wmd", p.report.d_wmd},
              {"d_smd", p.report.d_smd},
              {"kappa", p.report.kappa},
              {"distance", p.report.distance}});
      }
    }

    json children = json::array();
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      const auto id = tree_.add_child(node, fresh[i].component, fresh[i].source, !keep[i]);
      children.push_back({{"id", id}, {"source", fresh[i].source}, {"pruned", !keep[i]}, {"text", fresh[i].text()}});
    }
    event["kappa"] = kappa_value;
    event["children"] = std::move(children);
    emit(std::move(event));

    if (!cfg_.pruning || !cfg_.regrowth) return;
    for (const auto& [slot, survivor] : pruned_slots) regrow_slot(node, iter, first_id + slot, survivor, kappa_value);
  }

 private:
  void emit(json e) {
    if (!cfg_.deterministic)
      e["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    log_.write(std::move(e));
  }

  void adjust(Component& c) const {
    if (cfg_.clear_tier1_overrides && c.tier() == 1)
      std::get<FrameworkDescriptor>(c.descriptor).global_hgs_overrides = json::object();
  }

  /// Deepest node on the path, above the leaf, that may be expanded again.
  std::optional<std::size_t> refill_target(const std::vector<std::size_t>& path) const {
    for (std::size_t i = path.size() - 1; i-- > 0;) {
      const auto& n = tree_[path[i]];
      if (cfg_.pinned[static_cast<std::size_t>(n.tier_level)]) continue;
      if (n.refills < cfg_.refill_limit && tree_.live_children(path[i]).size() < static_cast<std::size_t>(cfg_.k))
        return path[i];
    }
    return std::nullopt;
  }

  /// Raw distances for every pair of texts; pairs seen in earlier
  /// expansions come from the cache.
  DistanceBatch pair_batch(const std::vector<std::string>& texts) {
    const std::size_t n = texts.size();
    std::vector<RawDistance> raw(n * n);
    std::vector<std::pair<std::size_t, std::size_t>> todo;
    for (std::size_t i = 0; i < n; ++i) tokens(texts[i]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const auto key = texts[i] < texts[j] ? std::pair{texts[i], texts[j]} : std::pair{texts[j], texts[i]};
        if (auto it = pair_cache_.find(key); it != pair_cache_.end()) raw[i * n + j] = raw[j * n + i] = it->second;
        else todo.emplace_back(i, j);
      }
    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t k; (k = next.fetch_add(1)) < todo.size();) {
        const auto [i, j] = todo[k];
        const auto& a = token_cache_.at(texts[i]);
        const auto& b = token_cache_.at(texts[j]);
        raw[i * n + j] = raw[j * n + i] = raw_distance(a.first, b.first, cfg_.wsmd, &a.second, &b.second);
      }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < cfg_.threads; ++t) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    for (const auto& [i, j] : todo) {
      const auto key = texts[i] < texts[j] ? std::pair{texts[i], texts[j]} : std::pair{texts[j], texts[i]};
      pair_cache_.emplace(key, raw[i * n + j]);
    }
    return DistanceBatch(n, std::move(raw));
  }

  std::optional<std::size_t> select_from(std::size_t node) const {
    for (auto c : tree_.live_children(node))
      if (tree_[c].visits == 0) return c;
    return std::nullopt;
  }

  void log_generator_events(std::size_t from, long iter, long node) {
    const auto& evs = gen_.events();
    for (std::size_t i = from; i < evs.size(); ++i) {
      if (evs[i].kind == "accepted") continue;
      ++stats_.degraded;
      emit({{"event", "degraded"},
            {"iteration", iter},
            {"node", node},
            {"tier", evs[i].tier},
            {"kind", evs[i].kind},
            {"slot", evs[i].slot},
            {"attempt", evs[i].attempt},
            {"message", evs[i].message}});
    }
  }

  const std::pair<TokenizedCandidate, SelfCosts>& tokens(const std::string& text) {
    auto it = token_cache_.find(text);
    if (it == token_cache_.end()) {
      auto t = tokenize_and_embed(text);
      auto s = self_costs(t, cfg_.wsmd);
      it = token_cache_.emplace(text, std::make_pair(std::move(t), s)).first;
    }
    return it->second;
  }

  std::pair<RewardRecord, bool> score(const SolverAssembly& a) {
    if (auto it = cache_.find(a.canonical_text); it != cache_.end()) {
      ++stats_.cache_hits;
      return {it->second, true};
    }
    auto rec = evaluator_(a);
    if (rec.failed) rec.reward = 0.0;
    cache_.emplace(a.canonical_text, rec);
    return {rec, false};
  }

  /// Regrowth for one pruned slot: the survivor leads the negative
  /// constraints, followed by every other live sibling, so an accepted
  /// candidate keeps the sibling set free of equivalent pairs.
  void regrow_slot(std::size_t node, long iter, std::size_t pruned_id, std::size_t survivor, double kappa_value) {
    const int tier = tree_[node].tier_level + 1;
    std::vector<std::string> negatives{tree_[survivor].component->canonical_text()};
    for (auto id : tree_.live_children(node))
      if (id != survivor) negatives.push_back(tree_[id].component->canonical_text());
    const auto ctx = make_context(tier, tree_.path_components(node), report_, negatives);
    const TextDistance dist = [&](const std::string& a, const std::string& b) {
      return distance(a, b, kappa_value).distance;
    };
    const auto before = gen_.events().size();
    auto r = regrow(ctx, gen_, dist, cfg_.epsilon, cfg_.regrow_attempts,
                    derive_seed(cfg_.seed, 0x72677277ULL, static_cast<std::uint64_t>(pruned_id)));
    log_generator_events(before, iter, static_cast<long>(node));
    stats_.regrowth_attempts += r.attempts;
    json ev = {{"event", "regrow"},   {"iteration", iter},   {"node", node},
               {"slot", pruned_id},   {"survivor", survivor}, {"attempts", r.attempts},
               {"min_distance", r.min_distance}, {"accepted", r.candidate.has_value()}};
    if (r.candidate) {
      adjust(r.candidate->component);
      const auto id = tree_.add_child(node, r.candidate->component, "regrown");
      ++stats_.regrown;
      ev["child"] = id;
      ev["text"] = r.candidate->text();
    }
    emit(std::move(ev));
  }

  SearchConfig cfg_;
  Generator& gen_;
  AnalyzerReport report_;
  Evaluator evaluator_;
  SearchLog& log_;
  Tree tree_;
  SearchStats stats_;
  long iteration_ = 0;
  std::optional<BestRecord> best_;
  std::map<std::string, RewardRecord> cache_;
  std::map<std::pair<std::string, std::string>, RawDistance> pair_cache_;
  std::map<std::string, std::pair<TokenizedCandidate, SelfCosts>> token_cache_;
  std::chrono::steady_clock::time_point start_;
};

struct DevelopResult {
  SolverAssembly best;
  RewardRecord record;
  long best_evaluation = 0;
  SearchStats stats;
  json checkpoint;
};

/// Runs the search until the evaluation budget is spent.
inline DevelopResult develop(const SearchConfig& cfg, Generator& gen, const AnalyzerReport& report,
                             const Evaluator& evaluator, SearchLog& log, const json* resume_from = nullptr) {
  Search s(cfg, gen, report, evaluator, log);
  if (resume_from) s.resume(*resume_from);
  s.run();
  const auto& b = *s.best();
  return {b.record.assembly, b.record, b.evaluation, s.stats(), s.checkpoint()};
}

}  // namespace vrptune

#endif  // VRPTUNE_MCTS_HPP
