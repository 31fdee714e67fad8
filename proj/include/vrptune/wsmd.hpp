#ifndef VRPTUNE_WSMD_HPP
#define VRPTUNE_WSMD_HPP

// Fused semantic/structural distance between component candidates: an
// entropic optimal-transport cost over token embeddings plus an entropic
// Gromov-Wasserstein discrepancy between token structure matrices.

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <nlohmann/json.hpp>

#include "rng.hpp"

namespace vrptune {

enum class EmbedderKind { hashed_trigram, external_service };

struct WsmdConfig {
  double lambda = 0.5;
  double epsilon = 0.5;
  double ot_regularization = 0.002;
  double gw_tolerance = 1e-7;  // coupling change (L1) that ends the GW descent
  int ot_max_iterations = 3000;
  int gw_max_iterations = 50;
  double convergence_tolerance = 1e-7;
  EmbedderKind embedder = EmbedderKind::hashed_trigram;
  std::string embedder_url;  // external service endpoint
};

inline std::vector<std::string> validate_wsmd_config(const WsmdConfig& c) {
  std::vector<std::string> v;
  if (!(c.lambda >= 0.0 && c.lambda <= 1.0)) v.emplace_back("lambda in [0,1]");
  if (!(c.epsilon >= 0.0)) v.emplace_back("epsilon >= 0");
  if (!(c.ot_regularization > 0.0)) v.emplace_back("ot_regularization > 0");
  if (!(c.gw_tolerance > 0.0)) v.emplace_back("gw_tolerance > 0");
  if (c.ot_max_iterations < 1) v.emplace_back("ot_max_iterations >= 1");
  if (c.gw_max_iterations < 1) v.emplace_back("gw_max_iterations >= 1");
  if (!(c.convergence_tolerance > 0.0)) v.emplace_back("convergence_tolerance > 0");
  if (c.embedder == EmbedderKind::external_service && c.embedder_url.empty())
    v.emplace_back("external embedder needs a url");
  return v;
}

struct TokenizedCandidate {
  std::vector<std::string> tokens;
  Eigen::MatrixXd embeddings;  // n x d, unit rows
  Eigen::MatrixXd structure;   // n x n, row-stochastic
};

struct DistanceReport {
  double d_wmd = 0.0;
  double d_smd = 0.0;
  double kappa = 1.0;
  double distance = 0.0;
  bool converged = true;
};

// ------------------------------------------------------------ embedding ---

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual Eigen::MatrixXd embed(const std::vector<std::string>& tokens) = 0;
};

inline constexpr int kTrigramDim = 64;

/// Character-trigram counts of "#token#" hashed into 64 buckets, L2-normalized.
class HashedTrigramEmbedder : public Embedder {
 public:
  Eigen::MatrixXd embed(const std::vector<std::string>& tokens) override {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tokens.size()), kTrigramDim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const std::string padded = "#" + tokens[i] + "#";
      for (std::size_t k = 0; k + 3 <= padded.size(); ++k)
        e(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(hash_string(padded.substr(k, 3)) % kTrigramDim)) += 1.0;
      if (padded.size() < 3) e(static_cast<Eigen::Index>(i), 0) = 1.0;
      e.row(static_cast<Eigen::Index>(i)).normalize();
    }
    return e;
  }
};

/// Transport used by the external embedder: POST body in, response body out;
/// nullopt on any transport failure.
using EmbedTransport = std::function<std::optional<std::string>(const std::string& url, const std::string& body)>;

/// Asks an external service for embeddings ({texts} -> {embeddings,
/// dimension}); falls back to hashed trigrams with a warning on failure.
class ExternalEmbedder : public Embedder {
 public:
  ExternalEmbedder(std::string url, EmbedTransport transport, std::function<void(const std::string&)> warn = {})
      : url_(std::move(url)), transport_(std::move(transport)), warn_(std::move(warn)) {
    if (!warn_) warn_ = [](const std::string& m) { std::cerr << "warning: " << m << "\n"; };
  }

  Eigen::MatrixXd embed(const std::vector<std::string>& tokens) override;

  bool fell_back() const noexcept { return fell_back_; }

 private:
  std::string url_;
  EmbedTransport transport_;
  std::function<void(const std::string&)> warn_;
  HashedTrigramEmbedder fallback_;
  bool fell_back_ = false;
};

inline Eigen::MatrixXd ExternalEmbedder::embed(const std::vector<std::string>& tokens) {
  const std::string body = nlohmann::json{{"texts", tokens}}.dump();
  std::string problem;
  if (auto reply = transport_ ? transport_(url_, body) : std::nullopt) {
    try {
      const auto j = nlohmann::json::parse(*reply);
      const auto& rows = j.at("embeddings");
      const auto dim = j.contains("dimension") ? j.at("dimension").get<Eigen::Index>()
                                               : static_cast<Eigen::Index>(rows.at(0).size());
      if (rows.size() != tokens.size()) throw std::runtime_error("row count mismatch");
      Eigen::MatrixXd e(static_cast<Eigen::Index>(tokens.size()), dim);
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != dim) throw std::runtime_error("ragged embeddings");
        for (Eigen::Index k = 0; k < dim; ++k) e(static_cast<Eigen::Index>(i), k) = rows[i][static_cast<std::size_t>(k)].get<double>();
        const double norm = e.row(static_cast<Eigen::Index>(i)).norm();
        if (!(norm > 0.0)) throw std::runtime_error("zero embedding");
        e.row(static_cast<Eigen::Index>(i)) /= norm;
      }
      return e;
    } catch (const std::exception& ex) {
      problem = std::string("bad embedding response: ") + ex.what();
    }
  } else {
    problem = "embedding service unreachable at " + url_;
  }
  fell_back_ = true;
  warn_(problem + "; using hashed trigram embeddings");
  return fallback_.embed(tokens);
}

namespace detail {

inline std::vector<std::string> split_alnum(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (std::isalnum(static_cast<unsigned char>(ch))) {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

class WsmdError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tokens, embeddings and structure matrix of a canonical text. Lines of the
/// form "path = value" contribute field-to-value edges.
inline TokenizedCandidate tokenize_and_embed(std::string_view text, Embedder& embedder) {
  TokenizedCandidate c;
  std::vector<std::pair<std::size_t, std::size_t>> extra;  // field token -> value token
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    const auto eq = line.find(" = ");
    if (eq != std::string_view::npos) {
      const auto field = detail::split_alnum(line.substr(0, eq));
      const auto value = detail::split_alnum(line.substr(eq + 3));
      const std::size_t f0 = c.tokens.size();
      c.tokens.insert(c.tokens.end(), field.begin(), field.end());
      const std::size_t v0 = c.tokens.size();
      c.tokens.insert(c.tokens.end(), value.begin(), value.end());
      for (std::size_t f = f0; f < v0; ++f)
        for (std::size_t v = v0; v < c.tokens.size(); ++v) extra.push_back({f, v});
    } else {
      const auto toks = detail::split_alnum(line);
      c.tokens.insert(c.tokens.end(), toks.begin(), toks.end());
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (c.tokens.empty()) throw WsmdError("text has no tokens");
  const auto n = static_cast<Eigen::Index>(c.tokens.size());
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j <= std::min(n - 1, i + 3); ++j) {
      w(i, j) += 1.0;
      w(j, i) += 1.0;
    }
  for (const auto& [a, b] : extra) {
    w(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += 1.0;
    w(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) += 1.0;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = w.row(i).sum();
    if (s > 0.0) {
      w.row(i) /= s;
    } else {
      w(i, i) = 1.0;
    }
  }
  c.structure = std::move(w);
  c.embeddings = embedder.embed(c.tokens);
  return c;
}

inline TokenizedCandidate tokenize_and_embed(std::string_view text) {
  HashedTrigramEmbedder e;
  return tokenize_and_embed(text, e);
}

// ----------------------------------------------------------- transport ---

struct SinkhornResult {
  Eigen::MatrixXd plan;
  bool converged = false;
};

/// Entropic OT between marginals `p` and `q` in the log domain. With `anneal`
/// the regularization starts at the largest cost and is divided by 4 per
/// stage down to `reg`, each stage warm-starting the next. `dual` carries the
/// column potential in and out.
/// Moves an approximate plan onto the transport polytope: rows scaled down
/// to p, columns scaled down to q, then a rank-one fill of what is missing.
/// The cost changes by at most max|C| times twice the marginal error.
inline Eigen::MatrixXd round_to_marginals(Eigen::MatrixXd plan, const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
  const Eigen::VectorXd rs = plan.rowwise().sum();
  for (Eigen::Index i = 0; i < plan.rows(); ++i)
    if (rs(i) > p(i)) plan.row(i) *= p(i) / rs(i);
  const Eigen::VectorXd cs = plan.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < plan.cols(); ++j)
    if (cs(j) > q(j)) plan.col(j) *= q(j) / cs(j);
  const Eigen::VectorXd er = (p - plan.rowwise().sum()).cwiseMax(0.0);
  const Eigen::VectorXd ec = (q - plan.colwise().sum().transpose()).cwiseMax(0.0);
  if (const double mass = er.sum(); mass > 0.0) plan += er * ec.transpose() / mass;
  return plan;
}

inline SinkhornResult sinkhorn(const Eigen::MatrixXd& cost, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                               double reg, int max_iterations, double tol, Eigen::VectorXd* dual = nullptr,
                               bool anneal = false) {
  const auto n = cost.rows(), m = cost.cols();
  const Eigen::ArrayXd log_p = p.array().log(), log_q = q.array().log();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd g = dual && dual->size() == m ? *dual : Eigen::VectorXd::Zero(m);
  auto lse_rows = [](const Eigen::ArrayXXd& x) {
    const Eigen::ArrayXd mx = x.rowwise().maxCoeff();
    return (mx + ((x.colwise() - mx).exp().rowwise().sum()).log()).eval();
  };
  auto lse_cols = [](const Eigen::ArrayXXd& x) {
    const Eigen::ArrayXd mx = x.colwise().maxCoeff().transpose();
    return (mx + ((x.rowwise() - mx.transpose()).exp().colwise().sum()).log().transpose()).eval();
  };
  SinkhornResult r;
  double eps = anneal ? std::max(reg, cost.maxCoeff()) : reg;
  auto log_step = [&] {
    const Eigen::ArrayXXd gc = (-cost.array()).rowwise() + g.transpose().array();
    f = (eps * (log_p - lse_rows(gc / eps))).matrix();
    const Eigen::ArrayXXd fc = (-cost.array()).colwise() + f.array();
    g = (eps * (log_q - lse_cols(fc / eps))).matrix();
  };
  auto kernel = [&] {
    return ((((-cost.array()).colwise() + f.array()).rowwise() + g.transpose().array()) / eps).exp().matrix().eval();
  };
  // Scaling iterations in short blocks, absorbed into the log potentials
  // after each block; a block that over- or underflows is replaced by one
  // log-domain step.
  constexpr int kBlock = 10;
  for (;;) {
    const bool last = eps <= reg;
    const double stage_tol = last ? tol : std::max(tol, 1e-6);
    r.converged = false;
    log_step();
    Eigen::MatrixXd k = kernel();
    int it = 1;
    while (it < max_iterations) {
      Eigen::VectorXd u = Eigen::VectorXd::Ones(n), v = Eigen::VectorXd::Ones(m);
      const int block = std::min(kBlock, max_iterations - it);
      for (int s = 0; s < block; ++s) {
        u = p.array() / (k * v).array();
        v = q.array() / (k.transpose() * u).array();
      }
      it += block;
      if (!u.allFinite() || !v.allFinite() || u.minCoeff() <= 0.0 || v.minCoeff() <= 0.0) {
        log_step();
        ++it;
      } else {
        f += eps * u.array().log().matrix();
        g += eps * v.array().log().matrix();
      }
      k = kernel();
      // columns are exact after the g update; check the rows
      if ((k.rowwise().sum() - p).cwiseAbs().maxCoeff() < stage_tol) {
        r.converged = true;
        break;
      }
    }
    if (last) {
      r.plan = round_to_marginals(std::move(k), p, q);
      break;
    }
    eps = std::max(reg, eps / 4.0);
  }
  if (dual) *dual = g;
  return r;
}

/// Uniform-marginal form.
inline SinkhornResult sinkhorn(const Eigen::MatrixXd& cost, double reg, int max_iterations, double tol,
                               Eigen::VectorXd* dual = nullptr, bool anneal = false) {
  return sinkhorn(cost, Eigen::VectorXd::Constant(cost.rows(), 1.0 / double(cost.rows())),
                  Eigen::VectorXd::Constant(cost.cols(), 1.0 / double(cost.cols())), reg, max_iterations, tol, dual,
                  anneal);
}

namespace detail {

inline Eigen::MatrixXd pairwise_euclidean(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd c(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).norm();
  return c;
}

struct Scalar {
  double value = 0.0;
  bool converged = true;
};

/// Distinct embedding rows with their token frequencies. Identical tokens
/// sit at zero ground distance, so merging them leaves the transport optimum
/// of the uniform token distribution unchanged.
struct Bag {
  Eigen::MatrixXd rows;
  Eigen::VectorXd weight;
};

inline Bag token_bag(const TokenizedCandidate& c) {
  std::vector<std::size_t> first;
  std::vector<double> count;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    auto [it, fresh] = seen.try_emplace(c.tokens[i], first.size());
    if (fresh) {
      first.push_back(i);
      count.push_back(0.0);
    }
    count[it->second] += 1.0;
  }
  Bag b{Eigen::MatrixXd(static_cast<Eigen::Index>(first.size()), c.embeddings.cols()),
        Eigen::VectorXd(static_cast<Eigen::Index>(first.size()))};
  for (std::size_t k = 0; k < first.size(); ++k) {
    b.rows.row(static_cast<Eigen::Index>(k)) = c.embeddings.row(static_cast<Eigen::Index>(first[k]));
    b.weight(static_cast<Eigen::Index>(k)) = count[k] / double(c.tokens.size());
  }
  return b;
}

inline Scalar ot_cost(const TokenizedCandidate& a, const TokenizedCandidate& b, const WsmdConfig& cfg) {
  const auto ba = token_bag(a), bb = token_bag(b);
  const auto c = pairwise_euclidean(ba.rows, bb.rows);
  const auto s = sinkhorn(c, ba.weight, bb.weight, cfg.ot_regularization, cfg.ot_max_iterations,
                          cfg.convergence_tolerance, nullptr, true);
  return {(s.plan.array() * c.array()).sum(), s.converged};
}

/// Squared-loss GW tensor product L(A,B) (x) T for uniform marginals.
/// Structure matrices in sparse form plus the coupling-independent parts
/// of the squared-loss tensor product.
struct GwTerms {
  Eigen::SparseMatrix<double> a, at, b, bt;
  Eigen::VectorXd fa, fat;  // row terms
  Eigen::RowVectorXd gb, gbt;

  GwTerms(const Eigen::MatrixXd& da, const Eigen::MatrixXd& db)
      : a(da.sparseView()), at(da.transpose().sparseView()), b(db.sparseView()), bt(db.transpose().sparseView()) {
    const double wn = 1.0 / double(da.rows()), wm = 1.0 / double(db.rows());
    fa = da.array().square().rowwise().sum().matrix() * wn;
    fat = da.array().square().colwise().sum().transpose().matrix() * wn;
    gb = db.array().square().rowwise().sum().matrix().transpose() * wm;
    gbt = db.array().square().colwise().sum().matrix() * wm;
  }

  /// sum_kl (A_ik - B_jl)^2 T_kl for uniform-marginal T
  Eigen::MatrixXd tensor(const Eigen::MatrixXd& t) const {
    Eigen::MatrixXd out = -2.0 * (a * (bt.transpose() * t.transpose()).transpose());
    out.colwise() += fa;
    out.rowwise() += gb;
    return out;
  }

  /// Half the gradient of the objective; structure matrices need not be
  /// symmetric, so both index roles contribute.
  Eigen::MatrixXd gradient(const Eigen::MatrixXd& t) const {
    Eigen::MatrixXd out = -(a * (bt.transpose() * t.transpose()).transpose()) - at * (b.transpose() * t.transpose()).transpose();
    out.colwise() += 0.5 * (fa + fat);
    out.rowwise() += 0.5 * (gb + gbt);
    return out;
  }

  double objective(const Eigen::MatrixXd& t) const { return (tensor(t).array() * t.array()).sum(); }
};

/// Couples tokens in order of their structural in-degree (column sums), as a
/// monotone or anti-monotone transport between uniform marginals.
inline Eigen::MatrixXd ranked_coupling(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, bool reverse) {
  auto order = [](const Eigen::MatrixXd& s) {
    const Eigen::VectorXd deg = s.colwise().sum().transpose();
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(s.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto x, auto y) { return deg(x) < deg(y); });
    return idx;
  };
  auto ia = order(a), ib = order(b);
  if (reverse) std::reverse(ib.begin(), ib.end());
  const auto n = a.rows(), m = b.rows();
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n, m);
  // north-west corner rule on the sorted marginals
  std::size_t i = 0, j = 0;
  double ra = 1.0 / double(n), rb = 1.0 / double(m);
  while (i < ia.size() && j < ib.size()) {
    const double w = std::min(ra, rb);
    t(ia[i], ib[j]) += w;
    ra -= w;
    rb -= w;
    if (ra <= 1e-15) {
      ++i;
      ra = 1.0 / double(n);
    }
    if (rb <= 1e-15) {
      ++j;
      rb = 1.0 / double(m);
    }
  }
  return t;
}

/// GW by KL-proximal mirror descent: each step is an entropic projection of
/// the kernel t * exp(-gradient / eta) onto the uniform marginals, with eta
/// set to the gradient's range so exponents stay in [-1, 0] and the scaling
/// form of Sinkhorn is safe.
inline Scalar gw_from(const GwTerms& w, Eigen::MatrixXd t, const WsmdConfig& cfg) {
  const auto n = t.rows(), m = t.cols();
  const Eigen::VectorXd p = Eigen::VectorXd::Constant(n, 1.0 / double(n));
  const Eigen::VectorXd q = Eigen::VectorXd::Constant(m, 1.0 / double(m));
  // Scales k onto the marginals; returns whether the rows converged.
  auto project = [&](const Eigen::MatrixXd& k, int max_it, Eigen::MatrixXd& out) {
    Eigen::VectorXd u = Eigen::VectorXd::Ones(n), v = Eigen::VectorXd::Ones(m);
    bool ok = false;
    for (int s = 0; s < max_it && !ok; ++s) {
      u = p.array() / (k * v).array();
      v = q.array() / (k.transpose() * u).array();
      if (s % 5 == 4) ok = ((u.asDiagonal() * (k * v)) - p).cwiseAbs().maxCoeff() < cfg.convergence_tolerance;
    }
    out = u.asDiagonal() * k * v.asDiagonal();
    return ok;
  };
  // Intermediate steps only need an approximate projection; mirror descent
  // tolerates it and the final one is run to convergence.
  const int inner = std::min(cfg.ot_max_iterations, 100);
  Eigen::MatrixXd next;
  for (int it = 0; it < cfg.gw_max_iterations; ++it) {
    const Eigen::MatrixXd grad = w.gradient(t);
    const double lo = grad.minCoeff();
    const double eta = grad.maxCoeff() - lo;
    if (!(eta > 1e-15)) break;
    project((t.array() * (-(grad.array() - lo) / eta).exp()).matrix(), inner, next);
    const double change = (next - t).cwiseAbs().sum();
    t.swap(next);
    if (change < cfg.gw_tolerance) break;
  }
  const bool ok = project(t, cfg.ot_max_iterations, next);
  return {w.objective(next), ok};
}

/// Best of two starts: the product coupling blended with the degree-ranked
/// monotone and anti-monotone couplings. The product coupling alone sits
/// next to a stationary point and escapes too slowly to be useful.
inline Scalar gw_cost(const TokenizedCandidate& x, const TokenizedCandidate& y, const WsmdConfig& cfg) {
  const auto& a = x.structure;
  const auto& b = y.structure;
  if (a.rows() == 1 && b.rows() == 1) return {0.0, true};
  const Eigen::MatrixXd prod = Eigen::MatrixXd::Constant(a.rows(), b.rows(), 1.0 / double(a.rows() * b.rows()));
  const GwTerms w(a, b);
  Scalar best{std::numeric_limits<double>::infinity(), true};
  for (bool reverse : {false, true}) {
    const Eigen::MatrixXd t0 = 0.5 * prod + 0.5 * ranked_coupling(a, b, reverse);
    const auto s = gw_from(w, t0, cfg);
    if (s.value < best.value) best = s;
  }
  return best;
}

/// Orders a pair so every pairwise computation runs in one direction,
/// which makes the distances exactly symmetric.
inline bool swap_pair(const TokenizedCandidate& a, const TokenizedCandidate& b) {
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() > b.tokens.size();
  return b.tokens < a.tokens;
}

}  // namespace detail

/// Debiased self costs of a candidate; reused across all its pairs.
struct SelfCosts {
  double wmd = 0.0;
  double smd = 0.0;
};

inline SelfCosts self_costs(const TokenizedCandidate& a, const WsmdConfig& cfg) {
  return {detail::ot_cost(a, a, cfg).value, detail::gw_cost(a, a, cfg).value};
}

struct RawDistance {
  double d_wmd = 0.0;
  double d_smd = 0.0;
  bool converged = true;
};

/// d_wmd and d_smd for one pair, each debiased by the candidates' self costs
/// and clamped at zero.
inline RawDistance raw_distance(const TokenizedCandidate& a, const TokenizedCandidate& b, const WsmdConfig& cfg,
                                const SelfCosts* sa = nullptr, const SelfCosts* sb = nullptr) {
  if (detail::swap_pair(a, b)) return raw_distance(b, a, cfg, sb, sa);
  // identical inputs give identical pair and self costs, so both terms are 0
  if (a.tokens == b.tokens && a.embeddings == b.embeddings && a.structure == b.structure) return {};
  SelfCosts ca = sa ? *sa : self_costs(a, cfg);
  SelfCosts cb = sb ? *sb : self_costs(b, cfg);
  const auto w = detail::ot_cost(a, b, cfg);
  const auto g = detail::gw_cost(a, b, cfg);
  RawDistance r;
  r.d_wmd = std::max(0.0, w.value - 0.5 * (ca.wmd + cb.wmd));
  r.d_smd = std::max(0.0, g.value - 0.5 * (ca.smd + cb.smd));
  r.converged = w.converged && g.converged;
  return r;
}

inline double wmd(const TokenizedCandidate& a, const TokenizedCandidate& b, const WsmdConfig& cfg) {
  if (detail::swap_pair(a, b)) return wmd(b, a, cfg);
  const double ab = detail::ot_cost(a, b, cfg).value;
  return std::max(0.0, ab - 0.5 * (detail::ot_cost(a, a, cfg).value + detail::ot_cost(b, b, cfg).value));
}

inline double smd(const TokenizedCandidate& a, const TokenizedCandidate& b, const WsmdConfig& cfg) {
  if (detail::swap_pair(a, b)) return smd(b, a, cfg);
  const double ab = detail::gw_cost(a, b, cfg).value;
  return std::max(0.0, ab - 0.5 * (detail::gw_cost(a, a, cfg).value + detail::gw_cost(b, b, cfg).value));
}

/// Ratio of mean semantic to mean structural cost; 1 when the structural
/// mean vanishes.
inline double kappa(const std::vector<RawDistance>& batch) {
  if (batch.empty()) return 1.0;
  double w = 0.0, s = 0.0;
  for (const auto& r : batch) {
    w += r.d_wmd;
    s += r.d_smd;
  }
  w /= double(batch.size());
  s /= double(batch.size());
  if (s < 1e-12) return 1.0;
  return w / s;
}

inline DistanceReport fuse(const RawDistance& r, double kappa_value, double lambda) {
  DistanceReport d;
  d.d_wmd = r.d_wmd;
  d.d_smd = r.d_smd;
  d.kappa = kappa_value;
  d.distance = (1.0 - lambda) * r.d_wmd + lambda * kappa_value * r.d_smd;
  d.converged = r.converged;
  return d;
}

inline DistanceReport fused_distance(const TokenizedCandidate& a, const TokenizedCandidate& b, double kappa_value,
                                     const WsmdConfig& cfg) {
  if (!(kappa_value > 0.0)) throw WsmdError("kappa must be positive");
  return fuse(raw_distance(a, b, cfg), kappa_value, cfg.lambda);
}

/// All pairwise raw distances of a candidate batch.
class DistanceBatch {
 public:
  /// Pairs are independent, so `threads` > 1 fills them concurrently; the
  /// values do not depend on the thread count.
  /// `known_self`, when given, holds each candidate's self costs and skips
  /// recomputing them.
  DistanceBatch(std::vector<const TokenizedCandidate*> cands, const WsmdConfig& cfg, unsigned threads = 1,
                const std::vector<SelfCosts>* known_self = nullptr)
      : cands_(std::move(cands)) {
    const std::size_t n = cands_.size();
    if (known_self && known_self->size() != n) throw WsmdError("self costs do not match the batch");
    std::vector<SelfCosts> self = known_self ? *known_self : std::vector<SelfCosts>(n);
    std::vector<std::pair<std::size_t, std::size_t>> todo;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) todo.emplace_back(i, j);
    raw_.assign(n * n, RawDistance{});
    std::atomic<std::size_t> next{0};
    auto work = [&](bool selfs) {
      const std::size_t total = selfs ? n : todo.size();
      for (std::size_t k; (k = next.fetch_add(1)) < total;) {
        if (selfs) {
          self[k] = self_costs(*cands_[k], cfg);
        } else {
          const auto [i, j] = todo[k];
          raw_[i * n + j] = raw_distance(*cands_[i], *cands_[j], cfg, &self[i], &self[j]);
          raw_[j * n + i] = raw_[i * n + j];
        }
      }
    };
    for (bool selfs : {true, false}) {
      if (selfs && known_self) continue;
      next = 0;
      std::vector<std::thread> pool;
      for (unsigned t = 1; t < threads; ++t) pool.emplace_back(work, selfs);
      work(selfs);
      for (auto& th : pool) th.join();
    }
    for (const auto& [i, j] : todo) pairs_.push_back(raw_[i * n + j]);
  }

  /// From an already filled n x n matrix of raw distances.
  DistanceBatch(std::size_t n, std::vector<RawDistance> raw) : cands_(n, nullptr), raw_(std::move(raw)) {
    if (raw_.size() != n * n) throw WsmdError("raw distance matrix has the wrong size");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs_.push_back(raw_[i * n + j]);
  }

  std::size_t size() const noexcept { return cands_.size(); }
  const RawDistance& at(std::size_t i, std::size_t j) const { return raw_[i * cands_.size() + j]; }
  double kappa() const { return vrptune::kappa(pairs_); }
  const std::vector<RawDistance>& pairs() const noexcept { return pairs_; }

 private:
  std::vector<const TokenizedCandidate*> cands_;
  std::vector<RawDistance> raw_;
  std::vector<RawDistance> pairs_;
};

struct PruneCandidate {
  std::optional<double> q_bar;
  std::size_t creation_index = 0;
};

struct PrunedPair {
  std::size_t pruned;  // positions in the input list
  std::size_t kept;
  DistanceReport report;
};

struct PruneResult {
  std::vector<std::size_t> retained;  // positions in the input list, creation order
  std::vector<PrunedPair> pruned;
};

namespace detail {

/// True when candidate `a` beats `b` in an equivalence pair.
inline bool wins(const PruneCandidate& a, const PruneCandidate& b) {
  if (a.q_bar && b.q_bar) {
    if (*a.q_bar != *b.q_bar) return *a.q_bar > *b.q_bar;
    return a.creation_index < b.creation_index;
  }
  if (a.q_bar || b.q_bar) return a.q_bar.has_value();
  return a.creation_index < b.creation_index;
}

}  // namespace detail

/// Greedy equivalence pruning in creation order. A candidate within epsilon
/// of any retained one is kept only if it beats all of them; those are then
/// pruned. No two retained candidates end up within epsilon.
inline PruneResult prune_set(const std::vector<PruneCandidate>& cands, const DistanceBatch& batch, double epsilon,
                             double kappa_value, double lambda) {
  if (batch.size() != cands.size()) throw WsmdError("batch does not match candidate list");
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return cands[a].creation_index < cands[b].creation_index; });
  PruneResult res;
  std::vector<std::size_t> retained;
  for (auto c : order) {
    std::vector<std::pair<double, std::size_t>> conflicts;
    for (auto r : retained) {
      const double d = fuse(batch.at(c, r), kappa_value, lambda).distance;
      if (d <= epsilon) conflicts.push_back({d, r});
    }
    std::sort(conflicts.begin(), conflicts.end());
    const auto loser_to = std::find_if(conflicts.begin(), conflicts.end(),
                                       [&](const auto& x) { return !detail::wins(cands[c], cands[x.second]); });
    if (loser_to != conflicts.end()) {
      res.pruned.push_back({c, loser_to->second, fuse(batch.at(c, loser_to->second), kappa_value, lambda)});
      continue;
    }
    for (const auto& [d, r] : conflicts) {
      res.pruned.push_back({r, c, fuse(batch.at(c, r), kappa_value, lambda)});
      std::erase(retained, r);
    }
    retained.push_back(c);
  }
  std::sort(retained.begin(), retained.end(),
            [&](auto a, auto b) { return cands[a].creation_index < cands[b].creation_index; });
  res.retained = std::move(retained);
  return res;
}

}  // namespace vrptune

#endif  // VRPTUNE_WSMD_HPP
