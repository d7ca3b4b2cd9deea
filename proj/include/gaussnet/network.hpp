#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gaussnet/error.hpp"

namespace gaussnet {

struct Edge {
  int from = 0;
  int to = 0;
  double p = 0.0;
};

/// Acyclic network of single-server queues with deterministic routing.
///
/// Nodes are dense 0-based indices. Routing is stored as a dense k x k matrix;
/// the diagonal is unused and the leave fraction p_{i,i} is derived from the
/// outgoing row sum. Construction only checks field ranges: acyclicity and
/// routing feasibility are reported by validate_network so that malformed
/// topologies can still be represented and diagnosed.
class Network {
 public:
  Network(std::vector<double> mu, std::vector<double> lambda, const std::vector<Edge>& edges)
      : mu_(std::move(mu)), lambda_(std::move(lambda)) {
    const int k = static_cast<int>(mu_.size());
    if (k == 0) throw Error(ErrorCode::InvalidInput, "network has no nodes");
    if (static_cast<int>(lambda_.size()) != k)
      throw Error(ErrorCode::InvalidInput, "mu and lambda sizes differ");
    for (int i = 0; i < k; ++i) {
      if (!std::isfinite(mu_[i]) || mu_[i] <= 0.0)
        throw Error(ErrorCode::InvalidInput, "service rate of node " + std::to_string(i) + " must be > 0");
      if (!std::isfinite(lambda_[i]) || lambda_[i] < 0.0)
        throw Error(ErrorCode::InvalidInput, "drift of node " + std::to_string(i) + " must be >= 0");
    }
    routing_ = Eigen::MatrixXd::Zero(k, k);
    adjacent_.assign(static_cast<std::size_t>(k) * k, false);
    inbound_.resize(k);
    outbound_.resize(k);
    for (const Edge& e : edges) {
      if (e.from < 0 || e.from >= k || e.to < 0 || e.to >= k)
        throw Error(ErrorCode::InvalidInput, "edge endpoint out of range");
      if (e.from == e.to) throw Error(ErrorCode::InvalidInput, "self-loop at node " + std::to_string(e.from));
      if (!std::isfinite(e.p) || e.p < 0.0 || e.p > 1.0)
        throw Error(ErrorCode::InvalidInput, "routing fraction must lie in [0,1]");
      if (adjacent_[index(e.from, e.to)])
        throw Error(ErrorCode::InvalidInput, "duplicate edge " + std::to_string(e.from) + "->" + std::to_string(e.to));
      adjacent_[index(e.from, e.to)] = true;
      routing_(e.from, e.to) = e.p;
      inbound_[e.to].push_back(e.from);
      outbound_[e.from].push_back(e.to);
    }
    for (auto& v : inbound_) std::sort(v.begin(), v.end());
    for (auto& v : outbound_) std::sort(v.begin(), v.end());
  }

  int size() const noexcept { return static_cast<int>(mu_.size()); }
  double mu(int i) const { return mu_.at(i); }
  double lambda(int i) const { return lambda_.at(i); }
  std::span<const double> mu() const noexcept { return mu_; }
  std::span<const double> lambda() const noexcept { return lambda_; }

  bool has_edge(int from, int to) const {
    return from >= 0 && to >= 0 && from < size() && to < size() && adjacent_[index(from, to)];
  }
  /// p_{from,to}; zero when there is no edge.
  double routing(int from, int to) const { return routing_(from, to); }
  const Eigen::MatrixXd& routing_matrix() const noexcept { return routing_; }

  double routed_fraction(int i) const { return routing_.row(i).sum(); }
  /// p_{i,i}: the fraction of departing work that leaves the network.
  double leave_fraction(int i) const { return 1.0 - routed_fraction(i); }

  const std::vector<int>& inbound(int i) const { return inbound_.at(i); }
  const std::vector<int>& outbound(int i) const { return outbound_.at(i); }

  /// mu_j - lambda_j - sum_{l in N_in(j)} mu_l p_{l,j}: the net drain coefficient of node j
  /// once its upstream servers run at full rate.
  double net_drain(int j) const {
    double acc = mu_[j] - lambda_[j];
    for (int l : inbound_[j]) acc -= mu_[l] * routing_(l, j);
    return acc;
  }

  Network with_mu(int i, double value) const {
    Network copy = *this;
    if (!std::isfinite(value) || value <= 0.0) throw Error(ErrorCode::InvalidInput, "service rate must be > 0");
    copy.mu_.at(i) = value;
    return copy;
  }

 private:
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * mu_.size() + j; }

  std::vector<double> mu_;
  std::vector<double> lambda_;
  Eigen::MatrixXd routing_;
  std::vector<bool> adjacent_;
  std::vector<std::vector<int>> inbound_;
  std::vector<std::vector<int>> outbound_;
};

/// Kahn's algorithm, smallest ready index first. Throws CyclicGraph.
inline std::vector<int> topological_order(const Network& net) {
  const int k = net.size();
  std::vector<int> indegree(k);
  for (int i = 0; i < k; ++i) indegree[i] = static_cast<int>(net.inbound(i).size());
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int i = 0; i < k; ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<int> order;
  order.reserve(k);
  while (!ready.empty()) {
    const int v = ready.top();
    ready.pop();
    order.push_back(v);
    for (int w : net.outbound(v))
      if (--indegree[w] == 0) ready.push(w);
  }
  if (static_cast<int>(order.size()) != k) throw Error(ErrorCode::CyclicGraph, "routing graph contains a cycle");
  return order;
}

/// lambda-bar via the fixed point lambda_bar_i = lambda_i + sum_j p_{j,i} lambda_bar_j,
/// solved in topological order.
inline std::vector<double> effective_rates(const Network& net) {
  const auto order = topological_order(net);
  std::vector<double> rate(net.size(), 0.0);
  for (int i : order) {
    double acc = net.lambda(i);
    for (int j : net.inbound(i)) acc += net.routing(j, i) * rate[j];
    rate[i] = acc;
  }
  return rate;
}

struct ValidationReport {
  std::vector<int> order;
  std::vector<double> effective_rate;
  std::vector<double> slack;         ///< mu_i - lambda_bar_i
  std::vector<int> near_critical;    ///< nodes with slack < 1e-9 * mu_i
};

inline constexpr double kNearCriticalFraction = 1e-9;

/// Checks acyclicity, routing-row feasibility and strict stability of every node.
inline ValidationReport validate_network(const Network& net) {
  ValidationReport report;
  report.order = topological_order(net);
  for (int i = 0; i < net.size(); ++i) {
    const double row = net.routed_fraction(i);
    if (row > 1.0 + 1e-12) {
      std::ostringstream msg;
      msg << "outgoing routing fractions of node " << i << " sum to " << row;
      throw Error(ErrorCode::RoutingRowExceedsOne, msg.str());
    }
  }
  report.effective_rate = effective_rates(net);
  report.slack.resize(net.size());
  for (int i = 0; i < net.size(); ++i) {
    const double slack = net.mu(i) - report.effective_rate[i];
    report.slack[i] = slack;
    if (!(slack > 0.0)) {
      std::ostringstream msg;
      msg << "node " << i << " is unstable: mu - lambda_bar = " << slack;
      throw UnstableError(i, slack, msg.str());
    }
    if (slack < kNearCriticalFraction * net.mu(i)) report.near_critical.push_back(i);
  }
  return report;
}

/// Like validate_network, but near-critical nodes are rejected as unstable.
inline ValidationReport require_stable(const Network& net) {
  ValidationReport report = validate_network(net);
  if (!report.near_critical.empty()) {
    const int i = report.near_critical.front();
    throw UnstableError(i, report.slack[i], "node " + std::to_string(i) + " is near-critical");
  }
  return report;
}

/// A directed path, stored as its node sequence r_1, ..., r_|r|.
struct Path {
  std::vector<int> nodes;

  std::size_t length() const noexcept { return nodes.size(); }
  int source() const { return nodes.front(); }
  int target() const { return nodes.back(); }
  /// r_+: the path with its first node removed.
  Path tail() const { return Path{std::vector<int>(nodes.begin() + 1, nodes.end())}; }

  friend bool operator==(const Path&, const Path&) = default;
};

/// Shortlex order: shorter paths first, then lexicographic on node ids.
inline bool shortlex_less(const Path& a, const Path& b) {
  if (a.length() != b.length()) return a.length() < b.length();
  return a.nodes < b.nodes;
}

inline std::string to_string(const Path& r) {
  std::string out = "(";
  for (std::size_t l = 0; l < r.nodes.size(); ++l) {
    if (l) out += ",";
    out += std::to_string(r.nodes[l]);
  }
  return out + ")";
}

/// P_m(target): every directed path with at least min_len nodes ending at target,
/// in shortlex order (so every path appears after its tail).
inline std::vector<Path> enumerate_paths(const Network& net, int target, int min_len = 1) {
  if (target < 0 || target >= net.size()) throw Error(ErrorCode::InvalidInput, "target node out of range");
  if (min_len < 1) throw Error(ErrorCode::InvalidInput, "minimum path length must be >= 1");
  std::vector<Path> out;
  std::vector<int> reversed{target};
  std::vector<bool> on_path(net.size(), false);
  on_path[target] = true;
  std::function<void(int)> walk = [&](int node) {
    if (static_cast<int>(reversed.size()) >= min_len)
      out.push_back(Path{std::vector<int>(reversed.rbegin(), reversed.rend())});
    for (int j : net.inbound(node)) {
      if (on_path[j]) throw Error(ErrorCode::CyclicGraph, "routing graph contains a cycle");
      on_path[j] = true;
      reversed.push_back(j);
      walk(j);
      reversed.pop_back();
      on_path[j] = false;
    }
  };
  walk(target);
  std::sort(out.begin(), out.end(), shortlex_less);
  return out;
}

/// Pi_r, the product of routing fractions along r; Pi_(i) = 1.
inline double path_weight(const Network& net, const Path& r) {
  if (r.nodes.empty()) throw Error(ErrorCode::InvalidPath, "empty path");
  std::vector<bool> seen(net.size(), false);
  double weight = 1.0;
  for (std::size_t l = 0; l < r.nodes.size(); ++l) {
    const int v = r.nodes[l];
    if (v < 0 || v >= net.size()) throw Error(ErrorCode::InvalidPath, "node out of range in " + to_string(r));
    if (seen[v]) throw Error(ErrorCode::InvalidPath, "repeated node in " + to_string(r));
    seen[v] = true;
    if (l + 1 < r.nodes.size()) {
      const int w = r.nodes[l + 1];
      if (!net.has_edge(v, w)) throw Error(ErrorCode::InvalidPath, "missing edge in " + to_string(r));
      weight *= net.routing(v, w);
    }
  }
  return weight;
}

inline constexpr std::size_t kDefaultPathCap = 64;

/// P_1(target) with the per-path data the rate computations need.
/// Index 0 is the trivial path (target); parent[r] is the index of r_+ (-1 for the trivial path).
struct PathSet {
  int target = 0;
  std::vector<Path> paths;
  std::vector<int> parent;
  std::vector<int> source;
  std::vector<double> weight;

  std::size_t size() const noexcept { return paths.size(); }
  /// |P_2(target)|
  std::size_t upstream_count() const noexcept { return paths.size() - 1; }
};

inline PathSet make_path_set(const Network& net, int target, std::size_t cap = kDefaultPathCap) {
  PathSet set;
  set.target = target;
  set.paths = enumerate_paths(net, target, 1);
  if (set.paths.size() > cap) {
    std::ostringstream msg;
    msg << "|P_1(" << target << ")| = " << set.paths.size() << " exceeds the path cap " << cap;
    throw Error(ErrorCode::TooManyPaths, msg.str());
  }
  const std::size_t n = set.paths.size();
  set.parent.assign(n, -1);
  set.source.resize(n);
  set.weight.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    set.source[r] = set.paths[r].source();
    set.weight[r] = path_weight(net, set.paths[r]);
    if (r == 0) continue;
    const Path tail = set.paths[r].tail();
    // Shortlex order places the tail strictly earlier.
    for (std::size_t q = 0; q < r; ++q) {
      if (set.paths[q] == tail) {
        set.parent[r] = static_cast<int>(q);
        break;
      }
    }
  }
  return set;
}

struct NodeAggregates {
  double effective_rate = 0.0;       ///< lambda-bar_i
  double aggregate_variance = 0.0;   ///< sigma-bar_i^2, variance at unit time of the superposed input
};

/// sigma-bar_i^2 = sigma_i^2 + sum_{r in P_2} (2 s_{r1} s_i rho_{r1,i}
///                 + sum_{r' in P_2} s_{r1} s_{r'1} rho_{r1,r'1} Pi_r') Pi_r
inline NodeAggregates node_aggregates(const Network& net, std::span<const double> sigma,
                                      const Eigen::MatrixXd& rho, int i) {
  validate_network(net);
  const PathSet set = make_path_set(net, i);
  NodeAggregates agg;
  agg.effective_rate = effective_rates(net)[i];
  double var = sigma[i] * sigma[i];
  for (std::size_t r = 1; r < set.size(); ++r) {
    const int a = set.source[r];
    double inner = 2.0 * sigma[a] * sigma[i] * rho(a, i);
    for (std::size_t q = 1; q < set.size(); ++q) {
      const int c = set.source[q];
      inner += sigma[a] * sigma[c] * rho(a, c) * set.weight[q];
    }
    var += inner * set.weight[r];
  }
  agg.aggregate_variance = var;
  return agg;
}

}  // namespace gaussnet
