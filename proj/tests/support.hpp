#pragma once

// Random instances shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "gaussnet/deviations.hpp"
#include "gaussnet/kernel.hpp"
#include "gaussnet/network.hpp"

namespace gaussnet::randnet {

struct Instance {
  Network net;
  MfBmKernel kernel;
  int target;
};

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Correlation matrix from normalised random vectors; entries >= 0 when nonneg is set.
inline Eigen::MatrixXd random_correlation(std::mt19937_64& rng, int k, bool nonneg) {
  Eigen::MatrixXd v(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) v(i, j) = nonneg ? uniform(rng, 0.0, 1.0) : uniform(rng, -1.0, 1.0);
  for (int i = 0; i < k; ++i) v.row(i) /= v.row(i).norm();
  Eigen::MatrixXd rho = v * v.transpose();
  for (int i = 0; i < k; ++i) {
    rho(i, i) = 1.0;
    for (int j = 0; j < i; ++j) rho(i, j) = rho(j, i) = std::clamp(rho(j, i), -1.0, 1.0);
  }
  return rho;
}

/// Admissible by construction: either a common Hurst index with an arbitrary correlation
/// matrix (a linear image of independent fBms), or mixed indices with independent coordinates.
inline MfBmKernel random_kernel(std::mt19937_64& rng, int k, double h_lo, double h_hi, bool nonneg_rho) {
  std::vector<double> sigma(k);
  for (double& s : sigma) s = uniform(rng, 0.5, 1.5);
  std::vector<double> hurst(k);
  if (std::bernoulli_distribution(0.5)(rng)) {
    const double h = uniform(rng, h_lo, h_hi);
    std::fill(hurst.begin(), hurst.end(), h);
    return MfBmKernel(hurst, sigma, random_correlation(rng, k, nonneg_rho));
  }
  for (double& h : hurst) h = uniform(rng, h_lo, h_hi);
  return MfBmKernel(hurst, sigma, Eigen::MatrixXd::Identity(k, k));
}

/// Sets mu so that every node has slack in [slack_lo, slack_hi].
inline std::vector<double> stable_mu(const std::vector<double>& lambda, const std::vector<Edge>& edges,
                                     std::mt19937_64& rng, double slack_lo = 0.3, double slack_hi = 2.0) {
  const Network probe(std::vector<double>(lambda.size(), 1.0), lambda, edges);
  const auto rates = effective_rates(probe);
  std::vector<double> mu(lambda.size());
  for (std::size_t j = 0; j < mu.size(); ++j) mu[j] = rates[j] + uniform(rng, slack_lo, slack_hi);
  return mu;
}

inline Instance random_tandem(std::mt19937_64& rng, double h_lo, double h_hi, bool nonneg_rho) {
  const std::vector<double> lambda{uniform(rng, 0.2, 1.5), uniform(rng, 0.0, 1.0)};
  const std::vector<Edge> edges{{0, 1, uniform(rng, 0.2, 1.0)}};
  Network net(stable_mu(lambda, edges, rng), lambda, edges);
  return {net, random_kernel(rng, 2, h_lo, h_hi, nonneg_rho), 1};
}

inline Instance random_diamond(std::mt19937_64& rng, double h_lo, double h_hi, bool nonneg_rho) {
  std::vector<double> lambda(4);
  for (double& l : lambda) l = uniform(rng, 0.0, 1.0);
  const double p1 = uniform(rng, 0.1, 0.6);
  const double p2 = uniform(rng, 0.1, 1.0 - p1);
  const std::vector<Edge> edges{{0, 1, p1}, {0, 2, p2}, {1, 3, uniform(rng, 0.2, 1.0)}, {2, 3, uniform(rng, 0.2, 1.0)}};
  Network net(stable_mu(lambda, edges, rng), lambda, edges);
  return {net, random_kernel(rng, 4, h_lo, h_hi, nonneg_rho), 3};
}

/// Random DAG on k nodes (edges only from lower to higher index), routing rows summing to <= 1.
inline std::vector<Edge> random_dag_edges(std::mt19937_64& rng, int k, double density = 0.5) {
  std::vector<Edge> edges;
  for (int i = 0; i < k; ++i) {
    std::vector<int> targets;
    for (int j = i + 1; j < k; ++j)
      if (std::bernoulli_distribution(density)(rng)) targets.push_back(j);
    if (targets.empty()) continue;
    const double budget = uniform(rng, 0.3, 1.0);
    std::vector<double> w(targets.size());
    double sum = 0.0;
    for (double& v : w) sum += (v = uniform(rng, 0.1, 1.0));
    for (std::size_t q = 0; q < targets.size(); ++q) edges.push_back({i, targets[q], budget * w[q] / sum});
  }
  return edges;
}

inline Instance random_network(std::mt19937_64& rng, int k, double h_lo, double h_hi, bool nonneg_rho) {
  const auto edges = random_dag_edges(rng, k);
  std::vector<double> lambda(k);
  for (double& l : lambda) l = uniform(rng, 0.0, 1.0);
  lambda[0] = uniform(rng, 0.2, 1.0);
  Network net(stable_mu(lambda, edges, rng), lambda, edges);
  return {net, random_kernel(rng, k, h_lo, h_hi, nonneg_rho), k - 1};
}

/// Random t in T_i (some gaps exactly zero) and s in S_i(t) (some coordinates on the faces).
inline std::pair<TimeVector, TimeVector> random_ts(std::mt19937_64& rng, const RateModel& model) {
  const PathSet& ps = model.paths();
  TimeVector t(ps.size()), s(ps.size());
  t[0] = -uniform(rng, 0.05, 4.0);
  for (std::size_t r = 1; r < ps.size(); ++r) {
    const double gap = std::bernoulli_distribution(0.2)(rng) ? 0.0 : uniform(rng, 0.0, 3.0);
    t[r] = t[ps.parent[r]] - gap;
  }
  s[0] = 0.0;
  for (std::size_t r = 1; r < ps.size(); ++r) {
    const double hi = s[ps.parent[r]];
    const double u = std::uniform_int_distribution<int>(0, 9)(rng) == 0 ? 1.0 : uniform(rng, 0.0, 1.0);
    s[r] = u == 1.0 ? hi : t[r] + u * (hi - t[r]);
  }
  return {t, s};
}

}  // namespace gaussnet::randnet
