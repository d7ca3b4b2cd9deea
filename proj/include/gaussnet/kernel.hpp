#pragma once

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "gaussnet/error.hpp"
#include "gaussnet/network.hpp"

namespace gaussnet {

namespace detail {

// |x|^p as exp(p ln|x|); 0 at x = 0.
inline double abs_pow(double x, double p) {
  const double ax = std::fabs(x);
  return ax == 0.0 ? 0.0 : std::exp(p * std::log(ax));
}

inline double sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace detail

/// Multivariate fractional Brownian motion parameters.
class MfBmKernel {
 public:
  MfBmKernel(std::vector<double> hurst, std::vector<double> sigma, Eigen::MatrixXd rho,
             Eigen::MatrixXd eta = Eigen::MatrixXd())
      : hurst_(std::move(hurst)), sigma_(std::move(sigma)), rho_(std::move(rho)), eta_(std::move(eta)) {
    const int k = static_cast<int>(hurst_.size());
    if (k == 0) throw Error(ErrorCode::InvalidInput, "kernel has no coordinates");
    if (static_cast<int>(sigma_.size()) != k) throw Error(ErrorCode::InvalidInput, "hurst and sigma sizes differ");
    if (rho_.rows() != k || rho_.cols() != k) throw Error(ErrorCode::InvalidInput, "rho must be k x k");
    if (eta_.size() == 0) eta_ = Eigen::MatrixXd::Zero(k, k);
    if (eta_.rows() != k || eta_.cols() != k) throw Error(ErrorCode::InvalidInput, "eta must be k x k");
    for (int i = 0; i < k; ++i) {
      if (!std::isfinite(hurst_[i]) || hurst_[i] <= 0.0 || hurst_[i] >= 1.0)
        throw Error(ErrorCode::InvalidInput, "Hurst index of node " + std::to_string(i) + " must lie in (0,1)");
      if (!std::isfinite(sigma_[i]) || sigma_[i] <= 0.0)
        throw Error(ErrorCode::InvalidInput, "volatility of node " + std::to_string(i) + " must be > 0");
      if (rho_(i, i) != 1.0) throw Error(ErrorCode::InvalidInput, "rho must have a unit diagonal");
      if (eta_(i, i) != 0.0) throw Error(ErrorCode::InvalidInput, "eta must have a zero diagonal");
      for (int j = 0; j < k; ++j) {
        if (!std::isfinite(rho_(i, j)) || std::fabs(rho_(i, j)) > 1.0)
          throw Error(ErrorCode::InvalidInput, "rho entries must lie in [-1,1]");
        if (rho_(i, j) != rho_(j, i)) throw Error(ErrorCode::InvalidInput, "rho must be symmetric");
        if (!std::isfinite(eta_(i, j)) || eta_(i, j) != -eta_(j, i))
          throw Error(ErrorCode::InvalidInput, "eta must be antisymmetric");
      }
    }
    exponent_.resize(static_cast<std::size_t>(k) * k);
    unit_sum_.resize(static_cast<std::size_t>(k) * k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const double e = hurst_[i] + hurst_[j];
        exponent_[i * k + j] = e;
        unit_sum_[i * k + j] = std::fabs(e - 1.0) < 1e-12;
      }
  }

  int size() const noexcept { return static_cast<int>(hurst_.size()); }
  double hurst(int i) const { return hurst_.at(i); }
  double sigma(int i) const { return sigma_.at(i); }
  double rho(int i, int j) const { return rho_(i, j); }
  double eta(int i, int j) const { return eta_(i, j); }
  const std::vector<double>& hurst() const noexcept { return hurst_; }
  const std::vector<double>& sigma() const noexcept { return sigma_; }
  const Eigen::MatrixXd& rho() const noexcept { return rho_; }
  const Eigen::MatrixXd& eta() const noexcept { return eta_; }

  bool time_reversible() const { return eta_.cwiseAbs().maxCoeff() == 0.0; }

  MfBmKernel scaled(double factor) const {
    std::vector<double> s = sigma_;
    for (double& v : s) v *= factor;
    return MfBmKernel(hurst_, std::move(s), rho_, eta_);
  }

  /// Structure function w_ij(h); Cov(A_i(t), A_j(s)) = s_i s_j / 2 [w(-t) + w(s) - w(s - t)].
  double w(int i, int j, double h) const {
    const std::size_t idx = static_cast<std::size_t>(i) * hurst_.size() + j;
    if (h == 0.0) return 0.0;
    if (unit_sum_[idx]) return rho_(i, j) * std::fabs(h) + eta_(i, j) * h * std::log(std::fabs(h));
    return (rho_(i, j) - eta_(i, j) * detail::sign(h)) * detail::abs_pow(h, exponent_[idx]);
  }

  /// Cov(A_i(t), A_j(s)) of the standardized process.
  double cov(int i, int j, double t, double s) const {
    return 0.5 * sigma_[i] * sigma_[j] * (w(i, j, -t) + w(i, j, s) - w(i, j, s - t));
  }

 private:
  std::vector<double> hurst_;
  std::vector<double> sigma_;
  Eigen::MatrixXd rho_;
  Eigen::MatrixXd eta_;
  std::vector<double> exponent_;
  std::vector<char> unit_sum_;
};

inline double cov(const MfBmKernel& kernel, int i, int j, double t, double s) { return kernel.cov(i, j, t, s); }

/// Finite linear combination sum_q coef_q A_{node_q}(time_q).
struct PointCombination {
  struct Term {
    int node;
    double time;
    double coef;
  };
  std::vector<Term> terms;

  void add(int node, double time, double coef) {
    if (time == 0.0 || coef == 0.0) return;  // A(0) = 0
    terms.push_back({node, time, coef});
  }
};

inline double covariance(const MfBmKernel& kernel, const PointCombination& a, const PointCombination& b) {
  double acc = 0.0;
  for (const auto& p : a.terms)
    for (const auto& q : b.terms) acc += p.coef * q.coef * kernel.cov(p.node, q.node, p.time, q.time);
  return acc;
}

inline double variance(const MfBmKernel& kernel, const PointCombination& a) {
  double acc = 0.0;
  const auto& t = a.terms;
  for (std::size_t p = 0; p < t.size(); ++p) {
    acc += t[p].coef * t[p].coef * kernel.cov(t[p].node, t[p].node, t[p].time, t[p].time);
    for (std::size_t q = p + 1; q < t.size(); ++q)
      acc += 2.0 * t[p].coef * t[q].coef * kernel.cov(t[p].node, t[q].node, t[p].time, t[q].time);
  }
  return acc;
}

/// Weighted increment combination sum_r [A_{node_r}(end_r) - A_{node_r}(start_r)] weight_r.
struct IncrementSpec {
  struct Increment {
    int node;
    double start;
    double end;
    double weight;
  };
  std::vector<Increment> increments;

  PointCombination points() const {
    PointCombination pc;
    for (const auto& inc : increments) {
      pc.add(inc.node, inc.end, inc.weight);
      pc.add(inc.node, inc.start, -inc.weight);
    }
    return pc;
  }
};

/// Increment spec of A-bar_i(s, t) over a path set: start s_r, end t_r, node r_1, weight Pi_r.
inline IncrementSpec make_increment_spec(const PathSet& paths, const std::vector<double>& s,
                                         const std::vector<double>& t) {
  if (s.size() != paths.size() || t.size() != paths.size())
    throw Error(ErrorCode::InvalidInput, "time vector size does not match the path set");
  IncrementSpec spec;
  for (std::size_t r = 0; r < paths.size(); ++r)
    spec.increments.push_back({paths.source[r], s[r], t[r], paths.weight[r]});
  return spec;
}

/// Cov of two increment combinations, expanded over path pairs.
inline double cov_increments(const MfBmKernel& kernel, const IncrementSpec& a, const IncrementSpec& b) {
  double acc = 0.0;
  for (const auto& p : a.increments)
    for (const auto& q : b.increments) {
      const double c = kernel.cov(p.node, q.node, p.end, q.end) - kernel.cov(p.node, q.node, p.end, q.start) -
                       kernel.cov(p.node, q.node, p.start, q.end) + kernel.cov(p.node, q.node, p.start, q.start);
      acc += p.weight * q.weight * c;
    }
  return acc;
}

inline constexpr double kPsdFloor = 1e-9;

/// Clips eigenvalues in [-floor, 0) to zero; throws NotPSD below the floor.
/// The floor is kPsdFloor * max(1, largest eigenvalue).
struct PsdCheck {
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
};

inline PsdCheck check_psd(const Eigen::VectorXd& eigenvalues) {
  PsdCheck out;
  out.min_eigenvalue = eigenvalues.minCoeff();
  out.max_eigenvalue = eigenvalues.maxCoeff();
  const double floor = -kPsdFloor * std::max(1.0, out.max_eigenvalue);
  if (out.min_eigenvalue < floor) {
    std::ostringstream msg;
    msg << "covariance matrix has eigenvalue " << out.min_eigenvalue
        << "; the (H, rho, eta) combination is not admissible";
    throw Error(ErrorCode::NotPSD, msg.str());
  }
  return out;
}

inline Eigen::MatrixXd gram_matrix(const MfBmKernel& kernel, const std::vector<IncrementSpec>& specs) {
  if (specs.empty()) throw Error(ErrorCode::InvalidInput, "gram_matrix needs at least one spec");
  const Eigen::Index m = static_cast<Eigen::Index>(specs.size());
  Eigen::MatrixXd g(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = a; b < m; ++b) g(a, b) = g(b, a) = cov_increments(kernel, specs[a], specs[b]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g, Eigen::EigenvaluesOnly);
  check_psd(solver.eigenvalues());
  return g;
}

/// sigma-bar_i^2 and lambda-bar_i using the kernel's volatilities and correlations.
inline NodeAggregates node_aggregates(const Network& net, const MfBmKernel& kernel, int i) {
  if (kernel.size() != net.size()) throw Error(ErrorCode::InvalidInput, "kernel and network sizes differ");
  return node_aggregates(net, kernel.sigma(), kernel.rho(), i);
}

}  // namespace gaussnet
