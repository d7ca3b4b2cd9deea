#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gaussnet/error.hpp"
#include "gaussnet/kernel.hpp"
#include "gaussnet/network.hpp"
#include "gaussnet/parallel.hpp"

namespace gaussnet {

/// Uniform grid tau_q = q * dt, q = 0..steps, with A(0) = 0.
struct TimeGrid {
  double dt = 0.0;
  int steps = 0;

  double time(int q) const { return dt * q; }
  void validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(ErrorCode::InvalidInput, "grid step must be > 0");
    if (steps < 1) throw Error(ErrorCode::InvalidInput, "grid needs at least one step");
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of replication `rep` under master seed `seed`.
inline std::uint64_t replication_seed(std::uint64_t seed, std::uint64_t rep) { return splitmix64(seed ^ rep); }

/// Zero-mean Gaussian vector of the standardized process at the grid points, via a
/// symmetric factor of the grid Gram matrix. Coordinates are ordered node-major: j * steps + (q - 1).
class GaussianSampler {
 public:
  GaussianSampler(const MfBmKernel& kernel, const TimeGrid& grid) : grid_(grid), nodes_(kernel.size()) {
    grid.validate();
    const Eigen::Index dim = static_cast<Eigen::Index>(nodes_) * grid.steps;
    Eigen::MatrixXd g(dim, dim);
    for (int j = 0; j < nodes_; ++j)
      for (int q = 1; q <= grid.steps; ++q) {
        const Eigen::Index a = index(j, q);
        for (int l = 0; l < nodes_; ++l)
          for (int p = 1; p <= grid.steps; ++p) {
            const Eigen::Index c = index(l, p);
            if (c < a) continue;
            g(a, c) = g(c, a) = kernel.cov(j, l, grid.time(q), grid.time(p));
          }
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g);
    if (solver.info() != Eigen::Success) throw Error(ErrorCode::NotPSD, "eigen-decomposition of the grid covariance failed");
    const PsdCheck psd = check_psd(solver.eigenvalues());
    min_eigenvalue_ = psd.min_eigenvalue;
    const Eigen::VectorXd root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    factor_ = solver.eigenvectors() * root.asDiagonal();
  }

  const TimeGrid& grid() const noexcept { return grid_; }
  int nodes() const noexcept { return nodes_; }
  Eigen::Index dim() const noexcept { return factor_.rows(); }
  double min_eigenvalue() const noexcept { return min_eigenvalue_; }
  Eigen::Index index(int node, int q) const { return static_cast<Eigen::Index>(node) * grid_.steps + (q - 1); }

  /// Columns are independent standardized samples; column j uses the generator seeded with seeds[j].
  Eigen::MatrixXd sample_standard(const std::vector<std::uint64_t>& seeds) const {
    Eigen::MatrixXd z(dim(), static_cast<Eigen::Index>(seeds.size()));
    for (std::size_t c = 0; c < seeds.size(); ++c) {
      std::mt19937_64 rng(seeds[c]);
      std::normal_distribution<double> normal;
      for (Eigen::Index r = 0; r < dim(); ++r) z(r, static_cast<Eigen::Index>(c)) = normal(rng);
    }
    return factor_ * z;
  }

  /// A^(n) on the grid, (steps + 1) x k, from one standardized column.
  Eigen::MatrixXd paths(const Eigen::Ref<const Eigen::VectorXd>& standard, int n, std::span<const double> lambda) const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(grid_.steps + 1, nodes_);
    const double root = std::sqrt(static_cast<double>(n));
    for (int j = 0; j < nodes_; ++j)
      for (int q = 1; q <= grid_.steps; ++q) a(q, j) = n * lambda[j] * grid_.time(q) + root * standard(index(j, q));
    return a;
  }

 private:
  TimeGrid grid_;
  int nodes_;
  Eigen::MatrixXd factor_;
  double min_eigenvalue_ = 0.0;
};

/// One realization of A^(n) on the grid: rows are grid points (row 0 is time 0), columns nodes.
inline Eigen::MatrixXd sample_gaussian_paths(const Network& net, const MfBmKernel& kernel, const TimeGrid& grid, int n,
                                             std::uint64_t seed) {
  if (kernel.size() != net.size()) throw Error(ErrorCode::InvalidInput, "kernel and network sizes differ");
  if (n < 1) throw Error(ErrorCode::InvalidInput, "scale n must be >= 1");
  const GaussianSampler sampler(kernel, grid);
  const Eigen::MatrixXd z = sampler.sample_standard({seed});
  return sampler.paths(z.col(0), n, net.lambda());
}

/// Queue, cumulative departure and cumulative input trajectories, each (steps + 1) x k.
struct QueueTrajectories {
  Eigen::MatrixXd queue;
  Eigen::MatrixXd departures;
  Eigen::MatrixXd inputs;
};

/// Discrete Lindley recursion across the network for one grid step.
class LindleyStep {
 public:
  LindleyStep(const Network& net, std::vector<int> order, double service_per_step)
      : net_(net), order_(std::move(order)), service_(service_per_step) {
    q_.assign(net.size(), 0.0);
    dd_.assign(net.size(), 0.0);
    di_.assign(net.size(), 0.0);
  }

  void reset() { std::fill(q_.begin(), q_.end(), 0.0); }

  /// dA: exogenous increments per node over the step; service_ is n * dt.
  void step(const double* dA) {
    for (int i : order_) {
      double in = dA[i];
      for (int j : net_.inbound(i)) in += net_.routing(j, i) * dd_[j];
      const double before = q_[i];
      const double after = std::max(0.0, before + in - net_.mu(i) * service_);
      di_[i] = in;
      dd_[i] = before + in - after;
      q_[i] = after;
    }
  }

  const std::vector<double>& queue() const noexcept { return q_; }
  const std::vector<double>& departed() const noexcept { return dd_; }
  const std::vector<double>& arrived() const noexcept { return di_; }

 private:
  const Network& net_;
  std::vector<int> order_;
  double service_;
  std::vector<double> q_, dd_, di_;
};

/// Runs the network from empty queues at grid time 0 on the given exogenous paths.
inline QueueTrajectories simulate_queues(const Network& net, const Eigen::MatrixXd& paths, int n, const TimeGrid& grid) {
  grid.validate();
  if (paths.rows() != grid.steps + 1 || paths.cols() != net.size())
    throw Error(ErrorCode::InvalidInput, "paths do not match the grid and network");
  const int k = net.size();
  QueueTrajectories out;
  out.queue = Eigen::MatrixXd::Zero(grid.steps + 1, k);
  out.departures = Eigen::MatrixXd::Zero(grid.steps + 1, k);
  out.inputs = Eigen::MatrixXd::Zero(grid.steps + 1, k);
  LindleyStep stepper(net, topological_order(net), static_cast<double>(n) * grid.dt);
  std::vector<double> dA(k);
  for (int q = 1; q <= grid.steps; ++q) {
    for (int j = 0; j < k; ++j) dA[j] = paths(q, j) - paths(q - 1, j);
    stepper.step(dA.data());
    for (int j = 0; j < k; ++j) {
      out.queue(q, j) = stepper.queue()[j];
      out.departures(q, j) = out.departures(q - 1, j) + stepper.departed()[j];
      out.inputs(q, j) = out.inputs(q - 1, j) + stepper.arrived()[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Overflow estimation

struct SimConfig {
  std::vector<int> scales{1, 2, 3};
  double dt = 0.0;
  double horizon = 0.0;
  double burn_in = 0.0;
  int replications = 1000;
  std::uint64_t seed = 1;
  double b = 1.0;
  int threads = 1;
  int batch = 128;

  void validate() const {
    if (scales.empty()) throw Error(ErrorCode::InvalidInput, "at least one scale is required");
    for (int n : scales)
      if (n < 1) throw Error(ErrorCode::InvalidInput, "scales must be positive");
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidInput, "dt must be > 0");
    if (!(horizon > dt)) throw Error(ErrorCode::InvalidInput, "horizon must exceed dt");
    if (!(burn_in >= 0.0) || !(burn_in < horizon)) throw Error(ErrorCode::InvalidInput, "burn-in must lie in [0, horizon)");
    if (replications < 1) throw Error(ErrorCode::InvalidInput, "replications must be >= 1");
    if (!(b > 0.0)) throw Error(ErrorCode::InvalidInput, "threshold b must be > 0");
  }
};

/// Time scale of the most likely overflow of an isolated queue with the target's parameters.
inline double overflow_time_scale(const Network& net, const MfBmKernel& kernel, int i, double b) {
  const ValidationReport rep = validate_network(net);
  const double H = kernel.hurst(i);
  return (b / rep.slack[i]) * (H / (1.0 - H));
}

/// Fills unset (zero) dt, horizon and burn-in: dt = |t*| / 50, horizon = 20 |t*|,
/// burn-in = max(10 |t*|, horizon / 2).
inline SimConfig with_default_grid(SimConfig cfg, const Network& net, const MfBmKernel& kernel, int i) {
  const double ts = overflow_time_scale(net, kernel, i, cfg.b);
  if (cfg.dt <= 0.0) cfg.dt = ts / 50.0;
  if (cfg.horizon <= 0.0) cfg.horizon = 20.0 * ts;
  if (cfg.burn_in <= 0.0) cfg.burn_in = std::max(10.0 * ts, 0.5 * cfg.horizon);
  if (cfg.burn_in >= cfg.horizon) cfg.burn_in = 0.5 * cfg.horizon;
  return cfg;
}

struct ScaleEstimate {
  int n = 0;
  long long count = 0;
  long long trials = 0;
  double p_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct OverflowEstimate {
  std::vector<ScaleEstimate> scales;
  double exponent = 0.0;    ///< OLS slope of -log p_hat on n
  double intercept = 0.0;
  std::vector<double> residuals;  ///< one per scale used in the fit
  int fitted_scales = 0;
  SimConfig config;
  std::string caveat;
};

inline constexpr double kWilsonZ = 1.959963984540054;

inline std::pair<double, double> wilson_interval(long long count, long long trials, double z = kWilsonZ) {
  if (trials <= 0) return {0.0, 1.0};
  const double N = static_cast<double>(trials);
  const double p = static_cast<double>(count) / N;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / N;
  const double centre = (p + z2 / (2.0 * N)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / N + z2 / (4.0 * N * N));
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> residuals;
};

inline LinearFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t m = x.size();
  if (m < 2 || y.size() != m) throw Error(ErrorCode::InvalidInput, "least squares needs two or more points");
  double mx = 0.0, my = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    mx += x[j];
    my += y[j];
  }
  mx /= m;
  my /= m;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    sxx += (x[j] - mx) * (x[j] - mx);
    sxy += (x[j] - mx) * (y[j] - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorCode::InvalidInput, "least squares needs distinct abscissae");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (std::size_t j = 0; j < m; ++j) fit.residuals.push_back(y[j] - fit.intercept - fit.slope * x[j]);
  return fit;
}

/// Estimates P(Q_i^(n) > n b) at each scale from post-burn-in grid points of independent
/// replications. Every scale reuses the same standardized samples (common random numbers).
inline OverflowEstimate estimate_overflow(const Network& net, const MfBmKernel& kernel, int i, const SimConfig& cfg_in) {
  if (kernel.size() != net.size()) throw Error(ErrorCode::InvalidInput, "kernel and network sizes differ");
  if (i < 0 || i >= net.size()) throw Error(ErrorCode::InvalidInput, "target node out of range");
  const ValidationReport report = require_stable(net);
  SimConfig cfg = with_default_grid(cfg_in, net, kernel, i);
  cfg.validate();

  TimeGrid grid;
  grid.dt = cfg.dt;
  grid.steps = static_cast<int>(std::ceil(cfg.horizon / cfg.dt - 1e-9));
  if (static_cast<long long>(grid.steps) * net.size() > 8000)
    throw Error(ErrorCode::InvalidInput, "simulation grid too fine: horizon / dt * nodes exceeds 8000");
  const int first_counted = static_cast<int>(std::ceil(cfg.burn_in / cfg.dt - 1e-9));
  const GaussianSampler sampler(kernel, grid);

  const int k = net.size();
  const std::size_t nscales = cfg.scales.size();
  const int batch = std::max(1, cfg.batch);
  const int batches = (cfg.replications + batch - 1) / batch;

  auto run_batch = [&](std::size_t bi) {
    const int lo = static_cast<int>(bi) * batch;
    const int hi = std::min(cfg.replications, lo + batch);
    std::vector<std::uint64_t> seeds;
    for (int rep = lo; rep < hi; ++rep) seeds.push_back(replication_seed(cfg.seed, static_cast<std::uint64_t>(rep)));
    const Eigen::MatrixXd z = sampler.sample_standard(seeds);
    std::vector<long long> counts(nscales, 0);
    std::vector<double> dA(k);
    for (std::size_t si = 0; si < nscales; ++si) {
      const int n = cfg.scales[si];
      const double root = std::sqrt(static_cast<double>(n));
      const double level = n * cfg.b;
      LindleyStep stepper(net, report.order, n * grid.dt);
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        stepper.reset();
        for (int q = 1; q <= grid.steps; ++q) {
          for (int j = 0; j < k; ++j) {
            const double prev = q > 1 ? z(sampler.index(j, q - 1), c) : 0.0;
            dA[j] = n * net.lambda(j) * grid.dt + root * (z(sampler.index(j, q), c) - prev);
          }
          stepper.step(dA.data());
          if (q >= first_counted && stepper.queue()[i] > level) ++counts[si];
        }
      }
    }
    return counts;
  };
  const auto per_batch = parallel_map(static_cast<std::size_t>(batches), cfg.threads, run_batch);

  OverflowEstimate est;
  est.config = cfg;
  const long long points = grid.steps - std::max(first_counted, 1) + 1;
  std::vector<double> xs, ys;
  for (std::size_t si = 0; si < nscales; ++si) {
    ScaleEstimate se;
    se.n = cfg.scales[si];
    for (const auto& c : per_batch) se.count += c[si];
    se.trials = points * cfg.replications;
    se.p_hat = static_cast<double>(se.count) / static_cast<double>(se.trials);
    std::tie(se.ci_lo, se.ci_hi) = wilson_interval(se.count, se.trials);
    est.scales.push_back(se);
    if (se.count > 0) {
      xs.push_back(se.n);
      ys.push_back(-std::log(se.p_hat));
    }
  }
  est.fitted_scales = static_cast<int>(xs.size());
  if (xs.size() < 2) {
    std::ostringstream msg;
    msg << "only " << xs.size() << " scale(s) observed an overflow; use smaller scales, a smaller b, "
        << "or more replications";
    throw Error(ErrorCode::AllZeroCounts, msg.str());
  }
  const LinearFit fit = least_squares(xs, ys);
  est.exponent = fit.slope;
  est.intercept = fit.intercept;
  est.residuals = fit.residuals;
  est.caveat =
      "queues start empty at grid time 0; grid points after the burn-in are pooled, so the intervals ignore "
      "serial correlation; no correction for time discretization";
  return est;
}

// ---------------------------------------------------------------------------
// Input formula check

struct InputFormulaCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double combinations = 0.0;
};

inline constexpr double kMaxCombinations = 1e7;

namespace detail {

/// Number of index assignments 0 <= t_r <= t_{r+} for all upstream paths, given t_i = top.
inline double count_assignments(const PathSet& ps, int top) {
  // ways[r][x]: assignments of the subtree rooted at r with t_r = x.
  const std::size_t n = ps.size();
  std::vector<std::vector<int>> children(n);
  for (std::size_t r = 1; r < n; ++r) children[ps.parent[r]].push_back(static_cast<int>(r));
  std::vector<std::vector<double>> ways(n, std::vector<double>(top + 1, 1.0));
  for (std::size_t r = n; r-- > 0;) {
    for (int c : children[r]) {
      double prefix = 0.0;
      for (int x = 0; x <= top; ++x) {
        prefix += ways[c][x];
        ways[r][x] *= prefix;
      }
    }
  }
  return ways[0][top];
}

/// sup over grid assignments with t_i = top of sum_r [A_{r1}(t_r, end) + n mu_{r1} (tau_{t_r} - tau_{t_{r+}})] Pi_r.
inline double enumerate_sup(const Network& net, const PathSet& ps, const Eigen::MatrixXd& paths, int n, double dt,
                            int top) {
  const std::size_t np = ps.size();
  const int end = static_cast<int>(paths.rows()) - 1;
  if (np == 1) return 0.0;
  std::vector<int> idx(np, 0);
  idx[0] = top;
  double best = -std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, double)> walk = [&](std::size_t r, double acc) {
    if (r == np) {
      best = std::max(best, acc);
      return;
    }
    const int src = ps.source[r];
    const int up = idx[ps.parent[r]];
    const double rate = n * net.mu(src) * dt;
    for (int x = 0; x <= up; ++x) {
      idx[r] = x;
      const double term = (paths(end, src) - paths(x, src) + rate * (x - up)) * ps.weight[r];
      walk(r + 1, acc + term);
    }
  };
  walk(1, 0.0);
  return best;
}

}  // namespace detail

/// Compares the simulated input I_i(tau_t, tau_end) with the discrete-time functional of the
/// exogenous inputs (suprema over grid-restricted ordered time vectors).
inline InputFormulaCheck verify_input_formula(const Network& net, const Eigen::MatrixXd& paths, int n,
                                              const TimeGrid& grid, int i, int t_index) {
  grid.validate();
  if (t_index < 0 || t_index > grid.steps) throw Error(ErrorCode::InvalidInput, "t_index outside the grid");
  const PathSet ps = make_path_set(net, i);
  InputFormulaCheck out;
  out.combinations = detail::count_assignments(ps, t_index) + detail::count_assignments(ps, grid.steps);
  if (out.combinations > kMaxCombinations) {
    std::ostringstream msg;
    msg << out.combinations << " grid assignments exceed the enumeration cap of " << kMaxCombinations;
    throw Error(ErrorCode::TooManyCombinations, msg.str());
  }
  const QueueTrajectories traj = simulate_queues(net, paths, n, grid);
  out.lhs = traj.inputs(grid.steps, i) - traj.inputs(t_index, i);
  const double own = paths(grid.steps, i) - paths(t_index, i);
  out.rhs = own + detail::enumerate_sup(net, ps, paths, n, grid.dt, t_index) -
            detail::enumerate_sup(net, ps, paths, n, grid.dt, grid.steps);
  return out;
}

}  // namespace gaussnet
