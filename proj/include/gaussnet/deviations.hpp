#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gaussnet/error.hpp"
#include "gaussnet/kernel.hpp"
#include "gaussnet/network.hpp"
#include "gaussnet/optimize.hpp"
#include "gaussnet/parallel.hpp"

namespace gaussnet {

enum class CaseTag { Case1, Case2, Case3, Boundary };
enum class Tightness { TightThm1, TightThm2, TightThm3, LowerBoundOnly };

inline std::string to_string(CaseTag c) {
  switch (c) {
    case CaseTag::Case1: return "Case1";
    case CaseTag::Case2: return "Case2";
    case CaseTag::Case3: return "Case3";
    case CaseTag::Boundary: return "Boundary";
  }
  return "?";
}

inline std::string to_string(Tightness t) {
  switch (t) {
    case Tightness::TightThm1: return "TightThm1";
    case Tightness::TightThm2: return "TightThm2";
    case Tightness::TightThm3: return "TightThm3";
    case Tightness::LowerBoundOnly: return "LowerBoundOnly";
  }
  return "?";
}

/// Entries indexed by the path set of the target (index 0 is the trivial path).
using TimeVector = std::vector<double>;

/// Second-order quantities of X = A-bar(t - t_i, t), Y = A-bar(s, t) and W = A-bar(t - t_i, s) = X - Y.
struct Moments {
  double a = 0.0;    ///< b - (mu_i - lambda-bar_i) t_i
  double c = 0.0;    ///< c_i(t, s)
  double vx = 0.0;
  double vy = 0.0;
  double vw = 0.0;
  double cxw = 0.0;
  bool boundary = false;  ///< s coincides with t - t_i, or W has vanishing variance

  double k() const { return cxw / vx * a; }
  double h() const { return (cxw - vw) / vy * (a - c); }
  double cxy() const { return vx - cxw; }
  /// Var(Y | X) = Var(W | X)
  double conditional_variance() const { return vw - cxw * cxw / vx; }
};

struct CaseValue {
  double value = 0.0;
  CaseTag tag = CaseTag::Boundary;
  Moments moments;
};

inline constexpr double kBoundaryVariance = 1e-12;

/// Everything needed to evaluate the rate function at one target node.
class RateModel {
 public:
  /// The s-independent part of the moment computation at a fixed t.
  struct Frame {
    TimeVector t;
    double a = 0.0;
    double vx = 0.0;
    double tt = 0.0;  ///< Var of sum w_r A(t_r)
    double tb = 0.0;  ///< Cov of sum w_r A(t_r) and sum w_r A(t_r - t_i)
    double bb = 0.0;  ///< Var of sum w_r A(t_r - t_i)
  };

  RateModel(const Network& net, const MfBmKernel& kernel, int target, std::size_t path_cap = kDefaultPathCap)
      : net_(net), kernel_(kernel), target_(target) {
    if (kernel_.size() != net_.size()) throw Error(ErrorCode::InvalidInput, "kernel and network sizes differ");
    if (target < 0 || target >= net_.size()) throw Error(ErrorCode::InvalidInput, "target node out of range");
    const ValidationReport report = require_stable(net_);
    paths_ = make_path_set(net_, target, path_cap);
    lambda_bar_ = report.effective_rate[target];
    slack_ = report.slack[target];
    double inflow = 0.0;
    for (int j : net_.inbound(target)) inflow += net_.mu(j) * net_.routing(j, target);
    c_target_ = lambda_bar_ - net_.lambda(target) - inflow;
    drain_.assign(paths_.size(), 0.0);
    for (std::size_t r = 1; r < paths_.size(); ++r) drain_[r] = net_.net_drain(paths_.source[r]) * paths_.weight[r];
  }

  const Network& network() const noexcept { return net_; }
  const MfBmKernel& kernel() const noexcept { return kernel_; }
  const PathSet& paths() const noexcept { return paths_; }
  int target() const noexcept { return target_; }
  std::size_t dim() const noexcept { return paths_.size(); }
  double lambda_bar() const noexcept { return lambda_bar_; }
  /// mu_i - lambda-bar_i
  double slack() const noexcept { return slack_; }

  /// Throws DomainViolation unless t is in closure(T_i) and (if given) s is in closure(S_i(t)).
  void check_domain(const TimeVector& t, const TimeVector* s = nullptr) const {
    if (t.size() != dim()) throw Error(ErrorCode::DomainViolation, "t has the wrong length");
    double scale = 1.0;
    for (double v : t) {
      if (!std::isfinite(v)) throw Error(ErrorCode::DomainViolation, "t has a non-finite entry");
      scale = std::max(scale, std::fabs(v));
    }
    const double eps = 1e-12 * scale;
    if (t[0] > eps) throw Error(ErrorCode::DomainViolation, "t_i must be <= 0");
    for (std::size_t r = 1; r < dim(); ++r)
      if (t[r] > t[paths_.parent[r]] + eps)
        throw Error(ErrorCode::DomainViolation, "t is not ordered along path " + to_string(paths_.paths[r]));
    if (!s) return;
    if (s->size() != dim()) throw Error(ErrorCode::DomainViolation, "s has the wrong length");
    const auto& sv = *s;
    if (std::fabs(sv[0]) > eps) throw Error(ErrorCode::DomainViolation, "s_i must be 0");
    for (std::size_t r = 1; r < dim(); ++r) {
      if (!std::isfinite(sv[r])) throw Error(ErrorCode::DomainViolation, "s has a non-finite entry");
      if (sv[r] < t[r] - eps || sv[r] > sv[paths_.parent[r]] + eps)
        throw Error(ErrorCode::DomainViolation, "s is outside S_i(t) at path " + to_string(paths_.paths[r]));
    }
  }

  bool on_boundary(const TimeVector& t, const TimeVector& s) const {
    for (std::size_t r = 1; r < dim(); ++r)
      if (s[r] != t[r] - t[0]) return false;
    return true;
  }

  /// s = t - t_i
  TimeVector boundary_s(const TimeVector& t) const {
    TimeVector s(dim());
    for (std::size_t r = 0; r < dim(); ++r) s[r] = t[r] - t[0];
    s[0] = 0.0;
    return s;
  }

  double c(const TimeVector& t, const TimeVector& s) const {
    if (on_boundary(t, s)) return 0.0;  // exact, not a rounding residue
    double acc = c_target_ * t[0];
    for (std::size_t r = 1; r < dim(); ++r) acc += drain_[r] * (t[r] - s[r]);
    return acc;
  }

  double a(double b, const TimeVector& t) const { return b - slack_ * t[0]; }

  /// Var(X); the Case1 objective is a^2 / (2 Var X).
  double var_x(const TimeVector& t) const { return frame(0.0, t).vx; }

  double case1_value(double b, const TimeVector& t) const { return case1_value(frame(b, t)); }

  double case1_value(const Frame& f) const {
    if (!(f.vx > 0.0)) throw Error(ErrorCode::DegenerateVariance, "Var(A-bar(t - t_i, t)) vanishes");
    return f.a * f.a / (2.0 * f.vx);
  }


  Frame frame(double b, const TimeVector& t) const {
    const std::size_t n = dim();
    Frame f;
    f.t = t;
    f.a = a(b, t);
    thread_local std::vector<double> base;
    base.resize(n);
    for (std::size_t r = 0; r < n; ++r) base[r] = t[r] - t[0];
    f.tt = block(t, t);
    f.tb = block(t, base);
    f.bb = block(base, base);
    f.vx = f.tt - 2.0 * f.tb + f.bb;
    return f;
  }

  Moments moments(double b, const TimeVector& t, const TimeVector& s) const { return moments(frame(b, t), s); }

  // X = sum_r Pi_r [A(t_r) - A(t_r - t_i)], W = sum_r Pi_r [A(s_r) - A(t_r - t_i)], Y = X - W.
  Moments moments(const Frame& f, const TimeVector& s) const {
    const std::size_t n = dim();
    thread_local std::vector<double> base;
    base.resize(n);
    for (std::size_t r = 0; r < n; ++r) base[r] = f.t[r] - f.t[0];
    const double ss = block(s, s), st = block(s, f.t), sb = block(s, base);
    Moments m;
    m.a = f.a;
    m.c = c(f.t, s);
    m.vx = f.vx;
    m.vw = std::max(ss - 2.0 * sb + f.bb, 0.0);
    m.cxw = st - f.tb - sb + f.bb;
    m.vy = f.tt - 2.0 * st + ss;
    m.boundary = on_boundary(f.t, s) || m.vw <= kBoundaryVariance * m.vx;
    return m;
  }

  CaseValue evaluate(double b, const TimeVector& t, const TimeVector& s) const { return evaluate(frame(b, t), s); }

  CaseValue evaluate(const Frame& f, const TimeVector& s) const {
    CaseValue out;
    out.moments = moments(f, s);
    const Moments& m = out.moments;
    if (!(m.vx > 0.0)) throw Error(ErrorCode::DegenerateVariance, "Var(A-bar(t - t_i, t)) vanishes");
    const double case1 = m.a * m.a / (2.0 * m.vx);
    if (m.boundary) {
      out.value = case1;
      out.tag = CaseTag::Boundary;
      return out;
    }
    const double k = m.k();
    if (k < m.c) {
      out.value = case1;
      out.tag = CaseTag::Case1;
      return out;
    }
    if (!(m.vy > 0.0)) throw Error(ErrorCode::DegenerateVariance, "Var(A-bar(s, t)) vanishes");
    if (m.h() > m.c) {
      const double d = m.a - m.c;
      out.value = d * d / (2.0 * m.vy);
      out.tag = CaseTag::Case2;
      return out;
    }
    const double cv = m.conditional_variance();
    if (!(cv > 0.0)) throw Error(ErrorCode::DegenerateVariance, "conditional variance vanishes");
    out.value = case1 + (k - m.c) * (k - m.c) / (2.0 * cv);
    out.tag = CaseTag::Case3;
    return out;
  }

  /// t from unconstrained parameters: t_i = -exp(x_0), t_r = t_{r+} - |t_i| exp(x_r).
  TimeVector t_from_params(const std::vector<double>& x) const {
    TimeVector t(dim());
    const double x0 = std::clamp(x[0], -40.0, 40.0);
    t[0] = -std::exp(x0);
    const double scale = -t[0];
    for (std::size_t r = 1; r < dim(); ++r) {
      // at or below the floor the gap closes exactly (closure of T_i)
      const double gap = x[r] <= kLogGapFloor ? 0.0 : scale * std::exp(std::min(x[r], 40.0));
      t[r] = t[paths_.parent[r]] - gap;
    }
    return t;
  }

  std::vector<double> params_from_t(const TimeVector& t) const {
    std::vector<double> x(dim());
    x[0] = std::log(-t[0]);
    for (std::size_t r = 1; r < dim(); ++r) {
      const double gap = (t[paths_.parent[r]] - t[r]) / (-t[0]);
      x[r] = gap > 0.0 ? std::max(std::log(gap), kLogGapFloor) : kLogGapFloor;
    }
    return x;
  }

  /// s from u in [0,1]^{|P_2|}: s_r = t_r + u_r (s_{r+} - t_r), s_i = 0.
  TimeVector s_from_unit(const TimeVector& t, const std::vector<double>& u) const {
    TimeVector s(dim());
    s[0] = 0.0;
    for (std::size_t r = 1; r < dim(); ++r) {
      const double v = std::clamp(u[r - 1], 0.0, 1.0);
      const double hi = s[paths_.parent[r]];
      s[r] = t[r] + v * (hi - t[r]);
      if (v == 1.0) s[r] = hi;
    }
    return s;
  }

  std::vector<double> boundary_unit(const TimeVector& t) const {
    std::vector<double> u(dim() - 1);
    for (std::size_t r = 1; r < dim(); ++r) {
      const double gap = t[paths_.parent[r]] - t[r];
      u[r - 1] = -t[0] / (-t[0] + gap);
    }
    return u;
  }

  static constexpr double kLogGapFloor = -27.631021115928547;  // log(1e-12)

 private:
  // Cov(sum_r Pi_r A(x_r), sum_q Pi_q A(y_q)) without the one-point terms, which cancel in every
  // combination used here (each path carries coefficients +Pi_r and -Pi_r on the same source).
  double block(const TimeVector& x, const TimeVector& y) const {
    const auto& src = paths_.source;
    const auto& wt = paths_.weight;
    const auto& sg = kernel_.sigma();
    double acc = 0.0;
    for (std::size_t r = 0; r < x.size(); ++r) {
      double row = 0.0;
      for (std::size_t q = 0; q < y.size(); ++q) row += wt[q] * sg[src[q]] * kernel_.w(src[r], src[q], y[q] - x[r]);
      acc += wt[r] * sg[src[r]] * row;
    }
    return -0.5 * acc;
  }

  Network net_;
  MfBmKernel kernel_;
  int target_;
  PathSet paths_;
  double lambda_bar_ = 0.0;
  double slack_ = 0.0;
  double c_target_ = 0.0;
  std::vector<double> drain_;  // m_{r_1} Pi_r
};

inline void require_positive_b(double b) {
  if (!std::isfinite(b) || b <= 0.0) throw Error(ErrorCode::InvalidInput, "threshold b must be > 0");
}

inline double c_fun(const RateModel& model, const TimeVector& t, const TimeVector& s) {
  model.check_domain(t, &s);
  return model.c(t, s);
}

inline double k_fun(const RateModel& model, double b, const TimeVector& t, const TimeVector& s) {
  model.check_domain(t, &s);
  const Moments m = model.moments(b, t, s);
  if (!(m.vx > 0.0)) throw Error(ErrorCode::DegenerateVariance, "Var(A-bar(t - t_i, t)) vanishes");
  return m.k();
}

inline double h_fun(const RateModel& model, double b, const TimeVector& t, const TimeVector& s) {
  model.check_domain(t, &s);
  const Moments m = model.moments(b, t, s);
  if (!(m.vy > 0.0)) throw Error(ErrorCode::DegenerateVariance, "Var(A-bar(s, t)) vanishes");
  return m.h();
}

inline CaseValue rate_case_value(const RateModel& model, double b, const TimeVector& t, const TimeVector& s) {
  require_positive_b(b);
  model.check_domain(t, &s);
  return model.evaluate(b, t, s);
}

// ---------------------------------------------------------------------------
// Two-constraint quadratic program

enum class ActiveSet { None, FirstOnly, SecondOnly, Both };

inline std::string to_string(ActiveSet a) {
  switch (a) {
    case ActiveSet::None: return "none";
    case ActiveSet::FirstOnly: return "first";
    case ActiveSet::SecondOnly: return "second";
    case ActiveSet::Both: return "both";
  }
  return "?";
}

struct QpSolution {
  double value = 0.0;
  double y = 0.0;
  double z = 0.0;
  ActiveSet active = ActiveSet::Both;
};

/// Rank-one C: (y, z) = y (1, beta) with beta = C01 / C00, objective y^2 / (2 C00).
inline QpSolution solve_qp2_rank1(const Eigen::Matrix2d& C, double ly, double lz) {
  const double beta = C(0, 1) / C(0, 0);
  const double tol = 1e-12 * (1.0 + std::fabs(ly) + std::fabs(lz));
  double lo = ly, hi = std::numeric_limits<double>::infinity();
  if (beta > 0.0) lo = std::max(lo, lz / beta);
  else if (beta < 0.0) hi = lz / beta;
  else if (lz > tol) lo = hi = std::numeric_limits<double>::quiet_NaN();
  QpSolution out;
  if (!(lo <= hi + tol)) {
    out.value = std::numeric_limits<double>::infinity();
    return out;
  }
  const double y = std::clamp(0.0, lo, std::max(lo, hi));
  out.y = y;
  out.z = beta * y;
  out.value = y * y / (2.0 * C(0, 0));
  const bool first = std::fabs(y - ly) <= tol, second = std::fabs(out.z - lz) <= tol;
  out.active = first ? (second ? ActiveSet::Both : ActiveSet::FirstOnly) : (second ? ActiveSet::SecondOnly : ActiveSet::None);
  return out;
}

/// min 1/2 v' C^{-1} v subject to y >= ly, z >= lz, by enumeration of active sets.
inline QpSolution solve_qp2(const Eigen::Matrix2d& C, double ly, double lz) {
  if (!(C(0, 0) > 0.0)) throw Error(ErrorCode::SingularCovariance, "2x2 covariance is singular");
  const double det = C(0, 0) * C(1, 1) - C(0, 1) * C(1, 0);
  if (!(det > 1e-12 * C(0, 0) * std::max(C(1, 1), 0.0))) return solve_qp2_rank1(C, ly, lz);
  const Eigen::Matrix2d P = C.inverse();
  auto objective = [&](double y, double z) {
    const Eigen::Vector2d v(y, z);
    return 0.5 * v.dot(P * v);
  };
  QpSolution best;
  best.value = std::numeric_limits<double>::infinity();
  auto consider = [&](double y, double z, ActiveSet which) {
    const double tol = 1e-12 * (1.0 + std::fabs(ly) + std::fabs(lz));
    if (y < ly - tol || z < lz - tol) return;
    const double v = objective(y, z);
    if (v < best.value) best = {v, y, z, which};
  };
  consider(0.0, 0.0, ActiveSet::None);
  consider(ly, C(1, 0) / C(0, 0) * ly, ActiveSet::FirstOnly);
  consider(C(0, 1) / C(1, 1) * lz, lz, ActiveSet::SecondOnly);
  consider(ly, lz, ActiveSet::Both);
  return best;
}

/// Independent evaluation of the rate function through the constrained quadratic form,
/// with the covariance of (A-bar(t - t_i, t), A-bar(s, t)) assembled from increment specs.
inline QpSolution qp_oracle(const RateModel& model, double b, const TimeVector& t, const TimeVector& s) {
  require_positive_b(b);
  model.check_domain(t, &s);
  const PathSet& ps = model.paths();
  const IncrementSpec xs = make_increment_spec(ps, model.boundary_s(t), t);
  const IncrementSpec ys = make_increment_spec(ps, s, t);
  Eigen::Matrix2d C;
  C(0, 0) = cov_increments(model.kernel(), xs, xs);
  C(0, 1) = C(1, 0) = cov_increments(model.kernel(), xs, ys);
  C(1, 1) = cov_increments(model.kernel(), ys, ys);
  const double a = model.a(b, t);
  return solve_qp2(C, a, a - model.c(t, s));
}

// ---------------------------------------------------------------------------
// Inf-sup optimization

struct OptimizerOptions {
  int starts = 16;           ///< outer starts on the log grid
  int refine = 3;            ///< best starts refined by the simplex method
  double tol = 1e-9;         ///< relative tolerance of inner and outer searches
  int inner_samples = 0;     ///< 0: automatic
  int max_evals = 3000;      ///< per simplex run
  int threads = 1;
};

struct OptimizerDiagnostics {
  bool case1_certified = false;   ///< inner sup at the Case1 minimizer equals the Case1 value
  double case1_minimum = 0.0;
  TimeVector case1_minimizer;     ///< t-tilde
  int outer_evaluations = 0;
  int converged_runs = 0;
  int runs = 0;
};

struct DecayResult {
  int target = 0;
  double b = 0.0;
  double exponent = 0.0;
  TimeVector t;
  TimeVector s;
  CaseTag active_case = CaseTag::Boundary;
  Tightness tightness = Tightness::LowerBoundOnly;
  OptimizerDiagnostics diagnostics;
};

struct InnerSup {
  TimeVector s;
  double value = 0.0;
  CaseTag tag = CaseTag::Boundary;
};

namespace detail {

inline double safe_value(const RateModel& model, const RateModel::Frame& f, const TimeVector& s, CaseTag* tag) {
  try {
    const CaseValue cv = model.evaluate(f, s);
    if (tag) *tag = cv.tag;
    return cv.value;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateVariance) return -std::numeric_limits<double>::infinity();
    throw;
  }
}

inline int default_inner_samples(std::size_t m) { return static_cast<int>(24 + 24 * m); }

}  // namespace detail

/// sup over s in closure(S_i(t)) of I_b^i(t, s). Ties with the value at s = t - t_i resolve to that point.
inline InnerSup inner_sup(const RateModel& model, double b, const TimeVector& t, const OptimizerOptions& o = {}) {
  InnerSup out;
  const RateModel::Frame frame = model.frame(b, t);
  out.s = model.boundary_s(t);
  out.value = model.case1_value(frame);
  out.tag = CaseTag::Boundary;
  const std::size_t m = model.dim() - 1;
  if (m == 0) return out;
  const double base = out.value;

  struct Cand {
    std::vector<double> u;
    double v;
  };
  std::vector<Cand> cands;
  auto consider = [&](std::vector<double> u) {
    const double v = detail::safe_value(model, frame, model.s_from_unit(t, u), nullptr);
    cands.push_back({std::move(u), v});
  };
  consider(std::vector<double>(m, 0.0));
  consider(std::vector<double>(m, 1.0));
  const int samples = o.inner_samples > 0 ? o.inner_samples : detail::default_inner_samples(m);
  for (int q = 1; q <= samples; ++q) consider(opt::halton(static_cast<std::uint64_t>(q), m));
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.v > y.v; });

  opt::NelderMeadOptions nm;
  nm.ftol = o.tol;
  nm.xtol = 1e-9;
  nm.initial_step = 0.05;
  nm.max_evals = o.max_evals;
  auto neg = [&](const std::vector<double>& u) {
    std::vector<double> c(u);
    for (double& v : c) v = std::clamp(v, 0.0, 1.0);
    return -detail::safe_value(model, frame, model.s_from_unit(t, c), nullptr);
  };
  std::vector<double> best_u;
  double best = base;
  const std::size_t runs = std::min<std::size_t>(cands.size(), std::max(1, o.refine));
  for (std::size_t j = 0; j < runs; ++j) {
    if (cands[j].v > best) {
      best = cands[j].v;
      best_u = cands[j].u;
    }
    const auto r = opt::nelder_mead(neg, cands[j].u, nm);
    if (-r.f > best) {
      best = -r.f;
      best_u = r.x;
      for (double& v : best_u) v = std::clamp(v, 0.0, 1.0);
    }
  }
  if (!best_u.empty() && best > base * (1.0 + 1e-12)) {
    out.s = model.s_from_unit(t, best_u);
    CaseTag tag = CaseTag::Boundary;
    out.value = detail::safe_value(model, frame, out.s, &tag);
    out.tag = tag;
  }
  return out;
}

namespace detail {

inline double isolated_t_heuristic(const RateModel& model, double b) {
  const double H = model.kernel().hurst(model.target());
  return -(b / model.slack()) * (H / (1.0 - H));
}

inline std::vector<std::vector<double>> outer_starts(const RateModel& model, double b, int count) {
  static const double gap_fractions[] = {0.0, 0.3, 1.0, 3.0};
  const double th = isolated_t_heuristic(model, b);
  std::vector<std::vector<double>> starts;
  const int n = std::max(1, count);
  for (int j = 0; j < n; ++j) {
    const double f = n == 1 ? 0.0 : -1.5 + 3.0 * j / (n - 1);
    std::vector<double> x(model.dim());
    x[0] = std::log(-th) + f;
    for (std::size_t r = 1; r < model.dim(); ++r) {
      const double g = gap_fractions[(j + r) % 4];
      x[r] = g > 0.0 ? std::log(g) : RateModel::kLogGapFloor;
    }
    starts.push_back(std::move(x));
  }
  return starts;
}

struct Run {
  std::vector<double> x;
  double f;
  bool converged;
  int evals;
};

template <class F>
std::vector<Run> multistart(F&& f, const std::vector<std::vector<double>>& starts, const OptimizerOptions& o,
                            double step) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t j = 0; j < starts.size(); ++j) {
    double v = f(starts[j]);
    if (!std::isfinite(v)) v = std::numeric_limits<double>::infinity();
    scored.push_back({v, j});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  const std::size_t runs = std::min<std::size_t>(scored.size(), std::max(1, o.refine));
  opt::NelderMeadOptions nm;
  nm.ftol = o.tol;
  nm.xtol = 1e-10;
  nm.initial_step = step;
  nm.max_evals = o.max_evals;
  return parallel_map(runs, o.threads, [&](std::size_t j) {
    const auto r = opt::nelder_mead(f, starts[scored[j].second], nm);
    return Run{r.x, r.f, r.converged, r.evals};
  });
}

inline const Run& best_run(const std::vector<Run>& runs) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < runs.size(); ++j)
    if (runs[j].f < runs[best].f) best = j;
  return runs[best];
}

}  // namespace detail

/// t-tilde: minimizer of the Case1 objective over closure(T_i).
inline TimeVector case1_minimizer(const RateModel& model, double b, const OptimizerOptions& o = {},
                                  double* value = nullptr) {
  require_positive_b(b);
  auto f = [&](const std::vector<double>& x) {
    try {
      return model.case1_value(b, model.t_from_params(x));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateVariance) return std::numeric_limits<double>::infinity();
      throw;
    }
  };
  OptimizerOptions oo = o;
  oo.tol = std::min(o.tol, 1e-13);
  const auto runs = detail::multistart(f, detail::outer_starts(model, b, o.starts), oo, 0.5);
  const auto& best = detail::best_run(runs);
  if (!std::isfinite(best.f)) throw Error(ErrorCode::OptimizerFailure, "Case1 objective is not finite at any start");
  std::vector<double> xb = best.x;
  double fb = best.f;
  // Polish t_i with the gaps fixed, then try closing every gap: the objective is often flat in
  // the gaps and the collapsed point is the one the tightness conditions can certify.
  auto polish = [&](std::vector<double> x) {
    const double x0 = x[0];
    const auto r = opt::brent_minimize(
        [&](double v) {
          x[0] = v;
          return f(x);
        },
        x0 - 1.0, x0 + 1.0, 1e-12);
    x[0] = r.x;
    return std::make_pair(x, r.f);
  };
  if (auto [x, v] = polish(xb); v <= fb) {
    xb = x;
    fb = v;
  }
  if (model.dim() > 1) {
    std::vector<double> closed(xb);
    for (std::size_t r = 1; r < closed.size(); ++r) closed[r] = RateModel::kLogGapFloor;
    if (auto [x, v] = polish(closed); v <= fb * (1.0 + 1e-12)) {
      xb = x;
      fb = v;
    }
  }
  const TimeVector t = model.t_from_params(xb);
  if (value) *value = model.case1_value(b, t);
  return t;
}

inline DecayResult decay_lower_bound(const RateModel& model, double b, const OptimizerOptions& o = {}) {
  require_positive_b(b);
  DecayResult res;
  res.target = model.target();
  res.b = b;
  auto& diag = res.diagnostics;

  double case1_min = 0.0;
  const TimeVector tt = case1_minimizer(model, b, o, &case1_min);
  diag.case1_minimum = case1_min;
  diag.case1_minimizer = tt;

  const InnerSup at_tt = inner_sup(model, b, tt, o);
  if (at_tt.value <= case1_min * (1.0 + o.tol)) {
    // sup_s I(t, s) >= Case1(t) >= Case1(t-tilde) for every t, so t-tilde attains the infimum.
    diag.case1_certified = true;
    res.exponent = at_tt.value;
    res.t = tt;
    res.s = at_tt.s;
    res.active_case = at_tt.tag;
    return res;
  }

  auto f = [&](const std::vector<double>& x) {
    try {
      return inner_sup(model, b, model.t_from_params(x), o).value;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::DegenerateVariance) return std::numeric_limits<double>::infinity();
      throw;
    }
  };
  auto starts = detail::outer_starts(model, b, o.starts);
  starts.insert(starts.begin(), model.params_from_t(tt));
  const auto runs = detail::multistart(f, starts, o, 0.3);
  int evaluations = static_cast<int>(starts.size());
  diag.runs = static_cast<int>(runs.size());
  for (const auto& r : runs) {
    diag.converged_runs += r.converged ? 1 : 0;
    evaluations += r.evals;
  }
  diag.outer_evaluations = evaluations;
  const auto& best = detail::best_run(runs);
  if (diag.converged_runs == 0 || !std::isfinite(best.f)) {
    std::ostringstream msg;
    msg << "outer search did not converge (" << runs.size() << " runs)";
    throw Error(ErrorCode::OptimizerFailure, msg.str());
  }
  res.t = model.t_from_params(best.x);
  const InnerSup in = inner_sup(model, b, res.t, o);
  res.exponent = in.value;
  res.s = in.s;
  res.active_case = in.tag;
  return res;
}

inline DecayResult decay_lower_bound(const Network& net, const MfBmKernel& kernel, int i, double b,
                                     const OptimizerOptions& o = {}) {
  return decay_lower_bound(RateModel(net, kernel, i), b, o);
}

// ---------------------------------------------------------------------------
// Tightness

struct TightnessOptions {
  int samples = 10000;    ///< low-discrepancy points in S_i(t)
  int refine = 4;
  double tol = 1e-7;
  int threads = 1;
};

struct TightnessReport {
  Tightness verdict = Tightness::LowerBoundOnly;
  std::string route;          ///< which check produced the verdict
  bool vacuous = false;       ///< S_i(t) has no point other than t - t_i
  /// Largest normalised violation found; negative means the inequality holds everywhere sampled.
  double max_violation = std::numeric_limits<double>::quiet_NaN();
  double direct_violation = std::numeric_limits<double>::quiet_NaN();     ///< Case1 check at t*
  double minimizer_violation = std::numeric_limits<double>::quiet_NaN();  ///< Case1 check at t-tilde
  double pointwise_margin = std::numeric_limits<double>::quiet_NaN();     ///< h - c or c - h / k - c at (t*, s*)
  TimeVector witness;         ///< s attaining max_violation
};

namespace detail {

struct Sweep {
  double value = -std::numeric_limits<double>::infinity();
  TimeVector s;
};

/// Maximizes g(s) over closure(S_i(t)) parameterized by u, skipping points where g is not finite.
template <class G>
Sweep maximize_over_s(const RateModel& model, const TimeVector& t, G&& g, const TightnessOptions& o) {
  const std::size_t m = model.dim() - 1;
  Sweep out;
  if (m == 0) return out;
  struct Cand {
    std::vector<double> u;
    double v;
  };
  auto eval = [&](const std::vector<double>& u) {
    const double v = g(model.s_from_unit(t, u));
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  };
  std::vector<Cand> cands;
  cands.reserve(o.samples + 2);
  cands.push_back({std::vector<double>(m, 0.0), 0.0});
  cands.push_back({std::vector<double>(m, 1.0), 0.0});
  for (int q = 1; q <= o.samples; ++q) cands.push_back({opt::halton(static_cast<std::uint64_t>(q), m), 0.0});
  const auto vals = parallel_map(cands.size(), o.threads, [&](std::size_t j) { return eval(cands[j].u); });
  for (std::size_t j = 0; j < cands.size(); ++j) cands[j].v = vals[j];
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.v > y.v; });
  opt::NelderMeadOptions nm;
  nm.initial_step = 0.02;
  nm.ftol = 1e-12;
  nm.xtol = 1e-12;
  nm.max_evals = 2000;
  const std::size_t runs = std::min<std::size_t>(cands.size(), std::max(1, o.refine));
  std::vector<double> best_u = cands[0].u;
  double best = cands[0].v;
  for (std::size_t j = 0; j < runs; ++j) {
    if (!std::isfinite(cands[j].v)) continue;
    const auto r = opt::nelder_mead(
        [&](const std::vector<double>& u) {
          std::vector<double> c(u);
          for (double& v : c) v = std::clamp(v, 0.0, 1.0);
          return -eval(c);
        },
        cands[j].u, nm);
    if (-r.f > best) {
      best = -r.f;
      best_u = r.x;
      for (double& v : best_u) v = std::clamp(v, 0.0, 1.0);
    }
  }
  out.value = best;
  out.s = model.s_from_unit(t, best_u);
  return out;
}

inline double weighted_distance(const RateModel& model, const TimeVector& s, const TimeVector& ref) {
  double d = 0.0;
  for (std::size_t r = 1; r < model.dim(); ++r) d += std::fabs(s[r] - ref[r]) * model.paths().weight[r];
  return d;
}

/// max over s != t - t_i of (k - c) / D(s, t - t_i).
inline Sweep case1_violation(const RateModel& model, double b, const TimeVector& t, const TightnessOptions& o) {
  const TimeVector s0 = model.boundary_s(t);
  const double floor = 1e-12 * std::fabs(t[0]);
  const RateModel::Frame frame = model.frame(b, t);
  return maximize_over_s(
      model, t,
      [&](const TimeVector& s) {
        const double d = weighted_distance(model, s, s0);
        if (d <= floor) return -std::numeric_limits<double>::infinity();
        const Moments m = model.moments(frame, s);
        return (m.k() - m.c) / d;
      },
      o);
}

/// Combination sum_r [A(end_r) - A(start_r)] Pi_r as point terms.
inline PointCombination increment_points(const RateModel& model, const TimeVector& start, const TimeVector& end) {
  PointCombination pc;
  const PathSet& ps = model.paths();
  for (std::size_t r = 0; r < ps.size(); ++r) {
    pc.add(ps.source[r], end[r], ps.weight[r]);
    pc.add(ps.source[r], start[r], -ps.weight[r]);
  }
  return pc;
}

}  // namespace detail

inline TightnessReport check_tightness(const RateModel& model, double b, const DecayResult& result,
                                       const TightnessOptions& o = {}) {
  require_positive_b(b);
  TightnessReport rep;
  const TimeVector& t = result.t;
  const TimeVector& ss = result.s;
  model.check_domain(t, &ss);
  if (model.dim() == 1) {
    rep.verdict = Tightness::TightThm1;
    rep.route = "vacuous";
    rep.vacuous = true;
    rep.max_violation = -std::numeric_limits<double>::infinity();
    return rep;
  }
  const MfBmKernel& kernel = model.kernel();

  if (result.active_case == CaseTag::Case1 || result.active_case == CaseTag::Boundary) {
    const auto direct = detail::case1_violation(model, b, t, o);
    rep.direct_violation = direct.value;
    const TimeVector& tt =
        result.diagnostics.case1_minimizer.empty() ? case1_minimizer(model, b) : result.diagnostics.case1_minimizer;
    const auto via = detail::case1_violation(model, b, tt, o);
    rep.minimizer_violation = via.value;
    if (via.value < -o.tol) {
      rep.verdict = Tightness::TightThm1;
      rep.route = "case1_minimizer";
      rep.max_violation = via.value;
      rep.witness = via.s;
    } else if (direct.value < -o.tol) {
      rep.verdict = Tightness::TightThm1;
      rep.route = "direct";
      rep.max_violation = direct.value;
      rep.witness = direct.s;
    } else {
      rep.route = "case1";
      rep.max_violation = std::min(direct.value, via.value);
      rep.witness = direct.value <= via.value ? direct.s : via.s;
    }
    return rep;
  }

  const Moments ms = model.moments(b, t, ss);
  const double cstar = ms.c;
  const double tol = o.tol;
  if (result.active_case == CaseTag::Case2) {
    rep.route = "case2";
    rep.pointwise_margin = ms.h() - cstar;
    // E[A-bar(s, s*) | Y* = a - c*] >= c* - c(s)
    const PointCombination ystar = detail::increment_points(model, ss, t);
    const double vy = variance(kernel, ystar);
    const double level = ms.a - cstar;
    const auto sweep = detail::maximize_over_s(
        model, t,
        [&](const TimeVector& s) {
          const double d = detail::weighted_distance(model, s, ss);
          if (d <= 1e-12 * std::fabs(t[0])) return -std::numeric_limits<double>::infinity();
          const PointCombination inc = detail::increment_points(model, s, ss);
          const double e = covariance(kernel, inc, ystar) / vy * level;
          return (cstar - model.c(t, s) - e) / d;
        },
        o);
    rep.max_violation = sweep.value;
    rep.witness = sweep.s;
    if (rep.pointwise_margin > tol && sweep.value <= tol) rep.verdict = Tightness::TightThm2;
    return rep;
  }

  rep.route = "case3";
  rep.pointwise_margin = std::min(cstar - ms.h(), ms.k() - cstar);
  const PointCombination x = detail::increment_points(model, model.boundary_s(t), t);
  const PointCombination wstar = detail::increment_points(model, model.boundary_s(t), ss);
  Eigen::Matrix2d M;
  M(0, 0) = variance(kernel, x);
  M(0, 1) = M(1, 0) = covariance(kernel, x, wstar);
  M(1, 1) = variance(kernel, wstar);
  const Eigen::Vector2d theta = M.ldlt().solve(Eigen::Vector2d(ms.a, cstar));
  const auto sweep = detail::maximize_over_s(
      model, t,
      [&](const TimeVector& s) {
        const double d = detail::weighted_distance(model, s, ss);
        if (d <= 1e-12 * std::fabs(t[0])) return -std::numeric_limits<double>::infinity();
        const PointCombination inc = detail::increment_points(model, s, ss);
        const double e = theta(0) * covariance(kernel, inc, x) + theta(1) * covariance(kernel, inc, wstar);
        return (cstar - model.c(t, s) - e) / d;
      },
      o);
  rep.max_violation = sweep.value;
  rep.witness = sweep.s;
  if (ms.h() <= cstar + tol && ms.k() >= cstar - tol && sweep.value <= tol) rep.verdict = Tightness::TightThm3;
  return rep;
}

// ---------------------------------------------------------------------------
// Fractional Brownian closed forms

struct ClosedForm {
  double exponent = 0.0;
  bool condition_holds = false;
  double condition_lhs = std::numeric_limits<double>::infinity();  ///< min upstream drain; +inf if none
  double condition_rhs = 0.0;
  double hurst = 0.5;
  double lambda_bar = 0.0;
  double sigma_bar2 = 0.0;
  double t_star = 0.0;
};

inline double require_fbm_hypotheses(const MfBmKernel& kernel) {
  const double H = kernel.hurst(0);
  for (int j = 0; j < kernel.size(); ++j) {
    if (std::fabs(kernel.hurst(j) - H) > 1e-12)
      throw Error(ErrorCode::HypothesisViolated, "all Hurst indices must be equal");
    for (int l = 0; l < kernel.size(); ++l) {
      if (kernel.eta(j, l) != 0.0) throw Error(ErrorCode::HypothesisViolated, "eta must vanish");
      if (kernel.rho(j, l) < 0.0) throw Error(ErrorCode::HypothesisViolated, "rho must be non-negative");
    }
  }
  if (H < 0.5) throw Error(ErrorCode::HypothesisViolated, "Hurst index must be >= 1/2");
  return H;
}

inline TimeVector optimal_t_structure(const RateModel& model, double b) {
  require_positive_b(b);
  const double H = require_fbm_hypotheses(model.kernel());
  const double ts = -(b / model.slack()) * (H / (1.0 - H));
  return TimeVector(model.dim(), ts);
}

/// Ratio whose supremum over alpha in (0,1]^{|P_2|} enters the transparency condition.
inline double alpha_ratio(const RateModel& model, double H, const std::vector<double>& alpha) {
  const PathSet& ps = model.paths();
  const MfBmKernel& kr = model.kernel();
  const int i = model.target();
  double num = 0.0, den = 0.0;
  for (std::size_t r = 1; r < ps.size(); ++r) {
    const int a = ps.source[r];
    double coef = kr.sigma(a) * kr.sigma(i) * kr.rho(a, i);
    for (std::size_t q = 1; q < ps.size(); ++q) {
      const int c = ps.source[q];
      coef += kr.sigma(a) * kr.sigma(c) * kr.rho(a, c) * ps.weight[q];
    }
    const double al = alpha[r - 1];
    // 1 - (1 - a)^{2H} via expm1/log1p to keep precision for small a
    num += coef * ps.weight[r] * (detail::abs_pow(al, 2 * H) - std::expm1(2 * H * std::log1p(-al)));
    den += al * ps.weight[r];
  }
  return num / den;
}

inline ClosedForm closed_form_fbm(const RateModel& model, double b) {
  require_positive_b(b);
  ClosedForm cf;
  cf.hurst = require_fbm_hypotheses(model.kernel());
  const double H = cf.hurst;
  const NodeAggregates agg = node_aggregates(model.network(), model.kernel(), model.target());
  cf.lambda_bar = agg.effective_rate;
  cf.sigma_bar2 = agg.aggregate_variance;
  const double slack = model.slack();
  cf.exponent = std::pow(b / (1.0 - H), 2.0 - 2.0 * H) * std::pow(slack / H, 2.0 * H) / (2.0 * cf.sigma_bar2);
  cf.t_star = -(b / slack) * (H / (1.0 - H));

  const PathSet& ps = model.paths();
  const std::size_t m = ps.size() - 1;
  if (m == 0) {
    cf.condition_holds = true;
    return cf;
  }
  for (std::size_t r = 1; r < ps.size(); ++r)
    cf.condition_lhs = std::min(cf.condition_lhs, model.network().net_drain(ps.source[r]));

  auto ratio = [&](const std::vector<double>& x) {
    std::vector<double> al(x);
    for (double& v : al) v = std::clamp(v, 1e-12, 1.0);
    return alpha_ratio(model, H, al);
  };
  std::vector<std::pair<double, std::vector<double>>> cands;
  auto consider = [&](std::vector<double> al) { cands.push_back({ratio(al), std::move(al)}); };
  consider(std::vector<double>(m, 1e-12));
  consider(std::vector<double>(m, 1.0));
  for (std::size_t r = 0; r < m; ++r) {
    std::vector<double> e(m, 1e-12);
    e[r] = 1.0;
    consider(e);
    e[r] = 0.5;
    consider(e);
  }
  const int samples = static_cast<int>(256 * m);
  for (int q = 1; q <= samples; ++q) consider(opt::halton(static_cast<std::uint64_t>(q), m));
  std::stable_sort(cands.begin(), cands.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  double best = cands.front().first;
  opt::NelderMeadOptions nm;
  nm.initial_step = 0.05;
  nm.ftol = 1e-14;
  nm.xtol = 1e-12;
  for (std::size_t j = 0; j < std::min<std::size_t>(4, cands.size()); ++j) {
    const auto r = opt::nelder_mead([&](const std::vector<double>& x) { return -ratio(x); }, cands[j].second, nm);
    best = std::max(best, -r.f);
  }
  cf.condition_rhs = best * slack / (2.0 * H * cf.sigma_bar2);
  cf.condition_holds = cf.condition_lhs > cf.condition_rhs;
  return cf;
}

// ---------------------------------------------------------------------------
// Most probable paths

struct MeanPath {
  double start = 0.0;
  double stop = 0.0;
  double step = 0.0;
  std::vector<double> times;
  Eigen::MatrixXd values;  ///< rows: grid points, columns: nodes
};

struct PathGrid {
  double start;
  double stop;
  double step;
};

inline MeanPath most_probable_path(const RateModel& model, double b, const DecayResult& result, const PathGrid& grid) {
  require_positive_b(b);
  if (!(grid.step > 0.0) || !std::isfinite(grid.start) || !std::isfinite(grid.stop) || grid.stop < grid.start)
    throw Error(ErrorCode::InvalidInput, "path grid must have start <= stop and step > 0");
  const TimeVector& t = result.t;
  model.check_domain(t, &result.s);
  const MfBmKernel& kernel = model.kernel();
  const PointCombination x = detail::increment_points(model, model.boundary_s(t), t);
  const double vx = variance(kernel, x);
  const double a = model.a(b, t);

  std::vector<std::pair<double, const PointCombination*>> parts;
  PointCombination wstar;
  switch (result.active_case) {
    case CaseTag::Case1:
    case CaseTag::Boundary:
      parts.push_back({a / vx, &x});
      break;
    case CaseTag::Case3: {
      wstar = detail::increment_points(model, model.boundary_s(t), result.s);
      Eigen::Matrix2d M;
      M(0, 0) = vx;
      M(0, 1) = M(1, 0) = covariance(kernel, x, wstar);
      M(1, 1) = variance(kernel, wstar);
      const double det = M.determinant();
      if (!(det > 1e-14 * M(0, 0) * M(1, 1)))
        throw Error(ErrorCode::SingularCovariance, "conditioning covariance is singular");
      const Eigen::Vector2d theta = M.inverse() * Eigen::Vector2d(a, model.c(t, result.s));
      parts.push_back({theta(0), &x});
      parts.push_back({theta(1), &wstar});
      break;
    }
    case CaseTag::Case2:
      throw Error(ErrorCode::UnsupportedCase, "most probable path is not available for Case2 optima");
  }

  MeanPath mp;
  mp.start = grid.start;
  mp.stop = grid.stop;
  mp.step = grid.step;
  const auto count = static_cast<std::size_t>(std::floor((grid.stop - grid.start) / grid.step + 1e-9)) + 1;
  mp.times.resize(count);
  for (std::size_t q = 0; q < count; ++q) mp.times[q] = grid.start + grid.step * static_cast<double>(q);
  const int k = kernel.size();
  mp.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(count), k);
  for (std::size_t q = 0; q < count; ++q)
    for (int j = 0; j < k; ++j) {
      double v = 0.0;
      for (const auto& [coef, comb] : parts)
        for (const auto& term : comb->terms) v += coef * term.coef * kernel.cov(j, term.node, mp.times[q], term.time);
      mp.values(static_cast<Eigen::Index>(q), j) = v;
    }
  return mp;
}

}  // namespace gaussnet
