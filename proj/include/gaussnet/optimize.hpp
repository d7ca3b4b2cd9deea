#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace gaussnet::opt {

struct NelderMeadOptions {
  int max_evals = 4000;
  double ftol = 1e-12;         // relative spread of simplex values
  double xtol = 1e-10;         // simplex diameter
  double initial_step = 0.5;
  int restarts = 1;            // fresh simplexes around the incumbent after convergence
};

struct NelderMeadResult {
  std::vector<double> x;
  double f = std::numeric_limits<double>::infinity();
  int evals = 0;
  bool converged = false;
};

/// Derivative-free minimization. Non-finite values are treated as +inf.
template <class F>
NelderMeadResult nelder_mead(F&& f, std::vector<double> x0, const NelderMeadOptions& o = {}) {
  const std::size_t n = x0.size();
  NelderMeadResult res;
  auto eval = [&](const std::vector<double>& x) {
    ++res.evals;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  if (n == 0) {
    res.x = x0;
    res.f = eval(x0);
    res.converged = std::isfinite(res.f);
    return res;
  }

  std::vector<std::vector<double>> pts(n + 1, x0);
  std::vector<double> vals(n + 1);
  std::vector<double> centroid(n), xr(n), xe(n), xc(n);

  auto build = [&](const std::vector<double>& base, double step) {
    pts[0] = base;
    vals[0] = eval(base);
    for (std::size_t j = 0; j < n; ++j) {
      pts[j + 1] = base;
      pts[j + 1][j] += step;
      vals[j + 1] = eval(pts[j + 1]);
    }
  };

  build(x0, o.initial_step);
  int restarts_left = o.restarts;
  std::vector<std::size_t> order(n + 1);
  while (res.evals < o.max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    {
      std::vector<std::vector<double>> p2(n + 1);
      std::vector<double> v2(n + 1);
      for (std::size_t j = 0; j <= n; ++j) {
        p2[j] = std::move(pts[order[j]]);
        v2[j] = vals[order[j]];
      }
      pts = std::move(p2);
      vals = std::move(v2);
    }
    double diam = 0.0;
    for (std::size_t j = 1; j <= n; ++j)
      for (std::size_t d = 0; d < n; ++d) diam = std::max(diam, std::fabs(pts[j][d] - pts[0][d]));
    const double spread = vals[n] - vals[0];
    const bool flat = std::isfinite(vals[n]) && spread <= o.ftol * (std::fabs(vals[0]) + 1e-300);
    if ((flat && diam <= std::max(o.xtol, 1e-3)) || diam <= o.xtol) {
      if (restarts_left-- > 0) {
        const std::vector<double> best = pts[0];
        build(best, std::max(10.0 * diam, 1e-3 * o.initial_step));
        continue;
      }
      res.converged = true;
      break;
    }

    std::fill(centroid.begin(), centroid.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t d = 0; d < n; ++d) centroid[d] += pts[j][d] / static_cast<double>(n);
    for (std::size_t d = 0; d < n; ++d) xr[d] = centroid[d] + (centroid[d] - pts[n][d]);
    const double fr = eval(xr);
    if (fr < vals[0]) {
      for (std::size_t d = 0; d < n; ++d) xe[d] = centroid[d] + 2.0 * (centroid[d] - pts[n][d]);
      const double fe = eval(xe);
      if (fe < fr) {
        pts[n] = xe;
        vals[n] = fe;
      } else {
        pts[n] = xr;
        vals[n] = fr;
      }
    } else if (fr < vals[n - 1]) {
      pts[n] = xr;
      vals[n] = fr;
    } else {
      const bool outside = fr < vals[n];
      for (std::size_t d = 0; d < n; ++d)
        xc[d] = outside ? centroid[d] + 0.5 * (xr[d] - centroid[d]) : centroid[d] + 0.5 * (pts[n][d] - centroid[d]);
      const double fc = eval(xc);
      if (fc < (outside ? fr : vals[n])) {
        pts[n] = xc;
        vals[n] = fc;
      } else {
        for (std::size_t j = 1; j <= n; ++j) {
          for (std::size_t d = 0; d < n; ++d) pts[j][d] = pts[0][d] + 0.5 * (pts[j][d] - pts[0][d]);
          vals[j] = eval(pts[j]);
        }
      }
    }
  }
  const auto best = std::min_element(vals.begin(), vals.end()) - vals.begin();
  res.x = pts[best];
  res.f = vals[best];
  if (!std::isfinite(res.f)) res.converged = false;
  return res;
}

struct ScalarMin {
  double x;
  double f;
};

/// Golden-section search for a unimodal function on [lo, hi].
template <class F>
ScalarMin golden_section(F&& f, double lo, double hi, double tol = 1e-12, int max_iter = 300) {
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = lo, b = hi;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > tol * (std::fabs(a) + std::fabs(b) + tol); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return fc < fd ? ScalarMin{c, fc} : ScalarMin{d, fd};
}

/// Brent's method (parabolic interpolation with golden-section fallback) on [lo, hi].
template <class F>
ScalarMin brent_minimize(F&& f, double lo, double hi, double tol = 1e-12, int max_iter = 200) {
  const double cg = 0.3819660112501051;
  double a = lo, b = hi;
  double x = a + cg * (b - a), w = x, v = x;
  double fx = f(x), fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    const double xm = 0.5 * (a + b);
    const double tol1 = tol * std::fabs(x) + 1e-15, tol2 = 2.0 * tol1;
    if (std::fabs(x - xm) <= tol2 - 0.5 * (b - a)) break;
    bool golden = true;
    if (std::fabs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::fabs(q);
      const double etemp = e;
      e = d;
      if (!(std::fabs(p) >= std::fabs(0.5 * q * etemp) || p <= q * (a - x) || p >= q * (b - x))) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = xm - x >= 0 ? tol1 : -tol1;
        golden = false;
      }
    }
    if (golden) {
      e = (x >= xm) ? a - x : b - x;
      d = cg * e;
    }
    const double u = std::fabs(d) >= tol1 ? x + d : x + (d >= 0 ? tol1 : -tol1);
    const double fu = f(u);
    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  return {x, fx};
}

/// Radical inverse in a prime base.
inline double radical_inverse(std::uint64_t index, unsigned base) {
  double inv = 1.0 / base, f = inv, out = 0.0;
  while (index > 0) {
    out += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return out;
}

inline unsigned nth_prime(std::size_t n) {
  static const unsigned primes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
                                    59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131};
  if (n < std::size(primes)) return primes[n];
  unsigned p = primes[std::size(primes) - 1];
  std::size_t count = std::size(primes) - 1;
  while (count < n) {
    p += 2;
    bool prime = true;
    for (unsigned q = 3; q * q <= p; q += 2)
      if (p % q == 0) { prime = false; break; }
    if (prime) ++count;
  }
  return p;
}

/// Point number `index` (starting at 1) of the Halton sequence in [0,1)^dim.
inline std::vector<double> halton(std::uint64_t index, std::size_t dim) {
  std::vector<double> u(dim);
  for (std::size_t d = 0; d < dim; ++d) u[d] = radical_inverse(index, nth_prime(d));
  return u;
}

}  // namespace gaussnet::opt
