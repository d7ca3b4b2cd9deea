#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gaussnet/montecarlo.hpp"
#include "support.hpp"

using namespace gaussnet;

namespace {

Network tandem() { return Network({3.0, 2.0}, {1.0, 0.5}, {{0, 1, 1.0}}); }

Network diamond() {
  return Network({3.0, 2.0, 2.5, 4.0}, {1.0, 0.3, 0.4, 0.2}, {{0, 1, 0.5}, {0, 2, 0.4}, {1, 3, 1.0}, {2, 3, 0.9}});
}

}  // namespace

TEST(Sampler, MeanVarianceAndIndependence) {
  const Network net({5.0, 5.0}, {1.0, 2.0}, {});
  const MfBmKernel k({0.7, 0.3}, {1.5, 0.8}, Eigen::MatrixXd::Identity(2, 2));
  const TimeGrid grid{0.25, 8};  // t = 1 at q = 4
  const GaussianSampler sampler(k, grid);
  const int reps = 10000, n = 3;
  std::vector<std::uint64_t> seeds(reps);
  for (int r = 0; r < reps; ++r) seeds[r] = replication_seed(99, r);
  const Eigen::MatrixXd z = sampler.sample_standard(seeds);
  double s0 = 0, s1 = 0, q0 = 0, q1 = 0, c01 = 0;
  for (int r = 0; r < reps; ++r) {
    const Eigen::MatrixXd a = sampler.paths(z.col(r), n, net.lambda());
    s0 += a(4, 0);
    s1 += a(4, 1);
    q0 += a(4, 0) * a(4, 0);
    q1 += a(4, 1) * a(4, 1);
    c01 += a(4, 0) * a(4, 1);
  }
  const double m0 = s0 / reps, m1 = s1 / reps;
  const double v0 = q0 / reps - m0 * m0, v1 = q1 / reps - m1 * m1;
  const double cv = c01 / reps - m0 * m1;
  // standard errors of the sample mean and variance under normality
  EXPECT_NEAR(m0, n * 1.0, 3.0 * std::sqrt(n * 2.25 / reps));
  EXPECT_NEAR(m1, n * 2.0, 3.0 * std::sqrt(n * 0.64 / reps));
  EXPECT_NEAR(v0, n * 2.25, 3.0 * n * 2.25 * std::sqrt(2.0 / reps));
  EXPECT_NEAR(v1, n * 0.64, 3.0 * n * 0.64 * std::sqrt(2.0 / reps));
  EXPECT_NEAR(cv / std::sqrt(v0 * v1), 0.0, 3.0 / std::sqrt(reps));
}

TEST(Sampler, EmpiricalCovarianceMatchesKernel) {
  Eigen::MatrixXd rho(2, 2);
  rho << 1.0, 0.6, 0.6, 1.0;
  const MfBmKernel k({0.65, 0.65}, {1.0, 1.2}, rho);
  const TimeGrid grid{0.5, 4};
  const GaussianSampler sampler(k, grid);
  const int reps = 20000;
  std::vector<std::uint64_t> seeds(reps);
  for (int r = 0; r < reps; ++r) seeds[r] = replication_seed(7, r);
  const Eigen::MatrixXd z = sampler.sample_standard(seeds);
  const std::pair<int, int> pts[] = {{1, 2}, {2, 4}, {3, 3}, {1, 4}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (auto [p, q] : pts) {
        const auto a = z.row(sampler.index(i, p)).array();
        const auto b = z.row(sampler.index(j, q)).array();
        const double emp = (a * b).mean() - a.mean() * b.mean();
        const double exact = k.cov(i, j, grid.time(p), grid.time(q));
        // Var(XY) = Var X Var Y + Cov^2 for jointly normal zero-mean X, Y
        const double se = std::sqrt((k.cov(i, i, grid.time(p), grid.time(p)) * k.cov(j, j, grid.time(q), grid.time(q)) +
                                     exact * exact) / reps);
        EXPECT_NEAR(emp, exact, 3.0 * se) << i << j << p << q;
      }
}

TEST(Sampler, Deterministic) {
  const MfBmKernel k({0.6}, {1.0}, Eigen::MatrixXd::Ones(1, 1));
  const Network net({2.0}, {1.0}, {});
  const TimeGrid grid{0.1, 20};
  EXPECT_EQ(sample_gaussian_paths(net, k, grid, 2, 5), sample_gaussian_paths(net, k, grid, 2, 5));
  EXPECT_NE(sample_gaussian_paths(net, k, grid, 2, 5), sample_gaussian_paths(net, k, grid, 2, 6));
}

TEST(Sampler, InadmissibleKernel) {
  Eigen::MatrixXd rho(3, 3);
  rho << 1, 1, 1, 1, 1, -1, 1, -1, 1;
  const MfBmKernel k({0.5, 0.5, 0.5}, {1, 1, 1}, rho);
  try {
    GaussianSampler(k, TimeGrid{0.1, 5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPSD);
  }
}

TEST(Lindley, EmptySystem) {
  const Network net = tandem();
  const TimeGrid grid{0.1, 30};
  const QueueTrajectories tr = simulate_queues(net, Eigen::MatrixXd::Zero(31, 2), 1, grid);
  EXPECT_EQ(tr.queue.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(tr.departures.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Lindley, UnderloadedFluid) {
  const Network net({2.0}, {1.0}, {});
  const TimeGrid grid{0.1, 50};
  Eigen::MatrixXd a(51, 1);
  for (int q = 0; q <= 50; ++q) a(q, 0) = 1.5 * grid.time(q);
  const QueueTrajectories tr = simulate_queues(net, a, 1, grid);
  EXPECT_EQ(tr.queue.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_NEAR(tr.departures(50, 0), 1.5 * 5.0, 1e-12);
}

TEST(Lindley, PulseDrainsLinearly) {
  const Network net({2.0}, {0.0}, {});
  const int n = 3;
  const TimeGrid grid{0.1, 40};
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(41, 1);
  for (int q = 1; q <= 40; ++q) a(q, 0) = 4.0;  // pulse W = 4 in the first step
  const QueueTrajectories tr = simulate_queues(net, a, n, grid);
  // drains at n mu per unit time; empty after W / (n mu) = 2/3
  for (int q = 1; q <= 40; ++q) EXPECT_NEAR(tr.queue(q, 0), std::max(0.0, 4.0 - n * 2.0 * grid.time(q)), 1e-12);
}

TEST(Lindley, ConservationAndNonnegativity) {
  const Network net = diamond();
  const MfBmKernel k({0.6, 0.7, 0.55, 0.8}, {1, 1.2, 0.9, 1.1}, Eigen::MatrixXd::Identity(4, 4));
  const TimeGrid grid{0.05, 200};
  for (int seed = 0; seed < 5; ++seed) {
    const Eigen::MatrixXd a = sample_gaussian_paths(net, k, grid, 2, seed);
    const QueueTrajectories tr = simulate_queues(net, a, 2, grid);
    EXPECT_GE(tr.queue.minCoeff(), 0.0);
    const Eigen::MatrixXd lhs = tr.departures;
    const Eigen::MatrixXd rhs = tr.inputs - tr.queue;
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * std::max(1.0, tr.inputs.cwiseAbs().maxCoeff()));
  }
}

TEST(Lindley, DepartureRateApproachesEffectiveRate) {
  const Network net = tandem();
  const MfBmKernel k({0.5, 0.5}, {1, 1}, Eigen::MatrixXd::Identity(2, 2));
  const TimeGrid grid{0.2, 2000};
  const Eigen::MatrixXd a = sample_gaussian_paths(net, k, grid, 1, 3);
  const QueueTrajectories tr = simulate_queues(net, a, 1, grid);
  const double horizon = grid.time(grid.steps);
  // lambda-bar_2 = 1.5; the aggregate input has sd sqrt(2 T)
  EXPECT_NEAR(tr.departures(grid.steps, 1) / horizon, 1.5, 3.0 * std::sqrt(2.0 * horizon) / horizon + 0.05);
}

TEST(Wilson, KnownValues) {
  const auto [lo, hi] = wilson_interval(10, 100);
  EXPECT_NEAR(lo, 0.05522913706068, 1e-10);
  EXPECT_NEAR(hi, 0.17436566150491, 1e-10);
  const auto [zlo, zhi] = wilson_interval(0, 50);
  EXPECT_EQ(zlo, 0.0);
  EXPECT_GT(zhi, 0.0);
}

TEST(LeastSquares, ExactLine) {
  const LinearFit fit = least_squares({1, 2, 3}, {2.5, 4.5, 6.5});
  EXPECT_NEAR(fit.slope, 2.0, 1e-14);
  EXPECT_NEAR(fit.intercept, 0.5, 1e-14);
  for (double r : fit.residuals) EXPECT_NEAR(r, 0.0, 1e-14);
  EXPECT_THROW(least_squares({1}, {1}), Error);
  EXPECT_THROW(least_squares({2, 2}, {1, 3}), Error);
}

TEST(Overflow, BrownianExponent) {
  const Network net({2.0}, {1.0}, {});
  const MfBmKernel k({0.5}, {1.0}, Eigen::MatrixXd::Ones(1, 1));
  SimConfig cfg;
  cfg.replications = 4000;
  cfg.seed = 17;
  const OverflowEstimate est = estimate_overflow(net, k, 0, cfg);
  EXPECT_NEAR(est.exponent, 2.0, 0.2);
  EXPECT_EQ(est.fitted_scales, 3);
  EXPECT_FALSE(est.caveat.empty());
  for (const auto& s : est.scales) {
    EXPECT_GE(s.p_hat, s.ci_lo);
    EXPECT_LE(s.p_hat, s.ci_hi);
    EXPECT_GE(s.p_hat, 0.0);
    EXPECT_LE(s.p_hat, 1.0);
  }
}

TEST(Overflow, IndependentOfThreadCount) {
  const Network net = tandem();
  const MfBmKernel k({0.6, 0.6}, {1, 1}, Eigen::MatrixXd::Identity(2, 2));
  SimConfig cfg;
  cfg.replications = 300;
  cfg.batch = 64;
  cfg.b = 0.5;
  const OverflowEstimate one = estimate_overflow(net, k, 1, cfg);
  cfg.threads = 3;
  const OverflowEstimate three = estimate_overflow(net, k, 1, cfg);
  ASSERT_EQ(one.scales.size(), three.scales.size());
  for (std::size_t j = 0; j < one.scales.size(); ++j) EXPECT_EQ(one.scales[j].count, three.scales[j].count);
  EXPECT_EQ(one.exponent, three.exponent);
}

TEST(Overflow, HugeThresholdHasNoCounts) {
  const Network net({2.0}, {1.0}, {});
  const MfBmKernel k({0.5}, {1.0}, Eigen::MatrixXd::Ones(1, 1));
  SimConfig cfg;
  cfg.replications = 50;
  cfg.b = 1e3;
  cfg.dt = 0.5;
  cfg.horizon = 100.0;
  try {
    estimate_overflow(net, k, 0, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllZeroCounts);
    EXPECT_TRUE(is_numerical(e.code()));
  }
}

TEST(Overflow, ConfigValidation) {
  const Network net({2.0}, {1.0}, {});
  const MfBmKernel k({0.5}, {1.0}, Eigen::MatrixXd::Ones(1, 1));
  SimConfig cfg;
  cfg.scales = {0};
  EXPECT_THROW(estimate_overflow(net, k, 0, cfg), Error);
  cfg = SimConfig{};
  cfg.dt = 1e-4;
  cfg.horizon = 10.0;
  EXPECT_THROW(estimate_overflow(net, k, 0, cfg), Error);
  cfg = SimConfig{};
  cfg.replications = 0;
  EXPECT_THROW(estimate_overflow(net, k, 0, cfg), Error);
}

TEST(InputFormula, SourceNodeIsItsOwnInput) {
  const Network net = tandem();
  const MfBmKernel k({0.6, 0.7}, {1, 1}, Eigen::MatrixXd::Identity(2, 2));
  const TimeGrid grid{0.1, 50};
  const Eigen::MatrixXd a = sample_gaussian_paths(net, k, grid, 1, 4);
  const InputFormulaCheck c = verify_input_formula(net, a, 1, grid, 0, 20);
  EXPECT_EQ(c.lhs, c.rhs);
  EXPECT_NEAR(c.lhs, a(50, 0) - a(20, 0), 1e-12);
}

TEST(InputFormula, ZeroInput) {
  const Network net = diamond();
  const TimeGrid grid{0.1, 12};
  const InputFormulaCheck c = verify_input_formula(net, Eigen::MatrixXd::Zero(13, 4), 1, grid, 3, 4);
  EXPECT_EQ(c.lhs, 0.0);
  EXPECT_EQ(c.rhs, 0.0);
}

TEST(InputFormula, RandomRealizations) {
  const MfBmKernel kt({0.7, 0.6}, {1.0, 1.5}, Eigen::MatrixXd::Identity(2, 2));
  const MfBmKernel kd({0.6, 0.6, 0.7, 0.5}, {1, 1, 1, 1}, Eigen::MatrixXd::Identity(4, 4));
  const TimeGrid grid{0.1, 50};
  std::mt19937_64 rng(5);
  for (int r = 0; r < 10; ++r) {
    const int t_index = std::uniform_int_distribution<int>(0, 49)(rng);
    const Eigen::MatrixXd a = sample_gaussian_paths(tandem(), kt, grid, 1, r);
    const auto c = verify_input_formula(tandem(), a, 1, grid, 1, t_index);
    EXPECT_NEAR(c.lhs, c.rhs, 1e-6 * std::max(1.0, std::fabs(c.lhs)));
    const Eigen::MatrixXd d = sample_gaussian_paths(diamond(), kd, grid, 2, r);
    const auto cd = verify_input_formula(diamond(), d, 2, grid, 3, t_index);
    EXPECT_NEAR(cd.lhs, cd.rhs, 1e-6 * std::max(1.0, std::fabs(cd.lhs)));
  }
}

TEST(InputFormula, CombinationCap) {
  const Network net = diamond();
  const TimeGrid grid{0.01, 400};
  try {
    verify_input_formula(net, Eigen::MatrixXd::Zero(401, 4), 1, grid, 3, 200);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooManyCombinations);
  }
}

TEST(InputFormula, AssignmentCountMatchesBruteForce) {
  const PathSet ps = make_path_set(diamond(), 3);
  for (int top : {0, 1, 3, 6}) {
    // paths in shortlex order: (3), (1,3), (2,3), (0,1,3), (0,2,3)
    double brute = 0;
    for (int a = 0; a <= top; ++a)
      for (int b = 0; b <= top; ++b)
        for (int c = 0; c <= a; ++c)
          for (int d = 0; d <= b; ++d) brute += 1;
    EXPECT_EQ(detail::count_assignments(ps, top), brute);
  }
}
