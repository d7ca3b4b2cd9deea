#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gaussnet/kernel.hpp"
#include "support.hpp"

using namespace gaussnet;

namespace {

MfBmKernel pair_kernel(double h1, double h2, double rho, double eta = 0.0) {
  Eigen::MatrixXd r(2, 2), e(2, 2);
  r << 1.0, rho, rho, 1.0;
  e << 0.0, eta, -eta, 0.0;
  return MfBmKernel({h1, h2}, {1.3, 0.7}, r, e);
}

double increment_cov(const MfBmKernel& k, int i, int j, double s, double t, double s2, double t2) {
  return k.cov(i, j, t, t2) - k.cov(i, j, t, s2) - k.cov(i, j, s, t2) + k.cov(i, j, s, s2);
}

}  // namespace

TEST(Kernel, DiagonalVariance) {
  const MfBmKernel k({0.3, 0.8}, {2.0, 0.5}, Eigen::MatrixXd::Identity(2, 2));
  for (double t : {-3.0, -0.2, 0.0, 0.7, 5.0}) {
    EXPECT_NEAR(k.cov(0, 0, t, t), 4.0 * std::pow(std::fabs(t), 0.6), 1e-12);
    EXPECT_NEAR(k.cov(1, 1, t, t), 0.25 * std::pow(std::fabs(t), 1.6), 1e-12);
  }
}

TEST(Kernel, BrownianCrossCovariance) {
  // H = 1/2: correlated Brownian motions, Cov = s1 s2 rho min(t, s) for t, s > 0.
  const MfBmKernel k = pair_kernel(0.5, 0.5, 0.4);
  EXPECT_NEAR(k.cov(0, 1, 2.0, 3.0), 1.3 * 0.7 * 0.4 * 2.0, 1e-14);
  EXPECT_NEAR(k.cov(0, 1, -2.0, -3.0), 1.3 * 0.7 * 0.4 * 2.0, 1e-14);
  EXPECT_NEAR(k.cov(0, 1, -2.0, 3.0), 0.0, 1e-14);
}

TEST(Kernel, StationaryIncrements) {
  std::mt19937_64 rng(21);
  const MfBmKernel kernels[] = {pair_kernel(0.3, 0.8, 0.2, 0.1), pair_kernel(0.6, 0.6, -0.5),
                                pair_kernel(0.25, 0.75, 0.3, -0.2)};
  for (const auto& k : kernels)
    for (int trial = 0; trial < 200; ++trial) {
      const double s = randnet::uniform(rng, -3, 3), t = randnet::uniform(rng, -3, 3);
      const double s2 = randnet::uniform(rng, -3, 3), t2 = randnet::uniform(rng, -3, 3);
      const double h = randnet::uniform(rng, -5, 5);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
          const double base = increment_cov(k, i, j, s, t, s2, t2);
          const double shifted = increment_cov(k, i, j, s + h, t + h, s2 + h, t2 + h);
          EXPECT_NEAR(shifted, base, 1e-9 * std::max(1.0, std::fabs(base)));
        }
    }
}

TEST(Kernel, TimeReversibleWithoutEta) {
  std::mt19937_64 rng(22);
  const MfBmKernel k = pair_kernel(0.35, 0.9, 0.3);
  EXPECT_TRUE(k.time_reversible());
  for (int trial = 0; trial < 200; ++trial) {
    const double t = randnet::uniform(rng, -4, 4), s = randnet::uniform(rng, -4, 4);
    EXPECT_NEAR(k.cov(0, 1, t, s), k.cov(0, 1, -t, -s), 1e-12);
  }
  const MfBmKernel irreversible = pair_kernel(0.35, 0.9, 0.3, 0.2);
  EXPECT_FALSE(irreversible.time_reversible());
  EXPECT_GT(std::fabs(irreversible.cov(0, 1, 1.0, 2.5) - irreversible.cov(0, 1, -1.0, -2.5)), 1e-3);
}

TEST(Kernel, UnitSumBranchContinuity) {
  const double eps = 1e-6;
  const MfBmKernel at = pair_kernel(0.3, 0.7, 0.45);
  const MfBmKernel above = pair_kernel(0.3, 0.7 + eps, 0.45);
  const MfBmKernel below = pair_kernel(0.3, 0.7 - eps, 0.45);
  for (double t : {-2.0, -0.5, 0.3, 1.7})
    for (double s : {-1.5, -0.1, 0.4, 3.0}) {
      EXPECT_NEAR(above.cov(0, 1, t, s), at.cov(0, 1, t, s), 1e-4);
      EXPECT_NEAR(below.cov(0, 1, t, s), at.cov(0, 1, t, s), 1e-4);
    }
}

TEST(Kernel, UnitSumLogTerm) {
  // w(h) = rho |h| + eta h log|h|, with 0 log 0 = 0.
  const MfBmKernel k = pair_kernel(0.4, 0.6, 0.2, 0.1);
  EXPECT_DOUBLE_EQ(k.w(0, 1, 0.0), 0.0);
  EXPECT_NEAR(k.w(0, 1, 2.0), 0.2 * 2.0 + 0.1 * 2.0 * std::log(2.0), 1e-15);
  EXPECT_NEAR(k.w(0, 1, -2.0), 0.2 * 2.0 - 0.1 * 2.0 * std::log(2.0), 1e-15);
}

TEST(Kernel, ConstructorValidation) {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
  EXPECT_THROW(MfBmKernel({0.0, 0.5}, {1, 1}, id), Error);
  EXPECT_THROW(MfBmKernel({0.5, 1.0}, {1, 1}, id), Error);
  EXPECT_THROW(MfBmKernel({0.5, 0.5}, {1, 0}, id), Error);
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.2, 0.3, 1.0;
  EXPECT_THROW(MfBmKernel({0.5, 0.5}, {1, 1}, asym), Error);
  Eigen::MatrixXd eta(2, 2);
  eta << 0.0, 0.1, 0.1, 0.0;
  EXPECT_THROW(MfBmKernel({0.5, 0.5}, {1, 1}, id, eta), Error);
}

TEST(Kernel, BilinearInWeights) {
  std::mt19937_64 rng(23);
  const MfBmKernel k = pair_kernel(0.6, 0.8, 0.3, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    const double s = -randnet::uniform(rng, 1, 3), t = -randnet::uniform(rng, 0, 1);
    const double w = randnet::uniform(rng, 0.1, 1.0), f = randnet::uniform(rng, 0, 1);
    IncrementSpec whole{{{0, s, t, w}, {1, s + 0.3, t, 0.5}}};
    IncrementSpec split{{{0, s, t, f * w}, {0, s, t, (1 - f) * w}, {1, s + 0.3, t, 0.5}}};
    IncrementSpec other{{{1, -2.0, -0.5, 0.7}, {0, -1.0, 0.0, 1.0}}};
    EXPECT_NEAR(cov_increments(k, split, other), cov_increments(k, whole, other), 1e-12);
    EXPECT_NEAR(cov_increments(k, split, split), cov_increments(k, whole, whole), 1e-12);
  }
}

TEST(Kernel, PointCombinationAgreesWithIncrements) {
  const MfBmKernel k = pair_kernel(0.55, 0.7, 0.25);
  IncrementSpec a{{{0, -2.0, -0.5, 0.8}, {1, -1.0, 0.0, 1.0}}};
  IncrementSpec b{{{1, -3.0, -1.0, 0.4}, {0, -0.7, -0.2, 1.0}}};
  EXPECT_NEAR(covariance(k, a.points(), b.points()), cov_increments(k, a, b), 1e-12);
  EXPECT_NEAR(variance(k, a.points()), cov_increments(k, a, a), 1e-12);
}

TEST(PsdGate, RandomAdmissibleParameters) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 + trial % 4;
    const MfBmKernel kernel = randnet::random_kernel(rng, k, 0.05, 0.95, false);
    std::vector<IncrementSpec> specs;
    for (int j = 0; j < k; ++j)
      for (double t : {-3.0, -1.5, -0.4, 0.8}) specs.push_back({{{j, t - 0.5, t, 1.0}}});
    const Eigen::MatrixXd g = gram_matrix(kernel, specs);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-9 * std::max(1.0, es.eigenvalues().maxCoeff()));
  }
}

TEST(PsdGate, InadmissibleCorrelation) {
  Eigen::MatrixXd rho(3, 3);
  rho << 1, 1, 1, 1, 1, -1, 1, -1, 1;
  const MfBmKernel kernel({0.5, 0.5, 0.5}, {1, 1, 1}, rho);
  std::vector<IncrementSpec> specs{{{{0, 0.0, 1.0, 1.0}}}, {{{1, 0.0, 1.0, 1.0}}}, {{{2, 0.0, 1.0, 1.0}}}};
  try {
    gram_matrix(kernel, specs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotPSD);
  }
}

TEST(PsdGate, SmallNegativeEigenvaluesAreClipped) {
  Eigen::VectorXd ev(3);
  ev << -5e-10, 0.2, 1.0;
  EXPECT_NO_THROW(check_psd(ev));
  ev(0) = -2e-9;
  EXPECT_THROW(check_psd(ev), Error);
}
