#include <cmath>
#include <numbers>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

#include "pipe/physics.hpp"
#include "pipe/rng.hpp"

using namespace riskpipe;

namespace {

State s1(double v) { return State::Constant(1, v); }

PdeSpec drift_spec(double lambda) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, lambda);
  return make_pde_spec(sys, safe, {-10.0}, {2.0}, 0.0, 10.0);
}

NetJet jet1(double value, double fx, double ft, double fxx) {
  NetJet j;
  j.value = value;
  j.input_grad = Eigen::Vector2d(fx, ft);
  j.input_hess_diag = Eigen::VectorXd::Constant(1, fxx);
  return j;
}

double quad_density(double x, double t, double lambda) {
  auto f = [&](double s) { return s > 0.0 ? oracle_recovery_density(x, s, lambda) : 0.0; };
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, t, 20, 1e-13);
}

}  // namespace

TEST(Residual, ConstantJetIsZero) {
  const auto spec = drift_spec(1.0);
  EXPECT_EQ(residual(jet1(0.7, 0, 0, 0), s1(-3.0), 2.0, spec), 0.0);
  auto [sys, safe] = builtin_system(BuiltinSystem::CartPendulum);
  const auto pspec = make_pde_spec(sys, safe, {-1, -1, -1, -1}, {1, 1, 1, 1}, 0.0, 1.0);
  NetJet j;
  j.value = 0.4;
  j.input_grad = Eigen::VectorXd::Zero(5);
  j.input_hess_diag = Eigen::VectorXd::Zero(4);
  State x(4);
  x << 0.1, 0.2, 0.3, 0.4;
  EXPECT_EQ(residual(j, x, 0.5, pspec), 0.0);
}

TEST(Residual, DefiningIdentityOfRecoveryPde) {
  const double lambda = 1.3;
  const auto spec = drift_spec(lambda);
  const double fx = 0.21, fxx = -0.4;
  EXPECT_NEAR(residual(jet1(0.5, fx, lambda * fx + 0.5 * fxx, fxx), s1(-1.0), 1.0, spec), 0.0, 1e-15);
}

TEST(Residual, LinearInJetFields) {
  const auto spec = drift_spec(0.8);
  RngStream rng(1);
  for (int i = 0; i < 20; ++i) {
    const auto a = jet1(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    const auto b = jet1(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    NetJet sum;
    sum.value = a.value + b.value;
    sum.input_grad = a.input_grad + 2.0 * b.input_grad;
    sum.input_hess_diag = a.input_hess_diag + 2.0 * b.input_hess_diag;
    EXPECT_NEAR(residual(sum, s1(0.0), 1.0, spec),
                residual(a, s1(0.0), 1.0, spec) + 2.0 * residual(b, s1(0.0), 1.0, spec), 1e-12);
  }
}

TEST(Residual, ShapeMismatch) {
  const auto spec = drift_spec(1.0);
  NetJet j;
  j.input_grad = Eigen::VectorXd::Zero(1);
  j.input_hess_diag = Eigen::VectorXd::Zero(1);
  EXPECT_THROW(residual(j, s1(0.0), 1.0, spec), Error);
}

TEST(Residual, ClosedLoopUsesControlledDrift) {
  auto [sys, safe] = builtin_system(BuiltinSystem::ClosedLoop1D);
  const auto spec = make_pde_spec(sys, safe, {1.0}, {10.0}, 0.0, 10.0);
  // F_T = -0.5 x F_x + 2 F_xx
  const double x = 3.0, fx = 0.1, fxx = 0.05;
  EXPECT_NEAR(residual(jet1(0.5, fx, -0.5 * x * fx + 2.0 * fxx, fxx), s1(x), 1.0, spec), 0.0, 1e-15);
}

TEST(Residual, OracleFiniteDifferenceJetIsNearlyZero) {
  const double lambda = 1.0;
  const auto spec = drift_spec(lambda);
  const double h = 1e-3;
  double worst = 0.0;
  for (double x = -10.0; x <= -2.0; x += 0.5) {
    for (double t = 0.5; t <= 10.0; t += 0.5) {
      auto F = [&](double xx, double tt) { return oracle_recovery_probability(xx, tt, lambda); };
      const auto j = jet1(F(x, t), (F(x + h, t) - F(x - h, t)) / (2 * h),
                          (F(x, t + h) - F(x, t - h)) / (2 * h),
                          (F(x + h, t) - 2 * F(x, t) + F(x - h, t)) / (h * h));
      worst = std::max(worst, std::abs(residual(j, s1(x), t, spec)));
    }
  }
  EXPECT_LE(worst, 1e-3);
}

TEST(Conditions, InitialIndicatorIsClosedSet) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D);
  EXPECT_EQ(initial_condition(s1(3.0), safe), 1.0);
  EXPECT_EQ(initial_condition(s1(1.0), safe), 0.0);
  EXPECT_EQ(initial_condition(s1(2.0), safe), 1.0);
}

TEST(Conditions, BoundaryValues) {
  EXPECT_EQ(boundary_condition(Mode::Recovery), 1.0);
  EXPECT_EQ(boundary_condition(Mode::Safety), 0.0);
}

TEST(Oracle, ZeroHorizon) {
  EXPECT_EQ(oracle_recovery_probability(-1.0, 0.0, 1.0), 0.0);
  EXPECT_EQ(oracle_recovery_probability(1.9, 0.0, -2.0), 0.0);
}

TEST(Oracle, ApproachesOneAtBoundary) {
  EXPECT_GT(oracle_recovery_probability(2.0 - 1e-9, 1.0, 1.0), 1.0 - 1e-6);
  EXPECT_GT(oracle_recovery_probability(2.0 - 1e-9, 0.1, -1.0), 1.0 - 1e-6);
}

TEST(Oracle, DomainError) {
  try {
    oracle_recovery_probability(2.0, 1.0, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DomainError);
  }
  EXPECT_THROW(oracle_recovery_density(-1.0, 0.0, 1.0), Error);
}

TEST(Oracle, ZeroDriftReflectionPrinciple) {
  // lambda = 0: P = 2 * (1 - Phi(b / sqrt(T))).
  for (double b : {0.3, 1.0, 2.5}) {
    for (double t : {0.5, 2.0, 7.0}) {
      const double ref = std::erfc(b / std::sqrt(2.0 * t));
      EXPECT_NEAR(oracle_recovery_probability(2.0 - b, t, 0.0), ref, 1e-14);
    }
  }
}

TEST(Oracle, NormalEventRegionMean) {
  double sum = 0.0;
  int n = 0;
  for (double x = -6.0; x <= -2.0 + 1e-9; x += 0.2) {
    for (double t = 4.0; t <= 6.0 + 1e-9; t += 0.1) {
      sum += oracle_recovery_probability(x, t, 1.0);
      ++n;
    }
  }
  EXPECT_NEAR(sum / n, 0.412, 0.02);
}

TEST(Oracle, RareEventRegionMean) {
  double sum = 0.0;
  int n = 0;
  for (double x = -2.0; x <= 0.0 + 1e-9; x += 0.2) {
    for (double t = 8.0; t <= 10.0 + 1e-9; t += 0.1) {
      sum += oracle_recovery_probability(x, t, 1.0);
      ++n;
    }
  }
  EXPECT_NEAR(sum / n, 0.985, 0.01);
}

TEST(Oracle, MonotoneInHorizonAndState) {
  for (double lambda : {0.0, 0.5, 1.0, 2.0}) {
    for (double x = -8.0; x < 2.0; x += 0.7) {
      double prev = 0.0;
      for (double t = 0.0; t <= 10.0; t += 0.25) {
        const double v = oracle_recovery_probability(x, t, lambda);
        EXPECT_GE(v, prev - 1e-15);
        EXPECT_GE(v, oracle_recovery_probability(x - 0.3, t, lambda) - 1e-15);
        prev = v;
      }
    }
  }
}

TEST(Oracle, LargeDriftDoesNotOverflow) {
  const double v = oracle_recovery_probability(-50.0, 3.0, 20.0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
  EXPECT_TRUE(std::isfinite(oracle_recovery_gradient(-50.0, 3.0, 20.0)));
}

TEST(Oracle, GradientMatchesFiniteDifferences) {
  RngStream rng(2);
  for (int i = 0; i < 50; ++i) {
    const double x = rng.uniform(-8.0, 1.5), t = rng.uniform(0.2, 10.0), lambda = rng.uniform(0.0, 2.0);
    const double h = 1e-5;
    const double fd = (oracle_recovery_probability(x + h, t, lambda) -
                       oracle_recovery_probability(x - h, t, lambda)) / (2 * h);
    EXPECT_NEAR(oracle_recovery_gradient(x, t, lambda), fd, 1e-8);
  }
}

TEST(Density, PrintedFormulaSubstitution) {
  // lambda = 0, b = 1, T = 1
  EXPECT_NEAR(oracle_recovery_density(1.0, 1.0, 0.0), std::exp(-0.5) / std::sqrt(2 * std::numbers::pi),
              1e-15);
}

TEST(Density, NonNegative) {
  RngStream rng(3);
  for (int i = 0; i < 200; ++i) {
    EXPECT_GE(oracle_recovery_density(rng.uniform(-10, 1.99), rng.uniform(1e-3, 10), rng.uniform(-2, 2)),
              0.0);
  }
}

TEST(Density, IntegratesToProbability) {
  RngStream rng(4);
  for (int i = 0; i < 50; ++i) {
    const double x = rng.uniform(-8.0, 1.5), t = rng.uniform(0.1, 10.0), lambda = rng.uniform(0.0, 2.0);
    EXPECT_NEAR(quad_density(x, t, lambda), oracle_recovery_probability(x, t, lambda), 1e-6);
  }
}

TEST(NormCdf, TailAccuracy) {
  EXPECT_NEAR(norm_cdf(-10.0) / 7.619853024160526066e-24, 1.0, 1e-12);
  EXPECT_NEAR(log_norm_cdf(-35.0), -616.97510126192251347, 1e-9);
  EXPECT_NEAR(log_norm_cdf(-40.0), -804.60844201375378817, 1e-9);
  // Continuity of the asymptotic branch.
  EXPECT_NEAR(log_norm_cdf(-30.0 + 1e-9), log_norm_cdf(-30.0 - 1e-9), 1e-6);
}
