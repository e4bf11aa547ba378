#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "pipe/dynamics.hpp"
#include "pipe/rng.hpp"

using namespace riskpipe;

namespace {

State s1(double v) { return State::Constant(1, v); }

State s4(double a, double b, double c, double d) {
  State x(4);
  x << a, b, c, d;
  return x;
}

}  // namespace

TEST(EulerMaruyama, ZeroNoiseDriftStep) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, 1.0);
  EXPECT_DOUBLE_EQ(step_euler_maruyama(sys, s1(0.0), 0.01, s1(0.0))[0], 0.01);
}

TEST(EulerMaruyama, UnitNoiseDraw) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, 1.0);
  EXPECT_NEAR(step_euler_maruyama(sys, s1(0.0), 0.01, s1(1.0))[0], 0.11, 1e-15);
}

TEST(EulerMaruyama, ClosedLoopProportionalController) {
  auto [sys, safe] = builtin_system(BuiltinSystem::ClosedLoop1D);
  EXPECT_NEAR(step_euler_maruyama(sys, s1(3.0), 0.1, s1(0.0))[0], 2.85, 1e-14);
}

TEST(EulerMaruyama, NonFiniteStateNamesDimension) {
  auto [sys, safe] = builtin_system(BuiltinSystem::CartPendulum);
  State x = s4(0, 0, 0, 0);
  x[2] = std::nan("");
  try {
    step_euler_maruyama(sys, x, 0.001, State::Zero(4));
    FAIL() << "expected NonFiniteState";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteState);
    EXPECT_NE(std::string(e.what()).find("dimension 2"), std::string::npos);
  }
}

TEST(EulerMaruyama, RejectsBadShapesAndDt) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D);
  EXPECT_THROW(step_euler_maruyama(sys, s1(0.0), 0.0, s1(0.0)), Error);
  EXPECT_THROW(step_euler_maruyama(sys, s1(0.0), 0.01, State::Zero(2)), Error);
}

TEST(Trajectory, RecoveryStartInsideHasEventAtZero) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D);
  RngStream rng(1);
  const auto traj = simulate_trajectory(sys, safe, s1(2.5), 1.0, 0.01, rng);
  ASSERT_TRUE(traj.event_time.has_value());
  EXPECT_EQ(*traj.event_time, 0.0);
  EXPECT_EQ(traj.states.rows(), 1);
}

TEST(Trajectory, SafetyStartOutsideHasEventAtZero) {
  auto [sys, safe] = builtin_system(BuiltinSystem::ClosedLoop1D);
  RngStream rng(1);
  const auto traj = simulate_trajectory(sys, safe, s1(0.5), 1.0, 0.01, rng);
  ASSERT_TRUE(traj.event_time.has_value());
  EXPECT_EQ(*traj.event_time, 0.0);
}

TEST(Trajectory, TimesAreUniformAndEventIsOnGrid) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, 1.0);
  RngStream rng(7);
  const auto traj = simulate_trajectory(sys, safe, s1(-1.0), 10.0, 0.01, rng);
  ASSERT_GE(traj.times.size(), 2u);
  EXPECT_EQ(traj.times[0], 0.0);
  for (std::size_t k = 1; k < traj.times.size(); ++k) {
    EXPECT_NEAR(traj.times[k] - traj.times[k - 1], 0.01, 1e-12);
  }
  if (traj.event_time) {
    EXPECT_EQ(*traj.event_time, traj.times.back());
  }
}

TEST(Trajectory, FullHorizonStepCount) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, -5.0);
  RngStream rng(3);
  // Strong negative drift: recovery essentially never happens.
  const auto traj = simulate_trajectory(sys, safe, s1(-5.0), 1.0, 0.1, rng);
  EXPECT_FALSE(traj.event_time.has_value());
  EXPECT_EQ(traj.states.rows(), 11);
}

TEST(Trajectory, DeterministicGivenSeed) {
  auto [sys, safe] = builtin_system(BuiltinSystem::CartPendulum);
  RngStream a(42), b(42);
  const auto ta = simulate_trajectory(sys, safe, s4(0, 0.1, 0.2, 0), 0.5, 0.001, a);
  const auto tb = simulate_trajectory(sys, safe, s4(0, 0.1, 0.2, 0), 0.5, 0.001, b);
  ASSERT_EQ(ta.states.rows(), tb.states.rows());
  EXPECT_TRUE((ta.states.array() == tb.states.array()).all());
  EXPECT_EQ(ta.event_time, tb.event_time);
}

TEST(Trajectory, DriftOnlyFollowsExplicitEuler) {
  auto [sys, safe] = builtin_system(BuiltinSystem::ClosedLoop1D);
  sys.noise = State::Zero(1);
  RngStream rng(5);
  const auto traj = simulate_trajectory(sys, safe, s1(4.0), 1.0, 0.05, rng);
  double x = 4.0;
  for (Eigen::Index k = 0; k < traj.states.rows(); ++k) {
    EXPECT_EQ(traj.states(k, 0), x);
    x = x + (2.0 * x - 2.5 * x) * 0.05;
  }
}

TEST(Trajectory, RecoveryStatesBeforeEventAreOutside) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, 1.0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    RngStream rng(seed);
    const auto traj = simulate_trajectory(sys, safe, s1(0.5), 5.0, 0.01, rng);
    const Eigen::Index last = traj.event_time ? traj.states.rows() - 1 : traj.states.rows();
    for (Eigen::Index k = 0; k < last; ++k) {
      EXPECT_LT(safe.barrier(traj.states.row(k).transpose()), 0.0);
    }
    if (traj.event_time) {
      EXPECT_GE(safe.barrier(traj.states.row(last).transpose()), 0.0);
    }
  }
}

TEST(Builtin, BarrierValues) {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, 1.0);
  EXPECT_EQ(safe.barrier(s1(2.0)), 0.0);
  EXPECT_TRUE(safe.contains(s1(2.0)));
  EXPECT_EQ(safe.mode, Mode::Recovery);
  auto [psys, psafe] = builtin_system(BuiltinSystem::CartPendulum);
  EXPECT_EQ(psafe.barrier(s4(0.3, -1.0, 0.0, 2.0)), 1.0);
  EXPECT_NEAR(psafe.barrier(s4(0, 0, std::numbers::pi / 3, 0)), 0.0, 1e-15);
  EXPECT_EQ(psafe.mode, Mode::Safety);
}

TEST(Builtin, NamesAndUnknown) {
  EXPECT_EQ(parse_builtin_system("drift1d"), BuiltinSystem::DriftDiffusion1D);
  EXPECT_EQ(parse_builtin_system("ClosedLoop1D"), BuiltinSystem::ClosedLoop1D);
  try {
    builtin_system("quadrotor");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownSystem);
  }
}

TEST(Builtin, ClosedLoopSpec) {
  auto [sys, safe] = builtin_system(BuiltinSystem::ClosedLoop1D);
  EXPECT_DOUBLE_EQ(sys.closed_loop_drift(s1(2.0))[0], -1.0);
  EXPECT_EQ(sys.noise[0], 2.0);
  EXPECT_EQ(safe.barrier(s1(1.0)), 0.0);
  EXPECT_EQ(safe.mode, Mode::Safety);
}

TEST(CartPendulum, EquilibriumAtOrigin) {
  const CartPendulumParams p;
  const State f = cart_pendulum_drift(p, State::Zero(4), 0.0);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(f[i], 0.0);
}

TEST(CartPendulum, MatchesClosedFormAccelerations) {
  // Independent oracle: eliminate the coupled accelerations by hand.
  const CartPendulumParams p;
  RngStream rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const double v = rng.uniform(-2, 2), th = rng.uniform(-1, 1), om = rng.uniform(-2, 2);
    const double u = rng.uniform(-5, 5);
    const double m = p.pole_mass, M = p.cart_mass, l = p.pole_length, g = p.gravity;
    const double c = std::cos(th), s = std::sin(th);
    // (M+m) a + m l c alpha = m l om^2 s - bx v + u
    // m l c a + m l^2 alpha = m g l s - btheta l om
    const double r1 = m * l * om * om * s - p.cart_friction * v + u;
    const double r2 = m * g * l * s - p.pole_friction * l * om;
    const double det = (M + m) * m * l * l - (m * l * c) * (m * l * c);
    const double a = (r1 * m * l * l - m * l * c * r2) / det;
    const double alpha = ((M + m) * r2 - m * l * c * r1) / det;
    const State f = cart_pendulum_drift(p, s4(0.7, v, th, om), u);
    EXPECT_NEAR(f[0], v, 1e-12);
    EXPECT_NEAR(f[1], a, 1e-10);
    EXPECT_NEAR(f[2], om, 1e-12);
    EXPECT_NEAR(f[3], alpha, 1e-10);
  }
}

TEST(CartPendulum, UncontrolledDriftIsOdd) {
  const CartPendulumParams p;
  RngStream rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const State x = s4(rng.uniform(-1, 1), rng.uniform(-2, 2), rng.uniform(-1, 1), rng.uniform(-3, 3));
    const State fp = cart_pendulum_drift(p, x, 0.0);
    const State fm = cart_pendulum_drift(p, -x, 0.0);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(fp[i], -fm[i], 1e-12);
  }
}

TEST(CartPendulum, NoiseOnlyOnVelocities) {
  auto [sys, safe] = builtin_system(BuiltinSystem::CartPendulum);
  EXPECT_EQ(sys.noise[0], 0.0);
  EXPECT_GT(sys.noise[1], 0.0);
  EXPECT_EQ(sys.noise[2], 0.0);
  EXPECT_GT(sys.noise[3], 0.0);
  EXPECT_NO_THROW(sys.validate());
}

TEST(Rng, SplitDoesNotAdvanceStream) {
  RngStream a(9), b(9);
  (void)a.split(1);
  EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
}
