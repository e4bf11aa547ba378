#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "pipe/error.hpp"
#include "pipe/rng.hpp"

namespace riskpipe {

inline constexpr int kMaxStateDim = 8;

// Small state vectors live on the stack; simulation runs billions of steps.
using State = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxStateDim, 1>;

enum class Mode { Safety, Recovery };

inline std::string_view to_string(Mode mode) {
  return mode == Mode::Safety ? "safety" : "recovery";
}

inline Mode parse_mode(std::string_view text) {
  if (text == "safety") return Mode::Safety;
  if (text == "recovery") return Mode::Recovery;
  throw Error(ErrorKind::InvalidArgument, "unknown mode '" + std::string(text) + "'");
}

// dx = f(x, u(x); lambda) dt + diag(noise) dw
struct SdeSystem {
  using DriftFn = std::function<State(const State& x, const State& u, double lambda)>;
  using PolicyFn = std::function<State(const State& x)>;

  std::string name;
  int state_dim = 1;
  DriftFn drift;
  PolicyFn control_policy;  // empty means no control channel
  State noise;              // per-dimension sigma_i >= 0
  double lambda = 0.0;

  State control(const State& x) const {
    if (control_policy) return control_policy(x);
    return State::Zero(0);
  }

  State closed_loop_drift(const State& x, double lam) const { return drift(x, control(x), lam); }
  State closed_loop_drift(const State& x) const { return closed_loop_drift(x, lambda); }

  SdeSystem with_lambda(double lam) const {
    SdeSystem copy = *this;
    copy.lambda = lam;
    return copy;
  }

  void validate() const {
    require(state_dim >= 1 && state_dim <= kMaxStateDim, ErrorKind::BadShape,
            "state_dim must be in [1, " + std::to_string(kMaxStateDim) + "]");
    require(noise.size() == state_dim, ErrorKind::BadShape, "noise length must equal state_dim");
    for (int i = 0; i < state_dim; ++i) {
      require(std::isfinite(noise[i]) && noise[i] >= 0.0, ErrorKind::InvalidArgument,
              "noise magnitudes must be finite and nonnegative");
    }
    require(static_cast<bool>(drift), ErrorKind::InvalidArgument, "drift is not set");
  }
};

// C = { x | barrier(x) >= 0 }
struct SafeSet {
  std::function<double(const State&)> barrier;
  Mode mode = Mode::Recovery;

  bool contains(const State& x) const { return barrier(x) >= 0.0; }

  // Recovery: entering C. Safety: leaving C.
  bool is_event(double phi) const { return mode == Mode::Recovery ? phi >= 0.0 : phi < 0.0; }
  bool is_event(const State& x) const { return is_event(barrier(x)); }
};

struct Trajectory {
  std::vector<double> times;
  Eigen::MatrixXd states;  // (recorded steps + 1) x state_dim
  std::optional<double> event_time;
};

// How crossings of the safe-set boundary are detected between grid times.
enum class BoundaryMonitor {
  Discrete,        // barrier evaluated at step endpoints only
  BrownianBridge,  // additionally tests for an excursion inside each step
};

inline void check_finite(const State& v, std::string_view what) {
  for (int i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw Error(ErrorKind::NonFiniteState,
                  std::string(what) + " is non-finite in dimension " + std::to_string(i));
    }
  }
}

inline State step_euler_maruyama(const SdeSystem& system, const State& x, double dt,
                                 const State& noise_draws, double lambda) {
  require(dt > 0.0, ErrorKind::InvalidArgument, "dt must be positive");
  require(x.size() == system.state_dim && noise_draws.size() == system.state_dim,
          ErrorKind::BadShape, "state/noise length must equal state_dim");
  check_finite(x, "state");
  const State f = system.closed_loop_drift(x, lambda);
  require(f.size() == system.state_dim, ErrorKind::BadShape, "drift returned wrong dimension");
  check_finite(f, "drift");
  const double sqrt_dt = std::sqrt(dt);
  State next(system.state_dim);
  for (int i = 0; i < system.state_dim; ++i) {
    next[i] = x[i] + f[i] * dt + system.noise[i] * sqrt_dt * noise_draws[i];
  }
  check_finite(next, "state after step");
  return next;
}

inline State step_euler_maruyama(const SdeSystem& system, const State& x, double dt,
                                 const State& noise_draws) {
  return step_euler_maruyama(system, x, dt, noise_draws, system.lambda);
}

inline long step_count(double horizon, double dt) {
  require(dt > 0.0 && horizon >= 0.0, ErrorKind::InvalidArgument, "need horizon >= 0, dt > 0");
  const double ratio = horizon / dt;
  // Tolerate representation error, e.g. 1.0 / 0.1 = 10.000000000000002.
  return static_cast<long>(std::ceil(ratio * (1.0 - 1e-12)));
}

namespace detail {

inline State barrier_gradient(const SafeSet& safe, const State& x) {
  State g(x.size());
  State probe = x;
  for (int i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = safe.barrier(probe);
    probe[i] = x[i] - h;
    const double down = safe.barrier(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Probability that a Brownian bridge of the linearized barrier crosses zero
// between two non-event endpoints.
inline double bridge_crossing_probability(const SdeSystem& system, const SafeSet& safe,
                                          const State& x, double phi0, double phi1, double dt) {
  const State g = barrier_gradient(safe, x);
  double variance = 0.0;
  for (int i = 0; i < x.size(); ++i) {
    const double s = system.noise[i] * g[i];
    variance += s * s;
  }
  if (variance <= 0.0) return 0.0;
  return std::exp(-2.0 * phi0 * phi1 / (variance * dt));
}

// Core stepping loop. Returns the index of the first event step in [0, steps],
// or nullopt. The observer sees (step index, state) for every visited state.
template <class Observer>
std::optional<long> run_until_event(const SdeSystem& system, const SafeSet& safe, const State& x0,
                                    long steps, double dt, RngStream& stream,
                                    BoundaryMonitor monitor, double lambda, Observer&& observe) {
  State x = x0;
  observe(0L, x);
  double phi = safe.barrier(x);
  if (safe.is_event(phi)) return 0L;

  std::optional<RngStream> bridge;
  if (monitor == BoundaryMonitor::BrownianBridge) bridge.emplace(stream.split(1));

  State draws(system.state_dim);
  for (long k = 1; k <= steps; ++k) {
    for (int i = 0; i < system.state_dim; ++i) draws[i] = stream.normal();
    State next = step_euler_maruyama(system, x, dt, draws, lambda);
    const double phi_next = safe.barrier(next);
    observe(k, next);
    if (safe.is_event(phi_next)) return k;
    if (bridge) {
      const double u = bridge->uniform01();
      if (u < bridge_crossing_probability(system, safe, x, phi, phi_next, dt)) return k;
    }
    x = next;
    phi = phi_next;
  }
  return std::nullopt;
}

}  // namespace detail

inline Trajectory simulate_trajectory(const SdeSystem& system, const SafeSet& safe,
                                      const State& x0, double horizon, double dt,
                                      RngStream& stream,
                                      BoundaryMonitor monitor = BoundaryMonitor::Discrete) {
  require(dt > 0.0 && horizon >= dt, ErrorKind::InvalidArgument, "need horizon >= dt > 0");
  require(x0.size() == system.state_dim, ErrorKind::BadShape, "x0 length must equal state_dim");
  const long steps = step_count(horizon, dt);
  std::vector<State> visited;
  visited.reserve(static_cast<std::size_t>(steps) + 1);
  const auto event = detail::run_until_event(system, safe, x0, steps, dt, stream, monitor,
                                             system.lambda,
                                             [&](long, const State& x) { visited.push_back(x); });
  Trajectory out;
  out.states.resize(static_cast<Eigen::Index>(visited.size()), system.state_dim);
  out.times.resize(visited.size());
  for (std::size_t k = 0; k < visited.size(); ++k) {
    out.times[k] = static_cast<double>(k) * dt;
    out.states.row(static_cast<Eigen::Index>(k)) = visited[k].transpose();
  }
  if (event) out.event_time = out.times[static_cast<std::size_t>(*event)];
  return out;
}

enum class BuiltinSystem { DriftDiffusion1D, ClosedLoop1D, CartPendulum };

inline BuiltinSystem parse_builtin_system(std::string_view name) {
  if (name == "drift1d" || name == "DriftDiffusion1D") return BuiltinSystem::DriftDiffusion1D;
  if (name == "closedloop1d" || name == "ClosedLoop1D") return BuiltinSystem::ClosedLoop1D;
  if (name == "cartpendulum" || name == "CartPendulum") return BuiltinSystem::CartPendulum;
  throw Error(ErrorKind::UnknownSystem, "unknown system '" + std::string(name) + "'");
}

inline std::string_view to_string(BuiltinSystem s) {
  switch (s) {
    case BuiltinSystem::DriftDiffusion1D: return "drift1d";
    case BuiltinSystem::ClosedLoop1D: return "closedloop1d";
    case BuiltinSystem::CartPendulum: return "cartpendulum";
  }
  return "unknown";
}

struct CartPendulumParams {
  double cart_mass = 1.0;      // M
  double pole_mass = 0.1;      // m
  double gravity = 9.8;
  double pole_length = 0.5;    // l
  double cart_friction = 0.05; // b_x
  double pole_friction = 0.1;  // b_theta
  double sigma = 1.0;          // noise magnitude on velocity and angular velocity
  std::array<double, 4> gain{0.0, -0.9148, -22.1636, -14.3992};
  double angle_limit = std::numbers::pi / 3.0;
};

// State ordering: [position, velocity, angle, angular velocity].
inline State cart_pendulum_drift(const CartPendulumParams& p, const State& x, double u) {
  const double v = x[1];
  const double theta = x[2];
  const double omega = x[3];
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double ml = p.pole_mass * p.pole_length;

  Eigen::Matrix4d mass = Eigen::Matrix4d::Zero();
  mass(0, 0) = 1.0;
  mass(1, 1) = p.pole_mass + p.cart_mass;
  mass(1, 3) = ml * c;
  mass(2, 2) = 1.0;
  mass(3, 1) = ml * c;
  mass(3, 3) = ml * p.pole_length;

  Eigen::Vector4d rhs;
  rhs << v, ml * omega * omega * s - p.cart_friction * v + u, omega,
      ml * p.gravity * s - p.pole_friction * p.pole_length * omega;
  // Closed-form 4x4 inverse; noticeably cheaper than a pivoted LU per step.
  const Eigen::Vector4d accel = mass.inverse() * rhs;
  State out(4);
  for (int i = 0; i < 4; ++i) out[i] = accel[i];
  return out;
}

inline std::pair<SdeSystem, SafeSet> builtin_system(BuiltinSystem which, double lambda = 1.0,
                                                    const CartPendulumParams& pendulum = {}) {
  SdeSystem sys;
  SafeSet safe;
  switch (which) {
    case BuiltinSystem::DriftDiffusion1D: {
      sys.name = "drift1d";
      sys.state_dim = 1;
      sys.drift = [](const State&, const State&, double lam) { return State::Constant(1, lam); };
      sys.noise = State::Constant(1, 1.0);
      sys.lambda = lambda;
      safe.barrier = [](const State& x) { return x[0] - 2.0; };
      safe.mode = Mode::Recovery;
      break;
    }
    case BuiltinSystem::ClosedLoop1D: {
      // f(x) = 2x, g(x) = 1, u = -2.5x
      sys.name = "closedloop1d";
      sys.state_dim = 1;
      sys.drift = [](const State& x, const State& u, double) {
        return State::Constant(1, 2.0 * x[0] + u[0]);
      };
      sys.control_policy = [](const State& x) { return State::Constant(1, -2.5 * x[0]); };
      sys.noise = State::Constant(1, 2.0);
      sys.lambda = lambda;
      safe.barrier = [](const State& x) { return x[0] - 1.0; };
      safe.mode = Mode::Safety;
      break;
    }
    case BuiltinSystem::CartPendulum: {
      sys.name = "cartpendulum";
      sys.state_dim = 4;
      sys.drift = [pendulum](const State& x, const State& u, double) {
        return cart_pendulum_drift(pendulum, x, u.size() > 0 ? u[0] : 0.0);
      };
      sys.control_policy = [pendulum](const State& x) {
        double u = 0.0;
        for (int i = 0; i < 4; ++i) u -= pendulum.gain[static_cast<std::size_t>(i)] * x[i];
        return State::Constant(1, u);
      };
      sys.noise = State::Zero(4);
      sys.noise[1] = pendulum.sigma;
      sys.noise[3] = pendulum.sigma;
      sys.lambda = lambda;
      const double limit = pendulum.angle_limit;
      safe.barrier = [limit](const State& x) {
        const double r = x[2] / limit;
        return 1.0 - r * r;
      };
      safe.mode = Mode::Safety;
      break;
    }
  }
  return {sys, safe};
}

inline std::pair<SdeSystem, SafeSet> builtin_system(std::string_view name, double lambda = 1.0) {
  return builtin_system(parse_builtin_system(name), lambda);
}

}  // namespace riskpipe
