#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "pipe/dynamics.hpp"
#include "pipe/error.hpp"
#include "pipe/mlp.hpp"

namespace riskpipe {

// The convection-diffusion problem a risk probability satisfies:
//   dF/dT = f(x, u(x)) . dF/dx + 1/2 sum_i sigma_i^2 d2F/dx_i^2
// with F(x, 0) = 1(x in C) and the mode-dependent boundary condition.
//
// Jets may cover only a subset of the state dimensions (state_map lists the
// system dimension of each jet state entry); the remaining dimensions are
// treated as having zero derivatives.
struct PdeSpec {
  SdeSystem system;
  SafeSet safe;
  Mode mode = Mode::Recovery;
  std::vector<int> state_map;  // empty: identity
  std::vector<double> state_lo;
  std::vector<double> state_hi;
  double t_lo = 0.0;
  double t_hi = 1.0;

  int jet_state_dim() const {
    return state_map.empty() ? system.state_dim : static_cast<int>(state_map.size());
  }
  int system_dim(int i) const {
    return state_map.empty() ? i : state_map[static_cast<std::size_t>(i)];
  }

  // Embeds jet-state coordinates in a full system state (unmapped dims = 0).
  State to_system_state(const double* coords) const {
    State x = State::Zero(system.state_dim);
    for (int i = 0; i < jet_state_dim(); ++i) x[system_dim(i)] = coords[i];
    return x;
  }

  void validate() const {
    system.validate();
    for (int i = 0; i < jet_state_dim(); ++i) {
      const int d = system_dim(i);
      require(d >= 0 && d < system.state_dim, ErrorKind::BadShape, "state_map entry out of range");
    }
    require(static_cast<int>(state_lo.size()) == jet_state_dim() &&
                static_cast<int>(state_hi.size()) == jet_state_dim(),
            ErrorKind::BadShape, "domain bounds must cover every jet state dimension");
    for (std::size_t i = 0; i < state_lo.size(); ++i) {
      require(state_lo[i] < state_hi[i], ErrorKind::InvalidArgument, "degenerate state domain");
    }
    require(t_lo < t_hi, ErrorKind::InvalidArgument, "degenerate time domain");
  }
};

// Builds a PdeSpec whose domain is the given box, using the system's safe set.
inline PdeSpec make_pde_spec(const SdeSystem& system, const SafeSet& safe,
                             std::vector<double> state_lo, std::vector<double> state_hi,
                             double t_lo, double t_hi, std::vector<int> state_map = {}) {
  PdeSpec spec{system, safe, safe.mode, std::move(state_map), std::move(state_lo),
               std::move(state_hi), t_lo, t_hi};
  spec.validate();
  return spec;
}

// W = dF/dT - f . dF/dx - 1/2 sum sigma_i^2 d2F/dx_i^2. The jet's gradient
// holds the state entries first, then dF/dT.
inline double residual(const NetJet& jet, const State& x, double horizon, const PdeSpec& spec,
                       double lambda) {
  (void)horizon;
  const int n = spec.jet_state_dim();
  require(jet.input_grad.size() >= n + 1 && jet.input_hess_diag.size() == n, ErrorKind::BadShape,
          "jet dimensions do not match the PDE");
  require(x.size() == spec.system.state_dim, ErrorKind::BadShape, "state length mismatch");
  const State f = spec.system.closed_loop_drift(x, lambda);
  double w = jet.input_grad[n];
  for (int i = 0; i < n; ++i) {
    const int d = spec.system_dim(i);
    const double s = spec.system.noise[d];
    w -= f[d] * jet.input_grad[i] + 0.5 * s * s * jet.input_hess_diag[i];
  }
  return w;
}

inline double residual(const NetJet& jet, const State& x, double horizon, const PdeSpec& spec) {
  return residual(jet, x, horizon, spec, spec.system.lambda);
}

inline double initial_condition(const State& x, const SafeSet& safe) {
  return safe.contains(x) ? 1.0 : 0.0;
}

// Recovery: F = 1 on the boundary of C. Safety: F = 0 outside C.
inline double boundary_condition(Mode mode) { return mode == Mode::Recovery ? 1.0 : 0.0; }

inline double norm_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// log Phi(z), accurate far into the lower tail.
inline double log_norm_cdf(double z) {
  if (z > -30.0) return std::log(norm_cdf(z));
  // Asymptotic Mills-ratio expansion.
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - std::log(-z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

namespace detail {

inline void check_oracle_args(double x, double horizon) {
  require(std::isfinite(x) && x < 2.0, ErrorKind::DomainError,
          "oracle needs x < 2 (outside the recovery set), got " + std::to_string(x));
  require(std::isfinite(horizon) && horizon >= 0.0, ErrorKind::DomainError, "oracle needs T >= 0");
}

// exp(2 lambda b) * Phi(z), without overflow.
inline double reflected_term(double lambda, double b, double z) {
  const double log_term = 2.0 * lambda * b + log_norm_cdf(z);
  return std::exp(log_term);
}

}  // namespace detail

// Probability that x + lambda t + w_t reaches 2 within [0, T].
inline double oracle_recovery_probability(double x, double horizon, double lambda) {
  detail::check_oracle_args(x, horizon);
  if (horizon == 0.0) return 0.0;
  const double b = 2.0 - x;
  const double st = std::sqrt(horizon);
  const double z1 = (lambda * horizon - b) / st;
  const double z2 = (-b - lambda * horizon) / st;
  const double p = norm_cdf(z1) + detail::reflected_term(lambda, b, z2);
  return std::clamp(p, 0.0, 1.0);
}

// dF/dx of the oracle.
inline double oracle_recovery_gradient(double x, double horizon, double lambda) {
  detail::check_oracle_args(x, horizon);
  if (horizon == 0.0) return 0.0;
  const double b = 2.0 - x;
  const double st = std::sqrt(horizon);
  const double z1 = (lambda * horizon - b) / st;
  const double z2 = (-b - lambda * horizon) / st;
  // exp(2 lambda b) phi(z2) == phi(z1)
  return 2.0 * norm_pdf(z1) / st - 2.0 * lambda * detail::reflected_term(lambda, b, z2);
}

// First-passage time density b exp(-(b - lambda T)^2 / 2T) / sqrt(2 pi T^3).
inline double oracle_recovery_density(double x, double horizon, double lambda) {
  require(std::isfinite(x) && x < 2.0, ErrorKind::DomainError, "density needs x < 2");
  require(std::isfinite(horizon) && horizon > 0.0, ErrorKind::DomainError, "density needs T > 0");
  const double b = 2.0 - x;
  const double d = b - lambda * horizon;
  return b * std::exp(-d * d / (2.0 * horizon)) /
         std::sqrt(2.0 * std::numbers::pi * horizon * horizon * horizon);
}

}  // namespace riskpipe
