#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "pipe/dynamics.hpp"
#include "pipe/grid.hpp"
#include "pipe/rng.hpp"

namespace riskpipe {

// PIPE_DETERMINISTIC=1 pins every parallel section to one worker.
inline bool deterministic_mode() {
  const char* env = std::getenv("PIPE_DETERMINISTIC");
  return env != nullptr && std::string(env) == "1";
}

inline int resolve_threads(int requested) {
  if (deterministic_mode()) return 1;
  if (requested <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }
  return requested;
}

// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; the
// result then does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  threads = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> workers;
  workers.reserve(static_cast<std::size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  workers.clear();
  if (error) std::rethrow_exception(error);
}

struct McOptions {
  double dt = 0.01;
  std::uint64_t seed = 0;
  int threads = 1;
  BoundaryMonitor monitor = BoundaryMonitor::Discrete;
};

struct CellFailure {
  std::size_t cell = 0;
  std::string message;
};

namespace detail {

inline bool trajectory_counts(const SafeSet& safe, bool had_event) {
  return safe.mode == Mode::Recovery ? had_event : !had_event;
}

}  // namespace detail

// Fraction of N trajectories that recover (Recovery) or stay safe (Safety)
// within the horizon. Trajectory j uses the stream derive_seed(seed, j).
inline double estimate_point(const SdeSystem& system, const SafeSet& safe, const State& x0,
                             double horizon, long samples, const McOptions& options) {
  require(samples >= 1, ErrorKind::InvalidArgument, "sample count must be >= 1");
  require(horizon >= 0.0, ErrorKind::InvalidArgument, "horizon must be >= 0");
  require(x0.size() == system.state_dim, ErrorKind::BadShape, "x0 length must equal state_dim");
  if (horizon == 0.0) return safe.contains(x0) ? 1.0 : 0.0;
  const long steps = step_count(horizon, options.dt);
  long hits = 0;
  for (long j = 0; j < samples; ++j) {
    RngStream stream(derive_seed(options.seed, static_cast<std::uint64_t>(j)));
    std::optional<long> event;
    try {
      event = detail::run_until_event(system, safe, x0, steps, options.dt, stream, options.monitor,
                                      system.lambda, [](long, const State&) {});
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " (trajectory stream " + std::to_string(j) + ")");
    }
    if (detail::trajectory_counts(safe, event.has_value())) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples);
}

// Same estimator as estimate_point evaluated at several horizons from one
// set of paths (simulated to the largest horizon). Entry k equals
// estimate_point(..., horizons[k], ...) with the same seed.
inline std::vector<double> estimate_time_profile(const SdeSystem& system, const SafeSet& safe,
                                                 const State& x0,
                                                 const std::vector<double>& horizons,
                                                 long samples, const McOptions& options) {
  require(samples >= 1, ErrorKind::InvalidArgument, "sample count must be >= 1");
  require(!horizons.empty(), ErrorKind::InvalidArgument, "need at least one horizon");
  double t_max = 0.0;
  for (double t : horizons) {
    require(t >= 0.0, ErrorKind::InvalidArgument, "horizons must be >= 0");
    t_max = std::max(t_max, t);
  }
  const long max_steps = step_count(t_max, options.dt);
  std::vector<long> steps_for(horizons.size());
  for (std::size_t k = 0; k < horizons.size(); ++k) steps_for[k] = step_count(horizons[k], options.dt);

  std::vector<long> hits(horizons.size(), 0);
  const bool inside = safe.contains(x0);
  for (long j = 0; j < samples; ++j) {
    RngStream stream(derive_seed(options.seed, static_cast<std::uint64_t>(j)));
    std::optional<long> event;
    if (max_steps > 0) {
      try {
        event = detail::run_until_event(system, safe, x0, max_steps, options.dt, stream,
                                        options.monitor, system.lambda, [](long, const State&) {});
      } catch (const Error& e) {
        throw Error(e.kind(),
                    std::string(e.what()) + " (trajectory stream " + std::to_string(j) + ")");
      }
    }
    for (std::size_t k = 0; k < horizons.size(); ++k) {
      bool counted;
      if (horizons[k] == 0.0) {
        counted = inside;
      } else {
        const bool had_event = event.has_value() && *event <= steps_for[k];
        counted = detail::trajectory_counts(safe, had_event);
      }
      if (counted) ++hits[k];
    }
  }
  std::vector<double> out(horizons.size());
  for (std::size_t k = 0; k < horizons.size(); ++k) {
    out[k] = static_cast<double>(hits[k]) / static_cast<double>(samples);
  }
  return out;
}

// One independent estimate per lattice cell, seeded by derive_seed(seed, cell).
inline ProbabilityGrid estimate_grid(const SdeSystem& system, const SafeSet& safe,
                                     const GridSpec& spec, long samples, const McOptions& options,
                                     std::vector<CellFailure>* failures = nullptr) {
  spec.validate();
  require(spec.state_dim() == system.state_dim, ErrorKind::BadShape,
          "grid state dimension must match the system");
  const SdeSystem sys = system.with_lambda(spec.lambda);
  ProbabilityGrid grid{spec, std::vector<double>(spec.cell_count(), kNaN), samples, safe.mode,
                       Source::MonteCarlo};
  std::vector<std::string> errors(spec.cell_count());
  parallel_for(spec.cell_count(), resolve_threads(options.threads), [&](std::size_t cell) {
    McOptions cell_options = options;
    cell_options.seed = derive_seed(options.seed, cell);
    try {
      grid.values[cell] =
          estimate_point(sys, safe, spec.state_at(cell), spec.t_at(cell), samples, cell_options);
    } catch (const Error& e) {
      errors[cell] = e.what();
    }
  });
  if (failures) {
    for (std::size_t cell = 0; cell < errors.size(); ++cell) {
      if (!errors[cell].empty()) failures->push_back({cell, errors[cell]});
    }
  }
  return grid;
}

// Reference-grid estimator: one path ensemble per state point, shared across
// all horizons of that point. Cells along the time axis are correlated.
inline ProbabilityGrid estimate_grid_shared_paths(const SdeSystem& system, const SafeSet& safe,
                                                  const GridSpec& spec, long samples,
                                                  const McOptions& options,
                                                  std::vector<CellFailure>* failures = nullptr) {
  spec.validate();
  require(spec.state_dim() == system.state_dim, ErrorKind::BadShape,
          "grid state dimension must match the system");
  const SdeSystem sys = system.with_lambda(spec.lambda);
  const auto nt = static_cast<std::size_t>(spec.t_steps);
  const std::size_t points = spec.cell_count() / nt;
  std::vector<double> horizons(nt);
  for (std::size_t k = 0; k < nt; ++k) horizons[k] = spec.t_coord(static_cast<int>(k));

  ProbabilityGrid grid{spec, std::vector<double>(spec.cell_count(), kNaN), samples, safe.mode,
                       Source::MonteCarlo};
  std::vector<std::string> errors(points);
  parallel_for(points, resolve_threads(options.threads), [&](std::size_t p) {
    McOptions point_options = options;
    point_options.seed = derive_seed(options.seed, p);
    try {
      const auto profile =
          estimate_time_profile(sys, safe, spec.state_at(p * nt), horizons, samples, point_options);
      std::copy(profile.begin(), profile.end(), grid.values.begin() + static_cast<long>(p * nt));
    } catch (const Error& e) {
      errors[p] = e.what();
    }
  });
  if (failures) {
    for (std::size_t p = 0; p < points; ++p) {
      if (!errors[p].empty()) {
        for (std::size_t k = 0; k < nt; ++k) failures->push_back({p * nt + k, errors[p]});
      }
    }
  }
  return grid;
}

// Mean over a kernel x kernel window with replicate padding. Requires a
// single state dimension (state x time).
inline ProbabilityGrid denoise_uniform(const ProbabilityGrid& grid, int kernel = 3) {
  require(kernel >= 1 && kernel % 2 == 1, ErrorKind::InvalidArgument,
          "kernel must be odd and positive");
  require(grid.spec.state_dim() == 1, ErrorKind::BadShape,
          "denoising needs a 2D (state x time) grid");
  const int nx = grid.spec.state_steps[0];
  const int nt = grid.spec.t_steps;
  require(kernel <= nx && kernel <= nt, ErrorKind::KernelTooLarge,
          "kernel " + std::to_string(kernel) + " exceeds grid extent");
  const int half = kernel / 2;
  ProbabilityGrid out = grid;
  out.source = Source::Denoised;
  const double norm = 1.0 / static_cast<double>(kernel * kernel);
  for (int i = 0; i < nx; ++i) {
    for (int k = 0; k < nt; ++k) {
      double sum = 0.0;
      for (int di = -half; di <= half; ++di) {
        const int ii = std::clamp(i + di, 0, nx - 1);
        for (int dk = -half; dk <= half; ++dk) {
          const int kk = std::clamp(k + dk, 0, nt - 1);
          sum += grid.values[static_cast<std::size_t>(ii * nt + kk)];
        }
      }
      out.values[static_cast<std::size_t>(i * nt + k)] = sum * norm;
    }
  }
  return out;
}

// Central differences along a state axis; boundary cells stay NaN.
inline GradientGrid finite_diff_gradient(const ProbabilityGrid& grid, int axis) {
  const GridSpec& spec = grid.spec;
  require(axis >= 0 && axis < spec.state_dim(), ErrorKind::BadAxis,
          "axis " + std::to_string(axis) + " out of range");
  const int n = spec.state_steps[static_cast<std::size_t>(axis)];
  require(n >= 3, ErrorKind::InvalidArgument, "need at least 3 points along the axis");
  const double h = spec.state_spacing(axis);
  GradientGrid out{spec, axis, std::vector<double>(spec.cell_count(), kNaN)};
  for (std::size_t cell = 0; cell < spec.cell_count(); ++cell) {
    auto idx = spec.unflatten(cell);
    const int i = idx[static_cast<std::size_t>(axis)];
    if (i == 0 || i == n - 1) continue;
    idx[static_cast<std::size_t>(axis)] = i + 1;
    const double up = grid.values[spec.flatten(idx)];
    idx[static_cast<std::size_t>(axis)] = i - 1;
    const double down = grid.values[spec.flatten(idx)];
    out.values[cell] = (up - down) / (2.0 * h);
  }
  return out;
}

}  // namespace riskpipe
