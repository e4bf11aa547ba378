#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "pipe/dynamics.hpp"
#include "pipe/error.hpp"

namespace riskpipe {

// Regular lattice over state x horizon. Lattice points are affine in the
// indices; flat storage is row-major over the state dimensions with the
// time axis fastest.
struct GridSpec {
  std::vector<double> state_lo;
  std::vector<double> state_hi;
  std::vector<int> state_steps;
  double t_lo = 0.0;
  double t_hi = 0.0;
  int t_steps = 1;
  double lambda = 0.0;

  int state_dim() const { return static_cast<int>(state_lo.size()); }

  // A single-point axis must have lo == hi; otherwise lo < hi and count >= 2.
  void validate() const {
    require(!state_lo.empty(), ErrorKind::BadShape, "grid needs at least one state dimension");
    require(state_lo.size() == state_hi.size() && state_lo.size() == state_steps.size(),
            ErrorKind::BadShape, "state_lo/state_hi/state_steps length mismatch");
    require(static_cast<int>(state_lo.size()) <= kMaxStateDim, ErrorKind::BadShape,
            "too many state dimensions");
    for (std::size_t i = 0; i < state_lo.size(); ++i) {
      validate_axis(state_lo[i], state_hi[i], state_steps[i], "x" + std::to_string(i + 1));
    }
    validate_axis(t_lo, t_hi, t_steps, "T");
    require(std::isfinite(lambda), ErrorKind::InvalidArgument, "lambda must be finite");
  }

  std::size_t cell_count() const {
    std::size_t n = static_cast<std::size_t>(t_steps);
    for (int s : state_steps) n *= static_cast<std::size_t>(s);
    return n;
  }

  double state_spacing(int dim) const {
    const auto d = static_cast<std::size_t>(dim);
    return state_steps[d] > 1 ? (state_hi[d] - state_lo[d]) / (state_steps[d] - 1) : 0.0;
  }
  double t_spacing() const { return t_steps > 1 ? (t_hi - t_lo) / (t_steps - 1) : 0.0; }

  double state_coord(int dim, int index) const {
    const auto d = static_cast<std::size_t>(dim);
    if (state_steps[d] == 1) return state_lo[d];
    if (index == state_steps[d] - 1) return state_hi[d];
    return state_lo[d] + (state_hi[d] - state_lo[d]) * index / (state_steps[d] - 1);
  }
  double t_coord(int index) const {
    if (t_steps == 1) return t_lo;
    if (index == t_steps - 1) return t_hi;
    return t_lo + (t_hi - t_lo) * index / (t_steps - 1);
  }

  // Per-axis indices of a flat cell index; last entry is the time index.
  std::vector<int> unflatten(std::size_t cell) const {
    std::vector<int> idx(state_lo.size() + 1);
    idx.back() = static_cast<int>(cell % static_cast<std::size_t>(t_steps));
    cell /= static_cast<std::size_t>(t_steps);
    for (std::size_t d = state_lo.size(); d-- > 0;) {
      idx[d] = static_cast<int>(cell % static_cast<std::size_t>(state_steps[d]));
      cell /= static_cast<std::size_t>(state_steps[d]);
    }
    return idx;
  }

  std::size_t flatten(const std::vector<int>& idx) const {
    std::size_t cell = 0;
    for (std::size_t d = 0; d < state_lo.size(); ++d) {
      cell = cell * static_cast<std::size_t>(state_steps[d]) + static_cast<std::size_t>(idx[d]);
    }
    return cell * static_cast<std::size_t>(t_steps) + static_cast<std::size_t>(idx.back());
  }

  State state_at(std::size_t cell) const {
    const auto idx = unflatten(cell);
    State x(state_dim());
    for (int d = 0; d < state_dim(); ++d) x[d] = state_coord(d, idx[static_cast<std::size_t>(d)]);
    return x;
  }
  double t_at(std::size_t cell) const {
    return t_coord(static_cast<int>(cell % static_cast<std::size_t>(t_steps)));
  }

  bool operator==(const GridSpec&) const = default;

 private:
  static void validate_axis(double lo, double hi, int steps, const std::string& name) {
    require(std::isfinite(lo) && std::isfinite(hi), ErrorKind::InvalidArgument,
            "axis " + name + " bounds must be finite");
    require(steps >= 1, ErrorKind::BadShape, "axis " + name + " needs at least one point");
    if (steps == 1) {
      require(lo == hi, ErrorKind::InvalidArgument, "single-point axis " + name + " needs lo == hi");
    } else {
      require(lo < hi, ErrorKind::InvalidArgument, "axis " + name + " needs lo < hi");
    }
  }
};

// One-dimensional state x horizon lattice, the common case.
inline GridSpec make_grid_1d(double x_lo, double x_hi, int x_steps, double t_lo, double t_hi,
                             int t_steps, double lambda) {
  GridSpec g{{x_lo}, {x_hi}, {x_steps}, t_lo, t_hi, t_steps, lambda};
  g.validate();
  return g;
}

// Builds a lattice from spacings, e.g. dx = 0.4 on [-10, -2] gives 21 points.
inline GridSpec make_grid_1d_spacing(double x_lo, double x_hi, double dx, double t_lo,
                                     double t_hi, double dt, double lambda) {
  const int nx = static_cast<int>(std::lround((x_hi - x_lo) / dx)) + 1;
  const int nt = static_cast<int>(std::lround((t_hi - t_lo) / dt)) + 1;
  return make_grid_1d(x_lo, x_hi, nx, t_lo, t_hi, nt, lambda);
}

enum class Source { MonteCarlo, Denoised, Pinn, Oracle, Tps };

inline std::string_view to_string(Source s) {
  switch (s) {
    case Source::MonteCarlo: return "montecarlo";
    case Source::Denoised: return "denoised";
    case Source::Pinn: return "pinn";
    case Source::Oracle: return "oracle";
    case Source::Tps: return "tps";
  }
  return "unknown";
}

inline Source parse_source(std::string_view text) {
  for (Source s : {Source::MonteCarlo, Source::Denoised, Source::Pinn, Source::Oracle, Source::Tps}) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown source '" + std::string(text) + "'");
}

struct ProbabilityGrid {
  GridSpec spec;
  std::vector<double> values;  // NaN marks unevaluated / failed cells
  long sample_count = 0;
  Mode mode = Mode::Recovery;
  Source source = Source::MonteCarlo;

  double at(std::size_t cell) const { return values[cell]; }

  // Identical lattice, metadata and values; NaN cells compare equal.
  bool operator==(const ProbabilityGrid& other) const {
    if (!(spec == other.spec) || sample_count != other.sample_count || mode != other.mode ||
        source != other.source || values.size() != other.values.size()) {
      return false;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const bool a = std::isnan(values[i]);
      const bool b = std::isnan(other.values[i]);
      if (a != b || (!a && values[i] != other.values[i])) return false;
    }
    return true;
  }
};

struct GradientGrid {
  GridSpec spec;
  int axis = 0;
  std::vector<double> values;  // dF/dx_axis; NaN where not evaluated
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace riskpipe
