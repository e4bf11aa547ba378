#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pipe/checkpoint.hpp"
#include "pipe/config.hpp"
#include "pipe/grid.hpp"
#include "pipe/mlp.hpp"
#include "pipe/physics.hpp"
#include "pipe/rng.hpp"

namespace riskpipe {

struct TrainConfig {
  double w_physics = 1.0;
  double w_data = 1.0;
  double w_ic = 1.0;
  double w_bc = 1.0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long epochs = 60000;
  long physics_points = 10000;
  long initial_points = 1000;
  long boundary_points = 1000;
  int hidden_layers = 3;
  int width = 32;
  std::uint64_t init_seed = 1;
  std::uint64_t sample_seed = 2;
  long checkpoint_every = 5000;  // 0 disables intermediate checkpoints
  std::string checkpoint_dir;    // empty: checkpoints are kept in memory only
  bool lambda_input = false;
  std::vector<double> state_lo{-10.0};
  std::vector<double> state_hi{2.0};
  double t_lo = 0.0;
  double t_hi = 10.0;
  double lambda_lo = 0.0;
  double lambda_hi = 2.0;

  void validate() const {
    for (double w : {w_physics, w_data, w_ic, w_bc}) {
      require(std::isfinite(w) && w >= 0.0, ErrorKind::ConfigError, "loss weights must be >= 0");
    }
    require(epochs >= 1, ErrorKind::ConfigError, "epochs must be >= 1");
    require(learning_rate > 0.0 && beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 &&
                epsilon > 0.0,
            ErrorKind::ConfigError, "invalid Adam hyperparameters");
    require(physics_points >= 0 && initial_points >= 0 && boundary_points >= 0,
            ErrorKind::ConfigError, "point counts must be >= 0");
    require(hidden_layers >= 1 && width >= 1, ErrorKind::ConfigError, "bad architecture");
    require(checkpoint_every >= 0, ErrorKind::ConfigError, "checkpoint_every must be >= 0");
    require(!state_lo.empty() && state_lo.size() == state_hi.size(), ErrorKind::ConfigError,
            "state_lo/state_hi must have the same nonzero length");
    for (std::size_t i = 0; i < state_lo.size(); ++i) {
      require(state_lo[i] < state_hi[i], ErrorKind::ConfigError, "state_lo must be < state_hi");
    }
    require(t_lo < t_hi, ErrorKind::ConfigError, "t_lo must be < t_hi");
    require(!lambda_input || lambda_lo < lambda_hi, ErrorKind::ConfigError,
            "lambda_lo must be < lambda_hi");
  }

  static TrainConfig from_key_values(const KeyValues& kv, const std::string& prefix = "") {
    return from_key_values(kv, prefix, TrainConfig{});
  }

  // Keys absent from kv keep the value from base.
  static TrainConfig from_key_values(const KeyValues& kv, const std::string& prefix,
                                     const TrainConfig& base) {
    TrainConfig c = base;
    const auto k = [&](const char* name) { return prefix + name; };
    c.w_physics = kv.get_double(k("w_physics"), c.w_physics);
    c.w_data = kv.get_double(k("w_data"), c.w_data);
    c.w_ic = kv.get_double(k("w_ic"), c.w_ic);
    c.w_bc = kv.get_double(k("w_bc"), c.w_bc);
    c.learning_rate = kv.get_double(k("learning_rate"), c.learning_rate);
    c.beta1 = kv.get_double(k("beta1"), c.beta1);
    c.beta2 = kv.get_double(k("beta2"), c.beta2);
    c.epsilon = kv.get_double(k("epsilon"), c.epsilon);
    c.epochs = kv.get_int(k("epochs"), c.epochs);
    c.physics_points = kv.get_int(k("physics_points"), c.physics_points);
    c.initial_points = kv.get_int(k("initial_points"), c.initial_points);
    c.boundary_points = kv.get_int(k("boundary_points"), c.boundary_points);
    c.hidden_layers = static_cast<int>(kv.get_int(k("hidden_layers"), c.hidden_layers));
    c.width = static_cast<int>(kv.get_int(k("width"), c.width));
    c.init_seed = kv.get_u64(k("init_seed"), c.init_seed);
    c.sample_seed = kv.get_u64(k("sample_seed"), c.sample_seed);
    c.checkpoint_every = kv.get_int(k("checkpoint_every"), c.checkpoint_every);
    c.checkpoint_dir = kv.get_string(k("checkpoint_dir"), c.checkpoint_dir);
    c.lambda_input = kv.get_bool(k("lambda_input"), c.lambda_input);
    c.state_lo = kv.get_doubles(k("state_lo"), c.state_lo);
    c.state_hi = kv.get_doubles(k("state_hi"), c.state_hi);
    c.t_lo = kv.get_double(k("t_lo"), c.t_lo);
    c.t_hi = kv.get_double(k("t_hi"), c.t_hi);
    c.lambda_lo = kv.get_double(k("lambda_lo"), c.lambda_lo);
    c.lambda_hi = kv.get_double(k("lambda_hi"), c.lambda_hi);
    c.validate();
    return c;
  }

  void write_key_values(KeyValues& kv, const std::string& prefix = "") const {
    const auto put = [&](const char* name, const std::string& v) { kv.set(prefix + name, v); };
    put("w_physics", format_double(w_physics));
    put("w_data", format_double(w_data));
    put("w_ic", format_double(w_ic));
    put("w_bc", format_double(w_bc));
    put("learning_rate", format_double(learning_rate));
    put("beta1", format_double(beta1));
    put("beta2", format_double(beta2));
    put("epsilon", format_double(epsilon));
    put("epochs", std::to_string(epochs));
    put("physics_points", std::to_string(physics_points));
    put("initial_points", std::to_string(initial_points));
    put("boundary_points", std::to_string(boundary_points));
    put("hidden_layers", std::to_string(hidden_layers));
    put("width", std::to_string(width));
    put("init_seed", std::to_string(init_seed));
    put("sample_seed", std::to_string(sample_seed));
    put("checkpoint_every", std::to_string(checkpoint_every));
    put("checkpoint_dir", checkpoint_dir);
    put("lambda_input", lambda_input ? "true" : "false");
    put("state_lo", join_doubles(state_lo));
    put("state_hi", join_doubles(state_hi));
    put("t_lo", format_double(t_lo));
    put("t_hi", format_double(t_hi));
    put("lambda_lo", format_double(lambda_lo));
    put("lambda_hi", format_double(lambda_hi));
  }
};

// Network inputs are columns [jet state coords..., T, (lambda)].
struct CollocationSets {
  Eigen::MatrixXd physics;
  Eigen::MatrixXd data;
  Eigen::VectorXd data_target;
  Eigen::MatrixXd initial;
  Eigen::VectorXd initial_target;
  Eigen::MatrixXd boundary;
  Eigen::VectorXd boundary_target;
};

// Writes jet-state coordinates of a boundary sample.
using BoundarySampler = std::function<void(RngStream& rng, double* coords)>;

// Axis-aligned sub-region used to restrict the supervision data.
struct DataRegion {
  std::vector<double> state_lo;
  std::vector<double> state_hi;
  double t_lo = -1e300;
  double t_hi = 1e300;
};

inline InputLayout make_input_layout(const TrainConfig& config, const PdeSpec& spec) {
  InputLayout layout;
  layout.state_dim = spec.jet_state_dim();
  layout.has_time = true;
  layout.lambda_input = config.lambda_input;
  layout.state_map = spec.state_map;
  layout.input_lo = config.state_lo;
  layout.input_hi = config.state_hi;
  layout.input_lo.push_back(config.t_lo);
  layout.input_hi.push_back(config.t_hi);
  if (config.lambda_input) {
    layout.input_lo.push_back(config.lambda_lo);
    layout.input_hi.push_back(config.lambda_hi);
  }
  return layout;
}

namespace detail {

inline double open_uniform(RngStream& rng, double lo, double hi) {
  for (;;) {
    const double v = rng.uniform(lo, hi);
    if (v > lo && v < hi) return v;
  }
}

}  // namespace detail

// Samples the physics, initial and boundary point sets (uniform, fixed once
// per run) and copies the supervision rows of every dataset.
inline CollocationSets sample_collocation(const TrainConfig& config, const PdeSpec& spec,
                                          const std::vector<ProbabilityGrid>& datasets,
                                          const BoundarySampler& boundary,
                                          const std::optional<DataRegion>& region = std::nullopt) {
  config.validate();
  spec.validate();
  const int n = spec.jet_state_dim();
  require(static_cast<int>(config.state_lo.size()) == n, ErrorKind::ConfigError,
          "config domain dimension does not match the PDE");
  const int d_in = n + 1 + (config.lambda_input ? 1 : 0);
  const bool lam = config.lambda_input;

  CollocationSets sets;
  RngStream physics_rng(derive_seed(config.sample_seed, 0));
  RngStream initial_rng(derive_seed(config.sample_seed, 1));
  RngStream boundary_rng(derive_seed(config.sample_seed, 2));

  auto sample_lambda = [&](RngStream& rng) {
    return lam ? detail::open_uniform(rng, config.lambda_lo, config.lambda_hi) : spec.system.lambda;
  };

  sets.physics.resize(d_in, config.physics_points);
  for (long j = 0; j < config.physics_points; ++j) {
    for (int i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      sets.physics(i, j) = detail::open_uniform(physics_rng, config.state_lo[u], config.state_hi[u]);
    }
    sets.physics(n, j) = detail::open_uniform(physics_rng, config.t_lo, config.t_hi);
    if (lam) sets.physics(n + 1, j) = sample_lambda(physics_rng);
  }

  sets.initial.resize(d_in, config.initial_points);
  sets.initial_target.resize(config.initial_points);
  for (long j = 0; j < config.initial_points; ++j) {
    for (int i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      sets.initial(i, j) = initial_rng.uniform(config.state_lo[u], config.state_hi[u]);
    }
    sets.initial(n, j) = config.t_lo;
    if (lam) sets.initial(n + 1, j) = sample_lambda(initial_rng);
    sets.initial_target[j] =
        initial_condition(spec.to_system_state(sets.initial.col(j).data()), spec.safe);
  }

  const long nb = boundary ? config.boundary_points : 0;
  sets.boundary.resize(d_in, nb);
  sets.boundary_target = Eigen::VectorXd::Constant(nb, boundary_condition(spec.mode));
  for (long j = 0; j < nb; ++j) {
    boundary(boundary_rng, sets.boundary.col(j).data());
    sets.boundary(n, j) = detail::open_uniform(boundary_rng, config.t_lo, config.t_hi);
    if (lam) sets.boundary(n + 1, j) = sample_lambda(boundary_rng);
  }

  std::vector<Eigen::VectorXd> rows;
  std::vector<double> targets;
  for (const auto& grid : datasets) {
    for (std::size_t cell = 0; cell < grid.spec.cell_count(); ++cell) {
      const double f = grid.values[cell];
      if (std::isnan(f)) continue;
      const State x = grid.spec.state_at(cell);
      const double t = grid.spec.t_at(cell);
      Eigen::VectorXd row(d_in);
      bool inside = true;
      for (int i = 0; i < n; ++i) {
        const int d = spec.system_dim(i);
        require(d < x.size(), ErrorKind::BadShape, "dataset has fewer state dimensions than the PDE");
        row[i] = x[d];
        if (region) {
          const auto u = static_cast<std::size_t>(i);
          inside = inside && row[i] >= region->state_lo[u] && row[i] <= region->state_hi[u];
        }
      }
      if (region) inside = inside && t >= region->t_lo && t <= region->t_hi;
      if (!inside) continue;
      row[n] = t;
      if (lam) row[n + 1] = grid.spec.lambda;
      rows.push_back(row);
      targets.push_back(f);
    }
  }
  if (rows.empty()) throw Error(ErrorKind::NoData, "no supervision rows in the dataset(s)");
  sets.data.resize(d_in, static_cast<Eigen::Index>(rows.size()));
  sets.data_target.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    sets.data.col(static_cast<Eigen::Index>(r)) = rows[r];
    sets.data_target[static_cast<Eigen::Index>(r)] = targets[r];
  }
  return sets;
}

struct LossBreakdown {
  double total = 0.0;
  double physics = 0.0;
  double data = 0.0;
  double initial = 0.0;
  double boundary = 0.0;
};

// The composite loss w_p L_p + w_d L_d + w_ic L_ic + w_bc L_bc over fixed
// point sets, with its exact parameter gradient.
class PinnObjective {
 public:
  PinnObjective(const CollocationSets& sets, const PdeSpec& spec, const TrainConfig& config)
      : config_(config) {
    const int n = spec.jet_state_dim();
    const auto& physics = sets.physics;
    if (config.w_physics > 0.0 && physics.cols() > 0) {
      physics_count_ = physics.cols();
      Eigen::MatrixXd drift(n, physics.cols());
      for (Eigen::Index j = 0; j < physics.cols(); ++j) {
        const State x = spec.to_system_state(physics.col(j).data());
        const double lam = config.lambda_input ? physics(n + 1, j) : spec.system.lambda;
        const State f = spec.system.closed_loop_drift(x, lam);
        check_finite(f, "drift at a physics point");
        for (int i = 0; i < n; ++i) drift(i, j) = f[spec.system_dim(i)];
      }
      physics_chunks_ = split_columns(physics);
      drift_chunks_ = split_columns(drift);
      half_var_.resize(n);
      for (int i = 0; i < n; ++i) {
        const double s = spec.system.noise[spec.system_dim(i)];
        half_var_[i] = 0.5 * s * s;
      }
    }

    const Eigen::Index nd = config.w_data > 0.0 ? sets.data.cols() : 0;
    const Eigen::Index ni = config.w_ic > 0.0 ? sets.initial.cols() : 0;
    const Eigen::Index nb = config.w_bc > 0.0 ? sets.boundary.cols() : 0;
    counts_ = {nd, ni, nb};
    const Eigen::Index rows = sets.physics.rows();
    Eigen::MatrixXd supervised(rows, nd + ni + nb);
    target_.resize(nd + ni + nb);
    if (nd) {
      supervised.leftCols(nd) = sets.data;
      target_.head(nd) = sets.data_target;
    }
    if (ni) {
      supervised.middleCols(nd, ni) = sets.initial;
      target_.segment(nd, ni) = sets.initial_target;
    }
    if (nb) {
      supervised.rightCols(nb) = sets.boundary;
      target_.tail(nb) = sets.boundary_target;
    }
    supervised_chunks_ = split_columns(supervised);
    weight_.resize(nd + ni + nb);
    if (nd) weight_.head(nd).setConstant(config.w_data / static_cast<double>(nd));
    if (ni) weight_.segment(nd, ni).setConstant(config.w_ic / static_cast<double>(ni));
    if (nb) weight_.tail(nb).setConstant(config.w_bc / static_cast<double>(nb));
  }

  // Evaluates the loss; when grad is non-null also writes dL/dtheta. Points
  // are processed in fixed column chunks so the jets stay in cache; the
  // reduction order is fixed, so results do not depend on anything else.
  LossBreakdown evaluate(const MlpParams& params, Eigen::VectorXd* grad) {
    LossBreakdown out;
    if (grad) grad->setZero(params.theta.size());
    const int n = params.layout.state_dim;

    double physics_sum = 0.0;
    for (std::size_t c = 0; c < physics_chunks_.size(); ++c) {
      const auto& pts = physics_chunks_[c];
      const auto& drift = drift_chunks_[c];
      engine_.forward(params, pts, JetOrder::Hessian);
      engine_.jets(jets_);
      // W = dF/dT - f . dF/dx - 1/2 sigma^2 d2F/dx2
      Eigen::RowVectorXd w = jets_.grad.row(n);
      for (int i = 0; i < n; ++i) {
        w.array() -= drift.row(i).array() * jets_.grad.row(i).array() +
                     half_var_[i] * jets_.hess.row(i).array();
      }
      const double part = w.squaredNorm();
      if (!std::isfinite(part)) report_nonfinite(w, "physics", chunk_offset(c));
      physics_sum += part;
      if (grad) {
        adjoint_.resize(pts.cols(), params.input_dim(), n, JetOrder::Hessian);
        const Eigen::RowVectorXd dw = (2.0 * config_.w_physics / static_cast<double>(physics_count_)) * w;
        adjoint_.grad.row(n) = dw;
        for (int i = 0; i < n; ++i) {
          adjoint_.grad.row(i) = -(drift.row(i).array() * dw.array()).matrix();
          adjoint_.hess.row(i) = -half_var_[i] * dw;
        }
        engine_.backward(params, adjoint_, *grad);
      }
    }
    if (physics_count_ > 0) out.physics = physics_sum / static_cast<double>(physics_count_);

    const auto [nd, ni, nb] = counts_;
    double sums[3] = {0.0, 0.0, 0.0};
    Eigen::Index offset = 0;
    for (const auto& pts : supervised_chunks_) {
      const Eigen::Index m = pts.cols();
      engine_.forward(params, pts, JetOrder::Value);
      engine_.jets(jets_);
      const Eigen::RowVectorXd err = jets_.value - target_.segment(offset, m).transpose();
      for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::Index g = offset + j;
        sums[g < nd ? 0 : (g < nd + ni ? 1 : 2)] += err[j] * err[j];
      }
      if (!err.allFinite()) report_nonfinite(err, "supervised", offset);
      if (grad) {
        adjoint_.resize(m, params.input_dim(), 0, JetOrder::Value);
        adjoint_.value = 2.0 * (err.array() * weight_.segment(offset, m).transpose().array()).matrix();
        engine_.backward(params, adjoint_, *grad);
      }
      offset += m;
    }
    if (nd) out.data = sums[0] / static_cast<double>(nd);
    if (ni) out.initial = sums[1] / static_cast<double>(ni);
    if (nb) out.boundary = sums[2] / static_cast<double>(nb);

    out.total = config_.w_physics * out.physics + config_.w_data * out.data +
                config_.w_ic * out.initial + config_.w_bc * out.boundary;
    if (grad && !grad->allFinite()) {
      throw Error(ErrorKind::NonFiniteGradient, "parameter gradient is non-finite");
    }
    return out;
  }

  static constexpr Eigen::Index kChunk = 32;

 private:
  static std::vector<Eigen::MatrixXd> split_columns(const Eigen::MatrixXd& m) {
    std::vector<Eigen::MatrixXd> out;
    for (Eigen::Index first = 0; first < m.cols(); first += kChunk) {
      out.emplace_back(m.middleCols(first, std::min(kChunk, m.cols() - first)));
    }
    return out;
  }

  Eigen::Index chunk_offset(std::size_t c) const { return static_cast<Eigen::Index>(c) * kChunk; }

  [[noreturn]] static void report_nonfinite(const Eigen::RowVectorXd& terms, const char* group,
                                            Eigen::Index offset) {
    Eigen::Index bad = 0;
    while (bad < terms.size() && std::isfinite(terms[bad])) ++bad;
    throw Error(ErrorKind::NonFiniteGradient, std::string(group) + " loss term " +
                                                  std::to_string(offset + bad) + " is non-finite");
  }

  TrainConfig config_;
  Eigen::Index physics_count_ = 0;
  std::vector<Eigen::MatrixXd> physics_chunks_;
  std::vector<Eigen::MatrixXd> drift_chunks_;
  Eigen::VectorXd half_var_;
  std::vector<Eigen::MatrixXd> supervised_chunks_;
  Eigen::VectorXd target_;
  Eigen::VectorXd weight_;
  std::tuple<Eigen::Index, Eigen::Index, Eigen::Index> counts_;
  JetEngine engine_;
  JetBatch jets_;
  JetBatch adjoint_;
};

inline LossBreakdown total_loss(const MlpParams& params, const CollocationSets& sets,
                                const PdeSpec& spec, const TrainConfig& config) {
  PinnObjective objective(sets, spec, config);
  return objective.evaluate(params, nullptr);
}

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long step = 0;
};

inline void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state,
                      const TrainConfig& config) {
  require(grad.size() == theta.size(), ErrorKind::BadShape, "gradient length mismatch");
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(theta.size());
    state.v = Eigen::VectorXd::Zero(theta.size());
  }
  require(state.m.size() == theta.size() && state.v.size() == theta.size(), ErrorKind::BadShape,
          "Adam state length mismatch");
  require(grad.allFinite(), ErrorKind::NonFiniteGradient, "non-finite gradient passed to Adam");
  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  state.m = b1 * state.m + (1.0 - b1) * grad;
  state.v = b2 * state.v + (1.0 - b2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  theta.array() -= config.learning_rate * (state.m.array() / c1) /
                   ((state.v.array() / c2).sqrt() + config.epsilon);
}

struct CheckpointRecord {
  long epoch = 0;
  MlpParams params;
  LossBreakdown loss;  // loss of these parameters on the training sets
  std::string path;    // empty when not written to disk
};

struct TrainReport {
  std::vector<LossBreakdown> history;  // loss before the update of each epoch
  std::vector<CheckpointRecord> checkpoints;
  double wall_seconds = 0.0;
  std::uint64_t init_seed = 0;
  std::uint64_t sample_seed = 0;
};

struct TrainResult {
  MlpParams params;
  TrainReport report;
};

inline MlpParams initial_params(const TrainConfig& config, const PdeSpec& spec) {
  const InputLayout layout = make_input_layout(config, spec);
  return init_glorot(mlp_architecture(layout.input_dim(), config.hidden_layers, config.width),
                     config.init_seed, layout);
}

inline void write_loss_history(const TrainReport& report, std::ostream& out) {
  out << "epoch,L,L_p,L_d,L_ic,L_bc\n";
  for (std::size_t e = 0; e < report.history.size(); ++e) {
    const auto& h = report.history[e];
    out << e << ',' << format_double(h.total) << ',' << format_double(h.physics) << ','
        << format_double(h.data) << ',' << format_double(h.initial) << ','
        << format_double(h.boundary) << '\n';
  }
}

inline void write_loss_history(const TrainReport& report, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot open '" + path + "' for writing");
  write_loss_history(report, out);
}

// Full-batch Adam on the composite loss. Checkpoints are taken every
// checkpoint_every epochs and at the end.
inline TrainResult train(const TrainConfig& config, const CollocationSets& sets, const PdeSpec& spec,
                         std::optional<MlpParams> start = std::nullopt) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result;
  result.params = start ? *start : initial_params(config, spec);
  result.params.validate();
  auto& report = result.report;
  report.init_seed = config.init_seed;
  report.sample_seed = config.sample_seed;
  report.history.reserve(static_cast<std::size_t>(config.epochs));

  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);
  auto save = [&](long epoch, const LossBreakdown& loss, const char* tag) {
    CheckpointRecord rec{epoch, result.params, loss, {}};
    if (!config.checkpoint_dir.empty()) {
      rec.path = (std::filesystem::path(config.checkpoint_dir) /
                  (std::string(tag) + "_" + std::to_string(epoch) + ".ckpt"))
                     .string();
      write_checkpoint(result.params, rec.path);
    }
    return rec;
  };

  PinnObjective objective(sets, spec, config);
  AdamState adam;
  Eigen::VectorXd grad(result.params.theta.size());
  for (long epoch = 0; epoch < config.epochs; ++epoch) {
    LossBreakdown loss;
    try {
      loss = objective.evaluate(result.params, &grad);
    } catch (const Error& e) {
      const auto rec = save(epoch, LossBreakdown{kNaN, kNaN, kNaN, kNaN, kNaN}, "salvage");
      throw Error(ErrorKind::NonFiniteGradient,
                  "epoch " + std::to_string(epoch) + ": " + e.what() +
                      (rec.path.empty() ? "" : " (salvage checkpoint " + rec.path + ")"));
    }
    if (!std::isfinite(loss.total)) {
      const auto rec = save(epoch, loss, "salvage");
      throw Error(ErrorKind::NonFiniteGradient,
                  "non-finite loss at epoch " + std::to_string(epoch) +
                      (rec.path.empty() ? "" : " (salvage checkpoint " + rec.path + ")"));
    }
    report.history.push_back(loss);
    if (epoch > 0 && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      report.checkpoints.push_back(save(epoch, loss, "epoch"));
    }
    adam_step(result.params.theta, grad, adam, config);
  }
  report.checkpoints.push_back(save(config.epochs, objective.evaluate(result.params, nullptr), "final"));
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

namespace detail {

inline Eigen::MatrixXd lattice_inputs(const MlpParams& params, const GridSpec& spec,
                                      std::size_t first, std::size_t count) {
  const auto& layout = params.layout;
  Eigen::MatrixXd in(params.input_dim(), static_cast<Eigen::Index>(count));
  for (std::size_t c = 0; c < count; ++c) {
    const State x = spec.state_at(first + c);
    const auto col = static_cast<Eigen::Index>(c);
    for (int i = 0; i < layout.state_dim; ++i) {
      const int d = layout.system_dim(i);
      require(d < x.size(), ErrorKind::BadShape, "lattice lacks a network state dimension");
      in(i, col) = x[d];
    }
    int row = layout.state_dim;
    if (layout.has_time) in(row++, col) = spec.t_at(first + c);
    if (layout.lambda_input) in(row, col) = spec.lambda;
  }
  return in;
}

inline constexpr std::size_t kPredictChunk = 4096;

}  // namespace detail

// True when every lattice point lies inside the network's normalization box.
inline bool lattice_within_bounds(const MlpParams& params, const GridSpec& spec) {
  const auto& layout = params.layout;
  for (int i = 0; i < layout.state_dim; ++i) {
    const int d = layout.system_dim(i);
    const auto u = static_cast<std::size_t>(i);
    if (spec.state_lo[static_cast<std::size_t>(d)] < layout.input_lo[u] ||
        spec.state_hi[static_cast<std::size_t>(d)] > layout.input_hi[u]) {
      return false;
    }
  }
  const auto t = static_cast<std::size_t>(layout.state_dim);
  return !layout.has_time || (spec.t_lo >= layout.input_lo[t] && spec.t_hi <= layout.input_hi[t]);
}

// Network predictions on a lattice, clamped to [0, 1].
inline ProbabilityGrid predict_grid(const MlpParams& params, const GridSpec& spec, Mode mode) {
  spec.validate();
  ProbabilityGrid grid{spec, std::vector<double>(spec.cell_count()), 0, mode, Source::Pinn};
  for (std::size_t first = 0; first < spec.cell_count(); first += detail::kPredictChunk) {
    const std::size_t count = std::min(detail::kPredictChunk, spec.cell_count() - first);
    const Eigen::RowVectorXd v = forward_batch(params, detail::lattice_inputs(params, spec, first, count));
    for (std::size_t c = 0; c < count; ++c) {
      grid.values[first + c] = std::clamp(v[static_cast<Eigen::Index>(c)], 0.0, 1.0);
    }
  }
  return grid;
}

// Raw dF/dx_axis from the network jets (axis is a lattice state axis).
inline GradientGrid predict_gradient_grid(const MlpParams& params, const GridSpec& spec, int axis) {
  spec.validate();
  int input = -1;
  for (int i = 0; i < params.layout.state_dim; ++i) {
    if (params.layout.system_dim(i) == axis) input = i;
  }
  require(input >= 0 && axis < spec.state_dim(), ErrorKind::BadAxis,
          "axis " + std::to_string(axis) + " is not a network input");
  GradientGrid out{spec, axis, std::vector<double>(spec.cell_count())};
  JetEngine engine;
  JetBatch jets;
  for (std::size_t first = 0; first < spec.cell_count(); first += detail::kPredictChunk) {
    const std::size_t count = std::min(detail::kPredictChunk, spec.cell_count() - first);
    engine.forward(params, detail::lattice_inputs(params, spec, first, count), JetOrder::Gradient);
    engine.jets(jets);
    for (std::size_t c = 0; c < count; ++c) {
      out.values[first + c] = jets.grad(input, static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

}  // namespace riskpipe
