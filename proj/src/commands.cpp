#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pipe/checkpoint.hpp"
#include "pipe/cli.hpp"
#include "pipe/dataset_io.hpp"
#include "pipe/experiments.hpp"
#include "pipe/montecarlo.hpp"
#include "pipe/tps.hpp"

namespace riskpipe {

namespace {

struct GlobalArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
  bool plot_data = false;
};

struct SystemArgs {
  std::string system = "drift1d";
  double lambda = 1.0;
  double sigma = 1.0;

  void add(CLI::App* cmd) {
    cmd->add_option("--system", system, "drift1d, closedloop1d or cartpendulum")->capture_default_str();
    cmd->add_option("--lambda", lambda, "drift parameter lambda")->capture_default_str();
    cmd->add_option("--sigma", sigma, "cart-pendulum noise magnitude")->capture_default_str();
  }
  BuiltinSystem which() const { return parse_builtin_system(system); }
};

// Lattice flags; lists give one entry per state dimension.
struct LatticeArgs {
  std::vector<double> lo{-10.0};
  std::vector<double> hi{2.0};
  std::vector<int> steps{31};
  std::vector<double> spacing;
  double t_lo = 0.0;
  double t_hi = 10.0;
  int t_steps = 21;
  double t_spacing = 0.0;

  void add(CLI::App* cmd) {
    cmd->add_option("--lo", lo, "state lower bounds")->delimiter(',');
    cmd->add_option("--hi", hi, "state upper bounds")->delimiter(',');
    cmd->add_option("--steps", steps, "points per state axis")->delimiter(',');
    cmd->add_option("--spacing", spacing, "state spacings (overrides --steps)")->delimiter(',');
    cmd->add_option("--t-lo", t_lo, "first horizon")->capture_default_str();
    cmd->add_option("--t-hi", t_hi, "last horizon")->capture_default_str();
    cmd->add_option("--t-steps", t_steps, "number of horizons")->capture_default_str();
    cmd->add_option("--t-spacing", t_spacing, "horizon spacing (overrides --t-steps)");
  }

  GridSpec spec(double lambda) const {
    require(lo.size() == hi.size(), ErrorKind::ConfigError, "--lo and --hi lengths differ");
    GridSpec g;
    g.state_lo = lo;
    g.state_hi = hi;
    g.state_steps.resize(lo.size());
    for (std::size_t d = 0; d < lo.size(); ++d) {
      if (!spacing.empty()) {
        require(spacing.size() == lo.size() && spacing[d] > 0.0, ErrorKind::ConfigError,
                "--spacing needs one positive entry per state dimension");
        g.state_steps[d] = lo[d] == hi[d] ? 1 : static_cast<int>(std::lround((hi[d] - lo[d]) / spacing[d])) + 1;
      } else {
        require(steps.size() == lo.size(), ErrorKind::ConfigError,
                "--steps needs one entry per state dimension");
        g.state_steps[d] = steps[d];
      }
    }
    g.t_lo = t_lo;
    g.t_hi = t_hi;
    g.t_steps = t_spacing > 0.0 ? static_cast<int>(std::lround((t_hi - t_lo) / t_spacing)) + 1 : t_steps;
    g.lambda = lambda;
    g.validate();
    return g;
  }
};

std::filesystem::path out_dir(const GlobalArgs& g, const std::string& fallback) {
  const std::filesystem::path dir = g.out.empty() ? std::filesystem::path(fallback) : std::filesystem::path(g.out);
  std::filesystem::create_directories(dir);
  return dir;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::UnknownSystem:
    case ErrorKind::ParseError:
    case ErrorKind::SchemaError:
    case ErrorKind::VersionMismatch:
    case ErrorKind::InconsistentLattice:
    case ErrorKind::ValueOutOfRange:
    case ErrorKind::InvalidArgument:
    case ErrorKind::BadShape:
    case ErrorKind::BadAxis:
    case ErrorKind::KernelTooLarge:
    case ErrorKind::IoError:
      return 2;
    default:
      return 3;
  }
}

void print_report(const MetricsReport& report) {
  for (const auto& row : report.rows) {
    if (row.method == "check" || row.method == "pipe_checkpoint") continue;
    std::printf("%-10s %-20s %-6s %-6s %-28s %.6g\n", row.method.c_str(), row.region.c_str(),
                row.samples.c_str(), std::isnan(row.lambda) ? "" : format_double(row.lambda).c_str(),
                row.metric.c_str(), row.value);
  }
  for (const auto& c : report.checks) {
    std::printf("%s %s (%s)\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.condition.c_str());
  }
}

int cmd_experiment(const GlobalArgs& g, const std::string& id, const std::vector<std::string>& sets) {
  KeyValues kv = g.config.empty() ? KeyValues{} : load_config_file(g.config);
  if (!id.empty()) kv.set("experiment", id);
  if (g.seed) {
    // A new master seed re-derives the training seeds recorded in a report.
    if (kv.has("seed") && kv.get_string("seed", "") != std::to_string(*g.seed)) {
      KeyValues rest;
      for (const auto& [k, v] : kv.entries()) {
        if (k != "train.init_seed" && k != "train.sample_seed") rest.set(k, v);
      }
      kv = rest;
    }
    kv.set("seed", std::to_string(*g.seed));
  }
  if (g.threads) kv.set("threads", std::to_string(*g.threads));
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    require(eq != std::string::npos, ErrorKind::ConfigError, "--set expects key=value, got '" + s + "'");
    kv.set(s.substr(0, eq), s.substr(eq + 1));
  }
  const auto config = ExperimentConfig::from_key_values(kv);
  const auto result = run_experiment(config);
  const auto dir = out_dir(g, "out/" + std::string(to_string(config.id)));
  write_outputs(result, dir.string(), g.plot_data);
  print_report(result.report);
  std::printf("outputs written to %s\n", dir.string().c_str());
  return result.report.all_passed() ? 0 : 1;
}

int cmd_mc_grid(const GlobalArgs& g, const SystemArgs& s, const LatticeArgs& l, long samples,
                double dt, bool shared, bool bridge) {
  CartPendulumParams pendulum;
  pendulum.sigma = s.sigma;
  const auto [system, safe] = builtin_system(s.which(), s.lambda, pendulum);
  McOptions o;
  o.dt = dt > 0.0 ? dt : (s.which() == BuiltinSystem::CartPendulum ? 0.001 : 0.01);
  o.seed = g.seed.value_or(1);
  o.threads = g.threads.value_or(0);
  o.monitor = bridge ? BoundaryMonitor::BrownianBridge : BoundaryMonitor::Discrete;
  const GridSpec spec = l.spec(s.lambda);
  std::vector<CellFailure> failures;
  const auto grid = shared ? estimate_grid_shared_paths(system, safe, spec, samples, o, &failures)
                           : estimate_grid(system, safe, spec, samples, o, &failures);
  const auto path = out_dir(g, ".") / "dataset.csv";
  write_dataset(grid, path.string());
  for (const auto& f : failures) std::fprintf(stderr, "cell %zu failed: %s\n", f.cell, f.message.c_str());
  std::printf("%zu cells written to %s\n", spec.cell_count(), path.string().c_str());
  return failures.empty() ? 0 : 3;
}

int cmd_train(const GlobalArgs& g, const SystemArgs& s, const std::vector<std::string>& data) {
  KeyValues kv = g.config.empty() ? KeyValues{} : load_config_file(g.config);
  TrainConfig base = default_train_config(s.which());
  const std::uint64_t seed = g.seed.value_or(1);
  base.init_seed = derive_seed(seed, 1001);
  base.sample_seed = derive_seed(seed, 1002);
  const auto config = TrainConfig::from_key_values(kv, "train.", base);
  kv.reject_unknown();
  require(!data.empty(), ErrorKind::ConfigError, "train needs at least one --data file");
  std::vector<ProbabilityGrid> grids;
  for (const auto& path : data) {
    require(std::filesystem::exists(path), ErrorKind::ConfigError, "dataset '" + path + "' does not exist");
    grids.push_back(read_dataset(path));
  }
  const auto setup = make_setup(s.which(), s.lambda, config, s.sigma);
  const auto sets = sample_collocation(config, setup.pde, grids, setup.boundary);
  const auto result = train(config, sets, setup.pde);
  const auto dir = out_dir(g, ".");
  write_checkpoint(result.params, (dir / "model.ckpt").string());
  write_loss_history(result.report, (dir / "loss.csv").string());
  const auto& last = result.report.checkpoints.back().loss;
  std::printf("final loss %.6g (physics %.6g, data %.6g, ic %.6g, bc %.6g) after %.1f s\n", last.total,
              last.physics, last.data, last.initial, last.boundary, result.report.wall_seconds);
  std::printf("model written to %s\n", (dir / "model.ckpt").string().c_str());
  return 0;
}

void write_gradient(const GradientGrid& grad, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot open '" + path + "' for writing");
  for (int d = 0; d < grad.spec.state_dim(); ++d) out << 'x' << (d + 1) << ',';
  out << "T,lambda,dFdx" << (grad.axis + 1) << '\n';
  for (std::size_t cell = 0; cell < grad.spec.cell_count(); ++cell) {
    const State x = grad.spec.state_at(cell);
    for (int d = 0; d < grad.spec.state_dim(); ++d) out << format_double(x[d]) << ',';
    out << format_double(grad.spec.t_at(cell)) << ',' << format_double(grad.spec.lambda) << ','
        << format_double(grad.values[cell]) << '\n';
  }
}

void print_mae(const ProbabilityGrid& estimate, const std::string& reference_path, const SafeSet& safe) {
  const auto reference = read_dataset(reference_path);
  require(reference.spec == estimate.spec, ErrorKind::InconsistentLattice,
          "reference lattice differs from the evaluation lattice");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t cell = 0; cell < estimate.spec.cell_count(); ++cell) {
    if (is_excluded_corner(estimate.spec, safe, cell) || std::isnan(reference.values[cell])) continue;
    sum += std::abs(estimate.values[cell] - reference.values[cell]);
    ++n;
  }
  std::printf("mae vs %s: %.6g over %zu cells\n", reference_path.c_str(), n ? sum / static_cast<double>(n) : kNaN, n);
}

int cmd_eval(const GlobalArgs& g, const SystemArgs& s, const LatticeArgs& l, const std::string& model,
             std::optional<int> axis, const std::string& reference) {
  require(std::filesystem::exists(model), ErrorKind::ConfigError, "model '" + model + "' does not exist");
  const auto params = read_checkpoint(model);
  const auto [system, safe] = builtin_system(s.which(), s.lambda);
  const GridSpec spec = l.spec(s.lambda);
  require(lattice_within_bounds(params, spec), ErrorKind::ValueOutOfRange,
          "evaluation lattice leaves the model's training domain");
  const auto dir = out_dir(g, ".");
  if (axis) {
    const auto path = dir / "gradient.csv";
    write_gradient(predict_gradient_grid(params, spec, *axis), path.string());
    std::printf("gradient written to %s\n", path.string().c_str());
    return 0;
  }
  const auto grid = predict_grid(params, spec, safe.mode);
  const auto path = dir / "predictions.csv";
  write_dataset(grid, path.string());
  std::printf("predictions written to %s\n", path.string().c_str());
  if (!reference.empty()) print_mae(grid, reference, safe);
  return 0;
}

int cmd_tps(const GlobalArgs& g, const LatticeArgs& l, const std::string& data, double regularization) {
  require(std::filesystem::exists(data), ErrorKind::ConfigError, "dataset '" + data + "' does not exist");
  const auto grid = read_dataset(data);
  require(grid.spec.state_dim() == 1, ErrorKind::BadShape, "TPS needs a one-dimensional dataset");
  std::vector<std::size_t> cells;
  for (std::size_t cell = 0; cell < grid.spec.cell_count(); ++cell) {
    if (!std::isnan(grid.values[cell])) cells.push_back(cell);
  }
  Eigen::MatrixX2d nodes(static_cast<Eigen::Index>(cells.size()), 2);
  Eigen::VectorXd values(static_cast<Eigen::Index>(cells.size()));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    nodes(r, 0) = grid.spec.state_at(cells[i])[0];
    nodes(r, 1) = grid.spec.t_at(cells[i]);
    values[r] = grid.values[cells[i]];
  }
  const auto model = tps_fit(nodes, values, regularization);
  if (model.status == TpsStatus::Degenerate) std::fprintf(stderr, "warning: degenerate node set, least-squares fit used\n");
  const GridSpec spec = l.spec(grid.spec.lambda);
  ProbabilityGrid out{spec, std::vector<double>(spec.cell_count()), grid.sample_count, grid.mode, Source::Tps};
  for (std::size_t cell = 0; cell < spec.cell_count(); ++cell) {
    out.values[cell] = tps_eval(model, spec.state_at(cell)[0], spec.t_at(cell));
  }
  const auto path = out_dir(g, ".") / "tps.csv";
  write_dataset(out, path.string());
  std::printf("TPS predictions written to %s\n", path.string().c_str());
  return 0;
}

int cmd_oracle(const GlobalArgs& g, const LatticeArgs& l, double lambda, bool gradient) {
  const GridSpec spec = l.spec(lambda);
  const auto dir = out_dir(g, ".");
  if (gradient) {
    const auto path = dir / "oracle_gradient.csv";
    write_gradient(oracle_gradient_grid(spec), path.string());
    std::printf("oracle gradient written to %s\n", path.string().c_str());
  } else {
    const auto path = dir / "oracle.csv";
    write_dataset(oracle_grid(spec), path.string());
    std::printf("oracle written to %s\n", path.string().c_str());
  }
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Physics-informed risk probability estimation"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalArgs g;
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", g.config, "key=value config file or a report CSV");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  app.add_option("--out", g.out, "output directory");
  auto* threads_opt = app.add_option("--threads", threads, "worker threads (0: all cores)");
  app.add_flag("--plot-data", g.plot_data, "also write long-format plot CSVs");

  std::string experiment_id;
  std::vector<std::string> sets;
  auto* experiment = app.add_subcommand("experiment", "run one experiment and write its report");
  experiment->add_option("id", experiment_id,
                         "generalization, efficiency, adaptation, gradient, pendulum or closedloop");
  experiment->add_option("--set", sets, "override a config key (key=value)");

  SystemArgs mc_system, train_system, eval_system;
  LatticeArgs mc_lattice, eval_lattice, tps_lattice, oracle_lattice;
  long samples = 1000;
  double dt = 0.0;
  bool shared = false, bridge = false;
  auto* mc = app.add_subcommand("mc-grid", "Monte Carlo risk probabilities on a lattice");
  mc_system.add(mc);
  mc_lattice.add(mc);
  mc->add_option("--samples", samples, "trajectories per cell")->capture_default_str();
  mc->add_option("--dt", dt, "simulation step (default 0.01, cart-pendulum 0.001)");
  mc->add_flag("--shared-paths", shared, "one path ensemble per state point for all horizons");
  mc->add_flag("--bridge", bridge, "Brownian-bridge boundary monitoring");

  std::vector<std::string> data;
  auto* tr = app.add_subcommand("train", "train a network on MC datasets");
  train_system.add(tr);
  tr->add_option("--data", data, "dataset CSV (repeatable)");

  std::string model, reference;
  int axis = -1;
  auto* ev = app.add_subcommand("eval", "evaluate a trained network on a lattice");
  eval_system.add(ev);
  eval_lattice.add(ev);
  ev->add_option("--model", model, "checkpoint file")->required();
  ev->add_option("--gradient-axis", axis, "write dF/dx along this state axis instead");
  ev->add_option("--reference", reference, "dataset on the same lattice to report MAE against");

  std::string tps_data;
  double regularization = 0.0;
  auto* tp = app.add_subcommand("tps", "thin-plate spline fit of a dataset");
  tp->add_option("--data", tps_data, "dataset CSV")->required();
  tp->add_option("--regularization", regularization, "smoothing parameter")->capture_default_str();
  tps_lattice.add(tp);

  double oracle_lambda = 1.0;
  bool oracle_gradient = false;
  auto* orc = app.add_subcommand("oracle", "closed-form recovery probability of drift1d");
  orc->add_option("--lambda", oracle_lambda, "drift parameter lambda")->capture_default_str();
  orc->add_flag("--gradient", oracle_gradient, "write dF/dx instead");
  oracle_lattice.add(orc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (seed_opt->count()) g.seed = seed;
  if (threads_opt->count()) g.threads = threads;

  try {
    if (*experiment) return cmd_experiment(g, experiment_id, sets);
    if (*mc) return cmd_mc_grid(g, mc_system, mc_lattice, samples, dt, shared, bridge);
    if (*tr) return cmd_train(g, train_system, data);
    if (*ev) {
      return cmd_eval(g, eval_system, eval_lattice, model,
                      axis >= 0 ? std::optional<int>(axis) : std::nullopt, reference);
    }
    if (*tp) return cmd_tps(g, tps_lattice, tps_data, regularization);
    if (*orc) return cmd_oracle(g, oracle_lattice, oracle_lambda, oracle_gradient);
  } catch (const ParseFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 2;
}

}  // namespace riskpipe
