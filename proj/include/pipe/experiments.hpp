#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pipe/config.hpp"
#include "pipe/dynamics.hpp"
#include "pipe/grid.hpp"
#include "pipe/physics.hpp"
#include "pipe/report.hpp"
#include "pipe/training.hpp"

namespace riskpipe {

enum class ExperimentId { Generalization, Efficiency, Adaptation, Gradient, Pendulum, ClosedLoop };

ExperimentId parse_experiment_id(std::string_view text);
std::string_view to_string(ExperimentId id);

// Everything an experiment run depends on. Seeds for the individual MC grids
// and the training run are derived from seed unless set explicitly.
struct ExperimentConfig {
  ExperimentId id = ExperimentId::Generalization;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: hardware concurrency
  TrainConfig train;

  double lambda = 1.0;
  double mc_dt = 0.01;
  long samples = 1000;
  long reference_samples = 100000;
  std::vector<double> sample_numbers{10, 50, 100, 500, 1000};
  bool infinite_row = true;
  std::vector<double> lambda_train{0.1, 0.5, 0.8, 1.0};
  std::vector<double> lambda_test{0.3, 0.7, 1.2, 1.5, 2.0};

  // Supervision lattice (state axis restricted to [data_x_lo, data_x_hi]).
  double data_x_lo = -10.0;
  double data_x_hi = -2.0;
  double data_dx = 0.4;
  double data_dt = 0.5;
  // Evaluation lattice spacing over the full training domain.
  double eval_dx = 0.2;
  double eval_dt = 0.1;

  int pendulum_train_points = 9;
  int pendulum_test_points = 7;
  int pendulum_time_points = 10;
  double pendulum_sigma = 1.0;
  double pendulum_budget_seconds = 1800.0;  // 0 disables lattice reduction

  std::vector<std::string> datasets;  // replace generated training data
  std::string output_dir;             // not part of the embedded config

  static ExperimentConfig defaults(ExperimentId id, std::uint64_t seed = 1);
  // Starts from defaults(experiment, seed) and overlays kv; unknown keys are
  // a ConfigError.
  static ExperimentConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
  void validate() const;
};

// Reads a key=value file, or the embedded configuration of a report CSV.
KeyValues load_config_file(const std::string& path);

// System, PDE and boundary sampler for a built-in system over the training
// domain of train.
struct SystemSetup {
  SdeSystem system;
  SafeSet safe;
  PdeSpec pde;
  BoundarySampler boundary;
};

SystemSetup make_setup(BuiltinSystem which, double lambda, const TrainConfig& train,
                       double pendulum_sigma = 1.0);
// Training domain and state map defaults for a built-in system.
TrainConfig default_train_config(BuiltinSystem which);

struct ExperimentResult {
  MetricsReport report;
  std::optional<MlpParams> model;
  std::optional<TrainReport> training;
  std::vector<std::pair<std::string, ProbabilityGrid>> datasets;
  std::vector<PlotTable> plots;
  std::vector<std::pair<std::string, double>> timings;  // seconds
};

ExperimentResult run_generalization(const ExperimentConfig& config);
ExperimentResult run_efficiency(const ExperimentConfig& config);
ExperimentResult run_adaptation(const ExperimentConfig& config);
// Uses pretrained when given; otherwise trains the generalization model.
ExperimentResult run_gradient(const ExperimentConfig& config, const MlpParams* pretrained = nullptr);
ExperimentResult run_pendulum(const ExperimentConfig& config);
ExperimentResult run_closedloop(const ExperimentConfig& config);
ExperimentResult run_experiment(const ExperimentConfig& config);

// report.csv, config.txt, runtime.txt, loss.csv, model.ckpt, data_*.csv and,
// with plot_data, plot_*.csv.
void write_outputs(const ExperimentResult& result, const std::string& dir, bool plot_data);

// Metric helpers shared with the acceptance binary.
double oracle_value(double x, double horizon, double lambda);
double oracle_gradient(double x, double horizon, double lambda);
ProbabilityGrid oracle_grid(const GridSpec& spec);
GradientGrid oracle_gradient_grid(const GridSpec& spec);
// T = t_lo and |phi(x)| below the smallest state spacing.
bool is_excluded_corner(const GridSpec& spec, const SafeSet& safe, std::size_t cell);

}  // namespace riskpipe
