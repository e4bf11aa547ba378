#include <cmath>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "pipe/montecarlo.hpp"
#include "pipe/training.hpp"

using namespace riskpipe;

namespace {

PdeSpec drift_spec() {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, 1.0);
  return make_pde_spec(sys, safe, {-10.0}, {2.0}, 0.0, 10.0);
}

BoundarySampler recovery_edge() {
  return [](RngStream&, double* x) { x[0] = 2.0; };
}

ProbabilityGrid oracle_dataset(double x_lo, double x_hi, double dx, double dt) {
  const auto spec = make_grid_1d_spacing(x_lo, x_hi, dx, 0.0, 10.0, dt, 1.0);
  ProbabilityGrid g{spec, std::vector<double>(spec.cell_count()), 1000, Mode::Recovery, Source::Oracle};
  for (std::size_t c = 0; c < spec.cell_count(); ++c) {
    const double x = spec.state_at(c)[0];
    g.values[c] = x >= 2.0 ? 1.0 : oracle_recovery_probability(x, spec.t_at(c), 1.0);
  }
  return g;
}

TrainConfig small_config() {
  TrainConfig c;
  c.epochs = 50;
  c.physics_points = 200;
  c.initial_points = 50;
  c.boundary_points = 50;
  c.hidden_layers = 2;
  c.width = 8;
  c.checkpoint_every = 10;
  return c;
}

}  // namespace

TEST(Collocation, NoDataRowsIsAnError) {
  const auto spec = drift_spec();
  try {
    sample_collocation(small_config(), spec, {}, recovery_edge());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoData);
  }
}

TEST(Collocation, RegionRestrictionAndInteriorPoints) {
  auto cfg = small_config();
  cfg.physics_points = 10000;
  const auto spec = drift_spec();
  const auto data = oracle_dataset(-10.0, 2.0, 0.4, 0.5);
  const auto sets = sample_collocation(cfg, spec, {data}, recovery_edge(), DataRegion{{-10.0}, {-2.0}});
  EXPECT_EQ(sets.data.cols(), 21 * 21);
  for (Eigen::Index j = 0; j < sets.data.cols(); ++j) EXPECT_LE(sets.data(0, j), -2.0);
  for (Eigen::Index j = 0; j < sets.physics.cols(); ++j) {
    EXPECT_GT(sets.physics(0, j), -10.0);
    EXPECT_LT(sets.physics(0, j), 2.0);
    EXPECT_GT(sets.physics(1, j), 0.0);
    EXPECT_LT(sets.physics(1, j), 10.0);
  }
  for (Eigen::Index j = 0; j < sets.initial.cols(); ++j) {
    EXPECT_EQ(sets.initial(1, j), 0.0);
    EXPECT_EQ(sets.initial_target[j], sets.initial(0, j) >= 2.0 ? 1.0 : 0.0);
  }
  EXPECT_TRUE((sets.boundary_target.array() == 1.0).all());
}

TEST(Collocation, DeterministicPerSeed) {
  const auto spec = drift_spec();
  const auto data = oracle_dataset(-10.0, 2.0, 1.0, 1.0);
  const auto a = sample_collocation(small_config(), spec, {data}, recovery_edge());
  const auto b = sample_collocation(small_config(), spec, {data}, recovery_edge());
  EXPECT_EQ(a.physics, b.physics);
  EXPECT_EQ(a.boundary, b.boundary);
}

TEST(Loss, ComponentsSumToTotal) {
  const auto spec = drift_spec();
  auto cfg = small_config();
  cfg.w_physics = 0.5;
  cfg.w_ic = 2.0;
  const auto sets = sample_collocation(cfg, spec, {oracle_dataset(-10, 2, 1.0, 1.0)}, recovery_edge());
  const auto p = initial_params(cfg, spec);
  const auto l = total_loss(p, sets, spec, cfg);
  EXPECT_DOUBLE_EQ(l.total, 0.5 * l.physics + l.data + 2.0 * l.initial + l.boundary);
  EXPECT_GT(l.data, 0.0);
  EXPECT_GE(l.physics, 0.0);
}

TEST(Loss, ZeroPhysicsWeightIsPureRegression) {
  const auto spec = drift_spec();
  auto cfg = small_config();
  cfg.w_physics = 0.0;
  cfg.w_ic = 0.0;
  cfg.w_bc = 0.0;
  const auto sets = sample_collocation(cfg, spec, {oracle_dataset(-10, 2, 1.0, 1.0)}, recovery_edge());
  const auto p = initial_params(cfg, spec);
  const auto l = total_loss(p, sets, spec, cfg);
  double mse = 0.0;
  for (Eigen::Index j = 0; j < sets.data.cols(); ++j) {
    const std::vector<double> x{sets.data(0, j), sets.data(1, j)};
    const double e = forward(p, x) - sets.data_target[j];
    mse += e * e;
  }
  EXPECT_NEAR(l.total, mse / static_cast<double>(sets.data.cols()), 1e-12);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  const auto spec = drift_spec();
  auto cfg = small_config();
  cfg.physics_points = 30;
  const auto sets = sample_collocation(cfg, spec, {oracle_dataset(-10, 2, 2.0, 2.0)}, recovery_edge());
  auto p = initial_params(cfg, spec);
  PinnObjective obj(sets, spec, cfg);
  Eigen::VectorXd grad;
  obj.evaluate(p, &grad);
  RngStream rng(5);
  Eigen::VectorXd v(p.theta.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  v.normalize();
  const double h = 1e-5;
  auto up = p, dn = p;
  up.theta += h * v;
  dn.theta -= h * v;
  const double fd = (obj.evaluate(up, nullptr).total - obj.evaluate(dn, nullptr).total) / (2 * h);
  EXPECT_NEAR(grad.dot(v), fd, 1e-4 * std::max(1.0, std::abs(fd)));
}

TEST(Adam, ZeroGradientLeavesParameters) {
  TrainConfig cfg;
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(3, 0.5);
  AdamState st;
  adam_step(theta, Eigen::VectorXd::Zero(3), st, cfg);
  EXPECT_TRUE((theta.array() == 0.5).all());
  EXPECT_TRUE((st.m.array() == 0.0).all());
}

TEST(Adam, MomentsDecayUnderZeroGradient) {
  TrainConfig cfg;
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(3, 0.5);
  AdamState st;
  adam_step(theta, Eigen::VectorXd::Constant(3, 1.0), st, cfg);
  const Eigen::VectorXd m = st.m, v = st.v;
  adam_step(theta, Eigen::VectorXd::Zero(3), st, cfg);
  EXPECT_TRUE(st.m.isApprox(cfg.beta1 * m));
  EXPECT_TRUE(st.v.isApprox(cfg.beta2 * v));
}

TEST(Adam, FirstStepIsLearningRate) {
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 0.0);
  AdamState st;
  TrainConfig cfg;
  adam_step(theta, Eigen::VectorXd::Constant(1, 1.0), st, cfg);
  EXPECT_NEAR(theta[0], -0.001, 1e-10);
}

TEST(Adam, ConvergesOnQuadratic) {
  Eigen::VectorXd w = Eigen::VectorXd::Constant(1, 1.0);
  AdamState st;
  TrainConfig cfg;
  long steps = 0;
  while (std::abs(w[0]) >= 1e-3 && steps < 5000) {
    adam_step(w, 2.0 * w, st, cfg);
    ++steps;
  }
  EXPECT_LT(std::abs(w[0]), 1e-3);
  EXPECT_LE(steps, 5000);
}

TEST(Train, EpochsMustBePositive) {
  const auto spec = drift_spec();
  auto cfg = small_config();
  const auto sets = sample_collocation(cfg, spec, {oracle_dataset(-10, 2, 1.0, 1.0)}, recovery_edge());
  cfg.epochs = 0;
  EXPECT_THROW(train(cfg, sets, spec), Error);
}

TEST(Train, DeterministicHistoryAndCheckpoints) {
  const auto spec = drift_spec();
  const auto cfg = small_config();
  const auto sets = sample_collocation(cfg, spec, {oracle_dataset(-10, 2, 1.0, 1.0)}, recovery_edge());
  const auto a = train(cfg, sets, spec);
  const auto b = train(cfg, sets, spec);
  ASSERT_EQ(a.report.history.size(), 50u);
  for (std::size_t e = 0; e < 50; ++e) EXPECT_EQ(a.report.history[e].total, b.report.history[e].total);
  EXPECT_EQ(a.params.theta, b.params.theta);
  // epochs 10..40 plus the final one
  ASSERT_EQ(a.report.checkpoints.size(), 5u);
  EXPECT_EQ(a.report.checkpoints.back().epoch, 50);
  EXPECT_EQ(a.report.checkpoints.back().params.theta, a.params.theta);
  EXPECT_LT(a.report.history.back().total, a.report.history.front().total);
}

TEST(Train, WritesCheckpointsAndHistory) {
  const auto dir = std::filesystem::temp_directory_path() / "pipe_train_test";
  std::filesystem::remove_all(dir);
  const auto spec = drift_spec();
  auto cfg = small_config();
  cfg.checkpoint_dir = dir.string();
  const auto sets = sample_collocation(cfg, spec, {oracle_dataset(-10, 2, 1.0, 1.0)}, recovery_edge());
  const auto r = train(cfg, sets, spec);
  const auto back = read_checkpoint(r.report.checkpoints.back().path);
  EXPECT_EQ(back.theta, r.params.theta);
  std::stringstream csv;
  write_loss_history(r.report, csv);
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "epoch,L,L_p,L_d,L_ic,L_bc");
  std::filesystem::remove_all(dir);
}

TEST(Train, NonFiniteLossAbortsWithEpoch) {
  const auto spec = drift_spec();
  auto cfg = small_config();
  cfg.learning_rate = 1e300;
  const auto sets = sample_collocation(cfg, spec, {oracle_dataset(-10, 2, 1.0, 1.0)}, recovery_edge());
  try {
    train(cfg, sets, spec);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonFiniteGradient);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Predict, ZeroNetGivesZeros) {
  const auto spec = drift_spec();
  auto p = initial_params(small_config(), spec);
  p.theta.setZero();
  const auto lattice = make_grid_1d(-10, 2, 13, 0, 10, 11, 1.0);
  const auto g = predict_grid(p, lattice, Mode::Recovery);
  const auto d = predict_gradient_grid(p, lattice, 0);
  for (double v : g.values) EXPECT_EQ(v, 0.0);
  for (double v : d.values) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(lattice_within_bounds(p, lattice));
  EXPECT_FALSE(lattice_within_bounds(p, make_grid_1d(-12, 2, 3, 0, 10, 2, 1.0)));
}

TEST(Predict, GradientGridMatchesJet) {
  const auto spec = drift_spec();
  const auto p = initial_params(small_config(), spec);
  const auto lattice = make_grid_1d(-9, 1, 6, 1, 9, 5, 1.0);
  const auto d = predict_gradient_grid(p, lattice, 0);
  for (std::size_t c = 0; c < lattice.cell_count(); ++c) {
    const std::vector<double> x{lattice.state_at(c)[0], lattice.t_at(c)};
    EXPECT_NEAR(d.values[c], forward_jet(p, x).input_grad[0], 1e-14);
  }
  EXPECT_THROW(predict_gradient_grid(p, lattice, 1), Error);
}

TEST(Config, KeyValueRoundTrip) {
  TrainConfig c = small_config();
  c.lambda_input = true;
  c.state_lo = {-1.0, -2.0};
  c.state_hi = {1.0, 2.5};
  KeyValues kv;
  c.write_key_values(kv);
  const auto back = TrainConfig::from_key_values(kv);
  KeyValues kv2;
  back.write_key_values(kv2);
  EXPECT_EQ(kv.entries(), kv2.entries());
}
