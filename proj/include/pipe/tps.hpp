#pragma once

#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>
#include <Eigen/QR>

#include "pipe/error.hpp"

namespace riskpipe {

enum class TpsStatus { Ok, Degenerate };

// s(p) = a0 + a1 x + a2 T + sum_i w_i U(|p - p_i|), U(r) = r^2 log r.
struct TpsModel {
  Eigen::MatrixX2d nodes;
  Eigen::VectorXd radial;  // w_i
  Eigen::Vector3d affine = Eigen::Vector3d::Zero();
  double regularization = 0.0;
  TpsStatus status = TpsStatus::Ok;
};

inline double tps_kernel(double r) { return r > 0.0 ? r * r * std::log(r) : 0.0; }

inline TpsModel tps_fit(const Eigen::MatrixX2d& points, const Eigen::VectorXd& values,
                        double regularization = 0.0) {
  const Eigen::Index n = points.rows();
  require(values.size() == n, ErrorKind::BadShape, "one value per node expected");
  require(n >= 3, ErrorKind::InvalidArgument, "need at least 3 nodes");
  require(regularization >= 0.0, ErrorKind::InvalidArgument, "regularization must be >= 0");

  const Eigen::Index m = n + 3;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double u = tps_kernel((points.row(i) - points.row(j)).norm());
      a(i, j) = u;
      a(j, i) = u;
    }
    a(i, i) = regularization;
    a(i, n) = 1.0;
    a(i, n + 1) = points(i, 0);
    a(i, n + 2) = points(i, 1);
    a(n, i) = 1.0;
    a(n + 1, i) = points(i, 0);
    a(n + 2, i) = points(i, 1);
  }
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  rhs.head(n) = values;

  std::set<std::pair<double, double>> seen;
  bool duplicates = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    duplicates = duplicates || !seen.emplace(points(i, 0), points(i, 1)).second;
  }

  TpsModel model;
  model.nodes = points;
  model.regularization = regularization;
  Eigen::VectorXd sol;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!duplicates && lu.isInvertible()) {
    sol = lu.solve(rhs);
    // One step of iterative refinement.
    sol += lu.solve(rhs - a * sol);
  } else {
    sol = a.completeOrthogonalDecomposition().solve(rhs);
    model.status = TpsStatus::Degenerate;
  }
  model.radial = sol.head(n);
  model.affine = sol.tail(3);
  return model;
}

inline double tps_eval(const TpsModel& model, double x, double t) {
  double s = model.affine[0] + model.affine[1] * x + model.affine[2] * t;
  for (Eigen::Index i = 0; i < model.nodes.rows(); ++i) {
    const double dx = x - model.nodes(i, 0);
    const double dt = t - model.nodes(i, 1);
    s += model.radial[i] * tps_kernel(std::sqrt(dx * dx + dt * dt));
  }
  return s;
}

}  // namespace riskpipe
