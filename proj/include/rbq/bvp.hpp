#pragma once

// Two-point boundary value solvers for the geodesic equation
//   gamma'' = a(gamma, gamma'),  gamma(0) = start,  gamma(1) = end.
// The state is y = [gamma; gamma'] (2D rows).

#include "rbq/metrics.hpp"
#include "rbq/ode.hpp"

#include <string>
#include <vector>

namespace rbq {

struct FixedPointOptions {
  int max_iterations = 1000;
  int mesh_nodes = 10;
  double tolerance = 0.1;
  double model_noise = 1e-4;
};

struct CollocationOptions {
  int max_nodes = 100;
  double tolerance = 0.1;
  int seed_nodes = 20;
  int max_newton_iterations = 30;
};

struct BvpSolution {
  bool converged = false;
  std::vector<double> mesh;  // knots in [0, 1]
  Mat y;                     // 2D x n states at the knots
  Mat f;                     // 2D x n state derivatives at the knots
  double residual = 0.0;     // largest normalized residual
  int iterations = 0;
  std::string message;

  DenseTrajectory trajectory() const { return DenseTrajectory::hermite(mesh, y, f); }
};

/// Fixed-point pre-solver: the curve is a straight line plus a sine series
/// (one basis function per mesh node, vanishing at both ends). Each sweep
/// regresses the series' second derivative onto the geodesic accelerations
/// evaluated along the current curve, with ridge `model_noise`. The solver
/// reports convergence when the final sweep changes the coefficients by at
/// most `tolerance` (relative); `residual` is the RMS normalized mismatch
/// between curve and geodesic accelerations at interval midpoints.
BvpSolution solve_geodesic_fixed_point(const Metric& metric, const Vec& start, const Vec& end,
                                       const FixedPointOptions& opts = {});

/// Damped-Newton collocation (4th-order Hermite-Simpson) with adaptive mesh
/// refinement. `mesh`/`guess` give the initial knots and states; the guess
/// need not satisfy the boundary conditions.
BvpSolution solve_geodesic_collocation(const Metric& metric, const Vec& start, const Vec& end,
                                       std::vector<double> mesh, Mat guess, const CollocationOptions& opts = {});

/// Evenly spaced seed for the collocation solver taken from a trajectory
/// over [0, 1]; positions are shifted by (1 - t)(start - traj_start) so the
/// seed starts at `start`.
void seed_from_trajectory(const DenseTrajectory& traj, const Vec& start, int nodes, std::vector<double>& mesh,
                          Mat& guess);

}  // namespace rbq
