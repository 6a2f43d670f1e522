#pragma once

// Adaptive Dormand-Prince 5(4) integration with continuous (dense) output,
// and the piecewise-polynomial trajectory type shared with the BVP solvers.

#include "rbq/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rbq {

/// One polynomial piece:  y(t0 + theta h) = y0 + h * Q * [theta, theta^2, ..., theta^p].
struct DenseSegment {
  double t0 = 0.0;
  double h = 0.0;
  Vec y0;
  Mat q;  // n x p

  Vec value(double theta) const;
  Vec derivative(double theta) const;  // dy/dt
};

/// Piecewise-polynomial interpolant over [t_begin, t_end].
class DenseTrajectory {
 public:
  DenseTrajectory() = default;

  void append(DenseSegment seg) { segments_.push_back(std::move(seg)); }
  bool empty() const { return segments_.empty(); }
  std::size_t size() const { return segments_.size(); }
  const std::vector<DenseSegment>& segments() const { return segments_; }

  double t_begin() const;
  double t_end() const;
  int state_dim() const;

  /// State at t (clamped to the covered interval).
  Vec operator()(double t) const;
  /// Time derivative of the interpolant at t.
  Vec derivative(double t) const;

  /// Cubic Hermite trajectory through knots (t_i, y_i) with slopes f_i.
  static DenseTrajectory hermite(const std::vector<double>& t, const Mat& y, const Mat& f);

 private:
  const DenseSegment& locate(double t, double& theta) const;
  std::vector<DenseSegment> segments_;
};

using OdeRhs = std::function<void(double t, const Vec& y, Vec& dydt)>;

struct OdeOptions {
  double rtol = 1e-3;
  double atol = 1e-3;
  double first_step = 0.0;  // 0 selects automatically
  double max_step = 0.0;    // 0 means unbounded
  int max_steps = 200000;
};

struct OdeResult {
  DenseTrajectory trajectory;
  Vec y_end;
  bool success = false;
  std::string message;
  int steps = 0;
  int rejected = 0;
  int rhs_evals = 0;
};

/// Integrate y' = f(t, y) from t0 to t1 (t1 > t0). Never throws on solver
/// breakdown: success=false and the partial trajectory are returned instead.
OdeResult integrate_dopri5(const OdeRhs& f, double t0, double t1, const Vec& y0, const OdeOptions& opts = {});

}  // namespace rbq
