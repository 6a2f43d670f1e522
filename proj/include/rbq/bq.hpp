#pragma once

// Warped Bayesian quadrature against a zero-mean Gaussian measure on the
// tangent space. The square root of the (positive) integrand is modelled by
// a GP; integrals are taken by quasi-Monte Carlo over the posterior mean.

#include "rbq/common.hpp"
#include "rbq/gp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace rbq {

class Metric;
struct GeodesicSolution;

/// N(0, Sigma) on R^D.
class GaussianMeasure {
 public:
  explicit GaussianMeasure(const Mat& covariance);

  int dim() const { return static_cast<int>(cov_.rows()); }
  const Mat& covariance() const { return cov_; }
  const Mat& precision() const { return prec_; }
  /// Lower Cholesky factor of Sigma.
  const Mat& factor() const { return chol_; }
  double log_det() const { return log_det_; }

  double log_density(const Vec& v) const;
  double density(const Vec& v) const;
  /// sqrt((2 pi)^D |Sigma|), the mass of exp(-v' Sigma^-1 v / 2).
  double normalizer() const;

 private:
  Mat cov_, prec_, chol_;
  double log_det_ = 0.0;
};

enum class WarpMode { Linearized, MomentMatched };  // WSABI-L, WSABI-M

std::string to_string(WarpMode m);

/// f = sqrt(2 (g - delta)); g below delta is clamped (flag set when it was).
double warp(double g, double delta, bool* clamped = nullptr);

/// delta = 1e-3 * min(g), floored at 1e-10.
double choose_delta(const Vec& g);

/// Constant f-space prior mean that makes the unwarped prior mean equal to
/// `g_prior` (0 when g_prior <= delta).
double warped_prior_mean(double g_prior, double delta);

/// GP over f = sqrt(2(g - delta)) together with the unwarped moments
///   m~(v)    = delta + m(v)^2 / 2 + eta k(v,v) / 2
///   k~(v,v') = m(v) k(v,v') m(v')  + eta k(v,v')^2 / 2
class WarpedIntegrandModel {
 public:
  WarpedIntegrandModel(Kernel kernel, double delta, WarpMode mode, double f_prior_mean = 0.0);

  WarpMode mode() const { return mode_; }
  double eta() const { return mode_ == WarpMode::MomentMatched ? 1.0 : 0.0; }
  double delta() const { return delta_; }
  GaussianProcess& gp() { return gp_; }
  const GaussianProcess& gp() const { return gp_; }
  int size() const { return gp_.size(); }
  int dim() const { return gp_.dim(); }
  /// Raw integrand values in insertion order.
  const Vec& g_values() const { return g_; }
  /// Observations whose g fell below delta and were clamped.
  int clamped() const { return clamped_; }

  void add(const Vec& v, double g);
  /// Replaces all observations (inputs as columns).
  void condition(const Mat& inputs, const Vec& g);

  struct Moments {
    double mean;      // m~(v)
    double variance;  // k~(v, v)
  };
  Moments unwarp_moments(const Vec& v) const;
  double unwarped_covariance(const Vec& v, const Vec& w) const;
  /// Unwarped moments with gradients in v.
  void unwarp_with_gradient(const Vec& v, Moments& m, Vec& dmean, Vec& dvar) const;
  /// Unwarped posterior means at the columns of `points`.
  Vec unwarped_mean_batch(const Mat& points) const;

 private:
  GaussianProcess gp_;
  double delta_;
  WarpMode mode_;
  Vec g_;
  int clamped_ = 0;
};

// ---------------------------------------------------------------------------
// Integral posterior

struct IntegralOptions {
  int samples = 30000;          // draws from the measure
  int variance_samples = 500;   // leading draws used for the double sum
  std::uint64_t seed = 0;
  bool with_variance = true;
};

/// Integrals of the unwarped GP against the measure. Multiply by
/// GaussianMeasure::normalizer() to integrate against exp(-v'S^-1 v/2).
struct IntegralPosterior {
  double mean = 0.0;            // int m~ dpi
  double variance = 0.0;        // int int k~ dpi dpi
  double standard_error = 0.0;  // sd / sqrt(S); conservative for the shifted Sobol draws
  Vec vector, vector_se;        // int v m~ dpi
  Mat matrix, matrix_se;        // int v v' m~ dpi
  int samples = 0;
};

/// Standard-normal draws (D x S) shared by every integral with the same
/// (D, S, seed): a randomly shifted Sobol sequence pushed through the
/// inverse normal cdf, whitened to zero mean and identity covariance.
/// Thread-safe, cached.
const Mat& standard_draws(int dim, int samples, std::uint64_t seed);

IntegralPosterior integral_posterior(const WarpedIntegrandModel& model, const GaussianMeasure& measure,
                                     const IntegralOptions& opts = {});
Vec vector_integral(const WarpedIntegrandModel& model, const GaussianMeasure& measure,
                    const IntegralOptions& opts = {});
Mat matrix_integral(const WarpedIntegrandModel& model, const GaussianMeasure& measure,
                    const IntegralOptions& opts = {});

// ---------------------------------------------------------------------------
// Uncertainty sampling

/// u(v) = k~(v,v) pi(v)^2.
double uncertainty(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& v);
/// log u(v) and its gradient; -inf where k~ vanishes.
double log_uncertainty(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& v,
                       Vec* grad = nullptr);

struct AcquisitionOptions {
  int starts = 10;        // gradient-ascent starts drawn from the measure
  int candidates = 100;   // random candidates screened for the incumbent
  int max_iterations = 60;
  double tolerance = 1e-9;
  std::uint64_t seed = 0;
};

Vec uncertainty_sampling_next(const WarpedIntegrandModel& model, const GaussianMeasure& measure,
                              const AcquisitionOptions& opts = {});

// ---------------------------------------------------------------------------
// Directional cumulative variance

/// Composite Simpson on evenly spaced samples; an odd number of intervals
/// ends with a 3/8-rule panel. Exact for cubics.
double simpson(const Vec& y, double h);
/// Weights w with simpson(y, h) = h * w.dot(y).
Vec simpson_weights(int n);

/// Length alpha with (alpha r)' Sigma^-1 (alpha r) = chi2_{D}(p).
double alpha_max(const GaussianMeasure& measure, const Vec& r, double p = 0.995);

struct DcvOptions {
  int nodes = 50;
  double p = 0.995;
  int max_steps = 15;
  int linesearch_steps = 5;
  double initial_step = 1.0;
  double optimism = 2.0;
  double contraction = 0.5;
  double sufficient_increase = 1e-4;
  double min_step = 1e-10;
  int initial_directions = 16;
  std::uint64_t seed = 0;
};

/// ubar(r) = int_0^alpha_max u(beta r) dbeta.
double dcv_objective(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& r,
                     const DcvOptions& opts = {});
/// Gradient of the discretized ubar in r, projected on the tangent plane
/// of the sphere at r. Optionally returns the objective value.
Vec dcv_gradient(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& r,
                 const DcvOptions& opts = {}, double* value = nullptr);

/// Riemannian gradient ascent of ubar over the unit sphere with a
/// backtracking line search and the retraction (r + xi) / |r + xi|.
Vec dcv_select_direction(const WarpedIntegrandModel& model, const GaussianMeasure& measure,
                         const DcvOptions& opts = {});

struct RayObservationBatch {
  Vec direction;
  std::vector<double> alphas;   // sorted ascending
  std::vector<double> g_values; // matching alphas
  long source = -1;             // id of the geodesic the values came from
};

/// Picks `picks` of `candidates` evenly spaced points on (0, alpha] r by
/// sequential uncertainty sampling and adds them to the model. Integrand
/// values come from the dense output of `geodesic`, which must be the
/// solution of Exp_mu(alpha r).
RayObservationBatch dcv_collect_along_ray(WarpedIntegrandModel& model, const Metric& metric,
                                          const GeodesicSolution& geodesic, const GaussianMeasure& measure,
                                          const Vec& r, double alpha, int candidates = 30, int picks = 6,
                                          long source = -1);

}  // namespace rbq
