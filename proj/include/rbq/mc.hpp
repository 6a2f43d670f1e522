#pragma once

// Naive Monte Carlo estimates of the tangent-space integrals
//   C   = int g(v) exp(-v'S^-1 v / 2) dv
//   c_v = int v g(v) exp(...) dv,   C_M = int v v' g(v) exp(...) dv
// with g(v) = sqrt|M(Exp_mu(v))|, plus the persisted ground-truth pools the
// benchmarks subsample from.

#include "rbq/common.hpp"
#include "rbq/geodesics.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace rbq {

/// More than half of the geodesics failed.
class UnreliableEstimate : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Exp-map settings used for integrand evaluations (no length quadrature).
ExpMapOptions integrand_exp_options();

/// g_mu(v) = sqrt|M(Exp_mu(v))|; v = 0 needs no geodesic. Throws
/// GeodesicFailure when the exponential map breaks down.
double tangent_integrand(const Metric& metric, const Vec& mu, const Vec& v,
                         const ExpMapOptions& opts = integrand_exp_options());

struct McEstimate {
  double value = 0.0;
  double standard_error = 0.0;
  Vec vector, vector_se;
  Mat matrix, matrix_se;
  int sample_count = 0;  // successful samples
  int failures = 0;
  double wall_clock = 0.0;  // seconds
  // per-sample cache of the successful draws
  Mat v;  // D x S
  Vec g;
  Vec runtime_ms;
};

/// Estimate from given draws of N(0, Sigma) and their integrand values.
McEstimate estimate_from_samples(const Mat& sigma, const Mat& v, const Vec& g);

/// S draws v ~ N(0, Sigma) (seeded, generated up front), integrand evaluated
/// on `threads` workers. Failed geodesics are dropped and counted; more than
/// 50% failures raises UnreliableEstimate.
McEstimate mc_normalization(const Metric& metric, const Vec& mu, const Mat& sigma, int samples, std::uint64_t seed,
                            int threads = 1);

/// Sequential sampling until `seconds` of wall-clock have elapsed (at least
/// one sample).
McEstimate mc_time_limited(const Metric& metric, const Vec& mu, const Mat& sigma, double seconds,
                           std::uint64_t seed);

/// Persisted extensive-MC sample set for one integration problem.
struct GroundTruthPool {
  std::string problem_id;
  Vec mu;
  Mat sigma;
  std::uint64_t seed = 0;
  int failures = 0;
  Mat v;  // successful draws, D x S
  Vec g;
  Vec runtime_ms;

  int size() const { return static_cast<int>(g.size()); }
  double mean_runtime_ms() const;
  McEstimate estimate() const;
  /// A non-empty header is written as '#' lines after the format tag.
  void save(const std::filesystem::path& path, const std::string& header = "") const;
  static GroundTruthPool load(const std::filesystem::path& path);
};

GroundTruthPool build_ground_truth(const Metric& metric, const std::string& problem_id, const Vec& mu,
                                   const Mat& sigma, int samples, std::uint64_t seed, int threads = 0);

/// `count` pool samples drawn without replacement.
McEstimate mc_subsample(const GroundTruthPool& pool, int count, std::uint64_t seed);
/// count = floor(budget / mean per-sample runtime), at least 1.
McEstimate mc_subsample_runtime(const GroundTruthPool& pool, double budget_seconds, std::uint64_t seed);

}  // namespace rbq
