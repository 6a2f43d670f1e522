#pragma once

// Exponential map (initial value problem), logarithmic map (boundary value
// problem with a fixed-point -> collocation solver chain) and a cache of
// previously solved boundary value problems.

#include "rbq/bvp.hpp"
#include "rbq/metrics.hpp"
#include "rbq/ode.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace rbq {

enum class SolverTag { Shooting, FixedPoint, Collocation, Chained, CacheSeeded };

std::string to_string(SolverTag tag);

struct GeodesicSolution {
  DenseTrajectory trajectory;  // state [gamma; gamma'] over t in [0, 1]
  Vec endpoint;
  Vec initial_velocity;
  double length = 0.0;
  bool converged = false;
  double residual = 0.0;
  SolverTag solver = SolverTag::Shooting;

  int dim() const { return static_cast<int>(endpoint.size()); }
  Vec point(double t) const;
  Vec velocity(double t) const;
  /// n evenly spaced samples of gamma over [0, 1].
  SampledCurve sample(int n) const;
};

/// Geodesic solver breakdown. For the exponential map the partial trajectory
/// up to the failure time is attached.
class GeodesicFailure : public NumericalError {
 public:
  explicit GeodesicFailure(const std::string& what, std::optional<GeodesicSolution> partial = std::nullopt)
      : NumericalError(what), partial_(std::move(partial)) {}
  const std::optional<GeodesicSolution>& partial() const { return partial_; }

 private:
  std::optional<GeodesicSolution> partial_;
};

struct ExpMapOptions {
  double rtol = 1e-3;
  double atol = 1e-3;
  bool compute_length = true;  // quadrature along the solution; skipped in hot loops
  int length_samples = 51;
};

/// Solve gamma'' = -Gamma(gamma', gamma'), gamma(0) = mu, gamma'(0) = v on [0, 1].
GeodesicSolution exp_map(const Metric& metric, const Vec& mu, const Vec& v, const ExpMapOptions& opts = {});

/// Solved boundary value problems keyed by the target point. A lookup for
/// (x, mu) returns the stored solution whose base point is nearest to mu,
/// provided it lies within `threshold`.
class GeodesicCache {
 public:
  explicit GeodesicCache(double threshold = 0.5);
  GeodesicCache(const GeodesicCache&) = delete;
  GeodesicCache& operator=(const GeodesicCache&) = delete;

  double threshold() const { return threshold_; }
  std::optional<GeodesicSolution> lookup(const Vec& x, const Vec& mu) const;
  /// Replaces an existing entry with the same (x, mu).
  void insert(const Vec& x, const Vec& mu, const GeodesicSolution& sol);
  std::size_t size() const;
  void clear();

  /// Line-record persistence (hexadecimal floats, exact round trip).
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  struct Entry {
    Vec mu;
    GeodesicSolution solution;
  };
  static std::string key_of(const Vec& x);

  double threshold_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::vector<Entry>> entries_;
};

struct LogMapOptions {
  FixedPointOptions fixed_point;
  CollocationOptions collocation;
  /// Shooting refinement after collocation (0 iterations disables it). The
  /// refined velocity v satisfies |Exp_mu(v) - x| <= shooting_tolerance (1 + |x|)
  /// when achievable, with Exp evaluated using `shooting`.
  int shooting_iterations = 8;
  double shooting_tolerance = 1e-8;
  ExpMapOptions shooting;
  int length_samples = 51;
};

/// Initial velocity of the geodesic from mu reaching x at t = 1.
/// Chain: cached curve (if any) or fixed-point pre-solver, then collocation,
/// then shooting refinement. Throws GeodesicFailure when the pre-solver
/// fails. When the collocation refinement fails the pre-solver curve is
/// returned with converged = false. Converged solutions are inserted into
/// `cache`.
GeodesicSolution log_map(const Metric& metric, const Vec& mu, const Vec& x, GeodesicCache* cache = nullptr,
                         const LogMapOptions& opts = {});

}  // namespace rbq
