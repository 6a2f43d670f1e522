#pragma once

// One tangent-space integration problem solved by an active BQ method or by
// naive MC, with observation reuse across covariance-only updates.

#include "rbq/bq.hpp"
#include "rbq/gp.hpp"
#include "rbq/mc.hpp"

#include <cstdint>
#include <string>

namespace rbq {

enum class Method { WsabiL, WsabiM, Dcv, Mc };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct IntegrationProblem {
  std::string id;
  const Metric* metric = nullptr;
  Vec mu;
  Mat sigma;
};

struct IntegrationBudget {
  int samples = 80;        // WSABI observations on a fresh problem
  int reuse_samples = 10;  // ... when observations are reused
  int rays = 18;           // DCV exponential maps on a fresh problem
  int reuse_rays = 2;
  int mc_samples = 1000;
  double time_limit = 0.0;  // seconds; > 0 collects until the limit instead
};

struct BqSettings {
  KernelFamily kernel = KernelFamily::SquaredExponential;
  bool far_field_prior = true;  // prior mean of g = far-field volume element
  int initial_points = 5;       // v = 0 plus points on a small ellipse
  double initial_radius = 0.1;  // in units of Sigma^(1/2)
  int hyperopt_every = 10;      // observations between marginal-likelihood fits
  HyperOptOptions hyperopt;     // restarts apply to the first fit only
  int hyperopt_warm_iterations = 30;
  IntegralOptions integral;
  AcquisitionOptions acquisition;
  DcvOptions dcv;
  int ray_candidates = 30;
  int ray_picks = 6;
  std::uint64_t seed = 0;
};

/// State carried between integrations of one mixture component.
struct BqMemory {
  bool has_kernel = false;
  Kernel kernel;
  bool has_observations = false;
  Vec mu;
  Mat v;  // D x M
  Vec g;
  double delta = 0.0;
};

struct IntegrationResult {
  Method method = Method::WsabiL;
  std::string problem_id;
  double normalization = 0.0;   // int g exp(-v'S^-1 v / 2) dv
  double variance = 0.0;        // BQ posterior variance of the above (0 for MC)
  double standard_error = 0.0;  // sampling error of the estimate
  Vec vector;                   // int v g exp(...) dv
  Mat matrix;                   // int v v' g exp(...) dv
  double wall_clock = 0.0;      // seconds
  int exp_maps = 0;
  int g_evals = 0;
  int failures = 0;
  int reused = 0;  // observations carried over from the previous call
  int new_observations = 0;
  Mat v;  // all observation locations (D x M)
  Vec g;

  /// Tab-separated: method, problem, mean, variance, wall-clock, #exp-maps, #g-evals.
  std::string to_record() const;
  static std::string record_header();
};

/// Integrates g_mu against N(0, Sigma) scaled by sqrt((2 pi)^D |Sigma|).
/// With `memory` holding observations at the same mu, they are re-conditioned
/// and the reuse budget applies; memory is updated on return. Throws
/// NumericalError when no integrand evaluation succeeded.
IntegrationResult run_integration(const IntegrationProblem& problem, Method method, const IntegrationBudget& budget,
                                  const BqSettings& settings = {}, BqMemory* memory = nullptr);

}  // namespace rbq
