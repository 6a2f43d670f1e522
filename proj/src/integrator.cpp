#include "rbq/integrator.hpp"

#include "rbq/geodesics.hpp"
#include "rbq/metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <random>

namespace rbq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::uint64_t mix(std::uint64_t seed, std::uint64_t k) { return derive_seed(seed, k); }

class BqRun {
 public:
  BqRun(const IntegrationProblem& p, Method method, const IntegrationBudget& budget, const BqSettings& s,
        BqMemory* memory)
      : p_(p), method_(method), budget_(budget), s_(s), memory_(memory), measure_(p.sigma), t0_(Clock::now()) {}

  IntegrationResult run();

 private:
  bool evaluate(const Vec& v, double& g);
  void fit_hyperparameters(bool first);
  void after_observations(int added);
  bool keep_going(int added, int target, int attempts) const;

  const IntegrationProblem& p_;
  Method method_;
  const IntegrationBudget& budget_;
  const BqSettings& s_;
  BqMemory* memory_;
  GaussianMeasure measure_;
  Clock::time_point t0_;
  int exp_maps_ = 0, g_evals_ = 0, failures_ = 0, since_fit_ = 0;
  std::unique_ptr<WarpedIntegrandModel> model_;
};

bool BqRun::evaluate(const Vec& v, double& g) {
  try {
    if (!v.isZero(0.0)) ++exp_maps_;
    g = tangent_integrand(*p_.metric, p_.mu, v);
    ++g_evals_;
    if (std::isfinite(g)) return true;
  } catch (const GeodesicFailure&) {
  }
  ++failures_;
  return false;
}

void BqRun::fit_hyperparameters(bool first) {
  if (model_->size() < 2) return;
  HyperOptOptions o = s_.hyperopt;
  o.seed = mix(s_.seed, 7);
  if (!first) {
    o.restarts = 1;
    o.max_iterations = s_.hyperopt_warm_iterations;
  }
  try {
    optimize_hyperparameters(model_->gp(), o);
  } catch (const NumericalError&) {
    // keep the previous hyperparameters
  }
  since_fit_ = 0;
}

void BqRun::after_observations(int added) {
  since_fit_ += added;
  if (since_fit_ >= s_.hyperopt_every) fit_hyperparameters(false);
}

bool BqRun::keep_going(int added, int target, int attempts) const {
  if (budget_.time_limit > 0.0) return seconds_since(t0_) < budget_.time_limit;
  return added < target && attempts < 3 * target + 10;
}

IntegrationResult BqRun::run() {
  const int d = p_.metric->dim();
  const bool reuse = memory_ && memory_->has_observations && memory_->mu.size() == d &&
                     memory_->v.rows() == d && (memory_->mu.array() == p_.mu.array()).all();
  const bool warm_kernel = memory_ && memory_->has_kernel && memory_->kernel.dim() == d;

  Mat v0;
  Vec g0;
  double delta;
  if (reuse) {
    v0 = memory_->v;
    g0 = memory_->g;
    delta = memory_->delta;
  } else {
    // v = 0 is free: a zero-length geodesic
    std::vector<Vec> vs{Vec::Zero(d)};
    std::mt19937_64 rng(mix(s_.seed, 1));
    std::normal_distribution<double> nd;
    for (int i = 1; i < s_.initial_points; ++i) {
      Vec u(d);
      for (int k = 0; k < d; ++k) u[k] = nd(rng);
      vs.push_back(s_.initial_radius * (measure_.factor() * u.normalized()));
    }
    std::vector<Vec> keep_v;
    std::vector<double> keep_g;
    for (const Vec& v : vs) {
      double g;
      if (evaluate(v, g)) {
        keep_v.push_back(v);
        keep_g.push_back(g);
      }
    }
    if (keep_g.empty()) throw NumericalError("integration-failure: no integrand evaluation succeeded");
    v0.resize(d, keep_v.size());
    g0.resize(keep_g.size());
    for (std::size_t i = 0; i < keep_g.size(); ++i) {
      v0.col(i) = keep_v[i];
      g0[i] = keep_g[i];
    }
    delta = choose_delta(g0);
  }

  double f_prior = 0.0;
  if (s_.far_field_prior)
    if (const auto ff = p_.metric->far_field_volume()) f_prior = warped_prior_mean(*ff, delta);

  Kernel kernel;
  if (warm_kernel) {
    kernel = memory_->kernel;
  } else {
    double spread = 0.0;
    for (Eigen::Index i = 0; i < g0.size(); ++i) spread = std::max(spread, std::abs(warp(g0[i], delta) - f_prior));
    kernel = Kernel(s_.kernel, p_.sigma.diagonal().cwiseSqrt(), std::max(spread, 1e-3));
  }
  const WarpMode mode = method_ == Method::WsabiM ? WarpMode::MomentMatched : WarpMode::Linearized;
  model_ = std::make_unique<WarpedIntegrandModel>(kernel, delta, mode, f_prior);
  model_->condition(v0, g0);
  const int reused = reuse ? static_cast<int>(g0.size()) : 0;
  if (!reuse) fit_hyperparameters(true);

  int added = 0, attempts = 0;
  if (method_ == Method::Dcv) {
    const int target = reuse ? budget_.reuse_rays : budget_.rays;
    int rays = 0;
    while (keep_going(rays, target, attempts)) {
      ++attempts;
      DcvOptions o = s_.dcv;
      o.seed = mix(s_.seed, 1000 + attempts);
      const Vec r = dcv_select_direction(*model_, measure_, o);
      const double a = alpha_max(measure_, r, o.p);
      ++exp_maps_;
      GeodesicSolution geo;
      try {
        geo = exp_map(*p_.metric, p_.mu, a * r, integrand_exp_options());
      } catch (const GeodesicFailure&) {
        ++failures_;
        continue;
      }
      const auto batch = dcv_collect_along_ray(*model_, *p_.metric, geo, measure_, r, a, s_.ray_candidates,
                                               s_.ray_picks, exp_maps_);
      const int n = static_cast<int>(batch.alphas.size());
      g_evals_ += n;
      added += n;
      ++rays;
      after_observations(n);
    }
  } else {
    const int target = reuse ? budget_.reuse_samples : budget_.samples;
    while (keep_going(added, target, attempts)) {
      ++attempts;
      AcquisitionOptions o = s_.acquisition;
      o.seed = mix(s_.seed, 5000 + attempts);
      const Vec v = uncertainty_sampling_next(*model_, measure_, o);
      double g;
      if (!evaluate(v, g)) continue;
      try {
        model_->add(v, g);
      } catch (const InvalidArgument&) {
        continue;  // duplicate location
      }
      ++added;
      after_observations(1);
    }
  }
  if (since_fit_ > 0) fit_hyperparameters(false);

  const auto post = integral_posterior(*model_, measure_, s_.integral);
  const double z = measure_.normalizer();

  IntegrationResult r;
  r.method = method_;
  r.problem_id = p_.id;
  r.normalization = z * post.mean;
  r.variance = z * z * post.variance;
  r.standard_error = z * post.standard_error;
  r.vector = z * post.vector;
  r.matrix = z * post.matrix;
  r.exp_maps = exp_maps_;
  r.g_evals = g_evals_;
  r.failures = failures_;
  r.reused = reused;
  r.new_observations = model_->size() - reused;
  r.v = model_->gp().inputs();
  r.g = model_->g_values();

  if (memory_) {
    memory_->has_kernel = true;
    memory_->kernel = model_->gp().kernel();
    memory_->has_observations = true;
    memory_->mu = p_.mu;
    memory_->v = r.v;
    memory_->g = r.g;
    memory_->delta = delta;
  }
  r.wall_clock = seconds_since(t0_);
  return r;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::WsabiL: return "wsabi-l";
    case Method::WsabiM: return "wsabi-m";
    case Method::Dcv: return "dcv";
    case Method::Mc: return "mc";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "wsabi-l" || s == "wsabi_l" || s == "wsabil") return Method::WsabiL;
  if (s == "wsabi-m" || s == "wsabi_m" || s == "wsabim") return Method::WsabiM;
  if (s == "dcv") return Method::Dcv;
  if (s == "mc") return Method::Mc;
  throw InvalidArgument("unknown integration method '" + s + "' (expected wsabi-l, wsabi-m, dcv or mc)");
}

std::string IntegrationResult::record_header() {
  return "method\tproblem\tmean\tvariance\twall_clock_s\texp_maps\tg_evals";
}

std::string IntegrationResult::to_record() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "\t%.17g\t%.17g\t%.6f\t%d\t%d", normalization, variance, wall_clock, exp_maps,
                g_evals);
  return to_string(method) + "\t" + (problem_id.empty() ? "-" : problem_id) + buf;
}

IntegrationResult run_integration(const IntegrationProblem& problem, Method method, const IntegrationBudget& budget,
                                  const BqSettings& settings, BqMemory* memory) {
  if (!problem.metric) throw InvalidArgument("run_integration: no metric");
  const int d = problem.metric->dim();
  if (problem.mu.size() != d || problem.sigma.rows() != d || problem.sigma.cols() != d)
    throw InvalidArgument("run_integration: dimension mismatch");

  if (method != Method::Mc) return BqRun(problem, method, budget, settings, memory).run();

  const auto t0 = Clock::now();
  const McEstimate e =
      budget.time_limit > 0.0
          ? mc_time_limited(*problem.metric, problem.mu, problem.sigma, budget.time_limit, mix(settings.seed, 3))
          : mc_normalization(*problem.metric, problem.mu, problem.sigma, budget.mc_samples, mix(settings.seed, 3), 1);
  IntegrationResult r;
  r.method = method;
  r.problem_id = problem.id;
  r.normalization = e.value;
  r.standard_error = e.standard_error;
  r.variance = e.standard_error * e.standard_error;
  r.vector = e.vector;
  r.matrix = e.matrix;
  int zero = 0;
  for (Eigen::Index i = 0; i < e.v.cols(); ++i) zero += e.v.col(i).isZero(0.0);
  r.g_evals = e.sample_count;
  r.exp_maps = e.sample_count + e.failures - zero;
  r.failures = e.failures;
  r.new_observations = e.sample_count;
  r.v = e.v;
  r.g = e.g;
  r.wall_clock = seconds_since(t0);
  return r;
}

}  // namespace rbq
