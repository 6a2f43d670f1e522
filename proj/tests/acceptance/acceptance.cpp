// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 2 5        selected criteria

#include "rbq/benchmark.hpp"
#include "rbq/bq.hpp"
#include "rbq/data_io.hpp"
#include "rbq/geodesics.hpp"
#include "rbq/gp.hpp"
#include "rbq/land.hpp"
#include "rbq/metrics.hpp"

#include "json.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#ifndef RBQ_CLI_PATH
#error "RBQ_CLI_PATH must point at the rbq binary"
#endif

namespace fs = std::filesystem;
using namespace rbq;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Reporting

struct Outcome {
  bool pass = true;
  std::vector<std::string> lines;  // measured values, printed under the verdict

  // Records one measured quantity against its bound.
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "  ok   " : "  FAIL ") + what);
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

Vec vec2(double a, double b) { return (Vec(2) << a, b).finished(); }

Kernel rbf(int d, double ell, double s) { return Kernel(KernelFamily::SquaredExponential, Vec::Constant(d, ell), s); }

// The circle manifold used throughout: N = 1000, sigma = 0.1, rho = 1e-3.
const Mat& circle_data() {
  static const Mat data = gen_circle(1000, 0.1, 1);
  return data;
}

const KernelMetric& circle_metric() {
  static const KernelMetric m(circle_data(), 0.1, 0.001);
  return m;
}

// First integration problem of a two-component fit with seed 0: component 0
// at its initialization (the same call fit_land makes).
CorpusEntry first_problem() {
  const auto init = initialize_components(circle_data(), 2, derive_seed(0, 1));
  CorpusEntry e;
  e.id = "circle-0";
  e.mu = init[0].mu;
  e.sigma = init[0].sigma;
  return e;
}

// ---------------------------------------------------------------------------
// 1. Euclidean reduction

Mat gaussian_data(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Mat x(n, 2);
  for (int i = 0; i < n; ++i) {
    const double a = nd(rng), b = nd(rng);
    x(i, 0) = 1.0 + 0.8 * a;
    x(i, 1) = -0.5 + 0.3 * a + 0.5 * b;
  }
  return x;
}

double gaussian_log_pdf(const Vec& x, const Vec& mu, const Mat& sigma) {
  const Vec d = x - mu;
  const double dim = static_cast<double>(x.size());
  return -0.5 * d.dot(sigma.llt().solve(d)) - 0.5 * std::log(std::pow(2 * M_PI, dim) * sigma.determinant());
}

Outcome euclidean_reduction() {
  Outcome o;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;

  // (a) exp/log are affine identities
  double exp_err = 0.0, log_err = 0.0;
  for (int d : {2, 3, 5}) {
    EuclideanMetric m(d);
    for (int i = 0; i < 20; ++i) {
      Vec mu(d), v(d);
      for (int k = 0; k < d; ++k) {
        mu[k] = 2 * nd(rng);
        v[k] = 1.5 * nd(rng);
      }
      exp_err = std::max(exp_err, (exp_map(m, mu, v).endpoint - (mu + v)).norm());
      const auto l = log_map(m, mu, mu + v);
      log_err = std::max(log_err, l.converged ? (l.initial_velocity - v).norm() : 1e300);
    }
  }
  o.check(exp_err <= 1e-9, fmt("max |Exp_mu(v) - (mu + v)| = %.2e (<= 1e-9)", exp_err));
  o.check(log_err <= 1e-9, fmt("max |Log_mu(mu + v) - v| = %.2e (<= 1e-9)", log_err));

  // (b) every integrator returns sqrt((2 pi)^D |Sigma|)
  EuclideanMetric flat(2);
  std::vector<Mat> sigmas{Mat::Identity(2, 2), (Mat(2, 2) << 0.6, 0.2, 0.2, 0.3).finished(),
                          (Mat(2, 2) << 2.5, -0.7, -0.7, 0.9).finished()};
  for (Method meth : {Method::WsabiL, Method::WsabiM, Method::Dcv, Method::Mc}) {
    double worst = 0.0;
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      const Vec mu = vec2(0.3 * i, -0.2);
      BqSettings s;
      s.seed = 100 + i;
      const auto r = run_integration({"flat", &flat, mu, sigmas[i]}, meth, {}, s);
      const double exact = 2 * M_PI * std::sqrt(sigmas[i].determinant());
      worst = std::max(worst, std::abs(r.normalization - exact) / exact);
    }
    o.check(worst <= 5e-3, to_string(meth) + fmt(": max relative error of C = %.2e (<= 5e-3)", worst));
  }

  // (c) LAND density equals the gaussian density
  {
    const Mat sigma = sigmas[1];
    const Vec mu = vec2(0.4, -0.7);
    oracle::GaussianMoments closed;
    const LandComponent c{mu, sigma, closed.integrate(0, mu, sigma).normalization, 1.0};
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vec x = mu + vec2(2 * nd(rng), 2 * nd(rng));
      const double ref = std::exp(gaussian_log_pdf(x, mu, sigma));
      worst = std::max(worst, std::abs(land_density(c, log_map(flat, mu, x)) - ref) / ref);
    }
    o.check(worst <= 1e-10, fmt("max relative density error = %.2e (<= 1e-10)", worst));
  }

  // (d) K = 1 fit with an active integrator recovers the ML gaussian
  {
    const Mat data = gaussian_data(200, 12);
    const Vec mean = data.colwise().mean().transpose();
    const Mat centred = data.rowwise() - mean.transpose();
    const Mat cov = centred.transpose() * centred / static_cast<double>(data.rows());
    LandOptions lo;
    lo.components = 1;
    lo.max_iterations = 40;
    lo.nll_tolerance = 1e-6;
    lo.seed = 3;
    IntegratorMoments prov(flat, Method::WsabiL);
    const LandFit fit = fit_land(data, flat, prov, lo);
    const auto& c = fit.components[0];
    const double emu = (c.mu - mean).norm() / mean.norm();
    const double esig = (c.sigma - cov).norm() / cov.norm();
    o.check(emu <= 0.02, fmt("K=1 fit: |mu - mean| / |mean| = %.2e (<= 2e-2)", emu));
    o.check(esig <= 0.02, fmt("K=1 fit: |Sigma - cov|_F / |cov|_F = %.2e (<= 2e-2)", esig));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 2. Geodesic round trip on the circle manifold

Outcome circle_round_trip() {
  Outcome o;
  const auto& m = circle_metric();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> ang(0.0, 2 * M_PI), u(0.0, 1.0);
  // the speed check needs an accurately integrated curve; at the working
  // tolerance of 1e-3 a whole geodesic takes a handful of steps
  ExpMapOptions accurate;
  accurate.rtol = accurate.atol = 1e-8;
  double worst = 0.0, drift = 0.0, drift_default = 0.0;
  int failed = 0;
  auto speed_drift = [&](const GeodesicSolution& e, const Vec& mu, const Vec& v) {
    const double e0 = squared_speed(m, mu, v);
    double d = 0.0;
    for (int k = 1; k <= 100; ++k) {
      const double t = k / 100.0;
      d = std::max(d, std::abs(squared_speed(m, e.point(t), e.velocity(t)) - e0) / e0);
    }
    return d;
  };
  for (int i = 0; i < 50; ++i) {
    const Vec mu = circle_data().row(97 * i % 1000).transpose();
    const double a = ang(rng);
    const double r = std::sqrt(std::max(u(rng), 1e-4));  // uniform in the unit disc
    const Vec v = r * vec2(std::cos(a), std::sin(a));
    const auto e = exp_map(m, mu, v);
    drift_default = std::max(drift_default, speed_drift(e, mu, v));
    drift = std::max(drift, speed_drift(exp_map(m, mu, v, accurate), mu, v));
    const auto l = log_map(m, mu, e.endpoint);
    if (!l.converged) {
      ++failed;
      continue;
    }
    worst = std::max(worst, (l.initial_velocity - v).norm() / v.norm());
  }
  o.check(failed == 0, fmt("log maps not converged: %.0f of 50", failed));
  o.check(worst < 1e-2, fmt("max |Log(Exp(v)) - v| / |v| = %.2e (< 1e-2)", worst));
  o.check(drift < 1e-3, fmt("max relative drift of <g', M g'> at tolerance 1e-8 = %.2e (< 1e-3)", drift));
  o.lines.push_back(fmt("  (same curves at the working tolerance 1e-3: drift %.2e)", drift_default));
  return o;
}

// ---------------------------------------------------------------------------
// 3. Gradient oracles

double metric_derivative_error(const Metric& m, const Vec& x) {
  const double h = 1e-5 * (1 + x.norm());
  const Tensor3 an = m.metric_derivative(x);
  const int d = m.dim();
  double num = 0.0, den = 0.0;
  for (int k = 0; k < d; ++k) {
    Vec xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    const Mat fd = (m.metric_at(xp) - m.metric_at(xm)) / (2 * h);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        num = std::max(num, std::abs(an(i, j, k) - fd(i, j)));
        den = std::max(den, std::abs(fd(i, j)));
      }
  }
  return num / std::max(den, 1e-300);
}

WarpedIntegrandModel fitted_model(WarpMode mode, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Mat v(2, n);
  Vec g(n);
  for (int i = 0; i < n; ++i) {
    v.col(i) = vec2(nd(rng), nd(rng));
    g[i] = 0.4 + std::exp(-0.5 * (v.col(i) - vec2(0.5, -0.3)).squaredNorm()) + 0.2 * v(0, i) * v(0, i);
  }
  WarpedIntegrandModel model(rbf(2, 0.8, 1.0), choose_delta(g), mode, 0.5);
  model.condition(v, g);
  return model;
}

Outcome gradient_oracles() {
  Outcome o;
  std::mt19937_64 rng(5);

  // metric derivatives
  {
    const KernelMetric km(circle_data(), 0.1, 0.001);
    std::vector<MixtureComponent> comps(2);
    comps[0] = {0.5, vec2(0.0, 0.0), vec2(0.2, 0.1)};
    comps[1] = {0.5, vec2(1.0, 0.5), vec2(0.05, 0.3)};
    const MixtureMetric mm(comps, 0.01);
    std::uniform_real_distribution<double> ang(0.0, 2 * M_PI), rad(0.8, 1.2), u(-0.5, 1.5);
    double wk = 0.0, wm = 0.0;
    for (int i = 0; i < 100; ++i) {
      const double a = ang(rng), r = rad(rng);
      wk = std::max(wk, metric_derivative_error(km, vec2(r * std::cos(a), r * std::sin(a))));
      wm = std::max(wm, metric_derivative_error(mm, vec2(u(rng), u(rng))));
    }
    o.check(wk < 1e-4, fmt("kernel metric dM/dx vs central differences: %.2e (< 1e-4)", wk));
    o.check(wm < 1e-4, fmt("mixture metric dM/dx vs central differences: %.2e (< 1e-4)", wm));
  }

  // GP log marginal likelihood
  {
    std::normal_distribution<double> nd;
    Mat x(2, 25);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 1.5 * nd(rng);
    Vec f(25);
    for (int i = 0; i < 25; ++i) f[i] = std::sin(2 * x(0, i)) + 0.5 * x.col(i).squaredNorm();
    double worst = 0.0;
    for (auto fam : {KernelFamily::SquaredExponential, KernelFamily::Matern52}) {
      GaussianProcess gp(Kernel(fam, vec2(0.7, 0.9), 1.3), 0.2);
      gp.condition(x, f);
      const Vec g = gp.lml_gradient();
      const Vec p = gp.kernel().log_params();
      for (int j = 0; j < p.size(); ++j) {
        Kernel kp = gp.kernel(), km = gp.kernel();
        Vec pp = p, pm = p;
        pp[j] += 1e-5;
        pm[j] -= 1e-5;
        kp.set_log_params(pp);
        km.set_log_params(pm);
        const double fd = (log_marginal_likelihood(kp, 0.2, x, f) - log_marginal_likelihood(km, 0.2, x, f)) / 2e-5;
        worst = std::max(worst, std::abs(g[j] - fd) / std::max(std::abs(fd), 1e-8));
      }
    }
    o.check(worst < 1e-5, fmt("GP log marginal likelihood gradient: %.2e (< 1e-5)", worst));
  }

  // DCV objective on the sphere
  {
    const auto model = fitted_model(WarpMode::Linearized, 15, 21);
    double worst = 0.0;
    for (const Mat& s : {Mat(Mat::Identity(2, 2)), Mat((Mat(2, 2) << 2.0, 0.4, 0.4, 0.6).finished())}) {
      const GaussianMeasure pi(s);
      for (int k = 0; k < 16; ++k) {
        const double t = 0.3 + k * 0.39;
        const Vec r = vec2(std::cos(t), std::sin(t));
        const Vec tan = vec2(-std::sin(t), std::cos(t));
        const double h = 1e-5;
        const double fd = (dcv_objective(model, pi, Vec((r + h * tan).normalized())) -
                           dcv_objective(model, pi, Vec((r - h * tan).normalized()))) /
                          (2 * h);
        const double g = dcv_gradient(model, pi, r).dot(tan);
        worst = std::max(worst, std::abs(g - fd) / std::max(std::abs(fd), 1e-3 * dcv_objective(model, pi, r)));
      }
    }
    o.check(worst < 1e-3, fmt("DCV sphere gradient: %.2e (< 1e-3)", worst));
  }

  // LAND mean and covariance gradients on the circle manifold
  {
    const Mat all = gen_circle(400, 0.1, 1);
    const KernelMetric metric(all, 0.1, 0.001);
    const Vec mu = all.row(0).transpose();
    std::vector<std::pair<double, int>> near;
    for (int i = 1; i < all.rows(); ++i) near.push_back({(all.row(i).transpose() - mu).norm(), i});
    std::sort(near.begin(), near.end());
    Mat data(20, 2);
    for (int i = 0; i < 20; ++i) data.row(i) = all.row(near[i].second);
    const Vec resp = Vec::Ones(20);

    // mean: same-seed MC integrals, isotropic Sigma
    const Mat sigma_iso = 0.04 * Mat::Identity(2, 2);
    IntegrationBudget b;
    b.mc_samples = 12000;
    IntegratorMoments mc(metric, Method::Mc, b);
    auto objective = [&](const Vec& m, TangentMoments* tm_out, LogMaps* logs_out) {
      const LogMaps logs = compute_log_maps(metric, m, data);
      if (logs.failures()) throw NumericalError("log map failed in the mean oracle");
      mc.set_seed(7);
      const TangentMoments tm = mc.integrate(0, m, sigma_iso);
      if (tm_out) *tm_out = tm;
      if (logs_out) *logs_out = logs;
      return component_nll(LandComponent{m, sigma_iso, tm.normalization, 1.0}, logs, resp);
    };
    TangentMoments tm;
    LogMaps logs;
    objective(mu, &tm, &logs);
    const Vec d = mu_direction(LandComponent{mu, sigma_iso, tm.normalization, 1.0}, logs, resp, tm);
    Vec grad(2);
    for (int i = 0; i < 2; ++i) {
      Vec e = Vec::Zero(2);
      e[i] = 1e-4;
      grad[i] = (objective(mu + e, nullptr, nullptr) - objective(mu - e, nullptr, nullptr)) / 2e-4;
    }
    const double cosine = d.dot(-grad) / (d.norm() * grad.norm());
    o.check(1 - cosine < 1e-2, fmt("LAND mean direction vs -grad: 1 - cos = %.2e (< 1e-2)", 1 - cosine));
    // d drops the mean dependence of g and of the log-map Jacobian, so its
    // length is only approximately that of Sigma grad
    const Vec scaled = -(sigma_iso.inverse() * d);
    o.lines.push_back(fmt("  (|-Sigma^-1 d - grad| / |grad| = %.2e)", (scaled - grad).norm() / grad.norm()));

    // covariance: importance-reweighted fixed draw set
    Mat sigma(2, 2);
    sigma << 0.05, 0.015, 0.015, 0.04;
    oracle::ReweightedMoments fixed(metric, mu, sigma, 3000, 11);
    const LogMaps lm = compute_log_maps(metric, mu, data);
    auto nll_at = [&](const Mat& s) {
      const TangentMoments t = fixed.integrate(0, mu, s);
      return component_nll(LandComponent{mu, s, t.normalization, 1.0}, lm, resp);
    };
    const TangentMoments t0 = fixed.integrate(0, mu, sigma);
    const Mat g = sigma_euclidean_gradient(LandComponent{mu, sigma, t0.normalization, 1.0}, lm, resp, t0);
    Mat fd(2, 2);
    for (int i = 0; i < 2; ++i)
      for (int j = i; j < 2; ++j) {
        Mat e = Mat::Zero(2, 2);
        e(i, j) = e(j, i) = 1e-6;
        const double f = (nll_at(sigma + e) - nll_at(sigma - e)) / 2e-6;
        fd(i, j) = fd(j, i) = i == j ? f : f / 2;
      }
    const double rel = (g - fd).cwiseAbs().maxCoeff() / fd.norm();
    o.check(rel < 1e-2, fmt("LAND covariance gradient: max |G - FD| / |FD|_F = %.2e (< 1e-2)", rel));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 4. BQ correctness oracles

double npdf(double x, double var) { return std::exp(-0.5 * x * x / var) / std::sqrt(2 * M_PI * var); }

Outcome bq_oracles() {
  Outcome o;

  // closed-form 1-D RBF embedding of delta + m(v)^2 / 2 against N(0, sig2)
  {
    const double ell = 0.7, s = 1.3, sig2 = 0.8, m0 = 0.6;
    const Vec x = (Vec(5) << -1.5, -0.6, 0.0, 0.4, 1.3).finished();
    Vec g(5);
    for (int i = 0; i < 5; ++i) g[i] = 1.0 + 0.8 * std::sin(2.0 * x[i]) + 0.3 * x[i] * x[i];
    const double delta = choose_delta(g);
    WarpedIntegrandModel model(rbf(1, ell, s), delta, WarpMode::Linearized, m0);
    model.condition(x.transpose(), g);
    Mat k(5, 5);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) k(i, j) = s * s * std::exp(-0.5 * std::pow(x[i] - x[j], 2) / (ell * ell));
    Vec f(5);
    for (int i = 0; i < 5; ++i) f[i] = std::sqrt(2 * (g[i] - delta)) - m0;
    const Vec a = k.ldlt().solve(f);
    double z1 = 0.0, z2 = 0.0;
    for (int i = 0; i < 5; ++i) {
      z1 += a[i] * s * s * ell / std::sqrt(ell * ell + sig2) * std::exp(-0.5 * x[i] * x[i] / (ell * ell + sig2));
      for (int j = 0; j < 5; ++j) {
        const double c = 0.5 * (x[i] + x[j]);
        z2 += a[i] * a[j] * std::pow(s, 4) * std::exp(-std::pow(x[i] - x[j], 2) / (4 * ell * ell)) *
              std::sqrt(M_PI * ell * ell) * npdf(c, 0.5 * ell * ell + sig2);
      }
    }
    const double exact = delta + 0.5 * (m0 * m0 + 2 * m0 * z1 + z2);
    const double err = std::abs(integral_posterior(model, GaussianMeasure(Mat::Constant(1, 1, sig2))).mean - exact);
    o.check(err <= 1e-3, fmt("1-D RBF embedding: |BQ - closed form| = %.2e (<= 1e-3)", err));
  }

  // unwarped mean interpolates the observations
  for (const WarpMode mode : {WarpMode::Linearized, WarpMode::MomentMatched}) {
    const auto model = fitted_model(mode, 25, 3);
    double worst = 0.0;
    for (int i = 0; i < model.size(); ++i) {
      const double g = model.g_values()[i];
      worst = std::max(worst, std::abs(model.unwarp_moments(model.gp().inputs().col(i)).mean - g) / g);
    }
    o.check(worst <= 1e-6, std::string(mode == WarpMode::Linearized ? "WSABI-L" : "WSABI-M") +
                               fmt(": max |m~(v_i) - g_i| / g_i = %.2e (<= 1e-6)", worst));
  }

  // DCV is rotationally symmetric with no data and isotropic measure
  {
    WarpedIntegrandModel model(rbf(2, 1.0, 1.0), 1e-3, WarpMode::Linearized, 2.0);
    const GaussianMeasure pi(Mat::Identity(2, 2) * 0.7);
    std::vector<double> vals;
    for (int i = 0; i < 360; ++i) {
      const double t = i * M_PI / 180.0;
      vals.push_back(dcv_objective(model, pi, vec2(std::cos(t), std::sin(t))));
    }
    const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
    const double spread = (*hi - *lo) / mean(vals);
    o.check(spread <= 1e-8, fmt("DCV over 360 directions: (max - min) / mean = %.2e (<= 1e-8)", spread));
  }

  // alpha_max against -2 ln(1 - p)
  {
    const GaussianMeasure id(Mat::Identity(2, 2));
    const double a = alpha_max(id, vec2(1, 0), 0.995);
    const double ref = std::sqrt(-2 * std::log(1 - 0.995));
    o.check(std::abs(a - 3.2553) <= 1e-3 && std::abs(a - ref) <= 1e-9,
            fmt("alpha_max(I, D=2, p=0.995) = %.6f (3.2553 +- 1e-3; sqrt(-2 ln(1-p)) = %.6f)", a, ref));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 5. Desk-scale benchmark on the circle

Outcome circle_benchmark() {
  Outcome o;
  const auto& metric = circle_metric();
  const CorpusEntry p = first_problem();
  const auto t0 = std::chrono::steady_clock::now();
  const GroundTruthPool pool = build_ground_truth(metric, p.id, p.mu, p.sigma, 40000, 40000, 1);
  const McEstimate gt = pool.estimate();
  o.lines.push_back(fmt("  ground truth C = %.6g +- %.2g (S = 40000, %.1f s)", gt.value, gt.standard_error,
                        seconds_since(t0)));

  CorpusBenchOptions opts;
  opts.repeats = 10;
  opts.seed = 5;
  const CorpusBenchmark b = bench_corpus(metric, {p}, {pool}, opts);

  std::map<Method, std::vector<double>> err, wall;
  for (const auto& r : b.runs) {
    err[r.method].push_back(r.rel_error);
    wall[r.method].push_back(r.wall_clock);
  }
  const double mean_l = mean(err[Method::WsabiL]);
  o.check(mean_l <= 0.05, fmt("WSABI-L mean relative error over 10 repeats = %.3f%% (<= 5%%)", 100 * mean_l));
  const double mc_med = median(err[Method::Mc]);
  o.lines.push_back(fmt("  MC at %.3f s (%.0f draws): median relative error %.3f%%", b.mc_budget[0],
                        static_cast<double>(std::floor(b.mc_budget[0] * 1e3 / pool.mean_runtime_ms())),
                        100 * mc_med));
  for (Method m : {Method::WsabiL, Method::WsabiM, Method::Dcv}) {
    const double med = median(err[m]);
    o.check(med <= mc_med, to_string(m) + fmt(": median relative error %.3f%% (<= MC %.3f%%), mean time %.3f s",
                                               100 * med, 100 * mc_med, mean(wall[m])));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 6. Node reuse

Outcome node_reuse() {
  Outcome o;
  const auto& metric = circle_metric();
  const CorpusEntry p = first_problem();
  // a covariance-only step: congruence by a near-identity matrix
  const Mat a = (Mat(2, 2) << 0.95, 0.05, -0.03, 0.9).finished();
  const Mat sigma2 = a * p.sigma * a.transpose();
  const IntegrationBudget budget;
  const int repeats = 5;
  for (Method m : {Method::WsabiL, Method::WsabiM, Method::Dcv}) {
    bool all_reused = true, exact_new = true;
    std::vector<double> t_reuse, t_fresh;
    int new_obs = 0, exp_maps = 0;
    for (int r = 0; r < repeats; ++r) {
      BqSettings s;
      s.seed = derive_seed(6, r);
      BqMemory mem;
      const auto first = run_integration({"a", &metric, p.mu, p.sigma}, m, budget, s, &mem);
      const auto reuse = run_integration({"b", &metric, p.mu, sigma2}, m, budget, s, &mem);
      const auto fresh = run_integration({"b", &metric, p.mu, sigma2}, m, budget, s);
      all_reused = all_reused && reuse.reused == first.v.cols() && reuse.v.leftCols(first.v.cols()) == first.v;
      new_obs = reuse.new_observations;
      exp_maps = reuse.exp_maps;
      exact_new = exact_new && (m == Method::Dcv ? reuse.exp_maps == budget.reuse_rays
                                                 : reuse.new_observations == budget.reuse_samples &&
                                                       reuse.exp_maps == budget.reuse_samples);
      t_reuse.push_back(reuse.wall_clock);
      t_fresh.push_back(fresh.wall_clock);
    }
    const std::string name = to_string(m);
    o.check(all_reused, name + ": every prior observation re-conditioned");
    o.check(exact_new, name + (m == Method::Dcv ? fmt(": %.0f new rays (= 2), %.0f new observations", exp_maps, new_obs)
                                                : fmt(": %.0f new samples (= 10)", new_obs)));
    const double ratio = mean(t_reuse) / mean(t_fresh);
    o.check(ratio < 0.5, name + fmt(": reuse %.3f s vs fresh %.3f s, ratio %.2f (< 0.5)", mean(t_reuse),
                                    mean(t_fresh), ratio));
  }
  return o;
}

// ---------------------------------------------------------------------------
// 7. CLI determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(item);
  return out;
}

int run_cli(const fs::path& dir, const std::string& args, const std::string& stdout_name) {
  const std::string cmd = "cd '" + dir.string() + "' && " + RBQ_CLI_PATH + " " + args + " > " + stdout_name +
                          " 2> stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Non-timing content of a table: header and '#' lines verbatim, timing
// columns blanked, timing rows dropped.
std::vector<std::string> stable_tsv(const std::string& text, const json& spec) {
  std::vector<std::string> out, header;
  std::set<std::size_t> timing_cols;
  for (const auto& line : split(text, '\n')) {
    if (line.empty() || line[0] == '#') {
      out.push_back(line);
      continue;
    }
    auto cells = split(line, '\t');
    if (header.empty()) {
      header = cells;
      for (const auto& c : spec.at("timing_columns")) {
        const auto it = std::find(header.begin(), header.end(), c.get<std::string>());
        if (it == header.end()) throw std::runtime_error("timing column " + c.dump() + " not in header");
        timing_cols.insert(it - header.begin());
      }
      out.push_back(line);
      continue;
    }
    bool timing_row = false;
    for (const auto& [col, values] : spec.at("timing_rows").items()) {
      const auto it = std::find(header.begin(), header.end(), col);
      if (it == header.end()) throw std::runtime_error("timing row column " + col + " not in header");
      const std::string& cell = cells.at(it - header.begin());
      for (const auto& v : values) timing_row = timing_row || cell == v.get<std::string>();
    }
    if (timing_row) {
      out.push_back("<timing row>");
      continue;
    }
    for (std::size_t c : timing_cols) cells.at(c) = "<t>";
    std::string joined;
    for (const auto& c : cells) joined += c + '\t';
    out.push_back(joined);
  }
  return out;
}

// Key-value lines ("key value key value ..."): values after timing keys blanked.
std::vector<std::string> stable_keyvalue(const std::string& text, const json& spec) {
  std::set<std::string> keys;
  for (const auto& c : spec.at("timing_columns")) keys.insert(c.get<std::string>());
  std::vector<std::string> out;
  for (const auto& line : split(text, '\n')) {
    if (line.empty() || line[0] == '#') {
      out.push_back(line);
      continue;
    }
    auto tok = split(line, ' ');
    for (std::size_t i = 0; i + 1 < tok.size(); i += 2)
      if (keys.count(tok[i])) tok[i + 1] = "<t>";
    std::string joined;
    for (const auto& t : tok) joined += t + ' ';
    out.push_back(joined);
  }
  return out;
}

json stable_manifest(json m) {
  for (const auto& key : m.at("timing_summary")) {
    json* node = &m["summary"];
    const auto parts = split(key.get<std::string>(), '.');
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    node->erase(parts.back());
  }
  return m;
}

// Everything a command wrote, reduced to its non-timing fields.
std::map<std::string, std::string> snapshot(const fs::path& dir, const std::string& command,
                                            const std::string& stdout_name) {
  std::map<std::string, std::string> s;
  const fs::path mpath = dir / (command + ".manifest.json");
  const json m = json::parse(slurp(mpath));
  s[mpath.filename().string()] = stable_manifest(m).dump();
  for (const auto& [file, spec] : m.at("outputs").items()) {
    const std::string text = slurp(dir / file);
    if (text.empty()) throw std::runtime_error("empty output " + file);
    std::string joined;
    for (const auto& l : spec.at("format") == "keyvalue" ? stable_keyvalue(text, spec) : stable_tsv(text, spec))
      joined += l + '\n';
    s[file] = joined;
  }
  // stdout only echoes rows of these files, timing columns included
  (void)stdout_name;
  return s;
}

std::string pool_fingerprint(const fs::path& path) {
  const GroundTruthPool p = GroundTruthPool::load(path);
  std::ostringstream os;
  os.precision(17);
  os << p.problem_id << ' ' << p.seed << ' ' << p.failures << '\n' << p.mu.transpose() << '\n' << p.sigma << '\n'
     << p.v << '\n' << p.g.transpose() << '\n';
  return os.str();
}

Outcome cli_determinism() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "rbq_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "run.json") << R"({
    "metric": {"family": "kernel", "sigma": 0.1, "rho": 0.001},
    "data": {"dataset": "circle", "n": 80, "seed": 3},
    "land": {"components": 2, "max_iterations": 2, "seed": 4},
    "integrator": {"method": "wsabi-l", "samples": 20, "reuse_samples": 5, "rays": 4, "reuse_rays": 1},
    "benchmark": {"repeats": 2, "ground_truth_samples": 6000, "pool_dir": "pools", "runtime_repeats": 2,
                  "limits": [0.05, 0.1], "methods": ["wsabi-l", "dcv"]},
    "output": {"dir": "out"}
  })";

  // gen-data and print-config write no manifest; their files are compared whole
  struct Step {
    std::string name, args, command;  // command empty: compare stdout and listed files verbatim
    std::vector<std::string> files;
  };
  const std::vector<Step> steps{
      {"gen-data", "gen-data --dataset circle --n 500 --seed 9 --embed-dim 4 --out points.txt", "", {"points.txt"}},
      {"print-config", "print-config", "", {}},
      {"fit-land", "fit-land --config run.json", "fit-land", {}},
      {"integrate", "integrate --config run.json --corpus out/corpus.tsv --method dcv", "integrate", {}},
      {"ground-truth", "ground-truth --config run.json --corpus small.tsv", "ground-truth", {}},
      {"bench-corpus", "bench-corpus --config run.json --corpus small.tsv", "bench-corpus", {}},
      {"bench-runtime", "bench-runtime --config run.json --corpus small.tsv", "bench-runtime", {}},
  };

  for (const auto& step : steps) {
    std::vector<std::map<std::string, std::string>> runs;
    bool ok = true;
    for (int pass = 0; pass < 2; ++pass) {
      const std::string out_name = "stdout-" + step.name + ".txt";
      const int code = run_cli(dir, step.args, out_name);
      if (code != 0) {
        o.check(false, step.name + fmt(": exit code %.0f: ", code) + slurp(dir / "stderr.txt"));
        ok = false;
        break;
      }
      std::map<std::string, std::string> s;
      if (step.command.empty()) {
        s["stdout"] = slurp(dir / out_name);
        for (const auto& f : step.files) s[f] = slurp(dir / f);
      } else {
        s = snapshot(dir / "out", step.command, out_name);
      }
      if (step.name == "ground-truth")
        for (const auto& e : read_corpus(dir / "small.tsv")) s[e.id + ".pool"] = pool_fingerprint(pool_path(dir / "pools", e.id));
      runs.push_back(s);
      if (step.name == "fit-land" && pass == 0) {
        // a small corpus for the benchmarks: the first three problems
        auto corpus = read_corpus(dir / "out" / "corpus.tsv");
        corpus.resize(std::min<std::size_t>(3, corpus.size()));
        write_corpus(dir / "small.tsv", corpus);
      }
    }
    if (!ok) continue;
    std::vector<std::string> diff;
    for (const auto& [file, text] : runs[0]) {
      const auto it = runs[1].find(file);
      if (it == runs[1].end() || it->second != text) diff.push_back(file);
    }
    std::string files;
    for (const auto& [file, text] : runs[0]) files += (files.empty() ? "" : ", ") + file;
    std::string what = step.name + ": " + (diff.empty() ? "identical non-timing fields in " + files : "differs in ");
    for (const auto& d : diff) what += d + " ";
    o.check(diff.empty(), what);
  }
  // negative control: a changed non-timing cell must show up
  {
    const json spec = {{"timing_columns", {"wall_clock_s"}}, {"timing_rows", json::object()}};
    const std::string a = "# c\nmethod\tmean\twall_clock_s\nwsabi-l\t1.5\t0.25\n";
    std::string b = a, c = a;
    b.replace(b.find("1.5"), 3, "1.6");
    c.replace(c.find("0.25"), 4, "0.26");
    const bool detects = stable_tsv(a, spec) != stable_tsv(b, spec) && stable_tsv(a, spec) == stable_tsv(c, spec);
    o.check(detects, "comparator flags a changed estimate and ignores a changed wall-clock");
  }
  fs::remove_all(dir);
  return o;
}

// ---------------------------------------------------------------------------

struct Criterion {
  int id;
  std::string title;
  double limit_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "euclidean reduction", 120, euclidean_reduction},
      {2, "geodesic round trip on the circle manifold", 300, circle_round_trip},
      {3, "gradient oracles", 600, gradient_oracles},
      {4, "BQ correctness oracles", 300, bq_oracles},
      {5, "circle benchmark: BQ vs MC at matched wall-clock", 3600, circle_benchmark},
      {6, "node reuse in covariance-only updates", 900, node_reuse},
      {7, "CLI determinism", 0, cli_determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  // ctest shows output only on failure, so the report is also kept on disk
  std::ofstream report("acceptance_report.txt");
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double t = seconds_since(t0);
    if (c.limit_s > 0)
      o.check(t < c.limit_s, fmt("runtime %.1f s (< %.0f s)", t, c.limit_s));
    else
      o.lines.push_back(fmt("  runtime %.1f s", t));
    failures += !o.pass;
    std::ostringstream text;
    text << "criterion " << c.id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << c.title << "\n";
    for (const auto& l : o.lines) text << l << "\n";
    std::cout << text.str() << std::flush;
    report << text.str() << std::flush;
  }
  return failures == 0 ? 0 : 1;
}
