#include "doctest.h"

#include "rbq/bq.hpp"
#include "rbq/data_io.hpp"
#include "rbq/geodesics.hpp"

#include <cmath>
#include <random>

using namespace rbq;

namespace {

Vec vec2(double a, double b) { return (Vec(2) << a, b).finished(); }

Kernel rbf(int d, double ell, double s) { return Kernel(KernelFamily::SquaredExponential, Vec::Constant(d, ell), s); }

// Smooth positive test integrand.
double bump(const Vec& v) { return 0.4 + std::exp(-0.5 * (v - vec2(0.5, -0.3)).squaredNorm()) + 0.2 * v[0] * v[0]; }

WarpedIntegrandModel fitted_2d(WarpMode mode, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Mat v(2, n);
  Vec g(n);
  for (int i = 0; i < n; ++i) {
    v.col(i) = vec2(nd(rng), nd(rng));
    g[i] = bump(v.col(i));
  }
  WarpedIntegrandModel m(rbf(2, 0.8, 1.0), choose_delta(g), mode, 0.5);
  m.condition(v, g);
  return m;
}

// Normal pdf in 1-D.
double npdf(double x, double var) { return std::exp(-0.5 * x * x / var) / std::sqrt(2 * M_PI * var); }

}  // namespace

TEST_CASE("gaussian measure") {
  const Mat s = (Mat(2, 2) << 2.0, 0.3, 0.3, 0.5).finished();
  GaussianMeasure m(s);
  const Vec v = vec2(0.4, -1.1);
  const double direct = std::exp(-0.5 * v.dot(s.inverse() * v)) / (2 * M_PI * std::sqrt(s.determinant()));
  CHECK(m.density(v) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(m.normalizer() == doctest::Approx(2 * M_PI * std::sqrt(s.determinant())).epsilon(1e-12));
  CHECK_THROWS_AS(GaussianMeasure((Mat(2, 2) << 1, 2, 2, 1).finished()), InvalidArgument);
  CHECK_THROWS_AS(GaussianMeasure((Mat(2, 2) << 1, 0.5, 0.1, 1).finished()), InvalidArgument);
}

TEST_CASE("warp and delta rules") {
  CHECK(warp(2.0, 0.0) == 2.0);
  bool clamped = false;
  CHECK(warp(0.5, 1.0, &clamped) == 0.0);
  CHECK(clamped);
  const Vec g = (Vec(3) << 0.2, 5.0, 1.0).finished();
  CHECK(choose_delta(g) == doctest::Approx(2e-4));
  CHECK(choose_delta(Vec::Constant(2, 1e-12)) == 1e-10);
  CHECK(warped_prior_mean(1000.0, 0.1) == doctest::Approx(std::sqrt(2 * 999.9)));

  WarpedIntegrandModel m(rbf(1, 1.0, 1.0), 0.5, WarpMode::Linearized);
  m.add(Vec::Constant(1, 0.0), 0.1);
  CHECK(m.clamped() == 1);
}

TEST_CASE("unwarped mean interpolates and stays above delta") {
  for (const WarpMode mode : {WarpMode::Linearized, WarpMode::MomentMatched}) {
    const auto m = fitted_2d(mode, 25, 3);
    const double jit = m.gp().jitter();
    for (int i = 0; i < m.size(); ++i) {
      const Vec v = m.gp().inputs().col(i);
      const auto mo = m.unwarp_moments(v);
      const double g = m.g_values()[i];
      // k~ vanishes at a node, so both modes interpolate
      CHECK(std::abs(mo.mean - g) <= 10 * jit * std::max(1.0, g) + 1e-9);
      CHECK(mo.variance <= 10 * jit * std::max(1.0, g * g) + 1e-9);
    }
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd(0.0, 3.0);
    for (int i = 0; i < 1000; ++i) CHECK(m.unwarp_moments(vec2(nd(rng), nd(rng))).mean >= m.delta());
  }
}

TEST_CASE("moment-matched prior at a far point") {
  const double c = 3.0, s = 0.7, delta = 1e-3;
  WarpedIntegrandModel m(rbf(2, 0.5, s), delta, WarpMode::MomentMatched, c);
  const auto mo = m.unwarp_moments(vec2(50.0, -40.0));
  CHECK(mo.mean == doctest::Approx(delta + 0.5 * c * c + 0.5 * s * s).epsilon(1e-14));
  // variance of delta + f^2/2 for f ~ N(c, s^2)
  CHECK(mo.variance == doctest::Approx(c * c * s * s + 0.5 * s * s * s * s).epsilon(1e-14));

  // moment-matched mean/variance against sampling f directly
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(c, s);
  double sum = 0, sum2 = 0;
  const int n = 400000;
  for (int i = 0; i < n; ++i) {
    const double g = delta + 0.5 * std::pow(nd(rng), 2);
    sum += g;
    sum2 += g * g;
  }
  const double mean = sum / n, var = sum2 / n - mean * mean;
  CHECK(std::abs(mo.mean - mean) < 5 * std::sqrt(var / n));
  CHECK(mo.variance == doctest::Approx(var).epsilon(2e-2));
}

TEST_CASE("unwarped gradients match finite differences") {
  for (const WarpMode mode : {WarpMode::Linearized, WarpMode::MomentMatched}) {
    const auto m = fitted_2d(mode, 15, 5);
    GaussianMeasure pi(Mat::Identity(2, 2) * 1.5);
    for (const Vec& v : {vec2(0.3, 0.9), vec2(-1.2, 0.4), vec2(2.0, -2.5)}) {
      WarpedIntegrandModel::Moments mo;
      Vec dm, dv;
      m.unwarp_with_gradient(v, mo, dm, dv);
      Vec glu;
      log_uncertainty(m, pi, v, &glu);
      for (int k = 0; k < 2; ++k) {
        const double h = 1e-6;
        Vec a = v, b = v;
        a[k] += h;
        b[k] -= h;
        const auto ma = m.unwarp_moments(a), mb = m.unwarp_moments(b);
        CHECK(dm[k] == doctest::Approx((ma.mean - mb.mean) / (2 * h)).epsilon(1e-5));
        CHECK(dv[k] == doctest::Approx((ma.variance - mb.variance) / (2 * h)).epsilon(1e-5));
        const double fd = (log_uncertainty(m, pi, a) - log_uncertainty(m, pi, b)) / (2 * h);
        CHECK(glu[k] == doctest::Approx(fd).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("constant integrand integrates to one") {
  EuclideanMetric metric(2);
  const double delta = 1e-3;
  WarpedIntegrandModel m(rbf(2, 1.0, 1.0), delta, WarpMode::Linearized, warped_prior_mean(1.0, delta));
  const Mat pts = (Mat(2, 5) << 0, 0.5, -0.5, 0, 0, 0, 0, 0, 0.5, -0.5).finished();
  for (int i = 0; i < 5; ++i) m.add(pts.col(i), metric.volume_element(pts.col(i)));
  GaussianMeasure pi(Mat::Identity(2, 2));
  const auto r = integral_posterior(m, pi);
  CHECK(std::abs(r.mean - 1.0) < 1e-2);
  // g = 1: odd first moment vanishes, second moment is Sigma
  for (int k = 0; k < 2; ++k) CHECK(std::abs(r.vector[k]) <= 3 * r.vector_se[k] + 1e-12);
  CHECK((r.matrix - Mat::Identity(2, 2) * r.mean).cwiseAbs().maxCoeff() <= 3 * r.matrix_se.maxCoeff() + 1e-12);
}

TEST_CASE("integral matches the closed-form RBF embedding in 1-D") {
  // int (delta + m(v)^2 / 2) N(v; 0, sig2) dv with m = m0 + sum_i a_i k(v, x_i):
  // products of squared-exponentials against a Gaussian are Gaussian integrals.
  const double ell = 0.7, s = 1.3, sig2 = 0.8, m0 = 0.6;
  const Vec x = (Vec(5) << -1.5, -0.6, 0.0, 0.4, 1.3).finished();
  Vec g(5);
  for (int i = 0; i < 5; ++i) g[i] = 1.0 + 0.8 * std::sin(2.0 * x[i]) + 0.3 * x[i] * x[i];
  const double delta = choose_delta(g);
  WarpedIntegrandModel m(rbf(1, ell, s), delta, WarpMode::Linearized, m0);
  m.condition(x.transpose(), g);

  // weights alpha = K^-1 (f - m0) from a direct dense solve
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

  GaussianMeasure pi(Mat::Constant(1, 1, sig2));
  const auto r = integral_posterior(m, pi);
  CHECK(std::abs(r.mean - exact) <= 1e-3);
}

TEST_CASE("doubling the sample count shrinks the standard error by sqrt 2") {
  const auto m = fitted_2d(WarpMode::Linearized, 20, 11);
  GaussianMeasure pi(Mat::Identity(2, 2) * 2.0);
  double ratio = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    IntegralOptions a, b;
    a.samples = 4000;
    b.samples = 8000;
    a.seed = b.seed = 100 + rep;
    a.with_variance = b.with_variance = false;
    ratio += integral_posterior(m, pi, b).standard_error / integral_posterior(m, pi, a).standard_error;
  }
  ratio /= 50;
  CHECK(std::abs(ratio - 1 / std::sqrt(2.0)) < 0.2 / std::sqrt(2.0));
}

TEST_CASE("integrals are bit-reproducible for a fixed seed") {
  const auto m = fitted_2d(WarpMode::MomentMatched, 20, 2);
  GaussianMeasure pi(Mat::Identity(2, 2));
  const auto a = integral_posterior(m, pi), b = integral_posterior(m, pi);
  CHECK(a.mean == b.mean);
  CHECK(a.variance == b.variance);
  CHECK(a.matrix == b.matrix);
}

TEST_CASE("vector and matrix integrals against grid quadrature") {
  // densely fitted linear integrand g = 1 + a v1 (clipped positive)
  const double slope = 0.3;
  Mat v(2, 121);
  Vec g(121);
  int c = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      v.col(c) = vec2(-4.0 + 0.8 * i, -4.0 + 0.8 * j);
      g[c] = 1.0 + slope * v(0, c) + 0.25;
      ++c;
    }
  WarpedIntegrandModel m(rbf(2, 1.5, 1.0), 1e-3, WarpMode::Linearized, 1.0);
  m.condition(v, g);
  const Mat sigma = (Mat(2, 2) << 1.0, 0.3, 0.3, 0.6).finished();
  GaussianMeasure pi(sigma);
  const auto r = integral_posterior(m, pi);

  // tensor trapezoid grid over [-7, 7]^2 of the model's own mean
  const int n = 281;
  const double h = 14.0 / (n - 1);
  double z = 0.0;
  Vec vec = Vec::Zero(2);
  Mat mat = Mat::Zero(2, 2);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Vec p = vec2(-7.0 + h * i, -7.0 + h * j);
      const double w = m.unwarp_moments(p).mean * pi.density(p) * h * h;
      z += w;
      vec += w * p;
      mat += w * p * p.transpose();
    }
  CHECK(std::abs(r.mean - z) <= 3 * r.standard_error + 1e-6);
  for (int k = 0; k < 2; ++k) CHECK(std::abs(r.vector[k] - vec[k]) <= 3 * r.vector_se[k] + 1e-6);
  CHECK((r.matrix - mat).cwiseAbs().maxCoeff() <= 3 * r.matrix_se.maxCoeff() + 1e-6);
  // linear integrand: int v g dpi = slope Sigma e1
  CHECK((r.vector - slope * sigma.col(0)).norm() < 2e-2);
}

TEST_CASE("uncertainty sampling") {
  SUBCASE("vanishes at observed nodes") {
    const auto m = fitted_2d(WarpMode::Linearized, 10, 4);
    GaussianMeasure pi(Mat::Identity(2, 2));
    for (int i = 0; i < m.size(); ++i) CHECK(uncertainty(m, pi, m.gp().inputs().col(i)) < 1e-6);
  }
  SUBCASE("matches a dense grid maximum") {
    const auto m = fitted_2d(WarpMode::Linearized, 12, 8);
    GaussianMeasure pi((Mat(2, 2) << 1.5, 0.2, 0.2, 1.0).finished());
    const Vec best = uncertainty_sampling_next(m, pi);
    double grid = 0.0;
    for (int i = 0; i <= 600; ++i)
      for (int j = 0; j <= 600; ++j) grid = std::max(grid, uncertainty(m, pi, vec2(-5 + i / 60.0, -5 + j / 60.0)));
    CHECK(uncertainty(m, pi, best) >= grid * (1 - 1e-6));
  }
  SUBCASE("unconditioned model peaks at the origin") {
    WarpedIntegrandModel m(rbf(2, 1.0, 1.0), 1e-3, WarpMode::Linearized, 2.0);
    GaussianMeasure pi(Mat::Identity(2, 2));
    const Vec best = uncertainty_sampling_next(m, pi);
    CHECK(uncertainty(m, pi, best) >= uncertainty(m, pi, Vec::Zero(2)) * (1 - 1e-6));
  }
  SUBCASE("mirror-symmetric configuration") {
    WarpedIntegrandModel m(rbf(2, 0.8, 1.0), 1e-3, WarpMode::Linearized, 1.0);
    m.add(vec2(0.7, 0.0), 1.2);
    m.add(vec2(-0.7, 0.0), 1.2);
    GaussianMeasure pi(Mat::Identity(2, 2));
    const Vec best = uncertainty_sampling_next(m, pi);
    const double a = uncertainty(m, pi, best), b = uncertainty(m, pi, vec2(-best[0], best[1]));
    CHECK(std::abs(a - b) <= 1e-8 * a);
  }
}

TEST_CASE("simpson rule") {
  Vec y(51);
  for (int i = 0; i <= 50; ++i) y[i] = std::pow(i / 50.0, 2);
  CHECK(simpson(y, 1.0 / 50) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  // 50 nodes = 49 intervals: odd count, still exact for cubics
  Vec c(50);
  for (int i = 0; i < 50; ++i) {
    const double t = 2.0 * i / 49.0;
    c[i] = t * t * t - t + 1.0;
  }
  CHECK(simpson(c, 2.0 / 49) == doctest::Approx(4.0 - 2.0 + 2.0).epsilon(1e-13));
  Vec q(50);
  for (int i = 0; i < 50; ++i) q[i] = std::pow(i / 49.0, 2);
  CHECK(simpson(q, 1.0 / 49) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("alpha max") {
  GaussianMeasure id(Mat::Identity(2, 2));
  const Vec e1 = vec2(1, 0), e2 = vec2(0, 1);
  CHECK(std::abs(alpha_max(id, e1) - std::sqrt(-2 * std::log(0.005))) < 1e-9);
  CHECK(std::abs(alpha_max(id, e1) - 3.2553) < 1e-3);
  GaussianMeasure four(Mat::Identity(2, 2) * 4);
  CHECK(alpha_max(four, e1) == doctest::Approx(2 * alpha_max(id, e1)).epsilon(1e-12));
  GaussianMeasure ell((Mat(2, 2) << 4, 0, 0, 1).finished());
  CHECK(alpha_max(ell, e1) / alpha_max(ell, e2) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(alpha_max(id, e1, 1.0), InvalidArgument);
}

TEST_CASE("dcv symmetry and gradient") {
  SUBCASE("rotational symmetry without observations") {
    WarpedIntegrandModel m(rbf(2, 1.0, 1.0), 1e-3, WarpMode::Linearized, 2.0);
    GaussianMeasure pi(Mat::Identity(2, 2) * 0.7);
    std::vector<double> vals;
    double mean = 0.0;
    for (int i = 0; i < 360; ++i) {
      const double t = i * M_PI / 180.0;
      vals.push_back(dcv_objective(m, pi, vec2(std::cos(t), std::sin(t))));
      mean += vals.back() / 360;
    }
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean) / 360;
    CHECK(var < 1e-8);
    CHECK(std::sqrt(var) / mean < 1e-12);
  }
  SUBCASE("finite differences on the sphere") {
    const auto m = fitted_2d(WarpMode::Linearized, 15, 21);
    for (const Mat& s : {Mat((Mat(2, 2) << 1.0, 0.0, 0.0, 1.0).finished()),
                         Mat((Mat(2, 2) << 2.0, 0.4, 0.4, 0.6).finished())}) {
      GaussianMeasure pi(s);
      for (int k = 0; k < 8; ++k) {
        const double t = 0.3 + k * 0.77;
        const Vec r = vec2(std::cos(t), std::sin(t));
        const Vec tan = vec2(-std::sin(t), std::cos(t));
        const Vec g = dcv_gradient(m, pi, r);
        CHECK(std::abs(g.dot(r)) < 1e-10 * std::max(1.0, g.norm()));
        const double h = 1e-5;
        const double fd =
            (dcv_objective(m, pi, Vec((r + h * tan).normalized())) - dcv_objective(m, pi, Vec((r - h * tan).normalized()))) /
            (2 * h);
        CHECK(std::abs(g.dot(tan) - fd) <= 1e-3 * std::max(std::abs(fd), 1e-3 * dcv_objective(m, pi, r)));
      }
    }
  }
}

TEST_CASE("dcv direction selection") {
  const auto m = fitted_2d(WarpMode::Linearized, 10, 17);
  GaussianMeasure pi((Mat(2, 2) << 1.2, 0.3, 0.3, 0.8).finished());
  DcvOptions o;
  o.seed = 5;
  const Vec r = dcv_select_direction(m, pi, o);
  CHECK(std::abs(r.norm() - 1.0) < 1e-12);
  double grid = 0.0;
  for (int i = 0; i < 720; ++i) {
    const double t = i * M_PI / 360.0;
    grid = std::max(grid, dcv_objective(m, pi, vec2(std::cos(t), std::sin(t))));
  }
  CHECK(dcv_objective(m, pi, r) >= grid * (1 - 1e-3));

  // ascent contract against a random start
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  const Vec r0 = vec2(nd(rng), nd(rng)).normalized();
  CHECK(dcv_objective(m, pi, r) >= dcv_objective(m, pi, r0));
}

TEST_CASE("collecting observations along a ray") {
  const KernelMetric metric(gen_circle(300, 0.3, 2), 0.8, 0.5);
  const Vec mu = vec2(1.0, 0.0);
  GaussianMeasure pi(Mat::Identity(2, 2) * 0.2);
  WarpedIntegrandModel m(rbf(2, 0.5, 1.0), 1e-4, WarpMode::Linearized, 1.0);
  m.add(Vec::Zero(2), metric.volume_element(mu));
  const Vec r = vec2(0.6, 0.8);
  const double a = alpha_max(pi, r);
  const auto geo = exp_map(metric, mu, a * r);

  int first = -1;
  double best = -1;
  for (int j = 0; j < 30; ++j) {
    const double u = uncertainty(m, pi, Vec(a * (j + 1) / 30.0 * r));
    if (u > best) {
      best = u;
      first = j;
    }
  }
  WarpedIntegrandModel before = m;
  const auto batch = dcv_collect_along_ray(m, metric, geo, pi, r, a);
  REQUIRE(batch.alphas.size() == 6);
  CHECK(m.size() == 7);
  CHECK(std::abs(r.norm() - 1.0) < 1e-12);
  for (std::size_t i = 1; i < batch.alphas.size(); ++i) CHECK(batch.alphas[i] > batch.alphas[i - 1]);
  for (double b : batch.alphas) CHECK(b <= a);
  // first pick is the grid argmax; it appears as the model's second node
  CHECK(m.gp().inputs()(0, 1) == doctest::Approx(a * (first + 1) / 30.0 * r[0]).epsilon(1e-14));
  // values come from the dense output of the geodesic
  for (std::size_t i = 0; i < batch.alphas.size(); ++i) {
    const double direct = metric.volume_element(exp_map(metric, mu, batch.alphas[i] * r).endpoint);
    CHECK(batch.g_values[i] == doctest::Approx(direct).epsilon(2e-2));
  }
  (void)before;
}
