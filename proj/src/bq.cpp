#include "rbq/bq.hpp"

#include "rbq/geodesics.hpp"
#include "rbq/metrics.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/random/sobol.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

namespace rbq {

namespace {

constexpr double kLog2Pi = 1.83787706640934548356;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------------------
// GaussianMeasure

GaussianMeasure::GaussianMeasure(const Mat& covariance) : cov_(covariance) {
  if (cov_.rows() == 0 || cov_.rows() != cov_.cols()) throw InvalidArgument("GaussianMeasure: covariance must be square");
  if (!cov_.allFinite()) throw InvalidArgument("GaussianMeasure: non-finite covariance");
  const double scale = cov_.cwiseAbs().maxCoeff();
  if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw InvalidArgument("GaussianMeasure: covariance is not symmetric");
  cov_ = 0.5 * (cov_ + cov_.transpose());
  Eigen::LLT<Mat> llt(cov_);
  if (llt.info() != Eigen::Success || llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= 0.0)
    throw InvalidArgument("GaussianMeasure: covariance is not positive definite");
  chol_ = llt.matrixL();
  prec_ = llt.solve(Mat::Identity(dim(), dim()));
  prec_ = 0.5 * (prec_ + prec_.transpose());
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
}

double GaussianMeasure::log_density(const Vec& v) const {
  const Vec z = chol_.triangularView<Eigen::Lower>().solve(v);
  return -0.5 * z.squaredNorm() - 0.5 * log_det_ - 0.5 * dim() * kLog2Pi;
}

double GaussianMeasure::density(const Vec& v) const { return std::exp(log_density(v)); }

double GaussianMeasure::normalizer() const { return std::exp(0.5 * (dim() * kLog2Pi + log_det_)); }

// ---------------------------------------------------------------------------
// Warping

std::string to_string(WarpMode m) { return m == WarpMode::Linearized ? "wsabi-l" : "wsabi-m"; }

double warp(double g, double delta, bool* clamped) {
  if (clamped) *clamped = false;
  if (!(g >= delta)) {
    if (clamped) *clamped = true;
    return 0.0;
  }
  return std::sqrt(2.0 * (g - delta));
}

double choose_delta(const Vec& g) {
  if (g.size() == 0) return 1e-10;
  return std::max(1e-3 * g.minCoeff(), 1e-10);
}

double warped_prior_mean(double g_prior, double delta) {
  if (!(g_prior > delta)) return 0.0;
  return std::sqrt(2.0 * (g_prior - delta));
}

WarpedIntegrandModel::WarpedIntegrandModel(Kernel kernel, double delta, WarpMode mode, double f_prior_mean)
    : gp_(std::move(kernel), f_prior_mean), delta_(delta), mode_(mode) {
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("WarpedIntegrandModel: delta must be > 0");
}

void WarpedIntegrandModel::add(const Vec& v, double g) {
  if (!std::isfinite(g)) throw InvalidArgument("WarpedIntegrandModel: non-finite integrand value");
  bool c = false;
  const double f = warp(g, delta_, &c);
  gp_.add_observation(v, f);
  if (c) ++clamped_;
  g_.conservativeResize(g_.size() + 1);
  g_[g_.size() - 1] = g;
}

void WarpedIntegrandModel::condition(const Mat& inputs, const Vec& g) {
  if (inputs.cols() != g.size()) throw InvalidArgument("WarpedIntegrandModel: size mismatch");
  Vec f(g.size());
  int c = 0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) throw InvalidArgument("WarpedIntegrandModel: non-finite integrand value");
    bool ci = false;
    f[i] = warp(g[i], delta_, &ci);
    c += ci;
  }
  gp_.condition(inputs, f);
  g_ = g;
  clamped_ = c;
}

WarpedIntegrandModel::Moments WarpedIntegrandModel::unwarp_moments(const Vec& v) const {
  const auto p = gp_.posterior(v);
  const double eta = this->eta();
  return {delta_ + 0.5 * p.mean * p.mean + 0.5 * eta * p.variance,
          p.mean * p.mean * p.variance + 0.5 * eta * p.variance * p.variance};
}

double WarpedIntegrandModel::unwarped_covariance(const Vec& v, const Vec& w) const {
  const double c = gp_.posterior_cross(v, w);
  const double mv = gp_.posterior(v).mean, mw = gp_.posterior(w).mean;
  return mv * c * mw + 0.5 * eta() * c * c;
}

void WarpedIntegrandModel::unwarp_with_gradient(const Vec& v, Moments& out, Vec& dmean, Vec& dvar) const {
  double m, k;
  Vec dm, dk;
  gp_.posterior_with_gradient(v, m, k, dm, dk);
  const double eta = this->eta();
  out.mean = delta_ + 0.5 * m * m + 0.5 * eta * k;
  out.variance = m * m * k + 0.5 * eta * k * k;
  dmean = m * dm + 0.5 * eta * dk;
  dvar = 2.0 * m * k * dm + m * m * dk + eta * k * dk;
}

Vec WarpedIntegrandModel::unwarped_mean_batch(const Mat& points) const {
  if (mode_ == WarpMode::Linearized) {
    const Vec m = gp_.posterior_mean_batch(points);
    return (delta_ + 0.5 * m.array().square()).matrix();
  }
  Vec m, k;
  gp_.posterior_batch(points, m, k);
  return (delta_ + 0.5 * m.array().square() + 0.5 * k.array()).matrix();
}

// ---------------------------------------------------------------------------
// Integrals

const Mat& standard_draws(int dim, int samples, std::uint64_t seed) {
  if (dim < 1 || samples < 2) throw InvalidArgument("standard_draws: need dim >= 1 and samples >= 2");
  using Key = std::tuple<int, int, std::uint64_t>;
  static std::mutex mutex;
  static std::map<Key, std::unique_ptr<Mat>> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto& slot = cache[Key{dim, samples, seed}];
  if (slot) return *slot;

  // Sobol points with a seeded random shift (mod 1), mapped through the
  // inverse normal cdf
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud;
  Vec shift(dim);
  for (int d = 0; d < dim; ++d) shift[d] = ud(rng);
  boost::random::sobol qrng(static_cast<std::size_t>(dim));
  const boost::math::normal_distribution<double> normal;
  constexpr double kEdge = 1e-16;
  Mat z(dim, samples);
  const double scale = 1.0 / (static_cast<double>(qrng.max()) + 1.0);
  for (int s = 0; s < samples; ++s)
    for (int d = 0; d < dim; ++d) {
      double u = qrng() * scale + shift[d];
      u -= std::floor(u);
      z(d, s) = boost::math::quantile(normal, std::clamp(u, kEdge, 1.0 - kEdge));
    }
  // match the first two moments exactly
  const Vec mean = z.rowwise().mean();
  z.colwise() -= mean;
  const Mat cov = z * z.transpose() / samples;
  Eigen::LLT<Mat> llt(cov);
  if (llt.info() == Eigen::Success) z = llt.matrixL().solve(z);
  slot = std::make_unique<Mat>(std::move(z));
  return *slot;
}

IntegralPosterior integral_posterior(const WarpedIntegrandModel& model, const GaussianMeasure& measure,
                                     const IntegralOptions& opts) {
  if (model.dim() != measure.dim()) throw InvalidArgument("integral_posterior: dimension mismatch");
  if (opts.samples < 2) throw InvalidArgument("integral_posterior: need at least 2 samples");
  const int d = measure.dim();
  const int s = opts.samples;
  const Mat v = measure.factor() * standard_draws(d, s, opts.seed);
  const Vec g = model.unwarped_mean_batch(v);

  if (!g.allFinite()) {
    std::ostringstream os;
    os << "integral_posterior: non-finite posterior mean at";
    int shown = 0;
    for (int i = 0; i < s && shown < 5; ++i)
      if (!std::isfinite(g[i])) {
        os << " [" << v.col(i).transpose() << "]";
        ++shown;
      }
    throw NumericalError(os.str());
  }

  IntegralPosterior out;
  out.samples = s;
  out.mean = g.mean();
  const double var_g = (g.array() - out.mean).square().sum() / (s - 1);
  out.standard_error = std::sqrt(var_g / s);

  const Mat vg = v.array().rowwise() * g.transpose().array();
  out.vector = vg.rowwise().mean();
  out.vector_se = ((vg.colwise() - out.vector).array().square().rowwise().sum() / (s - 1) / s).sqrt().matrix();

  out.matrix = vg * v.transpose() / s;
  out.matrix = 0.5 * (out.matrix + out.matrix.transpose());
  const Mat v2 = v.array().square().matrix();
  const Mat second = (v2.array().rowwise() * g.transpose().array().square()).matrix() * v2.transpose() / s;
  out.matrix_se = ((second.array() - out.matrix.array().square()).max(0.0) / s).sqrt().matrix();

  if (opts.with_variance) {
    const int p = std::min(opts.variance_samples, s);
    const Mat a = v.leftCols(p);
    const Mat c = model.gp().posterior_covariance(a, a);
    const Vec m = model.gp().posterior_mean_batch(a);
    const Mat kt = (m.asDiagonal() * c * m.asDiagonal()).array() + 0.5 * model.eta() * c.array().square();
    out.variance = std::max(0.0, kt.mean());
  }
  return out;
}

Vec vector_integral(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const IntegralOptions& opts) {
  IntegralOptions o = opts;
  o.with_variance = false;
  return integral_posterior(model, measure, o).vector;
}

Mat matrix_integral(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const IntegralOptions& opts) {
  IntegralOptions o = opts;
  o.with_variance = false;
  return integral_posterior(model, measure, o).matrix;
}

// ---------------------------------------------------------------------------
// Uncertainty sampling

double log_uncertainty(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& v, Vec* grad) {
  WarpedIntegrandModel::Moments mo;
  Vec dmean, dvar;
  model.unwarp_with_gradient(v, mo, dmean, dvar);
  if (!(mo.variance > 0.0) || !std::isfinite(mo.variance)) {
    if (grad) *grad = Vec::Zero(v.size());
    return kNegInf;
  }
  if (grad) *grad = dvar / mo.variance - 2.0 * (measure.precision() * v);
  return std::log(mo.variance) + 2.0 * measure.log_density(v);
}

double uncertainty(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& v) {
  const auto mo = model.unwarp_moments(v);
  if (!(mo.variance > 0.0)) return 0.0;
  return mo.variance * std::exp(2.0 * measure.log_density(v));
}

namespace {

// Sigma-preconditioned gradient ascent on log u with backtracking.
double ascend_log_u(const WarpedIntegrandModel& model, const GaussianMeasure& measure, Vec& v,
                    const AcquisitionOptions& opts) {
  Vec grad;
  double f = log_uncertainty(model, measure, v, &grad);
  if (!std::isfinite(f)) return f;
  double step = 1.0;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Vec dir = measure.covariance() * grad;
    const double slope = grad.dot(dir);
    if (!(slope > 0.0)) break;
    bool moved = false;
    for (int bt = 0; bt < 30; ++bt) {
      const Vec trial = v + step * dir;
      Vec g2;
      const double f2 = log_uncertainty(model, measure, trial, &g2);
      if (std::isfinite(f2) && f2 >= f + 1e-4 * step * slope) {
        const double gain = f2 - f;
        v = trial;
        f = f2;
        grad = g2;
        moved = true;
        step = std::min(2.0 * step, 1e3);
        if (gain < opts.tolerance) return f;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return f;
}

}  // namespace

Vec uncertainty_sampling_next(const WarpedIntegrandModel& model, const GaussianMeasure& measure,
                              const AcquisitionOptions& opts) {
  if (model.dim() != measure.dim()) throw InvalidArgument("uncertainty_sampling_next: dimension mismatch");
  const int d = measure.dim();
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> nd;
  auto draw = [&] {
    Vec z(d);
    for (int i = 0; i < d; ++i) z[i] = nd(rng);
    return Vec(measure.factor() * z);
  };

  std::vector<Vec> starts;
  for (int i = 0; i < opts.starts; ++i) starts.push_back(draw());
  Vec incumbent;
  double incumbent_f = kNegInf;
  for (int i = 0; i < opts.candidates; ++i) {
    const Vec c = draw();
    const double f = log_uncertainty(model, measure, c);
    if (f > incumbent_f) {
      incumbent_f = f;
      incumbent = c;
    }
  }
  if (incumbent.size() == d) starts.push_back(incumbent);

  Vec best;
  double best_f = kNegInf;
  for (Vec v : starts) {
    const double f = ascend_log_u(model, measure, v, opts);
    if (f > best_f) {
      best_f = f;
      best = v;
    }
  }
  if (!std::isfinite(best_f)) throw NumericalError("uncertainty_sampling_next: acquisition is degenerate at every start");
  return best;
}

// ---------------------------------------------------------------------------
// DCV

Vec simpson_weights(int n) {
  if (n < 2) throw InvalidArgument("simpson_weights: need at least 2 points");
  Vec w = Vec::Zero(n);
  const int m = n - 1;  // intervals
  if (m == 1) {
    w << 0.5, 0.5;
    return w;
  }
  const int even = (m % 2 == 0) ? m : m - 3;
  for (int i = 0; i + 2 <= even; i += 2) {
    w[i] += 1.0 / 3.0;
    w[i + 1] += 4.0 / 3.0;
    w[i + 2] += 1.0 / 3.0;
  }
  if (even != m) {  // closing 3/8 panel
    w[even] += 3.0 / 8.0;
    w[even + 1] += 9.0 / 8.0;
    w[even + 2] += 9.0 / 8.0;
    w[even + 3] += 3.0 / 8.0;
  }
  return w;
}

double simpson(const Vec& y, double h) { return h * simpson_weights(static_cast<int>(y.size())).dot(y); }

double alpha_max(const GaussianMeasure& measure, const Vec& r, double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("alpha_max: p must lie in (0, 1)");
  if (r.size() != measure.dim()) throw InvalidArgument("alpha_max: dimension mismatch");
  const double q = r.dot(measure.precision() * r);
  if (!(q > 0.0)) throw InvalidArgument("alpha_max: zero direction");
  boost::math::chi_squared chi(measure.dim());
  return std::sqrt(boost::math::quantile(chi, p) / q);
}

namespace {

void check_direction(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& r) {
  if (model.dim() != measure.dim() || r.size() != measure.dim()) throw InvalidArgument("dcv: dimension mismatch");
  if (!(r.norm() > 0.0)) throw InvalidArgument("dcv: zero direction");
}

}  // namespace

double dcv_objective(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& r,
                     const DcvOptions& opts) {
  check_direction(model, measure, r);
  const double a = alpha_max(measure, r, opts.p);
  const int n = opts.nodes;
  const double h = a / (n - 1);
  Vec u(n);
  for (int i = 0; i < n; ++i) u[i] = uncertainty(model, measure, Vec((i * h) * r));
  return h * simpson_weights(n).dot(u);
}

Vec dcv_gradient(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const Vec& r,
                 const DcvOptions& opts, double* value) {
  check_direction(model, measure, r);
  const int n = opts.nodes;
  const double a = alpha_max(measure, r, opts.p);
  const double h = a / (n - 1);
  const Vec w = simpson_weights(n);
  const Vec pr = measure.precision() * r;
  const Vec da = -a * pr / r.dot(pr);  // d alpha_max / dr

  // ubar_h(r) = h(r) sum_i w_i u(c_i alpha(r) r),  c_i = i / (n - 1)
  double total = 0.0, radial = 0.0;
  Vec inner = Vec::Zero(r.size());
  WarpedIntegrandModel::Moments mo;
  Vec dmean, dvar;
  for (int i = 0; i < n; ++i) {
    const double beta = i * h;
    const Vec v = beta * r;
    model.unwarp_with_gradient(v, mo, dmean, dvar);
    const double k = std::max(mo.variance, 0.0);
    const double pi2 = std::exp(2.0 * measure.log_density(v));
    const double u = k * pi2;
    // du/dv = pi^2 dk~ + 2 k~ pi dpi,  dpi = -pi Sigma^-1 v
    const Vec du = pi2 * (dvar - 2.0 * k * (measure.precision() * v));
    total += w[i] * u;
    inner += w[i] * beta * du;
    radial += w[i] * (static_cast<double>(i) / (n - 1)) * du.dot(r);
  }
  if (value) *value = h * total;
  Vec g = h * inner + (total / (n - 1) + h * radial) * da;
  const double rr = r.squaredNorm();
  g -= (g.dot(r) / rr) * r;
  g -= (g.dot(r) / rr) * r;
  return g;
}

Vec dcv_select_direction(const WarpedIntegrandModel& model, const GaussianMeasure& measure, const DcvOptions& opts) {
  const int d = measure.dim();
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> nd;
  Vec r;
  double f = kNegInf;
  for (int i = 0; i < std::max(1, opts.initial_directions); ++i) {
    Vec c(d);
    do {
      for (int j = 0; j < d; ++j) c[j] = nd(rng);
    } while (c.norm() == 0.0);
    c.normalize();
    const double fc = dcv_objective(model, measure, c, opts);
    if (fc > f || r.size() == 0) {
      f = fc;
      r = c;
    }
  }
  if (d == 1) return r;

  auto retract = [](const Vec& x, const Vec& xi) { return Vec((x + xi).normalized()); };
  double prev_f = std::numeric_limits<double>::quiet_NaN();
  for (int step = 0; step < opts.max_steps; ++step) {
    double f0;
    const Vec g = dcv_gradient(model, measure, r, opts, &f0);
    const double gn2 = g.squaredNorm();
    if (!(gn2 > 0.0) || !std::isfinite(gn2)) break;
    double alpha = opts.initial_step / std::sqrt(gn2);
    if (std::isfinite(prev_f) && f0 > prev_f) alpha = opts.optimism * 2.0 * (f0 - prev_f) / gn2;
    Vec trial = retract(r, alpha * g);
    double ft = dcv_objective(model, measure, trial, opts);
    int tries = 1;
    while (!(ft >= f0 + opts.sufficient_increase * alpha * gn2) && tries < opts.linesearch_steps) {
      alpha *= opts.contraction;
      trial = retract(r, alpha * g);
      ft = dcv_objective(model, measure, trial, opts);
      ++tries;
    }
    prev_f = f0;
    if (!(ft > f0)) break;
    r = trial;
    if (alpha * std::sqrt(gn2) < opts.min_step) break;
  }
  return r;
}

RayObservationBatch dcv_collect_along_ray(WarpedIntegrandModel& model, const Metric& metric,
                                          const GeodesicSolution& geodesic, const GaussianMeasure& measure,
                                          const Vec& r, double alpha, int candidates, int picks, long source) {
  if (!(alpha > 0.0)) throw InvalidArgument("dcv_collect_along_ray: alpha must be positive");
  if (candidates < 1 || picks < 0) throw InvalidArgument("dcv_collect_along_ray: bad candidate counts");
  RayObservationBatch batch;
  batch.direction = r;
  batch.source = source;
  if (!geodesic.converged) return batch;  // skip the ray

  std::vector<bool> used(candidates, false);
  std::vector<std::pair<double, double>> taken;
  while (static_cast<int>(taken.size()) < picks) {
    int best = -1;
    double best_u = -1.0;
    for (int j = 0; j < candidates; ++j) {
      if (used[j]) continue;
      const double beta = alpha * (j + 1) / candidates;
      const double u = uncertainty(model, measure, Vec(beta * r));
      if (u > best_u) {
        best_u = u;
        best = j;
      }
    }
    if (best < 0) break;
    used[best] = true;
    const double beta = alpha * (best + 1) / candidates;
    const double g = metric.volume_element(geodesic.point(beta / alpha));
    try {
      model.add(beta * r, g);
    } catch (const InvalidArgument&) {
      continue;  // coincides with an existing node
    }
    taken.emplace_back(beta, g);
  }
  std::sort(taken.begin(), taken.end());
  for (const auto& [b, g] : taken) {
    batch.alphas.push_back(b);
    batch.g_values.push_back(g);
  }
  return batch;
}

}  // namespace rbq
