#include "rbq/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace rbq {

namespace {

constexpr double kSqrt5 = 2.23606797749978969641;
constexpr double kJitterLevels[] = {1e-10, 1e-9, 1e-8, 1e-7, 1e-6};
constexpr double kDuplicateRadius = 1e-10;

// k / s^2 as a function of the scaled distance.
inline double unit_kernel(KernelFamily f, double r2) {
  if (f == KernelFamily::SquaredExponential) return std::exp(-0.5 * r2);
  const double r = std::sqrt(r2);
  return (1.0 + kSqrt5 * r + (5.0 / 3.0) * r2) * std::exp(-kSqrt5 * r);
}

// -(dk/dr) / r / s^2, so that dk/da_d = -s^2 * factor * delta_d / l_d^2.
inline double radial_factor(KernelFamily f, double r2) {
  if (f == KernelFamily::SquaredExponential) return std::exp(-0.5 * r2);
  const double r = std::sqrt(r2);
  return (5.0 / 3.0) * (1.0 + kSqrt5 * r) * std::exp(-kSqrt5 * r);
}

// Element-wise versions of the above. Scalar exp: Eigen's packet exp is no
// faster than libm without AVX.
Mat unit_kernel_matrix(KernelFamily f, const Mat& r2) {
  return r2.unaryExpr([f](double x) { return unit_kernel(f, x); });
}

Mat radial_factor_matrix(KernelFamily f, const Mat& r2) {
  return r2.unaryExpr([f](double x) { return radial_factor(f, x); });
}

// Squared distances between the columns of two already scaled point sets,
// from the differences (no |a|^2 + |b|^2 - 2ab cancellation).
Mat squared_distances(const Mat& as, const Mat& bs) {
  const Eigen::Index d = as.rows();
  Mat r2(as.cols(), bs.cols());
  for (Eigen::Index j = 0; j < bs.cols(); ++j) {
    const double* b = bs.col(j).data();
    for (Eigen::Index i = 0; i < as.cols(); ++i) {
      const double* a = as.col(i).data();
      double s = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
      r2(i, j) = s;
    }
  }
  return r2;
}

}  // namespace

std::string to_string(KernelFamily f) {
  return f == KernelFamily::SquaredExponential ? "rbf" : "matern52";
}

KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "rbf" || s == "se" || s == "squared_exponential") return KernelFamily::SquaredExponential;
  if (s == "matern52" || s == "matern" || s == "matern-5/2") return KernelFamily::Matern52;
  throw InvalidArgument("unknown kernel family '" + s + "'");
}

// ---------------------------------------------------------------------------
// Kernel

Kernel::Kernel(KernelFamily f, Vec ls, double scale) : family(f), lengthscales(std::move(ls)), output_scale(scale) {
  validate();
}

void Kernel::validate() const {
  if (lengthscales.size() == 0) throw InvalidArgument("kernel: empty lengthscales");
  if (!lengthscales.allFinite() || (lengthscales.array() <= 0.0).any())
    throw InvalidArgument("kernel: lengthscales must be finite and > 0");
  if (!std::isfinite(output_scale) || !(output_scale > 0.0)) throw InvalidArgument("kernel: output scale must be > 0");
}

double Kernel::operator()(const Vec& a, const Vec& b) const {
  const double r2 = (a - b).cwiseQuotient(lengthscales).squaredNorm();
  return variance() * unit_kernel(family, r2);
}

Vec Kernel::gradient(const Vec& a, const Vec& b) const {
  const Vec delta = a - b;
  const Vec scaled = delta.cwiseQuotient(lengthscales);
  const double c = variance() * radial_factor(family, scaled.squaredNorm());
  return -c * scaled.cwiseQuotient(lengthscales);
}

Vec Kernel::param_gradient(const Vec& a, const Vec& b) const {
  const Vec scaled = (a - b).cwiseQuotient(lengthscales);
  const double r2 = scaled.squaredNorm();
  Vec g(dim() + 1);
  g.head(dim()) = variance() * radial_factor(family, r2) * scaled.cwiseProduct(scaled);
  g[dim()] = 2.0 * variance() * unit_kernel(family, r2);
  return g;
}

Mat Kernel::matrix(const Mat& a, const Mat& b) const {
  const Vec inv = lengthscales.cwiseInverse();
  return variance() * unit_kernel_matrix(family, squared_distances(inv.asDiagonal() * a, inv.asDiagonal() * b));
}

Vec Kernel::log_params() const {
  Vec p(dim() + 1);
  p.head(dim()) = lengthscales.array().log().matrix();
  p[dim()] = std::log(output_scale);
  return p;
}

void Kernel::set_log_params(const Vec& p) {
  if (p.size() != dim() + 1) throw InvalidArgument("kernel: wrong number of log-params");
  lengthscales = p.head(dim()).array().exp().matrix();
  output_scale = std::exp(p[dim()]);
  validate();
}

// ---------------------------------------------------------------------------
// GaussianProcess

GaussianProcess::GaussianProcess(Kernel kernel, double prior_mean) : kernel_(std::move(kernel)) {
  kernel_.validate();
  set_prior_mean(prior_mean);
  inputs_.resize(kernel_.dim(), 0);
  jitter_ = kJitterLevels[0] * kernel_.variance();
}

void GaussianProcess::set_kernel(const Kernel& k) {
  k.validate();
  if (k.dim() != kernel_.dim()) throw InvalidArgument("set_kernel: dimension mismatch");
  kernel_ = k;
  refactorize();
}

void GaussianProcess::set_prior_mean(double m) {
  if (!std::isfinite(m)) throw InvalidArgument("prior mean must be finite");
  prior_mean_ = m;
  if (size() > 0) alpha_ = chol_.triangularView<Eigen::Lower>().transpose().solve(
                      chol_.triangularView<Eigen::Lower>().solve((values_.array() - prior_mean_).matrix()));
}

void GaussianProcess::clear() {
  inputs_.resize(kernel_.dim(), 0);
  values_.resize(0);
  chol_.resize(0, 0);
  alpha_.resize(0);
  jitter_ = kJitterLevels[0] * kernel_.variance();
}

bool GaussianProcess::try_factor(double jitter) {
  Mat k = kernel_.matrix(inputs_, inputs_);
  k.diagonal().array() += jitter;
  Eigen::LLT<Mat> llt(k);
  if (llt.info() != Eigen::Success) return false;
  Mat l = llt.matrixL();
  if (!l.allFinite() || (l.diagonal().array() <= 0.0).any()) return false;
  chol_ = std::move(l);
  jitter_ = jitter;
  return true;
}

void GaussianProcess::refactorize() {
  const int m = size();
  if (m == 0) {
    jitter_ = kJitterLevels[0] * kernel_.variance();
    chol_.resize(0, 0);
    alpha_.resize(0);
    return;
  }
  bool ok = false;
  for (double level : kJitterLevels)
    if (try_factor(level * kernel_.variance())) {
      ok = true;
      break;
    }
  if (!ok) throw NumericalError("Cholesky factorization failed after jitter escalation to 1e-6");
  alpha_ = chol_.triangularView<Eigen::Lower>().transpose().solve(
      chol_.triangularView<Eigen::Lower>().solve((values_.array() - prior_mean_).matrix()));
}

void GaussianProcess::condition(const Mat& inputs, const Vec& values) {
  if (inputs.rows() != dim() || inputs.cols() != values.size())
    throw InvalidArgument("condition: inconsistent inputs/values");
  if (!inputs.allFinite() || !values.allFinite()) throw InvalidArgument("condition: non-finite data");
  for (Eigen::Index i = 0; i < inputs.cols(); ++i)
    for (Eigen::Index j = 0; j < i; ++j)
      if ((inputs.col(i) - inputs.col(j)).norm() < kDuplicateRadius)
        throw InvalidArgument("condition: duplicate input");
  inputs_ = inputs;
  values_ = values;
  refactorize();
}

void GaussianProcess::add_observation(const Vec& v, double f) {
  if (v.size() != dim()) throw InvalidArgument("add_observation: dimension mismatch");
  if (!v.allFinite() || !std::isfinite(f)) throw InvalidArgument("add_observation: non-finite data");
  const int m = size();
  for (int i = 0; i < m; ++i)
    if ((inputs_.col(i) - v).norm() < kDuplicateRadius) throw InvalidArgument("add_observation: duplicate input");

  const Vec kv = m > 0 ? Vec(kernel_.matrix(inputs_, v).col(0)) : Vec();
  inputs_.conservativeResize(Eigen::NoChange, m + 1);
  inputs_.col(m) = v;
  values_.conservativeResize(m + 1);
  values_[m] = f;

  const double kss = kernel_.variance() + jitter_;
  Vec l = m > 0 ? Vec(chol_.triangularView<Eigen::Lower>().solve(kv)) : Vec();
  const double d2 = kss - (m > 0 ? l.squaredNorm() : 0.0);
  if (!(d2 > 0.5 * jitter_) || !l.allFinite()) {
    refactorize();
    return;
  }
  chol_.conservativeResize(m + 1, m + 1);
  chol_.row(m).head(m) = l.transpose();
  chol_.col(m).head(m).setZero();
  chol_(m, m) = std::sqrt(d2);
  alpha_ = chol_.triangularView<Eigen::Lower>().transpose().solve(
      chol_.triangularView<Eigen::Lower>().solve((values_.array() - prior_mean_).matrix()));
}

GaussianProcess::Moments GaussianProcess::posterior(const Vec& v) const {
  if (v.size() != dim()) throw InvalidArgument("posterior: dimension mismatch");
  if (size() == 0) return {prior_mean_, kernel_.variance()};
  const Vec kv = kernel_.matrix(inputs_, v).col(0);
  const Vec w = chol_.triangularView<Eigen::Lower>().solve(kv);
  return {prior_mean_ + kv.dot(alpha_), std::max(0.0, kernel_.variance() - w.squaredNorm())};
}

double GaussianProcess::posterior_cross(const Vec& v, const Vec& w) const {
  if (v.size() != dim() || w.size() != dim()) throw InvalidArgument("posterior_cross: dimension mismatch");
  const double prior = kernel_(v, w);
  if (size() == 0) return prior;
  const Vec a = chol_.triangularView<Eigen::Lower>().solve(Vec(kernel_.matrix(inputs_, v).col(0)));
  const Vec b = chol_.triangularView<Eigen::Lower>().solve(Vec(kernel_.matrix(inputs_, w).col(0)));
  return prior - a.dot(b);
}

void GaussianProcess::posterior_with_gradient(const Vec& v, double& mean, double& var, Vec& dmean,
                                              Vec& dvar) const {
  if (v.size() != dim()) throw InvalidArgument("posterior: dimension mismatch");
  const int m = size();
  dmean = Vec::Zero(dim());
  dvar = Vec::Zero(dim());
  if (m == 0) {
    mean = prior_mean_;
    var = kernel_.variance();
    return;
  }
  const Vec inv2 = kernel_.lengthscales.array().square().inverse().matrix();
  const Mat diff = (-inputs_).colwise() + v;  // v - x_i
  const Vec r2 = (diff.array().square().colwise() * inv2.array()).colwise().sum().transpose();
  Vec kv(m), fac(m);
  for (int i = 0; i < m; ++i) {
    kv[i] = kernel_.variance() * unit_kernel(kernel_.family, r2[i]);
    fac[i] = kernel_.variance() * radial_factor(kernel_.family, r2[i]);
  }
  const Vec w = chol_.triangularView<Eigen::Lower>().solve(kv);
  const Vec beta = chol_.triangularView<Eigen::Lower>().transpose().solve(w);
  mean = prior_mean_ + kv.dot(alpha_);
  var = kernel_.variance() - w.squaredNorm();
  // dk(v, x_i)/dv = -fac_i (v - x_i) / l^2
  dmean = -inv2.cwiseProduct(diff * fac.cwiseProduct(alpha_));
  dvar = 2.0 * inv2.cwiseProduct(diff * fac.cwiseProduct(beta));
  if (var < 0.0) {
    var = 0.0;
    dvar.setZero();
  }
}

Vec GaussianProcess::posterior_mean_batch(const Mat& points) const {
  if (points.rows() != dim()) throw InvalidArgument("posterior_mean_batch: dimension mismatch");
  if (size() == 0) return Vec::Constant(points.cols(), prior_mean_);
  // fused k(X, p)' alpha, without the M x S kernel matrix
  const Vec inv = kernel_.lengthscales.cwiseInverse();
  const Mat xs = inv.asDiagonal() * inputs_;
  const Vec w = kernel_.variance() * alpha_;
  const KernelFamily f = kernel_.family;
  const Eigen::Index d = dim(), m = size();
  Vec out(points.cols());
  Vec p(d);
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    p = inv.cwiseProduct(points.col(j));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double* x = xs.col(i).data();
      double r2 = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) r2 += (x[k] - p[k]) * (x[k] - p[k]);
      acc += w[i] * unit_kernel(f, r2);
    }
    out[j] = acc + prior_mean_;
  }
  return out;
}

void GaussianProcess::posterior_batch(const Mat& points, Vec& mean, Vec& var) const {
  if (points.rows() != dim()) throw InvalidArgument("posterior_batch: dimension mismatch");
  if (size() == 0) {
    mean = Vec::Constant(points.cols(), prior_mean_);
    var = Vec::Constant(points.cols(), kernel_.variance());
    return;
  }
  mean.resize(points.cols());
  var.resize(points.cols());
  constexpr Eigen::Index kChunk = 2048;
  for (Eigen::Index s = 0; s < points.cols(); s += kChunk) {
    const Eigen::Index n = std::min(kChunk, points.cols() - s);
    const Mat k = kernel_.matrix(inputs_, points.middleCols(s, n));
    mean.segment(s, n) = (k.transpose() * alpha_).array() + prior_mean_;
    const Mat w = chol_.triangularView<Eigen::Lower>().solve(k);
    var.segment(s, n) = (kernel_.variance() - w.colwise().squaredNorm().transpose().array()).max(0.0);
  }
}

Mat GaussianProcess::posterior_covariance(const Mat& a, const Mat& b) const {
  Mat prior = kernel_.matrix(a, b);
  if (size() == 0) return prior;
  const Mat wa = chol_.triangularView<Eigen::Lower>().solve(kernel_.matrix(inputs_, a));
  const Mat wb = chol_.triangularView<Eigen::Lower>().solve(kernel_.matrix(inputs_, b));
  prior.noalias() -= wa.transpose() * wb;
  return prior;
}

double GaussianProcess::log_marginal_likelihood() const {
  const int m = size();
  if (m == 0) return 0.0;
  const Vec y = (values_.array() - prior_mean_).matrix();
  return -0.5 * y.dot(alpha_) - chol_.diagonal().array().log().sum() - 0.5 * m * std::log(2.0 * M_PI);
}

Vec GaussianProcess::lml_gradient() const {
  Vec g;
  rbq::log_marginal_likelihood(kernel_, prior_mean_, inputs_, values_, &g);
  return g;
}

// ---------------------------------------------------------------------------
// Marginal likelihood and its optimization

double log_marginal_likelihood(const Kernel& kernel, double prior_mean, const Mat& inputs, const Vec& values,
                               Vec* gradient) {
  const auto m = inputs.cols();
  const int np = kernel.dim() + 1;
  if (gradient) gradient->setZero(np);
  if (m == 0) return 0.0;
  const Mat scaled = kernel.lengthscales.cwiseInverse().asDiagonal() * inputs;
  const Mat r2 = squared_distances(scaled, scaled);
  const Mat k0 = kernel.variance() * unit_kernel_matrix(kernel.family, r2);
  Eigen::LLT<Mat> llt;
  bool ok = false;
  double used_jitter = 0.0;
  for (double level : kJitterLevels) {
    Mat k = k0;
    used_jitter = level * kernel.variance();
    k.diagonal().array() += used_jitter;
    llt.compute(k);
    if (llt.info() == Eigen::Success && (Mat(llt.matrixL()).diagonal().array() > 0.0).all()) {
      ok = true;
      break;
    }
  }
  if (!ok) return -std::numeric_limits<double>::infinity();
  const Vec y = (values.array() - prior_mean).matrix();
  const Vec alpha = llt.solve(y);
  const Mat l = llt.matrixL();
  const double lml =
      -0.5 * y.dot(alpha) - l.diagonal().array().log().sum() - 0.5 * static_cast<double>(m) * std::log(2.0 * M_PI);
  if (!std::isfinite(lml)) return -std::numeric_limits<double>::infinity();
  if (gradient) {
    const Mat kinv = llt.solve(Mat::Identity(m, m));
    const Mat a = alpha * alpha.transpose() - kinv;
    Vec g = Vec::Zero(np);
    // lengthscales: sum_ij a_ij s^2 f(r_ij) (x_id - x_jd)^2 / l_d^2; the diagonal adds nothing
    const Mat w = kernel.variance() * a.cwiseProduct(radial_factor_matrix(kernel.family, r2));
    for (int d = 0; d < kernel.dim(); ++d) {
      const Vec x = scaled.row(d).transpose();
      const Mat diff = x.replicate(1, m) - x.transpose().replicate(m, 1);
      g[d] = w.cwiseProduct(diff.cwiseProduct(diff)).sum();
    }
    // output scale: 2 k_ij off the diagonal, 2 (s^2 + jitter) on it
    g[np - 1] = 2.0 * (a.cwiseProduct(k0).sum() - kernel.variance() * a.trace()) +
                2.0 * (kernel.variance() + used_jitter) * a.trace();
    *gradient = 0.5 * g;
  }
  return lml;
}

namespace {

double population_sd(const Eigen::Ref<const Vec>& x) {
  const double mean = x.mean();
  return std::sqrt((x.array() - mean).square().mean());
}

struct Objective {
  const GaussianProcess& gp;
  Kernel scratch;
  double eval(const Vec& p, Vec& grad) {
    scratch.set_log_params(p);
    return log_marginal_likelihood(scratch, gp.prior_mean(), gp.inputs(), gp.values(), &grad);
  }
};

// Projected BFGS ascent inside the box [lo, hi].
double ascend(Objective& obj, Vec& x, const Vec& lo, const Vec& hi, int max_iterations) {
  const auto n = x.size();
  x = x.cwiseMax(lo).cwiseMin(hi);
  Vec g;
  double f = obj.eval(x, g);
  if (!std::isfinite(f)) return f;
  Mat h = Mat::Identity(n, n);
  for (int it = 0; it < max_iterations; ++it) {
    Vec pg = g;
    for (Eigen::Index i = 0; i < n; ++i)
      if ((x[i] <= lo[i] && g[i] < 0.0) || (x[i] >= hi[i] && g[i] > 0.0)) pg[i] = 0.0;
    if (pg.cwiseAbs().maxCoeff() < 1e-6) break;
    Vec p = h * pg;
    if (p.dot(pg) <= 0.0) {
      h.setIdentity();
      p = pg;
    }
    for (Eigen::Index i = 0; i < n; ++i)
      if (pg[i] == 0.0) p[i] = 0.0;
    const double pmax = p.cwiseAbs().maxCoeff();
    if (pmax > 2.0) p *= 2.0 / pmax;

    double t = 1.0;
    bool accepted = false;
    Vec xn, gn;
    double fn = f;
    for (int ls = 0; ls < 20; ++ls, t *= 0.5) {
      xn = (x + t * p).cwiseMax(lo).cwiseMin(hi);
      fn = obj.eval(xn, gn);
      if (std::isfinite(fn) && fn >= f + 1e-4 * g.dot(xn - x)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const Vec s = xn - x;
    const Vec y = g - gn;  // gradient change of the minimized objective -f
    const double sy = s.dot(y);
    const double improvement = fn - f;
    x = xn;
    f = fn;
    g = gn;
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Mat i_n = Mat::Identity(n, n);
      h = (i_n - rho * s * y.transpose()) * h * (i_n - rho * y * s.transpose()) + rho * s * s.transpose();
    }
    if (improvement < 1e-10 * (1.0 + std::abs(f))) break;
  }
  return f;
}

}  // namespace

double optimize_hyperparameters(GaussianProcess& gp, const HyperOptOptions& opts) {
  if (gp.size() < 2) throw InvalidArgument("optimize_hyperparameters: need >= 2 observations");
  if (opts.restarts < 1) throw InvalidArgument("optimize_hyperparameters: restarts must be >= 1");
  const int d = gp.dim();
  Vec scale(d + 1);
  for (int i = 0; i < d; ++i) {
    const double sd = population_sd(gp.inputs().row(i).transpose());
    scale[i] = sd > 0.0 ? sd : 1.0;
  }
  const double out = std::sqrt((gp.values().array() - gp.prior_mean()).square().mean());
  scale[d] = out > 1e-12 ? out : 1.0;
  const Vec lo = (opts.lower * scale).array().log().matrix();
  const Vec hi = (opts.upper * scale).array().log().matrix();

  Objective obj{gp, gp.kernel()};
  const double incumbent = gp.log_marginal_likelihood();
  double best_f = -std::numeric_limits<double>::infinity();
  Vec best_x;

  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int r = 0; r < opts.restarts; ++r) {
    Vec x(d + 1);
    if (r == 0) {
      x = gp.kernel().log_params();
    } else {
      // random start in the central part of the box (0.1x to 10x the data scale)
      for (int i = 0; i <= d; ++i) x[i] = std::log(scale[i]) + std::log(10.0) * (2.0 * unit(rng) - 1.0);
    }
    const double f = ascend(obj, x, lo, hi, opts.max_iterations);
    if (std::isfinite(f) && f > best_f) {
      best_f = f;
      best_x = x;
    }
  }
  if (!std::isfinite(best_f) && !std::isfinite(incumbent))
    throw NumericalError("hyperparameter optimization: no restart produced a finite likelihood");
  if (std::isfinite(best_f) && (best_f > incumbent || !std::isfinite(incumbent))) {
    Kernel k = gp.kernel();
    k.set_log_params(best_x);
    gp.set_kernel(k);
    return gp.log_marginal_likelihood();
  }
  return incumbent;
}

}  // namespace rbq
