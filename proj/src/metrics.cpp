#include "rbq/metrics.hpp"

#include <cmath>
#include <numbers>

namespace rbq {

namespace {

// exp(-690.8) ~ 1e-300; kernel weights below that are flushed to zero.
constexpr double kWeightExponentCutoff = 690.7755;

}  // namespace

// ---------------------------------------------------------------------------
// Metric

void Metric::check_input(const Vec& x) const {
  if (x.size() != dim()) throw InvalidArgument("metric: dimension mismatch");
  require_finite(x, "metric");
}

Tensor3 Metric::metric_derivative_fd(const Vec& x, double fd_scale) const {
  check_input(x);
  const int d = dim();
  const double h = fd_scale * (1.0 + x.norm());
  Tensor3 out(d);
  Vec xp = x, xm = x;
  for (int k = 0; k < d; ++k) {
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    const Mat diff = (metric_at(xp) - metric_at(xm)) / (2.0 * h);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out(i, j, k) = diff(i, j);
    xp[k] = x[k];
    xm[k] = x[k];
  }
  return out;
}

Tensor3 Metric::metric_derivative(const Vec& x) const { return metric_derivative_fd(x, fd_scale_); }

double Metric::volume_element(const Vec& x) const {
  check_input(x);
  const Eigen::LLT<Mat> llt(metric_at(x));
  if (llt.info() != Eigen::Success) throw NumericalError("metric not positive definite");
  return llt.matrixL().toDenseMatrix().diagonal().prod();
}

Vec Metric::geodesic_acceleration(const Vec& x, const Vec& v) const {
  const Tensor3 gamma = christoffel(*this, x);
  const int d = dim();
  Vec acc = Vec::Zero(d);
  for (int k = 0; k < d; ++k) {
    double s = 0.0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) s += gamma(k, i, j) * v[i] * v[j];
    acc[k] = -s;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// DiagonalMetric

void DiagonalMetric::diagonal_with_jacobian(const Vec& x, Vec& diag, Mat& jac) const {
  const int d = dim();
  const double h = fd_scale() * (1.0 + x.norm());
  diag = diagonal(x);
  jac.resize(d, d);
  Vec xp = x, xm = x;
  for (int k = 0; k < d; ++k) {
    xp[k] = x[k] + h;
    xm[k] = x[k] - h;
    jac.col(k) = (diagonal(xp) - diagonal(xm)) / (2.0 * h);
    xp[k] = x[k];
    xm[k] = x[k];
  }
}

Mat DiagonalMetric::metric_at(const Vec& x) const {
  check_input(x);
  return diagonal(x).asDiagonal();
}

Tensor3 DiagonalMetric::metric_derivative(const Vec& x) const {
  check_input(x);
  Vec diag;
  Mat jac;
  diagonal_with_jacobian(x, diag, jac);
  const int d = dim();
  Tensor3 out(d);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) out(i, i, k) = jac(i, k);
  return out;
}

double DiagonalMetric::volume_element(const Vec& x) const {
  check_input(x);
  return std::sqrt(diagonal(x).prod());
}

Vec DiagonalMetric::geodesic_acceleration(const Vec& x, const Vec& v) const {
  // For diagonal M with J(d,k) = dM_dd/dx_k:
  //   a_k = -(2 v_k (J v)_k - (J^T (v*v))_k) / (2 M_kk)
  Vec diag;
  Mat jac;
  diagonal_with_jacobian(x, diag, jac);
  const Vec jv = jac * v;
  const Vec jt_vv = jac.transpose() * v.cwiseProduct(v);
  return -(2.0 * v.cwiseProduct(jv) - jt_vv).cwiseQuotient(2.0 * diag);
}

// ---------------------------------------------------------------------------
// EuclideanMetric

EuclideanMetric::EuclideanMetric(int dim) : dim_(dim) {
  if (dim < 1) throw InvalidArgument("euclidean metric: dim must be >= 1");
}

Vec EuclideanMetric::diagonal(const Vec& x) const {
  check_input(x);
  return Vec::Ones(dim_);
}

void EuclideanMetric::diagonal_with_jacobian(const Vec& x, Vec& diag, Mat& jac) const {
  check_input(x);
  diag = Vec::Ones(dim_);
  jac = Mat::Zero(dim_, dim_);
}

Vec EuclideanMetric::geodesic_acceleration(const Vec& x, const Vec& v) const {
  check_input(x);
  return Vec::Zero(v.size());
}

// ---------------------------------------------------------------------------
// KernelMetric

KernelMetric::KernelMetric(Mat data, double sigma, double rho)
    : data_(std::move(data)), sigma_(sigma), rho_(rho) {
  if (data_.rows() < 1 || data_.cols() < 1) throw InvalidArgument("kernel metric: empty data");
  if (!data_.allFinite()) throw InvalidArgument("kernel metric: non-finite data");
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) throw InvalidArgument("kernel metric: sigma must be > 0");
  if (!(rho_ > 0.0) || !std::isfinite(rho_)) throw InvalidArgument("kernel metric: rho must be > 0");
  const auto n = data_.rows();
  const auto d = data_.cols();
  rows_.resize(static_cast<std::size_t>(n * d));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) rows_[static_cast<std::size_t>(i * d + j)] = data_(i, j);
}

std::optional<double> KernelMetric::far_field_volume() const {
  return std::pow(rho_, -0.5 * static_cast<double>(dim()));
}

Vec KernelMetric::diagonal(const Vec& x) const {
  check_input(x);
  const int d = dim();
  const double inv2s2 = 1.0 / (2.0 * sigma_ * sigma_);
  Vec s = Vec::Zero(d);
  const double* row = rows_.data();
  const auto n = data_.rows();
  for (Eigen::Index i = 0; i < n; ++i, row += d) {
    double r2 = 0.0;
    for (int k = 0; k < d; ++k) {
      const double diff = row[k] - x[k];
      r2 += diff * diff;
    }
    const double e = r2 * inv2s2;
    if (e > kWeightExponentCutoff) continue;
    const double w = std::exp(-e);
    for (int k = 0; k < d; ++k) {
      const double diff = row[k] - x[k];
      s[k] += w * diff * diff;
    }
  }
  return (s.array() + rho_).inverse().matrix();
}

void KernelMetric::diagonal_with_jacobian(const Vec& x, Vec& diag, Mat& jac) const {
  check_input(x);
  const int d = dim();
  const double inv_s2 = 1.0 / (sigma_ * sigma_);
  const double inv2s2 = 0.5 * inv_s2;
  Vec s = Vec::Zero(d);
  Mat ds = Mat::Zero(d, d);  // ds(j, k) = dS_j / dx_k
  std::vector<double> diff(static_cast<std::size_t>(d));
  const double* row = rows_.data();
  const auto n = data_.rows();
  for (Eigen::Index i = 0; i < n; ++i, row += d) {
    double r2 = 0.0;
    for (int k = 0; k < d; ++k) {
      diff[k] = row[k] - x[k];
      r2 += diff[k] * diff[k];
    }
    const double e = r2 * inv2s2;
    if (e > kWeightExponentCutoff) continue;
    const double w = std::exp(-e);
    for (int j = 0; j < d; ++j) {
      const double sq = diff[j] * diff[j];
      const double wsq = w * sq;
      s[j] += wsq;
      // dw/dx_k = w (x_nk - x_k) / sigma^2
      const double c = wsq * inv_s2;
      for (int k = 0; k < d; ++k) ds(j, k) += c * diff[k];
      ds(j, j) -= 2.0 * w * diff[j];
    }
  }
  diag = (s.array() + rho_).inverse().matrix();
  jac.resize(d, d);
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) jac(j, k) = -diag[j] * diag[j] * ds(j, k);
}

// ---------------------------------------------------------------------------
// MixtureMetric

MixtureMetric::MixtureMetric(std::vector<MixtureComponent> components, double rho)
    : components_(std::move(components)), rho_(rho), dim_(0) {
  if (components_.empty()) throw InvalidArgument("mixture metric: no components");
  if (!(rho_ > 0.0) || !std::isfinite(rho_)) throw InvalidArgument("mixture metric: rho must be > 0");
  dim_ = static_cast<int>(components_.front().mean.size());
  if (dim_ < 1) throw InvalidArgument("mixture metric: zero-dimensional component");
  for (const auto& c : components_) {
    if (c.mean.size() != dim_ || c.variance.size() != dim_)
      throw InvalidArgument("mixture metric: inconsistent component dimensions");
    if (!(c.weight > 0.0) || !c.mean.allFinite() || !c.variance.allFinite() || (c.variance.array() <= 0.0).any())
      throw InvalidArgument("mixture metric: invalid component parameters");
    double ln = std::log(c.weight);
    for (int d = 0; d < dim_; ++d) ln -= 0.5 * std::log(2.0 * std::numbers::pi * c.variance[d]);
    log_norm_.push_back(ln);
  }
}

double MixtureMetric::density_and_gradient(const Vec& x, Vec* grad) const {
  double q = 0.0;
  if (grad) grad->setZero(dim_);
  for (std::size_t c = 0; c < components_.size(); ++c) {
    const auto& comp = components_[c];
    double e = log_norm_[c];
    for (int d = 0; d < dim_; ++d) {
      const double diff = x[d] - comp.mean[d];
      e -= 0.5 * diff * diff / comp.variance[d];
    }
    const double p = std::exp(e);
    q += p;
    if (grad && p > 0.0)
      for (int d = 0; d < dim_; ++d) (*grad)[d] -= p * (x[d] - comp.mean[d]) / comp.variance[d];
  }
  return q;
}

double MixtureMetric::density(const Vec& x) const {
  check_input(x);
  return density_and_gradient(x, nullptr);
}

Vec MixtureMetric::diagonal(const Vec& x) const {
  check_input(x);
  const double q = density_and_gradient(x, nullptr);
  return Vec::Constant(dim_, std::pow(q + rho_, -2.0 / dim_));
}

void MixtureMetric::diagonal_with_jacobian(const Vec& x, Vec& diag, Mat& jac) const {
  check_input(x);
  Vec grad;
  const double q = density_and_gradient(x, &grad);
  const double base = q + rho_;
  const double m = std::pow(base, -2.0 / dim_);
  diag = Vec::Constant(dim_, m);
  const double dm = (-2.0 / dim_) * m / base;
  jac.resize(dim_, dim_);
  for (int d = 0; d < dim_; ++d) jac.row(d) = dm * grad.transpose();
}

// ---------------------------------------------------------------------------
// Function metrics

FunctionDiagonalMetric::FunctionDiagonalMetric(int dim, std::function<Vec(const Vec&)> diag)
    : dim_(dim), fn_(std::move(diag)) {
  if (dim < 1 || !fn_) throw InvalidArgument("function metric: invalid arguments");
}

Vec FunctionDiagonalMetric::diagonal(const Vec& x) const {
  check_input(x);
  return fn_(x);
}

FunctionMetric::FunctionMetric(int dim, std::function<Mat(const Vec&)> fn) : dim_(dim), fn_(std::move(fn)) {
  if (dim < 1 || !fn_) throw InvalidArgument("function metric: invalid arguments");
}

Mat FunctionMetric::metric_at(const Vec& x) const {
  check_input(x);
  return fn_(x);
}

// ---------------------------------------------------------------------------
// Free functions

Tensor3 christoffel(const Metric& metric, const Vec& x) {
  const int d = metric.dim();
  const Tensor3 dm = metric.metric_derivative(x);
  const Mat minv = metric.metric_at(x).ldlt().solve(Mat::Identity(d, d));
  Tensor3 gamma(d);
  for (int k = 0; k < d; ++k)
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        double s = 0.0;
        for (int h = 0; h < d; ++h) s += minv(k, h) * (dm(i, h, j) + dm(j, h, i) - dm(i, j, h));
        gamma(k, i, j) = 0.5 * s;
        gamma(k, j, i) = 0.5 * s;
      }
  return gamma;
}

Vec geodesic_rhs(const Metric& metric, const Vec& gamma, const Vec& gamma_dot) {
  require_finite(gamma_dot, "geodesic_rhs");
  return metric.geodesic_acceleration(gamma, gamma_dot);
}

double squared_speed(const Metric& metric, const Vec& x, const Vec& v) {
  if (const auto* diag = dynamic_cast<const DiagonalMetric*>(&metric))
    return diag->diagonal(x).dot(v.cwiseProduct(v));
  return v.dot(metric.metric_at(x) * v);
}

namespace {

void check_curve(const Metric& metric, const SampledCurve& curve) {
  if (curve.t.size() < 2 || static_cast<Eigen::Index>(curve.t.size()) != curve.points.cols())
    throw InvalidArgument("curve: need >= 2 samples with matching parameter values");
  if (curve.points.rows() != metric.dim()) throw InvalidArgument("curve: dimension mismatch");
}

}  // namespace

double curve_length(const Metric& metric, const SampledCurve& curve) {
  check_curve(metric, curve);
  double len = 0.0;
  for (Eigen::Index i = 0; i + 1 < curve.points.cols(); ++i) {
    const Vec dx = curve.points.col(i + 1) - curve.points.col(i);
    const Vec mid = 0.5 * (curve.points.col(i + 1) + curve.points.col(i));
    len += std::sqrt(squared_speed(metric, mid, dx));
  }
  return len;
}

double curve_energy(const Metric& metric, const SampledCurve& curve) {
  check_curve(metric, curve);
  double energy = 0.0;
  for (Eigen::Index i = 0; i + 1 < curve.points.cols(); ++i) {
    const double dt = curve.t[i + 1] - curve.t[i];
    if (!(dt > 0.0)) throw InvalidArgument("curve: parameter values must increase");
    const Vec dx = curve.points.col(i + 1) - curve.points.col(i);
    const Vec mid = 0.5 * (curve.points.col(i + 1) + curve.points.col(i));
    energy += 0.5 * squared_speed(metric, mid, dx) / dt;
  }
  return energy;
}

}  // namespace rbq
