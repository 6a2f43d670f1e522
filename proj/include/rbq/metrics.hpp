#pragma once

// Riemannian metric fields on R^D learned from data, plus the differential
// geometry needed by the geodesic solvers (Christoffel symbols, geodesic ODE).

#include "rbq/common.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>

namespace rbq {

/// A smoothly varying SPD matrix field M(x) on R^D.
///
/// Subclasses must implement metric_at(). metric_derivative() defaults to
/// central finite differences with step h = fd_scale * (1 + |x|), so any
/// user-supplied metric can drive the geodesic solvers.
class Metric {
 public:
  virtual ~Metric() = default;

  virtual int dim() const = 0;
  virtual std::string family() const = 0;

  /// Metric tensor at x (D x D, SPD).
  virtual Mat metric_at(const Vec& x) const = 0;

  /// dM_ij / dx_k stored as T(i, j, k).
  virtual Tensor3 metric_derivative(const Vec& x) const;

  /// sqrt(det M(x)).
  virtual double volume_element(const Vec& x) const;

  /// Geodesic acceleration  -Gamma^k_ij v^i v^j  at position x with velocity v.
  virtual Vec geodesic_acceleration(const Vec& x, const Vec& v) const;

  /// Volume element far away from the data, when the family defines one.
  virtual std::optional<double> far_field_volume() const { return std::nullopt; }

  /// Central finite-difference derivative, regardless of analytic overrides.
  Tensor3 metric_derivative_fd(const Vec& x, double fd_scale = 1e-5) const;

  void set_fd_scale(double s) { fd_scale_ = s; }
  double fd_scale() const { return fd_scale_; }

 protected:
  void check_input(const Vec& x) const;

 private:
  double fd_scale_ = 1e-5;
};

/// Metric whose tensor is diagonal everywhere. Determinants, inverses and the
/// geodesic right-hand side exploit the structure (O(D^2) per evaluation).
class DiagonalMetric : public Metric {
 public:
  /// Diagonal entries M_dd(x).
  virtual Vec diagonal(const Vec& x) const = 0;

  /// Diagonal entries together with J(d, k) = dM_dd / dx_k. The default
  /// falls back to central differences of diagonal().
  virtual void diagonal_with_jacobian(const Vec& x, Vec& diag, Mat& jac) const;

  Mat metric_at(const Vec& x) const override;
  Tensor3 metric_derivative(const Vec& x) const override;
  double volume_element(const Vec& x) const override;
  Vec geodesic_acceleration(const Vec& x, const Vec& v) const override;
};

/// M(x) = I_D.
class EuclideanMetric final : public DiagonalMetric {
 public:
  explicit EuclideanMetric(int dim);
  int dim() const override { return dim_; }
  std::string family() const override { return "euclidean"; }
  Vec diagonal(const Vec& x) const override;
  void diagonal_with_jacobian(const Vec& x, Vec& diag, Mat& jac) const override;
  Vec geodesic_acceleration(const Vec& x, const Vec& v) const override;
  std::optional<double> far_field_volume() const override { return 1.0; }

 private:
  int dim_;
};

/// Inverse of a locally weighted diagonal covariance:
///   M_dd(x) = 1 / (sum_n w_n(x) (x_nd - x_d)^2 + rho),
///   w_n(x) = exp(-|x_n - x|^2 / (2 sigma^2)).
/// Far from the data every entry tends to 1/rho, so sqrt|M| -> rho^(-D/2).
class KernelMetric final : public DiagonalMetric {
 public:
  /// `data` is N x D (one point per row).
  KernelMetric(Mat data, double sigma, double rho);

  int dim() const override { return static_cast<int>(data_.cols()); }
  std::string family() const override { return "kernel"; }
  Vec diagonal(const Vec& x) const override;
  void diagonal_with_jacobian(const Vec& x, Vec& diag, Mat& jac) const override;
  std::optional<double> far_field_volume() const override;

  double sigma() const { return sigma_; }
  double rho() const { return rho_; }
  const Mat& data() const { return data_; }

 private:
  Mat data_;
  std::vector<double> rows_;  // row-major copy of data_ for the hot loop
  double sigma_;
  double rho_;
};

/// One diagonal Gaussian of an aggregated-posterior mixture.
struct MixtureComponent {
  double weight = 0.0;
  Vec mean;
  Vec variance;  // diagonal
};

/// Isotropic metric from a Gaussian mixture density q(x):
///   M(x) = (q(x) + rho)^(-2/D) I_D,
/// so sqrt|M| = 1 / (q(x) + rho).
class MixtureMetric final : public DiagonalMetric {
 public:
  MixtureMetric(std::vector<MixtureComponent> components, double rho);

  int dim() const override { return dim_; }
  std::string family() const override { return "mixture"; }
  Vec diagonal(const Vec& x) const override;
  void diagonal_with_jacobian(const Vec& x, Vec& diag, Mat& jac) const override;
  std::optional<double> far_field_volume() const override { return 1.0 / rho_; }

  /// Mixture density q(x).
  double density(const Vec& x) const;
  double rho() const { return rho_; }
  const std::vector<MixtureComponent>& components() const { return components_; }

 private:
  double density_and_gradient(const Vec& x, Vec* grad) const;

  std::vector<MixtureComponent> components_;
  std::vector<double> log_norm_;  // log of weight * normalizer per component
  double rho_;
  int dim_;
};

/// Diagonal metric given by an arbitrary callable; derivatives by finite differences.
class FunctionDiagonalMetric final : public DiagonalMetric {
 public:
  FunctionDiagonalMetric(int dim, std::function<Vec(const Vec&)> diag);
  int dim() const override { return dim_; }
  std::string family() const override { return "function-diagonal"; }
  Vec diagonal(const Vec& x) const override;

 private:
  int dim_;
  std::function<Vec(const Vec&)> fn_;
};

/// Full (possibly non-diagonal) metric given by a callable; generic code paths.
class FunctionMetric final : public Metric {
 public:
  FunctionMetric(int dim, std::function<Mat(const Vec&)> fn);
  int dim() const override { return dim_; }
  std::string family() const override { return "function"; }
  Mat metric_at(const Vec& x) const override;

 private:
  int dim_;
  std::function<Mat(const Vec&)> fn_;
};

/// Gamma^k_ij stored as T(k, i, j).
Tensor3 christoffel(const Metric& metric, const Vec& x);

/// Geodesic ODE right-hand side: returns the acceleration.
Vec geodesic_rhs(const Metric& metric, const Vec& gamma, const Vec& gamma_dot);

/// A curve sampled at increasing parameter values t (columns of `points`).
struct SampledCurve {
  std::vector<double> t;
  Mat points;  // D x n
};

/// Length via the midpoint-metric chord rule  sum sqrt(dx^T M(mid) dx).
double curve_length(const Metric& metric, const SampledCurve& curve);
/// Energy  1/2 sum dx^T M(mid) dx / dt.
double curve_energy(const Metric& metric, const SampledCurve& curve);

/// Squared speed <v, M(x) v>.
double squared_speed(const Metric& metric, const Vec& x, const Vec& v);

}  // namespace rbq
