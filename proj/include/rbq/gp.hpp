#pragma once

// Noise-free Gaussian process regression with a constant prior mean:
// squared-exponential and Matern-5/2 kernels with per-dimension
// lengthscales, incremental Cholesky updates and type-II maximum likelihood.

#include "rbq/common.hpp"

#include <cstdint>
#include <string>

namespace rbq {

enum class KernelFamily { SquaredExponential, Matern52 };

std::string to_string(KernelFamily f);
KernelFamily kernel_family_from_string(const std::string& s);

struct Kernel {
  KernelFamily family = KernelFamily::SquaredExponential;
  Vec lengthscales;  // D, all > 0
  double output_scale = 1.0;

  Kernel() = default;
  Kernel(KernelFamily f, Vec ls, double scale);

  int dim() const { return static_cast<int>(lengthscales.size()); }
  double variance() const { return output_scale * output_scale; }

  double operator()(const Vec& a, const Vec& b) const;
  /// dk(a, b) / da.
  Vec gradient(const Vec& a, const Vec& b) const;
  /// Cross-kernel matrix between the columns of A (D x n) and B (D x m).
  Mat matrix(const Mat& a, const Mat& b) const;

  /// Log-parameters [log l_1 .. log l_D, log s].
  Vec log_params() const;
  void set_log_params(const Vec& p);
  /// dk(a, b) / d log-params.
  Vec param_gradient(const Vec& a, const Vec& b) const;

  void validate() const;
};

class GaussianProcess {
 public:
  GaussianProcess() = default;
  explicit GaussianProcess(Kernel kernel, double prior_mean = 0.0);

  const Kernel& kernel() const { return kernel_; }
  /// Replaces the kernel and refactorizes.
  void set_kernel(const Kernel& k);
  double prior_mean() const { return prior_mean_; }
  void set_prior_mean(double m);

  int size() const { return static_cast<int>(values_.size()); }
  int dim() const { return kernel_.dim(); }
  /// Observed inputs as columns (D x M).
  const Mat& inputs() const { return inputs_; }
  const Vec& values() const { return values_; }
  /// Absolute jitter currently added to the Gram diagonal.
  double jitter() const { return jitter_; }

  /// Appends one observation with a rank-one Cholesky extension.
  /// Throws InvalidArgument if v lies within 1e-10 of an existing input.
  void add_observation(const Vec& v, double f);
  /// Replaces all observations (inputs as columns).
  void condition(const Mat& inputs, const Vec& values);
  void clear();

  struct Moments {
    double mean;
    double variance;
  };
  Moments posterior(const Vec& v) const;
  double posterior_cross(const Vec& v, const Vec& w) const;
  /// Posterior mean and variance with their gradients in v.
  void posterior_with_gradient(const Vec& v, double& mean, double& var, Vec& dmean, Vec& dvar) const;

  /// Posterior means at the columns of `points` (D x S).
  Vec posterior_mean_batch(const Mat& points) const;
  /// Posterior means and marginal variances at the columns of `points`.
  void posterior_batch(const Mat& points, Vec& mean, Vec& var) const;
  /// Posterior covariance between the columns of A and B.
  Mat posterior_covariance(const Mat& a, const Mat& b) const;

  double log_marginal_likelihood() const;
  /// Gradient of the log marginal likelihood in the kernel log-params.
  Vec lml_gradient() const;

 private:
  void refactorize();
  bool try_factor(double jitter);

  Kernel kernel_;
  double prior_mean_ = 0.0;
  Mat inputs_;      // D x M
  Vec values_;      // M
  Mat chol_;        // M x M lower factor of K + jitter I
  Vec alpha_;       // (K + jitter I)^{-1} (f - m0)
  double jitter_ = 0.0;
};

/// Log marginal likelihood and gradient for explicit data; +inf-safe:
/// returns -infinity when the Gram matrix cannot be factored.
double log_marginal_likelihood(const Kernel& kernel, double prior_mean, const Mat& inputs, const Vec& values,
                               Vec* gradient = nullptr);

struct HyperOptOptions {
  int restarts = 3;  // including the warm start from the current kernel
  int max_iterations = 100;
  double lower = 1e-3;  // bounds relative to the input / output scale
  double upper = 1e3;
  std::uint64_t seed = 0;
};

/// Maximizes the log marginal likelihood over the log-params with box
/// constraints; best of `restarts` starts. Never lowers the likelihood of
/// the incoming kernel. Returns the final log marginal likelihood.
double optimize_hyperparameters(GaussianProcess& gp, const HyperOptOptions& opts = {});

}  // namespace rbq
