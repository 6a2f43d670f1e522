#pragma once

// Locally adaptive normal distribution (LAND) mixtures: density,
// responsibilities, the responsibility-weighted negative log-likelihood, its
// mean/covariance gradients, covariance updates on the SPD manifold and the
// alternating fitting loop.

#include "rbq/geodesics.hpp"
#include "rbq/integrator.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rbq {

struct LandComponent {
  Vec mu;
  Mat sigma;                // tangent-space covariance
  double norm_const = 1.0;  // C(mu, Sigma)
  double weight = 1.0;      // pi_k
};

// ---------------------------------------------------------------------------
// SPD manifold with the bi-invariant (affine-invariant) metric

/// Symmetric square root of an SPD matrix.
Mat spd_sqrt(const Mat& x);
/// X^(1/2) expm(X^(-1/2) Xi X^(-1/2)) X^(1/2).
Mat spd_exp(const Mat& x, const Mat& xi);
/// |L^-1 Xi L^-T|_F with X = L L'.
double spd_norm(const Mat& x, const Mat& xi);
/// Riemannian gradient (1/2) S (G + G') S of a Euclidean gradient G.
Mat spd_project(const Mat& sigma, const Mat& euclidean_grad);
/// |logm(A^(-1/2) B A^(-1/2))|_F.
double spd_distance(const Mat& a, const Mat& b);

// ---------------------------------------------------------------------------
// Log maps of the data

/// Log_mu(x_n) for every datum; failed or non-converged solves are flagged.
struct LogMaps {
  Mat v;                  // D x N
  std::vector<char> ok;   // converged flags
  int failures() const;
};

LogMaps compute_log_maps(const Metric& metric, const Vec& mu, const Mat& data, GeodesicCache* cache = nullptr,
                         const LogMapOptions& opts = {}, int threads = 0);

// ---------------------------------------------------------------------------
// Density and objective

/// log p(x) = -<v, S^-1 v>/2 - log C for v = Log_mu(x).
double land_log_density(const LandComponent& c, const Vec& log_v);
/// Throws NumericalError when the log map did not converge.
double land_density(const LandComponent& c, const GeodesicSolution& log);

/// N x K responsibilities. Failed log maps contribute nothing; a datum for
/// which every component failed gets an all-zero row.
Mat responsibilities(const std::vector<LandComponent>& comps, const std::vector<LogMaps>& logs);

/// Responsibility-weighted terms of one component:
/// sum_n r_nk [ <L_n, S^-1 L_n>/2 + log C - log pi ].
double component_nll(const LandComponent& c, const LogMaps& logs, const Vec& resp);
/// Sum of component_nll over k. Throws NumericalError naming the data
/// indices with non-finite terms.
double nll(const std::vector<LandComponent>& comps, const std::vector<LogMaps>& logs, const Mat& resp);

/// Tangent integrals of g_mu against exp(-v'S^-1 v / 2).
struct TangentMoments {
  double normalization = 0.0;  // C
  Vec vector;                  // int v g exp(...) dv
  Mat matrix;                  // int v v' g exp(...) dv
};

/// Steepest-descent direction sum_n r_n L_n - (R / C) int v g exp(...) dv.
Vec mu_direction(const LandComponent& c, const LogMaps& logs, const Vec& resp, const TangentMoments& m);

/// -1/2 sum_n r_n S^-1 L_n L_n' S^-1 + (R / 2C) S^-1 (int v v' g exp(...) dv) S^-1.
Mat sigma_euclidean_gradient(const LandComponent& c, const LogMaps& logs, const Vec& resp, const TangentMoments& m);

/// Covariance on the manifold: (1/C) int v v' g exp(...) dv.
Mat manifold_covariance(const TangentMoments& m);

// ---------------------------------------------------------------------------
// Integration back ends

/// Supplies the tangent integrals of one mixture component.
class MomentProvider {
 public:
  virtual ~MomentProvider() = default;
  virtual TangentMoments integrate(int component, const Vec& mu, const Mat& sigma) = 0;
  /// Seed for subsequent calls; held fixed within one linesearch.
  virtual void set_seed(std::uint64_t seed) { seed_ = seed; }
  /// Fit iteration attached to subsequently recorded problems.
  virtual void set_iteration(int iteration) { iteration_ = iteration; }

 protected:
  std::uint64_t seed_ = 0;
  int iteration_ = 0;
};

/// One recorded integration problem of a LAND fit.
struct CorpusEntry {
  std::string id;
  int component = 0;
  int iteration = 0;
  bool reuse = false;  // same mu as the component's previous problem
  Vec mu;
  Mat sigma;
};

/// run_integration() with one BqMemory per component. Every call is recorded.
class IntegratorMoments : public MomentProvider {
 public:
  IntegratorMoments(const Metric& metric, Method method, IntegrationBudget budget = {}, BqSettings settings = {});

  TangentMoments integrate(int component, const Vec& mu, const Mat& sigma) override;

  const std::vector<CorpusEntry>& corpus() const { return corpus_; }
  const std::vector<IntegrationResult>& results() const { return results_; }

 private:
  const Metric& metric_;
  Method method_;
  IntegrationBudget budget_;
  BqSettings settings_;
  std::vector<BqMemory> memory_;
  std::vector<CorpusEntry> corpus_;
  std::vector<IntegrationResult> results_;
};

// ---------------------------------------------------------------------------
// Covariance update (linesearch on the SPD manifold)

struct CovarianceUpdateOptions {
  int outer_steps = 2;
  int max_linesearch = 4;     // contractions per outer step
  double initial_step = 1.0;  // alpha_0; the step restarts at alpha_0 / |g|
  double sufficient_decrease = 0.5;
  double contraction = 0.5;
  double optimism = 1.3;
};

struct CovarianceUpdateReport {
  double nll_before = 0.0;
  double nll_after = 0.0;
  int integrations = 0;
  int accepted_steps = 0;
};

/// Two descent steps on Sigma of component k with responsibilities fixed.
/// `moments` must hold the integrals at the current (mu, Sigma) and is
/// replaced by those at the accepted Sigma; `alpha` carries the stepsize
/// between calls (0 restarts it). Each outer step reseeds the provider from
/// `seed`. If the provider throws, component, moments and alpha are left
/// unchanged.
CovarianceUpdateReport covariance_update(int k, LandComponent& comp, const LogMaps& logs, const Vec& resp,
                                         MomentProvider& provider, TangentMoments& moments, double& alpha,
                                         std::uint64_t seed, const CovarianceUpdateOptions& opts = {});

// ---------------------------------------------------------------------------
// Fitting

struct LandOptions {
  int components = 2;
  int max_iterations = 7;    // t_max
  double mu_step = 0.3;      // initial alpha_mu
  double mu_tolerance = 0.01;   // skip components with |d_mu| below this
  double nll_tolerance = 2.0;   // stop when |L(t+1) - L(t)| <= this
  double mu_step_up = 1.1;
  double mu_step_down = 0.75;
  CovarianceUpdateOptions covariance;
  LogMapOptions log_map;
  double cache_threshold = 0.5;
  GeodesicCache* cache = nullptr;  // external log-map cache; overrides cache_threshold
  int threads = 0;  // log maps
  std::uint64_t seed = 0;
};

struct FitIteration {
  int iteration = 0;
  double nll = 0.0;
  double mu_step = 0.0;
  double wall_clock = 0.0;  // seconds since the fit started
  int integrations = 0;     // cumulative
  int log_failures = 0;     // summed over components
  std::vector<LandComponent> components;
};

struct LandFit {
  std::vector<LandComponent> components;
  Mat responsibilities;  // N x K
  std::vector<FitIteration> trace;
  bool converged = false;  // stopped on the likelihood tolerance
  double wall_clock = 0.0;
};

/// k-means++ centres, Euclidean covariance of each centre's cluster,
/// uniform weights; norm_const left at 1.
std::vector<LandComponent> initialize_components(const Mat& data, int k, std::uint64_t seed);

/// Alternating LAND fit. Throws NumericalError (fit-failure) when every log
/// map of a component fails.
LandFit fit_land(const Mat& data, const Metric& metric, MomentProvider& provider, const LandOptions& opts = {},
                 std::vector<LandComponent> init = {});

/// Line records: one "iteration" line followed by one "component" line per
/// component, all numbers printed with %.17g. A non-empty header is written
/// first as '#' comment lines.
void write_fit_trace(const std::filesystem::path& path, const LandFit& fit, const std::string& header = "");

/// Tab-separated corpus: id, component, iteration, reuse, mu (comma list),
/// sigma (row-major comma list). '#' lines are comments.
void write_corpus(const std::filesystem::path& path, const std::vector<CorpusEntry>& corpus,
                  const std::string& header = "");
std::vector<CorpusEntry> read_corpus(const std::filesystem::path& path);

}  // namespace rbq
