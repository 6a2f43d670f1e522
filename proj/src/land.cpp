#include "rbq/land.hpp"

#include "rbq/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace rbq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

Eigen::SelfAdjointEigenSolver<Mat> spd_eigen(const Mat& x, const char* what) {
  if (x.rows() != x.cols() || x.rows() == 0) throw InvalidArgument(std::string(what) + ": matrix must be square");
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(x));
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0))
    throw NumericalError(std::string(what) + ": SPD violation");
  return es;
}

Eigen::LLT<Mat> spd_llt(const Mat& x, const char* what) {
  Eigen::LLT<Mat> llt(x);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": SPD violation (Cholesky failed)");
  return llt;
}

// Sum of the responsibilities of data with a converged log map.
double included_mass(const LogMaps& logs, const Vec& resp) {
  double r = 0.0;
  for (Eigen::Index n = 0; n < resp.size(); ++n)
    if (logs.ok[n]) r += resp[n];
  return r;
}

void check_sizes(const LogMaps& logs, const Vec& resp) {
  if (static_cast<Eigen::Index>(logs.ok.size()) != resp.size() || logs.v.cols() != resp.size())
    throw InvalidArgument("land: responsibilities and log maps disagree in size");
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string join(const double* p, Eigen::Index n) {
  std::string s;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i) s += ',';
    s += fmt(p[i]);
  }
  return s;
}

std::vector<double> split_numbers(const std::string& s, std::size_t line) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ParseError("corpus: bad number '" + item + "'", line);
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// SPD manifold

Mat spd_sqrt(const Mat& x) {
  const auto es = spd_eigen(x, "spd_sqrt");
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

Mat spd_exp(const Mat& x, const Mat& xi) {
  const auto es = spd_eigen(x, "spd_exp");
  if (xi.rows() != x.rows() || xi.cols() != x.cols()) throw InvalidArgument("spd_exp: shape mismatch");
  const Mat& u = es.eigenvectors();
  const Vec s = es.eigenvalues().cwiseSqrt();
  const Mat half = u * s.asDiagonal() * u.transpose();
  const Mat inv_half = u * s.cwiseInverse().asDiagonal() * u.transpose();
  Eigen::SelfAdjointEigenSolver<Mat> inner(symmetrize(inv_half * xi * inv_half));
  const Mat e = inner.eigenvectors() * inner.eigenvalues().array().exp().matrix().asDiagonal() *
                inner.eigenvectors().transpose();
  return symmetrize(half * e * half);
}

double spd_norm(const Mat& x, const Mat& xi) {
  const auto llt = spd_llt(x, "spd_norm");
  const Mat y = llt.matrixL().solve(xi);
  const Mat z = llt.matrixL().solve(y.transpose());
  return z.norm();
}

Mat spd_project(const Mat& sigma, const Mat& euclidean_grad) {
  return symmetrize(0.5 * sigma * (euclidean_grad + euclidean_grad.transpose()) * sigma);
}

double spd_distance(const Mat& a, const Mat& b) {
  const auto es = spd_eigen(a, "spd_distance");
  const Mat inv_half =
      es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  const auto inner = spd_eigen(inv_half * b * inv_half, "spd_distance");
  return inner.eigenvalues().array().log().matrix().norm();
}

// ---------------------------------------------------------------------------
// Log maps

int LogMaps::failures() const { return static_cast<int>(std::count(ok.begin(), ok.end(), 0)); }

LogMaps compute_log_maps(const Metric& metric, const Vec& mu, const Mat& data, GeodesicCache* cache,
                         const LogMapOptions& opts, int threads) {
  if (data.cols() != metric.dim() || mu.size() != metric.dim())
    throw InvalidArgument("compute_log_maps: dimension mismatch");
  const int n = static_cast<int>(data.rows());
  LogMaps out;
  out.v = Mat::Zero(metric.dim(), n);
  out.ok.assign(n, 0);
  parallel_for(n, threads, [&](int i) {
    try {
      const GeodesicSolution s = log_map(metric, mu, data.row(i).transpose(), cache, opts);
      if (s.converged && s.initial_velocity.allFinite()) {
        out.v.col(i) = s.initial_velocity;
        out.ok[i] = 1;
      }
    } catch (const GeodesicFailure&) {
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Density and objective

double land_log_density(const LandComponent& c, const Vec& log_v) {
  if (!(c.norm_const > 0.0)) throw InvalidArgument("land density: normalization constant must be positive");
  const auto llt = spd_llt(c.sigma, "land density");
  return -0.5 * log_v.dot(llt.solve(log_v)) - std::log(c.norm_const);
}

double land_density(const LandComponent& c, const GeodesicSolution& log) {
  if (!log.converged) throw NumericalError("land density undefined: log map did not converge");
  return std::exp(land_log_density(c, log.initial_velocity));
}

Mat responsibilities(const std::vector<LandComponent>& comps, const std::vector<LogMaps>& logs) {
  const int k = static_cast<int>(comps.size());
  if (k == 0 || static_cast<int>(logs.size()) != k) throw InvalidArgument("responsibilities: size mismatch");
  const int n = static_cast<int>(logs[0].ok.size());
  Mat lp = Mat::Constant(n, k, -std::numeric_limits<double>::infinity());
  for (int j = 0; j < k; ++j) {
    if (static_cast<int>(logs[j].ok.size()) != n) throw InvalidArgument("responsibilities: size mismatch");
    const auto llt = spd_llt(comps[j].sigma, "responsibilities");
    const double base = std::log(comps[j].weight) - std::log(comps[j].norm_const);
    for (int i = 0; i < n; ++i)
      if (logs[j].ok[i]) lp(i, j) = base - 0.5 * logs[j].v.col(i).dot(llt.solve(logs[j].v.col(i)));
  }
  Mat r = Mat::Zero(n, k);
  for (int i = 0; i < n; ++i) {
    const double m = lp.row(i).maxCoeff();
    if (!std::isfinite(m)) continue;
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += (r(i, j) = std::exp(lp(i, j) - m));
    r.row(i) /= s;
  }
  return r;
}

double component_nll(const LandComponent& c, const LogMaps& logs, const Vec& resp) {
  check_sizes(logs, resp);
  const auto llt = spd_llt(c.sigma, "component_nll");
  const double offset = std::log(c.norm_const) - std::log(c.weight);
  double total = 0.0;
  for (Eigen::Index n = 0; n < resp.size(); ++n) {
    if (!logs.ok[n] || resp[n] == 0.0) continue;
    total += resp[n] * (0.5 * logs.v.col(n).dot(llt.solve(logs.v.col(n))) + offset);
  }
  return total;
}

double nll(const std::vector<LandComponent>& comps, const std::vector<LogMaps>& logs, const Mat& resp) {
  const int k = static_cast<int>(comps.size());
  if (static_cast<int>(logs.size()) != k || resp.cols() != k) throw InvalidArgument("nll: size mismatch");
  const Eigen::Index n = resp.rows();
  Vec per = Vec::Zero(n);
  for (int j = 0; j < k; ++j) {
    check_sizes(logs[j], resp.col(j));
    const auto llt = spd_llt(comps[j].sigma, "nll");
    const double offset = std::log(comps[j].norm_const) - std::log(comps[j].weight);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!logs[j].ok[i] || resp(i, j) == 0.0) continue;
      per[i] += resp(i, j) * (0.5 * logs[j].v.col(i).dot(llt.solve(logs[j].v.col(i))) + offset);
    }
  }
  if (!per.allFinite()) {
    std::string bad;
    int shown = 0;
    for (Eigen::Index i = 0; i < n && shown < 10; ++i)
      if (!std::isfinite(per[i])) {
        bad += (shown++ ? ", " : "") + std::to_string(i);
      }
    throw NumericalError("nll: non-finite terms for data " + bad);
  }
  return per.sum();
}

Vec mu_direction(const LandComponent& c, const LogMaps& logs, const Vec& resp, const TangentMoments& m) {
  check_sizes(logs, resp);
  if (!(m.normalization > 0.0)) throw NumericalError("mu_direction: normalization constant must be positive");
  Vec d = Vec::Zero(c.mu.size());
  for (Eigen::Index n = 0; n < resp.size(); ++n)
    if (logs.ok[n]) d += resp[n] * logs.v.col(n);
  return d - (included_mass(logs, resp) / m.normalization) * m.vector;
}

Mat sigma_euclidean_gradient(const LandComponent& c, const LogMaps& logs, const Vec& resp, const TangentMoments& m) {
  check_sizes(logs, resp);
  if (!(m.normalization > 0.0))
    throw NumericalError("sigma_euclidean_gradient: normalization constant must be positive");
  const int d = static_cast<int>(c.sigma.rows());
  Mat scatter = Mat::Zero(d, d);
  for (Eigen::Index n = 0; n < resp.size(); ++n)
    if (logs.ok[n]) scatter += resp[n] * logs.v.col(n) * logs.v.col(n).transpose();
  const auto llt = spd_llt(c.sigma, "sigma_euclidean_gradient");
  const Mat prec = llt.solve(Mat::Identity(d, d));
  const Mat g = -0.5 * prec * scatter * prec +
                (included_mass(logs, resp) / (2.0 * m.normalization)) * prec * m.matrix * prec;
  return symmetrize(g);
}

Mat manifold_covariance(const TangentMoments& m) {
  if (!(m.normalization > 0.0)) throw NumericalError("manifold_covariance: normalization constant must be positive");
  return symmetrize(m.matrix / m.normalization);
}

// ---------------------------------------------------------------------------
// Integration back end

IntegratorMoments::IntegratorMoments(const Metric& metric, Method method, IntegrationBudget budget,
                                     BqSettings settings)
    : metric_(metric), method_(method), budget_(budget), settings_(settings) {}

TangentMoments IntegratorMoments::integrate(int component, const Vec& mu, const Mat& sigma) {
  if (component < 0) throw InvalidArgument("IntegratorMoments: negative component index");
  if (static_cast<int>(memory_.size()) <= component) memory_.resize(component + 1);
  BqMemory& mem = memory_[component];

  CorpusEntry e;
  e.id = "p" + std::to_string(corpus_.size());
  e.component = component;
  e.iteration = iteration_;
  e.reuse = mem.has_observations && mem.mu.size() == mu.size() && (mem.mu.array() == mu.array()).all();
  e.mu = mu;
  e.sigma = sigma;

  BqSettings s = settings_;
  s.seed = derive_seed(seed_, static_cast<std::uint64_t>(component));
  IntegrationProblem p{e.id, &metric_, mu, sigma};
  IntegrationResult r = run_integration(p, method_, budget_, s, method_ == Method::Mc ? nullptr : &mem);
  if (method_ == Method::Mc) {
    // MC keeps no observations; track the mean for the reuse flag only
    mem.has_observations = true;
    mem.mu = mu;
  }
  if (!(r.normalization > 0.0) || !std::isfinite(r.normalization))
    throw NumericalError("integration-failure: non-positive normalization constant for " + e.id);
  corpus_.push_back(e);

  TangentMoments m;
  m.normalization = r.normalization;
  m.vector = r.vector;
  m.matrix = r.matrix;
  r.v.resize(0, 0);  // the corpus record does not need the observations
  r.g.resize(0);
  results_.push_back(std::move(r));
  return m;
}

// ---------------------------------------------------------------------------
// Covariance update

CovarianceUpdateReport covariance_update(int k, LandComponent& comp, const LogMaps& logs, const Vec& resp,
                                         MomentProvider& provider, TangentMoments& moments, double& alpha,
                                         std::uint64_t seed, const CovarianceUpdateOptions& opts) {
  CovarianceUpdateReport rep;
  LandComponent cur = comp;
  cur.norm_const = moments.normalization;
  TangentMoments cur_m = moments;
  double a = alpha;
  double obj = component_nll(cur, logs, resp);
  rep.nll_before = obj;

  for (int i = 0; i < opts.outer_steps; ++i) {
    const Mat g = spd_project(cur.sigma, sigma_euclidean_gradient(cur, logs, resp, cur_m));
    const double gn = spd_norm(cur.sigma, g);
    if (!(gn > 0.0) || !std::isfinite(gn)) break;
    if (a == 0.0) a = opts.initial_step / gn;
    provider.set_seed(derive_seed(seed, static_cast<std::uint64_t>(i)));

    LandComponent trial = cur;
    TangentMoments trial_m;
    double trial_obj = 0.0;
    auto evaluate = [&] {
      trial.sigma = spd_exp(cur.sigma, -a * g);
      trial_m = provider.integrate(k, trial.mu, trial.sigma);
      trial.norm_const = trial_m.normalization;
      trial_obj = component_nll(trial, logs, resp);
      ++rep.integrations;
    };
    evaluate();
    int j = 1;
    while (trial_obj > obj - opts.sufficient_decrease * a * gn * gn && j <= opts.max_linesearch) {
      a *= opts.contraction;
      evaluate();
      ++j;
    }
    if (trial_obj > obj) {
      a = 0.0;
    } else {
      cur = trial;
      cur_m = trial_m;
      obj = trial_obj;
      ++rep.accepted_steps;
    }
    if (j != 2) a *= opts.optimism;
  }

  comp = cur;
  moments = cur_m;
  alpha = a;
  rep.nll_after = obj;
  return rep;
}

// ---------------------------------------------------------------------------
// Fitting

std::vector<LandComponent> initialize_components(const Mat& data, int k, std::uint64_t seed) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  if (k < 1) throw InvalidArgument("initialize_components: need at least one component");
  if (n < k) throw InvalidArgument("initialize_components: fewer data than components");

  // k-means++ seeding
  std::mt19937_64 rng(seed);
  std::vector<int> centres{std::uniform_int_distribution<int>(0, n - 1)(rng)};
  Vec dist2 = (data.rowwise() - data.row(centres[0])).rowwise().squaredNorm();
  while (static_cast<int>(centres.size()) < k) {
    int next;
    if (dist2.sum() > 0.0) {
      std::discrete_distribution<int> pick(dist2.data(), dist2.data() + n);
      next = pick(rng);
    } else {
      next = std::uniform_int_distribution<int>(0, n - 1)(rng);
    }
    centres.push_back(next);
    dist2 = dist2.cwiseMin((data.rowwise() - data.row(next)).rowwise().squaredNorm());
  }

  std::vector<int> label(n, 0);
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) {
      const double dd = (data.row(i) - data.row(centres[j])).squaredNorm();
      if (dd < best) {
        best = dd;
        label[i] = j;
      }
    }
  }

  // fallback scale: mean distance to the 10 nearest neighbours
  auto knn_scale = [&] {
    const int nn = std::min(10, n - 1);
    if (nn < 1) return 1.0;
    double total = 0.0;
    std::vector<double> dd(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) dd[j] = (data.row(i) - data.row(j)).norm();
      std::nth_element(dd.begin(), dd.begin() + nn, dd.end());
      double s = 0.0;
      for (int j = 0; j <= nn; ++j) s += dd[j];  // includes the zero self-distance
      total += s / nn;
    }
    return total / n;
  };

  std::vector<LandComponent> out(k);
  for (int j = 0; j < k; ++j) {
    out[j].mu = data.row(centres[j]).transpose();
    out[j].weight = 1.0 / k;
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (label[i] == j) members.push_back(i);
    Mat cov;
    if (static_cast<int>(members.size()) > d) {
      Mat x(members.size(), d);
      for (std::size_t m = 0; m < members.size(); ++m) x.row(m) = data.row(members[m]);
      const Mat c = x.rowwise() - x.colwise().mean();
      cov = c.transpose() * c / static_cast<double>(members.size());
      cov += 1e-9 * std::max(cov.trace() / d, 1e-12) * Mat::Identity(d, d);
    }
    if (cov.size() == 0 || Eigen::LLT<Mat>(cov).info() != Eigen::Success) {
      const double s = knn_scale();
      cov = s * s * Mat::Identity(d, d);
    }
    out[j].sigma = cov;
  }
  return out;
}

LandFit fit_land(const Mat& data, const Metric& metric, MomentProvider& provider, const LandOptions& opts,
                 std::vector<LandComponent> init) {
  const auto t0 = Clock::now();
  if (data.cols() != metric.dim()) throw InvalidArgument("fit_land: data dimension does not match the metric");
  if (opts.max_iterations < 0) throw InvalidArgument("fit_land: negative iteration limit");
  std::vector<LandComponent> comps =
      init.empty() ? initialize_components(data, opts.components, derive_seed(opts.seed, 1)) : std::move(init);
  const int k = static_cast<int>(comps.size());
  const int n = static_cast<int>(data.rows());
  GeodesicCache own_cache(opts.cache_threshold);
  GeodesicCache& cache = opts.cache ? *opts.cache : own_cache;

  auto logs_for = [&](int j, const Vec& mu) {
    LogMaps l = compute_log_maps(metric, mu, data, &cache, opts.log_map, opts.threads);
    if (l.failures() == n)
      throw NumericalError("fit-failure: every log map from the mean of component " + std::to_string(j) +
                           " failed");
    return l;
  };

  std::vector<LogMaps> logs(k);
  std::vector<TangentMoments> moments(k);
  provider.set_iteration(0);
  for (int j = 0; j < k; ++j) {
    logs[j] = logs_for(j, comps[j].mu);
    provider.set_seed(derive_seed(opts.seed, 100 + j));
    moments[j] = provider.integrate(j, comps[j].mu, comps[j].sigma);
    comps[j].norm_const = moments[j].normalization;
  }
  int integrations = k;

  LandFit fit;
  Mat r = responsibilities(comps, logs);
  double obj = nll(comps, logs, r);
  double mu_step = opts.mu_step;
  std::vector<double> sigma_step(k, 0.0);

  auto record = [&](int t) {
    FitIteration it;
    it.iteration = t;
    it.nll = obj;
    it.mu_step = mu_step;
    it.wall_clock = seconds_since(t0);
    it.integrations = integrations;
    for (const auto& l : logs) it.log_failures += l.failures();
    it.components = comps;
    fit.trace.push_back(std::move(it));
  };
  record(0);

  for (int t = 1; t <= opts.max_iterations; ++t) {
    provider.set_iteration(t);
    for (int j = 0; j < k; ++j) {
      const Vec rj = r.col(j);
      // C and its integrals at (mu, Sigma) are carried over from the last update
      const Vec d = mu_direction(comps[j], logs[j], rj, moments[j]);
      if (d.norm() < opts.mu_tolerance) continue;
      const double mass = included_mass(logs[j], rj);
      if (!(mass > 0.0)) continue;

      Vec mu_new;
      try {
        mu_new = exp_map(metric, comps[j].mu, (mu_step / mass) * d).endpoint;
      } catch (const GeodesicFailure&) {
        continue;
      }
      logs[j] = logs_for(j, mu_new);
      comps[j].mu = mu_new;
      const std::uint64_t base = derive_seed(opts.seed, 1000ULL * t + 10ULL * j);
      provider.set_seed(base);
      moments[j] = provider.integrate(j, comps[j].mu, comps[j].sigma);
      comps[j].norm_const = moments[j].normalization;
      ++integrations;

      try {
        const auto rep = covariance_update(j, comps[j], logs[j], rj, provider, moments[j], sigma_step[j],
                                           derive_seed(base, 1), opts.covariance);
        integrations += rep.integrations;
      } catch (const NumericalError&) {
        // integration failed inside the linesearch; Sigma stays
      }
      // the SPD invariant is asserted on every update
      if (Eigen::LLT<Mat>(comps[j].sigma).info() != Eigen::Success)
        throw NumericalError("fit-failure: covariance left the SPD cone");
    }

    const double total = r.sum();
    if (total > 0.0)
      for (int j = 0; j < k; ++j) comps[j].weight = std::max(r.col(j).sum() / total, 1e-300);

    const Mat r_new = responsibilities(comps, logs);
    const double obj_new = nll(comps, logs, r_new);
    mu_step *= obj_new < obj ? opts.mu_step_up : opts.mu_step_down;
    const bool done = std::abs(obj_new - obj) <= opts.nll_tolerance;
    obj = obj_new;
    r = r_new;
    record(t);
    if (done) {
      fit.converged = true;
      break;
    }
  }

  fit.components = comps;
  fit.responsibilities = r;
  fit.wall_clock = seconds_since(t0);
  return fit;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
void write_comment(std::ostream& out, const std::string& header) {
  if (header.empty()) return;
  std::istringstream hs(header);
  std::string line;
  while (std::getline(hs, line)) out << "# " << line << '\n';
}
}  // namespace

void write_fit_trace(const std::filesystem::path& path, const LandFit& fit, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_comment(out, header);
  for (const auto& it : fit.trace) {
    out << "iteration " << it.iteration << " nll " << fmt(it.nll) << " mu_step " << fmt(it.mu_step)
        << " integrations " << it.integrations << " log_failures " << it.log_failures << " wall_clock "
        << fmt(it.wall_clock) << "\n";
    for (std::size_t j = 0; j < it.components.size(); ++j) {
      const auto& c = it.components[j];
      out << "component " << j << " weight " << fmt(c.weight) << " norm_const " << fmt(c.norm_const) << " mu "
          << join(c.mu.data(), c.mu.size());
      const Mat s = c.sigma.transpose();  // row-major
      out << " sigma " << join(s.data(), s.size()) << "\n";
    }
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_corpus(const std::filesystem::path& path, const std::vector<CorpusEntry>& corpus, const std::string& header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_comment(out, header);
  out << "id\tcomponent\titeration\treuse\tmu\tsigma\n";
  for (const auto& e : corpus) {
    const Mat s = e.sigma.transpose();
    out << e.id << '\t' << e.component << '\t' << e.iteration << '\t' << (e.reuse ? 1 : 0) << '\t'
        << join(e.mu.data(), e.mu.size()) << '\t' << join(s.data(), s.size()) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<CorpusEntry> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0;
  bool found = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind('#', 0) == 0) continue;
    found = line.rfind("id\t", 0) == 0;
    break;
  }
  if (!found) throw ParseError("corpus: missing header", lineno == 0 ? 1 : lineno);
  std::vector<CorpusEntry> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, '\t')) f.push_back(item);
    if (f.size() != 6) throw ParseError("corpus: expected 6 fields", lineno);
    CorpusEntry e;
    e.id = f[0];
    try {
      e.component = std::stoi(f[1]);
      e.iteration = std::stoi(f[2]);
      e.reuse = std::stoi(f[3]) != 0;
    } catch (const std::exception&) {
      throw ParseError("corpus: bad integer field", lineno);
    }
    const auto mu = split_numbers(f[4], lineno);
    const auto sg = split_numbers(f[5], lineno);
    const auto d = static_cast<Eigen::Index>(mu.size());
    if (d == 0 || static_cast<Eigen::Index>(sg.size()) != d * d) throw ParseError("corpus: bad shapes", lineno);
    e.mu = Eigen::Map<const Vec>(mu.data(), d);
    e.sigma = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(sg.data(), d, d);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace rbq
