#include "rbq/mc.hpp"

#include "rbq/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

namespace rbq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Mat lower_factor(const Mat& sigma) {
  Eigen::LLT<Mat> llt(sigma);
  if (sigma.rows() != sigma.cols() || llt.info() != Eigen::Success)
    throw InvalidArgument("mc: covariance is not positive definite");
  return llt.matrixL();
}

Mat gaussian_draws(const Mat& sigma, int samples, std::uint64_t seed) {
  const Mat l = lower_factor(sigma);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Mat z(sigma.rows(), samples);
  for (int s = 0; s < samples; ++s)
    for (Eigen::Index d = 0; d < z.rows(); ++d) z(d, s) = nd(rng);
  return l * z;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

ExpMapOptions integrand_exp_options() {
  ExpMapOptions o;
  o.compute_length = false;
  return o;
}

double tangent_integrand(const Metric& metric, const Vec& mu, const Vec& v, const ExpMapOptions& opts) {
  if (v.isZero(0.0)) return metric.volume_element(mu);
  return metric.volume_element(exp_map(metric, mu, v, opts).endpoint);
}

McEstimate estimate_from_samples(const Mat& sigma, const Mat& v, const Vec& g) {
  if (v.cols() != g.size() || v.rows() != sigma.rows()) throw InvalidArgument("mc: sample shape mismatch");
  const int s = static_cast<int>(g.size());
  if (s < 1) throw InvalidArgument("mc: no samples");
  const double z = std::sqrt(std::pow(2.0 * M_PI, static_cast<double>(sigma.rows())) * sigma.determinant());

  McEstimate e;
  e.sample_count = s;
  e.v = v;
  e.g = g;
  const double denom = s > 1 ? s - 1 : 1;
  const double mean = g.mean();
  e.value = z * mean;
  e.standard_error = z * std::sqrt((g.array() - mean).square().sum() / denom / s);

  const Mat vg = v.array().rowwise() * g.transpose().array();
  const Vec vm = vg.rowwise().mean();
  e.vector = z * vm;
  e.vector_se = z * ((vg.colwise() - vm).array().square().rowwise().sum() / denom / s).sqrt().matrix();

  const int d = static_cast<int>(v.rows());
  Mat mm = Mat::Zero(d, d), m2 = Mat::Zero(d, d);
  for (int i = 0; i < s; ++i) {
    const Mat o = g[i] * v.col(i) * v.col(i).transpose();
    mm += o;
    m2 += o.cwiseProduct(o);
  }
  mm /= s;
  m2 /= s;
  e.matrix = z * mm;
  e.matrix_se = z * ((m2.array() - mm.array().square()).max(0.0) * (s / denom) / s).sqrt().matrix();
  return e;
}

McEstimate mc_normalization(const Metric& metric, const Vec& mu, const Mat& sigma, int samples, std::uint64_t seed,
                            int threads) {
  if (samples < 1) throw InvalidArgument("mc_normalization: need at least one sample");
  if (mu.size() != metric.dim() || sigma.rows() != metric.dim()) throw InvalidArgument("mc: dimension mismatch");
  const auto t0 = Clock::now();
  const Mat v = gaussian_draws(sigma, samples, seed);
  Vec g(samples), rt(samples);
  std::vector<char> ok(samples, 0);
  const ExpMapOptions opts = integrand_exp_options();
  parallel_for(samples, threads, [&](int i) {
    const auto ts = Clock::now();
    try {
      g[i] = tangent_integrand(metric, mu, v.col(i), opts);
      ok[i] = std::isfinite(g[i]);
    } catch (const GeodesicFailure&) {
      ok[i] = 0;
    }
    rt[i] = 1e3 * seconds_since(ts);
  });
  std::vector<int> keep;
  for (int i = 0; i < samples; ++i)
    if (ok[i]) keep.push_back(i);
  const int failures = samples - static_cast<int>(keep.size());
  if (2 * failures > samples)
    throw UnreliableEstimate("mc: " + std::to_string(failures) + " of " + std::to_string(samples) +
                             " geodesics failed");
  Mat vk(v.rows(), keep.size());
  Vec gk(keep.size()), rk(keep.size());
  for (std::size_t j = 0; j < keep.size(); ++j) {
    vk.col(j) = v.col(keep[j]);
    gk[j] = g[keep[j]];
    rk[j] = rt[keep[j]];
  }
  McEstimate e = estimate_from_samples(sigma, vk, gk);
  e.failures = failures;
  e.runtime_ms = rk;
  e.wall_clock = seconds_since(t0);
  return e;
}

McEstimate mc_time_limited(const Metric& metric, const Vec& mu, const Mat& sigma, double seconds, std::uint64_t seed) {
  if (mu.size() != metric.dim() || sigma.rows() != metric.dim()) throw InvalidArgument("mc: dimension mismatch");
  const auto t0 = Clock::now();
  const Mat l = lower_factor(sigma);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  const ExpMapOptions opts = integrand_exp_options();
  std::vector<Vec> vs;
  std::vector<double> gs, rts;
  int attempts = 0, failures = 0;
  do {
    Vec z(sigma.rows());
    for (Eigen::Index d = 0; d < z.size(); ++d) z[d] = nd(rng);
    const Vec v = l * z;
    const auto ts = Clock::now();
    ++attempts;
    try {
      const double g = tangent_integrand(metric, mu, v, opts);
      if (!std::isfinite(g)) throw GeodesicFailure("non-finite integrand");
      vs.push_back(v);
      gs.push_back(g);
      rts.push_back(1e3 * seconds_since(ts));
    } catch (const GeodesicFailure&) {
      ++failures;
    }
  } while (seconds_since(t0) < seconds || gs.empty());
  if (2 * failures > attempts)
    throw UnreliableEstimate("mc: " + std::to_string(failures) + " of " + std::to_string(attempts) +
                             " geodesics failed");
  Mat v(sigma.rows(), gs.size());
  for (std::size_t i = 0; i < gs.size(); ++i) v.col(i) = vs[i];
  McEstimate e = estimate_from_samples(sigma, v, Eigen::Map<const Vec>(gs.data(), gs.size()));
  e.failures = failures;
  e.runtime_ms = Eigen::Map<const Vec>(rts.data(), rts.size());
  e.wall_clock = seconds_since(t0);
  return e;
}

// ---------------------------------------------------------------------------
// Ground truth pools

double GroundTruthPool::mean_runtime_ms() const { return runtime_ms.size() ? runtime_ms.mean() : 0.0; }

McEstimate GroundTruthPool::estimate() const {
  McEstimate e = estimate_from_samples(sigma, v, g);
  e.failures = failures;
  e.runtime_ms = runtime_ms;
  e.wall_clock = runtime_ms.sum() * 1e-3;
  return e;
}

GroundTruthPool build_ground_truth(const Metric& metric, const std::string& problem_id, const Vec& mu,
                                   const Mat& sigma, int samples, std::uint64_t seed, int threads) {
  const McEstimate e = mc_normalization(metric, mu, sigma, samples, seed, threads);
  GroundTruthPool p;
  p.problem_id = problem_id;
  p.mu = mu;
  p.sigma = sigma;
  p.seed = seed;
  p.failures = e.failures;
  p.v = e.v;
  p.g = e.g;
  p.runtime_ms = e.runtime_ms;
  return p;
}

void GroundTruthPool::save(const std::filesystem::path& path, const std::string& header) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const int d = static_cast<int>(mu.size());
  out << "rbq-mc-pool 1\n";
  if (!header.empty()) {
    std::istringstream hs(header);
    std::string h;
    while (std::getline(hs, h)) out << "# " << h << '\n';
  }
  out << "problem " << (problem_id.empty() ? "-" : problem_id) << "\n";
  out << "dim " << d << "\nseed " << seed << "\nfailures " << failures << "\nsamples " << size() << "\n";
  out << "mu";
  for (int i = 0; i < d; ++i) out << ' ' << fmt(mu[i]);
  out << "\nsigma";
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out << ' ' << fmt(sigma(i, j));
  out << "\n";
  for (int s = 0; s < size(); ++s) {
    for (int i = 0; i < d; ++i) out << fmt(v(i, s)) << ' ';
    out << fmt(g[s]) << ' ' << fmt(runtime_ms[s]) << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

GroundTruthPool GroundTruthPool::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  std::size_t lineno = 0;
  auto next = [&](const char* key) {
    if (!std::getline(in, line)) throw ParseError(std::string("mc pool: missing ") + key, lineno + 1);
    ++lineno;
    std::istringstream is(line);
    std::string k;
    is >> k;
    if (k != key) throw ParseError(std::string("mc pool: expected ") + key, lineno);
    std::string rest;
    std::getline(is, rest);
    return std::istringstream(rest);
  };
  if (!std::getline(in, line) || line != "rbq-mc-pool 1") throw ParseError("mc pool: bad header", 1);
  ++lineno;
  while (in.peek() == '#') {
    std::getline(in, line);
    ++lineno;
  }
  GroundTruthPool p;
  int d = 0, n = 0;
  next("problem") >> p.problem_id;
  if (p.problem_id == "-") p.problem_id.clear();
  next("dim") >> d;
  next("seed") >> p.seed;
  next("failures") >> p.failures;
  next("samples") >> n;
  if (d < 1 || n < 0) throw ParseError("mc pool: bad sizes", lineno);
  p.mu.resize(d);
  p.sigma.resize(d, d);
  {
    auto is = next("mu");
    for (int i = 0; i < d; ++i)
      if (!(is >> p.mu[i])) throw ParseError("mc pool: short mu", lineno);
  }
  {
    auto is = next("sigma");
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (!(is >> p.sigma(i, j))) throw ParseError("mc pool: short sigma", lineno);
  }
  p.v.resize(d, n);
  p.g.resize(n);
  p.runtime_ms.resize(n);
  for (int s = 0; s < n; ++s) {
    if (!std::getline(in, line)) throw ParseError("mc pool: truncated", lineno + 1);
    ++lineno;
    std::istringstream is(line);
    for (int i = 0; i < d; ++i)
      if (!(is >> p.v(i, s))) throw ParseError("mc pool: short sample row", lineno);
    if (!(is >> p.g[s] >> p.runtime_ms[s])) throw ParseError("mc pool: short sample row", lineno);
  }
  return p;
}

McEstimate mc_subsample(const GroundTruthPool& pool, int count, std::uint64_t seed) {
  if (count < 1) throw InvalidArgument("mc_subsample: count must be >= 1");
  if (count > pool.size())
    throw InvalidArgument("mc_subsample: requested " + std::to_string(count) + " samples from a pool of " +
                          std::to_string(pool.size()));
  std::vector<int> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // partial Fisher-Yates
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, pool.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  Mat v(pool.v.rows(), count);
  Vec g(count), rt(count);
  for (int i = 0; i < count; ++i) {
    v.col(i) = pool.v.col(idx[i]);
    g[i] = pool.g[idx[i]];
    rt[i] = pool.runtime_ms[idx[i]];
  }
  McEstimate e = estimate_from_samples(pool.sigma, v, g);
  e.runtime_ms = rt;
  e.wall_clock = rt.sum() * 1e-3;
  return e;
}

McEstimate mc_subsample_runtime(const GroundTruthPool& pool, double budget_seconds, std::uint64_t seed) {
  const double per = pool.mean_runtime_ms();
  if (!(per > 0.0)) throw InvalidArgument("mc_subsample_runtime: pool has no runtimes");
  const int count = std::max(1, static_cast<int>(std::floor(budget_seconds * 1e3 / per)));
  return mc_subsample(pool, count, seed);
}

}  // namespace rbq
