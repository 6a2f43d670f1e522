#include "rbq/geodesics.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>

namespace rbq {

std::string to_string(SolverTag tag) {
  switch (tag) {
    case SolverTag::Shooting: return "shooting";
    case SolverTag::FixedPoint: return "fixed-point";
    case SolverTag::Collocation: return "collocation";
    case SolverTag::Chained: return "chained";
    case SolverTag::CacheSeeded: return "cache-seeded";
  }
  return "unknown";
}

namespace {

std::optional<SolverTag> tag_from_string(const std::string& s) {
  for (auto t : {SolverTag::Shooting, SolverTag::FixedPoint, SolverTag::Collocation, SolverTag::Chained,
                 SolverTag::CacheSeeded})
    if (to_string(t) == s) return t;
  return std::nullopt;
}

/// Trajectory that stays at x for all t.
DenseTrajectory constant_trajectory(const Vec& x) {
  DenseSegment seg;
  seg.t0 = 0.0;
  seg.h = 1.0;
  seg.y0 = Vec::Zero(2 * x.size());
  seg.y0.head(x.size()) = x;
  seg.q = Mat::Zero(2 * x.size(), 1);
  DenseTrajectory traj;
  traj.append(std::move(seg));
  return traj;
}

GeodesicSolution zero_solution(const Vec& mu, SolverTag tag) {
  GeodesicSolution sol;
  sol.trajectory = constant_trajectory(mu);
  sol.endpoint = mu;
  sol.initial_velocity = Vec::Zero(mu.size());
  sol.converged = true;
  sol.solver = tag;
  return sol;
}

GeodesicSolution from_bvp(const Metric& metric, const BvpSolution& bvp, SolverTag tag, int length_samples) {
  GeodesicSolution sol;
  const auto d = bvp.y.rows() / 2;
  sol.trajectory = bvp.trajectory();
  sol.endpoint = bvp.y.col(bvp.y.cols() - 1).head(d);
  sol.initial_velocity = bvp.y.col(0).tail(d);
  sol.converged = bvp.converged;
  sol.residual = bvp.residual;
  sol.solver = tag;
  sol.length = curve_length(metric, sol.sample(length_samples));
  return sol;
}

}  // namespace

Vec GeodesicSolution::point(double t) const { return trajectory(t).head(dim()); }

Vec GeodesicSolution::velocity(double t) const { return trajectory(t).tail(dim()); }

SampledCurve GeodesicSolution::sample(int n) const {
  if (n < 2) throw InvalidArgument("sample: need >= 2 points");
  SampledCurve c;
  c.t.resize(n);
  c.points.resize(dim(), n);
  for (int i = 0; i < n; ++i) {
    c.t[i] = static_cast<double>(i) / (n - 1);
    c.points.col(i) = point(c.t[i]);
  }
  return c;
}

// ---------------------------------------------------------------------------

GeodesicSolution exp_map(const Metric& metric, const Vec& mu, const Vec& v, const ExpMapOptions& opts) {
  const int d = metric.dim();
  if (mu.size() != d || v.size() != d) throw InvalidArgument("exp_map: dimension mismatch");
  require_finite(mu, "exp_map");
  require_finite(v, "exp_map");
  if (v.squaredNorm() == 0.0) return zero_solution(mu, SolverTag::Shooting);

  Vec y0(2 * d);
  y0 << mu, v;
  const OdeRhs rhs = [&metric, d](double, const Vec& y, Vec& dy) {
    dy.resize(2 * d);
    dy.head(d) = y.tail(d);
    dy.tail(d) = metric.geodesic_acceleration(y.head(d), y.tail(d));
  };
  OdeOptions ode;
  ode.rtol = opts.rtol;
  ode.atol = opts.atol;
  OdeResult res = integrate_dopri5(rhs, 0.0, 1.0, y0, ode);

  GeodesicSolution sol;
  sol.initial_velocity = v;
  sol.endpoint = res.y_end.head(d);
  sol.solver = SolverTag::Shooting;
  sol.trajectory = std::move(res.trajectory);
  if (!res.success) {
    if (sol.trajectory.empty()) sol.trajectory = constant_trajectory(mu);
    throw GeodesicFailure("exp_map: " + res.message, std::move(sol));
  }
  sol.converged = true;
  if (opts.compute_length) sol.length = curve_length(metric, sol.sample(opts.length_samples));
  return sol;
}

// ---------------------------------------------------------------------------

GeodesicCache::GeodesicCache(double threshold) : threshold_(threshold) {
  if (!(threshold > 0.0)) throw InvalidArgument("GeodesicCache: threshold must be > 0");
}

std::string GeodesicCache::key_of(const Vec& x) {
  return std::string(reinterpret_cast<const char*>(x.data()), sizeof(double) * static_cast<std::size_t>(x.size()));
}

std::optional<GeodesicSolution> GeodesicCache::lookup(const Vec& x, const Vec& mu) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key_of(x));
  if (it == entries_.end()) return std::nullopt;
  const Entry* best = nullptr;
  double best_dist = std::numeric_limits<double>::infinity();
  for (const auto& e : it->second) {
    if (e.mu.size() != mu.size()) continue;
    const double dist = (e.mu - mu).norm();
    if (dist < best_dist) {
      best_dist = dist;
      best = &e;
    }
  }
  if (!best || !(best_dist < threshold_)) return std::nullopt;
  return best->solution;
}

void GeodesicCache::insert(const Vec& x, const Vec& mu, const GeodesicSolution& sol) {
  std::unique_lock lock(mutex_);
  auto& list = entries_[key_of(x)];
  for (auto& e : list)
    if (e.mu.size() == mu.size() && e.mu == mu) {
      e.solution = sol;
      return;
    }
  list.push_back({mu, sol});
}

std::size_t GeodesicCache::size() const {
  std::shared_lock lock(mutex_);
  std::size_t n = 0;
  for (const auto& [k, list] : entries_) n += list.size();
  return n;
}

void GeodesicCache::clear() {
  std::unique_lock lock(mutex_);
  entries_.clear();
}

namespace {

void put(std::ostream& os, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " %a", v);
  os << buf;
}

void put(std::ostream& os, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) put(os, v[i]);
}

double take(std::istringstream& is, std::size_t line) {
  std::string tok;
  if (!(is >> tok)) throw ParseError("geodesic cache: truncated record", line);
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw ParseError("geodesic cache: bad number '" + tok + "'", line);
  return v;
}

Vec take(std::istringstream& is, Eigen::Index n, std::size_t line) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = take(is, line);
  return v;
}

}  // namespace

// Record: x-dim key(D) mu(D) tag converged residual length endpoint(D) v(D)
//         n_knots [t y(2D) f(2D)] * n_knots
void GeodesicCache::save(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  std::ofstream os(path);
  if (!os) throw InvalidArgument("cannot write geodesic cache: " + path.string());
  os << "rbq-geodesic-cache 1\n";
  for (const auto& [key, list] : entries_) {
    const auto d = static_cast<Eigen::Index>(key.size() / sizeof(double));
    Vec x(d);
    std::memcpy(x.data(), key.data(), key.size());
    for (const auto& e : list) {
      const auto& sol = e.solution;
      os << d;
      put(os, x);
      put(os, e.mu);
      os << ' ' << to_string(sol.solver) << ' ' << (sol.converged ? 1 : 0);
      put(os, sol.residual);
      put(os, sol.length);
      put(os, sol.endpoint);
      put(os, sol.initial_velocity);
      const auto& segs = sol.trajectory.segments();
      os << ' ' << segs.size() + 1;
      for (std::size_t i = 0; i <= segs.size(); ++i) {
        const auto& seg = segs[std::min(i, segs.size() - 1)];
        const double th = i < segs.size() ? 0.0 : 1.0;
        put(os, seg.t0 + th * seg.h);
        put(os, seg.value(th));
        put(os, seg.derivative(th));
      }
      os << '\n';
    }
  }
  if (!os) throw InvalidArgument("failed writing geodesic cache: " + path.string());
}

void GeodesicCache::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidArgument("cannot read geodesic cache: " + path.string());
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line) || line.rfind("rbq-geodesic-cache", 0) != 0)
    throw ParseError("geodesic cache: missing header", lineno);
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    long d = 0;
    if (!(ls >> d) || d <= 0) throw ParseError("geodesic cache: bad dimension", lineno);
    const Vec x = take(ls, d, lineno);
    const Vec mu = take(ls, d, lineno);
    std::string tag;
    int conv = 0;
    if (!(ls >> tag >> conv)) throw ParseError("geodesic cache: truncated record", lineno);
    GeodesicSolution sol;
    const auto parsed = tag_from_string(tag);
    if (!parsed) throw ParseError("geodesic cache: unknown solver tag '" + tag + "'", lineno);
    sol.solver = *parsed;
    sol.converged = conv != 0;
    sol.residual = take(ls, lineno);
    sol.length = take(ls, lineno);
    sol.endpoint = take(ls, d, lineno);
    sol.initial_velocity = take(ls, d, lineno);
    long n = 0;
    if (!(ls >> n) || n < 2) throw ParseError("geodesic cache: bad knot count", lineno);
    std::vector<double> t(n);
    Mat y(2 * d, n), f(2 * d, n);
    for (long i = 0; i < n; ++i) {
      t[i] = take(ls, lineno);
      y.col(i) = take(ls, 2 * d, lineno);
      f.col(i) = take(ls, 2 * d, lineno);
    }
    try {
      sol.trajectory = DenseTrajectory::hermite(t, y, f);
    } catch (const InvalidArgument& e) {
      throw ParseError(std::string("geodesic cache: ") + e.what(), lineno);
    }
    insert(x, mu, sol);
  }
}

// ---------------------------------------------------------------------------

namespace {

/// d gamma(1) / d v at (mu, v) from the variational equations
///   Phi_x' = Phi_v,  Phi_v' = A_x Phi_x + A_v Phi_v,  Phi_x(0) = 0, Phi_v(0) = I.
std::optional<Mat> endpoint_jacobian(const Metric& metric, const Vec& mu, const Vec& v, const ExpMapOptions& opts) {
  const int d = metric.dim();
  const int n = 2 * d + 2 * d * d;
  Vec y0 = Vec::Zero(n);
  y0.head(d) = mu;
  y0.segment(d, d) = v;
  Eigen::Map<Mat>(y0.data() + 2 * d + d * d, d, d).setIdentity();
  const OdeRhs rhs = [&metric, d](double, const Vec& y, Vec& dy) {
    dy.resize(y.size());
    Vec x = y.head(d), u = y.segment(d, d);
    const Vec a = metric.geodesic_acceleration(x, u);
    Mat ax(d, d), av(d, d);
    for (int k = 0; k < d; ++k) {
      const double hx = 1e-7 * (1.0 + std::abs(x[k]));
      const double old_x = x[k];
      x[k] = old_x + hx;
      ax.col(k) = (metric.geodesic_acceleration(x, u) - a) / hx;
      x[k] = old_x;
      const double hv = 1e-7 * (1.0 + std::abs(u[k]));
      const double old_v = u[k];
      u[k] = old_v + hv;
      av.col(k) = (metric.geodesic_acceleration(x, u) - a) / hv;
      u[k] = old_v;
    }
    const Eigen::Map<const Mat> px(y.data() + 2 * d, d, d);
    const Eigen::Map<const Mat> pv(y.data() + 2 * d + d * d, d, d);
    dy.head(d) = u;
    dy.segment(d, d) = a;
    Eigen::Map<Mat>(dy.data() + 2 * d, d, d) = pv;
    Eigen::Map<Mat>(dy.data() + 2 * d + d * d, d, d) = ax * px + av * pv;
  };
  OdeOptions ode;
  ode.rtol = opts.rtol;
  ode.atol = opts.atol;
  const OdeResult res = integrate_dopri5(rhs, 0.0, 1.0, y0, ode);
  if (!res.success) return std::nullopt;
  return Mat(Eigen::Map<const Mat>(res.y_end.data() + 2 * d, d, d));
}

/// Chord-Newton shooting on Exp_mu(v) = x, starting from a boundary value
/// solution. The residual uses exp_map itself so the refined velocity is
/// consistent with the exponential map at the same tolerance.
std::optional<GeodesicSolution> refine_by_shooting(const Metric& metric, const Vec& mu, const Vec& x, const Vec& v0,
                                                   const LogMapOptions& opts) {
  ExpMapOptions eo = opts.shooting;
  eo.compute_length = false;
  GeodesicSolution best;
  try {
    best = exp_map(metric, mu, v0, eo);
  } catch (const GeodesicFailure&) {
    return std::nullopt;
  }
  double best_err = (best.endpoint - x).norm();
  const double target = opts.shooting_tolerance * (1.0 + x.norm());
  const auto jac = endpoint_jacobian(metric, mu, v0, eo);
  if (!jac || !jac->allFinite()) return std::nullopt;
  const Eigen::PartialPivLU<Mat> lu(*jac);
  if (!(std::abs(lu.determinant()) > 0.0)) return std::nullopt;

  for (int it = 0; it < opts.shooting_iterations && best_err > target; ++it) {
    const Vec step = lu.solve(x - best.endpoint);
    if (!step.allFinite()) break;
    bool improved = false;
    double lambda = 1.0;
    for (int ls = 0; ls < 4 && !improved; ++ls, lambda *= 0.5) {
      try {
        GeodesicSolution trial = exp_map(metric, mu, best.initial_velocity + lambda * step, eo);
        const double err = (trial.endpoint - x).norm();
        if (err < best_err) {
          best = std::move(trial);
          best_err = err;
          improved = true;
        }
      } catch (const GeodesicFailure&) {
      }
    }
    if (!improved) break;
  }
  best.residual = best_err;
  return best;
}

}  // namespace

GeodesicSolution log_map(const Metric& metric, const Vec& mu, const Vec& x, GeodesicCache* cache,
                         const LogMapOptions& opts) {
  const int d = metric.dim();
  if (mu.size() != d || x.size() != d) throw InvalidArgument("log_map: dimension mismatch");
  require_finite(mu, "log_map");
  require_finite(x, "log_map");
  if ((x - mu).norm() == 0.0) return zero_solution(mu, SolverTag::Chained);

  std::vector<double> mesh;
  Mat guess;

  // Collocation result, optionally polished by shooting. The polished curve
  // is kept only if it matches x more closely than the collocation endpoint
  // tolerance.
  auto finish = [&](const BvpSolution& col, SolverTag tag) {
    GeodesicSolution sol = from_bvp(metric, col, tag, opts.length_samples);
    if (opts.shooting_iterations <= 0) return sol;
    const auto shot = refine_by_shooting(metric, mu, x, sol.initial_velocity, opts);
    if (!shot) return sol;
    GeodesicSolution out = *shot;
    out.solver = tag;
    out.converged = true;
    out.length = curve_length(metric, out.sample(opts.length_samples));
    return out;
  };

  if (cache) {
    if (auto hit = cache->lookup(x, mu)) {
      seed_from_trajectory(hit->trajectory, mu, opts.collocation.seed_nodes, mesh, guess);
      const BvpSolution col = solve_geodesic_collocation(metric, mu, x, mesh, guess, opts.collocation);
      if (col.converged) {
        GeodesicSolution sol = finish(col, SolverTag::CacheSeeded);
        cache->insert(x, mu, sol);
        return sol;
      }
      // fall through to a cold start
    }
  }

  const BvpSolution fp = solve_geodesic_fixed_point(metric, mu, x, opts.fixed_point);
  if (!fp.converged) throw GeodesicFailure("log_map: pre-solver failed (" + fp.message + ")");
  const DenseTrajectory fp_traj = fp.trajectory();
  seed_from_trajectory(fp_traj, mu, opts.collocation.seed_nodes, mesh, guess);
  const BvpSolution col = solve_geodesic_collocation(metric, mu, x, mesh, guess, opts.collocation);
  if (!col.converged) {
    GeodesicSolution sol = from_bvp(metric, fp, SolverTag::FixedPoint, opts.length_samples);
    sol.converged = false;
    return sol;
  }
  GeodesicSolution sol = finish(col, SolverTag::Chained);
  if (cache) cache->insert(x, mu, sol);
  return sol;
}

}  // namespace rbq
