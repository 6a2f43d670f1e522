#include "rbq/bvp.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>

namespace rbq {

namespace {

/// Geodesic vector field on the state y = [x; v].
Vec state_rhs(const Metric& metric, const Vec& y) {
  const auto d = y.size() / 2;
  Vec out(y.size());
  out.head(d) = y.tail(d);
  out.tail(d) = metric.geodesic_acceleration(y.head(d), y.tail(d));
  return out;
}

/// Forward-difference Jacobian of state_rhs.
Mat state_jacobian(const Metric& metric, const Vec& y, const Vec& fy) {
  const auto n = y.size();
  const auto d = n / 2;
  Mat a = Mat::Zero(n, n);
  a.block(0, d, d, d).setIdentity();
  Vec x = y.head(d), v = y.tail(d);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = 1e-7 * (1.0 + std::abs(y[k]));
    Vec acc;
    if (k < d) {
      const double old = x[k];
      x[k] = old + h;
      acc = metric.geodesic_acceleration(x, v);
      x[k] = old;
    } else {
      const double old = v[k - d];
      v[k - d] = old + h;
      acc = metric.geodesic_acceleration(x, v);
      v[k - d] = old;
    }
    a.block(d, k, d, 1) = (acc - fy.tail(d)) / h;
  }
  return a;
}

struct Discretization {
  Mat f;    // state derivatives at knots
  Vec res;  // stacked residual
};

/// Hermite-Simpson residuals; equation order is [bc_start, R_0, ..., R_{n-2}, bc_end].
Discretization evaluate(const Metric& metric, const Vec& start, const Vec& end, const std::vector<double>& mesh,
                        const Mat& y, Mat* mid_states) {
  const auto s = y.rows();
  const auto d = s / 2;
  const auto n = y.cols();
  Discretization out;
  out.f.resize(s, n);
  for (Eigen::Index i = 0; i < n; ++i) out.f.col(i) = state_rhs(metric, y.col(i));
  out.res.resize(s * n);
  out.res.head(d) = y.col(0).head(d) - start;
  if (mid_states) mid_states->resize(s, n - 1);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double h = mesh[i + 1] - mesh[i];
    const Vec ym = 0.5 * (y.col(i) + y.col(i + 1)) - (h / 8.0) * (out.f.col(i + 1) - out.f.col(i));
    const Vec fm = state_rhs(metric, ym);
    if (mid_states) mid_states->col(i) = ym;
    out.res.segment(d + i * s, s) =
        y.col(i + 1) - y.col(i) - (h / 6.0) * (out.f.col(i) + 4.0 * fm + out.f.col(i + 1));
  }
  out.res.tail(d) = y.col(n - 1).head(d) - end;
  return out;
}

double max_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Newton iteration on the collocation system for a fixed mesh.
bool newton_solve(const Metric& metric, const Vec& start, const Vec& end, const std::vector<double>& mesh, Mat& y,
                  int max_iterations, int& iterations) {
  const auto s = y.rows();
  const auto d = s / 2;
  const auto n = y.cols();
  const auto unknowns = s * n;
  Mat mids;
  Discretization disc = evaluate(metric, start, end, mesh, y, &mids);
  if (!disc.res.allFinite()) return false;
  double cost = disc.res.squaredNorm();

  for (int it = 0; it < max_iterations; ++it) {
    ++iterations;
    if (max_abs(disc.res) < 1e-12) return true;

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(4 * s * s * n));
    for (Eigen::Index r = 0; r < d; ++r) trip.emplace_back(r, r, 1.0);
    std::vector<Mat> node_jac(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) node_jac[i] = state_jacobian(metric, y.col(i), disc.f.col(i));
    const Mat eye = Mat::Identity(s, s);
    for (Eigen::Index i = 0; i + 1 < n; ++i) {
      const double h = mesh[i + 1] - mesh[i];
      const Vec fm = state_rhs(metric, mids.col(i));
      const Mat am = state_jacobian(metric, mids.col(i), fm);
      const Mat left = -eye - (h / 6.0) * (node_jac[i] + 4.0 * am * (0.5 * eye + (h / 8.0) * node_jac[i]));
      const Mat right = eye - (h / 6.0) * (4.0 * am * (0.5 * eye - (h / 8.0) * node_jac[i + 1]) + node_jac[i + 1]);
      const auto row0 = d + i * s;
      for (Eigen::Index r = 0; r < s; ++r)
        for (Eigen::Index c = 0; c < s; ++c) {
          if (left(r, c) != 0.0) trip.emplace_back(row0 + r, i * s + c, left(r, c));
          if (right(r, c) != 0.0) trip.emplace_back(row0 + r, (i + 1) * s + c, right(r, c));
        }
    }
    for (Eigen::Index r = 0; r < d; ++r) trip.emplace_back(unknowns - d + r, (n - 1) * s + r, 1.0);

    Eigen::SparseMatrix<double> jac(unknowns, unknowns);
    jac.setFromTriplets(trip.begin(), trip.end());
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(jac);
    if (lu.info() != Eigen::Success) return false;
    const Vec step = lu.solve(-disc.res);
    if (lu.info() != Eigen::Success || !step.allFinite()) return false;

    const Eigen::Map<const Mat> dy(step.data(), s, n);
    double lambda = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 10; ++ls, lambda *= 0.5) {
      Mat trial = y + lambda * dy;
      Mat trial_mids;
      Discretization td = evaluate(metric, start, end, mesh, trial, &trial_mids);
      if (!td.res.allFinite()) continue;
      const double tc = td.res.squaredNorm();
      if (tc <= (1.0 - 1e-4 * lambda) * cost || tc < 1e-24) {
        y = std::move(trial);
        mids = std::move(trial_mids);
        disc = std::move(td);
        cost = tc;
        accepted = true;
        break;
      }
    }
    if (!accepted) return max_abs(disc.res) < 1e-8;
    if (lambda == 1.0 && max_abs(step) <= 1e-10 * (1.0 + max_abs(Eigen::Map<const Vec>(y.data(), y.size()))))
      return true;
  }
  return max_abs(disc.res) < 1e-8;
}

/// Normalized RMS collocation residual of the cubic interpolant per interval.
std::vector<double> interval_residuals(const Metric& metric, const std::vector<double>& mesh, const Mat& y,
                                       const Mat& f) {
  const double off = std::sqrt(21.0) / 14.0;
  const double thetas[2] = {0.5 - off, 0.5 + off};
  const DenseTrajectory traj = DenseTrajectory::hermite(mesh, y, f);
  std::vector<double> out(mesh.size() - 1);
  for (std::size_t i = 0; i + 1 < mesh.size(); ++i) {
    const auto& seg = traj.segments()[i];
    double acc = 0.0;
    for (double th : thetas) {
      const Vec st = seg.value(th);
      const Vec ds = seg.derivative(th);
      const Vec fs = state_rhs(metric, st);
      const Vec r = (ds - fs).cwiseQuotient((1.0 + fs.array().abs()).matrix());
      acc += r.squaredNorm();
    }
    out[i] = std::sqrt(0.5 * (49.0 / 90.0) * acc);
    if (!std::isfinite(out[i])) out[i] = std::numeric_limits<double>::infinity();
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

BvpSolution solve_geodesic_fixed_point(const Metric& metric, const Vec& start, const Vec& end,
                                       const FixedPointOptions& opts) {
  const int d = metric.dim();
  if (start.size() != d || end.size() != d) throw InvalidArgument("fixed point: dimension mismatch");
  if (opts.mesh_nodes < 1 || opts.max_iterations < 1) throw InvalidArgument("fixed point: invalid options");
  const int m = opts.mesh_nodes;
  const double pi = std::numbers::pi;

  std::vector<double> nodes(m);
  for (int i = 0; i < m; ++i) nodes[i] = static_cast<double>(i + 1) / (m + 1);

  auto basis = [&](double t, Vec& phi, Vec& dphi, Vec& ddphi) {
    phi.resize(m);
    dphi.resize(m);
    ddphi.resize(m);
    for (int j = 0; j < m; ++j) {
      const double w = (j + 1) * pi;
      phi[j] = std::sin(w * t);
      dphi[j] = w * std::cos(w * t);
      ddphi[j] = -w * w * std::sin(w * t);
    }
  };

  Mat second(m, m);  // second derivative of the basis at the nodes
  for (int i = 0; i < m; ++i) {
    Vec phi, dphi, ddphi;
    basis(nodes[i], phi, dphi, ddphi);
    second.row(i) = ddphi.transpose();
  }
  const Mat gram = second.transpose() * second + opts.model_noise * Mat::Identity(m, m);
  const Mat regress = gram.ldlt().solve(second.transpose());  // m x m

  const Vec chord = end - start;
  Mat w = Mat::Zero(m, d);
  auto curve = [&](double t, Vec& x, Vec& v, Vec& a) {
    Vec phi, dphi, ddphi;
    basis(t, phi, dphi, ddphi);
    x = start + t * chord + w.transpose() * phi;
    v = chord + w.transpose() * dphi;
    a = w.transpose() * ddphi;
  };

  BvpSolution sol;
  double relax = 1.0;
  double prev_change = std::numeric_limits<double>::infinity();
  Mat acc(m, d);
  double last_change = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opts.max_iterations; ++it) {
    sol.iterations = it + 1;
    bool finite = true;
    for (int i = 0; i < m; ++i) {
      Vec x, v, a;
      curve(nodes[i], x, v, a);
      const Vec g = metric.geodesic_acceleration(x, v);
      if (!g.allFinite()) {
        finite = false;
        break;
      }
      acc.row(i) = g.transpose();
    }
    if (!finite) {
      sol.message = "non-finite acceleration";
      return sol;
    }
    const Mat target = regress * acc;
    const double change = (target - w).cwiseAbs().maxCoeff() / std::max(1.0, w.cwiseAbs().maxCoeff());
    if (change > prev_change) relax = std::max(0.05, 0.5 * relax);
    prev_change = change;
    last_change = change;
    w += relax * (target - w);
    if (change < 1e-4) break;
  }

  // Knots: both ends plus the mesh nodes, with midpoints as residual probes.
  std::vector<double> knots;
  knots.push_back(0.0);
  for (double t : nodes) knots.push_back(t);
  knots.push_back(1.0);
  sol.mesh = knots;
  sol.y.resize(2 * d, static_cast<Eigen::Index>(knots.size()));
  sol.f.resize(2 * d, static_cast<Eigen::Index>(knots.size()));
  for (std::size_t i = 0; i < knots.size(); ++i) {
    Vec x, v, a;
    curve(knots[i], x, v, a);
    sol.y.col(i) << x, v;
    sol.f.col(i) << v, metric.geodesic_acceleration(x, v);
  }
  double sq = 0.0;
  int probes = 0;
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    Vec x, v, a;
    curve(0.5 * (knots[i] + knots[i + 1]), x, v, a);
    const Vec g = metric.geodesic_acceleration(x, v);
    const Vec r = (a - g).cwiseQuotient((1.0 + g.array().abs()).matrix());
    sq += r.squaredNorm();
    ++probes;
  }
  sol.residual = std::sqrt(sq / probes);
  if (!std::isfinite(sol.residual) || !sol.y.allFinite()) {
    sol.message = "non-finite curve";
    return sol;
  }
  // Converged means the sweeps settled: the last update moved the series
  // coefficients by less than `tolerance` (relative).
  sol.converged = last_change <= opts.tolerance;
  if (!sol.converged) sol.message = "fixed-point iteration did not settle";
  return sol;
}

BvpSolution solve_geodesic_collocation(const Metric& metric, const Vec& start, const Vec& end,
                                       std::vector<double> mesh, Mat guess, const CollocationOptions& opts) {
  const int d = metric.dim();
  if (start.size() != d || end.size() != d) throw InvalidArgument("collocation: dimension mismatch");
  if (mesh.size() < 2 || guess.cols() != static_cast<Eigen::Index>(mesh.size()) || guess.rows() != 2 * d)
    throw InvalidArgument("collocation: inconsistent initial mesh");

  BvpSolution sol;
  while (true) {
    int iters = 0;
    const bool ok = newton_solve(metric, start, end, mesh, guess, opts.max_newton_iterations, iters);
    sol.iterations += iters;
    if (!ok) {
      sol.message = "newton iteration failed";
      sol.mesh = mesh;
      sol.y = guess;
      return sol;
    }
    Mat f(2 * d, guess.cols());
    for (Eigen::Index i = 0; i < guess.cols(); ++i) f.col(i) = state_rhs(metric, guess.col(i));
    const std::vector<double> rms = interval_residuals(metric, mesh, guess, f);
    const double worst = *std::max_element(rms.begin(), rms.end());
    sol.mesh = mesh;
    sol.y = guess;
    sol.f = f;
    sol.residual = worst;
    if (worst <= opts.tolerance) {
      sol.converged = true;
      return sol;
    }

    // Refine: one node in mildly bad intervals, two in very bad ones.
    const DenseTrajectory traj = DenseTrajectory::hermite(mesh, guess, f);
    std::vector<double> new_mesh;
    std::vector<Vec> new_states;
    for (std::size_t i = 0; i + 1 < mesh.size(); ++i) {
      new_mesh.push_back(mesh[i]);
      new_states.push_back(guess.col(i));
      if (rms[i] > opts.tolerance) {
        const int extra = rms[i] < 100.0 * opts.tolerance ? 1 : 2;
        for (int e = 1; e <= extra; ++e) {
          const double th = static_cast<double>(e) / (extra + 1);
          new_mesh.push_back(mesh[i] + th * (mesh[i + 1] - mesh[i]));
          new_states.push_back(traj.segments()[i].value(th));
        }
      }
    }
    new_mesh.push_back(mesh.back());
    new_states.push_back(guess.col(guess.cols() - 1));
    if (static_cast<int>(new_mesh.size()) > opts.max_nodes) {
      sol.message = "maximum number of mesh nodes exceeded";
      return sol;
    }
    mesh = std::move(new_mesh);
    guess.resize(2 * d, static_cast<Eigen::Index>(mesh.size()));
    for (std::size_t i = 0; i < new_states.size(); ++i) guess.col(i) = new_states[i];
  }
}

void seed_from_trajectory(const DenseTrajectory& traj, const Vec& start, int nodes, std::vector<double>& mesh,
                          Mat& guess) {
  if (nodes < 2) throw InvalidArgument("seed: need >= 2 nodes");
  const auto s = traj.state_dim();
  const auto d = s / 2;
  const Vec shift = start - traj(traj.t_begin()).head(d);
  mesh.resize(nodes);
  guess.resize(s, nodes);
  for (int i = 0; i < nodes; ++i) {
    const double t = static_cast<double>(i) / (nodes - 1);
    mesh[i] = t;
    Vec st = traj(traj.t_begin() + t * (traj.t_end() - traj.t_begin()));
    st.head(d) += (1.0 - t) * shift;
    st.tail(d) -= shift;
    guess.col(i) = st;
  }
}

}  // namespace rbq
