#include "rbq/ode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rbq {

// ---------------------------------------------------------------------------
// Dense output

Vec DenseSegment::value(double theta) const {
  const auto p = q.cols();
  Vec powers(p);
  double tp = theta;
  for (Eigen::Index k = 0; k < p; ++k, tp *= theta) powers[k] = tp;
  return y0 + h * (q * powers);
}

Vec DenseSegment::derivative(double theta) const {
  const auto p = q.cols();
  Vec coeffs(p);
  double tp = 1.0;
  for (Eigen::Index k = 0; k < p; ++k, tp *= theta) coeffs[k] = static_cast<double>(k + 1) * tp;
  return q * coeffs;
}

double DenseTrajectory::t_begin() const {
  if (segments_.empty()) throw InvalidArgument("trajectory: empty");
  return segments_.front().t0;
}

double DenseTrajectory::t_end() const {
  if (segments_.empty()) throw InvalidArgument("trajectory: empty");
  return segments_.back().t0 + segments_.back().h;
}

int DenseTrajectory::state_dim() const {
  if (segments_.empty()) return 0;
  return static_cast<int>(segments_.front().y0.size());
}

const DenseSegment& DenseTrajectory::locate(double t, double& theta) const {
  if (segments_.empty()) throw InvalidArgument("trajectory: empty");
  // First segment whose end is >= t.
  auto it = std::lower_bound(segments_.begin(), segments_.end(), t,
                             [](const DenseSegment& s, double value) { return s.t0 + s.h < value; });
  if (it == segments_.end()) it = std::prev(segments_.end());
  const DenseSegment& seg = *it;
  theta = seg.h > 0.0 ? std::clamp((t - seg.t0) / seg.h, 0.0, 1.0) : 0.0;
  return seg;
}

Vec DenseTrajectory::operator()(double t) const {
  double theta = 0.0;
  const auto& seg = locate(t, theta);
  return seg.value(theta);
}

Vec DenseTrajectory::derivative(double t) const {
  double theta = 0.0;
  const auto& seg = locate(t, theta);
  return seg.derivative(theta);
}

DenseTrajectory DenseTrajectory::hermite(const std::vector<double>& t, const Mat& y, const Mat& f) {
  if (t.size() < 2 || y.cols() != static_cast<Eigen::Index>(t.size()) || f.cols() != y.cols() ||
      f.rows() != y.rows())
    throw InvalidArgument("hermite: inconsistent knots");
  DenseTrajectory traj;
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    DenseSegment seg;
    seg.t0 = t[i];
    seg.h = t[i + 1] - t[i];
    if (!(seg.h > 0.0)) throw InvalidArgument("hermite: knots must increase");
    seg.y0 = y.col(i);
    const Vec slope = (y.col(i + 1) - y.col(i)) / seg.h;
    seg.q.resize(y.rows(), 3);
    seg.q.col(0) = f.col(i);
    seg.q.col(1) = 3.0 * slope - 2.0 * f.col(i) - f.col(i + 1);
    seg.q.col(2) = f.col(i) + f.col(i + 1) - 2.0 * slope;
    traj.append(std::move(seg));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Dormand-Prince 5(4)

namespace {

constexpr int kStages = 6;
constexpr double C[kStages] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0};
constexpr double A[kStages][5] = {
    {0, 0, 0, 0, 0},
    {1.0 / 5, 0, 0, 0, 0},
    {3.0 / 40, 9.0 / 40, 0, 0, 0},
    {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
};
constexpr double B[kStages] = {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84};
// Difference between the 5th- and embedded 4th-order weights (7 stages, FSAL).
constexpr double E[kStages + 1] = {-71.0 / 57600, 0, 71.0 / 16695, -71.0 / 1920, 17253.0 / 339200, -22.0 / 525,
                                   1.0 / 40};
// Shampine's quartic continuous extension.
constexpr double P[kStages + 1][4] = {
    {1, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432},
    {0, 0, 0, 0},
    {0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933, 87487479700.0 / 32700410799},
    {0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072},
    {0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408, 701980252875.0 / 199316789632},
    {0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844},
    {0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423},
};

constexpr double kSafety = 0.9;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;
constexpr double kErrorExponent = -1.0 / 5.0;

double rms_norm(const Vec& v) { return v.size() ? v.norm() / std::sqrt(static_cast<double>(v.size())) : 0.0; }

double initial_step(const OdeRhs& f, double t0, const Vec& y0, const Vec& f0, double span, const OdeOptions& o,
                    int& nfev) {
  const Vec scale = (o.atol + o.rtol * y0.array().abs()).matrix();
  const double d0 = rms_norm(y0.cwiseQuotient(scale));
  const double d1 = rms_norm(f0.cwiseQuotient(scale));
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  const Vec y1 = y0 + h0 * f0;
  Vec f1(y0.size());
  f(t0 + h0, y1, f1);
  ++nfev;
  const double d2 = rms_norm((f1 - f0).cwiseQuotient(scale)) / h0;
  double h1;
  if (d1 <= 1e-15 && d2 <= 1e-15)
    h1 = std::max(1e-6, h0 * 1e-3);
  else
    h1 = std::pow(0.01 / std::max(d1, d2), 1.0 / 5.0);
  return std::min({100.0 * h0, h1, span});
}

}  // namespace

OdeResult integrate_dopri5(const OdeRhs& f, double t0, double t1, const Vec& y0, const OdeOptions& opts) {
  OdeResult res;
  if (!(t1 > t0)) throw InvalidArgument("integrate_dopri5: need t1 > t0");
  if (!(opts.rtol > 0.0) || !(opts.atol > 0.0)) throw InvalidArgument("integrate_dopri5: tolerances must be > 0");
  const auto n = y0.size();
  Mat k(n, kStages + 1);
  Vec y = y0;
  Vec fy(n);
  f(t0, y, fy);
  res.rhs_evals = 1;
  if (!fy.allFinite() || !y.allFinite()) {
    res.y_end = y;
    res.message = "non-finite initial state";
    return res;
  }
  const double span = t1 - t0;
  const double max_step = opts.max_step > 0.0 ? opts.max_step : span;
  double h = opts.first_step > 0.0 ? opts.first_step : initial_step(f, t0, y, fy, span, opts, res.rhs_evals);
  h = std::min(h, max_step);
  double t = t0;
  Vec ytmp(n), ynew(n), fnew(n), stage(n);

  while (t < t1) {
    if (res.steps + res.rejected >= opts.max_steps) {
      res.message = "maximum number of steps exceeded";
      res.y_end = y;
      return res;
    }
    const double min_step = 10.0 * std::abs(std::nextafter(t, std::numeric_limits<double>::infinity()) - t);
    if (h < min_step) {
      res.message = "step size underflow";
      res.y_end = y;
      return res;
    }
    bool last = false;
    if (t + h >= t1) {
      h = t1 - t;
      last = true;
    }

    k.col(0) = fy;
    for (int s = 1; s < kStages; ++s) {
      ytmp = y;
      for (int j = 0; j < s; ++j)
        if (A[s][j] != 0.0) ytmp.noalias() += (h * A[s][j]) * k.col(j);
      f(t + C[s] * h, ytmp, stage);
      k.col(s) = stage;
    }
    ynew = y;
    for (int s = 0; s < kStages; ++s)
      if (B[s] != 0.0) ynew.noalias() += (h * B[s]) * k.col(s);
    f(t + h, ynew, fnew);
    k.col(kStages) = fnew;
    res.rhs_evals += kStages;

    double err_norm;
    if (!ynew.allFinite() || !fnew.allFinite()) {
      err_norm = std::numeric_limits<double>::infinity();
    } else {
      Vec err = h * (k * Eigen::Map<const Vec>(E, kStages + 1));
      const Vec scale = (opts.atol + opts.rtol * y.array().abs().max(ynew.array().abs())).matrix();
      err_norm = rms_norm(err.cwiseQuotient(scale));
    }

    if (err_norm <= 1.0) {
      DenseSegment seg;
      seg.t0 = t;
      seg.h = h;
      seg.y0 = y;
      seg.q = k * Eigen::Map<const Eigen::Matrix<double, kStages + 1, 4, Eigen::RowMajor>>(&P[0][0]);
      res.trajectory.append(std::move(seg));
      t = last ? t1 : t + h;
      y = ynew;
      fy = fnew;
      ++res.steps;
      const double factor =
          err_norm == 0.0 ? kMaxFactor : std::min(kMaxFactor, kSafety * std::pow(err_norm, kErrorExponent));
      h = std::min(h * factor, max_step);
    } else {
      ++res.rejected;
      const double factor = std::isfinite(err_norm)
                                ? std::max(kMinFactor, kSafety * std::pow(err_norm, kErrorExponent))
                                : kMinFactor;
      h *= factor;
    }
  }
  res.y_end = y;
  res.success = true;
  return res;
}

}  // namespace rbq
