#include "eks/reference.hpp"

#include "eks/error.hpp"
#include "eks/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>
#include <string>

namespace eks {

namespace {

void require_time(double t) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw Error(ErrorKind::InvalidArgument, "time must be finite and >= 0");
}

// Number of RK4 steps covering [t0, t1] with step at most dt.
long step_count(double span, double dt) {
  if (span <= 0.0) return 0;
  return std::max(1L, static_cast<long>(std::ceil(span / dt - 1e-9)));
}

// Advances the mean from t0 to t1 using the closed-form covariance.
Vector advance_mean(const MomentFlow& flow, Vector m, double t0, double t1, double dt) {
  const long steps = step_count(t1 - t0, dt);
  if (steps == 0) return m;
  const double h = (t1 - t0) / static_cast<double>(steps);
  const Matrix& b = flow.precision().matrix();
  const Vector& r = flow.problem().r();
  auto rhs = [&](const Matrix& c, const Vector& mean) -> Vector { return -c * (b * mean - r); };
  for (long k = 0; k < steps; ++k) {
    const double s = t0 + static_cast<double>(k) * h;
    const Matrix c_start = flow.covariance(s).matrix();
    const Matrix c_mid = flow.covariance(s + 0.5 * h).matrix();
    const Matrix c_end = flow.covariance(s + h).matrix();
    const Vector k1 = rhs(c_start, m);
    const Vector k2 = rhs(c_mid, m + 0.5 * h * k1);
    const Vector k3 = rhs(c_mid, m + 0.5 * h * k2);
    const Vector k4 = rhs(c_end, m + h * k3);
    m += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  if (!m.allFinite()) throw Error(ErrorKind::NonFinite, "mean ODE diverged; reduce dt_ode");
  return m;
}

}  // namespace

MomentFlow::MomentFlow(InverseProblem problem, Vector m0, SymMatrix c0, double dt_ode)
    : problem_(std::move(problem)), m0_(std::move(m0)), c0_(std::move(c0)), dt_ode_(dt_ode) {
  if (!problem_.is_linear()) throw Error(ErrorKind::NonlinearUnsupported, "moment flow requires a linear problem");
  if (m0_.size() != problem_.param_dim() || c0_.dim() != problem_.param_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "initial moments do not match the problem dimension");
  }
  if (!(dt_ode_ > 0.0) || !std::isfinite(dt_ode_)) throw Error(ErrorKind::InvalidArgument, "dt_ode must be > 0");
  b_ = precision_matrix(problem_);
  posterior_ = posterior_moments(problem_);
  c0_inv_ = spd_invert(c0_);
}

SymMatrix MomentFlow::covariance(double t) const {
  require_time(t);
  const double decay = std::exp(-2.0 * t);
  return spd_invert(SymMatrix((1.0 - decay) * b_.matrix() + decay * c0_inv_.matrix()));
}

SymMatrix covariance_closed_form(const MomentFlow& flow, double t) { return flow.covariance(t); }

GaussianMoments integrate_moments(const MomentFlow& flow, double t) { return integrate_moments(flow, t, flow.dt_ode()); }

GaussianMoments integrate_moments(const MomentFlow& flow, double t, double dt) {
  require_time(t);
  if (!(dt > 0.0)) throw Error(ErrorKind::InvalidArgument, "ODE step must be > 0");
  const Matrix& b = flow.precision().matrix();
  const Vector& r = flow.problem().r();
  auto dm = [&](const Vector& m, const Matrix& c) -> Vector { return -c * (b * m - r); };
  auto dc = [&](const Matrix& c) -> Matrix { return -2.0 * c * b * c + 2.0 * c; };

  Vector m = flow.m0();
  Matrix c = flow.c0().matrix();
  const long steps = step_count(t, dt);
  const double h = steps > 0 ? t / static_cast<double>(steps) : 0.0;
  for (long k = 0; k < steps; ++k) {
    const Vector km1 = dm(m, c);
    const Matrix kc1 = dc(c);
    const Vector m2 = m + 0.5 * h * km1;
    const Matrix c2 = c + 0.5 * h * kc1;
    const Vector km2 = dm(m2, c2);
    const Matrix kc2 = dc(c2);
    const Vector m3 = m + 0.5 * h * km2;
    const Matrix c3 = c + 0.5 * h * kc2;
    const Vector km3 = dm(m3, c3);
    const Matrix kc3 = dc(c3);
    const Vector m4 = m + h * km3;
    const Matrix c4 = c + h * kc3;
    const Vector km4 = dm(m4, c4);
    const Matrix kc4 = dc(c4);
    m += (h / 6.0) * (km1 + 2.0 * km2 + 2.0 * km3 + km4);
    c += (h / 6.0) * (kc1 + 2.0 * kc2 + 2.0 * kc3 + kc4);
    c = 0.5 * (c + c.transpose()).eval();
    if (!m.allFinite() || !c.allFinite()) throw Error(ErrorKind::NonFinite, "moment ODE diverged; reduce dt_ode");
  }
  return GaussianMoments{m, SymMatrix(c)};
}

GaussianMoments rho_at(const MomentFlow& flow, double t) {
  require_time(t);
  return GaussianMoments{advance_mean(flow, flow.m0(), 0.0, t, flow.dt_ode()), flow.covariance(t)};
}

std::vector<GaussianMoments> rho_trajectory(const MomentFlow& flow, std::span<const double> times) {
  std::vector<GaussianMoments> out;
  out.reserve(times.size());
  Vector m = flow.m0();
  double now = 0.0;
  for (double t : times) {
    require_time(t);
    if (t < now) throw Error(ErrorKind::InvalidArgument, "rho_trajectory needs non-decreasing times");
    m = advance_mean(flow, std::move(m), now, t, flow.dt_ode());
    now = t;
    out.push_back(GaussianMoments{m, flow.covariance(t)});
  }
  return out;
}

double richardson_gap(const MomentFlow& flow, double t) {
  require_time(t);
  const Vector coarse = advance_mean(flow, flow.m0(), 0.0, t, flow.dt_ode());
  const Vector fine = advance_mean(flow, flow.m0(), 0.0, t, 0.5 * flow.dt_ode());
  return (coarse - fine).cwiseAbs().maxCoeff();
}

std::vector<DecayPoint> w2_decay_curve(const MomentFlow& flow, std::span<const double> t_grid) {
  const auto rhos = rho_trajectory(flow, t_grid);
  std::vector<DecayPoint> curve;
  curve.reserve(rhos.size());
  for (std::size_t i = 0; i < rhos.size(); ++i) curve.push_back({t_grid[i], gaussian_w2(rhos[i], flow.posterior())});
  return curve;
}

void write_decay_csv(std::ostream& out, std::span<const DecayPoint> curve) {
  std::ostringstream buf;
  buf.precision(17);
  buf << "t,w2\n";
  for (const auto& p : curve) buf << p.t << ',' << p.w2 << '\n';
  out << buf.str();
}

}  // namespace eks
