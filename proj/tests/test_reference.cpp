#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "eks/error.hpp"
#include "eks/metrics.hpp"
#include "eks/reference.hpp"
#include "support.hpp"

#include <cmath>
#include <sstream>

using namespace eks;
using testing::max_abs;

namespace {

InverseProblem random_problem(testing::Rng& rng, Eigen::Index k, Eigen::Index l) {
  return InverseProblem(LinearMap(rng.matrix(k, l)), rng.spd(k), rng.spd(l), rng.vector(k), rng.vector(l));
}

// A = 0, Gamma0 = I: B = I.
InverseProblem unit_precision(Eigen::Index l) {
  return InverseProblem(LinearMap(Matrix::Zero(1, l)), SymMatrix::identity(1), SymMatrix::identity(l),
                        Vector::Zero(1), Vector::Zero(l));
}

InverseProblem default_problem_2d() {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1;
  a(1, 1) = 2;
  return InverseProblem(LinearMap(a), SymMatrix::identity(2), SymMatrix::identity(2), Vector::Ones(2),
                        Vector::Zero(2));
}

// Independent RK4 on (m, C) with the ODE right-hand sides written out.
GaussianMoments rk4_oracle(const InverseProblem& p, Vector m, Matrix c, double t, int steps) {
  const Matrix b = p.a().transpose() * p.gamma().matrix().inverse() * p.a() + p.gamma0().matrix().inverse();
  const Vector r = p.a().transpose() * p.gamma().matrix().inverse() * p.y() + p.gamma0().matrix().inverse() * p.u0();
  auto fm = [&](const Vector& mm, const Matrix& cc) -> Vector { return -cc * (b * mm - r); };
  auto fc = [&](const Matrix& cc) -> Matrix { return -2.0 * cc * b * cc + 2.0 * cc; };
  const double h = t / steps;
  for (int i = 0; i < steps; ++i) {
    const Vector k1m = fm(m, c);
    const Matrix k1c = fc(c);
    const Vector k2m = fm(m + 0.5 * h * k1m, c + 0.5 * h * k1c);
    const Matrix k2c = fc(c + 0.5 * h * k1c);
    const Vector k3m = fm(m + 0.5 * h * k2m, c + 0.5 * h * k2c);
    const Matrix k3c = fc(c + 0.5 * h * k2c);
    const Vector k4m = fm(m + h * k3m, c + h * k3c);
    const Matrix k4c = fc(c + h * k3c);
    m += h / 6.0 * (k1m + 2 * k2m + 2 * k3m + k4m);
    c += h / 6.0 * (k1c + 2 * k2c + 2 * k3c + k4c);
  }
  return GaussianMoments{m, SymMatrix(c)};
}

}  // namespace

TEST_CASE("covariance_closed_form examples") {
  testing::Rng rng(61);
  const InverseProblem p = random_problem(rng, 3, 3);
  const SymMatrix c0 = rng.spd(3);
  const MomentFlow flow(p, rng.vector(3), c0);
  CHECK(max_abs(covariance_closed_form(flow, 0.0).matrix() - c0.matrix()) <= 1e-12);

  const MomentFlow unit(unit_precision(2), Vector::Zero(2), SymMatrix::identity(2));
  for (double t : {0.0, 0.1, 1.0, 10.0}) {
    CHECK(max_abs(covariance_closed_form(unit, t).matrix() - Matrix::Identity(2, 2)) <= 1e-14);
  }

  for (int trial = 0; trial < 10; ++trial) {
    const InverseProblem q = random_problem(rng, 3, 3);
    const MomentFlow f(q, rng.vector(3), rng.spd(3, 0.1));
    const Matrix b_inv = precision_matrix(q).matrix().inverse();
    CHECK(max_abs(covariance_closed_form(f, 50.0).matrix() - b_inv) <= 1e-10);
  }
}

TEST_CASE("closed form agrees with RK4 of the moment equations") {
  testing::Rng rng(62);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index l = 1 + trial % 4;
    const InverseProblem p = random_problem(rng, l, l);
    const MomentFlow flow(p, rng.vector(l), rng.spd(l, 0.2));
    for (double t : {0.5, 1.0, 2.0, 3.0}) {
      const Matrix closed = covariance_closed_form(flow, t).matrix();
      CHECK(max_abs(integrate_moments(flow, t).cov.matrix() - closed) <= 1e-6);
      CHECK(lambda_min(SymMatrix(closed)) > 0.0);
    }
  }
}

TEST_CASE("integrate_moments matches an independent RK4") {
  testing::Rng rng(63);
  const InverseProblem p = random_problem(rng, 3, 2);
  const Vector m0 = rng.vector(2);
  const SymMatrix c0 = rng.spd(2);
  const MomentFlow flow(p, m0, c0);
  const GaussianMoments lib = integrate_moments(flow, 1.5);
  const GaussianMoments ref = rk4_oracle(p, m0, c0.matrix(), 1.5, 1500);
  CHECK(max_abs(lib.mean - ref.mean) <= 1e-10);
  CHECK(max_abs(lib.cov.matrix() - ref.cov.matrix()) <= 1e-10);
}

TEST_CASE("posterior mean is stationary") {
  testing::Rng rng(64);
  const InverseProblem p = random_problem(rng, 3, 3);
  const GaussianMoments post = posterior_moments(p);
  const MomentFlow any_cov(p, post.mean, rng.spd(3));
  for (double t : {0.5, 2.0}) CHECK(max_abs(integrate_moments(any_cov, t).mean - post.mean) <= 1e-12);

  const MomentFlow at_post(p, post.mean, post.cov);
  const Matrix b = precision_matrix(p).matrix();
  const Matrix c = post.cov.matrix();
  CHECK((c * (b * post.mean - p.r())).norm() <= 1e-12);
  CHECK((-2.0 * c * b * c + 2.0 * c).norm() <= 1e-12);
  const GaussianMoments later = integrate_moments(at_post, 2.0);
  CHECK(max_abs(later.mean - post.mean) <= 1e-12);
  CHECK(max_abs(later.cov.matrix() - c) <= 1e-12);
}

TEST_CASE("commuting initial covariance keeps a scalar profile") {
  testing::Rng rng(65);
  const InverseProblem p = random_problem(rng, 3, 3);
  const SymMatrix b_inv = spd_invert(precision_matrix(p));
  for (double c : {0.1, 0.5, 2.0, 7.0}) {
    const MomentFlow flow(p, rng.vector(3), b_inv * c);
    for (double t : {0.0, 0.2, 1.0, 4.0}) {
      const double s = 1.0 / ((1.0 - std::exp(-2.0 * t)) + std::exp(-2.0 * t) / c);
      CHECK(max_abs(covariance_closed_form(flow, t).matrix() - s * b_inv.matrix()) <= 1e-10);
    }
  }
}

TEST_CASE("rho_at examples") {
  testing::Rng rng(66);
  const InverseProblem p = random_problem(rng, 2, 2);
  const Vector m0 = rng.vector(2);
  const SymMatrix c0 = rng.spd(2);
  const MomentFlow flow(p, m0, c0);
  const GaussianMoments at0 = rho_at(flow, 0.0);
  CHECK(at0.mean == m0);
  CHECK(max_abs(at0.cov.matrix() - c0.matrix()) <= 1e-12);

  const GaussianMoments late = rho_at(flow, 50.0);
  const GaussianMoments post = posterior_moments(p);
  CHECK(max_abs(late.mean - post.mean) <= 1e-8);
  CHECK(max_abs(late.cov.matrix() - post.cov.matrix()) <= 1e-8);

  for (double t : {0.3, 1.0, 2.5}) {
    const GaussianMoments full = integrate_moments(flow, t);
    const GaussianMoments mixed = rho_at(flow, t);
    CHECK(max_abs(full.mean - mixed.mean) <= 1e-8);
    CHECK(max_abs(full.cov.matrix() - mixed.cov.matrix()) <= 1e-8);
    CHECK(richardson_gap(flow, t) <= 1e-8);
  }

  const std::vector<double> times = {0.0, 0.5, 1.0, 3.0};
  const auto traj = rho_trajectory(flow, times);
  REQUIRE(traj.size() == times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    CHECK(max_abs(traj[i].mean - rho_at(flow, times[i]).mean) <= 1e-12);
  }
}

TEST_CASE("rho_at reaches the default posterior") {
  Vector m0(2);
  m0 << 2, -2;
  const InverseProblem p = default_problem_2d();
  const MomentFlow flow(p, m0, SymMatrix::identity(2));
  const GaussianMoments late = rho_at(flow, 50.0);
  const GaussianMoments post = posterior_moments(p);
  CHECK(max_abs(late.mean - post.mean) <= 1e-8);
  CHECK(max_abs(late.cov.matrix() - post.cov.matrix()) <= 1e-8);
}

TEST_CASE("w2_decay_curve examples") {
  Vector m0(2);
  m0 << 2, -2;
  const InverseProblem p = default_problem_2d();
  const MomentFlow flow(p, m0, SymMatrix::identity(2));
  std::vector<double> grid;
  for (int i = 0; i <= 40; ++i) grid.push_back(0.2 * i);
  const auto curve = w2_decay_curve(flow, grid);
  REQUIRE(curve.size() == grid.size());
  CHECK(curve[0].w2 == doctest::Approx(gaussian_w2(GaussianMoments{m0, SymMatrix::identity(2)}, flow.posterior())));
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].w2 <= curve[i - 1].w2 + 1e-15);

  std::vector<std::pair<double, double>> window;
  for (const auto& pt : curve)
    if (pt.t >= 1.0 && pt.t <= 5.0) window.emplace_back(pt.t, pt.w2);
  CHECK(fit_log_linear(window).r_squared >= 0.95);

  std::ostringstream csv;
  write_decay_csv(csv, curve);
  CHECK(csv.str().rfind("t,w2\n0,", 0) == 0);
}

TEST_CASE("endpoint of the decay curve for B = I, C0 = 2I") {
  // A = 0 and Gamma0 = I give B = I and u* = u0.
  Vector u0(2);
  u0 << 0.5, -1.0;
  const InverseProblem p(LinearMap(Matrix::Zero(1, 2)), SymMatrix::identity(1), SymMatrix::identity(2),
                         Vector::Zero(1), u0);
  const MomentFlow flow(p, u0 + Vector::Ones(2), SymMatrix::identity(2) * 2.0);
  const std::vector<double> grid = {0.0, 8.0};
  const auto curve = w2_decay_curve(flow, grid);
  CHECK(curve.back().w2 <= 1e-3);
}

TEST_CASE("MomentFlow validation") {
  testing::Rng rng(67);
  const InverseProblem p = random_problem(rng, 2, 2);
  Matrix singular = Matrix::Zero(2, 2);
  singular(0, 0) = 1.0;
  CHECK_THROWS_AS(MomentFlow(p, Vector::Zero(2), SymMatrix(singular)), Error);
  CHECK_THROWS_AS(MomentFlow(p, Vector::Zero(3), SymMatrix::identity(2)), Error);
}
