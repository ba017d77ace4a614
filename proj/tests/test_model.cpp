#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "eks/error.hpp"
#include "eks/model.hpp"
#include "support.hpp"

#include <cmath>

using namespace eks;
using testing::max_abs;

namespace {

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

Matrix mat(Eigen::Index r, Eigen::Index c, std::initializer_list<double> xs) {
  Matrix m(r, c);
  auto it = xs.begin();
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = *it++;
  return m;
}

InverseProblem scalar_problem(double a, double gamma, double gamma0, double y, double u0) {
  return InverseProblem(LinearMap(mat(1, 1, {a})), SymMatrix(mat(1, 1, {gamma})), SymMatrix(mat(1, 1, {gamma0})),
                        vec({y}), vec({u0}));
}

InverseProblem random_problem(testing::Rng& rng, Eigen::Index k, Eigen::Index l) {
  return InverseProblem(LinearMap(rng.matrix(k, l)), rng.spd(k), rng.spd(l), rng.vector(k), rng.vector(l));
}

// K=3, L=2 problem with a tanh perturbation along e3.
InverseProblem tanh_problem(double amplitude) {
  const LinearMap a(mat(3, 2, {1, 0, 0, 2, 0, 0}));
  const SymMatrix gamma = SymMatrix::identity(3);
  auto m = make_perpendicular_perturbation(a, gamma, vec({0, 0, 1}), amplitude, vec({1, 1}));
  return InverseProblem(a, gamma, SymMatrix::identity(2), vec({1, 1, 1.5}), Vector::Zero(2), std::move(m));
}

// Moments of exp(-f) on a 2-D box by composite Simpson; independent of the
// library's grid rule.
GaussianMoments simpson_moments_2d(const std::function<double(const Vector&)>& f, const Vector& centre,
                                   double half_width, int n) {
  const double step = 2.0 * half_width / n;
  auto weight = [&](int i) { return (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0); };
  double base = f(centre);
  double z = 0.0;
  Vector m1 = Vector::Zero(2);
  Matrix m2 = Matrix::Zero(2, 2);
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      Vector u(2);
      u << centre(0) - half_width + i * step, centre(1) - half_width + j * step;
      const double w = weight(i) * weight(j) * std::exp(-(f(u) - base));
      z += w;
      m1 += w * u;
      m2 += w * u * u.transpose();
    }
  }
  m1 /= z;
  m2 = m2 / z - m1 * m1.transpose();
  return GaussianMoments{m1, SymMatrix(m2)};
}

}  // namespace

TEST_CASE("apply_forward examples") {
  const InverseProblem id(LinearMap(Matrix::Identity(2, 2)), SymMatrix::identity(2), SymMatrix::identity(2),
                          Vector::Zero(2), Vector::Zero(2));
  CHECK(max_abs(apply_forward(id, vec({1, 2})) - vec({1, 2})) == 0.0);

  const InverseProblem proj(LinearMap(mat(1, 2, {1, 0})), SymMatrix::identity(1), SymMatrix::identity(2), vec({0}),
                            Vector::Zero(2));
  CHECK(apply_forward(proj, vec({3, 4}))(0) == 3.0);
  CHECK_THROWS_AS(apply_forward(proj, vec({1, 2, 3})), Error);

  const InverseProblem p = tanh_problem(1.5);
  testing::Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    const Vector u = rng.vector(2);
    Vector expect(3);
    expect << u(0), 2 * u(1), 1.5 * std::tanh(u(0) + u(1));
    CHECK(max_abs(apply_forward(p, u) - expect) <= 1e-15);
  }
}

TEST_CASE("loss_phi_r examples") {
  const InverseProblem p = scalar_problem(1, 1, 1, 1, 0);
  CHECK(loss_phi_r(p, vec({0})) == doctest::Approx(0.5));

  testing::Rng rng(22);
  const InverseProblem q = random_problem(rng, 3, 2);
  const Vector u0 = q.u0();
  const InverseProblem at_data(q.forward_linear(), q.gamma(), q.gamma0(), q.a() * u0, u0);
  CHECK(std::abs(loss_phi_r(at_data, u0)) <= 1e-15);

  for (int i = 0; i < 20; ++i) {
    const Vector u = rng.vector(2);
    const Vector res = q.y() - q.a() * u;
    const Vector pr = u - q.u0();
    const double expect = 0.5 * res.dot(q.gamma().matrix().inverse() * res) +
                          0.5 * pr.dot(q.gamma0().matrix().inverse() * pr);
    CHECK(loss_phi_r(q, u) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("grad_phi_r examples") {
  testing::Rng rng(23);
  const InverseProblem q = random_problem(rng, 3, 2);
  const GaussianMoments post = posterior_moments(q);
  CHECK(grad_phi_r(q, post.mean).norm() <= 1e-12);

  const Matrix b = precision_matrix(q).matrix();
  for (int i = 0; i < 100; ++i) {
    const Vector u = rng.vector(2);
    CHECK(max_abs(grad_phi_r(q, u) - b * (u - post.mean)) <= 1e-12 * (1 + u.norm()));
  }

  for (const InverseProblem& p : {tanh_problem(2.0), q}) {
    for (int i = 0; i < 20; ++i) {
      const Vector u = rng.vector(2);
      const Vector g = grad_phi_r(p, u);
      for (Eigen::Index k = 0; k < 2; ++k) {
        const double h = 1e-5;
        const Vector e = Vector::Unit(2, k) * h;
        const double fd = (loss_phi_r(p, u + e) - loss_phi_r(p, u - e)) / (2 * h);
        CHECK(std::abs(fd - g(k)) <= 1e-5 * std::max(1.0, std::abs(g(k))));
      }
    }
  }
}

TEST_CASE("posterior_moments examples") {
  const InverseProblem id(LinearMap(Matrix::Identity(2, 2)), SymMatrix::identity(2), SymMatrix::identity(2),
                          Vector::Zero(2), Vector::Zero(2));
  const GaussianMoments g = posterior_moments(id);
  CHECK(g.mean.norm() == 0.0);
  CHECK(max_abs(g.cov.matrix() - 0.5 * Matrix::Identity(2, 2)) <= 1e-15);

  const InverseProblem s = scalar_problem(2, 1, 1, 3, 1);
  const GaussianMoments gs = posterior_moments(s);
  CHECK(gs.mean(0) == doctest::Approx(7.0 / 5.0).epsilon(1e-14));
  CHECK(gs.cov(0, 0) == doctest::Approx(1.0 / 5.0).epsilon(1e-14));

  // 1-D Simpson quadrature of exp(-Phi_R).
  {
    const int n = 4000;
    const double lo = -4.0, hi = 6.0, step = (hi - lo) / n;
    double z = 0, m1 = 0, m2 = 0;
    for (int i = 0; i <= n; ++i) {
      const double u = lo + i * step;
      const double w = (i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0)) * std::exp(-loss_phi_r(s, vec({u})));
      z += w;
      m1 += w * u;
      m2 += w * u * u;
    }
    m1 /= z;
    CHECK(m1 == doctest::Approx(gs.mean(0)).epsilon(1e-10));
    CHECK(m2 / z - m1 * m1 == doctest::Approx(gs.cov(0, 0)).epsilon(1e-10));
  }

  testing::Rng rng(24);
  for (int trial = 0; trial < 3; ++trial) {
    const InverseProblem p = random_problem(rng, 2, 2);
    const GaussianMoments exact = posterior_moments(p);
    const double width = 10.0 * std::sqrt(lambda_max(exact.cov));
    const GaussianMoments quad =
        simpson_moments_2d([&](const Vector& u) { return loss_phi_r(p, u); }, exact.mean, width, 400);
    CHECK((quad.mean - exact.mean).norm() <= 1e-4 * std::max(1.0, exact.mean.norm()));
    CHECK((quad.cov.matrix() - exact.cov.matrix()).norm() <= 1e-4 * exact.cov.matrix().norm());
  }

  try {
    (void)posterior_moments(tanh_problem(1.0));
    FAIL("expected NonlinearUnsupported");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NonlinearUnsupported);
  }
}

TEST_CASE("precision_matrix examples") {
  testing::Rng rng(25);
  const SymMatrix g0 = rng.spd(3);
  const InverseProblem zero_a(LinearMap(Matrix::Zero(2, 3)), SymMatrix::identity(2), g0, Vector::Zero(2),
                              Vector::Zero(3));
  CHECK(max_abs(precision_matrix(zero_a).matrix() - g0.matrix().inverse()) <= 1e-12);

  const InverseProblem id(LinearMap(Matrix::Identity(2, 2)), SymMatrix::identity(2), SymMatrix::identity(2),
                          Vector::Zero(2), Vector::Zero(2));
  CHECK(max_abs(precision_matrix(id).matrix() - 2 * Matrix::Identity(2, 2)) == 0.0);

  const InverseProblem p = random_problem(rng, 4, 3);
  CHECK(max_abs(precision_matrix(p).matrix() * posterior_moments(p).cov.matrix() - Matrix::Identity(3, 3)) <= 1e-10);
}

TEST_CASE("posterior is the minimizer of Phi_R") {
  testing::Rng rng(26);
  const InverseProblem p = random_problem(rng, 3, 3);
  const Vector star = posterior_moments(p).mean;
  const double base = loss_phi_r(p, star);
  for (int i = 0; i < 100; ++i) CHECK(loss_phi_r(p, star + 0.1 * rng.vector(3)) >= base);
}

TEST_CASE("source term r") {
  testing::Rng rng(27);
  const InverseProblem p = random_problem(rng, 3, 2);
  const Vector expect = p.a().transpose() * p.gamma().matrix().inverse() * p.y() + p.gamma0().matrix().inverse() * p.u0();
  CHECK(max_abs(p.r() - expect) <= 1e-12);
}

TEST_CASE("make_perpendicular_perturbation examples") {
  const LinearMap a(mat(3, 2, {1, 0, 0, 1, 0, 0}));
  const SymMatrix gamma = SymMatrix::identity(3);
  const auto m1 = make_perpendicular_perturbation(a, gamma, vec({0, 0, 1}), 1.0, vec({1, 0}));
  CHECK(max_abs(m1.direction_basis() - mat(3, 1, {0, 0, 1})) <= 1e-15);
  const auto m2 = make_perpendicular_perturbation(a, gamma, vec({1, 0, 1}), 1.0, vec({1, 0}));
  CHECK(max_abs(m2.direction_basis() - mat(3, 1, {0, 0, 1})) <= 1e-15);

  try {
    (void)make_perpendicular_perturbation(a, gamma, vec({1, 1, 0}), 1.0, vec({1, 0}));
    FAIL("expected DegenerateDirection");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateDirection);
  }

  // Non-identity Gamma: perpendicularity is in the Gamma^{-1} inner product.
  testing::Rng rng(28);
  const LinearMap ar(rng.matrix(3, 2));
  const SymMatrix gr = rng.spd(3);
  const auto m = make_perpendicular_perturbation(ar, gr, rng.vector(3), 2.0, rng.vector(2));
  const Matrix proj = ar.a.transpose() * gr.matrix().inverse();
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vector u = 3.0 * rng.vector(2);
    const Vector mu = m.evaluate(u);
    worst = std::max(worst, (proj * mu).norm());
    CHECK(mu.norm() <= 2.0);
    CHECK(m.gradient(u).norm() <= m.amplitude_bound());
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("perturbation gradient matches finite differences") {
  const InverseProblem p = tanh_problem(2.0);
  testing::Rng rng(29);
  for (int i = 0; i < 10; ++i) {
    const Vector u = rng.vector(2);
    const Matrix g = forward_gradient(p, u);  // L x K
    for (Eigen::Index k = 0; k < 2; ++k) {
      const double h = 1e-6;
      const Vector e = Vector::Unit(2, k) * h;
      const Vector fd = (apply_forward(p, u + e) - apply_forward(p, u - e)) / (2 * h);
      CHECK(max_abs(g.row(k).transpose() - fd) <= 1e-8);
    }
  }
}

TEST_CASE("InverseProblem validation") {
  CHECK_THROWS_AS(InverseProblem(LinearMap(Matrix::Identity(2, 2)), SymMatrix::identity(3), SymMatrix::identity(2),
                                 Vector::Zero(2), Vector::Zero(2)),
                  Error);
  Matrix neg = Matrix::Identity(2, 2);
  neg(1, 1) = 0.0;
  try {
    InverseProblem(LinearMap(Matrix::Identity(2, 2)), SymMatrix(neg), SymMatrix::identity(2), Vector::Zero(2),
                   Vector::Zero(2));
    FAIL("expected NotPSD");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NotPSD);
  }
}

TEST_CASE("grid_posterior_moments") {
  testing::Rng rng(30);
  const InverseProblem p = random_problem(rng, 2, 2);
  const GaussianMoments exact = posterior_moments(p);
  const GaussianMoments grid = grid_posterior_moments(p);
  CHECK((grid.mean - exact.mean).norm() <= 1e-6);
  CHECK((grid.cov.matrix() - exact.cov.matrix()).norm() <= 1e-6);

  // Nonlinear: compare with the independent Simpson rule.
  const InverseProblem q = tanh_problem(2.0);
  const GaussianMoments g = grid_posterior_moments(q);
  const GaussianMoments s =
      simpson_moments_2d([&](const Vector& u) { return loss_phi_r(q, u); }, posterior_moments(q.linear_part()).mean,
                         8.0, 600);
  CHECK((g.mean - s.mean).norm() <= 1e-5);
  CHECK((g.cov.matrix() - s.cov.matrix()).norm() <= 1e-5);

  const InverseProblem big = random_problem(rng, 3, 3);
  CHECK_THROWS_AS(grid_posterior_moments(big), Error);
}
