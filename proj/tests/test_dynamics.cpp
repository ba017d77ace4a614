#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "eks/dynamics.hpp"
#include "eks/error.hpp"
#include "eks/noise.hpp"
#include "eks/reference.hpp"
#include "support.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

using namespace eks;
using testing::max_abs;

namespace {

// Draws read from a table keyed by particle and component; the step is ignored.
class TableNoise final : public NoiseSource {
 public:
  explicit TableNoise(Matrix table) : table_(std::move(table)) {}
  double normal(std::uint64_t, std::uint64_t particle, std::uint64_t component) const override {
    return table_(static_cast<Eigen::Index>(component), static_cast<Eigen::Index>(particle));
  }

 private:
  Matrix table_;
};

class PermutedNoise final : public NoiseSource {
 public:
  PermutedNoise(const NoiseSource& base, std::vector<Eigen::Index> perm) : base_(base), perm_(std::move(perm)) {}
  double normal(std::uint64_t step, std::uint64_t particle, std::uint64_t component) const override {
    return base_.normal(step, static_cast<std::uint64_t>(perm_[particle]), component);
  }

 private:
  const NoiseSource& base_;
  std::vector<Eigen::Index> perm_;
};

SdeConfig config(double h, std::uint64_t n, Eigen::Index j, std::uint64_t seed = 1) {
  SdeConfig c;
  c.h = h;
  c.n_steps = n;
  c.j_particles = j;
  c.seed = seed;
  return c;
}

InverseProblem default_problem_2d() {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = 1;
  a(1, 1) = 2;
  return InverseProblem(LinearMap(a), SymMatrix::identity(2), SymMatrix::identity(2), Vector::Ones(2),
                        Vector::Zero(2));
}

InverseProblem tanh_problem() {
  Matrix a = Matrix::Zero(3, 2);
  a(0, 0) = 1;
  a(1, 1) = 2;
  const LinearMap map(a);
  const SymMatrix gamma = SymMatrix::identity(3);
  Vector f(2);
  f << 1, 1;
  Vector y(3);
  y << 1, 1, 1.5;
  auto m = make_perpendicular_perturbation(map, gamma, Vector::Unit(3, 2), 2.0, f);
  return InverseProblem(map, gamma, SymMatrix::identity(2), y, Vector::Zero(2), std::move(m));
}

InverseProblem random_problem(testing::Rng& rng, Eigen::Index k, Eigen::Index l) {
  return InverseProblem(LinearMap(rng.matrix(k, l)), rng.spd(k), rng.spd(l), rng.vector(k), rng.vector(l));
}

}  // namespace

TEST_CASE("eks_step scalar transcription") {
  const auto one = [](double x) { return SymMatrix(Matrix::Constant(1, 1, x)); };
  const InverseProblem p(LinearMap(Matrix::Constant(1, 1, 1.0)), one(1), one(1), Vector::Zero(1), Vector::Zero(1));
  Matrix u(1, 2);
  u << 0.0, 2.0;
  Matrix xi(1, 2);
  xi << 0.3, -0.7;
  const double h = 0.1;
  const Ensemble next = eks_step(Ensemble(u), p, config(h, 1, 2), TableNoise(xi));

  // Direct scalar arithmetic of the two substeps.
  const double mean = (0.0 + 2.0) / 2.0;
  const double cuu = ((0.0 - mean) * (0.0 - mean) + (2.0 - mean) * (2.0 - mean)) / 2.0;
  const double cug = cuu;  // G(u) = u
  for (int j = 0; j < 2; ++j) {
    const double uj = u(0, j);
    const double star = (uj - h * cug * (uj - 0.0) + h * cuu * 0.0) / (1.0 + h * cuu);
    const double expect = star + std::sqrt(2.0 * h * cuu) * xi(0, j);
    CHECK(next.particles()(0, j) == doctest::Approx(expect).epsilon(1e-15));
  }
  CHECK(next.step() == 1);
  CHECK(next.time() == doctest::Approx(0.1));
}

TEST_CASE("eks_gradient_step transcription with a nonlinear map") {
  const InverseProblem p = tanh_problem();
  testing::Rng rng(51);
  const Matrix u = rng.matrix(2, 5);
  const Matrix xi = rng.matrix(2, 5);
  const double h = 0.05;
  const Ensemble next = eks_gradient_step(Ensemble(u), p, config(h, 1, 5), TableNoise(xi));

  Vector mean = u.rowwise().mean();
  Matrix c = Matrix::Zero(2, 2);
  for (int j = 0; j < 5; ++j) c += (u.col(j) - mean) * (u.col(j) - mean).transpose();
  c /= 5.0;
  const Matrix system = Matrix::Identity(2, 2) + h * c;  // Gamma0 = I, u0 = 0
  Eigen::SelfAdjointEigenSolver<Matrix> es(c);
  const Matrix root = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                      es.eigenvectors().transpose();
  for (int j = 0; j < 5; ++j) {
    const double x0 = u(0, j), x1 = u(1, j), s = std::tanh(x0 + x1);
    Vector g(3);
    g << x0, 2 * x1, 2.0 * s;
    Matrix grad(2, 3);  // L x K
    grad << 1, 0, 2.0 * (1 - s * s), 0, 2, 2.0 * (1 - s * s);
    const Vector rhs = u.col(j) - h * c * grad * (g - p.y());
    const Vector expect = system.inverse() * rhs + std::sqrt(2.0 * h) * root * xi.col(j);
    CHECK(max_abs(next.particles().col(j) - expect) <= 1e-13);
  }
}

TEST_CASE("h = 0 is the identity") {
  testing::Rng rng(52);
  const InverseProblem p = default_problem_2d();
  const Ensemble e(rng.matrix(2, 6));
  const CounterNoise noise(3);
  CHECK(eks_step(e, p, config(0.0, 1, 6), noise).particles() == e.particles());
  CHECK(eks_gradient_step(e, p, config(0.0, 1, 6), noise).particles() == e.particles());
  const GaussianMoments rho{Vector::Zero(2), SymMatrix::identity(2)};
  CHECK(mean_field_step(e, rho, p, config(0.0, 1, 6), noise).particles() == e.particles());
}

TEST_CASE("degenerate ensembles freeze exactly") {
  const InverseProblem problems[] = {default_problem_2d(), tanh_problem()};
  const CounterNoise noise(4);
  for (const auto& p : problems) {
    Vector x(2);
    x << 0.37, -1.91;
    const Ensemble e(x.replicate(1, 8));
    Ensemble a = e, b = e;
    for (int n = 0; n < 25; ++n) {
      a = eks_step(a, p, config(0.01, 1, 8), noise);
      b = eks_gradient_step(b, p, config(0.01, 1, 8), noise);
    }
    CHECK(a.particles() == e.particles());
    CHECK(b.particles() == e.particles());
  }
}

TEST_CASE("linear problems: eks_step and eks_gradient_step agree") {
  const InverseProblem p = default_problem_2d();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    testing::Rng rng(seed);
    const Ensemble e(rng.matrix(2, 20));
    RunOptions grad;
    grad.mode = StepMode::EksGradient;
    const Ensemble a = run(e, p, config(0.01, 200, 20, seed), RunOptions{}).u;
    const Ensemble b = run(e, p, config(0.01, 200, 20, seed), grad).u;
    CHECK(max_abs(a.particles() - b.particles()) <= 1e-12);
  }
}

TEST_CASE("mean_field_step examples") {
  // B = I, u* = 0: A = 0, Gamma0 = I, u0 = 0.
  const InverseProblem ou(LinearMap(Matrix::Zero(1, 2)), SymMatrix::identity(1), SymMatrix::identity(2),
                          Vector::Zero(1), Vector::Zero(2));
  const GaussianMoments rho{Vector::Zero(2), SymMatrix::identity(2)};
  testing::Rng rng(53);
  const Ensemble v(rng.matrix(2, 10));
  const double h = 1e-3;
  const Ensemble next = mean_field_step(v, rho, ou, config(h, 1, 10), ZeroNoise{});
  CHECK(max_abs(next.particles() - std::exp(-h) * v.particles()) <= 5e-6);

  const InverseProblem p = default_problem_2d();
  const GaussianMoments post = posterior_moments(p);
  const Ensemble at_star(post.mean.replicate(1, 4));
  CHECK(max_abs(mean_field_step(at_star, post, p, config(0.01, 1, 4), ZeroNoise{}).particles() -
                at_star.particles()) <= 1e-15);
}

TEST_CASE("condition_check examples") {
  const InverseProblem id(LinearMap(Matrix::Identity(2, 2)), SymMatrix::identity(2), SymMatrix::identity(2),
                          Vector::Zero(2), Vector::Zero(2));
  const GaussianMoments unit{Vector::Zero(2), SymMatrix::identity(2)};
  // B = 2I here.
  CHECK(condition_check(id, unit) == doctest::Approx(2.0));
  const InverseProblem b4(LinearMap(std::sqrt(3.0) * Matrix::Identity(2, 2)), SymMatrix::identity(2),
                          SymMatrix::identity(2), Vector::Zero(2), Vector::Zero(2));
  CHECK(condition_check(b4, unit) == doctest::Approx(4.0));
  const InverseProblem b1(LinearMap(Matrix::Zero(2, 2)), SymMatrix::identity(2), SymMatrix::identity(2),
                          Vector::Zero(2), Vector::Zero(2));
  CHECK(condition_check(b1, unit) == doctest::Approx(1.0));

  testing::Rng rng(54);
  const InverseProblem p = random_problem(rng, 3, 3);
  const SymMatrix b = precision_matrix(p);
  const GaussianMoments post = posterior_moments(p);
  CHECK(condition_check(p, post) == doctest::Approx(lambda_min(b) / lambda_max(b)).epsilon(1e-10));
}

TEST_CASE("run basics") {
  testing::Rng rng(55);
  const InverseProblem p = default_problem_2d();
  const Ensemble e(rng.matrix(2, 16));
  CHECK(run(e, p, config(0.01, 0, 16), RunOptions{}).u == e);

  const MomentFlow flow(p, Vector::Zero(2), SymMatrix::identity(2));
  RunOptions coupled;
  coupled.mode = StepMode::Coupled;
  coupled.flow = &flow;
  coupled.record_diagnostics = true;
  const RunResult at_zero = run(e, p, config(0.01, 0, 16), coupled);
  CHECK(at_zero.coupling_error == 0.0);
  const RunResult r = run(e, p, config(0.01, 30, 16), coupled);
  REQUIRE(r.v.has_value());
  CHECK(r.diagnostics.size() == 31);
  CHECK(r.diagnostics.front().coupling_error == 0.0);
  CHECK(r.diagnostics.back().coupling_error == doctest::Approx(r.coupling_error));
  CHECK(r.diagnostics.back().coupling_error == doctest::Approx(coupling_error(r.u, *r.v)));
  CHECK(std::isfinite(r.diagnostics.back().condition));
  std::ostringstream csv;
  write_diagnostics_csv(csv, r.diagnostics);
  CHECK(csv.str().rfind("step,time,", 0) == 0);

  RunOptions mf;
  mf.mode = StepMode::MeanField;
  CHECK_THROWS_AS(run(e, p, config(0.01, 3, 16), mf), Error);
  CHECK_THROWS_AS(run(e, p, config(0.6, 3, 16), RunOptions{}), Error);
  CHECK_THROWS_AS(run(e, p, config(0.01, 3, 15), RunOptions{}), Error);
}

TEST_CASE("coupling error scales like 1/J") {
  const InverseProblem p = default_problem_2d();
  Vector m0(2);
  m0 << 2, -2;
  const GaussianMoments rho0{m0, SymMatrix::identity(2)};
  const MomentFlow flow(p, m0, rho0.cov);
  RunOptions coupled;
  coupled.mode = StepMode::Coupled;
  coupled.flow = &flow;
  double small = 0, large = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (Eigen::Index j : {256, 512}) {
      const Ensemble e(draw_gaussian_particles(rho0, j, CounterNoise(seed, NoiseStream::InitialEnsemble)));
      const double err = run(e, p, config(0.01, 100, j, seed), coupled).coupling_error;
      (j == 256 ? small : large) += err;
    }
  }
  CHECK(small / large > 1.4);
  CHECK(small / large < 2.8);
}

TEST_CASE("affine span is preserved") {
  testing::Rng rng(56);
  for (int trial = 0; trial < 3; ++trial) {
    const InverseProblem p = random_problem(rng, 5, 5);
    const Ensemble e(rng.matrix(5, 3));
    const Ensemble out = run(e, p, config(0.01, 100, 3, static_cast<std::uint64_t>(trial)), RunOptions{}).u;
    CHECK(affine_span_distance(out, e) <= 1e-8);
  }
}

TEST_CASE("permuting particles permutes the output") {
  testing::Rng rng(57);
  const InverseProblem p = tanh_problem();
  const Eigen::Index j = 11;
  const Ensemble e(rng.matrix(2, j));
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(j));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng.gen);
  Matrix permuted(2, j);
  for (Eigen::Index k = 0; k < j; ++k) permuted.col(k) = e.particles().col(perm[static_cast<std::size_t>(k)]);
  const CounterNoise noise(8);
  const PermutedNoise pnoise(noise, perm);
  for (StepMode mode : {StepMode::Eks, StepMode::EksGradient}) {
    RunOptions o;
    o.mode = mode;
    const Ensemble a = run(e, p, config(0.01, 40, j), o, noise, noise).u;
    const Ensemble b = run(Ensemble(permuted), p, config(0.01, 40, j), o, pnoise, pnoise).u;
    for (Eigen::Index k = 0; k < j; ++k) {
      CHECK(b.particles().col(k) == a.particles().col(perm[static_cast<std::size_t>(k)]));
    }
  }
}

TEST_CASE("runs are bit-reproducible") {
  testing::Rng rng(58);
  const InverseProblem p = default_problem_2d();
  const Ensemble e(rng.matrix(2, 32));
  const MomentFlow flow(p, Vector::Zero(2), SymMatrix::identity(2));
  RunOptions coupled;
  coupled.mode = StepMode::Coupled;
  coupled.flow = &flow;
  const RunResult a = run(e, p, config(0.01, 50, 32, 77), coupled);
  const RunResult b = run(e, p, config(0.01, 50, 32, 77), coupled);
  CHECK(a.u == b.u);
  CHECK(*a.v == *b.v);
  CHECK(a.coupling_error == b.coupling_error);
  const RunResult c = run(e, p, config(0.01, 50, 32, 78), coupled);
  CHECK(!(a.u == c.u));
}

TEST_CASE("implicit and explicit prior steps differ at second order") {
  testing::Rng rng(59);
  const InverseProblem p = random_problem(rng, 3, 2);
  const Ensemble e(rng.matrix(2, 10));
  const EnsembleStats st = empirical_stats(e, p);
  auto gap = [&](double h) {
    const Ensemble next = eks_step(e, p, config(h, 1, 10), ZeroNoise{});
    double worst = 0;
    for (Eigen::Index j = 0; j < 10; ++j) {
      const Vector u = e.particle(j);
      const Vector expl = u - h * st.cov_ug * p.gamma_inv().matrix() * (p.a() * u - p.y()) -
                          h * st.cov_uu.matrix() * p.gamma0_inv().matrix() * (u - p.u0());
      worst = std::max(worst, (next.particle(j) - expl).norm());
    }
    return worst;
  };
  const double g1 = gap(1e-2), g2 = gap(5e-3), g3 = gap(2.5e-3);
  CHECK(g1 / g2 == doctest::Approx(4.0).epsilon(0.1));
  CHECK(g2 / g3 == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("fourth moment stays bounded") {
  const InverseProblem p = default_problem_2d();
  Vector m0(2);
  m0 << 2, -2;
  const GaussianMoments rho0{m0, SymMatrix::identity(2)};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Ensemble e(draw_gaussian_particles(rho0, 100, CounterNoise(seed, NoiseStream::InitialEnsemble)));
    const double m4_0 = centered_moment(e, 4);
    const double m4 = centered_moment(run(e, p, config(0.01, 500, 100, seed), RunOptions{}).u, 4);
    CHECK(std::isfinite(m4));
    CHECK(m4 < 1e3 * (1 + m4_0));
  }
}

TEST_CASE("step errors carry their kind and step index") {
  // With the drift sign flipped, I - h C is singular when C = 1/h.
  const InverseProblem p(LinearMap(Matrix::Constant(1, 1, 1.0)), SymMatrix::identity(1), SymMatrix::identity(1),
                         Vector::Zero(1), Vector::Zero(1));
  Matrix u(1, 2);
  u << -10.0, 10.0;
  SdeConfig cfg = config(0.01, 1, 2);
  cfg.drift_scale = -1.0;
  try {
    (void)eks_step(Ensemble(u), p, cfg, ZeroNoise{});
    FAIL("expected SingularImplicitSystem");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingularImplicitSystem);
  }
  cfg.n_steps = 3;
  try {
    (void)run(Ensemble(u), p, cfg, RunOptions{});
    FAIL("expected SingularImplicitSystem");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingularImplicitSystem);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}
