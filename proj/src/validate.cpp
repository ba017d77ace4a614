#include "eks/validate.hpp"

#include "eks/dynamics.hpp"
#include "eks/ensemble.hpp"
#include "eks/error.hpp"
#include "eks/experiments.hpp"
#include "eks/metrics.hpp"
#include "eks/model.hpp"
#include "eks/noise.hpp"
#include "eks/reference.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace eks {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

class Draws {
 public:
  Draws(std::uint64_t seed, std::uint64_t tag) : noise_(derive_seed(seed, tag), NoiseStream::Projection) {}
  double normal() { return noise_.normal(k_++, 0, 0); }
  double uniform() { return noise_.uniform(k_++, 0, 0); }
  Vector vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }
  Matrix matrix(Eigen::Index r, Eigen::Index c) {
    Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j) m.col(j) = vector(r);
    return m;
  }
  SymMatrix spd(Eigen::Index n, double floor = 0.5) {
    const Matrix g = matrix(n, n);
    return SymMatrix(g * g.transpose() / static_cast<double>(n) + floor * Matrix::Identity(n, n));
  }

 private:
  CounterNoise noise_;
  std::uint64_t k_ = 0;
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

InverseProblem random_problem(Draws& d, Eigen::Index k, Eigen::Index l) {
  return InverseProblem(LinearMap(d.matrix(k, l)), d.spd(k), d.spd(l), d.vector(k), d.vector(l));
}

InverseProblem nonlinear_problem() {
  Matrix a = Matrix::Zero(3, 2);
  a(0, 0) = 1.0;
  a(1, 1) = 2.0;
  const SymMatrix gamma = SymMatrix::identity(3);
  Vector y(3);
  y << 1.0, 1.0, 1.5;
  Vector f(2);
  f << 1.0, 1.0;
  const LinearMap map(a);
  auto m = make_perpendicular_perturbation(map, gamma, Vector::Unit(3, 2), 2.0, f);
  return InverseProblem(map, gamma, SymMatrix::identity(2), y, Vector::Zero(2), std::move(m));
}

Ensemble random_ensemble(Draws& d, Eigen::Index l, Eigen::Index j) { return Ensemble(d.matrix(l, j)); }

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

struct Suite {
  ValidationOptions opt;
  std::vector<ValidationOutcome> out;

  void check(const std::string& name, double threshold, const std::function<double()>& body) {
    ValidationOutcome o;
    o.name = name;
    o.threshold = threshold;
    try {
      o.value = body();
      o.pass = std::isfinite(o.value) && o.value <= threshold;
    } catch (const std::exception& e) {
      o.value = NAN;
      o.pass = false;
      o.message = e.what();
    }
    out.push_back(std::move(o));
  }

  SdeConfig sde(double h, std::uint64_t n, Eigen::Index j, std::uint64_t seed) const {
    SdeConfig c;
    c.h = h;
    c.n_steps = n;
    c.j_particles = j;
    c.seed = seed;
    c.drift_scale = opt.drift_scale;
    return c;
  }
};

void spd_checks(Suite& s) {
  s.check("spd_linalg/sqrt_squares_back", 1e-10, [&] {
    Draws d(s.opt.seed, 101);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Matrix g = d.matrix(4, 1 + i % 4);
      const SymMatrix m(g * g.transpose());
      const SymMatrix r = spd_sqrt(m);
      worst = std::max(worst, (r.matrix() * r.matrix() - m.matrix()).norm() / (1.0 + m.matrix().norm()));
      if (lambda_min(r) < -1e-12 * std::max(1.0, lambda_max(r))) return kInf;
    }
    return worst;
  });
  s.check("spd_linalg/solve_residual", 1e-10, [&] {
    Draws d(s.opt.seed, 102);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const SymMatrix m = d.spd(5);
      const Vector b = d.vector(5);
      worst = std::max(worst, (m.matrix() * spd_solve(m, b) - b).norm() / (1.0 + b.norm()));
    }
    return worst;
  });
  s.check("spd_linalg/sqrt_homogeneity", 1e-10, [&] {
    Draws d(s.opt.seed, 103);
    const SymMatrix m = d.spd(3);
    const double two = (spd_sqrt(m * 4.0).matrix() - 2.0 * spd_sqrt(m).matrix()).norm();
    const double zero = spd_sqrt(m * 0.0).matrix().norm();
    return std::max(two, zero);
  });
  s.check("spd_linalg/sqrt_rank_one", 0.0, [&] {
    Draws d(s.opt.seed, 104);
    double mismatches = 0.0;
    for (int i = 0; i < 10; ++i) {
      const Vector v = d.vector(4);
      const SymMatrix r = spd_sqrt(SymMatrix(v * v.transpose()));
      Eigen::SelfAdjointEigenSolver<Matrix> es(r.matrix());
      const double top = es.eigenvalues().cwiseAbs().maxCoeff();
      const auto rank = (es.eigenvalues().array().abs() > 1e-8 * top).count();
      if (rank != 1) mismatches += 1.0;
    }
    return mismatches;
  });
}

void model_checks(Suite& s) {
  s.check("model/gradient_identity", 1e-12, [&] {
    Draws d(s.opt.seed, 201);
    const InverseProblem p = default_problem();
    const GaussianMoments post = posterior_moments(p);
    const SymMatrix b = precision_matrix(p);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vector u = d.vector(2);
      const Vector expect = b.matrix() * (u - post.mean);
      worst = std::max(worst, (grad_phi_r(p, u) - expect).norm() / (1.0 + expect.norm()));
    }
    return worst;
  });
  s.check("model/posterior_minimizes_loss", 0.0, [&] {
    Draws d(s.opt.seed, 202);
    const InverseProblem p = random_problem(d, 3, 2);
    const Vector star = posterior_moments(p).mean;
    const double base = loss_phi_r(p, star);
    double violations = 0.0;
    for (int i = 0; i < 100; ++i) {
      if (loss_phi_r(p, star + 0.1 * d.vector(2)) < base) violations += 1.0;
    }
    return violations;
  });
  s.check("model/perturbation_perpendicular", 1e-10, [&] {
    Draws d(s.opt.seed, 203);
    const InverseProblem p = nonlinear_problem();
    const Matrix proj = p.forward_linear().a.transpose() * p.gamma_inv().matrix();
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Vector u = 2.0 * d.vector(2);
      worst = std::max(worst, (proj * (apply_forward(p, u) - p.forward_linear().a * u)).norm());
    }
    return worst;
  });
  s.check("model/gradient_finite_difference", 1e-5, [&] {
    Draws d(s.opt.seed, 204);
    const InverseProblem problems[] = {default_problem(), nonlinear_problem()};
    double worst = 0.0;
    for (const auto& p : problems) {
      for (int i = 0; i < 10; ++i) {
        const Vector u = d.vector(2);
        const Vector g = grad_phi_r(p, u);
        for (Eigen::Index k = 0; k < 2; ++k) {
          const double eps = 1e-5;
          const Vector e = Vector::Unit(2, k) * eps;
          const double fd = (loss_phi_r(p, u + e) - loss_phi_r(p, u - e)) / (2.0 * eps);
          worst = std::max(worst, std::abs(fd - g(k)) / (1.0 + std::abs(g(k))));
        }
      }
    }
    return worst;
  });
}

void ensemble_checks(Suite& s) {
  s.check("ensemble/stats_permutation_invariant", 0.0, [&] {
    Draws d(s.opt.seed, 301);
    const InverseProblem p = nonlinear_problem();
    const Ensemble e = random_ensemble(d, 2, 37);
    Matrix shuffled(2, 37);
    for (Eigen::Index j = 0; j < 37; ++j) shuffled.col(j) = e.particles().col((j * 11 + 5) % 37);
    const EnsembleStats a = empirical_stats(e, p);
    const EnsembleStats b = empirical_stats(Ensemble(shuffled), p);
    return std::max({max_abs(a.mean_u - b.mean_u), max_abs(a.mean_g - b.mean_g),
                     max_abs(a.cov_uu.matrix() - b.cov_uu.matrix()), max_abs(a.cov_ug - b.cov_ug)});
  });
  s.check("ensemble/cov_psd", 1e-12, [&] {
    Draws d(s.opt.seed, 302);
    const InverseProblem p = default_problem();
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Ensemble e = random_ensemble(d, 2, 2 + i % 5);
      const SymMatrix c = empirical_stats(e, p).cov_uu;
      worst = std::max(worst, -lambda_min(c) / std::max(lambda_max(c), 1e-300));
    }
    return worst;
  });
  s.check("ensemble/cross_cov_linear_identity", 1e-12, [&] {
    Draws d(s.opt.seed, 303);
    const InverseProblem p = random_problem(d, 3, 2);
    const EnsembleStats st = empirical_stats(random_ensemble(d, 2, 50), p);
    return max_abs(st.cov_ug - st.cov_uu.matrix() * p.forward_linear().a.transpose());
  });
  s.check("ensemble/second_moment_is_trace", 1e-12, [&] {
    Draws d(s.opt.seed, 304);
    const Ensemble e = random_ensemble(d, 3, 40);
    const double tr = ensemble_moments(e).cov.trace();
    return std::abs(centered_moment(e, 2) - tr) / (1.0 + tr);
  });
}

void dynamics_checks(Suite& s) {
  const InverseProblem p = default_problem();

  s.check("dynamics/degenerate_freeze", 0.0, [&] {
    Vector x(2);
    x << 0.7, -1.3;
    const Ensemble e(x.replicate(1, 6));
    const MomentFlow flow(p, x, SymMatrix::identity(2));
    double diff = 0.0;
    for (StepMode mode : {StepMode::Eks, StepMode::EksGradient}) {
      RunOptions o;
      o.mode = mode;
      o.flow = &flow;
      diff = std::max(diff, max_abs(run(e, p, s.sde(0.01, 20, 6, s.opt.seed), o).u.particles() - e.particles()));
    }
    return diff;
  });
  s.check("dynamics/affine_span", 1e-8, [&] {
    Draws d(s.opt.seed, 401);
    const InverseProblem q = random_problem(d, 5, 5);
    const Ensemble e = random_ensemble(d, 5, 3);
    const RunResult r = run(e, q, s.sde(0.01, 100, 3, s.opt.seed), RunOptions{});
    return affine_span_distance(r.u, e);
  });
  s.check("dynamics/permutation_equivariance", 0.0, [&] {
    Draws d(s.opt.seed, 402);
    const Eigen::Index j = 9;
    const Ensemble e = random_ensemble(d, 2, j);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(j));
    std::iota(perm.begin(), perm.end(), 0);
    std::rotate(perm.begin(), perm.begin() + 4, perm.end());
    std::swap(perm[0], perm[5]);
    Matrix permuted(2, j);
    for (Eigen::Index k = 0; k < j; ++k) permuted.col(k) = e.particles().col(perm[static_cast<std::size_t>(k)]);
    const CounterNoise noise(s.opt.seed);
    const PermutedNoise pnoise(noise, perm);
    const SdeConfig cfg = s.sde(0.01, 30, j, s.opt.seed);
    const Ensemble a = run(e, p, cfg, RunOptions{}, noise, noise).u;
    const Ensemble b = run(Ensemble(permuted), p, cfg, RunOptions{}, pnoise, pnoise).u;
    double diff = 0.0;
    for (Eigen::Index k = 0; k < j; ++k) {
      diff = std::max(diff, max_abs(b.particles().col(k) - a.particles().col(perm[static_cast<std::size_t>(k)])));
    }
    return diff;
  });
  s.check("dynamics/bit_determinism", 0.0, [&] {
    Draws d(s.opt.seed, 403);
    const Ensemble e = random_ensemble(d, 2, 16);
    const SdeConfig cfg = s.sde(0.01, 50, 16, s.opt.seed);
    const Ensemble a = run(e, p, cfg, RunOptions{}).u;
    const Ensemble b = run(e, p, cfg, RunOptions{}).u;
    return a == b ? 0.0 : 1.0;
  });
  s.check("dynamics/linear_gradient_agreement", 1e-12, [&] {
    Draws d(s.opt.seed, 404);
    const Ensemble e = random_ensemble(d, 2, 8);
    const SdeConfig cfg = s.sde(0.01, 200, 8, s.opt.seed);
    RunOptions grad;
    grad.mode = StepMode::EksGradient;
    return max_abs(run(e, p, cfg, RunOptions{}).u.particles() - run(e, p, cfg, grad).u.particles());
  });
  s.check("dynamics/implicit_explicit_order", 0.5, [&] {
    Draws d(s.opt.seed, 405);
    const Ensemble e = random_ensemble(d, 2, 10);
    const EnsembleStats st = empirical_stats(e, p);
    const ZeroNoise zero;
    auto gap = [&](double h) {
      const Ensemble next = eks_step(e, p, s.sde(h, 1, 10, 0), zero);
      double worst = 0.0;
      for (Eigen::Index j = 0; j < e.size(); ++j) {
        const Vector u = e.particle(j);
        const Vector expl = u - h * s.opt.drift_scale *
                                    (st.cov_ug * p.gamma_inv().matrix() * (apply_forward(p, u) - p.y()) +
                                     st.cov_uu.matrix() * p.gamma0_inv().matrix() * (u - p.u0()));
        worst = std::max(worst, (next.particle(j) - expl).norm());
      }
      return worst;
    };
    const double g1 = gap(1e-2), g2 = gap(5e-3), g3 = gap(2.5e-3);
    return std::max(std::abs(g1 / g2 - 4.0), std::abs(g2 / g3 - 4.0));
  });
  s.check("dynamics/fourth_moment_bounded", 1.0, [&] {
    const GaussianMoments init = default_initial();
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 50; ++k) {
      const std::uint64_t seed = derive_seed(s.opt.seed, 406, k);
      const Ensemble e(draw_gaussian_particles(init, 100, CounterNoise(seed, NoiseStream::InitialEnsemble)));
      const double m0 = centered_moment(e, 4);
      const double m = centered_moment(run(e, p, s.sde(0.01, 500, 100, seed), RunOptions{}).u, 4);
      if (!std::isfinite(m)) return kInf;
      worst = std::max(worst, m / (1e3 * (1.0 + m0)));
    }
    return worst;
  });
  s.check("dynamics/moments_match_posterior", 0.3, [&] {
    const GaussianMoments post = posterior_moments(p);
    const std::uint64_t seed = derive_seed(s.opt.seed, 407);
    const Ensemble e(draw_gaussian_particles(default_initial(), 500, CounterNoise(seed, NoiseStream::InitialEnsemble)));
    const GaussianMoments got = ensemble_moments(run(e, p, s.sde(0.01, 400, 500, seed), RunOptions{}).u);
    return std::max((got.mean - post.mean).norm(), (got.cov.matrix() - post.cov.matrix()).norm());
  });
}

void reference_checks(Suite& s) {
  s.check("reference/closed_form_vs_ode", 1e-6, [&] {
    Draws d(s.opt.seed, 501);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Eigen::Index l = 1 + i % 4;
      const MomentFlow flow(random_problem(d, l, l), d.vector(l), d.spd(l, 0.2));
      const double t = 3.0 * d.uniform();
      worst = std::max(worst, max_abs(integrate_moments(flow, t).cov.matrix() - covariance_closed_form(flow, t).matrix()));
    }
    return worst;
  });
  s.check("reference/covariance_stays_spd", 0.0, [&] {
    Draws d(s.opt.seed, 502);
    double failures = 0.0;
    for (int i = 0; i < 20; ++i) {
      const MomentFlow flow(random_problem(d, 3, 3), d.vector(3), d.spd(3, 0.1));
      for (double t : {0.0, 0.5, 1.0, 3.0, 10.0}) {
        if (!(lambda_min(covariance_closed_form(flow, t)) > 0.0)) failures += 1.0;
      }
    }
    return failures;
  });
  s.check("reference/posterior_is_stationary", 1e-12, [&] {
    Draws d(s.opt.seed, 503);
    const InverseProblem q = random_problem(d, 3, 3);
    const GaussianMoments post = posterior_moments(q);
    const SymMatrix b = precision_matrix(q);
    const Matrix c = post.cov.matrix();
    const double dm = (c * (b.matrix() * post.mean - q.r())).norm();
    const double dc = (-2.0 * c * b.matrix() * c + 2.0 * c).norm();
    const MomentFlow flow(q, post.mean, post.cov);
    const GaussianMoments later = integrate_moments(flow, 1.0);
    const double drift = std::max((later.mean - post.mean).norm(), (later.cov.matrix() - c).norm());
    return std::max({dm, dc, drift * 1e-2});
  });
  s.check("reference/commuting_profile", 1e-10, [&] {
    Draws d(s.opt.seed, 504);
    const InverseProblem q = random_problem(d, 3, 3);
    const SymMatrix b_inv = spd_invert(precision_matrix(q));
    double worst = 0.0;
    for (double c : {0.25, 1.0, 3.0}) {
      const MomentFlow flow(q, Vector::Zero(3), b_inv * c);
      for (double t : {0.0, 0.3, 1.0, 2.5}) {
        const double s_t = 1.0 / ((1.0 - std::exp(-2.0 * t)) + std::exp(-2.0 * t) / c);
        worst = std::max(worst, max_abs(covariance_closed_form(flow, t).matrix() - s_t * b_inv.matrix()));
      }
    }
    return worst;
  });
}

double brute_force_w2(const Matrix& x, const Matrix& y) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.cols()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double c = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) c += (x.col(j) - y.col(perm[static_cast<std::size_t>(j)])).squaredNorm();
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / static_cast<double>(x.cols()));
}

void metric_checks(Suite& s) {
  s.check("metrics/exact_w2_brute_force", 1e-12, [&] {
    Draws d(s.opt.seed, 601);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const Eigen::Index j = 1 + i % 6;
      const Matrix x = d.matrix(2, j), y = d.matrix(2, j);
      worst = std::max(worst, std::abs(empirical_w2_exact(x, y) - brute_force_w2(x, y)));
    }
    return worst;
  });
  s.check("metrics/exact_w2_identity_bound", 0.0, [&] {
    Draws d(s.opt.seed, 602);
    double violations = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Matrix x = d.matrix(3, 20), y = d.matrix(3, 20);
      const double ident = std::sqrt((x - y).colwise().squaredNorm().mean());
      if (empirical_w2_exact(x, y) > ident * (1.0 + 1e-14)) violations += 1.0;
    }
    return violations;
  });
  s.check("metrics/exact_w2_triangle", 0.0, [&] {
    Draws d(s.opt.seed, 603);
    double violations = 0.0;
    for (int i = 0; i < 50; ++i) {
      const Matrix x = d.matrix(2, 12), y = d.matrix(2, 12), z = d.matrix(2, 12);
      if (empirical_w2_exact(x, z) > empirical_w2_exact(x, y) + empirical_w2_exact(y, z) + 1e-12) violations += 1.0;
    }
    return violations;
  });
  s.check("metrics/gaussian_w2_symmetry_and_identity", 1e-12, [&] {
    Draws d(s.opt.seed, 604);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      const GaussianMoments a{d.vector(3), d.spd(3)}, b{d.vector(3), d.spd(3)};
      const double ab = gaussian_w2(a, b);
      if (!(ab > 0.0) || gaussian_w2(a, a) != 0.0) return kInf;
      worst = std::max(worst, std::abs(ab - gaussian_w2(b, a)));
    }
    return worst;
  });
  s.check("metrics/gaussian_w2_diagonal", 1e-12, [&] {
    Draws d(s.opt.seed, 605);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vector va = d.vector(3).cwiseAbs().array() + 0.1, vb = d.vector(3).cwiseAbs().array() + 0.1;
      const GaussianMoments a{d.vector(3), SymMatrix::diagonal(va)}, b{d.vector(3), SymMatrix::diagonal(vb)};
      const double expect = std::sqrt((a.mean - b.mean).squaredNorm() +
                                      (va.cwiseSqrt() - vb.cwiseSqrt()).squaredNorm());
      worst = std::max(worst, std::abs(gaussian_w2(a, b) - expect));
    }
    return worst;
  });
  s.check("noise/philox_known_answer", 0.0, [&] {
    const PhiloxBlock out = philox4x32_10({0u, 0u, 0u, 0u}, {0u, 0u});
    const PhiloxBlock expect = {0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u};
    return out == expect ? 0.0 : 1.0;
  });
}

}  // namespace

std::vector<ValidationOutcome> run_validation_checks(const ValidationOptions& options) {
  Suite s{options, {}};
  spd_checks(s);
  model_checks(s);
  ensemble_checks(s);
  dynamics_checks(s);
  reference_checks(s);
  metric_checks(s);
  return std::move(s.out);
}

}  // namespace eks
