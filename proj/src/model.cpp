#include "eks/model.hpp"

#include "eks/error.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace eks {

namespace {

void require_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  if (got != want) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(what) + ": expected dimension " + std::to_string(want) + ", got " + std::to_string(got));
  }
}

void require_linear(const InverseProblem& problem, const char* what) {
  if (!problem.is_linear()) {
    throw Error(ErrorKind::NonlinearUnsupported, std::string(what) + " requires a linear forward map");
  }
}

// Largest |A^T Gamma^{-1} b| over the columns of `basis`, relative to the
// magnitudes involved.
double perpendicularity_defect(const Matrix& a, const SymMatrix& gamma_inv, const Matrix& basis) {
  const Matrix leak = a.transpose() * gamma_inv.matrix() * basis;
  const double scale = 1.0 + a.norm() * gamma_inv.matrix().norm() * basis.norm();
  return leak.cwiseAbs().maxCoeff() / scale;
}

}  // namespace

LinearMap::LinearMap(Matrix a_) : a(std::move(a_)) {
  if (a.rows() < 1 || a.cols() < 1) throw Error(ErrorKind::DimensionMismatch, "forward matrix must be at least 1x1");
  if (!all_finite(a)) throw Error(ErrorKind::NonFinite, "forward matrix has non-finite entries");
}

Matrix project_off_range(const LinearMap& a, const SymMatrix& gamma, const Matrix& raw) {
  require_dim(gamma.dim(), a.data_dim(), "noise covariance");
  require_dim(raw.rows(), a.data_dim(), "perturbation basis");
  const SymMatrix weight = spd_sqrt(spd_invert(gamma));
  const Matrix wa = weight.matrix() * a.a;
  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(wa);
  Matrix projected(raw.rows(), raw.cols());
  for (Eigen::Index c = 0; c < raw.cols(); ++c) {
    const Vector coeffs = cod.solve(weight.matrix() * raw.col(c));
    projected.col(c) = raw.col(c) - a.a * coeffs;
  }
  return projected;
}

NonlinearPerturbation::NonlinearPerturbation(const LinearMap& a, const SymMatrix& gamma, const Matrix& raw_basis,
                                             double bound, Profile profile, ProfileJacobian jacobian)
    : bound_(bound), profile_(std::move(profile)), jacobian_(std::move(jacobian)) {
  if (!(bound >= 0.0) || !std::isfinite(bound)) {
    throw Error(ErrorKind::InvalidArgument, "perturbation bound must be finite and >= 0");
  }
  if (!profile_ || !jacobian_) throw Error(ErrorKind::InvalidArgument, "perturbation profile and jacobian required");
  if (raw_basis.cols() < 1) throw Error(ErrorKind::DimensionMismatch, "perturbation basis needs at least one column");
  basis_ = project_off_range(a, gamma, raw_basis);
  for (Eigen::Index c = 0; c < basis_.cols(); ++c) {
    if (basis_.col(c).norm() < 1e-10 * std::max(1.0, raw_basis.col(c).norm())) {
      throw Error(ErrorKind::DegenerateDirection,
                  "basis column " + std::to_string(c) + " lies in Range(A) after projection");
    }
  }
}

Vector NonlinearPerturbation::evaluate(const Vector& u) const {
  const Vector phi = profile_(u);
  require_dim(phi.size(), basis_.cols(), "perturbation profile");
  Vector m = basis_ * phi;
  if (!m.allFinite()) throw Error(ErrorKind::NonFinite, "perturbation value is not finite");
  if (m.norm() > bound_ * (1.0 + 1e-12)) {
    throw Error(ErrorKind::PerturbationBound, "|m(u)| = " + std::to_string(m.norm()) + " exceeds bound");
  }
  return m;
}

Matrix NonlinearPerturbation::gradient(const Vector& u) const {
  const Matrix jac = jacobian_(u);
  require_dim(jac.cols(), basis_.cols(), "perturbation jacobian columns");
  require_dim(jac.rows(), u.size(), "perturbation jacobian rows");
  Matrix g = jac * basis_.transpose();
  if (!g.allFinite()) throw Error(ErrorKind::NonFinite, "perturbation gradient is not finite");
  if (g.norm() > bound_ * (1.0 + 1e-12)) {
    throw Error(ErrorKind::PerturbationBound, "|grad m(u)| = " + std::to_string(g.norm()) + " exceeds bound");
  }
  return g;
}

NonlinearPerturbation make_perpendicular_perturbation(const LinearMap& a, const SymMatrix& gamma,
                                                      const Vector& seed_direction, double amplitude,
                                                      const Vector& frequency) {
  require_dim(seed_direction.size(), a.data_dim(), "seed direction");
  require_dim(frequency.size(), a.param_dim(), "frequency");
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) {
    throw Error(ErrorKind::InvalidArgument, "amplitude must be finite and >= 0");
  }
  const Matrix projected = project_off_range(a, gamma, seed_direction);
  const double norm = projected.col(0).norm();
  if (norm < 1e-10) throw Error(ErrorKind::DegenerateDirection, "seed direction lies in Range(A)");
  const Matrix b = projected / norm;

  auto profile = [amplitude, frequency](const Vector& u) {
    Vector out(1);
    out(0) = amplitude * std::tanh(frequency.dot(u));
    return out;
  };
  auto jacobian = [amplitude, frequency](const Vector& u) {
    const double t = std::tanh(frequency.dot(u));
    return Matrix(amplitude * (1.0 - t * t) * frequency);
  };
  const double bound = amplitude * (1.0 + frequency.norm());
  return NonlinearPerturbation(a, gamma, b, bound, std::move(profile), std::move(jacobian));
}

InverseProblem::InverseProblem(LinearMap a, SymMatrix gamma, SymMatrix gamma0, Vector y, Vector u0,
                               std::optional<NonlinearPerturbation> perturbation)
    : a_(std::move(a)),
      gamma_(std::move(gamma)),
      gamma0_(std::move(gamma0)),
      y_(std::move(y)),
      u0_(std::move(u0)),
      m_(std::move(perturbation)) {
  require_dim(gamma_.dim(), data_dim(), "noise covariance Gamma");
  require_dim(gamma0_.dim(), param_dim(), "prior covariance Gamma0");
  require_dim(y_.size(), data_dim(), "data y");
  require_dim(u0_.size(), param_dim(), "prior mean u0");
  if (!y_.allFinite() || !u0_.allFinite()) throw Error(ErrorKind::NonFinite, "data or prior mean not finite");
  if (!(lambda_min(gamma_) > 0.0)) throw Error(ErrorKind::NotPSD, "Gamma must be positive definite");
  if (!(lambda_min(gamma0_) > 0.0)) throw Error(ErrorKind::NotPSD, "Gamma0 must be positive definite");
  gamma_inv_ = spd_invert(gamma_);
  gamma0_inv_ = spd_invert(gamma0_);
  r_ = a_.a.transpose() * (gamma_inv_.matrix() * y_) + gamma0_inv_.matrix() * u0_;

  if (m_) {
    require_dim(m_->direction_basis().rows(), data_dim(), "perturbation basis");
    if (perpendicularity_defect(a_.a, gamma_inv_, m_->direction_basis()) > 1e-10) {
      throw Error(ErrorKind::InvalidArgument, "perturbation range is not Gamma^-1 orthogonal to Range(A)");
    }
  }
}

InverseProblem InverseProblem::linear_part() const { return InverseProblem(a_, gamma_, gamma0_, y_, u0_); }

Vector apply_forward(const InverseProblem& problem, const Vector& u) {
  require_dim(u.size(), problem.param_dim(), "parameter u");
  Vector g = problem.a() * u;
  if (const auto& m = problem.perturbation()) g += m->evaluate(u);
  return g;
}

Matrix forward_gradient(const InverseProblem& problem, const Vector& u) {
  require_dim(u.size(), problem.param_dim(), "parameter u");
  Matrix grad = problem.a().transpose();
  if (const auto& m = problem.perturbation()) grad += m->gradient(u);
  return grad;
}

double loss_phi_r(const InverseProblem& problem, const Vector& u) {
  const Vector misfit = problem.y() - apply_forward(problem, u);
  const Vector dev = u - problem.u0();
  return 0.5 * misfit.dot(problem.gamma_inv().matrix() * misfit) + 0.5 * dev.dot(problem.gamma0_inv().matrix() * dev);
}

Vector grad_phi_r(const InverseProblem& problem, const Vector& u) {
  const Vector misfit = apply_forward(problem, u) - problem.y();
  return forward_gradient(problem, u) * (problem.gamma_inv().matrix() * misfit) +
         problem.gamma0_inv().matrix() * (u - problem.u0());
}

SymMatrix precision_matrix(const InverseProblem& problem) {
  require_linear(problem, "precision_matrix");
  const Matrix& a = problem.a();
  return SymMatrix(a.transpose() * problem.gamma_inv().matrix() * a + problem.gamma0_inv().matrix());
}

GaussianMoments posterior_moments(const InverseProblem& problem) {
  require_linear(problem, "posterior_moments");
  const SymMatrix b = precision_matrix(problem);
  return GaussianMoments{spd_solve(b, problem.r()), spd_invert(b)};
}

GaussianMoments grid_posterior_moments(const InverseProblem& problem, std::size_t points_per_axis,
                                       double half_width_std) {
  const Eigen::Index dim = problem.param_dim();
  if (dim > 2) throw Error(ErrorKind::InvalidArgument, "grid quadrature supports L <= 2 only");
  if (points_per_axis < 3) throw Error(ErrorKind::InvalidArgument, "grid quadrature needs >= 3 points per axis");

  const GaussianMoments lin = posterior_moments(problem.linear_part());
  const auto n = static_cast<Eigen::Index>(points_per_axis);
  std::vector<Vector> axes(static_cast<std::size_t>(dim));
  for (Eigen::Index i = 0; i < dim; ++i) {
    const double sd = std::sqrt(lin.cov(i, i));
    axes[static_cast<std::size_t>(i)] =
        Vector::LinSpaced(n, lin.mean(i) - half_width_std * sd, lin.mean(i) + half_width_std * sd);
  }
  auto edge_weight = [n](Eigen::Index k) { return (k == 0 || k == n - 1) ? 0.5 : 1.0; };

  const Eigen::Index total = dim == 1 ? n : n * n;
  Matrix nodes(dim, total);
  Vector log_w(total);
  for (Eigen::Index idx = 0; idx < total; ++idx) {
    const Eigen::Index i0 = idx % n;
    const Eigen::Index i1 = idx / n;
    Vector u(dim);
    u(0) = axes[0](i0);
    double tw = edge_weight(i0);
    if (dim == 2) {
      u(1) = axes[1](i1);
      tw *= edge_weight(i1);
    }
    nodes.col(idx) = u;
    log_w(idx) = std::log(tw) - loss_phi_r(problem, u);
  }
  const Vector w = (log_w.array() - log_w.maxCoeff()).exp();
  const double z = w.sum();
  const Vector mean = nodes * w / z;
  const Matrix centered = nodes.colwise() - mean;
  const Matrix cov = centered * w.asDiagonal() * centered.transpose() / z;
  return GaussianMoments{mean, SymMatrix(cov)};
}

}  // namespace eks
