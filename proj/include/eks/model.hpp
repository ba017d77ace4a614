#pragma once

#include "eks/spd_linalg.hpp"

#include <cstddef>
#include <functional>
#include <optional>

namespace eks {

/// Linear part A of the forward map, K x L.
struct LinearMap {
  Matrix a;

  explicit LinearMap(Matrix a_);
  Eigen::Index data_dim() const noexcept { return a.rows(); }
  Eigen::Index param_dim() const noexcept { return a.cols(); }
};

/// Mean and covariance of a Gaussian. Used for the posterior (u*, B^-1) and
/// for the mean-field law rho(t).
struct GaussianMoments {
  Vector mean;
  SymMatrix cov;
};

/// Bounded nonlinear term m(u) = basis * profile(u) whose range is
/// Gamma^{-1}-orthogonal to Range(A).
///
/// The supplied basis columns are projected onto the Gamma^{-1}-orthogonal
/// complement of Range(A) at construction, so A^T Gamma^{-1} m(u) = 0 holds
/// for every u regardless of the profile. `bound` is the constant M with
/// |m(u)| <= M and |grad m(u)| <= M; both are checked on every evaluation.
class NonlinearPerturbation {
 public:
  using Profile = std::function<Vector(const Vector&)>;          // R^L -> R^d
  using ProfileJacobian = std::function<Matrix(const Vector&)>;  // L x d

  NonlinearPerturbation(const LinearMap& a, const SymMatrix& gamma, const Matrix& raw_basis, double bound,
                        Profile profile, ProfileJacobian jacobian);

  const Matrix& direction_basis() const noexcept { return basis_; }
  double amplitude_bound() const noexcept { return bound_; }

  Vector evaluate(const Vector& u) const;
  /// L x K matrix grad m(u).
  Matrix gradient(const Vector& u) const;

 private:
  Matrix basis_;
  double bound_;
  Profile profile_;
  ProfileJacobian jacobian_;
};

/// Projects the columns of `raw` Gamma^{-1}-orthogonally off Range(A).
Matrix project_off_range(const LinearMap& a, const SymMatrix& gamma, const Matrix& raw);

/// m(u) = amplitude * b * tanh(frequency^T u), with b the normalized
/// projection of `seed_direction` off Range(A).
NonlinearPerturbation make_perpendicular_perturbation(const LinearMap& a, const SymMatrix& gamma,
                                                      const Vector& seed_direction, double amplitude,
                                                      const Vector& frequency);

/// Bayesian inverse problem y = G(u) + noise, noise ~ N(0, Gamma), prior
/// N(u0, Gamma0). Immutable after construction.
class InverseProblem {
 public:
  InverseProblem(LinearMap a, SymMatrix gamma, SymMatrix gamma0, Vector y, Vector u0,
                 std::optional<NonlinearPerturbation> perturbation = std::nullopt);

  const LinearMap& forward_linear() const noexcept { return a_; }
  const Matrix& a() const noexcept { return a_.a; }
  const std::optional<NonlinearPerturbation>& perturbation() const noexcept { return m_; }
  bool is_linear() const noexcept { return !m_.has_value(); }

  const SymMatrix& gamma() const noexcept { return gamma_; }
  const SymMatrix& gamma0() const noexcept { return gamma0_; }
  const SymMatrix& gamma_inv() const noexcept { return gamma_inv_; }
  const SymMatrix& gamma0_inv() const noexcept { return gamma0_inv_; }
  const Vector& y() const noexcept { return y_; }
  const Vector& u0() const noexcept { return u0_; }
  /// A^T Gamma^{-1} y + Gamma0^{-1} u0, the source term of the mean ODE.
  const Vector& r() const noexcept { return r_; }

  Eigen::Index param_dim() const noexcept { return a_.param_dim(); }
  Eigen::Index data_dim() const noexcept { return a_.data_dim(); }

  /// Same problem with the nonlinear term dropped.
  InverseProblem linear_part() const;

 private:
  LinearMap a_;
  SymMatrix gamma_;
  SymMatrix gamma0_;
  Vector y_;
  Vector u0_;
  std::optional<NonlinearPerturbation> m_;
  SymMatrix gamma_inv_;
  SymMatrix gamma0_inv_;
  Vector r_;
};

Vector apply_forward(const InverseProblem& problem, const Vector& u);

/// L x K Jacobian transpose: A^T + grad m(u).
Matrix forward_gradient(const InverseProblem& problem, const Vector& u);

/// Phi_R(u) = 1/2 |y - G(u)|^2_Gamma + 1/2 |u - u0|^2_Gamma0.
double loss_phi_r(const InverseProblem& problem, const Vector& u);
Vector grad_phi_r(const InverseProblem& problem, const Vector& u);

/// B = A^T Gamma^{-1} A + Gamma0^{-1}. Linear problems only.
SymMatrix precision_matrix(const InverseProblem& problem);

/// Exact Gaussian posterior (u* = B^{-1} r, B^{-1}). Linear problems only.
GaussianMoments posterior_moments(const InverseProblem& problem);

/// Mean and covariance of exp(-Phi_R) by a tensor-product trapezoid rule
/// centred on the posterior of the linear part, spanning +-half_width_std
/// standard deviations per axis. Works for nonlinear problems; L <= 2.
GaussianMoments grid_posterior_moments(const InverseProblem& problem, std::size_t points_per_axis = 400,
                                       double half_width_std = 8.0);

}  // namespace eks
