#pragma once

#include <Eigen/Dense>

#include <cstddef>

namespace eks {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Dense symmetric matrix. Construction symmetrizes the input via (M + M^T)/2
/// and rejects non-square or non-finite data.
class SymMatrix {
 public:
  SymMatrix() = default;
  explicit SymMatrix(const Matrix& m);

  static SymMatrix identity(Eigen::Index dim);
  static SymMatrix zero(Eigen::Index dim);
  static SymMatrix diagonal(const Vector& diag);

  Eigen::Index dim() const noexcept { return m_.rows(); }
  const Matrix& matrix() const noexcept { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  double trace() const { return m_.trace(); }

  SymMatrix operator*(double s) const { return SymMatrix(Tag{}, m_ * s); }
  SymMatrix operator+(const SymMatrix& o) const { return SymMatrix(Tag{}, m_ + o.m_); }
  SymMatrix operator-(const SymMatrix& o) const { return SymMatrix(Tag{}, m_ - o.m_); }

 private:
  struct Tag {};
  SymMatrix(Tag, Matrix m) : m_(std::move(m)) {}

  Matrix m_;
};

inline constexpr double kDefaultSqrtTol = 1e-12;

bool all_finite(const Matrix& m) noexcept;

/// PSD square root through a symmetric eigendecomposition. Eigenvalues below
/// tol * lambda_max are clamped to zero; anything below -tol * lambda_max
/// throws NotPSD.
SymMatrix spd_sqrt(const SymMatrix& m, double tol = kDefaultSqrtTol);

/// Solves (M + jitter I) X = rhs via Cholesky. Throws SingularMatrix when the
/// shifted matrix is not numerically positive definite.
Matrix spd_solve(const SymMatrix& m, const Matrix& rhs, double jitter = 0.0);
Vector spd_solve(const SymMatrix& m, const Vector& rhs, double jitter = 0.0);

SymMatrix spd_invert(const SymMatrix& m);

double lambda_min(const SymMatrix& m);
double lambda_max(const SymMatrix& m);

/// LU factorization with partial pivoting of a general square matrix, kept
/// around so that many right-hand sides share one factorization.
class LuSystem {
 public:
  explicit LuSystem(const Matrix& a);

  Vector solve(const Vector& rhs) const { return lu_.solve(rhs); }
  Matrix solve(const Matrix& rhs) const { return lu_.solve(rhs); }
  double rcond() const noexcept { return rcond_; }

 private:
  Eigen::PartialPivLU<Matrix> lu_;
  double rcond_ = 0.0;
};

}  // namespace eks
