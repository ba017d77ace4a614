#include "eks/spd_linalg.hpp"

#include "eks/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace eks {

namespace {

constexpr double kSingularRcond = 1e-14;

void require_finite(const Matrix& m, const char* what) {
  if (!all_finite(m)) throw Error(ErrorKind::NonFinite, std::string(what) + " has non-finite entries");
}

Eigen::SelfAdjointEigenSolver<Matrix> eigen_of(const SymMatrix& m) {
  require_finite(m.matrix(), "symmetric matrix");
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix());
  if (es.info() != Eigen::Success) throw Error(ErrorKind::NonFinite, "eigendecomposition did not converge");
  return es;
}

}  // namespace

bool all_finite(const Matrix& m) noexcept { return m.allFinite(); }

SymMatrix::SymMatrix(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw Error(ErrorKind::DimensionMismatch,
                "symmetric matrix must be square, got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
  require_finite(m, "symmetric matrix");
  m_ = 0.5 * (m + m.transpose());
}

SymMatrix SymMatrix::identity(Eigen::Index dim) { return SymMatrix(Tag{}, Matrix::Identity(dim, dim)); }

SymMatrix SymMatrix::zero(Eigen::Index dim) { return SymMatrix(Tag{}, Matrix::Zero(dim, dim)); }

SymMatrix SymMatrix::diagonal(const Vector& diag) {
  require_finite(diag, "diagonal");
  return SymMatrix(Tag{}, Matrix(diag.asDiagonal()));
}

SymMatrix spd_sqrt(const SymMatrix& m, double tol) {
  if (m.dim() == 0) return m;
  const auto es = eigen_of(m);
  const Vector& lambda = es.eigenvalues();
  const double scale = std::max(lambda.maxCoeff(), 0.0);
  const double floor = tol * scale;

  Vector root(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -floor) {
      throw Error(ErrorKind::NotPSD, "eigenvalue " + std::to_string(lambda(i)) + " below -tol*lambda_max");
    }
    root(i) = lambda(i) <= floor ? 0.0 : std::sqrt(lambda(i));
  }
  const Matrix& v = es.eigenvectors();
  return SymMatrix(v * root.asDiagonal() * v.transpose());
}

Matrix spd_solve(const SymMatrix& m, const Matrix& rhs, double jitter) {
  if (rhs.rows() != m.dim()) throw Error(ErrorKind::DimensionMismatch, "spd_solve: rhs rows do not match matrix");
  if (!(jitter >= 0.0)) throw Error(ErrorKind::InvalidArgument, "spd_solve: jitter must be >= 0");
  require_finite(rhs, "right-hand side");

  Matrix shifted = m.matrix();
  shifted.diagonal().array() += jitter;
  Eigen::LLT<Matrix> llt(shifted);
  if (llt.info() != Eigen::Success || !(llt.rcond() > kSingularRcond)) {
    throw Error(ErrorKind::SingularMatrix, "Cholesky factorization failed");
  }
  return llt.solve(rhs);
}

Vector spd_solve(const SymMatrix& m, const Vector& rhs, double jitter) {
  return spd_solve(m, Matrix(rhs), jitter).col(0);
}

SymMatrix spd_invert(const SymMatrix& m) {
  const Matrix eye = Matrix::Identity(m.dim(), m.dim());
  return SymMatrix(spd_solve(m, eye));
}

double lambda_min(const SymMatrix& m) {
  if (m.dim() == 0) throw Error(ErrorKind::DimensionMismatch, "lambda_min of empty matrix");
  return eigen_of(m).eigenvalues().minCoeff();
}

double lambda_max(const SymMatrix& m) {
  if (m.dim() == 0) throw Error(ErrorKind::DimensionMismatch, "lambda_max of empty matrix");
  return eigen_of(m).eigenvalues().maxCoeff();
}

LuSystem::LuSystem(const Matrix& a) {
  if (a.rows() != a.cols()) throw Error(ErrorKind::DimensionMismatch, "LU system must be square");
  require_finite(a, "LU system matrix");
  lu_.compute(a);
  rcond_ = lu_.rcond();
  if (!(rcond_ > kSingularRcond)) {
    throw Error(ErrorKind::SingularMatrix, "LU factorization is numerically singular (rcond " + std::to_string(rcond_) + ")");
  }
}

}  // namespace eks
