#include "eks/ensemble.hpp"

#include "eks/error.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace eks {

namespace {

constexpr Eigen::Index kBlock = 64;

// Sums terms 0..n-1 in fixed blocks of kBlock, then combines the block sums
// pairwise. `add(acc, k)` accumulates term k into acc.
template <class Acc, class Add>
Acc blocked_pairwise_sum(Eigen::Index n, const Acc& zero, Add&& add) {
  const Eigen::Index blocks = (n + kBlock - 1) / kBlock;
  std::vector<Acc> partial(static_cast<std::size_t>(std::max<Eigen::Index>(blocks, 1)), zero);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    Acc& acc = partial[static_cast<std::size_t>(b)];
    const Eigen::Index end = std::min(n, (b + 1) * kBlock);
    for (Eigen::Index k = b * kBlock; k < end; ++k) add(acc, k);
  }
  for (std::size_t stride = 1; stride < partial.size(); stride *= 2) {
    for (std::size_t i = 0; i + stride < partial.size(); i += 2 * stride) partial[i] += partial[i + stride];
  }
  return partial.front();
}

// Particles in canonical order.
Matrix sorted_columns(const Matrix& x) {
  const auto order = canonical_order(x);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index k = 0; k < x.cols(); ++k) out.col(k) = x.col(order[static_cast<std::size_t>(k)]);
  return out;
}

// Mean of the columns, computed as x_0 + mean(x_k - x_0) so that identical
// columns give their common value exactly.
Vector shifted_mean(const Matrix& x) {
  const Vector ref = x.col(0);
  const Vector sum = blocked_pairwise_sum<Vector>(x.cols(), Vector::Zero(x.rows()),
                                                  [&](Vector& acc, Eigen::Index k) { acc += x.col(k) - ref; });
  return ref + sum / static_cast<double>(x.cols());
}

Matrix cross_cov(const Matrix& dx, const Matrix& dy) {
  const Matrix zero = Matrix::Zero(dx.rows(), dy.rows());
  const Matrix sum = blocked_pairwise_sum<Matrix>(
      dx.cols(), zero, [&](Matrix& acc, Eigen::Index k) { acc.noalias() += dx.col(k) * dy.col(k).transpose(); });
  return sum / static_cast<double>(dx.cols());
}

void require_finite_particles(const Matrix& x) {
  if (!x.allFinite()) throw Error(ErrorKind::NonFinite, "ensemble contains non-finite particles");
}

}  // namespace

Ensemble::Ensemble(Matrix particles, double time, std::uint64_t step)
    : particles_(std::move(particles)), time_(time), step_(step) {
  if (particles_.cols() < 1 || particles_.rows() < 1) {
    throw Error(ErrorKind::DimensionMismatch, "ensemble needs J >= 1 particles of dimension L >= 1");
  }
  require_finite_particles(particles_);
  if (!(time_ >= 0.0) || !std::isfinite(time_)) throw Error(ErrorKind::InvalidArgument, "ensemble time must be >= 0");
}

Ensemble Ensemble::advanced(Matrix next, double h) const { return Ensemble(std::move(next), time_ + h, step_ + 1); }

bool Ensemble::operator==(const Ensemble& other) const {
  return step_ == other.step_ && time_ == other.time_ && particles_.rows() == other.particles_.rows() &&
         particles_.cols() == other.particles_.cols() && particles_ == other.particles_;
}

std::vector<Eigen::Index> canonical_order(const Matrix& particles) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(particles.cols()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index l = 0; l < particles.rows(); ++l) {
      if (particles(l, a) != particles(l, b)) return particles(l, a) < particles(l, b);
    }
    return false;
  });
  return order;
}

EnsembleStats empirical_stats(const Ensemble& ens, const InverseProblem& problem) {
  if (ens.dim() != problem.param_dim()) {
    throw Error(ErrorKind::DimensionMismatch, "ensemble dimension does not match the problem");
  }
  const Matrix u = sorted_columns(ens.particles());
  Matrix g(problem.data_dim(), u.cols());
  for (Eigen::Index k = 0; k < u.cols(); ++k) g.col(k) = apply_forward(problem, u.col(k));
  if (!g.allFinite()) throw Error(ErrorKind::NonFinite, "forward map produced non-finite values");

  EnsembleStats stats;
  stats.mean_u = shifted_mean(u);
  stats.mean_g = shifted_mean(g);
  const Matrix du = u.colwise() - stats.mean_u;
  const Matrix dg = g.colwise() - stats.mean_g;
  stats.cov_uu = SymMatrix(cross_cov(du, du));
  stats.cov_ug = cross_cov(du, dg);
  return stats;
}

GaussianMoments ensemble_moments(const Ensemble& ens) {
  const Matrix u = sorted_columns(ens.particles());
  Vector mean = shifted_mean(u);
  const Matrix du = u.colwise() - mean;
  return GaussianMoments{std::move(mean), SymMatrix(cross_cov(du, du))};
}

double centered_moment(const Ensemble& ens, int p) {
  if (p != 2 && p != 4 && p != 6 && p != 8) {
    throw Error(ErrorKind::InvalidArgument, "centered_moment supports p in {2,4,6,8}");
  }
  const Matrix u = sorted_columns(ens.particles());
  const Matrix du = u.colwise() - shifted_mean(u);
  const int half = p / 2;
  const double sum = blocked_pairwise_sum<double>(du.cols(), 0.0, [&](double& acc, Eigen::Index k) {
    const double sq = du.col(k).squaredNorm();
    double term = 1.0;
    for (int i = 0; i < half; ++i) term *= sq;
    acc += term;
  });
  const double value = sum / static_cast<double>(du.cols());
  if (!std::isfinite(value)) throw Error(ErrorKind::NonFinite, "centered moment overflowed");
  return value;
}

double affine_span_distance(const Ensemble& ens, const Ensemble& reference) {
  if (ens.dim() != reference.dim()) throw Error(ErrorKind::DimensionMismatch, "affine_span_distance: L differs");
  const Vector origin = reference.particle(0);
  const Matrix spread = reference.particles().colwise() - origin;

  Matrix basis(ens.dim(), 0);
  if (spread.cols() > 1) {
    Eigen::JacobiSVD<Matrix> svd(spread, Eigen::ComputeThinU);
    const Vector& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? 1e-12 * sv(0) : 0.0;
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > cutoff) ++rank;
    basis = svd.matrixU().leftCols(rank);
  }
  double worst = 0.0;
  for (Eigen::Index j = 0; j < ens.size(); ++j) {
    const Vector d = ens.particle(j) - origin;
    const Vector residual = d - basis * (basis.transpose() * d);
    worst = std::max(worst, residual.norm());
  }
  return worst;
}

void write_csv(std::ostream& out, const Ensemble& ens) {
  std::ostringstream buf;
  buf.precision(17);
  buf << "# step=" << ens.step() << " time=" << ens.time() << '\n';
  for (Eigen::Index l = 0; l < ens.dim(); ++l) buf << (l ? "," : "") << "u_" << l;
  buf << '\n';
  for (Eigen::Index j = 0; j < ens.size(); ++j) {
    for (Eigen::Index l = 0; l < ens.dim(); ++l) buf << (l ? "," : "") << ens.particles()(l, j);
    buf << '\n';
  }
  out << buf.str();
}

Ensemble read_csv(std::istream& in) {
  std::string line;
  std::uint64_t step = 0;
  double time = 0.0;
  std::vector<std::vector<double>> rows;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string tok;
      while (meta >> tok) {
        if (tok.rfind("step=", 0) == 0) step = std::stoull(tok.substr(5));
        if (tok.rfind("time=", 0) == 0) time = std::stod(tok.substr(5));
      }
      continue;
    }
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::vector<double> row;
    std::istringstream fields(line);
    std::string cell;
    while (std::getline(fields, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw Error(ErrorKind::Config, "ensemble CSV line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorKind::Config, "ensemble CSV line " + std::to_string(line_no) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorKind::Config, "ensemble CSV has no particle rows");
  Matrix particles(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (std::size_t l = 0; l < rows[j].size(); ++l) {
      particles(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(j)) = rows[j][l];
    }
  }
  return Ensemble(std::move(particles), time, step);
}

}  // namespace eks
