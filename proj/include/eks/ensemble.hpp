#pragma once

#include "eks/model.hpp"
#include "eks/spd_linalg.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace eks {

/// J particles in R^L stored column-wise (L x J), plus the time and step
/// counter of the schedule that produced them.
class Ensemble {
 public:
  explicit Ensemble(Matrix particles, double time = 0.0, std::uint64_t step = 0);

  Eigen::Index size() const noexcept { return particles_.cols(); }
  Eigen::Index dim() const noexcept { return particles_.rows(); }
  const Matrix& particles() const noexcept { return particles_; }
  auto particle(Eigen::Index j) const { return particles_.col(j); }
  double time() const noexcept { return time_; }
  std::uint64_t step() const noexcept { return step_; }

  /// Successor state holding `next` at time + h, step + 1.
  Ensemble advanced(Matrix next, double h) const;

  bool operator==(const Ensemble& other) const;

 private:
  Matrix particles_;
  double time_;
  std::uint64_t step_;
};

struct EnsembleStats {
  Vector mean_u;
  Vector mean_g;
  SymMatrix cov_uu;
  Matrix cov_ug;  // L x K
};

/// Empirical means and covariances with 1/J normalization.
///
/// Reductions run over the particles in lexicographic order through a fixed
/// blocked pairwise tree, so the result is bitwise independent of particle
/// order and of how the work is split.
EnsembleStats empirical_stats(const Ensemble& ens, const InverseProblem& problem);

/// Empirical mean and (1/J) covariance of the particles alone.
GaussianMoments ensemble_moments(const Ensemble& ens);

/// (1/J) sum_j |u^j - mean|^p for p in {2, 4, 6, 8}.
double centered_moment(const Ensemble& ens, int p);

/// Largest distance from a particle of `ens` to the affine span of the
/// particles of `reference`.
double affine_span_distance(const Ensemble& ens, const Ensemble& reference);

/// Lexicographic order of the particle columns; ties keep index order.
std::vector<Eigen::Index> canonical_order(const Matrix& particles);

/// CSV with a `# step=<n> time=<t>` line, a header `u_0,...,u_{L-1}` and one
/// row per particle at full double precision.
void write_csv(std::ostream& out, const Ensemble& ens);
Ensemble read_csv(std::istream& in);

}  // namespace eks
