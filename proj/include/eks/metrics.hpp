#pragma once

#include "eks/ensemble.hpp"
#include "eks/model.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace eks {

inline constexpr Eigen::Index kMaxExactW2Size = 4096;

/// Closed-form W2 between Gaussians (Bures metric on the covariances).
double gaussian_w2(const GaussianMoments& a, const GaussianMoments& b, double sqrt_tol = kDefaultSqrtTol);

struct Assignment {
  std::vector<Eigen::Index> target;  // row i is matched with column target[i]
  double cost = 0.0;
};

/// Minimum-cost perfect matching on a square cost matrix; shortest augmenting
/// paths with dual potentials, O(n^3).
Assignment solve_assignment(const Matrix& cost);

/// Exact W2 between two equal-size empirical measures. Throws SizeMismatch on
/// differing J or L, TooLarge above kMaxExactW2Size particles.
double empirical_w2_exact(const Matrix& x, const Matrix& y);
double empirical_w2_exact(const Ensemble& x, const Ensemble& y);

/// Root mean square over random unit directions of the 1-D W2 between the
/// projected clouds.
double sliced_w2(const Ensemble& x, const Ensemble& y, int n_projections, std::uint64_t seed);

/// Estimates W2(M_x, g) by the exact W2 to a fresh i.i.d. sample of size J
/// from g. n_reference_draws must equal J.
double w2_ensemble_vs_gaussian(const Ensemble& x, const GaussianMoments& g, Eigen::Index n_reference_draws,
                               std::uint64_t seed);

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::vector<std::pair<double, double>> points;  // transformed coordinates
};

/// Least-squares line through (ln x, ln y). Needs >= 3 points, all positive.
SlopeFit fit_slope(std::span<const std::pair<double, double>> points);

/// Least-squares line through (x, ln y); the slope is the exponential rate.
SlopeFit fit_log_linear(std::span<const std::pair<double, double>> points);

}  // namespace eks
