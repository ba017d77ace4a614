#include "eks/metrics.hpp"

#include "eks/error.hpp"
#include "eks/noise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace eks {

namespace {

void require_same_shape(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw Error(ErrorKind::SizeMismatch, "point clouds differ in size: " + std::to_string(x.rows()) + "x" +
                                             std::to_string(x.cols()) + " vs " + std::to_string(y.rows()) + "x" +
                                             std::to_string(y.cols()));
  }
}

SlopeFit fit_line(std::vector<std::pair<double, double>> pts) {
  const double n = static_cast<double>(pts.size());
  double mx = 0.0, my = 0.0;
  for (const auto& [x, y] : pts) {
    mx += x;
    my += y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (const auto& [x, y] : pts) {
    sxx += (x - mx) * (x - mx);
    sxy += (x - mx) * (y - my);
    syy += (y - my) * (y - my);
  }
  if (!(sxx > 0.0)) throw Error(ErrorKind::InvalidArgument, "slope fit needs at least two distinct abscissae");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double sse = 0.0;
  for (const auto& [x, y] : pts) {
    const double e = y - (fit.intercept + fit.slope * x);
    sse += e * e;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 1.0;
  fit.points = std::move(pts);
  return fit;
}

double one_dimensional_w2_sq(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return sum / static_cast<double>(a.size());
}

}  // namespace

double gaussian_w2(const GaussianMoments& a, const GaussianMoments& b, double sqrt_tol) {
  if (a.mean.size() != b.mean.size() || a.cov.dim() != b.cov.dim() || a.cov.dim() != a.mean.size()) {
    throw Error(ErrorKind::DimensionMismatch, "gaussian_w2: moment dimensions differ");
  }
  const double mean_sq = (a.mean - b.mean).squaredNorm();
  double bures = 0.0;
  if (a.cov.matrix() != b.cov.matrix()) {
    const SymMatrix root_b = spd_sqrt(b.cov, sqrt_tol);
    const SymMatrix cross = spd_sqrt(SymMatrix(root_b.matrix() * a.cov.matrix() * root_b.matrix()), sqrt_tol);
    // Validates a as PSD as well.
    (void)spd_sqrt(a.cov, sqrt_tol);
    bures = std::max(0.0, a.cov.trace() + b.cov.trace() - 2.0 * cross.trace());
  }
  return std::sqrt(mean_sq + bures);
}

Assignment solve_assignment(const Matrix& cost) {
  if (cost.rows() != cost.cols()) throw Error(ErrorKind::SizeMismatch, "assignment cost matrix must be square");
  if (!cost.allFinite()) throw Error(ErrorKind::NonFinite, "assignment cost matrix has non-finite entries");
  const Eigen::Index n = cost.rows();
  const double inf = std::numeric_limits<double>::infinity();
  // Column i0 of the transpose holds row i0 of the cost contiguously.
  const Matrix by_row = cost.transpose();

  // 1-based arrays; column 0 is the virtual root of each augmenting search.
  std::vector<double> row_pot(static_cast<std::size_t>(n + 1), 0.0), col_pot(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Eigen::Index> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  std::vector<double> min_slack(static_cast<std::size_t>(n + 1));
  std::vector<char> used(static_cast<std::size_t>(n + 1));

  for (Eigen::Index i = 1; i <= n; ++i) {
    match[0] = i;
    Eigen::Index j0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Eigen::Index i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      Eigen::Index j1 = 0;
      for (Eigen::Index j = 1; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) continue;
        const double reduced = by_row(j - 1, i0 - 1) - row_pot[static_cast<std::size_t>(i0)] - col_pot[ju];
        if (reduced < min_slack[ju]) {
          min_slack[ju] = reduced;
          way[ju] = j0;
        }
        if (min_slack[ju] < delta) {
          delta = min_slack[ju];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        const auto ju = static_cast<std::size_t>(j);
        if (used[ju]) {
          row_pot[static_cast<std::size_t>(match[ju])] += delta;
          col_pot[ju] -= delta;
        } else {
          min_slack[ju] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const Eigen::Index j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment result;
  result.target.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index j = 1; j <= n; ++j) result.target[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  for (Eigen::Index i = 0; i < n; ++i) result.cost += cost(i, result.target[static_cast<std::size_t>(i)]);
  return result;
}

double empirical_w2_exact(const Matrix& x, const Matrix& y) {
  require_same_shape(x, y);
  const Eigen::Index n = x.cols();
  if (n > kMaxExactW2Size) {
    throw Error(ErrorKind::TooLarge, "exact W2 limited to " + std::to_string(kMaxExactW2Size) + " particles");
  }
  Matrix cost(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) cost(i, j) = (x.col(i) - y.col(j)).squaredNorm();
  }
  const Assignment best = solve_assignment(cost);
  return std::sqrt(best.cost / static_cast<double>(n));
}

double empirical_w2_exact(const Ensemble& x, const Ensemble& y) { return empirical_w2_exact(x.particles(), y.particles()); }

double sliced_w2(const Ensemble& x, const Ensemble& y, int n_projections, std::uint64_t seed) {
  require_same_shape(x.particles(), y.particles());
  if (n_projections < 1) throw Error(ErrorKind::InvalidArgument, "sliced_w2 needs at least one projection");
  const CounterNoise noise(seed, NoiseStream::Projection);
  const Eigen::Index dim = x.dim();
  double total = 0.0;
  for (int k = 0; k < n_projections; ++k) {
    Vector dir(dim);
    do {
      for (Eigen::Index l = 0; l < dim; ++l) dir(l) = noise.normal(static_cast<std::uint64_t>(k), 0, static_cast<std::uint64_t>(l));
    } while (dir.norm() == 0.0);
    dir.normalize();
    std::vector<double> px(static_cast<std::size_t>(x.size())), py(static_cast<std::size_t>(y.size()));
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      px[static_cast<std::size_t>(j)] = dir.dot(x.particle(j));
      py[static_cast<std::size_t>(j)] = dir.dot(y.particle(j));
    }
    total += one_dimensional_w2_sq(std::move(px), std::move(py));
  }
  return std::sqrt(total / n_projections);
}

double w2_ensemble_vs_gaussian(const Ensemble& x, const GaussianMoments& g, Eigen::Index n_reference_draws,
                               std::uint64_t seed) {
  if (n_reference_draws != x.size()) {
    throw Error(ErrorKind::SizeMismatch, "reference draw count must equal the ensemble size");
  }
  if (g.mean.size() != x.dim()) throw Error(ErrorKind::SizeMismatch, "Gaussian dimension differs from ensemble");
  const CounterNoise noise(seed, NoiseStream::ReferenceDraw);
  const Matrix reference = draw_gaussian_particles(g, n_reference_draws, noise);
  return empirical_w2_exact(x.particles(), reference);
}

SlopeFit fit_slope(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw Error(ErrorKind::InvalidArgument, "fit_slope needs at least 3 points");
  std::vector<std::pair<double, double>> logs;
  logs.reserve(points.size());
  for (const auto& [x, y] : points) {
    if (!(x > 0.0) || !(y > 0.0)) throw Error(ErrorKind::NonPositive, "fit_slope needs positive coordinates");
    logs.emplace_back(std::log(x), std::log(y));
  }
  return fit_line(std::move(logs));
}

SlopeFit fit_log_linear(std::span<const std::pair<double, double>> points) {
  if (points.size() < 3) throw Error(ErrorKind::InvalidArgument, "fit_log_linear needs at least 3 points");
  std::vector<std::pair<double, double>> logs;
  logs.reserve(points.size());
  for (const auto& [x, y] : points) {
    if (!(y > 0.0)) throw Error(ErrorKind::NonPositive, "fit_log_linear needs positive ordinates");
    logs.emplace_back(x, std::log(y));
  }
  return fit_line(std::move(logs));
}

}  // namespace eks
