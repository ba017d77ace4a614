#include "eks/dynamics.hpp"

#include "eks/error.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

namespace eks {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_step_size(double h) {
  if (!(h >= 0.0) || h > kMaxStepSize) {
    throw Error(ErrorKind::InvalidArgument, "step size must lie in [0, " + std::to_string(kMaxStepSize) + "]");
  }
}

Vector noise_vector(const NoiseSource& noise, std::uint64_t step, Eigen::Index j, Eigen::Index dim) {
  Vector xi(dim);
  for (Eigen::Index l = 0; l < dim; ++l) {
    xi(l) = noise.normal(step, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(l));
  }
  return xi;
}

// Shared second half of both sampler steps: given per-particle misfit drifts
// (columns of `drift`), solve the implicit prior step and add the noise.
Ensemble semi_implicit_update(const Ensemble& ens, const InverseProblem& problem, const SymMatrix& cov,
                              const Matrix& drift, const SdeConfig& cfg, const NoiseSource& noise) {
  const Eigen::Index dim = ens.dim();
  const double h = cfg.h;
  const double hd = h * cfg.drift_scale;
  const Matrix cov_prior = cov.matrix() * problem.gamma0_inv().matrix();
  const Matrix system = Matrix::Identity(dim, dim) + hd * cov_prior;

  std::optional<LuSystem> lu;
  try {
    lu.emplace(system);
  } catch (const Error& e) {
    throw Error(ErrorKind::SingularImplicitSystem, e.detail());
  }
  const Vector prior_source = hd * (cov_prior * problem.u0());
  const SymMatrix root = spd_sqrt(cov * (2.0 * h), cfg.sqrt_tol);

  Matrix next(dim, ens.size());
  for (Eigen::Index j = 0; j < ens.size(); ++j) {
    const Vector rhs = ens.particle(j) - hd * drift.col(j) + prior_source;
    const Vector star = lu->solve(rhs);
    next.col(j) = star + root.matrix() * noise_vector(noise, ens.step(), j, dim);
  }
  if (!next.allFinite()) throw Error(ErrorKind::NonFinite, "particles overflowed; the step size is too large");
  return ens.advanced(std::move(next), h);
}

std::vector<GaussianMoments> flow_on_grid(const MomentFlow& flow, double t0, double h, std::uint64_t n_steps) {
  std::vector<double> times(n_steps + 1);
  for (std::uint64_t n = 0; n <= n_steps; ++n) times[n] = t0 + h * static_cast<double>(n);
  return rho_trajectory(flow, times);
}

}  // namespace

void SdeConfig::validate() const {
  if (!(h > 0.0) || h > kMaxStepSize) {
    throw Error(ErrorKind::InvalidArgument, "h must lie in (0, " + std::to_string(kMaxStepSize) + "]");
  }
  if (j_particles < 1) throw Error(ErrorKind::InvalidArgument, "J must be >= 1");
  if (!(sqrt_tol >= 0.0)) throw Error(ErrorKind::InvalidArgument, "sqrt_tol must be >= 0");
  if (!std::isfinite(drift_scale)) throw Error(ErrorKind::InvalidArgument, "drift_scale must be finite");
}

Ensemble eks_step(const Ensemble& ens, const InverseProblem& problem, const SdeConfig& cfg, const NoiseSource& noise) {
  require_step_size(cfg.h);
  const EnsembleStats stats = empirical_stats(ens, problem);
  const Matrix gain = stats.cov_ug * problem.gamma_inv().matrix();
  Matrix drift(ens.dim(), ens.size());
  for (Eigen::Index j = 0; j < ens.size(); ++j) {
    drift.col(j) = gain * (apply_forward(problem, ens.particle(j)) - problem.y());
  }
  return semi_implicit_update(ens, problem, stats.cov_uu, drift, cfg, noise);
}

Ensemble eks_gradient_step(const Ensemble& ens, const InverseProblem& problem, const SdeConfig& cfg,
                           const NoiseSource& noise) {
  require_step_size(cfg.h);
  const EnsembleStats stats = empirical_stats(ens, problem);
  Matrix drift(ens.dim(), ens.size());
  for (Eigen::Index j = 0; j < ens.size(); ++j) {
    const Vector u = ens.particle(j);
    const Vector weighted = problem.gamma_inv().matrix() * (apply_forward(problem, u) - problem.y());
    drift.col(j) = stats.cov_uu.matrix() * (forward_gradient(problem, u) * weighted);
  }
  return semi_implicit_update(ens, problem, stats.cov_uu, drift, cfg, noise);
}

Ensemble mean_field_step(const Ensemble& v, const GaussianMoments& rho, const InverseProblem& problem,
                         const SdeConfig& cfg, const NoiseSource& noise) {
  require_step_size(cfg.h);
  if (!problem.is_linear()) throw Error(ErrorKind::NonlinearUnsupported, "mean-field step needs a linear problem");
  if (rho.cov.dim() != v.dim()) throw Error(ErrorKind::DimensionMismatch, "rho covariance does not match ensemble");
  const double h = cfg.h;
  const Matrix& c = rho.cov.matrix();
  const SymMatrix root = spd_sqrt(rho.cov * (2.0 * h), cfg.sqrt_tol);
  Matrix next(v.dim(), v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    const Vector x = v.particle(j);
    next.col(j) = x - (h * cfg.drift_scale) * (c * grad_phi_r(problem, x)) +
                  root.matrix() * noise_vector(noise, v.step(), j, v.dim());
  }
  if (!next.allFinite()) throw Error(ErrorKind::NonFinite, "mean-field particles overflowed");
  return v.advanced(std::move(next), h);
}

double condition_check(const InverseProblem& problem, const GaussianMoments& rho) {
  return lambda_min(precision_matrix(problem)) * lambda_min(rho.cov);
}

std::string_view to_string(StepMode mode) noexcept {
  switch (mode) {
    case StepMode::Eks: return "eks";
    case StepMode::EksGradient: return "eks_gradient";
    case StepMode::MeanField: return "mean_field";
    case StepMode::Coupled: return "coupled";
  }
  return "unknown";
}

std::optional<StepMode> parse_step_mode(std::string_view name) noexcept {
  for (StepMode m : {StepMode::Eks, StepMode::EksGradient, StepMode::MeanField, StepMode::Coupled}) {
    if (to_string(m) == name) return m;
  }
  return std::nullopt;
}

double coupling_error(const Ensemble& u, const Ensemble& v) {
  if (u.size() != v.size() || u.dim() != v.dim()) throw Error(ErrorKind::SizeMismatch, "coupled ensembles differ");
  double sum = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) sum += (u.particle(j) - v.particle(j)).squaredNorm();
  return sum / static_cast<double>(u.size());
}

RunResult run(const Ensemble& initial, const InverseProblem& problem, const SdeConfig& cfg,
              const RunOptions& options) {
  const CounterNoise shared(cfg.seed, NoiseStream::StepNoise);
  const CounterNoise decoupled(cfg.seed, NoiseStream::DecoupledStepNoise);
  return run(initial, problem, cfg, options, shared, options.share_noise ? static_cast<const NoiseSource&>(shared)
                                                                          : static_cast<const NoiseSource&>(decoupled));
}

RunResult run(const Ensemble& initial, const InverseProblem& problem, const SdeConfig& cfg, const RunOptions& options,
              const NoiseSource& noise_u, const NoiseSource& noise_v) {
  cfg.validate();
  if (cfg.j_particles != initial.size()) {
    throw Error(ErrorKind::SizeMismatch, "config has J=" + std::to_string(cfg.j_particles) + " but the ensemble has " +
                                             std::to_string(initial.size()) + " particles");
  }
  const bool needs_flow = options.mode == StepMode::MeanField || options.mode == StepMode::Coupled;
  if (needs_flow && options.flow == nullptr) {
    throw Error(ErrorKind::InvalidArgument, std::string(to_string(options.mode)) + " mode needs a moment flow");
  }
  std::vector<GaussianMoments> rho;
  if (options.flow != nullptr && (needs_flow || options.record_diagnostics)) {
    rho = flow_on_grid(*options.flow, initial.time(), cfg.h, cfg.n_steps);
  }
  const bool coupled = options.mode == StepMode::Coupled;

  Ensemble u = initial;
  std::optional<Ensemble> v;
  if (coupled) v = initial;

  RunResult result{initial, std::nullopt, coupled ? 0.0 : kNaN, {}};
  auto record = [&](std::uint64_t n) {
    if (!options.record_diagnostics) return;
    const GaussianMoments moments = ensemble_moments(u);
    result.diagnostics.push_back(StepDiagnostics{
        u.step(), u.time(), coupled ? coupling_error(u, *v) : kNaN,
        rho.empty() ? kNaN : condition_check(problem, rho[n]), moments.cov.trace(), centered_moment(u, 4)});
  };

  record(0);
  for (std::uint64_t n = 0; n < cfg.n_steps; ++n) {
    try {
      switch (options.mode) {
        case StepMode::Eks: u = eks_step(u, problem, cfg, noise_u); break;
        case StepMode::EksGradient: u = eks_gradient_step(u, problem, cfg, noise_u); break;
        case StepMode::MeanField: u = mean_field_step(u, rho[n], problem, cfg, noise_u); break;
        case StepMode::Coupled: {
          Ensemble next_v = mean_field_step(*v, rho[n], problem, cfg, noise_v);
          u = eks_step(u, problem, cfg, noise_u);
          v = std::move(next_v);
          break;
        }
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "step " + std::to_string(n) + ": " + e.detail());
    }
    record(n + 1);
  }

  result.u = std::move(u);
  if (coupled) {
    result.coupling_error = coupling_error(result.u, *v);
    result.v = std::move(v);
  }
  return result;
}

void write_diagnostics_csv(std::ostream& out, std::span<const StepDiagnostics> rows) {
  std::ostringstream buf;
  buf.precision(17);
  buf << "step,time,coupling_error,condition_check,trace_cov,fourth_moment\n";
  for (const auto& r : rows) {
    buf << r.step << ',' << r.time << ',' << r.coupling_error << ',' << r.condition << ',' << r.trace_cov << ','
        << r.fourth_moment << '\n';
  }
  out << buf.str();
}

}  // namespace eks
