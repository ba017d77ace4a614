#pragma once

#include "eks/ensemble.hpp"
#include "eks/model.hpp"
#include "eks/noise.hpp"
#include "eks/reference.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace eks {

inline constexpr double kMaxStepSize = 0.5;

struct SdeConfig {
  double h = 0.01;
  std::uint64_t n_steps = 0;
  Eigen::Index j_particles = 1;
  std::uint64_t seed = 0;
  double sqrt_tol = kDefaultSqrtTol;
  /// Multiplies every drift term. Always 1 outside of mutation tests.
  double drift_scale = 1.0;

  void validate() const;
  double stop_time() const noexcept { return h * static_cast<double>(n_steps); }
};

/// One step of the ensemble Kalman sampler. The data misfit drift uses the
/// cross covariance Cov(u, G); the prior drift is implicit in u*_{n+1}; the
/// noise sqrt(2h Cov(u,u)) xi reads the draws at (ens.step(), j, l).
Ensemble eks_step(const Ensemble& ens, const InverseProblem& problem, const SdeConfig& cfg, const NoiseSource& noise);

/// Same scheme with the misfit drift Cov(u,u) grad G(u^j) Gamma^{-1} (G(u^j) - y).
Ensemble eks_gradient_step(const Ensemble& ens, const InverseProblem& problem, const SdeConfig& cfg,
                           const NoiseSource& noise);

/// Euler-Maruyama step of dv = -C(t) grad Phi_R(v) dt + sqrt(2 C(t)) dW with
/// rho = (m(t), C(t)) supplied by the caller.
Ensemble mean_field_step(const Ensemble& v, const GaussianMoments& rho, const InverseProblem& problem,
                         const SdeConfig& cfg, const NoiseSource& noise);

/// lambda_min(B) * lambda_min(C(t)).
double condition_check(const InverseProblem& problem, const GaussianMoments& rho);

enum class StepMode { Eks, EksGradient, MeanField, Coupled };

std::string_view to_string(StepMode mode) noexcept;
std::optional<StepMode> parse_step_mode(std::string_view name) noexcept;

struct StepDiagnostics {
  std::uint64_t step;
  double time;
  double coupling_error;  // NaN unless coupled
  double condition;       // NaN without a moment flow
  double trace_cov;
  double fourth_moment;
};

struct RunOptions {
  StepMode mode = StepMode::Eks;
  /// Coupled mode only: drive u and v with the same draws.
  bool share_noise = true;
  bool record_diagnostics = false;
  /// Required for MeanField and Coupled; enables the condition diagnostic.
  const MomentFlow* flow = nullptr;
};

struct RunResult {
  Ensemble u;
  std::optional<Ensemble> v;
  /// (1/J) sum_j |u^j - v^j|^2 at the final step; NaN unless coupled.
  double coupling_error;
  std::vector<StepDiagnostics> diagnostics;
};

/// Runs cfg.n_steps steps of the chosen mode from `initial`. In mean-field
/// mode the evolved ensemble is returned as `u`. Step errors are rethrown
/// with the failing step index.
RunResult run(const Ensemble& initial, const InverseProblem& problem, const SdeConfig& cfg, const RunOptions& options);
RunResult run(const Ensemble& initial, const InverseProblem& problem, const SdeConfig& cfg, const RunOptions& options,
              const NoiseSource& noise_u, const NoiseSource& noise_v);

double coupling_error(const Ensemble& u, const Ensemble& v);

void write_diagnostics_csv(std::ostream& out, std::span<const StepDiagnostics> rows);

}  // namespace eks
