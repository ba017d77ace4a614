#pragma once

#include "eks/model.hpp"

#include <iosfwd>
#include <span>
#include <vector>

namespace eks {

inline constexpr double kDefaultOdeStep = 1e-3;

/// Mean-field law of the linear flow started from N(m0, C0):
///   dm/dt = -C (B m - r),   dC/dt = -2 C B C + 2 C.
class MomentFlow {
 public:
  MomentFlow(InverseProblem problem, Vector m0, SymMatrix c0, double dt_ode = kDefaultOdeStep);

  const InverseProblem& problem() const noexcept { return problem_; }
  const Vector& m0() const noexcept { return m0_; }
  const SymMatrix& c0() const noexcept { return c0_; }
  double dt_ode() const noexcept { return dt_ode_; }
  const SymMatrix& precision() const noexcept { return b_; }
  const GaussianMoments& posterior() const noexcept { return posterior_; }

  /// Closed-form C(t) = ((1 - e^{-2t}) B + e^{-2t} C0^{-1})^{-1}.
  SymMatrix covariance(double t) const;

 private:
  InverseProblem problem_;
  Vector m0_;
  SymMatrix c0_;
  double dt_ode_;
  SymMatrix b_;
  SymMatrix c0_inv_;
  GaussianMoments posterior_;
};

SymMatrix covariance_closed_form(const MomentFlow& flow, double t);

/// Classical RK4 on the coupled (m, C) system with step flow.dt_ode(),
/// shortened so the last step lands on t.
GaussianMoments integrate_moments(const MomentFlow& flow, double t);
GaussianMoments integrate_moments(const MomentFlow& flow, double t, double dt);

/// rho(t): closed-form covariance, mean by RK4 with the closed-form C(s)
/// inside the mean equation.
GaussianMoments rho_at(const MomentFlow& flow, double t);

/// rho at each of the increasing `times`, integrating the mean once.
std::vector<GaussianMoments> rho_trajectory(const MomentFlow& flow, std::span<const double> times);

/// Largest mean difference between rho_at-style integration at dt_ode and at
/// dt_ode / 2 (Richardson self-check on the mean ODE).
double richardson_gap(const MomentFlow& flow, double t);

struct DecayPoint {
  double t;
  double w2;
};

/// W2(rho(t), posterior) on an increasing grid.
std::vector<DecayPoint> w2_decay_curve(const MomentFlow& flow, std::span<const double> t_grid);

void write_decay_csv(std::ostream& out, std::span<const DecayPoint> curve);

}  // namespace eks
