#pragma once

#include "eks/model.hpp"
#include "eks/spd_linalg.hpp"

#include <array>
#include <cstdint>

namespace eks {

/// Standard normal draws addressed by (step, particle, component). A draw is
/// a pure function of its coordinates, so two systems reading the same
/// coordinates see the same Brownian increments.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual double normal(std::uint64_t step, std::uint64_t particle, std::uint64_t component) const = 0;
};

/// Independent families of draws under one seed.
enum class NoiseStream : std::uint32_t {
  StepNoise = 0,
  InitialEnsemble = 1,
  ReferenceDraw = 2,
  Projection = 3,
  DecoupledStepNoise = 4,
};

using PhiloxBlock = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., Random123).
PhiloxBlock philox4x32_10(PhiloxBlock counter, PhiloxKey key) noexcept;

/// Inverse of the standard normal CDF by Acklam's rational approximation
/// (central region |p - 1/2| <= 0.47575 plus two tail branches, relative
/// error below 1.15e-9). Uses only sqrt and log, with no refinement step.
double normal_quantile(double p) noexcept;

/// SplitMix64 finalizer, used to derive per-cell seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) noexcept;

/// Counter-based generator: key = seed, counter = (component, particle, step,
/// stream). Normal draws are normal_quantile of a 53-bit uniform in (0, 1).
class CounterNoise final : public NoiseSource {
 public:
  explicit CounterNoise(std::uint64_t seed, NoiseStream stream = NoiseStream::StepNoise) noexcept
      : seed_(seed), stream_(stream) {}

  double uniform(std::uint64_t step, std::uint64_t particle, std::uint64_t component) const noexcept;
  double normal(std::uint64_t step, std::uint64_t particle, std::uint64_t component) const override;

  std::uint64_t seed() const noexcept { return seed_; }
  NoiseStream stream() const noexcept { return stream_; }

 private:
  std::uint64_t seed_;
  NoiseStream stream_;
};

class ZeroNoise final : public NoiseSource {
 public:
  double normal(std::uint64_t, std::uint64_t, std::uint64_t) const override { return 0.0; }
};

/// J particles x_j = mean + sqrt(cov) z_j with z_j read at (step, j, .).
Matrix draw_gaussian_particles(const GaussianMoments& g, Eigen::Index count, const NoiseSource& noise,
                               std::uint64_t step = 0, double sqrt_tol = kDefaultSqrtTol);

}  // namespace eks
