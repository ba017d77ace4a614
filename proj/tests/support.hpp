#pragma once

#include "eks/spd_linalg.hpp"

#include <random>

namespace testing {

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}

  double normal() { return std::normal_distribution<double>()(gen); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(gen); }

  eks::Vector vector(Eigen::Index n) {
    eks::Vector v(n);
    for (auto& x : v) x = normal();
    return v;
  }
  eks::Matrix matrix(Eigen::Index r, Eigen::Index c) {
    eks::Matrix m(r, c);
    for (Eigen::Index j = 0; j < c; ++j) m.col(j) = vector(r);
    return m;
  }
  eks::SymMatrix spd(Eigen::Index n, double floor = 0.5) {
    const eks::Matrix g = matrix(n, n);
    return eks::SymMatrix(g * g.transpose() / static_cast<double>(n) + floor * eks::Matrix::Identity(n, n));
  }
};

inline double max_abs(const eks::Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

}  // namespace testing
