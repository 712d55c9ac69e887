#pragma once

#include <random>

#include <Eigen/Dense>

#include "fedci/model.hpp"

namespace fedci::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix out(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) out(i, j) = u(rng);
  return out;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index n, double lo = -1.0, double hi = 1.0) {
  return random_matrix(rng, n, 1, lo, hi);
}

/// Random symmetric positive definite matrix A A' + floor*I.
inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, double floor = 0.5) {
  Matrix a = random_matrix(rng, n, n);
  Matrix out = a * a.transpose();
  out.diagonal().array() += floor;
  return out;
}

inline Vector random_treatment(std::mt19937_64& rng, Eigen::Index n) {
  std::bernoulli_distribution b(0.5);
  Vector w(n);
  for (Eigen::Index i = 0; i < n; ++i) w[i] = b(rng) ? 1.0 : 0.0;
  return w;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace fedci::testing
