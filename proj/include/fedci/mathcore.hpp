#pragma once

#include <array>
#include <random>
#include <span>

#include <Eigen/Dense>

namespace fedci::math {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Matrix2 = Eigen::Matrix2d;

inline constexpr double kDefaultJitter = 1e-6;
inline constexpr int kJitterDoublings = 3;

struct CholeskyFactor {
  Matrix lower;
  // Diagonal jitter actually added before the factorization succeeded.
  double jitter = 0.0;

  Eigen::Index dim() const { return lower.rows(); }
  double log_det() const { return 2.0 * lower.diagonal().array().log().sum(); }
  Vector solve(const Vector& b) const;
  Matrix solve(const Matrix& b) const;
};

/// Factor A + jitter*I. On failure the jitter is escalated from
/// max(jitter, 1e-6) by doubling at most three times before giving up with
/// NotPositiveDefinite.
CholeskyFactor cholesky(const Matrix& a, double jitter = 0.0);

double mvn_logpdf(const Vector& y, const Vector& mean, const Matrix& cov, double jitter = 0.0);
double mvn_logpdf(const Vector& y, const Vector& mean, const CholeskyFactor& chol);

/// mean + chol(cov) * base.
Vector mvn_sample(const Vector& mean, const Matrix& cov, const Vector& base, double jitter = 0.0);

/// Fixed randomness for one 2x2 Bartlett draw: chi2(d), chi2(d-1) and N(0,1).
struct BartlettNoise {
  double chi2_first = 1.0;
  double chi2_second = 1.0;
  double normal = 0.0;

  /// Lower-triangular B with B*B' ~ Wishart(I2, d).
  Matrix2 factor() const;

  template <class Rng>
  static BartlettNoise draw(double dof, Rng& rng) {
    std::chi_squared_distribution<double> c1(dof);
    std::chi_squared_distribution<double> c2(dof - 1.0);
    std::normal_distribution<double> z;
    BartlettNoise b;
    b.chi2_first = c1(rng);
    b.chi2_second = c2(rng);
    b.normal = z(rng);
    return b;
  }
};

/// V^{1/2} * zeta * V^{1/2}' where zeta = B*B' is the Bartlett draw held in base.
Matrix2 wishart_sample(const Matrix2& scale, double dof, const BartlettNoise& base);

double kl_gaussian(const Vector& mean_q, const Matrix& cov_q, const Vector& mean_p, const Matrix& cov_p);

/// KL(Wishart(scale_q, dof_q) || Wishart(scale_p, dof_p)) for 2x2 matrices.
double kl_wishart(const Matrix2& scale_q, double dof_q, const Matrix2& scale_p, double dof_p);

/// Log-density of Wishart(scale, dof) at a 2x2 PD matrix.
double wishart_logpdf(const Matrix2& x, const Matrix2& scale, double dof);

double log_multigamma2(double a);
double multidigamma2(double a);

struct MomentVector {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  // Standardized, non-excess (Gaussian = 3).
  double kurtosis = 0.0;

  std::array<double, 4> as_array() const { return {mean, variance, skewness, kurtosis}; }
};

MomentVector moments4(std::span<const double> samples);

}  // namespace fedci::math
