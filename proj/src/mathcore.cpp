#include "fedci/mathcore.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <boost/math/special_functions/digamma.hpp>

#include "fedci/error.hpp"

namespace fedci::math {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + " must be square");
  }
}

bool try_factor(const Matrix& a, double jitter, Matrix& out) {
  Matrix shifted = a;
  shifted.diagonal().array() += jitter;
  Eigen::LLT<Matrix> llt(shifted);
  if (llt.info() != Eigen::Success) return false;
  out = llt.matrixL();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (!(out(i, i) > 0.0) || !std::isfinite(out(i, i))) return false;
  }
  return true;
}

}  // namespace

Vector CholeskyFactor::solve(const Vector& b) const {
  Vector x = lower.triangularView<Eigen::Lower>().solve(b);
  return lower.transpose().triangularView<Eigen::Upper>().solve(x);
}

Matrix CholeskyFactor::solve(const Matrix& b) const {
  Matrix x = lower.triangularView<Eigen::Lower>().solve(b);
  return lower.transpose().triangularView<Eigen::Upper>().solve(x);
}

CholeskyFactor cholesky(const Matrix& a, double jitter) {
  require_square(a, "cholesky input");
  if (jitter < 0.0) throw Error(ErrorKind::InvalidConfig, "negative jitter");
  CholeskyFactor f;
  if (try_factor(a, jitter, f.lower)) {
    f.jitter = jitter;
    return f;
  }
  double j = std::max(jitter, kDefaultJitter);
  for (int attempt = 0; attempt <= kJitterDoublings; ++attempt) {
    if (j != jitter && try_factor(a, j, f.lower)) {
      f.jitter = j;
      return f;
    }
    j *= 2.0;
  }
  throw Error(ErrorKind::NotPositiveDefinite,
              "matrix of dimension " + std::to_string(a.rows()) +
                  " not positive definite after jitter " + std::to_string(j / 2.0));
}

double mvn_logpdf(const Vector& y, const Vector& mean, const CholeskyFactor& chol) {
  if (y.size() != mean.size() || y.size() != chol.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "mvn_logpdf: y, mean and covariance disagree");
  }
  Vector z = chol.lower.triangularView<Eigen::Lower>().solve(y - mean);
  return -0.5 * z.squaredNorm() - 0.5 * chol.log_det() - 0.5 * static_cast<double>(y.size()) * kLog2Pi;
}

double mvn_logpdf(const Vector& y, const Vector& mean, const Matrix& cov, double jitter) {
  if (y.size() != mean.size() || y.size() != cov.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "mvn_logpdf: y, mean and covariance disagree");
  }
  return mvn_logpdf(y, mean, cholesky(cov, jitter));
}

Vector mvn_sample(const Vector& mean, const Matrix& cov, const Vector& base, double jitter) {
  if (mean.size() != cov.rows() || base.size() != mean.size()) {
    throw Error(ErrorKind::DimensionMismatch, "mvn_sample: mean, covariance and base disagree");
  }
  return mean + cholesky(cov, jitter).lower * base;
}

Matrix2 BartlettNoise::factor() const {
  Matrix2 b;
  b << std::sqrt(chi2_first), 0.0, normal, std::sqrt(chi2_second);
  return b;
}

Matrix2 wishart_sample(const Matrix2& scale, double dof, const BartlettNoise& base) {
  if (!(dof >= 2.0)) {
    throw Error(ErrorKind::InvalidDegreesOfFreedom, "wishart dof must be >= 2, got " + std::to_string(dof));
  }
  Matrix2 l = cholesky(scale).lower;
  Matrix2 a = l * base.factor();
  return a * a.transpose();
}

double kl_gaussian(const Vector& mean_q, const Matrix& cov_q, const Vector& mean_p, const Matrix& cov_p) {
  const auto k = mean_q.size();
  if (mean_p.size() != k || cov_q.rows() != k || cov_p.rows() != k || cov_q.cols() != k || cov_p.cols() != k) {
    throw Error(ErrorKind::DimensionMismatch, "kl_gaussian: dimensions disagree");
  }
  CholeskyFactor lq = cholesky(cov_q);
  CholeskyFactor lp = cholesky(cov_p);
  // tr(P^-1 Q) = ||Lp^-1 Lq||_F^2
  Matrix a = lp.lower.triangularView<Eigen::Lower>().solve(lq.lower);
  Vector d = lp.lower.triangularView<Eigen::Lower>().solve(mean_p - mean_q);
  double kl = 0.5 * (a.squaredNorm() + d.squaredNorm() - static_cast<double>(k) + lp.log_det() - lq.log_det());
  return std::max(kl, 0.0);
}

double log_multigamma2(double a) {
  return 0.5 * std::log(std::numbers::pi) + std::lgamma(a) + std::lgamma(a - 0.5);
}

double multidigamma2(double a) {
  return boost::math::digamma(a) + boost::math::digamma(a - 0.5);
}

double kl_wishart(const Matrix2& scale_q, double dof_q, const Matrix2& scale_p, double dof_p) {
  if (!(dof_q > 1.0) || !(dof_p > 1.0)) {
    throw Error(ErrorKind::InvalidDegreesOfFreedom, "kl_wishart requires dof > 1");
  }
  const double logdet_q = cholesky(scale_q).log_det();
  CholeskyFactor lp = cholesky(scale_p);
  const double trace = (lp.solve(Matrix(scale_q))).trace();
  double kl = 0.5 * (dof_q - dof_p) * multidigamma2(0.5 * dof_q) +
              0.5 * dof_p * (lp.log_det() - logdet_q) + 0.5 * dof_q * (trace - 2.0) +
              log_multigamma2(0.5 * dof_p) - log_multigamma2(0.5 * dof_q);
  return std::max(kl, 0.0);
}

double wishart_logpdf(const Matrix2& x, const Matrix2& scale, double dof) {
  if (!(dof > 1.0)) throw Error(ErrorKind::InvalidDegreesOfFreedom, "wishart_logpdf requires dof > 1");
  CholeskyFactor lv = cholesky(scale);
  const double logdet_x = cholesky(x).log_det();
  const double trace = lv.solve(Matrix(x)).trace();
  return 0.5 * (dof - 3.0) * logdet_x - 0.5 * trace - dof * std::log(2.0) - 0.5 * dof * lv.log_det() -
         log_multigamma2(0.5 * dof);
}

MomentVector moments4(std::span<const double> samples) {
  if (samples.size() < 2) {
    throw Error(ErrorKind::InsufficientData, "moments4 needs at least 2 samples, got " + std::to_string(samples.size()));
  }
  const double n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : samples) {
    const double d = v - mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  MomentVector out;
  out.mean = mean;
  out.variance = m2;
  if (m2 >= 1e-12) {
    out.skewness = m3 / std::pow(m2, 1.5);
    out.kurtosis = m4 / (m2 * m2);
  }
  return out;
}

}  // namespace fedci::math
