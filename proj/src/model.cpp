#include "fedci/model.hpp"

#include <cmath>
#include <string>

#include "fedci/error.hpp"

namespace fedci {

void SourceData::validate() const {
  const auto n = y_obs.size();
  if (w.size() != n || x.rows() != n) {
    throw Error(ErrorKind::DimensionMismatch, "source " + std::to_string(source_id) + ": w has " +
                                                  std::to_string(w.size()) + " rows, y_obs " + std::to_string(n) +
                                                  ", X " + std::to_string(x.rows()));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (w[i] != 0.0 && w[i] != 1.0) {
      throw Error(ErrorKind::NonBinaryTreatment,
                  "source " + std::to_string(source_id) + " row " + std::to_string(i) + ": w=" + std::to_string(w[i]));
    }
  }
  if (truth && (truth->y0.size() != n || truth->y1.size() != n)) {
    throw Error(ErrorKind::DimensionMismatch, "source " + std::to_string(source_id) + ": truth length mismatch");
  }
  if (!keys.empty() && static_cast<Eigen::Index>(keys.size()) != n) {
    throw Error(ErrorKind::DimensionMismatch, "source " + std::to_string(source_id) + ": key count mismatch");
  }
}

SourceData SourceData::subset(const std::vector<Eigen::Index>& rows) const {
  SourceData out;
  out.source_id = source_id;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.w.resize(n);
  out.y_obs.resize(n);
  out.x.resize(n, x.cols());
  if (truth) out.truth = GroundTruth{Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= size()) {
      throw Error(ErrorKind::IndexOutOfRange, "row " + std::to_string(r) + " outside source of size " +
                                                  std::to_string(size()));
    }
    out.w[i] = w[r];
    out.y_obs[i] = y_obs[r];
    out.x.row(i) = x.row(r);
    if (truth) {
      out.truth->y0[i] = truth->y0[r];
      out.truth->y1[i] = truth->y1[r];
    }
    if (!keys.empty()) out.keys.push_back(keys[static_cast<std::size_t>(r)]);
  }
  return out;
}

namespace {

void append(Vector& out, Eigen::Index& pos, const math::MomentVector& m) {
  for (double v : m.as_array()) out[pos++] = v;
}

}  // namespace

Vector SourceSummary::x_tilde_flat() const {
  Vector out(static_cast<Eigen::Index>(4 * x_tilde.size()));
  Eigen::Index pos = 0;
  for (const auto& m : x_tilde) append(out, pos, m);
  return out;
}

Vector SourceSummary::u() const {
  Vector out(static_cast<Eigen::Index>(4 * (x_tilde.size() + 3)));
  Eigen::Index pos = 0;
  append(out, pos, y0_tilde);
  append(out, pos, y1_tilde);
  for (const auto& m : x_tilde) append(out, pos, m);
  append(out, pos, w_tilde);
  return out;
}

double KernelParams::lengthscale() const { return std::exp(log_lengthscale); }
double KernelParams::signal_variance() const { return std::exp(log_signal_variance); }

Vector AffineFn::apply(const Matrix& inputs) const {
  if (inputs.cols() != weights.size()) {
    throw Error(ErrorKind::DimensionMismatch, "affine weights have dimension " + std::to_string(weights.size()) +
                                                  ", inputs " + std::to_string(inputs.cols()));
  }
  return (inputs * weights).array() + bias;
}

void PriorConfig::validate() const {
  if (!(d0 >= 2.0) || !(n0 >= 2.0)) {
    throw Error(ErrorKind::InvalidDegreesOfFreedom, "prior degrees of freedom must be >= 2");
  }
  math::cholesky(v0);
  math::cholesky(s0);
}

Matrix squared_distances(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "kernel inputs have " + std::to_string(a.cols()) + " and " +
                                                  std::to_string(b.cols()) + " columns");
  }
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j) {
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      d(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    }
  }
  return d;
}

Matrix rbf_from_sqdist(const Matrix& sqdist, const KernelParams& p) {
  const double l2 = std::exp(2.0 * p.log_lengthscale);
  return p.signal_variance() * (-sqdist.array() / (2.0 * l2)).exp();
}

Matrix rbf_kernel(const Matrix& a, const Matrix& b, const KernelParams& p) {
  return rbf_from_sqdist(squared_distances(a, b), p);
}

Matrix stack_x_tilde(const std::vector<SourceSummary>& summaries) {
  if (summaries.empty()) throw Error(ErrorKind::InsufficientData, "no source summaries");
  const auto width = static_cast<Eigen::Index>(4 * summaries.front().x_tilde.size());
  Matrix out(static_cast<Eigen::Index>(summaries.size()), width);
  for (std::size_t s = 0; s < summaries.size(); ++s) {
    Vector row = summaries[s].x_tilde_flat();
    if (row.size() != width) throw Error(ErrorKind::DimensionMismatch, "summaries disagree on covariate dimension");
    out.row(static_cast<Eigen::Index>(s)) = row.transpose();
  }
  return out;
}

Matrix stack_u(const std::vector<SourceSummary>& summaries) {
  if (summaries.empty()) throw Error(ErrorKind::InsufficientData, "no source summaries");
  const auto width = static_cast<Eigen::Index>(4 * (summaries.front().x_tilde.size() + 3));
  Matrix out(static_cast<Eigen::Index>(summaries.size()), width);
  for (std::size_t s = 0; s < summaries.size(); ++s) {
    Vector row = summaries[s].u();
    if (row.size() != width) throw Error(ErrorKind::DimensionMismatch, "summaries disagree on covariate dimension");
    out.row(static_cast<Eigen::Index>(s)) = row.transpose();
  }
  return out;
}

Matrix source_gram(const std::vector<SourceSummary>& summaries, const KernelParams& gamma) {
  Matrix xt = stack_x_tilde(summaries);
  return rbf_kernel(xt, xt, gamma);
}

Matrix joint_covariance(const Matrix& x, const Matrix2& phi, const Matrix2& sigma, const KernelParams& k) {
  const Matrix gram = rbf_kernel(x, x, k);
  const auto n = x.rows();
  Matrix out(2 * n, 2 * n);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      out.block(a * n, b * n, n, n) = phi(a, b) * gram;
      out.block(a * n, b * n, n, n).diagonal().array() += sigma(a, b);
    }
  }
  return out;
}

Vector joint_mean(const Matrix& x, const Matrix2& phi, double g0, double g1, const MeanFnParams& mp) {
  const Matrix2 l = math::cholesky(phi).lower;
  const auto n = x.rows();
  Vector f0 = mp.mu0.apply(x).array() + g0;
  Vector f1 = mp.mu1.apply(x).array() + g1;
  Vector out(2 * n);
  out.head(n) = l(0, 0) * f0;
  out.tail(n) = l(1, 0) * f0 + l(1, 1) * f1;
  return out;
}

ObsMisMean obs_mis_mean(const Vector& mu0x, const Vector& mu1x, const Vector& w, const Matrix2& phi_chol,
                        double g0, double g1) {
  const auto n = w.size();
  if (mu0x.size() != n || mu1x.size() != n) {
    throw Error(ErrorKind::DimensionMismatch, "mean vectors and treatment disagree");
  }
  Vector f0 = mu0x.array() + g0;
  Vector m0 = phi_chol(0, 0) * f0;
  Vector m1 = phi_chol(1, 0) * f0 + phi_chol(1, 1) * (mu1x.array() + g1).matrix();
  ObsMisMean out;
  out.obs = (1.0 - w.array()) * m0.array() + w.array() * m1.array();
  out.mis = w.array() * m0.array() + (1.0 - w.array()) * m1.array();
  return out;
}

ObsMisMean lemma3_mean(const Matrix& x, const Vector& w, const Matrix2& phi, double g0, double g1,
                       const MeanFnParams& mp) {
  return obs_mis_mean(mp.mu0.apply(x), mp.mu1.apply(x), w, math::cholesky(phi).lower, g0, g1);
}

ObsMisKernels obs_mis_kernels(const Matrix& gram, const Vector& w, const Matrix2& phi, const Matrix2& sigma) {
  const auto n = w.size();
  if (gram.rows() != n || gram.cols() != n) {
    throw Error(ErrorKind::DimensionMismatch, "gram matrix and treatment disagree");
  }
  ObsMisKernels out{Matrix(n, n), Matrix(n, n), Matrix(n, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const int oj = static_cast<int>(w[j]);
    const int mj = 1 - oj;
    for (Eigen::Index i = 0; i < n; ++i) {
      const int oi = static_cast<int>(w[i]);
      const int mi = 1 - oi;
      const double k = gram(i, j);
      out.obs(i, j) = phi(oi, oj) * k;
      out.mis(i, j) = phi(mi, mj) * k;
      out.om(i, j) = phi(oi, mj) * k;
    }
    out.obs(j, j) += sigma(oj, oj);
    out.mis(j, j) += sigma(mj, mj);
    out.om(j, j) += sigma(oj, mj);
  }
  return out;
}

ObsMisKernels lemma3_kernels(const Matrix& x, const Vector& w, const Matrix2& phi, const Matrix2& sigma,
                             const KernelParams& k) {
  return obs_mis_kernels(rbf_kernel(x, x, k), w, phi, sigma);
}

double observed_loglik(const SourceData& src, const Matrix2& phi, const Matrix2& sigma, double g0, double g1,
                       const KernelParams& k, const MeanFnParams& mp, double jitter) {
  src.validate();
  const ObsMisMean mean = lemma3_mean(src.x, src.w, phi, g0, g1, mp);
  const Matrix gram = rbf_kernel(src.x, src.x, k);
  const auto n = src.size();
  Matrix kobs(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const int oj = static_cast<int>(src.w[j]);
    for (Eigen::Index i = 0; i < n; ++i) {
      kobs(i, j) = phi(static_cast<int>(src.w[i]), oj) * gram(i, j);
    }
    kobs(j, j) += sigma(oj, oj);
  }
  return math::mvn_logpdf(src.y_obs, mean.obs, kobs, jitter);
}

}  // namespace fedci
