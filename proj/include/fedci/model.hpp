#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fedci/mathcore.hpp"

namespace fedci {

using math::Matrix;
using math::Matrix2;
using math::Vector;

/// Potential outcomes under control and treatment. Only evaluation code reads these.
struct GroundTruth {
  Vector y0;
  Vector y1;
};

/// One source's records. w holds 0/1 as doubles so it can enter elementwise products.
struct SourceData {
  int source_id = 0;
  Vector w;
  Vector y_obs;
  Matrix x;
  std::optional<GroundTruth> truth;
  // Primary keys, used only by the deduplication protocol.
  std::vector<std::string> keys;

  Eigen::Index size() const { return y_obs.size(); }
  Eigen::Index covariate_dim() const { return x.cols(); }
  /// Throws DimensionMismatch / NonBinaryTreatment.
  void validate() const;
  /// Rows selected by index, in the given order.
  SourceData subset(const std::vector<Eigen::Index>& rows) const;
};

/// Per-source sufficient statistics shared with the server.
struct SourceSummary {
  std::vector<math::MomentVector> x_tilde;  // one per covariate column
  math::MomentVector y0_tilde;
  math::MomentVector y1_tilde;
  math::MomentVector w_tilde;

  /// Flattened covariate moments, length 4*d_x.
  Vector x_tilde_flat() const;
  /// [y0_tilde, y1_tilde, x_tilde, w_tilde], length 4*(d_x+3).
  Vector u() const;
};

struct KernelParams {
  double log_lengthscale = 0.0;
  double log_signal_variance = 0.0;

  double lengthscale() const;
  double signal_variance() const;
};

struct AffineFn {
  Vector weights;
  double bias = 0.0;

  double operator()(const Vector& input) const { return weights.dot(input) + bias; }
  /// Evaluate on every row of inputs.
  Vector apply(const Matrix& inputs) const;
  static AffineFn zeros(Eigen::Index dim) { return {Vector::Zero(dim), 0.0}; }
};

struct MeanFnParams {
  AffineFn mu0, mu1;  // on x
  AffineFn r0, r1;    // prior mean of g, on x_tilde
  AffineFn h0, h1;    // variational mean of g, on u
};

/// One scalar per source per arm.
struct LatentG {
  Vector g0;
  Vector g1;
};

struct PriorConfig {
  Matrix2 v0 = 0.5 * Matrix2::Identity();
  Matrix2 s0 = 0.5 * Matrix2::Identity();
  double d0 = 2.0;
  double n0 = 2.0;

  void validate() const;
};

/// Pairwise squared Euclidean distances between rows.
Matrix squared_distances(const Matrix& a, const Matrix& b);

/// Squared-exponential kernel evaluated on precomputed squared distances.
Matrix rbf_from_sqdist(const Matrix& sqdist, const KernelParams& p);

/// alpha^2 exp(-|a-b|^2 / (2 l^2)) for every row pair of a and b.
Matrix rbf_kernel(const Matrix& a, const Matrix& b, const KernelParams& p);

/// Rows are x_tilde of each summary.
Matrix stack_x_tilde(const std::vector<SourceSummary>& summaries);
/// Rows are u of each summary.
Matrix stack_u(const std::vector<SourceSummary>& summaries);

/// Source-level covariance M[s,s'] = gamma(x_tilde^s, x_tilde^s').
Matrix source_gram(const std::vector<SourceSummary>& summaries, const KernelParams& gamma);

/// Phi (x) K + Sigma (x) I over [y(0); y(1)].
Matrix joint_covariance(const Matrix& x, const Matrix2& phi, const Matrix2& sigma, const KernelParams& k);

/// (chol(Phi) (x) I) [mu0(X) + g0; mu1(X) + g1].
Vector joint_mean(const Matrix& x, const Matrix2& phi, double g0, double g1, const MeanFnParams& mp);

struct ObsMisMean {
  Vector obs;
  Vector mis;
};

struct ObsMisKernels {
  Matrix obs;  // Cov(y_obs, y_obs)
  Matrix mis;  // Cov(y_mis, y_mis)
  Matrix om;   // Cov(y_obs_i, y_mis_j)
};

/// Means of observed and missing outcomes given the lower Cholesky factor of Phi.
ObsMisMean obs_mis_mean(const Vector& mu0x, const Vector& mu1x, const Vector& w, const Matrix2& phi_chol,
                        double g0, double g1);

ObsMisMean lemma3_mean(const Matrix& x, const Vector& w, const Matrix2& phi, double g0, double g1,
                       const MeanFnParams& mp);

/// Observed/missing kernel blocks from the base gram matrix K of the source.
ObsMisKernels obs_mis_kernels(const Matrix& gram, const Vector& w, const Matrix2& phi, const Matrix2& sigma);

ObsMisKernels lemma3_kernels(const Matrix& x, const Vector& w, const Matrix2& phi, const Matrix2& sigma,
                             const KernelParams& k);

/// log N(y_obs; mu_obs, K_obs) with the observed blocks built from (Phi, Sigma, g).
double observed_loglik(const SourceData& src, const Matrix2& phi, const Matrix2& sigma, double g0, double g1,
                       const KernelParams& k, const MeanFnParams& mp, double jitter = math::kDefaultJitter);

}  // namespace fedci
