#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedci/mathcore.hpp"
#include "fedci/model.hpp"

namespace fedci {

/// Unconstrained variational scalars for the scale matrices of q(Phi) and q(Sigma).
/// nu_i, delta_i = exp(.), rho, eta = sigmoid(.).
struct VariationalScalars {
  double log_nu1 = 0.0;
  double log_nu2 = 0.0;
  double logit_rho = 0.0;
  double log_delta1 = 0.0;
  double log_delta2 = 0.0;
  double logit_eta = 0.0;

  Matrix2 v_q() const;
  Matrix2 s_q() const;
  /// Closed-form lower Cholesky factors of v_q() and s_q().
  Matrix2 v_q_chol() const;
  Matrix2 s_q_chol() const;
};

struct VariationalConfig {
  double d_q = 5.0;
  double n_q = 5.0;
  double jitter = math::kDefaultJitter;

  void validate() const;
};

/// Offsets of each parameter group inside the flat parameter vector.
struct ParamLayout {
  Eigen::Index d_x = 0;
  Eigen::Index k = 0;
  Eigen::Index gamma = 0;
  Eigen::Index mu0 = 0;
  Eigen::Index mu1 = 0;
  Eigen::Index r0 = 0;
  Eigen::Index r1 = 0;
  Eigen::Index h0 = 0;
  Eigen::Index h1 = 0;
  Eigen::Index variational = 0;
  Eigen::Index kappa = 0;
  Eigen::Index size = 0;

  explicit ParamLayout(Eigen::Index covariate_dim = 0);

  Eigen::Index x_tilde_dim() const { return 4 * d_x; }
  Eigen::Index u_dim() const { return 4 * (d_x + 3); }
  /// Human-readable name of coordinate i, e.g. "mu0.w[3]".
  std::string name(Eigen::Index i) const;
};

/// Unpacked view of the global parameter vector.
struct ModelParams {
  KernelParams k;
  KernelParams gamma;
  MeanFnParams means;
  VariationalScalars var;
  KernelParams kappa;
};

Vector flatten(const ParamLayout& layout, const ModelParams& p);
ModelParams unflatten(const ParamLayout& layout, const Vector& theta);

/// Starting point: zero mean functions, unit-scale kernels, unit diagonals of E[Phi] and E[Sigma].
ModelParams initial_params(const ParamLayout& layout, const VariationalConfig& vcfg);

/// Base randomness for one Monte Carlo replicate.
struct NoiseBundle {
  Vector xi0;
  Vector xi1;
  math::BartlettNoise phi;
  math::BartlettNoise sigma;
};

/// Deterministic set of bundles for m sources.
std::vector<NoiseBundle> make_noise(std::uint64_t seed, int count, Eigen::Index m, const VariationalConfig& vcfg);

/// Read-only state every participant may hold: summaries, priors and configuration.
struct SharedContext {
  std::vector<SourceSummary> summaries;
  Matrix x_tilde;
  Matrix u;
  Matrix x_tilde_sqdist;
  Matrix u_sqdist;
  PriorConfig priors;
  VariationalConfig vcfg;
  ParamLayout layout;
  bool ablate_g = false;

  SharedContext(std::vector<SourceSummary> summaries, PriorConfig priors, VariationalConfig vcfg, bool ablate_g);

  Eigen::Index m() const { return static_cast<Eigen::Index>(summaries.size()); }
};

struct QSample {
  Matrix2 phi;
  Matrix2 sigma;
  Matrix2 phi_chol;
  Matrix2 sigma_chol;
  LatentG g;
};

/// Reparameterized draw of (Phi, Sigma, g) from q. With ablate_g the latent g is zero.
QSample q_sample(const ModelParams& p, const SharedContext& ctx, const NoiseBundle& noise);

/// Sum of KL(q(z)||p(z)) over z in {Phi, Sigma, g}; g is skipped under ablation.
/// When grad is non-null the gradient w.r.t. the flat parameters is added to it.
double kl_total(const Vector& theta, const SharedContext& ctx, Vector* grad = nullptr);

/// Per-source term L^s of the decomposable objective. Holds the source's rows
/// and distance cache; never exposes them.
class SourceObjective {
 public:
  SourceObjective(SourceData src, Eigen::Index source_index, std::shared_ptr<const SharedContext> ctx);

  /// Monte Carlo average of log p(y_obs | .) over the bundles.
  double expected_loglik(const Vector& theta, std::span<const NoiseBundle> noise, Vector* grad = nullptr) const;

  /// expected_loglik - KL/m.
  double elbo(const Vector& theta, std::span<const NoiseBundle> noise, Vector* grad = nullptr) const;

  Eigen::Index source_index() const { return index_; }
  int source_id() const { return src_.source_id; }
  const SharedContext& context() const { return *ctx_; }

 private:
  SourceData src_;
  Eigen::Index index_;
  std::shared_ptr<const SharedContext> ctx_;
  Matrix sqdist_;
};

double elbo_source(const SourceData& src, Eigen::Index source_index, std::shared_ptr<const SharedContext> ctx,
                   const Vector& theta, std::span<const NoiseBundle> noise);

/// Sum of per-source terms in ascending source order.
double elbo_total(std::span<const SourceObjective> sources, const Vector& theta, std::span<const NoiseBundle> noise);

/// Pooled objective computed in one place: sum of expected log-likelihoods minus the KL once.
double elbo_centralized(std::span<const SourceObjective> sources, const Vector& theta,
                        std::span<const NoiseBundle> noise, Vector* grad = nullptr);

/// Central finite differences with step eps*max(1,|theta_i|).
Vector grad_fd(const std::function<double(const Vector&)>& loss, const Vector& theta, double eps = 1e-5);

}  // namespace fedci
