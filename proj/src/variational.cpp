#include "fedci/variational.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "fedci/error.hpp"

namespace fedci {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix2 scale_matrix(double a, double b, double corr) {
  Matrix2 v;
  v << a * a, corr * a * b, corr * a * b, b * b;
  return v;
}

Matrix2 scale_chol(double a, double b, double corr) {
  Matrix2 l;
  l << a, 0.0, corr * b, b * std::sqrt(1.0 - corr * corr);
  return l;
}

// Chain d/dL (lower 2x2 factor of the scale matrix) back to the unconstrained
// (log a, log b, logit corr) triple.
void chol_to_scalars(const Matrix2& d_chol, double log_a, double log_b, double logit_corr, double* out) {
  const double a = std::exp(log_a);
  const double b = std::exp(log_b);
  const double c = sigmoid(logit_corr);
  const double s = std::sqrt(1.0 - c * c);
  const double da = d_chol(0, 0);
  const double db = d_chol(1, 0) * c + d_chol(1, 1) * s;
  const double dc = d_chol(1, 0) * b - d_chol(1, 1) * b * c / s;
  out[0] += a * da;
  out[1] += b * db;
  out[2] += c * (1.0 - c) * dc;
}

// d/d(log a, log b, logit corr) of a function of the scale matrix with symmetric gradient g.
void scale_to_scalars(const Matrix2& g, double log_a, double log_b, double logit_corr, double* out) {
  const double a = std::exp(log_a);
  const double b = std::exp(log_b);
  const double c = sigmoid(logit_corr);
  const double da = 2.0 * a * g(0, 0) + c * b * (g(0, 1) + g(1, 0));
  const double db = 2.0 * b * g(1, 1) + c * a * (g(0, 1) + g(1, 0));
  const double dc = a * b * (g(0, 1) + g(1, 0));
  out[0] += a * da;
  out[1] += b * db;
  out[2] += c * (1.0 - c) * dc;
}

// Gradient of the KL between Wishart(V_q(scalars), dof_q) and the prior.
double wishart_kl_with_grad(const Matrix2& v_q, double dof_q, const Matrix2& v_0, double dof_0, Matrix2* grad_vq) {
  const double kl = math::kl_wishart(v_q, dof_q, v_0, dof_0);
  if (grad_vq) *grad_vq = -0.5 * dof_0 * v_q.inverse() + 0.5 * dof_q * v_0.inverse();
  return kl;
}

void add_affine_grad(Vector& grad, Eigen::Index offset, const Vector& input, double scale) {
  const auto d = input.size();
  grad.segment(offset, d) += scale * input;
  grad[offset + d] += scale;
}

AffineFn read_affine(const Vector& theta, Eigen::Index offset, Eigen::Index dim) {
  return {theta.segment(offset, dim), theta[offset + dim]};
}

void write_affine(Vector& theta, Eigen::Index offset, const AffineFn& f) {
  theta.segment(offset, f.weights.size()) = f.weights;
  theta[offset + f.weights.size()] = f.bias;
}

// dK/dlog_lengthscale given K and the squared distances.
Matrix rbf_dlog_lengthscale(const Matrix& kmat, const Matrix& sqdist, const KernelParams& p) {
  const double l2 = std::exp(2.0 * p.log_lengthscale);
  return kmat.array() * sqdist.array() / l2;
}

// Forward-mode derivative of the Cholesky factor: dL = L * lowerhalf(L^-1 dA L^-T).
Matrix chol_derivative(const Matrix& l, const Matrix& da) {
  Matrix t = l.triangularView<Eigen::Lower>().solve(da);
  t = l.triangularView<Eigen::Lower>().solve(t.transpose()).transpose();
  Matrix phi = t.triangularView<Eigen::Lower>();
  phi.diagonal() *= 0.5;
  return l * phi;
}

// Shared q(g) quantities for one parameter setting.
struct GState {
  Vector h0, h1;
  Matrix kappa_gram;  // without jitter
  math::CholeskyFactor u_chol;
};

GState make_g_state(const ModelParams& p, const SharedContext& ctx) {
  GState st;
  st.h0 = p.means.h0.apply(ctx.u);
  st.h1 = p.means.h1.apply(ctx.u);
  st.kappa_gram = rbf_from_sqdist(ctx.u_sqdist, p.kappa);
  st.u_chol = math::cholesky(st.kappa_gram, ctx.vcfg.jitter);
  return st;
}

}  // namespace

Matrix2 VariationalScalars::v_q() const {
  return scale_matrix(std::exp(log_nu1), std::exp(log_nu2), sigmoid(logit_rho));
}
Matrix2 VariationalScalars::s_q() const {
  return scale_matrix(std::exp(log_delta1), std::exp(log_delta2), sigmoid(logit_eta));
}
Matrix2 VariationalScalars::v_q_chol() const {
  return scale_chol(std::exp(log_nu1), std::exp(log_nu2), sigmoid(logit_rho));
}
Matrix2 VariationalScalars::s_q_chol() const {
  return scale_chol(std::exp(log_delta1), std::exp(log_delta2), sigmoid(logit_eta));
}

void VariationalConfig::validate() const {
  if (!(d_q >= 2.0) || !(n_q >= 2.0)) {
    throw Error(ErrorKind::InvalidDegreesOfFreedom, "variational degrees of freedom must be >= 2");
  }
  if (!(jitter >= 0.0)) throw Error(ErrorKind::InvalidConfig, "jitter must be >= 0");
}

ParamLayout::ParamLayout(Eigen::Index covariate_dim) : d_x(covariate_dim) {
  Eigen::Index pos = 0;
  k = pos;
  pos += 2;
  gamma = pos;
  pos += 2;
  mu0 = pos;
  pos += d_x + 1;
  mu1 = pos;
  pos += d_x + 1;
  r0 = pos;
  pos += x_tilde_dim() + 1;
  r1 = pos;
  pos += x_tilde_dim() + 1;
  h0 = pos;
  pos += u_dim() + 1;
  h1 = pos;
  pos += u_dim() + 1;
  variational = pos;
  pos += 6;
  kappa = pos;
  pos += 2;
  size = pos;
}

std::string ParamLayout::name(Eigen::Index i) const {
  auto kernel = [](const char* base, Eigen::Index j) {
    return std::string(base) + (j == 0 ? ".log_lengthscale" : ".log_signal_variance");
  };
  auto affine = [](const char* base, Eigen::Index j, Eigen::Index dim) {
    if (j == dim) return std::string(base) + ".bias";
    return std::string(base) + ".w[" + std::to_string(j) + "]";
  };
  static const char* kVar[] = {"log_nu1", "log_nu2", "logit_rho", "log_delta1", "log_delta2", "logit_eta"};
  if (i < 0 || i >= size) return "out_of_range";
  if (i < gamma) return kernel("k", i - k);
  if (i < mu0) return kernel("gamma", i - gamma);
  if (i < mu1) return affine("mu0", i - mu0, d_x);
  if (i < r0) return affine("mu1", i - mu1, d_x);
  if (i < r1) return affine("r0", i - r0, x_tilde_dim());
  if (i < h0) return affine("r1", i - r1, x_tilde_dim());
  if (i < h1) return affine("h0", i - h0, u_dim());
  if (i < variational) return affine("h1", i - h1, u_dim());
  if (i < kappa) return kVar[i - variational];
  return kernel("kappa", i - kappa);
}

Vector flatten(const ParamLayout& layout, const ModelParams& p) {
  Vector theta = Vector::Zero(layout.size);
  theta[layout.k] = p.k.log_lengthscale;
  theta[layout.k + 1] = p.k.log_signal_variance;
  theta[layout.gamma] = p.gamma.log_lengthscale;
  theta[layout.gamma + 1] = p.gamma.log_signal_variance;
  write_affine(theta, layout.mu0, p.means.mu0);
  write_affine(theta, layout.mu1, p.means.mu1);
  write_affine(theta, layout.r0, p.means.r0);
  write_affine(theta, layout.r1, p.means.r1);
  write_affine(theta, layout.h0, p.means.h0);
  write_affine(theta, layout.h1, p.means.h1);
  const auto v = layout.variational;
  theta[v] = p.var.log_nu1;
  theta[v + 1] = p.var.log_nu2;
  theta[v + 2] = p.var.logit_rho;
  theta[v + 3] = p.var.log_delta1;
  theta[v + 4] = p.var.log_delta2;
  theta[v + 5] = p.var.logit_eta;
  theta[layout.kappa] = p.kappa.log_lengthscale;
  theta[layout.kappa + 1] = p.kappa.log_signal_variance;
  return theta;
}

ModelParams unflatten(const ParamLayout& layout, const Vector& theta) {
  if (theta.size() != layout.size) {
    throw Error(ErrorKind::DimensionMismatch, "parameter vector has " + std::to_string(theta.size()) +
                                                  " entries, layout expects " + std::to_string(layout.size));
  }
  ModelParams p;
  p.k = {theta[layout.k], theta[layout.k + 1]};
  p.gamma = {theta[layout.gamma], theta[layout.gamma + 1]};
  p.means.mu0 = read_affine(theta, layout.mu0, layout.d_x);
  p.means.mu1 = read_affine(theta, layout.mu1, layout.d_x);
  p.means.r0 = read_affine(theta, layout.r0, layout.x_tilde_dim());
  p.means.r1 = read_affine(theta, layout.r1, layout.x_tilde_dim());
  p.means.h0 = read_affine(theta, layout.h0, layout.u_dim());
  p.means.h1 = read_affine(theta, layout.h1, layout.u_dim());
  const auto v = layout.variational;
  p.var = {theta[v], theta[v + 1], theta[v + 2], theta[v + 3], theta[v + 4], theta[v + 5]};
  p.kappa = {theta[layout.kappa], theta[layout.kappa + 1]};
  return p;
}

ModelParams initial_params(const ParamLayout& layout, const VariationalConfig& vcfg) {
  ModelParams p;
  p.k = {0.5 * std::log(static_cast<double>(std::max<Eigen::Index>(layout.d_x, 1))), 0.0};
  p.gamma = {0.0, 0.0};
  p.kappa = {0.0, 0.0};
  p.means.mu0 = AffineFn::zeros(layout.d_x);
  p.means.mu1 = AffineFn::zeros(layout.d_x);
  p.means.r0 = AffineFn::zeros(layout.x_tilde_dim());
  p.means.r1 = AffineFn::zeros(layout.x_tilde_dim());
  p.means.h0 = AffineFn::zeros(layout.u_dim());
  p.means.h1 = AffineFn::zeros(layout.u_dim());
  // E[Wishart(V, d)] = d V, so nu = delta = 1/sqrt(d) gives unit diagonals; rho = eta = 0.5.
  const double log_nu = -0.5 * std::log(vcfg.d_q);
  const double log_delta = -0.5 * std::log(vcfg.n_q);
  p.var = {log_nu, log_nu, 0.0, log_delta, log_delta, 0.0};
  return p;
}

std::vector<NoiseBundle> make_noise(std::uint64_t seed, int count, Eigen::Index m, const VariationalConfig& vcfg) {
  if (count < 1) throw Error(ErrorKind::InvalidConfig, "need at least one noise bundle");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::vector<NoiseBundle> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int c = 0; c < count; ++c) {
    NoiseBundle b;
    b.xi0.resize(m);
    b.xi1.resize(m);
    for (Eigen::Index s = 0; s < m; ++s) b.xi0[s] = z(rng);
    for (Eigen::Index s = 0; s < m; ++s) b.xi1[s] = z(rng);
    b.phi = math::BartlettNoise::draw(vcfg.d_q, rng);
    b.sigma = math::BartlettNoise::draw(vcfg.n_q, rng);
    out.push_back(std::move(b));
  }
  return out;
}

SharedContext::SharedContext(std::vector<SourceSummary> s, PriorConfig p, VariationalConfig v, bool ablate)
    : summaries(std::move(s)), priors(p), vcfg(v), ablate_g(ablate) {
  if (summaries.empty()) throw Error(ErrorKind::InsufficientData, "at least one source is required");
  priors.validate();
  vcfg.validate();
  x_tilde = stack_x_tilde(summaries);
  u = stack_u(summaries);
  x_tilde_sqdist = squared_distances(x_tilde, x_tilde);
  u_sqdist = squared_distances(u, u);
  layout = ParamLayout(static_cast<Eigen::Index>(summaries.front().x_tilde.size()));
}

QSample q_sample(const ModelParams& p, const SharedContext& ctx, const NoiseBundle& noise) {
  QSample q;
  q.phi_chol = p.var.v_q_chol() * noise.phi.factor();
  q.sigma_chol = p.var.s_q_chol() * noise.sigma.factor();
  q.phi = q.phi_chol * q.phi_chol.transpose();
  q.sigma = q.sigma_chol * q.sigma_chol.transpose();
  const auto m = ctx.m();
  if (ctx.ablate_g) {
    q.g = {Vector::Zero(m), Vector::Zero(m)};
    return q;
  }
  if (noise.xi0.size() != m || noise.xi1.size() != m) {
    throw Error(ErrorKind::DimensionMismatch, "noise bundle built for a different number of sources");
  }
  const GState st = make_g_state(p, ctx);
  q.g.g0 = st.h0 + st.u_chol.lower * noise.xi0;
  q.g.g1 = st.h1 + st.u_chol.lower * noise.xi1;
  return q;
}

double kl_total(const Vector& theta, const SharedContext& ctx, Vector* grad) {
  const ParamLayout& layout = ctx.layout;
  const ModelParams p = unflatten(layout, theta);
  const auto v = layout.variational;

  Matrix2 g_phi, g_sigma;
  double kl = wishart_kl_with_grad(p.var.v_q(), ctx.vcfg.d_q, ctx.priors.v0, ctx.priors.d0, grad ? &g_phi : nullptr);
  kl += wishart_kl_with_grad(p.var.s_q(), ctx.vcfg.n_q, ctx.priors.s0, ctx.priors.n0, grad ? &g_sigma : nullptr);
  if (grad) {
    scale_to_scalars(g_phi, p.var.log_nu1, p.var.log_nu2, p.var.logit_rho, grad->data() + v);
    double tmp[3] = {0.0, 0.0, 0.0};
    scale_to_scalars(g_sigma, p.var.log_delta1, p.var.log_delta2, p.var.logit_eta, tmp);
    (*grad)[v + 3] += tmp[0];
    (*grad)[v + 4] += tmp[1];
    (*grad)[v + 5] += tmp[2];
  }
  if (ctx.ablate_g) return kl;

  const auto m = ctx.m();
  const GState st = make_g_state(p, ctx);
  const Matrix gamma_gram = rbf_from_sqdist(ctx.x_tilde_sqdist, p.gamma);
  const math::CholeskyFactor m_chol = math::cholesky(gamma_gram, ctx.vcfg.jitter);
  const Vector r0 = p.means.r0.apply(ctx.x_tilde);
  const Vector r1 = p.means.r1.apply(ctx.x_tilde);

  // Two independent Gaussians N(h_j, U) vs N(r_j, M), j = 0, 1.
  const Matrix a = m_chol.lower.triangularView<Eigen::Lower>().solve(st.u_chol.lower);
  const double trace_term = a.squaredNorm();
  const double logdet_diff = m_chol.log_det() - st.u_chol.log_det();
  const Vector d0 = st.h0 - r0;
  const Vector d1 = st.h1 - r1;
  const Vector minv_d0 = m_chol.solve(d0);
  const Vector minv_d1 = m_chol.solve(d1);
  const double md = static_cast<double>(m);
  kl += 0.5 * (trace_term + d0.dot(minv_d0) - md + logdet_diff);
  kl += 0.5 * (trace_term + d1.dot(minv_d1) - md + logdet_diff);

  if (grad) {
    const Matrix eye = Matrix::Identity(m, m);
    const Matrix minv = m_chol.solve(eye);
    const Matrix uinv = st.u_chol.solve(eye);
    const Matrix u_jit = st.u_chol.lower * st.u_chol.lower.transpose();
    // dKL/dU and dKL/dM summed over both arms.
    const Matrix d_u = minv - uinv;
    const Matrix minv_u_minv = minv * u_jit * minv;
    const Matrix d_m = minv - minv_u_minv - 0.5 * (minv_d0 * minv_d0.transpose() + minv_d1 * minv_d1.transpose());

    for (Eigen::Index s = 0; s < m; ++s) {
      add_affine_grad(*grad, layout.h0, ctx.u.row(s).transpose(), minv_d0[s]);
      add_affine_grad(*grad, layout.h1, ctx.u.row(s).transpose(), minv_d1[s]);
      add_affine_grad(*grad, layout.r0, ctx.x_tilde.row(s).transpose(), -minv_d0[s]);
      add_affine_grad(*grad, layout.r1, ctx.x_tilde.row(s).transpose(), -minv_d1[s]);
    }
    const Matrix du_dls = rbf_dlog_lengthscale(st.kappa_gram, ctx.u_sqdist, p.kappa);
    (*grad)[layout.kappa] += (d_u.array() * du_dls.array()).sum();
    (*grad)[layout.kappa + 1] += (d_u.array() * st.kappa_gram.array()).sum();
    const Matrix dm_dls = rbf_dlog_lengthscale(gamma_gram, ctx.x_tilde_sqdist, p.gamma);
    (*grad)[layout.gamma] += (d_m.array() * dm_dls.array()).sum();
    (*grad)[layout.gamma + 1] += (d_m.array() * gamma_gram.array()).sum();
  }
  return kl;
}

SourceObjective::SourceObjective(SourceData src, Eigen::Index source_index, std::shared_ptr<const SharedContext> ctx)
    : src_(std::move(src)), index_(source_index), ctx_(std::move(ctx)) {
  if (!ctx_) throw Error(ErrorKind::InvalidConfig, "missing shared context");
  src_.validate();
  if (src_.size() < 1) {
    throw Error(ErrorKind::InsufficientData, "source " + std::to_string(src_.source_id) + " has no rows");
  }
  if (index_ < 0 || index_ >= ctx_->m()) {
    throw Error(ErrorKind::IndexOutOfRange, "source index " + std::to_string(index_) + " outside " +
                                                std::to_string(ctx_->m()) + " summaries");
  }
  if (src_.covariate_dim() != ctx_->layout.d_x) {
    throw Error(ErrorKind::DimensionMismatch, "source covariate dimension differs from summaries");
  }
  sqdist_ = squared_distances(src_.x, src_.x);
}

double SourceObjective::expected_loglik(const Vector& theta, std::span<const NoiseBundle> noise, Vector* grad) const {
  if (noise.empty()) throw Error(ErrorKind::InvalidConfig, "empty noise set");
  const SharedContext& ctx = *ctx_;
  const ParamLayout& layout = ctx.layout;
  const ModelParams p = unflatten(layout, theta);
  const auto n = src_.size();
  const auto m = ctx.m();
  const Vector& w = src_.w;
  const Vector& y = src_.y_obs;
  const double jitter = ctx.vcfg.jitter;

  const Matrix gram = rbf_from_sqdist(sqdist_, p.k);
  const Vector mu0x = p.means.mu0.apply(src_.x);
  const Vector mu1x = p.means.mu1.apply(src_.x);
  const Matrix2 lv = p.var.v_q_chol();
  const Matrix2 ls = p.var.s_q_chol();

  GState gst;
  if (!ctx.ablate_g) gst = make_g_state(p, ctx);

  // Accumulators over bundles.
  Matrix2 d_lv = Matrix2::Zero();
  Matrix2 d_ls = Matrix2::Zero();
  Matrix d_lu = Matrix::Zero(m, m);
  Vector d_mu0x = Vector::Zero(n);
  Vector d_mu1x = Vector::Zero(n);
  double d_h0 = 0.0, d_h1 = 0.0;
  double d_k_ls = 0.0, d_k_sv = 0.0;
  Matrix dk_dls;
  if (grad) dk_dls = rbf_dlog_lengthscale(gram, sqdist_, p.k);

  double total = 0.0;
  Matrix kobs(n, n);
  for (const NoiseBundle& b : noise) {
    const Matrix2 bphi = b.phi.factor();
    const Matrix2 bsig = b.sigma.factor();
    const Matrix2 lphi = lv * bphi;
    const Matrix2 lsig = ls * bsig;
    const Matrix2 phi = lphi * lphi.transpose();
    const Matrix2 sigma = lsig * lsig.transpose();
    double g0 = 0.0, g1 = 0.0;
    if (!ctx.ablate_g) {
      if (b.xi0.size() != m || b.xi1.size() != m) {
        throw Error(ErrorKind::DimensionMismatch, "noise bundle built for a different number of sources");
      }
      g0 = gst.h0[index_] + gst.u_chol.lower.row(index_).dot(b.xi0);
      g1 = gst.h1[index_] + gst.u_chol.lower.row(index_).dot(b.xi1);
    }

    for (Eigen::Index j = 0; j < n; ++j) {
      const int oj = static_cast<int>(w[j]);
      for (Eigen::Index i = 0; i < n; ++i) kobs(i, j) = phi(static_cast<int>(w[i]), oj) * gram(i, j);
      kobs(j, j) += sigma(oj, oj);
    }
    const ObsMisMean mean = obs_mis_mean(mu0x, mu1x, w, lphi, g0, g1);
    const math::CholeskyFactor chol = math::cholesky(kobs, jitter);
    const Vector resid = y - mean.obs;
    const Vector alpha = chol.solve(resid);
    const double ll = -0.5 * resid.dot(alpha) - 0.5 * chol.log_det() - 0.5 * static_cast<double>(n) * kLog2Pi;
    if (!std::isfinite(ll)) {
      throw Error(ErrorKind::NonFiniteLoss, "log-likelihood of source " + std::to_string(src_.source_id));
    }
    total += ll;
    if (!grad) continue;

    // dLL/dK = 0.5 (alpha alpha' - K^-1)
    Matrix gk = chol.solve(Matrix(Matrix::Identity(n, n)));
    gk = 0.5 * (alpha * alpha.transpose() - gk);

    Matrix2 g_phi = Matrix2::Zero();
    Matrix2 g_sig = Matrix2::Zero();
    for (Eigen::Index j = 0; j < n; ++j) {
      const int oj = static_cast<int>(w[j]);
      for (Eigen::Index i = 0; i < n; ++i) {
        const int oi = static_cast<int>(w[i]);
        const double gw = gk(i, j) * gram(i, j);
        g_phi(oi, oj) += gw;
        const double weight = gk(i, j) * phi(oi, oj);
        d_k_sv += weight * gram(i, j);
        d_k_ls += weight * dk_dls(i, j);
      }
      g_sig(oj, oj) += gk(j, j);
    }

    // Mean path: m0 = L00 f0, m1 = L10 f0 + L11 f1.
    Matrix2 d_lphi = Matrix2::Zero();
    double dg0 = 0.0, dg1 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double a = alpha[i];
      const double f0 = mu0x[i] + g0;
      if (w[i] == 0.0) {
        d_lphi(0, 0) += a * f0;
        d_mu0x[i] += a * lphi(0, 0);
        dg0 += a * lphi(0, 0);
      } else {
        const double f1 = mu1x[i] + g1;
        d_lphi(1, 0) += a * f0;
        d_lphi(1, 1) += a * f1;
        d_mu0x[i] += a * lphi(1, 0);
        d_mu1x[i] += a * lphi(1, 1);
        dg0 += a * lphi(1, 0);
        dg1 += a * lphi(1, 1);
      }
    }
    // Covariance path through Phi = L L'.
    Matrix2 via_phi = (g_phi + g_phi.transpose()) * lphi;
    via_phi(0, 1) = 0.0;
    d_lphi += via_phi;
    Matrix2 d_lsig = 2.0 * g_sig * lsig;
    d_lsig(0, 1) = 0.0;

    // L = L_scale * B, so dL_scale = dL * B'.
    Matrix2 t = d_lphi * bphi.transpose();
    t(0, 1) = 0.0;
    d_lv += t;
    t = d_lsig * bsig.transpose();
    t(0, 1) = 0.0;
    d_ls += t;

    if (!ctx.ablate_g) {
      d_h0 += dg0;
      d_h1 += dg1;
      d_lu.row(index_) += dg0 * b.xi0.transpose() + dg1 * b.xi1.transpose();
    }
  }

  const double inv = 1.0 / static_cast<double>(noise.size());
  if (grad) {
    Vector& g = *grad;
    g[layout.k] += inv * d_k_ls;
    g[layout.k + 1] += inv * d_k_sv;
    d_mu0x *= inv;
    d_mu1x *= inv;
    g.segment(layout.mu0, layout.d_x) += src_.x.transpose() * d_mu0x;
    g[layout.mu0 + layout.d_x] += d_mu0x.sum();
    g.segment(layout.mu1, layout.d_x) += src_.x.transpose() * d_mu1x;
    g[layout.mu1 + layout.d_x] += d_mu1x.sum();
    const auto v = layout.variational;
    chol_to_scalars(inv * d_lv, p.var.log_nu1, p.var.log_nu2, p.var.logit_rho, g.data() + v);
    chol_to_scalars(inv * d_ls, p.var.log_delta1, p.var.log_delta2, p.var.logit_eta, g.data() + v + 3);
    if (!ctx.ablate_g) {
      const Vector us = ctx.u.row(index_).transpose();
      add_affine_grad(g, layout.h0, us, inv * d_h0);
      add_affine_grad(g, layout.h1, us, inv * d_h1);
      d_lu *= inv;
      const Matrix& lu = gst.u_chol.lower;
      const Matrix du_dls = rbf_dlog_lengthscale(gst.kappa_gram, ctx.u_sqdist, p.kappa);
      g[layout.kappa] += (d_lu.array() * chol_derivative(lu, du_dls).array()).sum();
      g[layout.kappa + 1] += (d_lu.array() * chol_derivative(lu, gst.kappa_gram).array()).sum();
    }
  }
  return inv * total;
}

double SourceObjective::elbo(const Vector& theta, std::span<const NoiseBundle> noise, Vector* grad) const {
  const double ll = expected_loglik(theta, noise, grad);
  const double inv_m = 1.0 / static_cast<double>(ctx_->m());
  double kl = 0.0;
  if (grad) {
    Vector kl_grad = Vector::Zero(theta.size());
    kl = kl_total(theta, *ctx_, &kl_grad);
    *grad -= inv_m * kl_grad;
  } else {
    kl = kl_total(theta, *ctx_);
  }
  const double value = ll - inv_m * kl;
  if (!std::isfinite(value)) {
    throw Error(ErrorKind::NonFiniteLoss, "ELBO term of source " + std::to_string(src_.source_id));
  }
  return value;
}

double elbo_source(const SourceData& src, Eigen::Index source_index, std::shared_ptr<const SharedContext> ctx,
                   const Vector& theta, std::span<const NoiseBundle> noise) {
  return SourceObjective(src, source_index, std::move(ctx)).elbo(theta, noise);
}

double elbo_total(std::span<const SourceObjective> sources, const Vector& theta, std::span<const NoiseBundle> noise) {
  double total = 0.0;
  for (const auto& s : sources) total += s.elbo(theta, noise);
  return total;
}

double elbo_centralized(std::span<const SourceObjective> sources, const Vector& theta,
                        std::span<const NoiseBundle> noise, Vector* grad) {
  if (sources.empty()) throw Error(ErrorKind::InsufficientData, "no sources");
  const SharedContext& ctx = sources.front().context();
  double total = 0.0;
  for (const auto& s : sources) total += s.expected_loglik(theta, noise, grad);
  if (grad) {
    Vector kl_grad = Vector::Zero(theta.size());
    total -= kl_total(theta, ctx, &kl_grad);
    *grad -= kl_grad;
  } else {
    total -= kl_total(theta, ctx);
  }
  return total;
}

Vector grad_fd(const std::function<double(const Vector&)>& loss, const Vector& theta, double eps) {
  Vector grad(theta.size());
  Vector probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double h = eps * std::max(1.0, std::abs(theta[i]));
    probe[i] = theta[i] + h;
    const double up = loss(probe);
    probe[i] = theta[i] - h;
    const double down = loss(probe);
    probe[i] = theta[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw Error(ErrorKind::NonFiniteLoss, "loss not finite while differencing coordinate " + std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

}  // namespace fedci
