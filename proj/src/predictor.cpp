#include "fedci/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "fedci/error.hpp"
#include "fedci/rng.hpp"

namespace fedci {

namespace {

// Quantities of a source that do not change across draws.
struct SourceCache {
  Matrix gram;
  Vector mu0x, mu1x;
};

SourceCache make_cache(const SourceData& src, const ModelParams& p) {
  return {rbf_kernel(src.x, src.x, p.k), p.means.mu0.apply(src.x), p.means.mu1.apply(src.x)};
}

MissingConditional conditional_from_cache(const SourceData& src, Eigen::Index source_index, const SourceCache& c,
                                          const QSample& q, double jitter) {
  const double g0 = q.g.g0.size() ? q.g.g0[source_index] : 0.0;
  const double g1 = q.g.g1.size() ? q.g.g1[source_index] : 0.0;
  const ObsMisMean mean = obs_mis_mean(c.mu0x, c.mu1x, src.w, q.phi_chol, g0, g1);
  const ObsMisKernels k = obs_mis_kernels(c.gram, src.w, q.phi, q.sigma);
  const math::CholeskyFactor chol = math::cholesky(k.obs, jitter);
  const auto lower = chol.lower.triangularView<Eigen::Lower>();
  // A = L^-1 K_om, so K_om' K_obs^-1 K_om = A'A.
  const Matrix a = lower.solve(k.om);
  const Vector b = lower.solve(Vector(src.y_obs - mean.obs));
  MissingConditional out;
  out.mean = mean.mis + a.transpose() * b;
  out.cov = k.mis;
  out.cov.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose(), -1.0);
  Matrix full = out.cov.selfadjointView<Eigen::Lower>();
  out.cov = std::move(full);
  return out;
}

// y = mean + P' L sqrt(D) z for cov = P' L D L' P; tolerates singular cov.
template <class Rng>
Vector sample_psd(const MissingConditional& c, Rng& rng) {
  const auto n = c.mean.size();
  Eigen::LDLT<Matrix> ldlt(c.cov);
  if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::NotPositiveDefinite, "conditional covariance");
  std::normal_distribution<double> z;
  Vector v(n);
  const Vector d = ldlt.vectorD();
  for (Eigen::Index i = 0; i < n; ++i) v[i] = std::sqrt(std::max(d[i], 0.0)) * z(rng);
  Vector lv = ldlt.matrixL() * v;
  return c.mean + ldlt.transpositionsP().transpose() * lv;
}

}  // namespace

MissingConditional conditional_missing(const SourceData& src, Eigen::Index source_index, const ModelParams& p,
                                       const QSample& q, double jitter) {
  src.validate();
  return conditional_from_cache(src, source_index, make_cache(src, p), q, jitter);
}

PredictiveDraws predict_missing(const std::vector<SourceData>& sources, const Vector& theta,
                                std::shared_ptr<const SharedContext> ctx, int draws, std::uint64_t seed) {
  if (draws < 1) throw Error(ErrorKind::EmptyDraws, "need at least one predictive draw");
  if (!ctx || ctx->m() != static_cast<Eigen::Index>(sources.size())) {
    throw Error(ErrorKind::DimensionMismatch, "number of summaries differs from number of sources");
  }
  const ModelParams p = unflatten(ctx->layout, theta);
  std::vector<SourceCache> caches;
  PredictiveDraws out;
  for (const auto& src : sources) {
    src.validate();
    if (src.covariate_dim() != ctx->layout.d_x) {
      throw Error(ErrorKind::DimensionMismatch, "source covariate dimension differs from the model");
    }
    caches.push_back(make_cache(src, p));
    out.y_mis.emplace_back(draws, src.size());
  }
  for (int d = 0; d < draws; ++d) {
    const auto du = static_cast<std::uint64_t>(d);
    const auto noise = make_noise(derive_seed(seed, 2 * du), 1, ctx->m(), ctx->vcfg);
    const QSample q = q_sample(p, *ctx, noise.front());
    std::mt19937_64 rng(derive_seed(seed, 2 * du + 1));
    for (std::size_t s = 0; s < sources.size(); ++s) {
      const auto c = conditional_from_cache(sources[s], static_cast<Eigen::Index>(s), caches[s], q, ctx->vcfg.jitter);
      out.y_mis[s].row(d) = sample_psd(c, rng).transpose();
    }
  }
  return out;
}

std::vector<double> ate_draws(const std::vector<SourceData>& sources, const PredictiveDraws& draws,
                              const std::vector<std::size_t>& source_filter) {
  if (draws.draws() < 1) throw Error(ErrorKind::EmptyDraws, "no predictive draws");
  if (draws.y_mis.size() != sources.size()) throw Error(ErrorKind::ShapeMismatch, "draws and sources differ");
  std::vector<std::size_t> use = source_filter;
  if (use.empty()) {
    use.resize(sources.size());
    std::iota(use.begin(), use.end(), 0);
  }
  std::vector<double> out(static_cast<std::size_t>(draws.draws()), 0.0);
  double n = 0.0;
  for (std::size_t s : use) {
    if (s >= sources.size()) throw Error(ErrorKind::IndexOutOfRange, "source filter " + std::to_string(s));
    const auto& src = sources[s];
    if (draws.y_mis[s].cols() != src.size()) throw Error(ErrorKind::ShapeMismatch, "draws and source rows differ");
    const Vector ws = 2.0 * src.w.array() - 1.0;
    for (Eigen::Index d = 0; d < draws.draws(); ++d) {
      out[static_cast<std::size_t>(d)] += ws.dot(src.y_obs - draws.y_mis[s].row(d).transpose());
    }
    n += static_cast<double>(src.size());
  }
  if (n == 0.0) throw Error(ErrorKind::InsufficientData, "no units in the selected sources");
  for (double& v : out) v /= n;
  return out;
}

EffectEstimate estimate_effects(const std::vector<SourceData>& sources, const PredictiveDraws& draws) {
  EffectEstimate est;
  est.ate_draws = ate_draws(sources, draws);
  const double count = static_cast<double>(draws.draws());
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const Matrix& y = draws.y_mis[s];
    const Vector ws = 2.0 * sources[s].w.array() - 1.0;
    const Vector mean = y.colwise().mean().transpose();
    const Vector var = (y.rowwise() - mean.transpose()).colwise().squaredNorm().transpose() / count;
    est.ite_mean.push_back(ws.cwiseProduct(sources[s].y_obs - mean));
    est.ite_var.push_back(ws.cwiseAbs2().cwiseProduct(var));
  }
  const auto& t = est.ate_draws;
  est.ate_mean = std::accumulate(t.begin(), t.end(), 0.0) / count;
  double ss = 0.0;
  for (double v : t) ss += (v - est.ate_mean) * (v - est.ate_mean);
  est.ate_var = ss / count;
  est.interval = {quantile(t, 0.025), quantile(t, 0.975)};
  return est;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorKind::EmptyDraws, "quantile of no values");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Histogram ate_distribution(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorKind::EmptyDraws, "no ATE draws");
  Histogram h;
  const double n = static_cast<double>(values.size());
  h.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - h.mean) * (v - h.mean);
  h.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;

  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  const double width = 2.0 * (quantile(values, 0.75) - quantile(values, 0.25)) / std::cbrt(n);
  std::size_t bins = 1;
  if (hi > lo && width > 0.0) bins = static_cast<std::size_t>(std::clamp(std::ceil((hi - lo) / width), 1.0, 1000.0));
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double step = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + step * static_cast<double>(b));
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::floor((v - lo) / step));
    h.counts[std::min(b, bins - 1)]++;
  }
  return h;
}

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.precision(17);
  out << "bin_left,bin_right,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.counts[b] << '\n';
  }
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

}  // namespace fedci
