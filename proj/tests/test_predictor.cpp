#include <doctest.h>

#include <cmath>
#include <memory>
#include <numeric>
#include <random>

#include "fedci/data.hpp"
#include "fedci/error.hpp"
#include "fedci/predictor.hpp"
#include "fedci/rng.hpp"
#include "test_util.hpp"

using namespace fedci;

namespace {

// Sample with arbitrary (Phi, Sigma, g) for a single source position.
QSample make_q(const Matrix2& phi, const Matrix2& sigma, Eigen::Index m, double g0, double g1, Eigen::Index s) {
  QSample q;
  q.phi = phi;
  q.sigma = sigma;
  q.phi_chol = Eigen::LLT<Matrix2>(phi).matrixL();
  q.sigma_chol = Eigen::LLT<Matrix2>(sigma).matrixL();
  q.g.g0 = Vector::Zero(m);
  q.g.g1 = Vector::Zero(m);
  q.g.g0[s] = g0;
  q.g.g1[s] = g1;
  return q;
}

ModelParams random_model(std::mt19937_64& rng, Eigen::Index d_x) {
  ModelParams p;
  std::uniform_real_distribution<double> u(-0.7, 0.7);
  p.k = {u(rng), u(rng)};
  p.means.mu0 = {testing::random_vector(rng, d_x), u(rng)};
  p.means.mu1 = {testing::random_vector(rng, d_x), u(rng)};
  return p;
}

struct Joint {
  Vector mean;
  Matrix cov;
};

// Full [y(0); y(1)] Gaussian written out element by element.
Joint brute_joint(const Matrix& x, const Matrix2& phi, const Matrix2& sigma, double g0, double g1,
                  const ModelParams& p) {
  const auto n = x.rows();
  Joint j{Vector(2 * n), Matrix(2 * n, 2 * n)};
  const Matrix2 l = Eigen::LLT<Matrix2>(phi).matrixL();
  const double l2 = std::exp(2.0 * p.k.log_lengthscale);
  const double sv = std::exp(p.k.log_signal_variance);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double f0 = p.means.mu0.weights.dot(x.row(i).transpose()) + p.means.mu0.bias + g0;
    const double f1 = p.means.mu1.weights.dot(x.row(i).transpose()) + p.means.mu1.bias + g1;
    j.mean[i] = l(0, 0) * f0;
    j.mean[n + i] = l(1, 0) * f0 + l(1, 1) * f1;
  }
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) {
          const double kik = sv * std::exp(-(x.row(i) - x.row(k)).squaredNorm() / (2.0 * l2));
          j.cov(a * n + i, b * n + k) = phi(a, b) * kik + (i == k ? sigma(a, b) : 0.0);
        }
  return j;
}

SourceData random_source(std::mt19937_64& rng, Eigen::Index n, Eigen::Index d_x) {
  SourceData src;
  src.x = testing::random_matrix(rng, n, d_x);
  src.w = testing::random_treatment(rng, n);
  src.y_obs = testing::random_vector(rng, n, -2.0, 2.0);
  return src;
}

}  // namespace

TEST_CASE("scalar conditional") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    SourceData src = random_source(rng, 1, 2);
    const ModelParams p = random_model(rng, 2);
    const Matrix2 phi = testing::random_spd(rng, 2, 0.1);
    const Matrix2 sigma = testing::random_spd(rng, 2, 0.1);
    const QSample q = make_q(phi, sigma, 1, 0.3, -0.4, 0);
    const MissingConditional c = conditional_missing(src, 0, p, q, 0.0);
    const Joint j = brute_joint(src.x, phi, sigma, 0.3, -0.4, p);
    const int o = static_cast<int>(src.w[0]);
    const int mi = 1 - o;
    const double k_obs = j.cov(o, o), k_mis = j.cov(mi, mi), k_om = j.cov(o, mi);
    CHECK(c.mean[0] == doctest::Approx(j.mean[mi] + k_om * (src.y_obs[0] - j.mean[o]) / k_obs).epsilon(1e-12));
    CHECK(c.cov(0, 0) == doctest::Approx(k_mis - k_om * k_om / k_obs).epsilon(1e-10));
  }
}

TEST_CASE("conditional matches brute-force joint conditioning") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> nd(1, 6), dd(1, 4);
  for (int t = 0; t < 200; ++t) {
    const Eigen::Index n = nd(rng), d_x = dd(rng);
    SourceData src = random_source(rng, n, d_x);
    const ModelParams p = random_model(rng, d_x);
    const Matrix2 phi = testing::random_spd(rng, 2, 0.1);
    const Matrix2 sigma = testing::random_spd(rng, 2, 0.1);
    const double g0 = std::normal_distribution<double>()(rng), g1 = std::normal_distribution<double>()(rng);
    const MissingConditional c = conditional_missing(src, 1, p, make_q(phi, sigma, 3, g0, g1, 1), 0.0);

    const Joint j = brute_joint(src.x, phi, sigma, g0, g1, p);
    std::vector<Eigen::Index> obs, mis;
    for (Eigen::Index i = 0; i < n; ++i) {
      obs.push_back(src.w[i] == 1.0 ? n + i : i);
      mis.push_back(src.w[i] == 1.0 ? i : n + i);
    }
    Matrix koo(n, n), kmm(n, n), kom(n, n);
    Vector mo(n), mm(n);
    for (Eigen::Index a = 0; a < n; ++a) {
      mo[a] = j.mean[obs[a]];
      mm[a] = j.mean[mis[a]];
      for (Eigen::Index b = 0; b < n; ++b) {
        koo(a, b) = j.cov(obs[a], obs[b]);
        kmm(a, b) = j.cov(mis[a], mis[b]);
        kom(a, b) = j.cov(obs[a], mis[b]);
      }
    }
    const Matrix inv = koo.inverse();
    const Vector mean = mm + kom.transpose() * inv * (src.y_obs - mo);
    const Matrix cov = kmm - kom.transpose() * inv * kom;
    CAPTURE(t);
    CHECK(testing::max_abs_diff(c.mean, mean) < 1e-10);
    CHECK(testing::max_abs_diff(c.cov, cov) < 1e-10);
    CHECK(testing::max_abs_diff(c.cov, c.cov.transpose()) == 0.0);
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(c.cov).eigenvalues().minCoeff() > -1e-10);
  }
}

TEST_CASE("conditioning does not inflate marginal variance") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    SourceData src = random_source(rng, 5, 2);
    const ModelParams p = random_model(rng, 2);
    Matrix2 phi = Matrix2::Zero(), sigma = Matrix2::Zero();
    std::uniform_real_distribution<double> u(0.1, 2.0);
    phi.diagonal() << u(rng), u(rng);
    sigma.diagonal() << u(rng), u(rng);
    const MissingConditional c = conditional_missing(src, 0, p, make_q(phi, sigma, 1, 0.0, 0.0, 0), 0.0);
    const ObsMisKernels k = obs_mis_kernels(rbf_kernel(src.x, src.x, p.k), src.w, phi, sigma);
    for (Eigen::Index i = 0; i < 5; ++i) CHECK(c.cov(i, i) <= k.mis(i, i) + 1e-12);
  }
}

TEST_CASE("effects from hand-made draws") {
  SourceData a;
  a.x = Matrix::Zero(2, 1);
  a.w.resize(2);
  a.w << 1.0, 0.0;
  a.y_obs.resize(2);
  a.y_obs << 5.0, 5.0;
  PredictiveDraws d;
  d.y_mis.push_back(Matrix(2, 2));
  d.y_mis[0] << 2.0, 2.0, 4.0, 4.0;
  const EffectEstimate e = estimate_effects({a}, d);
  CHECK(e.ite_mean[0][0] == doctest::Approx(2.0));
  CHECK(e.ite_mean[0][1] == doctest::Approx(-2.0));
  CHECK(e.ite_var[0][0] == doctest::Approx(1.0));
  // Per draw: (3 + -3)/2 = 0 and (1 + -1)/2 = 0.
  CHECK(e.ate_mean == doctest::Approx(0.0));
  CHECK(e.ate_var == doctest::Approx(0.0));

  d.y_mis[0] << 3.0, 1.0, 3.0, 1.0;
  const EffectEstimate same = estimate_effects({a}, d);
  CHECK(same.ite_var[0].norm() == 0.0);
  CHECK(same.ate_var == 0.0);
  CHECK(same.interval[0] == same.interval[1]);

  PredictiveDraws empty;
  CHECK_THROWS_AS(estimate_effects({a}, empty), Error);
}

TEST_CASE("effect identities on random draws") {
  std::mt19937_64 rng(4);
  std::vector<SourceData> srcs;
  PredictiveDraws d;
  for (int s = 0; s < 3; ++s) {
    srcs.push_back(random_source(rng, 4 + s, 1));
    d.y_mis.push_back(testing::random_matrix(rng, 30, 4 + s, -3.0, 3.0));
  }
  const EffectEstimate e = estimate_effects(srcs, d);
  double sum = 0.0, n = 0.0;
  for (std::size_t s = 0; s < srcs.size(); ++s) {
    const Matrix& y = d.y_mis[s];
    for (Eigen::Index i = 0; i < y.cols(); ++i) {
      const double mean = y.col(i).mean();
      const double var = (y.col(i).array() - mean).square().sum() / 30.0;
      const double ws = 2.0 * srcs[s].w[i] - 1.0;
      CHECK(e.ite_var[s][i] == doctest::Approx(ws * ws * var).epsilon(1e-12));
    }
    sum += e.ite_mean[s].sum();
    n += static_cast<double>(y.cols());
  }
  CHECK(sum / n == doctest::Approx(e.ate_mean).epsilon(1e-12));
  CHECK(e.ate_var >= 0.0);
  CHECK(e.interval[0] <= e.ate_mean);
  CHECK(e.interval[1] >= e.ate_mean);

  // Restricting to one source equals computing on that source alone.
  const auto one = ate_draws(srcs, d, {1});
  PredictiveDraws d1;
  d1.y_mis.push_back(d.y_mis[1]);
  const auto alone = ate_draws({srcs[1]}, d1);
  for (std::size_t k = 0; k < one.size(); ++k) CHECK(one[k] == doctest::Approx(alone[k]).epsilon(1e-14));
}

TEST_CASE("ATE histogram") {
  const Histogram one = ate_distribution({1.5});
  CHECK(one.counts.size() == 1);
  CHECK(one.counts[0] == 1);
  CHECK(one.sd == 0.0);
  const Histogram two = ate_distribution({0.0, 1.0});
  CHECK(two.mean == doctest::Approx(0.5));
  CHECK(std::accumulate(two.counts.begin(), two.counts.end(), 0L) == 2);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> z;
  std::vector<double> v(1000);
  for (auto& x : v) x = z(rng);
  const Histogram h = ate_distribution(v);
  CHECK(std::accumulate(h.counts.begin(), h.counts.end(), 0L) == 1000);
  CHECK(h.edges.size() == h.counts.size() + 1);
  // Freedman-Diaconis width 2 IQR n^(-1/3).
  const double width = 2.0 * (quantile(v, 0.75) - quantile(v, 0.25)) / 10.0;
  const double range = h.edges.back() - h.edges.front();
  CHECK(h.counts.size() == static_cast<std::size_t>(std::ceil(range / width)));
  CHECK(h.sd == doctest::Approx(1.0).epsilon(0.1));
  CHECK(quantile({1.0, 2.0, 3.0, 4.0}, 0.5) == 2.5);
  CHECK_THROWS_AS(ate_distribution({}), Error);
}

TEST_CASE("predict_missing is deterministic and shaped per source") {
  data::SyntheticConfig cfg;
  cfg.n = 40;
  cfg.m = 2;
  cfg.d_x = 2;
  cfg.split = {20, 0, 0};
  const auto srcs = data::generate_synthetic(cfg);
  std::vector<SourceSummary> sums{data::summarize(srcs[0]), data::summarize(srcs[1])};
  auto ctx = std::make_shared<const SharedContext>(sums, PriorConfig{}, VariationalConfig{}, false);
  const Vector theta = flatten(ctx->layout, initial_params(ctx->layout, ctx->vcfg));
  const auto a = predict_missing(srcs, theta, ctx, 7, 3);
  const auto b = predict_missing(srcs, theta, ctx, 7, 3);
  CHECK(a.draws() == 7);
  CHECK(a.y_mis[1].cols() == 20);
  CHECK(a.y_mis[0] == b.y_mis[0]);
  CHECK(a.y_mis[1] == b.y_mis[1]);
  CHECK(predict_missing(srcs, theta, ctx, 7, 4).y_mis[0] != a.y_mis[0]);
  CHECK_THROWS_AS(predict_missing(srcs, theta, ctx, 0, 3), Error);
}

TEST_CASE("predictive draws follow the conditional") {
  data::SyntheticConfig cfg;
  cfg.n = 6;
  cfg.m = 1;
  cfg.d_x = 2;
  cfg.split = {6, 0, 0};
  const auto srcs = data::generate_synthetic(cfg);
  auto ctx = std::make_shared<const SharedContext>(std::vector<SourceSummary>{data::summarize(srcs[0])},
                                                   PriorConfig{}, VariationalConfig{}, true);
  const Vector theta = flatten(ctx->layout, initial_params(ctx->layout, ctx->vcfg));
  const ModelParams p = unflatten(ctx->layout, theta);
  const int draws = 4000;
  const auto d = predict_missing(srcs, theta, ctx, draws, 8);
  // Rebuild each draw's q from the documented seed stream and whiten the sample
  // with its own conditional; the result must look like iid N(0,1).
  double sum = 0.0, sq = 0.0;
  for (int k = 0; k < draws; ++k) {
    const auto noise = make_noise(derive_seed(8, 2 * static_cast<std::uint64_t>(k)), 1, 1, ctx->vcfg);
    const QSample q = q_sample(p, *ctx, noise.front());
    const MissingConditional c = conditional_missing(srcs[0], 0, p, q, ctx->vcfg.jitter);
    const Eigen::LLT<Matrix> llt(c.cov);
    REQUIRE(llt.info() == Eigen::Success);
    const Vector z = llt.matrixL().solve(Vector(d.y_mis[0].row(k).transpose() - c.mean));
    sum += z.sum();
    sq += z.squaredNorm();
  }
  const double count = 6.0 * draws;
  CHECK(std::abs(sum / count) < 4.0 / std::sqrt(count));
  CHECK(sq / count == doctest::Approx(1.0).epsilon(0.05));
}
