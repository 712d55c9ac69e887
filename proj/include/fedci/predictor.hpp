#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "fedci/variational.hpp"

namespace fedci {

/// Gaussian conditional of the missing outcomes given the observed ones.
struct MissingConditional {
  Vector mean;  // m_mo
  Matrix cov;   // S_mo
};

/// Conditional for one source under one sample of (Phi, Sigma, g).
MissingConditional conditional_missing(const SourceData& src, Eigen::Index source_index, const ModelParams& p,
                                       const QSample& q, double jitter = math::kDefaultJitter);

struct PredictiveDraws {
  // y_mis[s] is draws x n_s.
  std::vector<Matrix> y_mis;

  Eigen::Index draws() const { return y_mis.empty() ? 0 : y_mis.front().rows(); }
};

/// For each draw, sample (Phi, Sigma, g) from q once, then y_mis for every source.
PredictiveDraws predict_missing(const std::vector<SourceData>& sources, const Vector& theta,
                                std::shared_ptr<const SharedContext> ctx, int draws, std::uint64_t seed);

struct EffectEstimate {
  // Per source, per unit.
  std::vector<Vector> ite_mean;
  std::vector<Vector> ite_var;
  double ate_mean = 0.0;
  double ate_var = 0.0;
  std::array<double, 2> interval{0.0, 0.0};
  // Per-draw ATE over all units.
  std::vector<double> ate_draws;
};

/// ITE and ATE from the draws; never reads truth.
EffectEstimate estimate_effects(const std::vector<SourceData>& sources, const PredictiveDraws& draws);

/// Per-draw ATE restricted to the listed source positions (all when empty).
std::vector<double> ate_draws(const std::vector<SourceData>& sources, const PredictiveDraws& draws,
                              const std::vector<std::size_t>& source_filter = {});

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<long> counts;
  double mean = 0.0;
  double sd = 0.0;
};

/// Freedman-Diaconis histogram of the values plus their mean and sample sd.
Histogram ate_distribution(const std::vector<double>& values);

void write_histogram_csv(const std::filesystem::path& path, const Histogram& h);

/// Empirical quantile with linear interpolation, q in [0,1].
double quantile(std::vector<double> values, double q);

}  // namespace fedci
