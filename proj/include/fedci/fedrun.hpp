#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedci/messages.hpp"
#include "fedci/transport.hpp"
#include "fedci/variational.hpp"

namespace fedci {

enum class OptimizerKind { Sgd, Adam };
enum class GradientMethod { Analytic, FiniteDifference };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);
GradientMethod parse_gradient_method(const std::string& name);
std::string to_string(GradientMethod method);

struct TrainConfig {
  double learning_rate = 1e-3;
  int rounds = 500;
  int mc_samples = 16;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::uint64_t seed = 0;
  bool ablate_g = false;
  TransportKind transport = TransportKind::Inproc;
  // Reuse the round-0 noise in every round (deterministic full-batch ascent).
  bool fixed_noise = false;
  GradientMethod gradient = GradientMethod::Analytic;
  // Stop once the aggregated gradient norm falls below this; 0 disables.
  double grad_norm_stop = 1e-5;

  void validate() const;
};

struct TraceEntry {
  std::int64_t round = 0;
  double elbo = 0.0;
  double grad_norm = 0.0;
  double wall_seconds = 0.0;
};

struct TrainTrace {
  std::vector<TraceEntry> entries;
};

struct TrainResult {
  Vector theta;
  TrainTrace trace;
};

/// Noise seed broadcast in a round.
std::uint64_t round_noise_seed(const TrainConfig& cfg, std::int64_t round);

/// Elementwise sum in ascending source_id order. Needs exactly one report per
/// expected id, all from the given round.
Vector aggregate_gradients(std::vector<GradientReport> reports, const std::vector<int>& expected_ids,
                           std::int64_t round);

/// Gradient ascent: sgd or adam.
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, Eigen::Index dim);

  Vector step(const Vector& theta, const Vector& grad);

 private:
  OptimizerKind kind_;
  double lr_;
  Vector m_, v_;
  std::int64_t t_ = 0;
};

/// Worker for one source: regenerates the round's noise from the broadcast seed
/// and returns the gradient of its ELBO term.
WorkerSpec make_source_worker(std::shared_ptr<const SourceObjective> objective, const TrainConfig& cfg);

/// Server loop over an already connected set of workers.
TrainResult run_rounds(Transport& transport, const std::vector<int>& source_ids, Vector theta,
                       const TrainConfig& cfg);

/// Full training. sources[i] pairs with ctx->summaries[i].
TrainResult train(const std::vector<SourceData>& sources, std::shared_ptr<const SharedContext> ctx,
                  const TrainConfig& cfg, std::optional<Vector> theta0 = std::nullopt);

}  // namespace fedci
