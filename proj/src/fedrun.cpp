#include "fedci/fedrun.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include "fedci/error.hpp"
#include "fedci/rng.hpp"

namespace fedci {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw Error(ErrorKind::InvalidConfig, "unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

GradientMethod parse_gradient_method(const std::string& name) {
  if (name == "analytic") return GradientMethod::Analytic;
  if (name == "fd") return GradientMethod::FiniteDifference;
  throw Error(ErrorKind::InvalidConfig, "unknown gradient method '" + name + "' (expected analytic or fd)");
}

std::string to_string(GradientMethod method) { return method == GradientMethod::Analytic ? "analytic" : "fd"; }

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::InvalidConfig, "learning rate must be positive");
  }
  if (rounds < 1) throw Error(ErrorKind::InvalidConfig, "rounds must be positive");
  if (mc_samples < 1) throw Error(ErrorKind::InvalidConfig, "mc_samples must be positive");
  if (!(grad_norm_stop >= 0.0)) throw Error(ErrorKind::InvalidConfig, "grad_norm_stop must be >= 0");
}

std::uint64_t round_noise_seed(const TrainConfig& cfg, std::int64_t round) {
  return derive_seed(cfg.seed, cfg.fixed_noise ? 0 : static_cast<std::uint64_t>(round) + 1);
}

Vector aggregate_gradients(std::vector<GradientReport> reports, const std::vector<int>& expected_ids,
                           std::int64_t round) {
  if (expected_ids.empty()) throw Error(ErrorKind::MissingReport, "no sources expected");
  for (const auto& r : reports) {
    if (r.round != round) {
      throw Error(ErrorKind::RoundMismatch, "source " + std::to_string(r.source_id) + " reported round " +
                                                std::to_string(r.round) + " during round " + std::to_string(round));
    }
  }
  std::sort(reports.begin(), reports.end(),
            [](const GradientReport& a, const GradientReport& b) { return a.source_id < b.source_id; });
  std::vector<int> ids = expected_ids;
  std::sort(ids.begin(), ids.end());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i >= reports.size() || reports[i].source_id != ids[i]) {
      throw Error(ErrorKind::MissingReport, "no gradient from source " + std::to_string(ids[i]) + " in round " +
                                                std::to_string(round));
    }
  }
  if (reports.size() != ids.size()) {
    throw Error(ErrorKind::MissingReport, "got " + std::to_string(reports.size()) + " reports for " +
                                              std::to_string(ids.size()) + " sources");
  }
  Vector sum = reports.front().grad;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].grad.size() != sum.size()) {
      throw Error(ErrorKind::DimensionMismatch, "gradient lengths differ across sources");
    }
    sum += reports[i].grad;
  }
  return sum;
}

Optimizer::Optimizer(const TrainConfig& cfg, Eigen::Index dim)
    : kind_(cfg.optimizer), lr_(cfg.learning_rate), m_(Vector::Zero(dim)), v_(Vector::Zero(dim)) {}

Vector Optimizer::step(const Vector& theta, const Vector& grad) {
  if (grad.size() != theta.size()) throw Error(ErrorKind::DimensionMismatch, "gradient and parameters differ");
  if (!grad.allFinite()) throw Error(ErrorKind::NonFiniteParameters, "non-finite gradient");
  Vector next;
  if (kind_ == OptimizerKind::Sgd) {
    next = theta + lr_ * grad;
  } else {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    m_ = b1 * m_ + (1.0 - b1) * grad;
    v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    next = theta.array() + lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
  }
  if (!next.allFinite()) throw Error(ErrorKind::NonFiniteParameters, "parameters became non-finite");
  return next;
}

WorkerSpec make_source_worker(std::shared_ptr<const SourceObjective> objective, const TrainConfig& cfg) {
  const int samples = cfg.mc_samples;
  const GradientMethod method = cfg.gradient;
  const int id = objective->source_id();
  WorkerFn fn = [objective = std::move(objective), samples, method](const ParamBroadcast& b) {
    const SharedContext& ctx = objective->context();
    const auto noise = make_noise(b.noise_seed, samples, ctx.m(), ctx.vcfg);
    GradientReport r;
    r.round = b.round;
    r.source_id = objective->source_id();
    if (method == GradientMethod::Analytic) {
      r.grad = Vector::Zero(b.theta.size());
      r.elbo_value = objective->elbo(b.theta, noise, &r.grad);
    } else {
      r.elbo_value = objective->elbo(b.theta, noise);
      r.grad = grad_fd([&](const Vector& t) { return objective->elbo(t, noise); }, b.theta);
    }
    return r;
  };
  return {id, std::move(fn)};
}

TrainResult run_rounds(Transport& transport, const std::vector<int>& source_ids, Vector theta,
                       const TrainConfig& cfg) {
  cfg.validate();
  Optimizer opt(cfg, theta.size());
  TrainResult out;
  const auto start = std::chrono::steady_clock::now();
  for (std::int64_t round = 0; round < cfg.rounds; ++round) {
    const auto replies = transport.exchange({round, theta, round_noise_seed(cfg, round)});
    std::vector<GradientReport> reports;
    for (const auto& msg : replies) {
      if (const auto* e = std::get_if<WorkerError>(&msg)) {
        const std::string what = "source " + std::to_string(e->source_id) + " failed in round " +
                                 std::to_string(round) + ": " + e->message;
        if (e->kind == "NonFiniteLoss") throw Error(ErrorKind::NonFiniteLoss, what);
        throw Error(ErrorKind::WorkerFailure, what);
      }
      if (const auto* r = std::get_if<GradientReport>(&msg)) {
        reports.push_back(*r);
      } else {
        throw Error(ErrorKind::WorkerFailure, "unexpected reply type in round " + std::to_string(round));
      }
    }
    const Vector grad = aggregate_gradients(reports, source_ids, round);
    std::sort(reports.begin(), reports.end(),
              [](const GradientReport& a, const GradientReport& b) { return a.source_id < b.source_id; });
    double elbo = 0.0;
    for (const auto& r : reports) elbo += r.elbo_value;
    const double norm = grad.norm();
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.trace.entries.push_back({round, elbo, norm, wall});
    if (norm < cfg.grad_norm_stop) break;
    theta = opt.step(theta, grad);
  }
  out.theta = std::move(theta);
  return out;
}

TrainResult train(const std::vector<SourceData>& sources, std::shared_ptr<const SharedContext> ctx,
                  const TrainConfig& cfg, std::optional<Vector> theta0) {
  cfg.validate();
  if (sources.empty()) throw Error(ErrorKind::InsufficientData, "no sources to train on");
  if (!ctx || ctx->m() != static_cast<Eigen::Index>(sources.size())) {
    throw Error(ErrorKind::DimensionMismatch, "number of summaries differs from number of sources");
  }
  if (ctx->ablate_g != cfg.ablate_g) throw Error(ErrorKind::InvalidConfig, "ablation flag differs from context");
  std::vector<WorkerSpec> workers;
  std::vector<int> ids;
  std::set<int> seen;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    if (!seen.insert(sources[s].source_id).second) {
      throw Error(ErrorKind::InvalidConfig, "duplicate source id " + std::to_string(sources[s].source_id));
    }
    auto obj = std::make_shared<const SourceObjective>(sources[s], static_cast<Eigen::Index>(s), ctx);
    workers.push_back(make_source_worker(std::move(obj), cfg));
    ids.push_back(sources[s].source_id);
  }
  Vector theta = theta0 ? *theta0 : flatten(ctx->layout, initial_params(ctx->layout, ctx->vcfg));
  if (theta.size() != ctx->layout.size) {
    throw Error(ErrorKind::DimensionMismatch, "initial parameters have the wrong length");
  }
  auto transport = make_transport(cfg.transport, std::move(workers));
  return run_rounds(*transport, ids, std::move(theta), cfg);
}

}  // namespace fedci
