#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fedci/model.hpp"

namespace fedci::eval {

struct Pehe {
  double eps = 0.0;
  double sqrt_eps = 0.0;
};

/// Mean squared ITE error over every unit of every source.
Pehe pehe(const std::vector<Vector>& true_ite, const std::vector<Vector>& est_ite);

double ate_error(double true_ate, double est_ate);

/// y1 - y0 per unit; throws MissingTruth.
Vector true_ite(const SourceData& src);
/// Mean of the true ITEs over all units of all sources.
double true_ate(const std::vector<SourceData>& sources);

struct SplitMetrics {
  double sqrt_pehe = 0.0;
  double ate_error = 0.0;
};

struct MetricsReport {
  double sqrt_pehe = 0.0;  // headline split
  double ate_error = 0.0;
  std::map<std::string, SplitMetrics> per_split;
  std::uint64_t seed = 0;
  std::string variant;
  int m_used = 0;
  double wall_s = 0.0;
  std::string config_digest;
};

/// Writes the JSON report; appends one row to csv_path when it is not empty,
/// writing the header only if the file is new.
void emit_report(const MetricsReport& report, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path = {});

MetricsReport read_report(const std::filesystem::path& json_path);

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean and standard error of the mean (sample sd / sqrt(n)).
MeanSe mean_se(const std::vector<double>& values);

}  // namespace fedci::eval
