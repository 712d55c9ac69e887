#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedci/model.hpp"

namespace fedci::data {

enum class Variant { Data1, Data2 };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct SplitCounts {
  Eigen::Index train = 50;
  Eigen::Index test = 450;
  Eigen::Index val = 400;

  Eigen::Index total() const { return train + test + val; }
};

struct SyntheticConfig {
  Variant variant = Variant::Data1;
  Eigen::Index n = 5000;
  Eigen::Index m = 5;
  Eigen::Index d_x = 20;
  std::uint64_t seed = 0;
  SplitCounts split;

  Eigen::Index per_source() const { return m > 0 ? n / m : 0; }
  void validate() const;
};

/// Ground-truth coefficients of one replication.
struct SyntheticTruthParams {
  double a0 = 0.0, b0 = 0.0, c0 = 0.0;
  double sigma0 = 1.0, sigma1 = 1.0;
  Vector a1, b1, c1;
};

SyntheticTruthParams draw_truth_params(const SyntheticConfig& cfg);

/// Sources of n/m records each, with potential outcomes retained as truth.
std::vector<SourceData> generate_synthetic(const SyntheticConfig& cfg);

struct Split {
  std::vector<Eigen::Index> train, test, val;
};

/// Seeded permutation, then contiguous train/test/val blocks. Leftover rows are unused.
Split split_source(const SourceData& src, const SplitCounts& counts, std::uint64_t seed);

/// Rows of src selected by the named part ("train", "test" or "val").
SourceData select(const SourceData& src, const Split& split, const std::string& part);

/// Header: [id,] w, y_obs, [y0, y1,] x1..xd.
SourceData load_csv(const std::filesystem::path& path, int source_id = 0);
void write_csv(const std::filesystem::path& path, const SourceData& src);

/// Moments of every covariate column, of the observed outcome per arm and of w.
SourceSummary summarize(const SourceData& src);

/// Fraction of treated units.
double treated_fraction(const SourceData& src);

}  // namespace fedci::data
