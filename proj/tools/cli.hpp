#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fedci/data.hpp"
#include "fedci/error.hpp"
#include "fedci/fedrun.hpp"
#include "fedci/variational.hpp"

namespace fedci::cli {

/// Everything a pipeline step can be configured with. JSON sections:
/// seed, data, priors, variational, train, predict, dedup, eval.
struct RunConfig {
  std::uint64_t seed = 0;
  data::SyntheticConfig data;  // data.seed follows seed
  PriorConfig priors;
  VariationalConfig variational;
  TrainConfig train;          // train.seed follows seed
  std::string train_part = "train";
  int draws = 100;
  std::vector<std::string> predict_parts{"test"};
  int k_keep = 1;
  std::string salt;
  std::string headline = "test";

  void validate() const;
  /// Canonical JSON text; the digest of a config is the SHA-256 of this.
  std::string to_json() const;
  std::string digest() const;
  /// Missing keys keep their defaults; unknown keys are an InvalidConfig.
  static RunConfig from_json(const std::string& text);
};

/// 0 ok, 1 numeric failure, 2 I/O, 3 validation.
int exit_code(ErrorKind kind);

/// Seed of the predictive draws, kept apart from the training noise streams.
std::uint64_t predict_seed(std::uint64_t seed);

/// Rows of a source used for a part name: "all" or a split name.
SourceData select_part(const SourceData& src, const RunConfig& cfg, const std::string& part,
                       std::vector<Eigen::Index>* rows = nullptr);

/// Entry point shared by the binary and the tests. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedci::cli
