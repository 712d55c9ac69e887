#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fedci/mathcore.hpp"

// Everything that crosses a source boundary. None of these types carries
// unit-level records: only parameters, gradients, seeds and hashed keys.
namespace fedci {

struct ParamBroadcast {
  std::int64_t round = 0;
  math::Vector theta;
  std::uint64_t noise_seed = 0;
};

struct GradientReport {
  int source_id = 0;
  std::int64_t round = 0;
  math::Vector grad;
  double elbo_value = 0.0;
};

/// Sent by a worker instead of a report when its computation fails.
struct WorkerError {
  int source_id = 0;
  std::int64_t round = 0;
  std::string kind;
  std::string message;
};

/// Tells a worker to exit its loop.
struct Shutdown {};

struct DigestList {
  int source_id = 0;
  std::vector<std::string> digests;
};

struct ExclusionList {
  int source_id = 0;
  std::vector<Eigen::Index> rows;
};

using Message = std::variant<ParamBroadcast, GradientReport, WorkerError, Shutdown, DigestList, ExclusionList>;

/// One JSON object, no trailing newline.
std::string encode(const Message& msg);
/// Throws SchemaError on malformed input or unknown type.
Message decode(const std::string& line);

}  // namespace fedci
