#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedci {

enum class ErrorKind {
  NotPositiveDefinite,
  DimensionMismatch,
  InvalidDegreesOfFreedom,
  InsufficientData,
  NonFiniteLoss,
  NonFiniteParameters,
  WorkerFailure,
  MissingReport,
  RoundMismatch,
  EmptyDraws,
  EmptyKey,
  IndexOutOfRange,
  InvalidConfig,
  SchemaError,
  NonBinaryTreatment,
  ShapeMismatch,
  MissingTruth,
  IoError,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidDegreesOfFreedom: return "InvalidDegreesOfFreedom";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::NonFiniteParameters: return "NonFiniteParameters";
    case ErrorKind::WorkerFailure: return "WorkerFailure";
    case ErrorKind::MissingReport: return "MissingReport";
    case ErrorKind::RoundMismatch: return "RoundMismatch";
    case ErrorKind::EmptyDraws: return "EmptyDraws";
    case ErrorKind::EmptyKey: return "EmptyKey";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::SchemaError: return "SchemaError";
    case ErrorKind::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::MissingTruth: return "MissingTruth";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace fedci
