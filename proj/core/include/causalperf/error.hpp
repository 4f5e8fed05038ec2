#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace causalperf {

enum class ErrorCode {
  InvalidArgument,
  UnknownColumn,
  DomainViolation,
  ParseError,
  EmptyDataset,
  InsufficientSamples,
  SingularCorrelationMatrix,
  VertexMismatch,
  NonFiniteEntropy,
  UnderdeterminedFit,
  NotIntervenable,
  NonAdditiveVertex,
  EmptyPaths,
  EmptyRepairSet,
  SutFailure,
  DegenerateWorld,
  MissingGroundTruth,
  NotFound,
  Conflict,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure surfaced by the library carries one of the codes above so
/// callers (CLI, service) can map it to a machine-readable response.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace causalperf
