#include "causalperf/error.hpp"

namespace causalperf {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownColumn: return "UnknownColumn";
    case ErrorCode::DomainViolation: return "DomainViolation";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::SingularCorrelationMatrix: return "SingularCorrelationMatrix";
    case ErrorCode::VertexMismatch: return "VertexMismatch";
    case ErrorCode::NonFiniteEntropy: return "NonFiniteEntropy";
    case ErrorCode::UnderdeterminedFit: return "UnderdeterminedFit";
    case ErrorCode::NotIntervenable: return "NotIntervenable";
    case ErrorCode::NonAdditiveVertex: return "NonAdditiveVertex";
    case ErrorCode::EmptyPaths: return "EmptyPaths";
    case ErrorCode::EmptyRepairSet: return "EmptyRepairSet";
    case ErrorCode::SutFailure: return "SutFailure";
    case ErrorCode::DegenerateWorld: return "DegenerateWorld";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace causalperf
