#include "tpose/error.hpp"

namespace tpose {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonOrthogonalAxes: return "NonOrthogonalAxes";
    case ErrorCode::NonUnitAxis: return "NonUnitAxis";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::DegenerateAxes: return "DegenerateAxes";
    case ErrorCode::NonPositiveScale: return "NonPositiveScale";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::PlacementFailure: return "PlacementFailure";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
  }
  return "Unknown";
}

}  // namespace tpose
