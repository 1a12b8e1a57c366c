#pragma once

#include <stdexcept>
#include <string>

namespace tpose {

enum class ErrorCode {
  NonOrthogonalAxes,
  NonUnitAxis,
  InvalidArgument,
  OutOfBounds,
  NonPositiveDepth,
  ShapeMismatch,
  EmptyMask,
  EmptyCloud,
  EmptyRegion,
  DegenerateAxes,
  NonPositiveScale,
  DegenerateConfiguration,
  LengthMismatch,
  PlacementFailure,
  IoFailure,
  WidthMismatch,
  DivergedLoss,
  SchemaMismatch,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tpose
