#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace planecal {

enum class ErrorCode {
  DegenerateNormal,
  BehindCamera,
  NonConvergence,
  RingOutOfRange,
  MissingRing,
  EmptyCloud,
  OutOfBounds,
  EmptyPatch,
  InsufficientPoints,
  NoConsensus,
  HomographyDegenerate,
  Divergence,
  InsufficientMeasurements,
  SingularSystem,
  RejectionExhausted,
  NoHit,
  OutOfFrustum,
  ParseError,
  SchemaMismatch,
  IoError,
  NoFrame,
  NoPending,
  NoReport,
  Conflict,
  InvalidArgument,
};

/// Stable lower_snake_case name used in machine-readable error payloads.
std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string details = {})
      : std::runtime_error(message), code_(code), details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  std::string details_;
};

}  // namespace planecal
