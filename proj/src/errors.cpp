#include "planecal/errors.hpp"

namespace planecal {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DegenerateNormal: return "degenerate_normal";
    case ErrorCode::BehindCamera: return "behind_camera";
    case ErrorCode::NonConvergence: return "non_convergence";
    case ErrorCode::RingOutOfRange: return "ring_out_of_range";
    case ErrorCode::MissingRing: return "missing_ring";
    case ErrorCode::EmptyCloud: return "empty_cloud";
    case ErrorCode::OutOfBounds: return "out_of_bounds";
    case ErrorCode::EmptyPatch: return "empty_patch";
    case ErrorCode::InsufficientPoints: return "insufficient_points";
    case ErrorCode::NoConsensus: return "no_consensus";
    case ErrorCode::HomographyDegenerate: return "homography_degenerate";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::InsufficientMeasurements: return "insufficient_measurements";
    case ErrorCode::SingularSystem: return "singular_system";
    case ErrorCode::RejectionExhausted: return "rejection_exhausted";
    case ErrorCode::NoHit: return "no_hit";
    case ErrorCode::OutOfFrustum: return "out_of_frustum";
    case ErrorCode::ParseError: return "parse_error";
    case ErrorCode::SchemaMismatch: return "schema_mismatch";
    case ErrorCode::IoError: return "io_error";
    case ErrorCode::NoFrame: return "no_frame";
    case ErrorCode::NoPending: return "no_pending";
    case ErrorCode::NoReport: return "no_report";
    case ErrorCode::Conflict: return "conflict";
    case ErrorCode::InvalidArgument: return "invalid_argument";
  }
  return "unknown";
}

}  // namespace planecal
