#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "planecal/errors.hpp"
#include "planecal/geometry.hpp"

namespace planecal {

/// One target placement seen by both sensors.
struct MeasurementPair {
  Plane lidar_plane = Plane::canonicalize(Eigen::Vector3d::UnitZ(), 0.0);
  Plane camera_plane = Plane::canonicalize(Eigen::Vector3d::UnitZ(), 0.0);
  std::string id;

  friend bool operator==(const MeasurementPair&, const MeasurementPair&) = default;
};

struct SolverConfig {
  int max_iterations = 100;
  double update_tolerance = 1e-9;
  double huber_delta = 0.1;  // on the weighted norm of the 4D residual; +inf disables
  double normal_weight = 1.0;
  double dist_weight = 1.0;
  double conditioning_threshold = 1e-8;  // relative, lambda_min / lambda_max

  void validate() const;
  friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

struct MeasurementResidual {
  std::string id;
  double residual_norm = 0.0;
  double weight = 1.0;
  friend bool operator==(const MeasurementResidual&, const MeasurementResidual&) = default;
};

struct CalibrationReport {
  Isometry3 extrinsic;  // camera_from_lidar
  std::vector<MeasurementResidual> per_measurement;
  std::vector<double> chi2_trace;  // robust objective, initial value then every accepted step
  Vector6d hessian_spectrum = Vector6d::Zero();  // ascending
  bool converged = false;
  bool condition_warning = false;
  int iterations = 0;
};

/// Thrown when the normal matrix is numerically rank deficient; carries the
/// state reached so far.
class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& message, CalibrationReport partial)
      : Error(ErrorCode::SingularSystem, message), partial_(std::move(partial)) {}
  const CalibrationReport& partial_report() const noexcept { return partial_; }

 private:
  CalibrationReport partial_;
};

struct InitialGuess {
  Isometry3 pose;
  bool condition_warning = false;
};

/// Closed-form start: Procrustes rotation on the normals, then linear least
/// squares for the translation. Needs at least 3 measurements.
InitialGuess initial_guess(std::span<const MeasurementPair> measurements);

/// Robust Gauss-Newton on SE(3) over the plane-to-plane residuals.
CalibrationReport calibrate(std::span<const MeasurementPair> measurements, const SolverConfig& cfg = {},
                            const std::optional<Isometry3>& guess = std::nullopt);

struct ConditioningDiagnosis {
  Vector6d eigenvalues = Vector6d::Zero();  // ascending
  int rank = 0;
  bool warning = false;
};

ConditioningDiagnosis conditioning_check(std::span<const MeasurementPair> measurements,
                                         double conditioning_threshold = SolverConfig{}.conditioning_threshold);

struct ExtrinsicError {
  double translation = 0.0;  // meters
  double rotation = 0.0;     // radians
};

ExtrinsicError evaluate_error(const Isometry3& estimate, const Isometry3& ground_truth);

/// Residual e and its 4x6 Jacobian for a single pair at X.
struct PairLinearization {
  Eigen::Vector4d error;
  Matrix46d jacobian;
};
PairLinearization linearize_pair(const Isometry3& X, const MeasurementPair& m);

}  // namespace planecal
