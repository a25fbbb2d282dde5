#include "planecal/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace planecal {

namespace {

constexpr double kLevenbergInitial = 1e-4;
constexpr double kLevenbergMax = 1e8;
constexpr double kNormalSpanRatio = 1e-6;

struct Weighting {
  Eigen::Vector4d omega;  // diagonal of the information matrix
  double huber_delta;

  double norm(const Eigen::Vector4d& e) const { return std::sqrt(e.dot(omega.cwiseProduct(e))); }

  double weight(double s) const {
    if (std::isinf(huber_delta) || s <= huber_delta) return 1.0;
    return huber_delta / s;
  }

  double rho(double s) const {
    if (std::isinf(huber_delta) || s <= huber_delta) return s * s;
    return 2.0 * huber_delta * s - huber_delta * huber_delta;
  }
};

Weighting make_weighting(const SolverConfig& cfg) {
  return {Eigen::Vector4d(cfg.dist_weight, cfg.normal_weight, cfg.normal_weight, cfg.normal_weight), cfg.huber_delta};
}

struct NormalEquations {
  Matrix6d H = Matrix6d::Zero();
  Vector6d b = Vector6d::Zero();
  double cost = 0.0;
};

// Fixed-order accumulation keeps the result independent of how residuals are scheduled.
NormalEquations build_normal_equations(const Isometry3& X, std::span<const MeasurementPair> ms, const Weighting& w,
                                       bool robust) {
  NormalEquations ne;
  const Eigen::DiagonalMatrix<double, 4> omega(w.omega);
  for (const auto& m : ms) {
    const PairLinearization lin = linearize_pair(X, m);
    const double s = w.norm(lin.error);
    const double weight = robust ? w.weight(s) : 1.0;
    const Eigen::Matrix<double, 6, 4> JtO = lin.jacobian.transpose() * omega;
    ne.H.noalias() += weight * JtO * lin.jacobian;
    ne.b.noalias() += weight * JtO * lin.error;
    ne.cost += robust ? w.rho(s) : s * s;
  }
  return ne;
}

double robust_cost(const Isometry3& X, std::span<const MeasurementPair> ms, const Weighting& w) {
  double cost = 0.0;
  for (const auto& m : ms) {
    const Plane moved = transform_plane(X, m.lidar_plane);
    cost += w.rho(w.norm(plane_error(moved, m.camera_plane).vector()));
  }
  return cost;
}

Vector6d ascending_spectrum(const Matrix6d& H) {
  const Eigen::SelfAdjointEigenSolver<Matrix6d> eig(H, Eigen::EigenvaluesOnly);
  return eig.eigenvalues();
}

bool is_ill_conditioned(const Vector6d& spectrum, double threshold) {
  const double top = spectrum(5);
  return !(top > 0.0) || spectrum(0) < threshold * top;
}

void fill_residuals(CalibrationReport& report, std::span<const MeasurementPair> ms, const Weighting& w) {
  report.per_measurement.clear();
  report.per_measurement.reserve(ms.size());
  for (const auto& m : ms) {
    const Plane moved = transform_plane(report.extrinsic, m.lidar_plane);
    const double s = w.norm(plane_error(moved, m.camera_plane).vector());
    report.per_measurement.push_back({m.id, s, w.weight(s)});
  }
}

// Sorted copy: floating-point sums then do not depend on the caller's ordering.
std::vector<MeasurementPair> canonical_order(std::span<const MeasurementPair> ms) {
  std::vector<MeasurementPair> out(ms.begin(), ms.end());
  const auto key = [](const MeasurementPair& m) {
    Eigen::Matrix<double, 8, 1> k;
    k << m.lidar_plane.coeffs(), m.camera_plane.coeffs();
    return k;
  };
  std::stable_sort(out.begin(), out.end(), [&](const MeasurementPair& a, const MeasurementPair& b) {
    const auto ka = key(a);
    const auto kb = key(b);
    return std::lexicographical_compare(ka.begin(), ka.end(), kb.begin(), kb.end());
  });
  return out;
}

}  // namespace

void SolverConfig::validate() const {
  if (max_iterations < 1) throw Error(ErrorCode::InvalidArgument, "max_iterations must be at least 1");
  if (!(update_tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "update_tolerance must be positive");
  if (!(huber_delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "huber_delta must be positive");
  if (!(normal_weight > 0.0) || !(dist_weight > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "residual weights must be positive");
  }
  if (!(conditioning_threshold >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "conditioning_threshold must be non-negative");
  }
}

PairLinearization linearize_pair(const Isometry3& X, const MeasurementPair& m) {
  const Plane moved = transform_plane(X, m.lidar_plane);
  return {plane_error(moved, m.camera_plane).vector(),
          plane_error_jacobian(moved, m.camera_plane) * transform_jacobian(X, m.lidar_plane)};
}

InitialGuess initial_guess(std::span<const MeasurementPair> input) {
  if (input.size() < 3) {
    throw Error(ErrorCode::InsufficientMeasurements, "at least 3 measurements are required",
                "got " + std::to_string(input.size()));
  }
  const std::vector<MeasurementPair> measurements = canonical_order(input);
  InitialGuess guess;

  Eigen::Matrix3d M = Eigen::Matrix3d::Zero();
  for (const auto& m : measurements) M += m.camera_plane.normal() * m.lidar_plane.normal().transpose();
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(1) > kNormalSpanRatio * sv(0))) {
    guess.condition_warning = true;
  } else {
    Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
    D(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    guess.pose.rotation = svd.matrixU() * D * svd.matrixV().transpose();
  }

  // d_c = d_l - (R n_l).t  for every pair
  const auto n = static_cast<Eigen::Index>(measurements.size());
  Eigen::MatrixXd A(n, 3);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& m = measurements[static_cast<std::size_t>(i)];
    A.row(i) = (guess.pose.rotation * m.lidar_plane.normal()).transpose();
    rhs(i) = m.lidar_plane.dist() - m.camera_plane.dist();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> lsq(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
  lsq.setThreshold(kNormalSpanRatio);
  guess.pose.translation = lsq.solve(rhs);
  if (lsq.rank() < 3) guess.condition_warning = true;
  return guess;
}

CalibrationReport calibrate(std::span<const MeasurementPair> input, const SolverConfig& cfg,
                            const std::optional<Isometry3>& guess) {
  cfg.validate();
  if (input.size() < 3) {
    throw Error(ErrorCode::InsufficientMeasurements, "at least 3 measurements are required",
                "got " + std::to_string(input.size()));
  }
  const std::vector<MeasurementPair> sorted = canonical_order(input);
  const std::span<const MeasurementPair> measurements(sorted);
  const Weighting w = make_weighting(cfg);

  CalibrationReport report;
  bool guess_warning = false;
  if (guess) {
    report.extrinsic = *guess;
  } else {
    const InitialGuess ig = initial_guess(measurements);
    report.extrinsic = ig.pose;
    guess_warning = ig.condition_warning;
  }

  double cost = robust_cost(report.extrinsic, measurements, w);
  report.chi2_trace.push_back(cost);
  double lm = 0.0;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    report.iterations = it + 1;
    const NormalEquations ne = build_normal_equations(report.extrinsic, measurements, w, true);
    const Vector6d spectrum = ascending_spectrum(ne.H);
    if (is_ill_conditioned(spectrum, cfg.conditioning_threshold)) {
      report.hessian_spectrum = spectrum;
      report.condition_warning = true;
      fill_residuals(report, input, w);
      throw SingularSystemError("normal matrix is rank deficient; plane normals do not constrain all 6 DoF",
                                std::move(report));
    }

    Matrix6d H = ne.H;
    H.diagonal() *= 1.0 + lm;
    const Vector6d delta = H.ldlt().solve(-ne.b);
    if (!delta.allFinite()) break;

    const Isometry3 candidate = boxplus(report.extrinsic, Twist6::from_vector(delta));
    const double candidate_cost = robust_cost(candidate, measurements, w);
    const bool small = delta.norm() < cfg.update_tolerance;

    if (candidate_cost <= cost) {
      report.extrinsic = candidate;
      cost = candidate_cost;
      report.chi2_trace.push_back(cost);
      lm = lm * 0.1 < kLevenbergInitial ? 0.0 : lm * 0.1;
    } else if (!small) {
      lm = lm == 0.0 ? kLevenbergInitial : lm * 10.0;
      if (lm > kLevenbergMax) break;
      continue;
    }
    if (small) {
      report.converged = true;
      break;
    }
  }

  const NormalEquations final_ne = build_normal_equations(report.extrinsic, measurements, w, true);
  report.hessian_spectrum = ascending_spectrum(final_ne.H);
  report.condition_warning = guess_warning ||
                             is_ill_conditioned(report.hessian_spectrum, std::sqrt(cfg.conditioning_threshold));
  fill_residuals(report, input, w);
  return report;
}

ConditioningDiagnosis conditioning_check(std::span<const MeasurementPair> input, double conditioning_threshold) {
  ConditioningDiagnosis diag;
  const std::vector<MeasurementPair> measurements = canonical_order(input);
  if (measurements.empty()) {
    diag.warning = true;
    return diag;
  }
  const Isometry3 X = measurements.size() >= 3 ? initial_guess(measurements).pose : Isometry3::identity();
  const Weighting unit{Eigen::Vector4d::Ones(), std::numeric_limits<double>::infinity()};
  const NormalEquations ne = build_normal_equations(X, measurements, unit, false);
  diag.eigenvalues = ascending_spectrum(ne.H);
  const double top = diag.eigenvalues(5);
  for (int k = 0; k < 6; ++k) diag.rank += diag.eigenvalues(k) > conditioning_threshold * top ? 1 : 0;
  diag.warning = is_ill_conditioned(diag.eigenvalues, conditioning_threshold);
  return diag;
}

ExtrinsicError evaluate_error(const Isometry3& estimate, const Isometry3& ground_truth) {
  const Isometry3 rel = ground_truth.inverse() * estimate;
  return {rel.translation.norm(), so3_log(rel.rotation).norm()};
}

}  // namespace planecal
