#include "planecal/geometry.hpp"

#include <cmath>

#include "planecal/errors.hpp"

namespace planecal {

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  s << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return s;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega) {
  const double theta_sq = omega.squaredNorm();
  const Eigen::Matrix3d w = skew(omega);
  if (theta_sq < 1e-20) {
    return Eigen::Matrix3d::Identity() + w + 0.5 * w * w;
  }
  const double theta = std::sqrt(theta_sq);
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / theta_sq;
  return Eigen::Matrix3d::Identity() + a * w + b * w * w;
}

Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

Isometry3 Isometry3::from_matrix(const Eigen::Matrix4d& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

Eigen::Matrix4d Isometry3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Isometry3 Isometry3::inverse() const {
  const Eigen::Matrix3d rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

bool Isometry3::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

bool requires_sign_flip(const Eigen::Vector3d& normal, double dist) {
  if (dist > 0.0) return true;
  if (dist < 0.0) return false;
  for (int k = 0; k < 3; ++k) {
    if (normal[k] != 0.0) return normal[k] < 0.0;
  }
  return false;
}

Plane Plane::canonicalize(const Eigen::Vector3d& raw_normal, double raw_dist) {
  const double norm = raw_normal.norm();
  if (!(norm > tolerance::kDegenerateNormal) || !std::isfinite(raw_dist)) {
    throw Error(ErrorCode::DegenerateNormal, "plane normal is degenerate or non-finite");
  }
  Eigen::Vector3d n = raw_normal / norm;
  double d = raw_dist / norm;
  if (!std::isfinite(d)) throw Error(ErrorCode::DegenerateNormal, "plane distance overflows after normalization");
  if (requires_sign_flip(n, d)) {
    n = -n;
    d = -d;
  }
  // -0.0 would round-trip as a distinct value through text formats
  if (d == 0.0) d = 0.0;
  return {n, d};
}

Plane Plane::from_canonical(const Eigen::Vector3d& normal, double dist) {
  if (!normal.allFinite() || !std::isfinite(dist) ||
      std::abs(normal.norm() - 1.0) > tolerance::kUnitNorm) {
    throw Error(ErrorCode::DegenerateNormal, "plane normal is not unit length");
  }
  if (requires_sign_flip(normal, dist)) {
    throw Error(ErrorCode::InvalidArgument, "plane coefficients are not in canonical sign");
  }
  return {normal, dist};
}

Eigen::Vector4d Plane::coeffs() const {
  Eigen::Vector4d c;
  c << normal_, dist_;
  return c;
}

Plane transform_plane(const Isometry3& X, const Plane& pi) {
  const Eigen::Vector3d n = X.rotation * pi.normal();
  return Plane::canonicalize(n, pi.dist() - n.dot(X.translation));
}

Isometry3 boxplus(const Isometry3& X, const Twist6& delta) {
  const Eigen::Matrix3d dR = so3_exp(delta.d_rotation);
  return {dR * X.rotation, dR * X.translation + delta.d_translation};
}

Matrix46d transform_jacobian(const Isometry3& X, const Plane& pi) {
  const Eigen::Vector3d rn = X.rotation * pi.normal();
  Matrix46d J = Matrix46d::Zero();
  J.block<3, 3>(0, 3) = -skew(rn);
  J.block<1, 3>(3, 0) = -rn.transpose();
  if (requires_sign_flip(rn, pi.dist() - rn.dot(X.translation))) J = -J;
  return J;
}

Eigen::Vector3d closest_point(const Plane& pi) { return -pi.normal() * pi.dist(); }

PlaneError plane_error(const Plane& pi_i, const Plane& pi_j) {
  PlaneError e;
  e.e_dist = pi_i.normal().dot(closest_point(pi_i) - closest_point(pi_j));
  e.e_normal = pi_j.normal() - pi_i.normal();
  return e;
}

Eigen::Matrix4d plane_error_jacobian(const Plane& pi_i, const Plane& pi_j) {
  const Eigen::Vector3d& ni = pi_i.normal();
  const Eigen::Vector3d& nj = pi_j.normal();
  Eigen::Matrix4d J = Eigen::Matrix4d::Zero();
  J.block<1, 3>(0, 0) = (-2.0 * pi_i.dist() * ni + pi_j.dist() * nj).transpose();
  J(0, 3) = -ni.squaredNorm();
  J.block<3, 3>(1, 0) = -Eigen::Matrix3d::Identity();
  return J;
}

}  // namespace planecal
