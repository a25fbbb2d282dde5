#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace planecal {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Matrix46d = Eigen::Matrix<double, 4, 6>;

namespace tolerance {
inline constexpr double kUnitNorm = 1e-9;
inline constexpr double kOrthonormal = 1e-9;
inline constexpr double kDegenerateNormal = 1e-9;
}  // namespace tolerance

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Rodrigues exponential of an axis-angle vector.
Eigen::Matrix3d so3_exp(const Eigen::Vector3d& omega);

/// Axis-angle vector of a rotation matrix, angle in [0, pi].
Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation);

/// Rigid transform acting on points as x' = R x + t.
struct Isometry3 {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Isometry3 identity() { return {}; }
  static Isometry3 from_matrix(const Eigen::Matrix4d& m);

  Eigen::Matrix4d matrix() const;
  Isometry3 inverse() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation * p + translation; }

  /// True when R is orthonormal with det +1 within `tol`.
  bool is_valid(double tol = tolerance::kOrthonormal) const;

  friend Isometry3 operator*(const Isometry3& a, const Isometry3& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  }
};

/// Local perturbation, ordered [d_translation | d_rotation].
struct Twist6 {
  Eigen::Vector3d d_translation = Eigen::Vector3d::Zero();
  Eigen::Vector3d d_rotation = Eigen::Vector3d::Zero();

  static Twist6 from_vector(const Vector6d& v) { return {v.head<3>(), v.tail<3>()}; }
  Vector6d vector() const {
    Vector6d v;
    v << d_translation, d_rotation;
    return v;
  }
};

/// Plane n.x + d = 0 with unit normal, stored in canonical sign: d <= 0, and
/// for d == 0 the first nonzero normal component is positive.
class Plane {
 public:
  /// Normalizes and sign-canonicalizes. Throws DegenerateNormal for |n| <= 1e-9.
  static Plane canonicalize(const Eigen::Vector3d& raw_normal, double raw_dist);

  /// Adopts already-canonical coefficients bit-for-bit; throws when they are not.
  static Plane from_canonical(const Eigen::Vector3d& normal, double dist);

  const Eigen::Vector3d& normal() const noexcept { return normal_; }
  double dist() const noexcept { return dist_; }

  /// [n; d]
  Eigen::Vector4d coeffs() const;

  /// Signed distance of a point, positive on the side the normal points to.
  double signed_distance(const Eigen::Vector3d& p) const { return normal_.dot(p) + dist_; }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  Plane(const Eigen::Vector3d& n, double d) : normal_(n), dist_(d) {}

  Eigen::Vector3d normal_ = Eigen::Vector3d::UnitZ();
  double dist_ = 0.0;
};

struct PlaneError {
  double e_dist = 0.0;
  Eigen::Vector3d e_normal = Eigen::Vector3d::Zero();

  /// [e_dist; e_normal]
  Eigen::Vector4d vector() const {
    Eigen::Vector4d v;
    v << e_dist, e_normal;
    return v;
  }
};

/// True when the raw coefficient sign flips under canonicalization.
bool requires_sign_flip(const Eigen::Vector3d& normal, double dist);

Plane transform_plane(const Isometry3& X, const Plane& pi);

/// Left-multiplicative chart: <exp(w) R ; exp(w) t + v>.
Isometry3 boxplus(const Isometry3& X, const Twist6& delta);

/// d(transform_plane(X [+] delta, pi)) / d delta at delta = 0.
/// Rows are [n (3); d (1)], columns [d_translation | d_rotation].
Matrix46d transform_jacobian(const Isometry3& X, const Plane& pi);

Eigen::Vector3d closest_point(const Plane& pi);

PlaneError plane_error(const Plane& pi_i, const Plane& pi_j);

/// d plane_error(pi_i, pi_j) / d [n_i; d_i], rows [e_dist; e_normal].
Eigen::Matrix4d plane_error_jacobian(const Plane& pi_i, const Plane& pi_j);

}  // namespace planecal
