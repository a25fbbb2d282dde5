#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "planecal/geometry.hpp"
#include "planecal/solver.hpp"

namespace planecal::test {

// Central tolerances for the test suites.
namespace tol {
inline constexpr double kInvariant = 1e-9;
inline constexpr double kAlgebra = 1e-12;
inline constexpr double kFiniteDiffStep = 1e-6;
inline constexpr double kFiniteDiff = 1e-6;
inline constexpr double kPointSet = 1e-10;
}  // namespace tol

inline Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v = {g(rng), g(rng), g(rng)};
  } while (v.norm() < 1e-6);
  return v.normalized();
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_angle = 3.1) {
  std::uniform_real_distribution<double> a(0.0, max_angle);
  return so3_exp(a(rng) * random_unit(rng));
}

inline Isometry3 random_isometry(std::mt19937_64& rng, double max_translation = 2.0, double max_angle = 3.1) {
  std::uniform_real_distribution<double> t(-max_translation, max_translation);
  Isometry3 X;
  X.rotation = random_rotation(rng, max_angle);
  X.translation = {t(rng), t(rng), t(rng)};
  return X;
}

inline Plane random_plane(std::mt19937_64& rng, double max_dist = 5.0) {
  std::uniform_real_distribution<double> d(-max_dist, max_dist);
  return Plane::canonicalize(random_unit(rng), d(rng));
}

/// Exact plane through three points, canonicalized.
inline Plane plane_through(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c) {
  const Eigen::Vector3d n = (b - a).cross(c - a).normalized();
  return Plane::canonicalize(n, -n.dot(a));
}

/// Point on `pi` offset from its closest point by (u, v) along an in-plane basis.
inline Eigen::Vector3d point_on(const Plane& pi, double u, double v) {
  const Eigen::Vector3d n = pi.normal();
  const Eigen::Vector3d helper = std::abs(n.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  const Eigen::Vector3d e1 = n.cross(helper).normalized();
  const Eigen::Vector3d e2 = n.cross(e1);
  return closest_point(pi) + u * e1 + v * e2;
}

inline double plane_distance(const Plane& a, const Plane& b) {
  return std::max((a.normal() - b.normal()).cwiseAbs().maxCoeff(), std::abs(a.dist() - b.dist()));
}

/// True when the camera origin lies on the same side of the LiDAR-frame plane
/// `pi` as the LiDAR origin, at least `margin` away; both sensors then see the
/// same face and the canonical normals agree.
inline bool same_side(const Isometry3& X, const Plane& pi, double margin = 0.1) {
  return pi.dist() - (X.rotation * pi.normal()).dot(X.translation) < -margin;
}

/// `count` random planes that both sensors of X see from the same side.
inline std::vector<Plane> visible_planes(std::mt19937_64& rng, const Isometry3& X, int count) {
  std::vector<Plane> out;
  while (static_cast<int>(out.size()) < count) {
    const Plane pi = random_plane(rng);
    if (same_side(X, pi) && pi.dist() < -0.1) out.push_back(pi);
  }
  return out;
}

/// Noiseless pairs generated from a ground-truth camera_from_lidar extrinsic.
inline std::vector<MeasurementPair> pairs_from_lidar_planes(const Isometry3& X, const std::vector<Plane>& lidar) {
  std::vector<MeasurementPair> out;
  for (std::size_t i = 0; i < lidar.size(); ++i) {
    out.push_back({lidar[i], transform_plane(X, lidar[i]), "m" + std::to_string(i)});
  }
  return out;
}

inline double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("planecal_test_" + name + "_" + std::to_string(std::random_device{}()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace planecal::test
