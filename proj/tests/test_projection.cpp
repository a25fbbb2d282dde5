#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "planecal/errors.hpp"
#include "planecal/projection.hpp"
#include "support.hpp"

using namespace planecal;
using namespace planecal::test;

namespace {

CameraIntrinsics vga() {
  CameraIntrinsics k;
  k.fx = k.fy = 600;
  k.cx = 320;
  k.cy = 240;
  k.width = 640;
  k.height = 480;
  return k;
}

// One point per (ring, column) of an equiangular scan, at the column center.
PointCloud full_scan(const LidarProjectionParams& p) {
  PointCloud cloud;
  for (int r = 0; r < p.n_rings; ++r) {
    for (int c = 0; c < p.width; ++c) {
      const double az = (c - p.azimuth_offset) / p.azimuth_resolution;
      const double el = -0.2 + 0.4 * r / std::max(1, p.n_rings - 1);
      const double range = 5.0 + 0.01 * c;
      cloud.points.push_back({range * Eigen::Vector3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                                                      std::sin(el)),
                              r, 0.5});
    }
  }
  return cloud;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("pinhole_project examples") {
  CameraIntrinsics unit;
  CHECK(pinhole_project(unit, {0, 0, 1}) == Eigen::Vector2d(0, 0));
  CHECK(pinhole_project(vga(), {0, 0, 5}) == Eigen::Vector2d(320, 240));
  CHECK(pinhole_project(vga(), {1, -1, 2}) == Eigen::Vector2d(620, -60));
  CHECK(code_of([] { pinhole_project(vga(), {0, 0, 0}); }) == ErrorCode::BehindCamera);
  CHECK(code_of([] { pinhole_project(vga(), {0, 0, -1}); }) == ErrorCode::BehindCamera);
}

TEST_CASE("undistort_pixel examples") {
  const CameraIntrinsics k = vga();
  CHECK(undistort_pixel(k, {k.cx, k.cy}).isZero());
  CHECK(undistort_pixel(k, {k.cx + k.fx, k.cy}) == Eigen::Vector2d(1, 0));

  CameraIntrinsics d = vga();
  d.distortion = {-0.1, 0, 0, 0, 0};
  const Eigen::Vector2d ray(0.3, 0.2);
  const Eigen::Vector2d dn = distort_normalized(d, ray);
  const Eigen::Vector2d px(d.fx * dn.x() + d.cx, d.fy * dn.y() + d.cy);
  CHECK((undistort_pixel(d, px) - ray).norm() < 1e-8);
}

TEST_CASE("undistort reports non-convergence far outside the invertible region") {
  CameraIntrinsics d = vga();
  d.distortion = {-0.3, 0.0, 0.0, 0.0, 0.0};
  CHECK(code_of([&] { undistort_pixel(d, {d.cx + 50 * d.fx, d.cy}); }) == ErrorCode::NonConvergence);
}

TEST_CASE("pinhole round trip is parallel to the source ray") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> xy(-0.6, 0.6);
  std::uniform_real_distribution<double> z(0.5, 20.0);
  std::uniform_real_distribution<double> coeff(-0.3, 0.3);

  for (int i = 0; i < 1000; ++i) {
    const double depth = z(rng);
    const Eigen::Vector3d p(xy(rng) * depth, xy(rng) * depth, depth);
    const Eigen::Vector2d ray = undistort_pixel(vga(), pinhole_project(vga(), p));
    CHECK(angle_between(Eigen::Vector3d(ray.x(), ray.y(), 1.0), p) < 1e-8);
  }

  CameraIntrinsics d = vga();
  int checked = 0;
  while (checked < 500) {
    // small coefficients keep the model monotone over the sampled field of view
    d.distortion = {coeff(rng), coeff(rng) * 0.3, coeff(rng) * 0.01, coeff(rng) * 0.01, coeff(rng) * 0.1};
    const double depth = z(rng);
    const Eigen::Vector3d p(xy(rng) * depth, xy(rng) * depth, depth);
    const Eigen::Vector2d dn = distort_normalized(d, {p.x() / p.z(), p.y() / p.z()});
    const Eigen::Vector2d px(d.fx * dn.x() + d.cx, d.fy * dn.y() + d.cy);
    Eigen::Vector2d ray;
    try {
      ray = undistort_pixel(d, px);
    } catch (const Error&) {
      continue;
    }
    CHECK(angle_between(Eigen::Vector3d(ray.x(), ray.y(), 1.0), p) < 1e-6);
    ++checked;
  }
}

TEST_CASE("intrinsics validation") {
  CameraIntrinsics k = vga();
  CHECK_NOTHROW(k.validate());
  k.fx = 0;
  CHECK(code_of([&] { k.validate(); }) == ErrorCode::InvalidArgument);
  k = vga();
  k.cx = 640;
  CHECK(code_of([&] { k.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("project_by_id examples") {
  const auto params = LidarProjectionParams::equiangular(16, 1024);
  PointCloud cloud;
  cloud.points.push_back({{1, 0, 0}, 3, 0.0});
  const RangeImage img = project_by_id(cloud, params);
  CHECK(img.rows() == 16);
  CHECK(img.cols() == 1024);
  CHECK(img.at({3, 512}).point_index == std::optional<std::size_t>(0));
  CHECK(img.populated() == 1);

  // behind the sensor, just above the seam: u = fx * pi + cx wraps to column 0
  CHECK(azimuth_column(params, {-1, 1e-12, 0}) == 0);
  CHECK(azimuth_column(params, {-1, -1e-12, 0}) == 0);

  PointCloud collision;
  collision.points.push_back({{5, 0, 0}, 2, 1.0});
  collision.points.push_back({{2, 0, 0}, 2, 2.0});
  collision.points.push_back({{7, 0, 0}, 2, 3.0});
  const RangeImage c = project_by_id(collision, params);
  CHECK(c.at({2, 512}).point_index == std::optional<std::size_t>(1));
  CHECK(c.at({2, 512}).range == 2.0);
  CHECK(c.at({2, 512}).intensity == 2.0);
}

TEST_CASE("project_by_id errors") {
  const auto params = LidarProjectionParams::equiangular(4, 64);
  CHECK(code_of([&] { project_by_id(PointCloud{}, params); }) == ErrorCode::EmptyCloud);

  PointCloud high;
  high.points.push_back({{1, 0, 0}, 4, 0.0});
  CHECK(code_of([&] { project_by_id(high, params); }) == ErrorCode::RingOutOfRange);

  PointCloud negative;
  negative.points.push_back({{1, 0, 0}, -1, 0.0});
  CHECK(code_of([&] { project_by_id(negative, params); }) == ErrorCode::RingOutOfRange);

  PointCloud unordered;
  unordered.points.push_back({{1, 0, 0}, std::nullopt, 0.0});
  CHECK(code_of([&] { project_by_id(unordered, params); }) == ErrorCode::MissingRing);

  LidarProjectionParams bad = params;
  bad.width = 100;
  CHECK(code_of([&] { project_by_id(high, bad); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("ordered clouds take the ring from the point index") {
  const auto params = LidarProjectionParams::equiangular(4, 64);
  PointCloud cloud = full_scan(params);
  for (auto& p : cloud.points) p.ring.reset();
  cloud.ordered = true;
  const RangeImage img = project_by_id(cloud, params);
  CHECK(img.populated() == 4 * 64);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 64; ++c) {
      const std::size_t idx = *img.at({r, c}).point_index;
      CHECK(idx / 64 == static_cast<std::size_t>(r));
    }
  }
}

TEST_CASE("a full equiangular scan has no holes") {
  for (const auto& [rings, width] : {std::pair{16, 1024}, std::pair{64, 1024}, std::pair{32, 2048}, std::pair{1, 7}}) {
    const auto params = LidarProjectionParams::equiangular(rings, width);
    const PointCloud cloud = full_scan(params);
    const RangeImage img = project_by_id(cloud, params);
    CHECK(img.populated() == static_cast<std::size_t>(rings * width));
    for (int r = 0; r < rings; ++r) {
      for (int c = 0; c < width; ++c) {
        const auto idx = img.at({r, c}).point_index;
        REQUIRE(idx);
        CHECK(*idx == static_cast<std::size_t>(r * width + c));
        CHECK(img.at({r, c}).range > 0.0);
      }
    }
  }
}

TEST_CASE("columns are monotone in azimuth") {
  const auto params = LidarProjectionParams::equiangular(1, 1024);
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> a(-std::numbers::pi, std::numbers::pi);
  std::vector<double> az(5000);
  for (auto& x : az) x = a(rng);
  az.push_back(std::numbers::pi);
  std::sort(az.begin(), az.end());

  // unwrap modulo width: the only allowed decrease is the single wrap at the seam
  int wraps = 0;
  int prev = -1;
  for (double x : az) {
    const int col = azimuth_column(params, {std::cos(x), std::sin(x), 0});
    CHECK(col >= 0);
    CHECK(col < 1024);
    if (prev >= 0 && col < prev) {
      ++wraps;
      CHECK(prev == 1023);
      CHECK(col == 0);
    }
    prev = col;
  }
  CHECK(wraps <= 1);
}

TEST_CASE("pixel_to_point") {
  const auto params = LidarProjectionParams::equiangular(4, 64);
  PointCloud cloud;
  cloud.points.push_back({{0.1234567890123, 0.0, -0.5}, 1, 0.0});
  const RangeImage img = project_by_id(cloud, params);
  const auto p = pixel_to_point(img, cloud, {1, 32});
  REQUIRE(p);
  CHECK(*p == cloud.points[0].position);
  CHECK_FALSE(pixel_to_point(img, cloud, {0, 0}));
  CHECK(code_of([&] { pixel_to_point(img, cloud, {-1, 0}); }) == ErrorCode::OutOfBounds);
  CHECK(code_of([&] { pixel_to_point(img, cloud, {0, 64}); }) == ErrorCode::OutOfBounds);
}
