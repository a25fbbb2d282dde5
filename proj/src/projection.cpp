#include "planecal/projection.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "planecal/errors.hpp"

namespace planecal {

namespace {

constexpr int kUndistortMaxIterations = 20;
constexpr double kUndistortTolerance = 1e-10;

}  // namespace

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
  if (width < 1 || height < 1) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw Error(ErrorCode::InvalidArgument, "principal point outside the image");
  }
  for (double k : distortion) {
    if (!std::isfinite(k)) throw Error(ErrorCode::InvalidArgument, "distortion coefficients must be finite");
  }
}

bool CameraIntrinsics::has_distortion() const {
  for (double k : distortion) {
    if (k != 0.0) return true;
  }
  return false;
}

LidarProjectionParams LidarProjectionParams::equiangular(int n_rings, int width) {
  LidarProjectionParams p;
  p.n_rings = n_rings;
  p.width = width;
  p.azimuth_resolution = width / (2.0 * std::numbers::pi);
  p.azimuth_offset = width / 2.0;
  return p;
}

void LidarProjectionParams::validate() const {
  if (n_rings < 1) throw Error(ErrorCode::InvalidArgument, "n_rings must be at least 1");
  if (width < 1) throw Error(ErrorCode::InvalidArgument, "width must be at least 1");
  if (std::abs(width - std::round(2.0 * std::numbers::pi * azimuth_resolution)) > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "width inconsistent with azimuth resolution");
  }
}

const RangePixel& RangeImage::at(PixelCoord px) const {
  if (!in_bounds(px)) {
    throw Error(ErrorCode::OutOfBounds, "pixel outside range image",
                "(" + std::to_string(px.ring) + ", " + std::to_string(px.column) + ")");
  }
  return pixels_[static_cast<std::size_t>(px.ring) * cols_ + px.column];
}

RangePixel& RangeImage::at(PixelCoord px) {
  return const_cast<RangePixel&>(std::as_const(*this).at(px));
}

std::size_t RangeImage::populated() const {
  std::size_t n = 0;
  for (const auto& p : pixels_) n += p.point_index.has_value();
  return n;
}

Eigen::Vector2d pinhole_project(const CameraIntrinsics& intr, const Eigen::Vector3d& p) {
  if (!(p.z() > 1e-9)) throw Error(ErrorCode::BehindCamera, "point is behind the camera");
  return {intr.fx * p.x() / p.z() + intr.cx, intr.fy * p.y() / p.z() + intr.cy};
}

Eigen::Vector2d distort_normalized(const CameraIntrinsics& intr, const Eigen::Vector2d& xy) {
  const auto& [k1, k2, p1, p2, k3] = intr.distortion;
  const double x = xy.x();
  const double y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  return {x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
          y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y};
}

Eigen::Vector2d undistort_pixel(const CameraIntrinsics& intr, const Eigen::Vector2d& pixel) {
  const Eigen::Vector2d target((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy);
  if (!intr.has_distortion()) return target;

  const auto& [k1, k2, p1, p2, k3] = intr.distortion;
  // Newton iterations on distort(x) = target, starting from the distorted point.
  Eigen::Vector2d xy = target;
  for (int it = 0; it < kUndistortMaxIterations; ++it) {
    const double x = xy.x();
    const double y = xy.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
    const double dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);

    Eigen::Matrix2d J;
    J(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x;
    J(0, 1) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
    J(1, 0) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
    J(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x;

    const Eigen::Vector2d residual = distort_normalized(intr, xy) - target;
    if (std::abs(J.determinant()) < 1e-12) break;
    const Eigen::Vector2d step = J.partialPivLu().solve(residual);
    xy -= step;
    if (!xy.allFinite()) break;
    // a root where the model folds over is not the ray that produced the pixel
    if (step.norm() < kUndistortTolerance) {
      if (!(radial > 0.0 && radial + 2.0 * r2 * dradial > 0.0)) break;
      return xy;
    }
  }
  throw Error(ErrorCode::NonConvergence, "undistortion did not converge",
              "pixel (" + std::to_string(pixel.x()) + ", " + std::to_string(pixel.y()) + ")");
}

int azimuth_column(const LidarProjectionParams& params, const Eigen::Vector3d& p) {
  const double u = params.azimuth_resolution * std::atan2(p.y(), p.x()) + params.azimuth_offset;
  const long col = std::lround(u) % params.width;
  return static_cast<int>(col < 0 ? col + params.width : col);
}

RangeImage project_by_id(const PointCloud& cloud, const LidarProjectionParams& params) {
  params.validate();
  if (cloud.points.empty()) throw Error(ErrorCode::EmptyCloud, "point cloud is empty");

  RangeImage img(params.n_rings, params.width);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const LidarPoint& pt = cloud.points[i];
    int ring = 0;
    if (pt.ring) {
      ring = *pt.ring;
    } else if (cloud.ordered) {
      ring = static_cast<int>(i / static_cast<std::size_t>(params.width));
    } else {
      throw Error(ErrorCode::MissingRing, "point has no ring id and the cloud is unordered",
                  "point " + std::to_string(i));
    }
    if (ring < 0 || ring >= params.n_rings) {
      throw Error(ErrorCode::RingOutOfRange, "ring id out of range", "point " + std::to_string(i));
    }
    const double range = pt.position.norm();
    if (!std::isfinite(range) || range <= 0.0) continue;

    RangePixel& px = img.at({ring, azimuth_column(params, pt.position)});
    if (!px.point_index || range < px.range) {
      px.point_index = i;
      px.range = range;
      px.intensity = pt.intensity;
    }
  }
  return img;
}

std::optional<Eigen::Vector3d> pixel_to_point(const RangeImage& img, const PointCloud& cloud, PixelCoord px) {
  const RangePixel& p = img.at(px);
  if (!p.point_index) return std::nullopt;
  return cloud.points.at(*p.point_index).position;
}

}  // namespace planecal
