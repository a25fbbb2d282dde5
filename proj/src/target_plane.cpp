#include "planecal/target_plane.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "planecal/errors.hpp"

namespace planecal {

namespace {

constexpr int kPoseMaxIterations = 50;
constexpr double kPoseUpdateTolerance = 1e-10;
constexpr int kRefitRounds = 3;

bool lexicographic_less(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  return a.z() < b.z();
}

std::vector<std::size_t> consensus(std::span<const Eigen::Vector3d> pts, const Eigen::Vector3d& n, double d,
                                   double threshold) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (std::abs(n.dot(pts[i]) + d) < threshold) idx.push_back(i);
  }
  return idx;
}

std::vector<Eigen::Vector3d> gather(std::span<const Eigen::Vector3d> pts, const std::vector<std::size_t>& idx) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(pts[i]);
  return out;
}

// Hartley normalization: centroid to origin, mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double spread = 0.0;
  for (const auto& p : pts) spread += (p - mean).norm();
  spread /= static_cast<double>(pts.size());
  const double s = spread > 0.0 ? std::sqrt(2.0) / spread : 1.0;
  Eigen::Matrix3d T;
  T << s, 0.0, -s * mean.x(),
       0.0, s, -s * mean.y(),
       0.0, 0.0, 1.0;
  return T;
}

double reprojection_cost(const Isometry3& pose, const std::vector<Eigen::Vector3d>& model,
                         const std::vector<Eigen::Vector2d>& observed) {
  double cost = 0.0;
  for (std::size_t k = 0; k < model.size(); ++k) {
    const Eigen::Vector3d p = pose.apply(model[k]);
    if (!(p.z() > 0.0)) return std::numeric_limits<double>::infinity();
    cost += (p.head<2>() / p.z() - observed[k]).squaredNorm();
  }
  return cost;
}

}  // namespace

void BoardSpec::validate() const {
  if (rows < 2 || cols < 2) throw Error(ErrorCode::InvalidArgument, "board needs at least 2x2 interior corners");
  if (!(square_size > 0.0)) throw Error(ErrorCode::InvalidArgument, "square size must be positive");
}

std::vector<Eigen::Vector3d> BoardSpec::corner_model() const {
  std::vector<Eigen::Vector3d> model;
  model.reserve(corner_count());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) model.emplace_back(c * square_size, r * square_size, 0.0);
  }
  return model;
}

Eigen::Vector4d BoardSpec::extent() const {
  return {-square_size, -square_size, cols * square_size, rows * square_size};
}

void CornerSet::validate() const {
  board.validate();
  if (corners.size() != board.corner_count()) {
    throw Error(ErrorCode::SchemaMismatch, "corner count does not match board",
                "expected " + std::to_string(board.corner_count()) + ", got " + std::to_string(corners.size()));
  }
  for (std::size_t i = 0; i < corners.size(); ++i) {
    if (!corners[i].allFinite()) {
      throw Error(ErrorCode::SchemaMismatch, "corner is not finite", "corners[" + std::to_string(i) + "]");
    }
  }
}

void RansacConfig::validate() const {
  if (max_iterations < 1) throw Error(ErrorCode::InvalidArgument, "max_iterations must be at least 1");
  if (!(inlier_threshold > 0.0)) throw Error(ErrorCode::InvalidArgument, "inlier_threshold must be positive");
  if (!(min_inlier_ratio > 0.0 && min_inlier_ratio <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "min_inlier_ratio must be in (0, 1]");
  }
}

Patch collect_patch(const RangeImage& img, const PointCloud& cloud, const PatchSelection& sel) {
  if (!img.in_bounds(sel.seed)) {
    throw Error(ErrorCode::OutOfBounds, "patch seed outside range image",
                "(" + std::to_string(sel.seed.ring) + ", " + std::to_string(sel.seed.column) + ")");
  }
  if (!(sel.radius >= 1.0)) throw Error(ErrorCode::InvalidArgument, "patch radius must be at least 1");

  Patch patch;
  const int reach = static_cast<int>(std::floor(sel.radius));
  const int row_lo = std::max(0, sel.seed.ring - reach);
  const int row_hi = std::min(img.rows() - 1, sel.seed.ring + reach);
  const double radius_sq = sel.radius * sel.radius;
  for (int row = row_lo; row <= row_hi; ++row) {
    const double dr = row - sel.seed.ring;
    for (int col = 0; col < img.cols(); ++col) {
      const int raw = std::abs(col - sel.seed.column);
      const double dc = std::min(raw, img.cols() - raw);
      if (dr * dr + dc * dc > radius_sq) continue;
      const RangePixel& px = img.at({row, col});
      if (!px.point_index) continue;
      patch.points.push_back(cloud.points.at(*px.point_index).position);
      patch.pixels.push_back({row, col});
    }
  }
  if (patch.points.empty()) throw Error(ErrorCode::EmptyPatch, "no valid points inside the selected patch");
  return patch;
}

PlaneFit fit_plane(std::span<const Eigen::Vector3d> points) {
  if (points.size() < 3) throw Error(ErrorCode::InsufficientPoints, "plane fit needs at least 3 points");
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
  for (const auto& p : points) {
    const Eigen::Vector3d q = p - centroid;
    scatter += q * q.transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
  const Eigen::Vector3d n = eig.eigenvectors().col(0);
  const Plane plane = Plane::canonicalize(n, -n.dot(centroid));
  double sq = 0.0;
  for (const auto& p : points) sq += std::pow(plane.signed_distance(p), 2);
  return {plane, std::sqrt(sq / static_cast<double>(points.size()))};
}

PlaneObservation ransac_plane(std::span<const Eigen::Vector3d> points, const RansacConfig& cfg) {
  cfg.validate();
  const std::size_t n = points.size();
  if (n < 3) throw Error(ErrorCode::InsufficientPoints, "RANSAC needs at least 3 points");

  // Sampling runs over a canonically sorted copy so the result does not depend
  // on input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lexicographic_less(points[a], points[b]); });
  std::vector<Eigen::Vector3d> sorted = gather(points, order);

  double scale = 0.0;
  for (const auto& p : sorted) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  const double collinear_eps = 1e-12 * std::max(1.0, scale * scale);

  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> best;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const std::size_t a = pick(rng);
    std::size_t b = pick(rng);
    while (b == a) b = pick(rng);
    std::size_t c = pick(rng);
    while (c == a || c == b) c = pick(rng);

    const Eigen::Vector3d normal = (sorted[b] - sorted[a]).cross(sorted[c] - sorted[a]);
    const double len = normal.norm();
    if (len <= collinear_eps) continue;
    const Eigen::Vector3d unit = normal / len;
    auto inliers = consensus(sorted, unit, -unit.dot(sorted[a]), cfg.inlier_threshold);
    if (inliers.size() > best.size()) best = std::move(inliers);
  }

  const auto ratio = [&](std::size_t k) { return static_cast<double>(k) / static_cast<double>(n); };
  if (best.size() < 3 || ratio(best.size()) < cfg.min_inlier_ratio) {
    throw Error(ErrorCode::NoConsensus, "RANSAC found no sufficient consensus",
                "best inliers " + std::to_string(best.size()) + " of " + std::to_string(n));
  }

  PlaneFit fit = fit_plane(gather(sorted, best));
  for (int round = 0; round < kRefitRounds; ++round) {
    auto refined = consensus(sorted, fit.plane.normal(), fit.plane.dist(), cfg.inlier_threshold);
    if (refined == best || refined.size() < 3) break;
    best = std::move(refined);
    fit = fit_plane(gather(sorted, best));
  }
  if (ratio(best.size()) < cfg.min_inlier_ratio) {
    throw Error(ErrorCode::NoConsensus, "refined consensus below minimum inlier ratio");
  }

  PlaneObservation obs;
  obs.plane = fit.plane;
  obs.rms_residual = fit.rms_residual;
  obs.inlier_count = best.size();
  obs.source = PlaneSource::Lidar;
  obs.inliers.reserve(best.size());
  for (std::size_t i : best) obs.inliers.push_back(order[i]);
  std::sort(obs.inliers.begin(), obs.inliers.end());
  return obs;
}

BoardPose board_pose(const CornerSet& corners, const CameraIntrinsics& intr) {
  corners.validate();
  intr.validate();
  const std::vector<Eigen::Vector3d> model = corners.board.corner_model();
  const std::size_t n = model.size();

  std::vector<Eigen::Vector2d> observed;
  observed.reserve(n);
  for (const auto& px : corners.corners) observed.push_back(undistort_pixel(intr, px));

  // DLT homography board (x, y) -> normalized image, on conditioned coordinates.
  std::vector<Eigen::Vector2d> planar;
  planar.reserve(n);
  for (const auto& m : model) planar.push_back(m.head<2>());
  const Eigen::Matrix3d Tb = normalizing_transform(planar);
  const Eigen::Matrix3d Ti = normalizing_transform(observed);

  Eigen::MatrixXd A(2 * n, 9);
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d X = Tb * planar[k].homogeneous();
    const Eigen::Vector3d x = Ti * observed[k].homogeneous();
    A.row(2 * k) << X.x(), X.y(), 1.0, 0.0, 0.0, 0.0, -x.x() * X.x(), -x.x() * X.y(), -x.x();
    A.row(2 * k + 1) << 0.0, 0.0, 0.0, X.x(), X.y(), 1.0, -x.y() * X.x(), -x.y() * X.y(), -x.y();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (!(sv(7) > 1e-8 * sv(0))) {
    throw Error(ErrorCode::HomographyDegenerate, "corner layout does not determine a homography");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::JacobiSVD<Eigen::Matrix3d> hsvd(Hn);
  if (!(hsvd.singularValues()(2) > 1e-8 * hsvd.singularValues()(0))) {
    throw Error(ErrorCode::HomographyDegenerate, "corners are collinear");
  }
  const Eigen::Matrix3d H = Ti.inverse() * Hn * Tb;

  // H ~ [r1 r2 t]
  double lambda = 2.0 / (H.col(0).norm() + H.col(1).norm());
  if (H(2, 2) * lambda < 0.0) lambda = -lambda;
  Eigen::Matrix3d R0;
  R0.col(0) = lambda * H.col(0);
  R0.col(1) = lambda * H.col(1);
  R0.col(2) = R0.col(0).cross(R0.col(1));
  const Eigen::JacobiSVD<Eigen::Matrix3d> rsvd(R0, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d R = rsvd.matrixU() * rsvd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Eigen::Matrix3d U = rsvd.matrixU();
    U.col(2) *= -1.0;
    R = U * rsvd.matrixV().transpose();
  }
  Isometry3 pose{R, lambda * H.col(2)};

  double cost = reprojection_cost(pose, model, observed);
  int it = 0;
  for (; it < kPoseMaxIterations; ++it) {
    Matrix6d JtJ = Matrix6d::Zero();
    Vector6d Jtr = Vector6d::Zero();
    for (std::size_t k = 0; k < n; ++k) {
      const Eigen::Vector3d p = pose.apply(model[k]);
      const double iz = 1.0 / p.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << iz, 0.0, -p.x() * iz * iz,
               0.0, iz, -p.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dp;
      dp << Eigen::Matrix3d::Identity(), -skew(p);
      const Eigen::Matrix<double, 2, 6> J = dproj * dp;
      const Eigen::Vector2d r = p.head<2>() * iz - observed[k];
      JtJ += J.transpose() * J;
      Jtr += J.transpose() * r;
    }
    Vector6d step = JtJ.ldlt().solve(-Jtr);
    if (!step.allFinite()) throw Error(ErrorCode::Divergence, "board pose update is not finite");

    // Halve the step while it increases the cost.
    Isometry3 candidate = boxplus(pose, Twist6::from_vector(step));
    double candidate_cost = reprojection_cost(candidate, model, observed);
    for (int halving = 0; halving < 20 && candidate_cost > cost; ++halving) {
      step *= 0.5;
      candidate = boxplus(pose, Twist6::from_vector(step));
      candidate_cost = reprojection_cost(candidate, model, observed);
    }
    if (candidate_cost > cost) break;
    pose = candidate;
    cost = candidate_cost;
    if (step.norm() < kPoseUpdateTolerance) {
      ++it;
      break;
    }
  }

  if (!pose.is_valid(1e-6) || !std::isfinite(cost)) {
    throw Error(ErrorCode::Divergence, "board pose refinement diverged");
  }
  for (const auto& m : model) {
    if (!(pose.apply(m).z() > 0.0)) throw Error(ErrorCode::Divergence, "board pose places corners behind the camera");
  }
  return {pose, std::sqrt(cost / static_cast<double>(n)), it};
}

PlaneObservation camera_plane(const Isometry3& pose, const BoardSpec& board, double reprojection_rms) {
  PlaneObservation obs;
  obs.plane = transform_plane(pose, Plane::canonicalize(Eigen::Vector3d::UnitZ(), 0.0));
  obs.inlier_count = board.corner_count();
  // Normalized reprojection rms scaled by the board's distance: a rough metric figure.
  obs.rms_residual = reprojection_rms * std::abs(obs.plane.dist());
  obs.source = PlaneSource::Camera;
  return obs;
}

}  // namespace planecal
