#include <pybind11/eigen.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "planecal/geometry.hpp"
#include "planecal/io.hpp"
#include "planecal/solver.hpp"
#include "planecal/synth.hpp"
#include "planecal/target_plane.hpp"

namespace py = pybind11;
using namespace planecal;

namespace {

std::vector<Eigen::Vector3d> rows_to_points(const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>& pts) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(static_cast<std::size_t>(pts.rows()));
  for (Eigen::Index i = 0; i < pts.rows(); ++i) out.emplace_back(pts.row(i).transpose());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Plane-based LiDAR-camera extrinsic calibration";

  static py::exception<Error> error_type(m, "Error", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type.ptr())(e.what());
      exc.attr("code") = std::string(to_string(e.code()));
      exc.attr("details") = e.details();
      PyErr_SetObject(error_type.ptr(), exc.ptr());
    }
  });

  py::class_<Isometry3>(m, "Isometry3")
      .def(py::init<>())
      .def(py::init([](const Eigen::Matrix3d& R, const Eigen::Vector3d& t) { return Isometry3{R, t}; }),
           py::arg("rotation"), py::arg("translation"))
      .def_static("from_matrix", &Isometry3::from_matrix)
      .def_readwrite("rotation", &Isometry3::rotation)
      .def_readwrite("translation", &Isometry3::translation)
      .def("matrix", &Isometry3::matrix)
      .def("inverse", &Isometry3::inverse)
      .def("apply", &Isometry3::apply)
      .def("__mul__", [](const Isometry3& a, const Isometry3& b) { return a * b; });

  py::class_<Plane>(m, "Plane")
      .def(py::init([](const Eigen::Vector3d& n, double d) { return Plane::canonicalize(n, d); }), py::arg("normal"),
           py::arg("dist"))
      .def_property_readonly("normal", &Plane::normal)
      .def_property_readonly("dist", &Plane::dist)
      .def("signed_distance", &Plane::signed_distance)
      .def(py::self == py::self)
      .def("__repr__", [](const Plane& p) {
        return "Plane(normal=[" + std::to_string(p.normal().x()) + ", " + std::to_string(p.normal().y()) + ", " +
               std::to_string(p.normal().z()) + "], dist=" + std::to_string(p.dist()) + ")";
      });

  m.def("transform_plane", &transform_plane, py::arg("X"), py::arg("plane"));
  m.def("transform_jacobian", &transform_jacobian, py::arg("X"), py::arg("plane"));
  m.def("closest_point", &closest_point);
  m.def("plane_error", [](const Plane& a, const Plane& b) { return Eigen::Vector4d(plane_error(a, b).vector()); });
  m.def("boxplus", [](const Isometry3& X, const Vector6d& twist) { return boxplus(X, Twist6::from_vector(twist)); },
        py::arg("X"), py::arg("twist"));
  m.def("so3_exp", &so3_exp);
  m.def("so3_log", &so3_log);

  py::class_<MeasurementPair>(m, "MeasurementPair")
      .def(py::init([](const Plane& l, const Plane& c, std::string id) { return MeasurementPair{l, c, std::move(id)}; }),
           py::arg("lidar_plane"), py::arg("camera_plane"), py::arg("id") = "")
      .def_readwrite("lidar_plane", &MeasurementPair::lidar_plane)
      .def_readwrite("camera_plane", &MeasurementPair::camera_plane)
      .def_readwrite("id", &MeasurementPair::id);

  py::class_<SolverConfig>(m, "SolverConfig")
      .def(py::init<>())
      .def_readwrite("max_iterations", &SolverConfig::max_iterations)
      .def_readwrite("update_tolerance", &SolverConfig::update_tolerance)
      .def_readwrite("huber_delta", &SolverConfig::huber_delta)
      .def_readwrite("normal_weight", &SolverConfig::normal_weight)
      .def_readwrite("dist_weight", &SolverConfig::dist_weight)
      .def_readwrite("conditioning_threshold", &SolverConfig::conditioning_threshold);

  py::class_<MeasurementResidual>(m, "MeasurementResidual")
      .def_readonly("id", &MeasurementResidual::id)
      .def_readonly("residual_norm", &MeasurementResidual::residual_norm)
      .def_readonly("weight", &MeasurementResidual::weight);

  py::class_<CalibrationReport>(m, "CalibrationReport")
      .def_readonly("extrinsic", &CalibrationReport::extrinsic)
      .def_readonly("per_measurement", &CalibrationReport::per_measurement)
      .def_readonly("chi2_trace", &CalibrationReport::chi2_trace)
      .def_readonly("hessian_spectrum", &CalibrationReport::hessian_spectrum)
      .def_readonly("converged", &CalibrationReport::converged)
      .def_readonly("condition_warning", &CalibrationReport::condition_warning)
      .def_readonly("iterations", &CalibrationReport::iterations);

  py::class_<ConditioningDiagnosis>(m, "ConditioningDiagnosis")
      .def_readonly("eigenvalues", &ConditioningDiagnosis::eigenvalues)
      .def_readonly("rank", &ConditioningDiagnosis::rank)
      .def_readonly("warning", &ConditioningDiagnosis::warning);

  m.def(
      "calibrate",
      [](const std::vector<MeasurementPair>& ms, const SolverConfig& cfg, const std::optional<Isometry3>& guess) {
        py::gil_scoped_release release;
        return calibrate(ms, cfg, guess);
      },
      py::arg("measurements"), py::arg("config") = SolverConfig{}, py::arg("initial_guess") = std::nullopt);
  m.def(
      "initial_guess", [](const std::vector<MeasurementPair>& ms) { return initial_guess(ms).pose; },
      py::arg("measurements"));
  m.def(
      "conditioning_check",
      [](const std::vector<MeasurementPair>& ms, double thr) { return conditioning_check(ms, thr); },
      py::arg("measurements"), py::arg("threshold") = SolverConfig{}.conditioning_threshold);
  m.def(
      "evaluate_error",
      [](const Isometry3& est, const Isometry3& gt) {
        const ExtrinsicError e = evaluate_error(est, gt);
        return py::make_tuple(e.translation, e.rotation);
      },
      py::arg("estimate"), py::arg("ground_truth"));

  py::class_<RansacConfig>(m, "RansacConfig")
      .def(py::init<>())
      .def_readwrite("max_iterations", &RansacConfig::max_iterations)
      .def_readwrite("inlier_threshold", &RansacConfig::inlier_threshold)
      .def_readwrite("min_inlier_ratio", &RansacConfig::min_inlier_ratio)
      .def_readwrite("rng_seed", &RansacConfig::rng_seed);

  py::class_<PlaneObservation>(m, "PlaneObservation")
      .def_readonly("plane", &PlaneObservation::plane)
      .def_readonly("inlier_count", &PlaneObservation::inlier_count)
      .def_readonly("rms_residual", &PlaneObservation::rms_residual)
      .def_readonly("inliers", &PlaneObservation::inliers);

  m.def(
      "ransac_plane",
      [](const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>& pts, const RansacConfig& cfg) {
        const auto points = rows_to_points(pts);
        return ransac_plane(points, cfg);
      },
      py::arg("points"), py::arg("config") = RansacConfig{});
  m.def(
      "fit_plane",
      [](const Eigen::Ref<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>>& pts) {
        const auto points = rows_to_points(pts);
        const PlaneFit f = fit_plane(points);
        return py::make_tuple(f.plane, f.rms_residual);
      },
      py::arg("points"));

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init<>())
      .def_readwrite("fx", &CameraIntrinsics::fx)
      .def_readwrite("fy", &CameraIntrinsics::fy)
      .def_readwrite("cx", &CameraIntrinsics::cx)
      .def_readwrite("cy", &CameraIntrinsics::cy)
      .def_readwrite("distortion", &CameraIntrinsics::distortion)
      .def_readwrite("width", &CameraIntrinsics::width)
      .def_readwrite("height", &CameraIntrinsics::height);

  py::class_<BoardSpec>(m, "BoardSpec")
      .def(py::init<>())
      .def_readwrite("rows", &BoardSpec::rows)
      .def_readwrite("cols", &BoardSpec::cols)
      .def_readwrite("square_size", &BoardSpec::square_size);

  m.def(
      "board_pose",
      [](const std::vector<Eigen::Vector2d>& corners, const BoardSpec& board, const CameraIntrinsics& intr) {
        const BoardPose bp = board_pose(CornerSet{corners, board}, intr);
        return py::make_tuple(bp.pose, bp.reprojection_rms);
      },
      py::arg("corners"), py::arg("board"), py::arg("intrinsics"));
  m.def(
      "camera_plane",
      [](const Isometry3& pose, const BoardSpec& board) { return camera_plane(pose, board).plane; },
      py::arg("board_pose"), py::arg("board"));

  py::class_<RigSpec>(m, "RigSpec")
      .def_static("make_default", &RigSpec::make_default)
      .def_readwrite("ground_truth_extrinsic", &RigSpec::ground_truth_extrinsic)
      .def_readwrite("camera", &RigSpec::camera)
      .def_readwrite("board", &RigSpec::board);

  py::enum_<CameraNoiseUnit>(m, "CameraNoiseUnit")
      .value("PIXELS", CameraNoiseUnit::Pixels)
      .value("NORMALIZED", CameraNoiseUnit::Normalized);

  py::class_<NoiseSpec>(m, "NoiseSpec")
      .def(py::init([](double sl, double sc, std::uint64_t seed, CameraNoiseUnit unit) {
             return NoiseSpec{sl, sc, seed, unit};
           }),
           py::arg("sigma_lidar") = 0.0, py::arg("sigma_camera") = 0.0, py::arg("rng_seed") = 0,
           py::arg("camera_unit") = CameraNoiseUnit::Pixels)
      .def_readwrite("sigma_lidar", &NoiseSpec::sigma_lidar)
      .def_readwrite("sigma_camera", &NoiseSpec::sigma_camera)
      .def_readwrite("rng_seed", &NoiseSpec::rng_seed)
      .def_readwrite("camera_unit", &NoiseSpec::camera_unit);

  py::class_<MeasurementPool>(m, "MeasurementPool")
      .def_readonly("pairs", &MeasurementPool::pairs)
      .def_readonly("board_poses", &MeasurementPool::board_poses)
      .def_readonly("ground_truth", &MeasurementPool::ground_truth);

  m.def(
      "generate_pool",
      [](const RigSpec& rig, const NoiseSpec& noise, int size, std::uint64_t seed) {
        py::gil_scoped_release release;
        return generate_pool(rig, noise, size, seed);
      },
      py::arg("rig"), py::arg("noise"), py::arg("pool_size"), py::arg("seed"));

  m.def("save_measurements",
        [](const std::filesystem::path& p, const std::vector<MeasurementPair>& ms) { io::save_measurements(p, ms); });
  m.def("load_measurements", &io::load_measurements);
  m.def("save_report", &io::save_report);
  m.def("load_report", &io::load_report);
  m.def("report_to_json", [](const CalibrationReport& r) { return io::encode(r).dump(); });
}
