#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "cns/bench.hpp"
#include "cns/control.hpp"
#include "cns/geometry.hpp"
#include "cns/scene.hpp"
#include "cns/training.hpp"

namespace py = pybind11;
using namespace cns;

PYBIND11_MODULE(pycns, m) {
    m.doc() = "visual servoing simulation, classic controllers, and benchmark harness";

    py::class_<Pose>(m, "Pose")
        .def(py::init<>())
        .def_static("identity", &Pose::identity)
        .def_readwrite("rotation", &Pose::rotation)
        .def_readwrite("translation", &Pose::translation)
        .def("inverse", &Pose::inverse)
        .def("__mul__", &Pose::operator*)
        .def("to_camera", &Pose::to_camera)
        .def("to_world", &Pose::to_world)
        .def("is_valid", &Pose::is_valid, py::arg("tol") = 1e-9);

    py::class_<Twist>(m, "Twist")
        .def(py::init<>())
        .def_readwrite("nu", &Twist::nu)
        .def_readwrite("omega", &Twist::omega)
        .def("vector", &Twist::vector)
        .def_static("from_vector", &Twist::from_vector);

    py::class_<CameraModel>(m, "CameraModel")
        .def(py::init<>())
        .def_readwrite("fx", &CameraModel::fx)
        .def_readwrite("fy", &CameraModel::fy)
        .def_readwrite("cx", &CameraModel::cx)
        .def_readwrite("cy", &CameraModel::cy)
        .def_readwrite("width", &CameraModel::width)
        .def_readwrite("height", &CameraModel::height);

    m.def("se3_step", &se3_step, py::arg("pose"), py::arg("twist"), py::arg("dt"));
    m.def("rotation_exp", &rotation_exp);
    m.def("axis_angle", &axis_angle);
    m.def("rotation_error_deg", &rotation_error_deg);
    m.def("translation_error_mm", &translation_error_mm);
    m.def(
        "project",
        [](const CameraModel& cam, const Pose& pose, const std::vector<Eigen::Vector3d>& pts) {
            Projection proj = project(cam, pose, pts);
            return py::make_tuple(proj.keypoints, proj.in_view);
        },
        py::arg("camera"), py::arg("camera_pose"), py::arg("points"),
        "Normalized-plane keypoints and their in-view flags.");

    py::class_<SceneConfig>(m, "SceneConfig")
        .def(py::init<>())
        .def_readwrite("n_points_min", &SceneConfig::n_points_min)
        .def_readwrite("n_points_max", &SceneConfig::n_points_max)
        .def_readwrite("scene_radius_m", &SceneConfig::scene_radius_m);

    py::class_<Scene>(m, "Scene")
        .def_readonly("points", &Scene::points)
        .def_readonly("cluster_id", &Scene::cluster_id)
        .def_readonly("radius_m", &Scene::radius_m)
        .def("__len__", &Scene::size);

    py::class_<PoseSamplingConfig>(m, "PoseSamplingConfig")
        .def(py::init<>())
        .def_readwrite("d_min_m", &PoseSamplingConfig::d_min_m)
        .def_readwrite("d_max_m", &PoseSamplingConfig::d_max_m)
        .def_readwrite("theta_min_deg", &PoseSamplingConfig::theta_min_deg)
        .def_readwrite("theta_max_deg", &PoseSamplingConfig::theta_max_deg)
        .def_readwrite("perturb_max_deg", &PoseSamplingConfig::perturb_max_deg);

    m.def("initial_pose_config", &initial_pose_config);
    m.def("desired_pose_config", &desired_pose_config);
    m.def(
        "sample_scene",
        [](const SceneConfig& cfg, uint64_t seed) {
            Rng rng(seed);
            return sample_scene(cfg, rng);
        },
        py::arg("config"), py::arg("seed"));
    m.def(
        "sample_pose_pair",
        [](const PoseSamplingConfig& initial, const PoseSamplingConfig& desired, uint64_t seed) {
            Rng rng(seed);
            return sample_pose_pair(initial, desired, rng);
        },
        py::arg("initial"), py::arg("desired"), py::arg("seed"));

    m.def(
        "pbvs",
        [](const Pose& current, const Pose& desired, double gain) {
            return pbvs(current, desired, ControlGain{gain});
        },
        py::arg("current"), py::arg("desired"), py::arg("gain") = 1.0);
    m.def(
        "ibvs",
        [](const std::vector<Eigen::Vector2d>& current, const std::vector<Eigen::Vector2d>& desired,
           const std::vector<bool>& visible, const std::vector<double>& depths, double gain) {
            IbvsResult res = ibvs(current, desired, visible, depths, ControlGain{gain});
            return py::make_tuple(res.twist, res.sufficient_features);
        },
        py::arg("current"), py::arg("desired"), py::arg("visible"), py::arg("depths"),
        py::arg("gain") = 1.0);
    m.def("interaction_matrix", &interaction_matrix, py::arg("x"), py::arg("y"), py::arg("z"));

    py::class_<PolicyParams>(m, "PolicyParams")
        .def_readonly("hidden", &PolicyParams::hidden);
    m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

    py::class_<AugmentConfig>(m, "AugmentConfig")
        .def(py::init<>())
        .def_readwrite("mismatch_fraction", &AugmentConfig::mismatch_fraction)
        .def_readwrite("dropout_fraction", &AugmentConfig::dropout_fraction);

    py::class_<BenchmarkConfig>(m, "BenchmarkConfig")
        .def(py::init<>())
        .def_readwrite("seed_begin", &BenchmarkConfig::seed_begin)
        .def_readwrite("seed_count", &BenchmarkConfig::seed_count)
        .def_readwrite("re_success_deg", &BenchmarkConfig::re_success_deg)
        .def_readwrite("te_success_mm", &BenchmarkConfig::te_success_mm)
        .def_readwrite("dt", &BenchmarkConfig::dt)
        .def_readwrite("max_steps", &BenchmarkConfig::max_steps)
        .def_readwrite("lambda_", &BenchmarkConfig::lambda)
        .def_readwrite("distance_prior_m", &BenchmarkConfig::distance_prior_m)
        .def_readwrite("augment_enabled", &BenchmarkConfig::augment_enabled)
        .def_readwrite("augment", &BenchmarkConfig::augment)
        .def_readwrite("scene", &BenchmarkConfig::scene)
        .def_readwrite("threads", &BenchmarkConfig::threads);

    py::class_<EpisodeRecord>(m, "EpisodeRecord")
        .def_readonly("controller", &EpisodeRecord::controller)
        .def_readonly("seed", &EpisodeRecord::seed)
        .def_readonly("initial_re_deg", &EpisodeRecord::initial_re_deg)
        .def_readonly("initial_te_mm", &EpisodeRecord::initial_te_mm)
        .def_readonly("final_re_deg", &EpisodeRecord::final_re_deg)
        .def_readonly("final_te_mm", &EpisodeRecord::final_te_mm)
        .def_readonly("steps", &EpisodeRecord::steps)
        .def_readonly("success", &EpisodeRecord::success)
        .def_readonly("mct_ms", &EpisodeRecord::mct_ms);

    py::class_<MetricStat>(m, "MetricStat")
        .def_readonly("mean", &MetricStat::mean)
        .def_readonly("stddev", &MetricStat::stddev)
        .def_readonly("count", &MetricStat::count);

    py::class_<Summary>(m, "Summary")
        .def_readonly("episodes", &Summary::episodes)
        .def_readonly("successes", &Summary::successes)
        .def_readonly("sr_percent", &Summary::sr_percent)
        .def_readonly("sr_ci_low", &Summary::sr_ci_low)
        .def_readonly("sr_ci_high", &Summary::sr_ci_high)
        .def_readonly("ts", &Summary::ts)
        .def_readonly("re_deg", &Summary::re_deg)
        .def_readonly("te_mm", &Summary::te_mm)
        .def_readonly("mct_ms", &Summary::mct_ms);

    m.def(
        "run_episode",
        [](const BenchmarkConfig& cfg, const std::string& controller,
           const std::optional<PolicyParams>& params, uint64_t seed) {
            return run_episode(cfg, controller_from_name(controller),
                               params ? &*params : nullptr, seed);
        },
        py::arg("config"), py::arg("controller"), py::arg("params") = std::nullopt,
        py::arg("seed") = 0);
    m.def(
        "run_suite",
        [](const BenchmarkConfig& cfg, const std::string& controller,
           const std::optional<PolicyParams>& params) {
            return run_suite(cfg, controller_from_name(controller), params ? &*params : nullptr);
        },
        py::arg("config"), py::arg("controller"), py::arg("params") = std::nullopt,
        py::call_guard<py::gil_scoped_release>());
    m.def("aggregate", &aggregate, py::arg("records"));
    m.def(
        "records_to_csv",
        [](const std::vector<EpisodeRecord>& records) {
            std::stringstream ss;
            write_csv(ss, records);
            return ss.str();
        },
        py::arg("records"));
    m.def(
        "summary_to_json",
        [](const Summary& summary) {
            std::stringstream ss;
            write_summary_json(ss, summary);
            return ss.str();
        },
        py::arg("summary"));
}
