#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "cns/geometry.hpp"

namespace cns {

using Rng = std::mt19937_64;

struct SceneConfig {
    int n_points_min = 4;
    int n_points_max = 512;
    double scene_radius_m = 0.2;
    double cluster_height_factor = 0.1;
    double residual_fraction_min = 0.2;
};

struct Scene {
    std::vector<Eigen::Vector3d> points;   // world frame, meters
    std::vector<int> cluster_id;           // 0 = residual (uniform in scene)
    double radius_m = 0.2;

    Eigen::Vector3d center() const { return Eigen::Vector3d::Zero(); }
    size_t size() const { return points.size(); }
};

struct PoseSamplingConfig {
    double d_min_m = 0.5, d_max_m = 0.9;
    double theta_min_deg = 30.0, theta_max_deg = 90.0;
    Eigen::Vector3d perturb_max_deg{10.0, 10.0, 60.0};
};

PoseSamplingConfig initial_pose_config();
PoseSamplingConfig desired_pose_config();

/// Uniform samples inside the elliptic cylinder centered at `center`,
/// height h along z, semi-axes (a, b) in x/y.
std::vector<Eigen::Vector3d> sample_cylinder(int n, const Eigen::Vector3d& center,
                                             double h, double a, double b, Rng& rng);

Scene sample_scene(const SceneConfig& cfg, Rng& rng);

/// Look-at pose at distance d and elevation theta from the scene origin,
/// x-axis parallel to the world xOy plane, then right-perturbed.
Pose sample_pose(const PoseSamplingConfig& cfg, Rng& rng);

std::pair<Pose, Pose> sample_pose_pair(const PoseSamplingConfig& initial_cfg,
                                       const PoseSamplingConfig& desired_cfg, Rng& rng);

/// Uniform rotation over SO(3).
Eigen::Matrix3d random_rotation(Rng& rng);

/// Plain-text table exchange: one "x y z cluster_id" line per point.
void save_scene(std::ostream& os, const Scene& scene);
Scene load_scene(std::istream& is);

}  // namespace cns
