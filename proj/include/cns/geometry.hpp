#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <vector>

namespace cns {

/// Rigid transform of a camera in the world frame (camera-to-world).
struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static Pose identity() { return Pose{}; }

    Pose inverse() const;
    Pose operator*(const Pose& other) const;

    /// Map a world point into this camera's frame.
    Eigen::Vector3d to_camera(const Eigen::Vector3d& world_point) const;
    /// Map a camera-frame point into the world frame.
    Eigen::Vector3d to_world(const Eigen::Vector3d& camera_point) const;

    bool is_valid(double tol = 1e-9) const;
};

/// Camera-frame velocity: linear part in m/s, angular part in rad/s.
struct Twist {
    Eigen::Vector3d nu = Eigen::Vector3d::Zero();
    Eigen::Vector3d omega = Eigen::Vector3d::Zero();

    bool is_finite() const;
    Eigen::Matrix<double, 6, 1> vector() const;
    static Twist from_vector(const Eigen::Matrix<double, 6, 1>& v);
};

struct CameraModel {
    double fx = 540.0, fy = 540.0;
    double cx = 320.0, cy = 240.0;
    int width = 640, height = 480;
};

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Project the orthogonal group onto the input (polar decomposition).
Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m);

/// Rotation matrix from an axis-angle vector.
Eigen::Matrix3d rotation_exp(const Eigen::Vector3d& theta_u);

/// Axis-angle vector (theta in [0, pi]) of an orthonormal rotation.
Eigen::Vector3d axis_angle(const Eigen::Matrix3d& rotation);

/// Integrate a body-frame twist over dt (right-multiplied SE(3) exponential).
Pose se3_step(const Pose& pose, const Twist& twist, double dt);

struct Projection {
    std::vector<Eigen::Vector2d> keypoints;  // normalized image plane
    std::vector<bool> in_view;
};

/// Project world points to the normalized image plane of the given camera pose.
Projection project(const CameraModel& camera, const Pose& camera_pose,
                   const std::vector<Eigen::Vector3d>& points);

/// Relative rotation angle between two poses, degrees in [0, 180].
double rotation_error_deg(const Pose& a, const Pose& b);

/// Euclidean distance between pose translations, millimeters.
double translation_error_mm(const Pose& a, const Pose& b);

}  // namespace cns
