#include "cns/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace cns {

Pose Pose::inverse() const {
    Pose out;
    out.rotation = rotation.transpose();
    out.translation = -out.rotation * translation;
    return out;
}

Pose Pose::operator*(const Pose& other) const {
    Pose out;
    out.rotation = rotation * other.rotation;
    out.translation = rotation * other.translation + translation;
    return out;
}

Eigen::Vector3d Pose::to_camera(const Eigen::Vector3d& world_point) const {
    return rotation.transpose() * (world_point - translation);
}

Eigen::Vector3d Pose::to_world(const Eigen::Vector3d& camera_point) const {
    return rotation * camera_point + translation;
}

bool Pose::is_valid(double tol) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    return err.cwiseAbs().maxCoeff() < tol && std::abs(rotation.determinant() - 1.0) < tol;
}

bool Twist::is_finite() const { return nu.allFinite() && omega.allFinite(); }

Eigen::Matrix<double, 6, 1> Twist::vector() const {
    Eigen::Matrix<double, 6, 1> v;
    v << nu, omega;
    return v;
}

Twist Twist::from_vector(const Eigen::Matrix<double, 6, 1>& v) {
    return Twist{v.head<3>(), v.tail<3>()};
}

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1;
        r = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return r;
}

Eigen::Matrix3d rotation_exp(const Eigen::Vector3d& theta_u) {
    const double theta = theta_u.norm();
    const Eigen::Matrix3d w = skew(theta_u);
    if (theta < 1e-12) {
        return Eigen::Matrix3d::Identity() + w + 0.5 * w * w;
    }
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / (theta * theta);
    return Eigen::Matrix3d::Identity() + a * w + b * w * w;
}

Eigen::Vector3d axis_angle(const Eigen::Matrix3d& r) {
    const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    if (theta < 1e-9) {
        // First-order: vee of the antisymmetric part.
        return Eigen::Vector3d(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)) * 0.5;
    }
    if (theta > M_PI - 1e-5) {
        // Near pi the antisymmetric part vanishes; recover the axis from
        // B = (R + I) / 2 = I*cos^2 + uu^T sin^2 ~= uu^T, seeded at the
        // largest diagonal entry for determinism.
        Eigen::Matrix3d b = 0.5 * (r + Eigen::Matrix3d::Identity());
        int k = 0;
        b.diagonal().maxCoeff(&k);
        Eigen::Vector3d u;
        u[k] = std::sqrt(std::max(b(k, k), 0.0));
        for (int i = 0; i < 3; ++i) {
            if (i != k) u[i] = b(i, k) / u[k];
        }
        u.normalize();
        // Fix the sign so that exp matches for theta slightly below pi.
        Eigen::Vector3d v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
        if (v.dot(u) < 0) u = -u;
        return theta * u;
    }
    Eigen::Vector3d u(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return u * (theta / (2.0 * std::sin(theta)));
}

Pose se3_step(const Pose& pose, const Twist& twist, double dt) {
    if (!twist.is_finite()) throw std::invalid_argument("se3_step: invalid twist");
    if (!(dt > 0)) throw std::invalid_argument("se3_step: dt must be positive");

    const Eigen::Vector3d w = twist.omega * dt;
    const Eigen::Vector3d v = twist.nu * dt;
    const double theta = w.norm();
    const Eigen::Matrix3d wx = skew(w);

    Eigen::Matrix3d rot_exp = rotation_exp(w);
    Eigen::Matrix3d jac;  // left Jacobian of SO(3)
    if (theta < 1e-12) {
        jac = Eigen::Matrix3d::Identity() + 0.5 * wx;
    } else {
        const double b = (1.0 - std::cos(theta)) / (theta * theta);
        const double c = (theta - std::sin(theta)) / (theta * theta * theta);
        jac = Eigen::Matrix3d::Identity() + b * wx + c * wx * wx;
    }

    Pose out;
    out.rotation = orthonormalize(pose.rotation * rot_exp);
    out.translation = pose.translation + pose.rotation * (jac * v);
    return out;
}

Projection project(const CameraModel& camera, const Pose& camera_pose,
                   const std::vector<Eigen::Vector3d>& points) {
    Projection out;
    out.keypoints.resize(points.size());
    out.in_view.resize(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
        const Eigen::Vector3d pc = camera_pose.to_camera(points[i]);
        const double z = pc.z();
        if (z <= 1e-6) {
            out.keypoints[i] = Eigen::Vector2d::Zero();
            out.in_view[i] = false;
            continue;
        }
        const Eigen::Vector2d s(pc.x() / z, pc.y() / z);
        out.keypoints[i] = s;
        const double u = camera.fx * s.x() + camera.cx;
        const double v = camera.fy * s.y() + camera.cy;
        out.in_view[i] = (u >= 0 && u < camera.width && v >= 0 && v < camera.height);
    }
    return out;
}

double rotation_error_deg(const Pose& a, const Pose& b) {
    const Eigen::Matrix3d rel = a.rotation.transpose() * b.rotation;
    return axis_angle(rel).norm() * 180.0 / M_PI;
}

double translation_error_mm(const Pose& a, const Pose& b) {
    return (a.translation - b.translation).norm() * 1000.0;
}

}  // namespace cns
