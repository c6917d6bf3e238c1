#include "cns/control.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace cns {

Twist pbvs(const Pose& current, const Pose& desired, const ControlGain& gain) {
    const Pose rel = current.inverse() * desired;  // desired frame seen from current
    Twist twist;
    twist.nu = gain.lambda * rel.translation;
    twist.omega = gain.lambda * axis_angle(rel.rotation);
    return twist;
}

Supervision pbvs_supervision(const Pose& current, const Pose& desired,
                             const Eigen::Vector3d& scene_center, const ControlGain& gain) {
    Supervision sup;
    sup.d_gt = desired.to_camera(scene_center).norm();
    if (sup.d_gt < 1e-6) throw std::invalid_argument("pbvs_supervision: degenerate desired pose");
    const Twist twist = pbvs(current, desired, gain);
    sup.v_gt_dd << twist.nu / sup.d_gt, twist.omega;
    return sup;
}

Eigen::Matrix<double, 2, 6> interaction_matrix(double x, double y, double z) {
    if (!(z > 0)) throw std::invalid_argument("interaction_matrix: invalid depth");
    Eigen::Matrix<double, 2, 6> l;
    l << -1.0 / z, 0.0, x / z, x * y, -(1.0 + x * x), y,
         0.0, -1.0 / z, y / z, 1.0 + y * y, -x * y, -x;
    return l;
}

IbvsResult ibvs(const std::vector<Eigen::Vector2d>& current_kp,
                const std::vector<Eigen::Vector2d>& desired_kp, const std::vector<bool>& visible,
                const std::vector<double>& depths, const ControlGain& gain) {
    std::vector<int> active;
    for (size_t i = 0; i < visible.size(); ++i) {
        if (visible[i] && depths[i] > 0) active.push_back(static_cast<int>(i));
    }
    if (active.size() < 3) {
        return IbvsResult{Twist{}, false};
    }
    const int m = static_cast<int>(active.size());
    Eigen::MatrixXd l(2 * m, 6);
    Eigen::VectorXd e(2 * m);
    for (int k = 0; k < m; ++k) {
        const int i = active[k];
        l.middleRows<2>(2 * k) =
            interaction_matrix(current_kp[i].x(), current_kp[i].y(), depths[i]);
        e.segment<2>(2 * k) = current_kp[i] - desired_kp[i];
    }
    const Eigen::Matrix<double, 6, 6> ltl = l.transpose() * l;
    const double mu = 1e-6 * ltl.trace() / 6.0;
    const Eigen::Matrix<double, 6, 1> v =
        -gain.lambda *
        (ltl + mu * Eigen::Matrix<double, 6, 6>::Identity()).ldlt().solve(l.transpose() * e);
    return IbvsResult{Twist::from_vector(v), true};
}

bool StoppingMonitor::push(double error) {
    latest_ = error;
    if (error < best_) {
        best_ = error;
        steps_since_best_ = 0;
    } else {
        ++steps_since_best_;
    }
    return latest_ < threshold_ && steps_since_best_ >= patience_;
}

bool stopping_criterion(const std::vector<double>& error_history, double threshold,
                        int patience) {
    StoppingMonitor monitor(threshold, patience);
    bool result = false;
    for (double e : error_history) result = monitor.push(e);
    return result;
}

}  // namespace cns
