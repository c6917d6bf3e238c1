#pragma once

#include <vector>

#include "cns/geometry.hpp"

namespace cns {

struct ControlGain {
    double lambda = 2.0;  // 1/s
};

/// Position-based servo law: twist toward the desired pose, expressed in the
/// current camera frame.
Twist pbvs(const Pose& current, const Pose& desired, const ControlGain& gain);

struct Supervision {
    Eigen::Matrix<double, 6, 1> v_gt_dd;  // [nu/d_gt; omega]
    double d_gt = 0.0;                    // meters
};

/// Distance-decoupled PBVS supervision; d_gt is the scene-center distance in
/// the desired camera frame.
Supervision pbvs_supervision(const Pose& current, const Pose& desired,
                             const Eigen::Vector3d& scene_center,
                             const ControlGain& gain = ControlGain{1.0});

/// Point-feature interaction matrix at normalized coords (x, y), depth Z.
Eigen::Matrix<double, 2, 6> interaction_matrix(double x, double y, double z);

struct IbvsResult {
    Twist twist;
    bool sufficient_features = true;
};

IbvsResult ibvs(const std::vector<Eigen::Vector2d>& current_kp,
                const std::vector<Eigen::Vector2d>& desired_kp, const std::vector<bool>& visible,
                const std::vector<double>& depths, const ControlGain& gain);

/// Episode termination: latest error below threshold and the running minimum
/// unimproved for `patience` steps.
bool stopping_criterion(const std::vector<double>& error_history, double threshold,
                        int patience = 20);

/// Incremental form of the stopping criterion for long episodes.
class StoppingMonitor {
public:
    explicit StoppingMonitor(double threshold, int patience = 20)
        : threshold_(threshold), patience_(patience) {}

    bool push(double error);

private:
    double threshold_;
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    long steps_since_best_ = 0;
    double latest_ = std::numeric_limits<double>::infinity();
};

}  // namespace cns
