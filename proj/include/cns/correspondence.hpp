#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cns/geometry.hpp"
#include "cns/scene.hpp"

namespace cns {

/// Deterministic 1-D gradient noise track. Values vanish at integer lattice
/// points and are C1-continuous in between.
class PerlinTrack {
public:
    PerlinTrack() = default;
    explicit PerlinTrack(uint64_t seed) : seed_(seed) {}

    double operator()(double t) const;

private:
    double gradient(int64_t lattice) const;
    uint64_t seed_ = 0;
};

enum class DropoutMode { kUniform, kWeighted, kOff };
enum class KeypointMode { kClustered, kUniform };

struct AugmentConfig {
    double mismatch_fraction = 0.1;
    double dropout_fraction = 0.1;
    DropoutMode dropout_mode = DropoutMode::kWeighted;
    KeypointMode keypoint_mode = KeypointMode::kClustered;
};

/// Per-episode state of the non-ideal correspondence simulation.
struct CorrState {
    std::vector<double> p;      // observability probabilities
    std::vector<double> tau;    // jitter time constants, seconds
    std::vector<bool> visible;
    std::array<Eigen::Vector2d, 3> kernel_centers;
    std::array<PerlinTrack, 6> tracks;   // x/y per kernel
    std::array<double, 6> track_phase{}; // random offsets so kernels start scattered
    Pose motion_origin;
    double scene_radius_m = 0.2;
    double kernel_sigma = 0.06;          // 0.3 * r in the normalized plane
    double kernel_window = 0.4;          // noise [-1,1] mapped to +-window

    static CorrState init(size_t n_points, const Pose& start_pose, double scene_radius_m,
                          Rng& rng);
};

/// Advance the shifting kernel centers for the camera's motion since episode
/// start: s = (0.2/pi)*|axis-angle| + (0.2/r)*|translation|.
std::array<Eigen::Vector2d, 3> update_kernels(CorrState& state, const Pose& current_pose);

/// p_i = max_j exp(-|s_i - k_j|^2 / (2 sigma^2)).
std::vector<double> observability(const std::vector<Eigen::Vector2d>& keypoints,
                                  const std::array<Eigen::Vector2d, 3>& kernel_centers,
                                  double sigma);

/// Two-state telegraph flips with mean dwell times p*tau (visible) and
/// (1-p)*tau (missing).
void kmc_step(CorrState& state, double dt, Rng& rng);

/// Replace floor(fraction*N) visible entries by a cyclic permutation among
/// themselves (a derangement), leaving positions plausible but wrong.
std::vector<int> apply_mismatch(const std::vector<int>& correspondence,
                                const std::vector<bool>& visible, double fraction, Rng& rng);

std::vector<bool> apply_dropout(const std::vector<bool>& visible, const std::vector<double>& p,
                                double fraction, DropoutMode mode, Rng& rng);

}  // namespace cns
