#include "cns/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cns {

namespace {

uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

}  // namespace

double PerlinTrack::gradient(int64_t lattice) const {
    const uint64_t h = splitmix64(seed_ ^ static_cast<uint64_t>(lattice) * 0x9e3779b97f4a7c15ULL);
    // Uniform in [-1, 1].
    return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

double PerlinTrack::operator()(double t) const {
    const double floor_t = std::floor(t);
    const int64_t i = static_cast<int64_t>(floor_t);
    const double f = t - floor_t;
    const double g0 = gradient(i);
    const double g1 = gradient(i + 1);
    const double u = fade(f);
    // Scaled by 2 so the output spans roughly [-1, 1].
    return 2.0 * ((1.0 - u) * g0 * f + u * g1 * (f - 1.0));
}

CorrState CorrState::init(size_t n_points, const Pose& start_pose, double scene_radius_m,
                          Rng& rng) {
    CorrState state;
    state.scene_radius_m = scene_radius_m;
    state.kernel_sigma = 0.3 * scene_radius_m;
    state.motion_origin = start_pose;
    state.tau.resize(n_points);
    std::uniform_real_distribution<double> utau(0.5, 5.0);
    for (double& t : state.tau) t = utau(rng);
    std::uniform_real_distribution<double> uphase(0.0, 256.0);
    for (size_t k = 0; k < 6; ++k) {
        state.tracks[k] = PerlinTrack(rng());
        state.track_phase[k] = uphase(rng);
    }
    update_kernels(state, start_pose);
    state.p.assign(n_points, 1.0);
    state.visible.assign(n_points, true);
    return state;
}

std::array<Eigen::Vector2d, 3> update_kernels(CorrState& state, const Pose& current_pose) {
    const Pose rel = state.motion_origin.inverse() * current_pose;
    const double s = (0.2 / M_PI) * axis_angle(rel.rotation).norm() +
                     (0.2 / state.scene_radius_m) * rel.translation.norm();
    for (int j = 0; j < 3; ++j) {
        const double x = state.tracks[2 * j](state.track_phase[2 * j] + s);
        const double y = state.tracks[2 * j + 1](state.track_phase[2 * j + 1] + s);
        state.kernel_centers[j] = state.kernel_window * Eigen::Vector2d(x, y);
    }
    return state.kernel_centers;
}

std::vector<double> observability(const std::vector<Eigen::Vector2d>& keypoints,
                                  const std::array<Eigen::Vector2d, 3>& kernel_centers,
                                  double sigma) {
    if (!(sigma > 0)) throw std::invalid_argument("observability: sigma must be positive");
    std::vector<double> p(keypoints.size());
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (size_t i = 0; i < keypoints.size(); ++i) {
        double best = 0.0;
        for (const auto& k : kernel_centers) {
            best = std::max(best, std::exp(-(keypoints[i] - k).squaredNorm() * inv));
        }
        p[i] = best;
    }
    return p;
}

void kmc_step(CorrState& state, double dt, Rng& rng) {
    if (!(dt > 0)) throw std::invalid_argument("kmc_step: dt must be positive");
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (size_t i = 0; i < state.visible.size(); ++i) {
        const double pi = state.p[i];
        if (pi >= 1.0) {
            state.visible[i] = true;
            continue;
        }
        if (pi <= 0.0) {
            state.visible[i] = false;
            continue;
        }
        const double draw = u01(rng);
        if (state.visible[i]) {
            const double dwell = pi * state.tau[i];
            if (draw < 1.0 - std::exp(-dt / dwell)) state.visible[i] = false;
        } else {
            const double dwell = (1.0 - pi) * state.tau[i];
            if (draw < 1.0 - std::exp(-dt / dwell)) state.visible[i] = true;
        }
    }
}

std::vector<int> apply_mismatch(const std::vector<int>& correspondence,
                                const std::vector<bool>& visible, double fraction, Rng& rng) {
    if (fraction < 0 || fraction > 1) {
        throw std::invalid_argument("apply_mismatch: fraction out of [0,1]");
    }
    const size_t n = correspondence.size();
    std::vector<int> out = correspondence;
    size_t count = static_cast<size_t>(std::floor(fraction * static_cast<double>(n)));
    std::vector<int> candidates;
    for (size_t i = 0; i < n; ++i) {
        if (visible[i]) candidates.push_back(static_cast<int>(i));
    }
    count = std::min(count, candidates.size());
    if (count < 2) return out;

    std::shuffle(candidates.begin(), candidates.end(), rng);
    std::vector<int> selected(candidates.begin(), candidates.begin() + count);

    // Sattolo's algorithm: a uniformly random single cycle has no fixed point.
    std::vector<int> perm = selected;
    for (size_t i = perm.size() - 1; i > 0; --i) {
        std::uniform_int_distribution<size_t> uj(0, i - 1);
        std::swap(perm[i], perm[uj(rng)]);
    }
    for (size_t i = 0; i < selected.size(); ++i) {
        out[selected[i]] = correspondence[perm[i]];
    }
    return out;
}

std::vector<bool> apply_dropout(const std::vector<bool>& visible, const std::vector<double>& p,
                                double fraction, DropoutMode mode, Rng& rng) {
    if (fraction < 0 || fraction > 1) {
        throw std::invalid_argument("apply_dropout: fraction out of [0,1]");
    }
    std::vector<bool> out = visible;
    if (mode == DropoutMode::kOff || fraction == 0.0) return out;

    std::vector<int> candidates;
    for (size_t i = 0; i < visible.size(); ++i) {
        if (visible[i]) candidates.push_back(static_cast<int>(i));
    }
    size_t count =
        static_cast<size_t>(std::floor(fraction * static_cast<double>(candidates.size())));
    count = std::min(count, candidates.size());
    if (count == 0) return out;

    if (mode == DropoutMode::kUniform) {
        std::shuffle(candidates.begin(), candidates.end(), rng);
        for (size_t i = 0; i < count; ++i) out[candidates[i]] = false;
        return out;
    }

    // Weighted: sample without replacement with weight (1 - p_i).
    std::vector<double> weights(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
        weights[i] = std::max(1e-12, 1.0 - p[candidates[i]]);
    }
    for (size_t k = 0; k < count; ++k) {
        std::discrete_distribution<size_t> pick(weights.begin(), weights.end());
        const size_t j = pick(rng);
        out[candidates[j]] = false;
        weights[j] = 0.0;
    }
    return out;
}

}  // namespace cns
