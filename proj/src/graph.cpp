#include "cns/graph.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace cns {

namespace {

std::vector<double> similarity_matrix(const std::vector<Eigen::Vector2d>& kp) {
    const int n = static_cast<int>(kp.size());
    std::vector<double> s(static_cast<size_t>(n) * n, 0.0);
    std::vector<double> off;
    off.reserve(static_cast<size_t>(n) * (n - 1));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) continue;
            const double v = -(kp[i] - kp[j]).squaredNorm();
            s[static_cast<size_t>(i) * n + j] = v;
            off.push_back(v);
        }
    }
    double preference = 0.0;
    if (!off.empty()) {
        std::nth_element(off.begin(), off.begin() + off.size() / 2, off.end());
        preference = off[off.size() / 2];
    }
    for (int i = 0; i < n; ++i) s[static_cast<size_t>(i) * n + i] = preference;
    return s;
}

}  // namespace

void select_centers(const std::vector<Eigen::Vector2d>& keypoints, ClusterAssignment& clusters) {
    clusters.centers.resize(clusters.groups.size());
    for (size_t g = 0; g < clusters.groups.size(); ++g) {
        const auto& members = clusters.groups[g];
        Eigen::Vector2d mean = Eigen::Vector2d::Zero();
        for (int idx : members) mean += keypoints[idx];
        mean /= static_cast<double>(members.size());
        int best = members.front();
        double best_d = std::numeric_limits<double>::infinity();
        for (int idx : members) {
            const double d = (keypoints[idx] - mean).norm();
            if (d < best_d - 1e-15 || (std::abs(d - best_d) <= 1e-15 && idx < best)) {
                best_d = d;
                best = idx;
            }
        }
        clusters.centers[g] = best;
    }
}

ClusterAssignment cluster_desired(const std::vector<Eigen::Vector2d>& desired_kp,
                                  const AffinityPropagationConfig& cfg) {
    const int n = static_cast<int>(desired_kp.size());
    if (n < 1) throw std::invalid_argument("cluster_desired: need at least one keypoint");
    for (const auto& kp : desired_kp) {
        if (!kp.allFinite()) throw std::invalid_argument("cluster_desired: non-finite keypoint");
    }

    ClusterAssignment result;
    if (n == 1) {
        result.groups = {{0}};
        result.centers = {0};
        return result;
    }

    const std::vector<double> s = similarity_matrix(desired_kp);
    std::vector<double> r(static_cast<size_t>(n) * n, 0.0);
    std::vector<double> a(static_cast<size_t>(n) * n, 0.0);
    auto at = [n](std::vector<double>& m, int i, int j) -> double& {
        return m[static_cast<size_t>(i) * n + j];
    };
    auto cat = [n](const std::vector<double>& m, int i, int j) {
        return m[static_cast<size_t>(i) * n + j];
    };

    std::vector<int> exemplars, prev_exemplars;
    int stable = 0;
    bool converged = false;
    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
        // Responsibilities.
        for (int i = 0; i < n; ++i) {
            double max1 = -std::numeric_limits<double>::infinity();
            double max2 = max1;
            int arg1 = -1;
            for (int k = 0; k < n; ++k) {
                const double v = cat(a, i, k) + cat(s, i, k);
                if (v > max1) {
                    max2 = max1;
                    max1 = v;
                    arg1 = k;
                } else if (v > max2) {
                    max2 = v;
                }
            }
            for (int k = 0; k < n; ++k) {
                const double v = cat(s, i, k) - (k == arg1 ? max2 : max1);
                at(r, i, k) = cfg.damping * cat(r, i, k) + (1.0 - cfg.damping) * v;
            }
        }
        // Availabilities.
        for (int k = 0; k < n; ++k) {
            double pos_sum = 0.0;
            for (int i = 0; i < n; ++i) {
                if (i != k) pos_sum += std::max(0.0, cat(r, i, k));
            }
            for (int i = 0; i < n; ++i) {
                double v;
                if (i == k) {
                    v = pos_sum;
                } else {
                    v = std::min(0.0, cat(r, k, k) + pos_sum - std::max(0.0, cat(r, i, k)));
                }
                at(a, i, k) = cfg.damping * cat(a, i, k) + (1.0 - cfg.damping) * v;
            }
        }
        exemplars.clear();
        for (int k = 0; k < n; ++k) {
            if (cat(r, k, k) + cat(a, k, k) > 0) exemplars.push_back(k);
        }
        if (!exemplars.empty() && exemplars == prev_exemplars) {
            if (++stable >= cfg.stable_iterations) {
                converged = true;
                break;
            }
        } else {
            stable = 0;
        }
        prev_exemplars = exemplars;
    }

    if (exemplars.empty()) {
        // Degenerate run (e.g. all points identical): single cluster.
        result.groups.resize(1);
        result.groups[0].resize(n);
        std::iota(result.groups[0].begin(), result.groups[0].end(), 0);
        result.converged = false;
        select_centers(desired_kp, result);
        return result;
    }

    result.converged = converged;
    result.groups.resize(exemplars.size());
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double best_s = -std::numeric_limits<double>::infinity();
        for (size_t g = 0; g < exemplars.size(); ++g) {
            if (exemplars[g] == i) {  // exemplars belong to themselves
                best = static_cast<int>(g);
                break;
            }
            const double v = cat(s, i, exemplars[g]);
            if (v > best_s) {
                best_s = v;
                best = static_cast<int>(g);
            }
        }
        result.groups[best].push_back(i);
    }
    // Drop empty groups (cannot normally happen, exemplars self-assign).
    std::erase_if(result.groups, [](const auto& g) { return g.empty(); });
    select_centers(desired_kp, result);
    return result;
}

std::pair<EdgeMatrix, EdgeMatrix> build_desired_edges(const ClusterAssignment& clusters, int n) {
    const int nc = static_cast<int>(clusters.groups.size());
    EdgeMatrix e0(nc, n), e1(nc, nc);
    for (int g = 0; g < nc; ++g) {
        for (int idx : clusters.groups[g]) e0.at(g, idx) = 1;
        for (int h = 0; h < nc; ++h) {
            if (g != h) e1.at(g, h) = 1;
        }
    }
    return {e0, e1};
}

std::pair<EdgeMatrix, EdgeMatrix> build_current_edges(const ClusterAssignment& clusters,
                                                      const std::vector<bool>& visible, int n) {
    const int nc = static_cast<int>(clusters.groups.size());
    EdgeMatrix e0(nc, n), e1(nc, nc);
    std::vector<bool> active(nc, false);
    for (int g = 0; g < nc; ++g) {
        for (int idx : clusters.groups[g]) {
            if (visible[idx]) {
                e0.at(g, idx) = 1;
                active[g] = true;
            }
        }
    }
    for (int g = 0; g < nc; ++g) {
        for (int h = 0; h < nc; ++h) {
            if (g != h && active[g] && active[h]) e1.at(g, h) = 1;
        }
    }
    return {e0, e1};
}

std::vector<Eigen::Vector2d> ServoGraph::center_positions() const {
    std::vector<Eigen::Vector2d> pos(clusters.centers.size());
    for (size_t g = 0; g < clusters.centers.size(); ++g) {
        pos[g] = desired_kp[clusters.centers[g]];
    }
    return pos;
}

std::vector<bool> ServoGraph::cluster_active() const {
    std::vector<bool> active(clusters.groups.size(), false);
    for (size_t g = 0; g < clusters.groups.size(); ++g) {
        for (int idx : clusters.groups[g]) {
            if (visible[idx]) {
                active[g] = true;
                break;
            }
        }
    }
    return active;
}

GraphContext GraphContext::create(const Scene& scene, const CameraModel& camera,
                                  const Pose& desired_pose) {
    GraphContext ctx;
    ctx.scene = scene;
    ctx.camera = camera;
    ctx.desired_pose = desired_pose;
    const Projection proj = project(camera, desired_pose, scene.points);
    ctx.desired_kp = proj.keypoints;
    ctx.desired_in_view = proj.in_view;
    ctx.clusters = cluster_desired(ctx.desired_kp);
    std::tie(ctx.e0_star, ctx.e1_star) =
        build_desired_edges(ctx.clusters, static_cast<int>(scene.points.size()));
    return ctx;
}

namespace {

ServoGraph assemble_graph(const GraphContext& ctx, const std::vector<Eigen::Vector2d>& current_kp,
                          const std::vector<bool>& visible) {
    ServoGraph graph;
    graph.desired_kp = ctx.desired_kp;
    graph.visible = visible;
    graph.clusters = ctx.clusters;
    graph.e0_star = ctx.e0_star;
    graph.e1_star = ctx.e1_star;
    const int n = static_cast<int>(ctx.desired_kp.size());
    graph.current_kp.assign(n, Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN()));
    for (int i = 0; i < n; ++i) {
        if (visible[i]) graph.current_kp[i] = current_kp[i];
    }
    std::tie(graph.e0_t, graph.e1_t) = build_current_edges(ctx.clusters, visible, n);
    return graph;
}

}  // namespace

ServoGraph graph_observation(const GraphContext& ctx, const Pose& current_pose,
                             CorrState& corr_state, const AugmentConfig& augment, double dt,
                             Rng& rng) {
    const Projection proj = project(ctx.camera, current_pose, ctx.scene.points);
    const int n = static_cast<int>(ctx.scene.points.size());

    update_kernels(corr_state, current_pose);
    corr_state.p = observability(proj.keypoints, corr_state.kernel_centers,
                                 corr_state.kernel_sigma);
    for (int i = 0; i < n; ++i) {
        if (!proj.in_view[i]) corr_state.p[i] = 0.0;
    }
    kmc_step(corr_state, dt, rng);

    std::vector<bool> visible(n);
    for (int i = 0; i < n; ++i) visible[i] = proj.in_view[i] && corr_state.visible[i];

    visible = apply_dropout(visible, corr_state.p, augment.dropout_fraction,
                            augment.dropout_mode, rng);

    std::vector<int> correspondence(n);
    std::iota(correspondence.begin(), correspondence.end(), 0);
    correspondence = apply_mismatch(correspondence, visible, augment.mismatch_fraction, rng);

    std::vector<Eigen::Vector2d> current_kp(n);
    for (int i = 0; i < n; ++i) current_kp[i] = proj.keypoints[correspondence[i]];

    return assemble_graph(ctx, current_kp, visible);
}

ServoGraph graph_observation_clean(const GraphContext& ctx, const Pose& current_pose) {
    const Projection proj = project(ctx.camera, current_pose, ctx.scene.points);
    return assemble_graph(ctx, proj.keypoints, proj.in_view);
}

void save_graph_edges(std::ostream& os, const ServoGraph& graph) {
    auto dump = [&os](const char* tag, const EdgeMatrix& m) {
        for (int i = 0; i < m.rows; ++i) {
            for (int j = 0; j < m.cols; ++j) {
                if (m.at(i, j)) os << tag << ' ' << i << ' ' << j << '\n';
            }
        }
    };
    dump("E0*", graph.e0_star);
    dump("E1*", graph.e1_star);
    dump("E0t", graph.e0_t);
    dump("E1t", graph.e1_t);
}

}  // namespace cns
