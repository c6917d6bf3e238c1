#pragma once

#include <iosfwd>
#include <vector>

#include "cns/correspondence.hpp"
#include "cns/geometry.hpp"
#include "cns/scene.hpp"

namespace cns {

/// Boolean adjacency with row-major storage; rows are target nodes.
struct EdgeMatrix {
    int rows = 0, cols = 0;
    std::vector<uint8_t> data;

    EdgeMatrix() = default;
    EdgeMatrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0) {}

    uint8_t& at(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    uint8_t at(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }
    bool operator==(const EdgeMatrix& o) const = default;
};

struct ClusterAssignment {
    std::vector<std::vector<int>> groups;  // partition of {0..N-1}
    std::vector<int> centers;              // one keypoint index per group
    bool converged = true;
};

struct AffinityPropagationConfig {
    double damping = 0.9;
    int max_iterations = 200;
    int stable_iterations = 15;
};

/// Cluster desired-pose keypoints with affinity propagation (similarity =
/// negative squared distance, preference = median similarity), then select
/// each group's center as the member closest to the group mean.
ClusterAssignment cluster_desired(const std::vector<Eigen::Vector2d>& desired_kp,
                                  const AffinityPropagationConfig& cfg = {});

/// Re-pick centers by the closest-to-mean rule, lowest index on ties.
void select_centers(const std::vector<Eigen::Vector2d>& keypoints, ClusterAssignment& clusters);

std::pair<EdgeMatrix, EdgeMatrix> build_desired_edges(const ClusterAssignment& clusters, int n);

std::pair<EdgeMatrix, EdgeMatrix> build_current_edges(const ClusterAssignment& clusters,
                                                      const std::vector<bool>& visible, int n);

struct ServoGraph {
    std::vector<Eigen::Vector2d> desired_kp;
    std::vector<Eigen::Vector2d> current_kp;  // NaN sentinel when not visible
    std::vector<bool> visible;
    ClusterAssignment clusters;
    EdgeMatrix e0_star, e0_t;  // N_c x N
    EdgeMatrix e1_star, e1_t;  // N_c x N_c

    int num_keypoints() const { return static_cast<int>(desired_kp.size()); }
    int num_clusters() const { return static_cast<int>(clusters.groups.size()); }
    std::vector<Eigen::Vector2d> center_positions() const;  // desired-pose centers
    std::vector<bool> cluster_active() const;               // >= 1 visible member
};

/// Episode-constant observation context: clustering and desired-pose edges
/// are computed once from the desired view.
struct GraphContext {
    Scene scene;
    CameraModel camera;
    Pose desired_pose;
    std::vector<Eigen::Vector2d> desired_kp;
    std::vector<bool> desired_in_view;
    ClusterAssignment clusters;
    EdgeMatrix e0_star, e1_star;

    static GraphContext create(const Scene& scene, const CameraModel& camera,
                               const Pose& desired_pose);
};

/// Per-frame observation: project at the current pose, apply simulated
/// visibility and augmentations, rebuild the current-pose edge sets.
ServoGraph graph_observation(const GraphContext& ctx, const Pose& current_pose,
                             CorrState& corr_state, const AugmentConfig& augment, double dt,
                             Rng& rng);

/// Ideal observation: every in-view point visible, no augmentation.
ServoGraph graph_observation_clean(const GraphContext& ctx, const Pose& current_pose);

/// Golden-file adjacency dump, one "TAG i j" line per edge.
void save_graph_edges(std::ostream& os, const ServoGraph& graph);

}  // namespace cns
