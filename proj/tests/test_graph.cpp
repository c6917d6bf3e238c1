#include <algorithm>
#include <numeric>
#include <sstream>

#include "cns/graph.hpp"
#include "doctest.h"

using namespace cns;

namespace {

EdgeMatrix from_rows(const std::vector<std::vector<int>>& rows) {
    EdgeMatrix m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) m.at(i, j) = static_cast<uint8_t>(rows[i][j]);
    }
    return m;
}

// The three-cluster, seven-keypoint worked example used throughout.
ClusterAssignment example_clusters() {
    ClusterAssignment c;
    c.groups = {{0, 1, 2, 3}, {4, 5}, {6}};
    c.centers = {2, 5, 6};
    return c;
}

}  // namespace

TEST_CASE("build_desired_edges: seven-keypoint three-cluster golden matrices") {
    auto [e0, e1] = build_desired_edges(example_clusters(), 7);
    CHECK(e0 == from_rows({{1, 1, 1, 1, 0, 0, 0},
                           {0, 0, 0, 0, 1, 1, 0},
                           {0, 0, 0, 0, 0, 0, 1}}));
    CHECK(e1 == from_rows({{0, 1, 1}, {1, 0, 1}, {1, 1, 0}}));
}

TEST_CASE("build_current_edges: hiding keypoints 0,2,4,5 gives the golden matrices") {
    std::vector<bool> visible{false, true, false, true, false, false, true};
    auto [e0t, e1t] = build_current_edges(example_clusters(), visible, 7);
    CHECK(e0t == from_rows({{0, 1, 0, 1, 0, 0, 0},
                            {0, 0, 0, 0, 0, 0, 0},
                            {0, 0, 0, 0, 0, 0, 1}}));
    CHECK(e1t == from_rows({{0, 0, 1}, {0, 0, 0}, {1, 0, 0}}));
}

TEST_CASE("build_desired_edges: single cluster and per-point clusters") {
    ClusterAssignment single;
    single.groups = {{0, 1, 2}};
    single.centers = {1};
    auto [e0, e1] = build_desired_edges(single, 3);
    CHECK(e0 == from_rows({{1, 1, 1}}));
    CHECK(e1 == from_rows({{0}}));

    ClusterAssignment identity;
    for (int i = 0; i < 4; ++i) {
        identity.groups.push_back({i});
        identity.centers.push_back(i);
    }
    auto [e0i, e1i] = build_desired_edges(identity, 4);
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
            CHECK(e0i.at(i, j) == (i == j ? 1 : 0));
            CHECK(e1i.at(i, j) == (i == j ? 0 : 1));
        }
    }
}

TEST_CASE("build_current_edges: all visible equals desired edges; none visible is empty") {
    const auto clusters = example_clusters();
    auto [e0s, e1s] = build_desired_edges(clusters, 7);

    auto [e0_all, e1_all] = build_current_edges(clusters, std::vector<bool>(7, true), 7);
    CHECK(e0_all == e0s);
    CHECK(e1_all == e1s);

    auto [e0_none, e1_none] = build_current_edges(clusters, std::vector<bool>(7, false), 7);
    CHECK(std::count(e0_none.data.begin(), e0_none.data.end(), 1) == 0);
    CHECK(std::count(e1_none.data.begin(), e1_none.data.end(), 1) == 0);
}

TEST_CASE("edge invariants: E0* column sums are 1, E1t is symmetric") {
    Rng rng(5);
    std::uniform_int_distribution<int> coin(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        // Random partition of 12 points into 4 groups.
        const int n = 12, k = 4;
        ClusterAssignment clusters;
        clusters.groups.resize(k);
        std::uniform_int_distribution<int> pick(0, k - 1);
        for (int i = 0; i < n; ++i) clusters.groups[i % k].push_back(i);  // non-empty groups
        for (auto& g : clusters.groups) clusters.centers.push_back(g.front());

        auto [e0s, e1s] = build_desired_edges(clusters, n);
        for (int j = 0; j < n; ++j) {
            int col_sum = 0;
            for (int i = 0; i < k; ++i) col_sum += e0s.at(i, j);
            CHECK(col_sum == 1);
        }

        std::vector<bool> visible(n);
        for (int i = 0; i < n; ++i) visible[i] = coin(rng) == 1;
        auto [e0t, e1t] = build_current_edges(clusters, visible, n);
        for (int i = 0; i < k; ++i) {
            CHECK(e1t.at(i, i) == 0);
            for (int j = 0; j < k; ++j) CHECK(e1t.at(i, j) == e1t.at(j, i));
            for (int j = 0; j < n; ++j) {
                if (e0t.at(i, j)) {
                    CHECK(e0s.at(i, j) == 1);
                    CHECK(visible[j]);
                }
            }
        }
    }
}

TEST_CASE("edge sets are isomorphic under keypoint permutation") {
    Rng rng(7);
    const int n = 10;
    ClusterAssignment clusters;
    clusters.groups = {{0, 1, 2}, {3, 4, 5, 6}, {7, 8}, {9}};
    clusters.centers = {0, 3, 7, 9};
    std::vector<bool> visible{true, false, true, true, true, false, false, true, false, true};

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    ClusterAssignment permuted = clusters;
    for (auto& g : permuted.groups) {
        for (int& idx : g) idx = perm[idx];
    }
    for (int& c : permuted.centers) c = perm[c];
    std::vector<bool> visible_p(n);
    for (int i = 0; i < n; ++i) visible_p[perm[i]] = visible[i];

    auto [e0, e1] = build_current_edges(clusters, visible, n);
    auto [e0p, e1p] = build_current_edges(permuted, visible_p, n);
    CHECK(e1p == e1);  // cluster order unchanged
    for (int i = 0; i < e0.rows; ++i) {
        for (int j = 0; j < n; ++j) CHECK(e0p.at(i, perm[j]) == e0.at(i, j));
    }
}

TEST_CASE("cluster_desired: a single point forms its own cluster") {
    auto result = cluster_desired({Eigen::Vector2d(0.2, -0.1)});
    REQUIRE(result.groups.size() == 1);
    CHECK(result.groups[0] == std::vector<int>{0});
    CHECK(result.centers == std::vector<int>{0});
}

TEST_CASE("cluster_desired: two well-separated blobs become two clusters") {
    Rng rng(11);
    std::normal_distribution<double> noise(0.0, 0.005);
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 10; ++i) pts.emplace_back(-0.3 + noise(rng), 0.0 + noise(rng));
    for (int i = 0; i < 10; ++i) pts.emplace_back(0.3 + noise(rng), 0.1 + noise(rng));

    auto result = cluster_desired(pts);
    REQUIRE(result.groups.size() == 2);
    for (const auto& group : result.groups) {
        REQUIRE(!group.empty());
        const bool left_blob = group.front() < 10;
        for (int idx : group) CHECK((idx < 10) == left_blob);
    }
    // Brute-force oracle: every point belongs with its nearest blob mean.
    for (const auto& group : result.groups) {
        CHECK(group.size() == 10);
    }
}

TEST_CASE("select_centers: closest to the group mean, lowest index on ties") {
    std::vector<Eigen::Vector2d> pts{{0.0, 0.0}, {1.0, 0.0}, {0.45, 0.0},
                                     {0.0, 1.0}, {0.0, 2.0}};
    ClusterAssignment clusters;
    clusters.groups = {{0, 1, 2}, {3, 4}};
    clusters.centers = {0, 3};
    select_centers(pts, clusters);
    // Group 0 mean is (0.483, 0): point 2 is closest.
    CHECK(clusters.centers[0] == 2);
    // Group 1 members are equidistant from the mean (0, 1.5): tie goes to 3.
    CHECK(clusters.centers[1] == 3);
}

TEST_CASE("graph_observation_clean at the desired pose reproduces desired keypoints") {
    SceneConfig scfg;
    scfg.n_points_min = scfg.n_points_max = 40;
    Rng rng(13);
    Scene scene = sample_scene(scfg, rng);
    Pose desired = sample_pose(desired_pose_config(), rng);
    GraphContext ctx = GraphContext::create(scene, CameraModel{}, desired);

    ServoGraph graph = graph_observation_clean(ctx, desired);
    REQUIRE(graph.num_keypoints() == 40);
    for (int i = 0; i < 40; ++i) {
        if (!graph.visible[i]) continue;
        CHECK((graph.current_kp[i] - graph.desired_kp[i]).norm() < 1e-12);
    }
    CHECK(graph.e0_t == graph.e0_star);
    CHECK(graph.e1_t == graph.e1_star);
}

TEST_CASE("graph_observation: camera looking away sees nothing and keeps empty edges") {
    SceneConfig scfg;
    scfg.n_points_min = scfg.n_points_max = 30;
    Rng rng(17);
    Scene scene = sample_scene(scfg, rng);
    Pose desired = sample_pose(desired_pose_config(), rng);
    GraphContext ctx = GraphContext::create(scene, CameraModel{}, desired);

    Pose away = desired;
    away.rotation = desired.rotation * rotation_exp(M_PI * Eigen::Vector3d::UnitY());
    CorrState corr = CorrState::init(scene.size(), away, scene.radius_m, rng);
    ServoGraph graph = graph_observation(ctx, away, corr, AugmentConfig{}, 0.04, rng);
    CHECK(std::count(graph.visible.begin(), graph.visible.end(), true) == 0);
    CHECK(std::count(graph.e0_t.data.begin(), graph.e0_t.data.end(), 1) == 0);
    CHECK(std::count(graph.e1_t.data.begin(), graph.e1_t.data.end(), 1) == 0);
    for (int i = 0; i < graph.num_keypoints(); ++i) {
        if (!graph.visible[i]) {
            CHECK(std::isnan(graph.current_kp[i].x()));
            CHECK(std::isnan(graph.current_kp[i].y()));
        }
    }
}

TEST_CASE("graph_observation: bit-exact reproducibility under a fixed seed") {
    SceneConfig scfg;
    scfg.n_points_min = scfg.n_points_max = 60;

    auto run = [&] {
        Rng rng(21);
        Scene scene = sample_scene(scfg, rng);
        auto [current, desired] =
            sample_pose_pair(initial_pose_config(), desired_pose_config(), rng);
        GraphContext ctx = GraphContext::create(scene, CameraModel{}, desired);
        CorrState corr = CorrState::init(scene.size(), current, scene.radius_m, rng);
        std::vector<ServoGraph> frames;
        Pose pose = current;
        Twist twist;
        twist.nu = Eigen::Vector3d(0.01, 0.0, 0.02);
        for (int step = 0; step < 20; ++step) {
            pose = se3_step(pose, twist, 0.04);
            frames.push_back(graph_observation(ctx, pose, corr, AugmentConfig{}, 0.04, rng));
        }
        return frames;
    };

    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (size_t f = 0; f < a.size(); ++f) {
        CHECK(a[f].visible == b[f].visible);
        CHECK(a[f].e0_t == b[f].e0_t);
        CHECK(a[f].e1_t == b[f].e1_t);
        for (int i = 0; i < a[f].num_keypoints(); ++i) {
            if (a[f].visible[i]) CHECK(a[f].current_kp[i] == b[f].current_kp[i]);
        }
    }
}

TEST_CASE("save_graph_edges: tagged adjacency dump matches the golden text") {
    ServoGraph graph;
    graph.clusters = example_clusters();
    graph.desired_kp.resize(7);
    graph.current_kp.resize(7);
    graph.visible = {false, true, false, true, false, false, true};
    std::tie(graph.e0_star, graph.e1_star) = build_desired_edges(graph.clusters, 7);
    std::tie(graph.e0_t, graph.e1_t) = build_current_edges(graph.clusters, graph.visible, 7);

    std::stringstream ss;
    save_graph_edges(ss, graph);
    const std::string expected =
        "E0* 0 0\nE0* 0 1\nE0* 0 2\nE0* 0 3\nE0* 1 4\nE0* 1 5\nE0* 2 6\n"
        "E1* 0 1\nE1* 0 2\nE1* 1 0\nE1* 1 2\nE1* 2 0\nE1* 2 1\n"
        "E0t 0 1\nE0t 0 3\nE0t 2 6\n"
        "E1t 0 2\nE1t 2 0\n";
    CHECK(ss.str() == expected);
}
