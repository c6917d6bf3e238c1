#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "cns/graph.hpp"
#include "cns/policy.hpp"
#include "doctest.h"

using namespace cns;
using ad::Tensor;

namespace {

Tensor random_tensor(int rows, int cols, Rng& rng, bool requires_grad = false) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Tensor t(rows, cols, requires_grad);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

void zero_all(const NamedTensors& tensors) {
    for (const auto& [name, t] : tensors) {
        Tensor copy = t;
        std::fill(copy.values().begin(), copy.values().end(), 0.0);
    }
}

// A hand-built 16-keypoint, 3-cluster graph with mixed visibility.
ServoGraph small_graph(Rng& rng, bool all_visible = false) {
    ServoGraph g;
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    const int n = 16;
    for (int i = 0; i < n; ++i) g.desired_kp.emplace_back(u(rng), u(rng));
    g.clusters.groups = {{0, 1, 2, 3, 4, 5}, {6, 7, 8, 9, 10}, {11, 12, 13, 14, 15}};
    g.clusters.centers = {0, 6, 11};
    select_centers(g.desired_kp, g.clusters);
    g.visible.assign(n, true);
    if (!all_visible) {
        g.visible[2] = g.visible[7] = g.visible[8] = g.visible[15] = false;
    }
    std::uniform_real_distribution<double> jitter(-0.05, 0.05);
    g.current_kp.resize(n);
    for (int i = 0; i < n; ++i) {
        if (g.visible[i]) {
            g.current_kp[i] = g.desired_kp[i] + Eigen::Vector2d(jitter(rng), jitter(rng));
        } else {
            g.current_kp[i] = Eigen::Vector2d(std::nan(""), std::nan(""));
        }
    }
    std::tie(g.e0_star, g.e1_star) = build_desired_edges(g.clusters, n);
    std::tie(g.e0_t, g.e1_t) = build_current_edges(g.clusters, g.visible, n);
    return g;
}

}  // namespace

TEST_CASE("ptconv: a single source reduces to value plus positional term") {
    Rng rng(1);
    const int h = 6;
    PtConv conv = PtConv::create(h, rng);
    Tensor src = random_tensor(1, h, rng);
    Tensor tgt = random_tensor(1, h, rng);
    Tensor src_pos = random_tensor(1, 2, rng);
    Tensor tgt_pos = random_tensor(1, 2, rng);
    EdgeList edges;
    edges.targets = {0};
    edges.sources = {0};

    Tensor out = conv.forward(src, src_pos, tgt, tgt_pos, edges);
    Tensor rel = ad::sub(tgt_pos, src_pos);
    Tensor delta = conv.pos_mlp.forward(rel);
    Tensor want = ad::add(conv.value.forward(src), delta);
    for (int j = 0; j < h; ++j) CHECK(out(0, j) == doctest::Approx(want(0, j)).epsilon(1e-12));
}

TEST_CASE("ptconv: two identical sources equal the single-source output") {
    Rng rng(2);
    const int h = 6;
    PtConv conv = PtConv::create(h, rng);
    Tensor one = random_tensor(1, h, rng);
    Tensor two(2, h);
    for (int j = 0; j < h; ++j) two(0, j) = two(1, j) = one(0, j);
    Tensor tgt = random_tensor(1, h, rng);
    Tensor pos1 = random_tensor(1, 2, rng);
    Tensor pos2(2, 2);
    pos2(0, 0) = pos2(1, 0) = pos1(0, 0);
    pos2(0, 1) = pos2(1, 1) = pos1(0, 1);
    Tensor tgt_pos = random_tensor(1, 2, rng);

    EdgeList single{{0}, {0}};
    EdgeList pair{{0, 0}, {0, 1}};
    Tensor a = conv.forward(one, pos1, tgt, tgt_pos, single);
    Tensor b = conv.forward(two, pos2, tgt, tgt_pos, pair);
    for (int j = 0; j < h; ++j) CHECK(std::abs(a(0, j) - b(0, j)) < 1e-12);
}

TEST_CASE("ptconv: zero in-edges yield zero rows; edge order is irrelevant") {
    Rng rng(3);
    const int h = 5;
    PtConv conv = PtConv::create(h, rng);
    Tensor src = random_tensor(4, h, rng);
    Tensor src_pos = random_tensor(4, 2, rng);
    Tensor tgt = random_tensor(2, h, rng);
    Tensor tgt_pos = random_tensor(2, 2, rng);

    EdgeList none;
    Tensor zero = conv.forward(src, src_pos, tgt, tgt_pos, none);
    for (double v : zero.values()) CHECK(v == 0.0);

    // Target 0 aggregates sources {0,1,2}; target 1 has no in-edges.
    EdgeList fwd{{0, 0, 0}, {0, 1, 2}};
    EdgeList rev{{0, 0, 0}, {2, 0, 1}};
    Tensor a = conv.forward(src, src_pos, tgt, tgt_pos, fwd);
    Tensor b = conv.forward(src, src_pos, tgt, tgt_pos, rev);
    for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
    for (int j = 0; j < h; ++j) CHECK(a(1, j) == 0.0);
}

TEST_CASE("perconv: no in-edges pass the input through unchanged") {
    Rng rng(4);
    const int h = 5;
    PerConv conv = PerConv::create(h, h, rng);
    Tensor feats = random_tensor(3, h, rng);
    Tensor pos = random_tensor(3, 2, rng);
    Tensor out = conv.forward(feats, feats, pos, pos, EdgeList{});
    for (size_t i = 0; i < feats.size(); ++i) CHECK(out.values()[i] == feats.values()[i]);

    // With edges, targets lacking in-edges still pass through.
    EdgeList edges{{0}, {1}};
    out = conv.forward(feats, feats, pos, pos, edges);
    for (int j = 0; j < h; ++j) {
        CHECK(out(1, j) == feats(1, j));
        CHECK(out(2, j) == feats(2, j));
    }
}

TEST_CASE("perconv: duplicate edges collapse under max aggregation") {
    Rng rng(5);
    const int h = 5;
    PerConv conv = PerConv::create(h, h, rng);
    Tensor feats = random_tensor(3, h, rng);
    Tensor pos = random_tensor(3, 2, rng);
    EdgeList single{{0}, {1}};
    EdgeList dup{{0, 0}, {1, 1}};
    Tensor a = conv.forward(feats, feats, pos, pos, single);
    Tensor b = conv.forward(feats, feats, pos, pos, dup);
    for (size_t i = 0; i < a.size(); ++i) CHECK(a.values()[i] == b.values()[i]);
}

TEST_CASE("perconv: invariant to source enumeration order") {
    Rng rng(6);
    const int h = 4;
    PerConv conv = PerConv::create(h, h, rng);
    Tensor feats = random_tensor(5, h, rng);
    Tensor pos = random_tensor(5, 2, rng);
    EdgeList fwd{{0, 0, 0, 1}, {1, 2, 3, 4}};
    EdgeList rev{{1, 0, 0, 0}, {4, 3, 1, 2}};
    Tensor a = conv.forward(feats, feats, pos, pos, fwd);
    Tensor b = conv.forward(feats, feats, pos, pos, rev);
    for (size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.values()[i] - b.values()[i]) < 1e-12);
}

TEST_CASE("gconv_gru: zeroed convolutions halve the hidden state") {
    Rng rng(7);
    const int h = 4;
    GConvGru gru = GConvGru::create(h, rng);
    NamedTensors weights;
    gru.collect("gru", weights);
    zero_all(weights);

    Tensor hidden = random_tensor(3, h, rng);
    Tensor x = random_tensor(3, h, rng);
    Tensor pos = random_tensor(3, 2, rng);
    EdgeList edges{{0, 1, 2}, {1, 2, 0}};
    Tensor out = gru.forward(hidden, x, pos, edges);
    // z = r = sigmoid(0) = 0.5 and the candidate is tanh(0) = 0.
    for (size_t i = 0; i < out.size(); ++i) {
        CHECK(out.values()[i] == doctest::Approx(0.5 * hidden.values()[i]));
    }
}

TEST_CASE("gconv_gru: zero hidden keeps the update inside the tanh band") {
    Rng rng(8);
    const int h = 6;
    GConvGru gru = GConvGru::create(h, rng);
    Tensor hidden = Tensor::zeros(4, h);
    Tensor x = random_tensor(4, h, rng);
    Tensor pos = random_tensor(4, 2, rng);
    EdgeList edges{{0, 1, 2, 3}, {3, 0, 1, 2}};
    Tensor out = gru.forward(hidden, x, pos, edges);
    for (double v : out.values()) CHECK(std::abs(v) <= 1.0);
}

TEST_CASE("graph_norm: normalizes features over nodes before the affine map") {
    Rng rng(9);
    const int h = 5;
    GraphNorm norm = GraphNorm::create(h);
    Tensor x = random_tensor(12, h, rng);
    Tensor y = norm.forward(x);
    for (int j = 0; j < h; ++j) {
        double mean = 0.0;
        for (int i = 0; i < 12; ++i) mean += y(i, j);
        mean /= 12;
        double var = 0.0;
        for (int i = 0; i < 12; ++i) var += (y(i, j) - mean) * (y(i, j) - mean);
        var /= 12;
        CHECK(std::abs(mean) < 1e-9);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("norm_transfer: exact inverse, positivity, and smoothness at zero") {
    for (double x : {-3.0, 0.0, 2.5}) {
        CHECK(std::abs(norm_transfer_inverse(norm_transfer(x)) - x) < 1e-12);
    }
    for (double x = -5.0; x <= 5.0; x += 0.01) CHECK(norm_transfer(x) > 0.0);
    const double h = 1e-7;
    CHECK(std::abs(norm_transfer(h) - norm_transfer(-h)) < 3 * h);  // continuous at 0
    const double d_plus = (norm_transfer(2 * h) - norm_transfer(h)) / h;
    const double d_minus = (norm_transfer(-h) - norm_transfer(-2 * h)) / h;
    CHECK(std::abs(d_plus - d_minus) < 1e-6);  // C1 at 0
    CHECK_THROWS_AS(norm_transfer_inverse(0.0), std::invalid_argument);
}

TEST_CASE("decode_velocity: plug-in cases, exponential decay, and invalid prior") {
    PolicyOutput out;
    out.v_dir << 1, 0, 0, 0, 0, 0;
    out.l_pred = 0.0;
    Twist twist = decode_velocity(out, 2.0);
    CHECK((twist.nu - Eigen::Vector3d(2, 0, 0)).norm() < 1e-12);
    CHECK(twist.omega.norm() < 1e-12);

    out.l_pred = -20.0;
    twist = decode_velocity(out, 2.0);
    CHECK(twist.vector().norm() < 1e-8 * 2.0);

    out.v_dir << 0, 0, 0, 0.6, 0, 0.8;
    out.l_pred = 1.0;
    twist = decode_velocity(out, 0.5);
    CHECK((twist.omega - Eigen::Vector3d(1.2, 0, 1.6)).norm() < 1e-12);
    CHECK(twist.nu.norm() < 1e-12);

    CHECK_THROWS_WITH(decode_velocity(out, 0.0), "decode_velocity: invalid distance prior");
}

TEST_CASE("servo_loss: zero at the exact answer, one when perpendicular") {
    Eigen::Matrix<double, 6, 1> gt;
    gt << 0.3, -0.1, 0.2, 0.05, 0.0, -0.02;

    PolicyTrace trace;
    const double k = 2.7;  // any positive scale of the direction
    trace.v_dir = Tensor::from({k * gt[0], k * gt[1], k * gt[2], k * gt[3], k * gt[4], k * gt[5]},
                               1, 6);
    trace.l_pred = Tensor::from({norm_transfer_inverse(gt.norm())}, 1, 1);
    CHECK(servo_loss(trace, gt).value() == doctest::Approx(0.0).epsilon(1e-9));

    Eigen::Matrix<double, 6, 1> perp;
    perp << gt[1], -gt[0], 0, 0, 0, 0;  // orthogonal to gt
    REQUIRE(std::abs(perp.dot(gt)) < 1e-15);
    trace.v_dir = Tensor::from({perp[0], perp[1], perp[2], perp[3], perp[4], perp[5]}, 1, 6);
    CHECK(servo_loss(trace, gt).value() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("policy_forward: matching poses make both aggregation branches equal") {
    Rng rng(10);
    ServoGraph g = small_graph(rng, /*all_visible=*/true);
    g.current_kp = g.desired_kp;  // current view identical to the desired view
    std::tie(g.e0_t, g.e1_t) = build_current_edges(g.clusters, g.visible, g.num_keypoints());

    Rng prng(0);
    PolicyParams params = PolicyParams::create(8, prng);

    // Recompute the two PTConv branches exactly as the forward pass does.
    Tensor pos(16, 2);
    for (int i = 0; i < 16; ++i) {
        pos(i, 0) = g.desired_kp[i].x();
        pos(i, 1) = g.desired_kp[i].y();
    }
    Tensor x = params.embed.forward(pos);
    Tensor center_feats = ad::gather_rows(x, g.clusters.centers);
    auto centers = g.center_positions();
    Tensor cpos(3, 2);
    for (int i = 0; i < 3; ++i) {
        cpos(i, 0) = centers[i].x();
        cpos(i, 1) = centers[i].y();
    }
    EdgeList e = EdgeList::from_matrix(g.e0_star);
    Tensor a_des = params.ptconv.forward(x, pos, center_feats, cpos, e);
    Tensor a_cur = params.ptconv.forward(x, pos, center_feats, cpos, e);
    for (size_t i = 0; i < a_des.size(); ++i) {
        CHECK(a_des.values()[i] == a_cur.values()[i]);
    }

    auto [trace, hidden] = policy_forward(g, HiddenState::zeros(3, 8), params);
    CHECK_FALSE(trace.hold);
    for (double v : trace.v_dir.values()) CHECK(std::isfinite(v));
}

TEST_CASE("policy_forward: invariant to keypoint relabeling within 1e-10") {
    Rng rng(11);
    ServoGraph g = small_graph(rng);
    Rng prng(1);
    PolicyParams params = PolicyParams::create(8, prng);
    auto [trace, hidden] = policy_forward(g, HiddenState::zeros(3, 8), params);

    const int n = g.num_keypoints();
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    ServoGraph p;
    p.desired_kp.resize(n);
    p.current_kp.resize(n);
    p.visible.resize(n);
    for (int i = 0; i < n; ++i) {
        p.desired_kp[perm[i]] = g.desired_kp[i];
        p.current_kp[perm[i]] = g.current_kp[i];
        p.visible[perm[i]] = g.visible[i];
    }
    p.clusters = g.clusters;
    for (auto& group : p.clusters.groups) {
        for (int& idx : group) idx = perm[idx];
    }
    for (int& c : p.clusters.centers) c = perm[c];
    std::tie(p.e0_star, p.e1_star) = build_desired_edges(p.clusters, n);
    std::tie(p.e0_t, p.e1_t) = build_current_edges(p.clusters, p.visible, n);

    auto [trace_p, hidden_p] = policy_forward(p, HiddenState::zeros(3, 8), params);
    for (int j = 0; j < 6; ++j) {
        CHECK(std::abs(trace_p.v_dir(0, j) - trace.v_dir(0, j)) < 1e-10);
    }
    CHECK(std::abs(trace_p.l_pred(0, 0) - trace.l_pred(0, 0)) < 1e-10);
}

TEST_CASE("policy_forward: zero visible keypoints is a hold step") {
    Rng rng(12);
    ServoGraph g = small_graph(rng);
    std::fill(g.visible.begin(), g.visible.end(), false);
    for (auto& kp : g.current_kp) kp = Eigen::Vector2d(std::nan(""), std::nan(""));
    std::tie(g.e0_t, g.e1_t) = build_current_edges(g.clusters, g.visible, g.num_keypoints());

    Rng prng(2);
    PolicyParams params = PolicyParams::create(8, prng);
    HiddenState hidden = HiddenState::zeros(3, 8);
    hidden.h(1, 3) = 0.7;
    auto [trace, next] = policy_forward(g, hidden, params);
    CHECK(trace.hold);
    CHECK(next.h.values() == hidden.h.values());

    PolicyOutput out = trace.output();
    CHECK(out.v_dir.norm() == 0.0);
    CHECK(out.l_pred == doctest::Approx(norm_transfer_inverse(1e-4)));
    CHECK(decode_velocity(out, 0.7).vector().norm() == 0.0);
}

TEST_CASE("policy_forward: fully hidden clusters keep their hidden rows") {
    Rng rng(13);
    ServoGraph g = small_graph(rng);
    for (int idx : g.clusters.groups[1]) {
        g.visible[idx] = false;
        g.current_kp[idx] = Eigen::Vector2d(std::nan(""), std::nan(""));
    }
    std::tie(g.e0_t, g.e1_t) = build_current_edges(g.clusters, g.visible, g.num_keypoints());

    Rng prng(3);
    PolicyParams params = PolicyParams::create(8, prng);
    HiddenState hidden = HiddenState::zeros(3, 8);
    for (int j = 0; j < 8; ++j) hidden.h(1, j) = 0.1 * j;
    auto [trace, next] = policy_forward(g, hidden, params);
    CHECK_FALSE(trace.hold);
    for (int j = 0; j < 8; ++j) CHECK(next.h(1, j) == hidden.h(1, j));
    // Active clusters do change.
    double change = 0.0;
    for (int j = 0; j < 8; ++j) change += std::abs(next.h(0, j) - hidden.h(0, j));
    CHECK(change > 0.0);
}

TEST_CASE("policy gradients match finite differences end to end") {
    Rng rng(14);
    ServoGraph g = small_graph(rng);
    Rng prng(4);
    PolicyParams params = PolicyParams::create(6, prng);
    Eigen::Matrix<double, 6, 1> gt;
    gt << 0.2, -0.3, 0.5, 0.05, -0.1, 0.02;

    auto loss_value = [&] {
        auto [trace, hidden] = policy_forward(g, HiddenState::zeros(3, 6), params);
        return servo_loss(trace, gt);
    };

    std::vector<Tensor> trainable = params.parameters();
    ad::zero_grad(trainable);
    Tensor loss = loss_value();
    ad::backward(loss);

    const double h = 1e-5;
    Rng pick_rng(15);
    for (auto& leaf : trainable) {
        // Spot-check a few entries per tensor to keep runtime bounded.
        std::uniform_int_distribution<size_t> pick(0, leaf.size() - 1);
        for (int probe = 0; probe < 3; ++probe) {
            const size_t k = pick(pick_rng);
            const double orig = leaf.values()[k];
            leaf.values()[k] = orig + h;
            const double f_plus = loss_value().value();
            leaf.values()[k] = orig - h;
            const double f_minus = loss_value().value();
            leaf.values()[k] = orig;
            const double numeric = (f_plus - f_minus) / (2 * h);
            const double analytic = leaf.grad()[k];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
            CHECK(std::abs(numeric - analytic) / denom < 1e-4);
        }
    }
}

TEST_CASE("distance decoupling: uniform scene scaling leaves the output bit-identical") {
    SceneConfig scfg;
    scfg.n_points_min = scfg.n_points_max = 40;
    Rng rng(16);
    Scene scene = sample_scene(scfg, rng);
    auto [current, desired] = sample_pose_pair(initial_pose_config(), desired_pose_config(), rng);

    const double k = 4.0;  // power of two keeps the scaled projections bit-exact
    Scene scaled = scene;
    for (auto& p : scaled.points) p *= k;
    scaled.radius_m *= k;
    Pose current_k = current, desired_k = desired;
    current_k.translation *= k;
    desired_k.translation *= k;

    GraphContext ctx = GraphContext::create(scene, CameraModel{}, desired);
    GraphContext ctx_k = GraphContext::create(scaled, CameraModel{}, desired_k);
    ServoGraph g = graph_observation_clean(ctx, current);
    ServoGraph g_k = graph_observation_clean(ctx_k, current_k);

    // Projections are scale-invariant, so the graphs coincide exactly.
    REQUIRE(g.visible == g_k.visible);
    for (int i = 0; i < g.num_keypoints(); ++i) {
        if (g.visible[i]) CHECK(g.current_kp[i] == g_k.current_kp[i]);
        CHECK(g.desired_kp[i] == g_k.desired_kp[i]);
    }

    Rng prng(5);
    PolicyParams params = PolicyParams::create(8, prng);
    const int nc = static_cast<int>(ctx.clusters.groups.size());
    auto [trace, h1] = policy_forward(g, HiddenState::zeros(nc, 8), params);
    auto [trace_k, h2] = policy_forward(g_k, HiddenState::zeros(nc, 8), params);
    CHECK(trace.v_dir.values() == trace_k.v_dir.values());
    CHECK(trace.l_pred.values() == trace_k.l_pred.values());

    const double d = desired.to_camera(scene.center()).norm();
    Twist base = decode_velocity(trace.output(), d);
    Twist scaled_twist = decode_velocity(trace_k.output(), k * d);
    CHECK((scaled_twist.omega - base.omega).norm() < 1e-15);
    CHECK((scaled_twist.nu - k * base.nu).norm() < 1e-12);
}

TEST_CASE("policy save/load: forward pass reproduced bit-exactly") {
    Rng rng(17);
    ServoGraph g = small_graph(rng);
    Rng prng(6);
    PolicyParams params = PolicyParams::create(8, prng);

    std::stringstream ss;
    params.save(ss);
    PolicyParams loaded = PolicyParams::load(ss);
    CHECK(loaded.hidden == 8);

    auto [a, ha] = policy_forward(g, HiddenState::zeros(3, 8), params);
    auto [b, hb] = policy_forward(g, HiddenState::zeros(3, 8), loaded);
    CHECK(a.v_dir.values() == b.v_dir.values());
    CHECK(a.l_pred.values() == b.l_pred.values());
}
