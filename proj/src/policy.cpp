#include "cns/policy.hpp"

#include <cmath>
#include <stdexcept>

namespace cns {

namespace {

Tensor xavier(int in, int out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-a, a);
    Tensor t(in, out, true);
    for (double& v : t.values()) v = u(rng);
    return t;
}

Tensor const_from_points(const std::vector<Eigen::Vector2d>& pts) {
    Tensor t(static_cast<int>(pts.size()), 2);
    for (size_t i = 0; i < pts.size(); ++i) {
        t(static_cast<int>(i), 0) = pts[i].x();
        t(static_cast<int>(i), 1) = pts[i].y();
    }
    return t;
}

}  // namespace

Linear Linear::create(int in, int out, Rng& rng) {
    Linear l;
    l.w = xavier(in, out, rng);
    l.b = Tensor::zeros(1, out, true);
    return l;
}

Tensor Linear::forward(const Tensor& x) const { return ad::add(ad::matmul(x, w), b); }

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
}

Mlp Mlp::create(int in, int hidden, int out, Rng& rng) {
    Mlp m;
    m.l1 = Linear::create(in, hidden, rng);
    m.l2 = Linear::create(hidden, out, rng);
    return m;
}

Tensor Mlp::forward(const Tensor& x) const { return l2.forward(ad::elu(l1.forward(x))); }

void Mlp::collect(const std::string& prefix, NamedTensors& out) const {
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
}

GraphNorm GraphNorm::create(int h) {
    GraphNorm g;
    g.gamma = Tensor::from(std::vector<double>(h, 1.0), 1, h, true);
    g.beta = Tensor::zeros(1, h, true);
    return g;
}

Tensor GraphNorm::forward(const Tensor& x) const {
    const int n = x.rows();
    if (n == 0) return x;
    Tensor ones = Tensor::from(std::vector<double>(n, 1.0 / n), 1, n);
    Tensor mu = ad::matmul(ones, x);                       // [1 x h]
    Tensor centered = ad::sub(x, mu);                      // row broadcast
    Tensor var = ad::matmul(ones, ad::mul(centered, centered));
    Tensor stddev = ad::sqrt(ad::add(var, Tensor::scalar(eps)));
    return ad::add(ad::mul(ad::div(centered, stddev), gamma), beta);
}

void GraphNorm::collect(const std::string& prefix, NamedTensors& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
}

EdgeList EdgeList::from_matrix(const EdgeMatrix& m) {
    EdgeList e;
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            if (m.at(i, j)) {
                e.targets.push_back(i);
                e.sources.push_back(j);
            }
        }
    }
    return e;
}

PtConv PtConv::create(int h, Rng& rng) {
    PtConv c;
    c.query = Linear::create(h, h, rng);
    c.key = Linear::create(h, h, rng);
    c.value = Linear::create(h, h, rng);
    c.pos_mlp = Mlp::create(2, h, h, rng);
    c.attn_mlp = Mlp::create(h, h, h, rng);
    return c;
}

Tensor PtConv::forward(const Tensor& source_feats, const Tensor& source_pos,
                       const Tensor& target_feats, const Tensor& target_pos,
                       const EdgeList& edges) const {
    const int n_targets = target_feats.rows();
    const int h = query.w.cols();
    if (edges.empty()) return Tensor::zeros(n_targets, h);

    Tensor q = ad::gather_rows(query.forward(target_feats), edges.targets);
    Tensor k = ad::gather_rows(key.forward(source_feats), edges.sources);
    Tensor v = ad::gather_rows(value.forward(source_feats), edges.sources);

    Tensor rel = ad::sub(ad::gather_rows(target_pos, edges.targets),
                         ad::gather_rows(source_pos, edges.sources));
    Tensor delta = pos_mlp.forward(rel);

    Tensor logits = attn_mlp.forward(ad::add(ad::sub(q, k), delta));
    Tensor weights = ad::segment_softmax(logits, edges.targets, n_targets);
    Tensor messages = ad::add(v, delta);
    return ad::scatter_add(ad::mul(weights, messages), edges.targets, n_targets);
}

void PtConv::collect(const std::string& prefix, NamedTensors& out) const {
    query.collect(prefix + ".query", out);
    key.collect(prefix + ".key", out);
    value.collect(prefix + ".value", out);
    pos_mlp.collect(prefix + ".pos", out);
    attn_mlp.collect(prefix + ".attn", out);
}

PerConv PerConv::create(int in, int out, Rng& rng) {
    PerConv c;
    c.in_dim = in;
    c.out_dim = out;
    c.msg_mlp = Mlp::create(2 * in + 2, out, out, rng);
    c.update_mlp = Mlp::create(out, out, out, rng);
    if (in != out) c.w_res = xavier(in, out, rng);
    return c;
}

Tensor PerConv::forward(const Tensor& source_feats, const Tensor& target_feats,
                        const Tensor& source_pos, const Tensor& target_pos,
                        const EdgeList& edges) const {
    Tensor residual =
        in_dim == out_dim ? target_feats : ad::matmul(target_feats, w_res);
    if (edges.empty()) return residual;

    const int n_targets = target_feats.rows();
    Tensor src = ad::gather_rows(source_feats, edges.sources);
    Tensor tgt = ad::gather_rows(target_feats, edges.targets);
    Tensor rel = ad::sub(ad::gather_rows(source_pos, edges.sources),
                         ad::gather_rows(target_pos, edges.targets));
    Tensor m = msg_mlp.forward(ad::concat_cols(ad::concat_cols(src, tgt), rel));
    Tensor agg = ad::scatter_max(m, edges.targets, n_targets);
    Tensor upd = update_mlp.forward(agg);

    // Only targets with in-edges receive the aggregated update.
    Tensor mask = Tensor::zeros(n_targets, 1);
    for (int t : edges.targets) mask(t, 0) = 1.0;
    return ad::add(residual, ad::mul(upd, mask));
}

void PerConv::collect(const std::string& prefix, NamedTensors& out) const {
    msg_mlp.collect(prefix + ".msg", out);
    update_mlp.collect(prefix + ".update", out);
    if (in_dim != out_dim) out.emplace_back(prefix + ".w_res", w_res);
}

GConvGru GConvGru::create(int h, Rng& rng) {
    GConvGru g;
    g.z_conv = PerConv::create(2 * h, h, rng);
    g.r_conv = PerConv::create(2 * h, h, rng);
    g.h_conv = PerConv::create(2 * h, h, rng);
    return g;
}

Tensor GConvGru::forward(const Tensor& hidden, const Tensor& x, const Tensor& pos,
                         const EdgeList& edges) const {
    Tensor xh = ad::concat_cols(x, hidden);
    Tensor z = ad::sigmoid(z_conv.forward(xh, xh, pos, pos, edges));
    Tensor r = ad::sigmoid(r_conv.forward(xh, xh, pos, pos, edges));
    Tensor xrh = ad::concat_cols(x, ad::mul(r, hidden));
    Tensor candidate = ad::tanh(h_conv.forward(xrh, xrh, pos, pos, edges));
    // h' = (1 - z) * h + z * h~
    return ad::add(hidden, ad::mul(z, ad::sub(candidate, hidden)));
}

void GConvGru::collect(const std::string& prefix, NamedTensors& out) const {
    z_conv.collect(prefix + ".z", out);
    r_conv.collect(prefix + ".r", out);
    h_conv.collect(prefix + ".h", out);
}

PolicyParams PolicyParams::create(int hidden, Rng& rng) {
    PolicyParams p;
    p.hidden = hidden;
    p.embed = Mlp::create(2, hidden, hidden, rng);
    p.ptconv = PtConv::create(hidden, rng);
    p.fuse = Mlp::create(2 * hidden, hidden, hidden, rng);
    p.per1 = PerConv::create(hidden, hidden, rng);
    p.per2 = PerConv::create(hidden, hidden, rng);
    p.norm1 = GraphNorm::create(hidden);
    p.norm2 = GraphNorm::create(hidden);
    p.gru = GConvGru::create(hidden, rng);
    p.head = Mlp::create(hidden + 2, hidden, 7, rng);
    return p;
}

NamedTensors PolicyParams::named_parameters() const {
    NamedTensors out;
    embed.collect("embed", out);
    ptconv.collect("ptconv", out);
    fuse.collect("fuse", out);
    per1.collect("per1", out);
    per2.collect("per2", out);
    norm1.collect("norm1", out);
    norm2.collect("norm2", out);
    gru.collect("gru", out);
    head.collect("head", out);
    return out;
}

std::vector<Tensor> PolicyParams::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

void PolicyParams::save(std::ostream& os) const { ad::save_tensors(os, named_parameters()); }

PolicyParams PolicyParams::load(std::istream& is) {
    auto records = ad::load_tensors(is);
    const auto it = records.find("embed.l1.w");
    if (it == records.end()) throw std::runtime_error("PolicyParams::load: missing embed layer");
    const int hidden = it->second.cols();
    Rng rng(0);
    PolicyParams p = PolicyParams::create(hidden, rng);
    for (auto& [name, t] : p.named_parameters()) {
        const auto rec = records.find(name);
        if (rec == records.end()) {
            throw std::runtime_error("PolicyParams::load: missing tensor " + name);
        }
        if (rec->second.rows() != t.rows() || rec->second.cols() != t.cols()) {
            throw std::runtime_error("PolicyParams::load: shape mismatch for " + name);
        }
        t.values() = rec->second.values();
    }
    return p;
}

HiddenState HiddenState::zeros(int n_clusters, int hidden) {
    return HiddenState{Tensor::zeros(n_clusters, hidden)};
}

PolicyOutput PolicyTrace::output() const {
    PolicyOutput out;
    out.hold = hold;
    if (hold) {
        out.l_pred = norm_transfer_inverse(1e-4);
        return out;
    }
    for (int i = 0; i < 6; ++i) out.v_dir[i] = v_dir(0, i);
    out.l_pred = l_pred.value();
    return out;
}

std::pair<PolicyTrace, HiddenState> policy_forward(const ServoGraph& graph,
                                                   const HiddenState& hidden,
                                                   const PolicyParams& params) {
    const int n_clusters = graph.num_clusters();
    const std::vector<bool> active = graph.cluster_active();
    const bool any_visible =
        std::find(active.begin(), active.end(), true) != active.end();
    if (!any_visible) {
        PolicyTrace trace;
        trace.hold = true;
        return {trace, hidden};
    }

    // Visible current keypoints only; invisible positions are NaN sentinels
    // and must never reach the network.
    std::vector<int> visible_idx;
    std::vector<Eigen::Vector2d> visible_pos;
    std::vector<int> row_of_keypoint(graph.num_keypoints(), -1);
    for (int i = 0; i < graph.num_keypoints(); ++i) {
        if (graph.visible[i]) {
            row_of_keypoint[i] = static_cast<int>(visible_idx.size());
            visible_idx.push_back(i);
            visible_pos.push_back(graph.current_kp[i]);
        }
    }

    Tensor desired_pos = const_from_points(graph.desired_kp);
    Tensor current_pos = const_from_points(visible_pos);
    Tensor center_pos = const_from_points(graph.center_positions());

    Tensor x_des = params.embed.forward(desired_pos);
    Tensor x_cur = params.embed.forward(current_pos);
    Tensor center_feats = ad::gather_rows(x_des, graph.clusters.centers);

    EdgeList e0_star = EdgeList::from_matrix(graph.e0_star);
    EdgeList e0_t = EdgeList::from_matrix(graph.e0_t);
    for (int& s : e0_t.sources) s = row_of_keypoint[s];  // remap to visible rows

    Tensor a_des =
        params.ptconv.forward(x_des, desired_pos, center_feats, center_pos, e0_star);
    Tensor a_cur =
        params.ptconv.forward(x_cur, current_pos, center_feats, center_pos, e0_t);

    Tensor fused =
        params.fuse.forward(ad::concat_cols(ad::sub(a_des, a_cur), a_des));

    EdgeList e1_t = EdgeList::from_matrix(graph.e1_t);
    Tensor x1 = params.norm1.forward(
        params.per1.forward(fused, fused, center_pos, center_pos, e1_t));
    Tensor x2 = params.norm2.forward(
        params.per2.forward(x1, x1, center_pos, center_pos, e1_t));

    Tensor h_updated = params.gru.forward(hidden.h, x2, center_pos, e1_t);

    // Clusters with no visible members keep their previous hidden rows.
    Tensor active_mask = Tensor::zeros(n_clusters, 1);
    for (int g = 0; g < n_clusters; ++g) active_mask(g, 0) = active[g] ? 1.0 : 0.0;
    Tensor h_new =
        ad::add(hidden.h, ad::mul(ad::sub(h_updated, hidden.h), active_mask));

    // Mean pool over the active centers.
    int n_active = 0;
    for (bool a : active) n_active += a ? 1 : 0;
    Tensor pool = Tensor::zeros(1, n_clusters);
    for (int g = 0; g < n_clusters; ++g) {
        pool(0, g) = active[g] ? 1.0 / n_active : 0.0;
    }
    Tensor pooled = ad::matmul(pool, h_new);

    // Graph normalization divides the graph-wide feature scale out of every
    // path to the head, so the error magnitude must be re-injected: feed the
    // mean keypoint displacement (and its log) alongside the pooled state.
    double mean_disp = 0.0;
    for (size_t r = 0; r < visible_idx.size(); ++r) {
        mean_disp += (visible_pos[r] - graph.desired_kp[visible_idx[r]]).norm();
    }
    mean_disp /= static_cast<double>(visible_idx.size());
    Tensor scale_feat = Tensor::from({mean_disp, std::log(mean_disp + 1e-3)}, 1, 2);
    Tensor out = params.head.forward(ad::concat_cols(pooled, scale_feat));

    PolicyTrace trace;
    trace.v_dir = ad::slice_cols(out, 0, 6);
    trace.l_pred = ad::slice_cols(out, 6, 7);
    return {trace, HiddenState{h_new}};
}

double norm_transfer(double x) { return x >= 0 ? 1.0 + x : std::exp(x); }

double norm_transfer_inverse(double y) {
    if (!(y > 0)) throw std::invalid_argument("norm_transfer_inverse: input must be positive");
    return y >= 1.0 ? y - 1.0 : std::log(y);
}

Twist decode_velocity(const PolicyOutput& out, double d) {
    if (!(d > 0)) throw std::invalid_argument("decode_velocity: invalid distance prior");
    const double norm = out.v_dir.norm();
    if (out.hold || norm < 1e-12) return Twist{};
    const Eigen::Matrix<double, 6, 1> unit = out.v_dir / norm;
    const double magnitude = norm_transfer(out.l_pred);
    Twist twist;
    twist.nu = unit.head<3>() * magnitude * d;
    twist.omega = unit.tail<3>() * magnitude;
    return twist;
}

Tensor servo_loss(const PolicyTrace& trace, const Eigen::Matrix<double, 6, 1>& v_gt_dd) {
    if (trace.hold) throw std::logic_error("servo_loss: no prediction on a hold step");
    const double gt_norm = std::max(v_gt_dd.norm(), 1e-4);
    Tensor gt = Tensor::from({v_gt_dd[0], v_gt_dd[1], v_gt_dd[2], v_gt_dd[3], v_gt_dd[4],
                              v_gt_dd[5]},
                             1, 6);
    Tensor dot = ad::sum(ad::mul(trace.v_dir, gt));
    Tensor pred_norm =
        ad::sqrt(ad::add(ad::sum(ad::mul(trace.v_dir, trace.v_dir)), Tensor::scalar(1e-12)));
    Tensor cosine = ad::div(dot, ad::scale(pred_norm, gt_norm));
    Tensor l_dir = ad::sub(Tensor::scalar(1.0), cosine);

    Tensor diff = ad::sub(trace.l_pred, Tensor::scalar(norm_transfer_inverse(gt_norm)));
    Tensor l_norm = ad::mul(diff, diff);
    return ad::add(l_dir, ad::scale(l_norm, 0.1));
}

}  // namespace cns
