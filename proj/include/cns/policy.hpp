#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cns/geometry.hpp"
#include "cns/graph.hpp"
#include "cns/scene.hpp"
#include "cns/tensor.hpp"

namespace cns {

using ad::Tensor;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Linear {
    Tensor w, b;  // [in x out], [1 x out]

    static Linear create(int in, int out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Linear -> ELU -> Linear.
struct Mlp {
    Linear l1, l2;

    static Mlp create(int in, int hidden, int out, Rng& rng);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Per-feature normalization over the nodes of one graph, learned affine.
struct GraphNorm {
    Tensor gamma, beta;  // [1 x h]
    double eps = 1e-5;

    static GraphNorm create(int h);
    Tensor forward(const Tensor& x) const;
    void collect(const std::string& prefix, NamedTensors& out) const;
};

struct EdgeList {
    std::vector<int> targets, sources;

    bool empty() const { return targets.empty(); }
    static EdgeList from_matrix(const EdgeMatrix& m);
};

/// Point-transformer attention: vector attention over in-edges with a
/// relative-position encoding on both the logits and the messages.
struct PtConv {
    Linear query, key, value;  // h -> h
    Mlp pos_mlp;               // 2 -> h
    Mlp attn_mlp;              // h -> h

    static PtConv create(int h, Rng& rng);
    /// Targets with no in-edges yield zero rows.
    Tensor forward(const Tensor& source_feats, const Tensor& source_pos,
                   const Tensor& target_feats, const Tensor& target_pos,
                   const EdgeList& edges) const;
    void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Relative-position edge messages, max aggregation, residual connection.
/// The residual is the identity when in == out, a learned projection
/// otherwise; targets with no in-edges pass through the residual only.
struct PerConv {
    int in_dim = 0, out_dim = 0;
    Mlp msg_mlp;     // (2*in + 2) -> out
    Mlp update_mlp;  // out -> out
    Tensor w_res;    // [in x out], unused when in == out

    static PerConv create(int in, int out, Rng& rng);
    Tensor forward(const Tensor& source_feats, const Tensor& target_feats,
                   const Tensor& source_pos, const Tensor& target_pos,
                   const EdgeList& edges) const;
    void collect(const std::string& prefix, NamedTensors& out) const;
};

/// GRU whose gates and candidate state are graph convolutions.
struct GConvGru {
    PerConv z_conv, r_conv, h_conv;  // 2h -> h each, independent weights

    static GConvGru create(int h, Rng& rng);
    Tensor forward(const Tensor& hidden, const Tensor& x, const Tensor& pos,
                   const EdgeList& edges) const;
    void collect(const std::string& prefix, NamedTensors& out) const;
};

struct PolicyParams {
    int hidden = 64;
    Mlp embed;        // 2 -> h
    PtConv ptconv;
    Mlp fuse;         // 2h -> h
    PerConv per1, per2;
    GraphNorm norm1, norm2;
    GConvGru gru;
    Mlp head;         // h + 2 -> 7 (pooled state plus mean-displacement scale)

    static PolicyParams create(int hidden, Rng& rng);
    std::vector<Tensor> parameters();
    NamedTensors named_parameters() const;

    void save(std::ostream& os) const;
    static PolicyParams load(std::istream& is);
};

struct HiddenState {
    Tensor h;  // [N_c x h]

    static HiddenState zeros(int n_clusters, int hidden);
};

struct PolicyOutput {
    Eigen::Matrix<double, 6, 1> v_dir = Eigen::Matrix<double, 6, 1>::Zero();
    double l_pred = 0.0;
    bool hold = false;  // no visible keypoints this frame
};

/// Differentiable handles of the same outputs, for training.
struct PolicyTrace {
    Tensor v_dir;   // [1 x 6]
    Tensor l_pred;  // [1 x 1]
    bool hold = false;

    PolicyOutput output() const;
};

std::pair<PolicyTrace, HiddenState> policy_forward(const ServoGraph& graph,
                                                   const HiddenState& hidden,
                                                   const PolicyParams& params);

/// T(x) = 1 + ELU(x): positive everywhere, linear for x >= 0.
double norm_transfer(double x);
/// Exact inverse of T on (0, inf).
double norm_transfer_inverse(double y);

/// Unit-normalize the 6-vector, scale by T(l_pred), and multiply the linear
/// part by the distance prior d.
Twist decode_velocity(const PolicyOutput& out, double d);

/// L_dir + 0.1 * L_norm against the distance-decoupled supervision.
Tensor servo_loss(const PolicyTrace& trace, const Eigen::Matrix<double, 6, 1>& v_gt_dd);

}  // namespace cns
