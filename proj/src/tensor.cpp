#include "cns/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <unordered_set>

namespace cns::ad {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

[[noreturn]] void shape_error(const std::string& op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(op + ": incompatible shapes [" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + "] and [" + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + "]");
}

thread_local bool g_grad_enabled = true;

Tensor make_result(int rows, int cols, std::vector<std::shared_ptr<Node>> parents) {
    Tensor t(rows, cols);
    if (!g_grad_enabled) return t;
    auto node = t.node();
    for (const auto& p : parents) {
        if (p->requires_grad) node->requires_grad = true;
    }
    node->parents = std::move(parents);
    return t;
}

enum class Broadcast { kSame, kRow, kCol, kScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const std::string& op) {
    if (b.rows() == a.rows() && b.cols() == a.cols()) return Broadcast::kSame;
    if (b.rows() == 1 && b.cols() == 1) return Broadcast::kScalar;
    if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::kRow;
    if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::kCol;
    shape_error(op, a, b);
}

size_t broadcast_index(Broadcast kind, int i, int j, int cols) {
    switch (kind) {
        case Broadcast::kSame: return static_cast<size_t>(i) * cols + j;
        case Broadcast::kRow: return static_cast<size_t>(j);
        case Broadcast::kCol: return static_cast<size_t>(i);
        case Broadcast::kScalar: return 0;
    }
    return 0;
}

template <typename Fwd, typename DfDa, typename DfDb>
Tensor binary_op(const std::string& name, const Tensor& a, const Tensor& b, Fwd fwd, DfDa dfda,
                 DfDb dfdb) {
    const Broadcast kind = broadcast_kind(a, b, name);
    Tensor out = make_result(a.rows(), a.cols(), {a.node(), b.node()});
    const int rows = a.rows(), cols = a.cols();
    const auto& av = a.values();
    const auto& bv = b.values();
    auto& ov = out.values();
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) {
            const size_t ia = static_cast<size_t>(i) * cols + j;
            ov[ia] = fwd(av[ia], bv[broadcast_index(kind, i, j, cols)]);
        }
    }
    if (out.requires_grad()) {
        out.node()->backward_fn = [kind, rows, cols, dfda, dfdb](Node& n) {
            Node& pa = *n.parents[0];
            Node& pb = *n.parents[1];
            if (pa.requires_grad) pa.ensure_grad();
            if (pb.requires_grad) pb.ensure_grad();
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < cols; ++j) {
                    const size_t ia = static_cast<size_t>(i) * cols + j;
                    const size_t ib = broadcast_index(kind, i, j, cols);
                    const double g = n.grad[ia];
                    if (pa.requires_grad) pa.grad[ia] += g * dfda(pa.val[ia], pb.val[ib]);
                    if (pb.requires_grad) pb.grad[ib] += g * dfdb(pa.val[ia], pb.val[ib]);
                }
            }
        };
    }
    return out;
}

template <typename Fwd, typename Dfdx>
Tensor unary_op(const Tensor& a, Fwd fwd, Dfdx dfdx) {
    Tensor out = make_result(a.rows(), a.cols(), {a.node()});
    auto& ov = out.values();
    const auto& av = a.values();
    for (size_t i = 0; i < av.size(); ++i) ov[i] = fwd(av[i]);
    if (out.requires_grad()) {
        out.node()->backward_fn = [dfdx](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < p.val.size(); ++i) {
                p.grad[i] += n.grad[i] * dfdx(p.val[i], n.val[i]);
            }
        };
    }
    return out;
}

}  // namespace

Tensor::Tensor(int rows, int cols, bool requires_grad) : node_(std::make_shared<Node>()) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Tensor: negative dimension");
    node_->rows = rows;
    node_->cols = cols;
    node_->val.assign(static_cast<size_t>(rows) * cols, 0.0);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(int rows, int cols, bool requires_grad) {
    return Tensor(rows, cols, requires_grad);
}

Tensor Tensor::from(std::vector<double> values, int rows, int cols, bool requires_grad) {
    if (values.size() != static_cast<size_t>(rows) * cols) {
        throw std::invalid_argument("Tensor::from: data size does not match shape");
    }
    Tensor t(rows, cols, requires_grad);
    t.node_->val = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({value}, 1, 1, requires_grad);
}

double Tensor::value() const {
    if (size() != 1) throw std::logic_error("Tensor::value: not a scalar");
    return node_->val[0];
}

Tensor Tensor::detach() const {
    Tensor t(rows(), cols(), false);
    t.node()->val = node_->val;
    return t;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void backward(const Tensor& root) {
    if (root.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root.requires_grad()) return;

    // Post-order topological sort over the requires_grad subgraph.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack{{root.node().get(), 0}};
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Node* next = node->parents[child++].get();
            if (next->requires_grad && !visited.count(next)) {
                visited.insert(next);
                stack.emplace_back(next, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->ensure_grad();
    root.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y) { return 1.0 / y; },
        [](double x, double y) { return -x / (y * y); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) shape_error("matmul", a, b);
    Tensor out = make_result(a.rows(), b.cols(), {a.node(), b.node()});
    MatMap(out.values().data(), out.rows(), out.cols()) =
        ConstMatMap(a.values().data(), a.rows(), a.cols()) *
        ConstMatMap(b.values().data(), b.rows(), b.cols());
    if (out.requires_grad()) {
        out.node()->backward_fn = [](Node& n) {
            Node& pa = *n.parents[0];
            Node& pb = *n.parents[1];
            ConstMatMap g(n.grad.data(), n.rows, n.cols);
            if (pa.requires_grad) {
                pa.ensure_grad();
                MatMap(pa.grad.data(), pa.rows, pa.cols).noalias() +=
                    g * ConstMatMap(pb.val.data(), pb.rows, pb.cols).transpose();
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                MatMap(pb.grad.data(), pb.rows, pb.cols).noalias() +=
                    ConstMatMap(pa.val.data(), pa.rows, pa.cols).transpose() * g;
            }
        };
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor elu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0 ? x : std::exp(x) - 1.0; },
                    [](double x, double y) { return x > 0 ? 1.0 : y + 1.0; });
}

Tensor sum(const Tensor& a) {
    Tensor out = make_result(1, 1, {a.node()});
    double s = 0;
    for (double v : a.values()) s += v;
    out.values()[0] = s;
    if (out.requires_grad()) {
        out.node()->backward_fn = [](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            for (double& g : p.grad) g += n.grad[0];
        };
    }
    return out;
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor max(const Tensor& a) {
    if (a.size() == 0) throw std::invalid_argument("max: empty tensor");
    Tensor out = make_result(1, 1, {a.node()});
    const auto& av = a.values();
    size_t arg = 0;
    for (size_t i = 1; i < av.size(); ++i) {
        if (av[i] > av[arg]) arg = i;
    }
    out.values()[0] = av[arg];
    if (out.requires_grad()) {
        out.node()->backward_fn = [arg](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            p.grad[arg] += n.grad[0];
        };
    }
    return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) shape_error("concat_cols", a, b);
    Tensor out = make_result(a.rows(), a.cols() + b.cols(), {a.node(), b.node()});
    for (int i = 0; i < a.rows(); ++i) {
        std::copy_n(&a.values()[static_cast<size_t>(i) * a.cols()], a.cols(),
                    &out.values()[static_cast<size_t>(i) * out.cols()]);
        std::copy_n(&b.values()[static_cast<size_t>(i) * b.cols()], b.cols(),
                    &out.values()[static_cast<size_t>(i) * out.cols() + a.cols()]);
    }
    if (out.requires_grad()) {
        const int ac = a.cols(), bc = b.cols();
        out.node()->backward_fn = [ac, bc](Node& n) {
            Node& pa = *n.parents[0];
            Node& pb = *n.parents[1];
            for (int i = 0; i < n.rows; ++i) {
                const size_t row = static_cast<size_t>(i) * n.cols;
                if (pa.requires_grad) {
                    pa.ensure_grad();
                    for (int j = 0; j < ac; ++j) {
                        pa.grad[static_cast<size_t>(i) * ac + j] += n.grad[row + j];
                    }
                }
                if (pb.requires_grad) {
                    pb.ensure_grad();
                    for (int j = 0; j < bc; ++j) {
                        pb.grad[static_cast<size_t>(i) * bc + j] += n.grad[row + ac + j];
                    }
                }
            }
        };
    }
    return out;
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) shape_error("concat_rows", a, b);
    Tensor out = make_result(a.rows() + b.rows(), a.cols(), {a.node(), b.node()});
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(), out.values().begin() + a.values().size());
    if (out.requires_grad()) {
        out.node()->backward_fn = [](Node& n) {
            Node& pa = *n.parents[0];
            Node& pb = *n.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t i = 0; i < pa.val.size(); ++i) pa.grad[i] += n.grad[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t i = 0; i < pb.val.size(); ++i) {
                    pb.grad[i] += n.grad[pa.val.size() + i];
                }
            }
        };
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    if (r0 < 0 || r1 > a.rows() || r0 > r1) {
        throw std::invalid_argument("slice_rows: range out of bounds");
    }
    Tensor out = make_result(r1 - r0, a.cols(), {a.node()});
    std::copy_n(&a.values()[static_cast<size_t>(r0) * a.cols()], out.size(),
                out.values().data());
    if (out.requires_grad()) {
        out.node()->backward_fn = [r0](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            const size_t offset = static_cast<size_t>(r0) * n.cols;
            for (size_t i = 0; i < n.val.size(); ++i) p.grad[offset + i] += n.grad[i];
        };
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (c0 < 0 || c1 > a.cols() || c0 > c1) {
        throw std::invalid_argument("slice_cols: range out of bounds");
    }
    Tensor out = make_result(a.rows(), c1 - c0, {a.node()});
    for (int i = 0; i < a.rows(); ++i) {
        std::copy_n(&a.values()[static_cast<size_t>(i) * a.cols() + c0], c1 - c0,
                    &out.values()[static_cast<size_t>(i) * out.cols()]);
    }
    if (out.requires_grad()) {
        const int ac = a.cols();
        out.node()->backward_fn = [c0, ac](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            for (int i = 0; i < n.rows; ++i) {
                for (int j = 0; j < n.cols; ++j) {
                    p.grad[static_cast<size_t>(i) * ac + c0 + j] +=
                        n.grad[static_cast<size_t>(i) * n.cols + j];
                }
            }
        };
    }
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
    for (int idx : indices) {
        if (idx < 0 || idx >= a.rows()) {
            throw std::invalid_argument("gather_rows: index " + std::to_string(idx) +
                                        " out of range for " + std::to_string(a.rows()) +
                                        " rows");
        }
    }
    Tensor out = make_result(static_cast<int>(indices.size()), a.cols(), {a.node()});
    for (size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(&a.values()[static_cast<size_t>(indices[i]) * a.cols()], a.cols(),
                    &out.values()[i * a.cols()]);
    }
    if (out.requires_grad()) {
        out.node()->backward_fn = [indices](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < indices.size(); ++i) {
                for (int j = 0; j < n.cols; ++j) {
                    p.grad[static_cast<size_t>(indices[i]) * n.cols + j] +=
                        n.grad[i * n.cols + j];
                }
            }
        };
    }
    return out;
}

namespace {

void check_targets(const std::vector<int>& target, int in_rows, int out_rows,
                   const std::string& op) {
    if (static_cast<int>(target.size()) != in_rows) {
        throw std::invalid_argument(op + ": target index count does not match rows");
    }
    for (int t : target) {
        if (t < 0 || t >= out_rows) {
            throw std::invalid_argument(op + ": target index " + std::to_string(t) +
                                        " out of range for " + std::to_string(out_rows) +
                                        " rows");
        }
    }
}

}  // namespace

Tensor scatter_add(const Tensor& a, const std::vector<int>& target, int out_rows) {
    check_targets(target, a.rows(), out_rows, "scatter_add");
    Tensor out = make_result(out_rows, a.cols(), {a.node()});
    for (size_t i = 0; i < target.size(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            out.values()[static_cast<size_t>(target[i]) * a.cols() + j] +=
                a.values()[i * a.cols() + j];
        }
    }
    if (out.requires_grad()) {
        out.node()->backward_fn = [target](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < target.size(); ++i) {
                for (int j = 0; j < n.cols; ++j) {
                    p.grad[i * n.cols + j] +=
                        n.grad[static_cast<size_t>(target[i]) * n.cols + j];
                }
            }
        };
    }
    return out;
}

Tensor scatter_max(const Tensor& a, const std::vector<int>& target, int out_rows) {
    check_targets(target, a.rows(), out_rows, "scatter_max");
    Tensor out = make_result(out_rows, a.cols(), {a.node()});
    // Rows with no contributors stay zero; argmax = -1 marks them.
    std::vector<int> argmax(static_cast<size_t>(out_rows) * a.cols(), -1);
    for (size_t i = 0; i < target.size(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            const size_t o = static_cast<size_t>(target[i]) * a.cols() + j;
            const double v = a.values()[i * a.cols() + j];
            if (argmax[o] < 0 || v > out.values()[o]) {
                out.values()[o] = v;
                argmax[o] = static_cast<int>(i);
            }
        }
    }
    if (out.requires_grad()) {
        const int cols = a.cols();
        out.node()->backward_fn = [argmax, cols](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            for (size_t o = 0; o < argmax.size(); ++o) {
                if (argmax[o] >= 0) {
                    p.grad[static_cast<size_t>(argmax[o]) * cols + o % cols] += n.grad[o];
                }
            }
        };
    }
    return out;
}

Tensor segment_softmax(const Tensor& a, const std::vector<int>& target, int out_rows) {
    check_targets(target, a.rows(), out_rows, "segment_softmax");
    Tensor out = make_result(a.rows(), a.cols(), {a.node()});
    const int cols = a.cols();
    std::vector<double> seg_max(static_cast<size_t>(out_rows) * cols,
                                -std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < target.size(); ++i) {
        for (int j = 0; j < cols; ++j) {
            double& m = seg_max[static_cast<size_t>(target[i]) * cols + j];
            m = std::max(m, a.values()[i * cols + j]);
        }
    }
    std::vector<double> seg_sum(static_cast<size_t>(out_rows) * cols, 0.0);
    for (size_t i = 0; i < target.size(); ++i) {
        for (int j = 0; j < cols; ++j) {
            const size_t o = static_cast<size_t>(target[i]) * cols + j;
            const double e = std::exp(a.values()[i * cols + j] - seg_max[o]);
            out.values()[i * cols + j] = e;
            seg_sum[o] += e;
        }
    }
    for (size_t i = 0; i < target.size(); ++i) {
        for (int j = 0; j < cols; ++j) {
            out.values()[i * cols + j] /= seg_sum[static_cast<size_t>(target[i]) * cols + j];
        }
    }
    if (out.requires_grad()) {
        out.node()->backward_fn = [target, out_rows, cols](Node& n) {
            Node& p = *n.parents[0];
            p.ensure_grad();
            // dx_i = y_i * (dy_i - sum_k y_k dy_k) within each segment/column.
            std::vector<double> seg_dot(static_cast<size_t>(out_rows) * cols, 0.0);
            for (size_t i = 0; i < target.size(); ++i) {
                for (int j = 0; j < cols; ++j) {
                    seg_dot[static_cast<size_t>(target[i]) * cols + j] +=
                        n.val[i * cols + j] * n.grad[i * cols + j];
                }
            }
            for (size_t i = 0; i < target.size(); ++i) {
                for (int j = 0; j < cols; ++j) {
                    const size_t o = static_cast<size_t>(target[i]) * cols + j;
                    p.grad[i * cols + j] +=
                        n.val[i * cols + j] * (n.grad[i * cols + j] - seg_dot[o]);
                }
            }
        };
    }
    return out;
}

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
        for (size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& val = params[i].values();
        auto& grad = params[i].grad();
        for (size_t k = 0; k < val.size(); ++k) {
            state.m[i][k] = cfg.beta1 * state.m[i][k] + (1.0 - cfg.beta1) * grad[k];
            state.v[i][k] = cfg.beta2 * state.v[i][k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            const double mhat = state.m[i][k] / bc1;
            const double vhat = state.v[i][k] / bc2;
            val[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

void zero_grad(std::vector<Tensor>& params) {
    for (auto& p : params) {
        std::fill(p.grad().begin(), p.grad().end(), 0.0);
    }
}

namespace {

constexpr char kMagic[8] = {'C', 'N', 'S', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw std::runtime_error("load_tensors: truncated stream");
    }
    return v;
}

}  // namespace

void save_tensors(std::ostream& os, const std::vector<std::pair<std::string, Tensor>>& tensors) {
    os.write(kMagic, sizeof(kMagic));
    write_raw<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_raw<uint32_t>(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_raw<uint32_t>(os, static_cast<uint32_t>(t.rows()));
        write_raw<uint32_t>(os, static_cast<uint32_t>(t.cols()));
        os.write(reinterpret_cast<const char*>(t.values().data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
}

std::map<std::string, Tensor> load_tensors(std::istream& is) {
    char magic[8];
    if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("load_tensors: bad magic");
    }
    const uint32_t count = read_raw<uint32_t>(is);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = read_raw<uint32_t>(is);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) {
            throw std::runtime_error("load_tensors: truncated name");
        }
        const int rows = static_cast<int>(read_raw<uint32_t>(is));
        const int cols = static_cast<int>(read_raw<uint32_t>(is));
        Tensor t(rows, cols, true);
        if (!is.read(reinterpret_cast<char*>(t.values().data()),
                     static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw std::runtime_error("load_tensors: truncated payload for " + name);
        }
        out.emplace(name, t);
    }
    return out;
}

}  // namespace cns::ad
