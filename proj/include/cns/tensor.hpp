#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace cns::ad {

/// Tape node: values plus the closure that routes gradients to parents.
struct Node {
    int rows = 0, cols = 0;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    size_t size() const { return val.size(); }
    void ensure_grad() {
        if (grad.size() != val.size()) grad.assign(val.size(), 0.0);
    }
};

/// Dense row-major 2-D float64 tensor with reverse-mode differentiation.
/// Copies share the underlying node.
class Tensor {
public:
    Tensor() = default;
    Tensor(int rows, int cols, bool requires_grad = false);

    static Tensor zeros(int rows, int cols, bool requires_grad = false);
    static Tensor from(std::vector<double> values, int rows, int cols,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    int rows() const { return node_->rows; }
    int cols() const { return node_->cols; }
    size_t size() const { return node_->size(); }
    bool requires_grad() const { return node_->requires_grad; }

    double& operator()(int i, int j) { return node_->val[static_cast<size_t>(i) * cols() + j]; }
    double operator()(int i, int j) const {
        return node_->val[static_cast<size_t>(i) * cols() + j];
    }
    double value() const;  // scalar tensors only

    std::vector<double>& values() { return node_->val; }
    const std::vector<double>& values() const { return node_->val; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }

    /// Value copy detached from the tape.
    Tensor detach() const;

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Reverse pass from a scalar root; gradients accumulate into `grad`.
void backward(const Tensor& root);

/// While a guard is alive on the current thread, ops record no tape:
/// results carry no parents or backward closures and never require grad.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// -- elementwise binary (second operand broadcastable: same shape, row
//    vector [1 x n], column vector [m x 1], or scalar) --
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);

// -- elementwise unary --
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor elu(const Tensor& a);

// -- reductions --
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor max(const Tensor& a);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);

Tensor gather_rows(const Tensor& a, const std::vector<int>& indices);
Tensor scatter_add(const Tensor& a, const std::vector<int>& target, int out_rows);
Tensor scatter_max(const Tensor& a, const std::vector<int>& target, int out_rows);
/// Column-wise softmax within rows sharing a target index.
Tensor segment_softmax(const Tensor& a, const std::vector<int>& target, int out_rows);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<std::vector<double>> m, v;
    long step = 0;
};

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamConfig& cfg);
void zero_grad(std::vector<Tensor>& params);

/// Length-prefixed named-tensor records, little-endian float64 payloads.
void save_tensors(std::ostream& os, const std::vector<std::pair<std::string, Tensor>>& tensors);
std::map<std::string, Tensor> load_tensors(std::istream& is);

}  // namespace cns::ad
