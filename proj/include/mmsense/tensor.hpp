#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mmsense/common.hpp"

namespace mmsense {

namespace detail {

struct Node {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first touched by backward
    bool requires_grad = false;  // leaf flag: receives gradient accumulation
    bool needs_grad = false;     // this node or some ancestor requires grad
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // nullptr for leaves

    std::size_t size() const { return data.size(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Value-semantics handle to a node in the implicit compute graph. Graphs are
/// built by the free-function ops below; backward() walks parent links in
/// reverse topological order. Single-threaded per graph; distinct graphs may
/// live on distinct threads.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return node_->shape; }
    std::size_t size() const { return node_->data.size(); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return node_->shape.at(1); }

    std::vector<double>& data() { return node_->data; }
    const std::vector<double>& data() const { return node_->data; }
    std::vector<double>& grad() { node_->ensure_grad(); return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    bool needs_grad() const { return node_->needs_grad; }

    /// Value of a one-element tensor.
    double value() const;

    double at(std::size_t i, std::size_t j) const {
        return node_->data[i * cols() + j];
    }

    void zero_grad() { if (node_) { node_->grad.assign(node_->data.size(), 0.0); } }

    std::shared_ptr<detail::Node> node() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// ---- forward primitives -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
/// Multiply every element of x by the one-element tensor s (gradient flows to
/// both operands).
Tensor scale_by(const Tensor& x, const Tensor& s);
Tensor neg(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

/// out[i,j] = sum_k x[i,k] W[k,j] (+ bias[j]).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Column-wise mean of an n×d matrix; result is 1×d.
Tensor mean_rows(const Tensor& x);

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices);
Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
/// One-element tensor holding flat element i of x.
Tensor pick(const Tensor& x, std::size_t index);

/// 2D convolution over a C×H×W input with an O×C×kh×kw kernel.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride);

/// Scalar losses.
Tensor cross_entropy(const Tensor& logits, std::size_t label);
Tensor bce_with_logit(const Tensor& logit, double label);
Tensor mse_loss(const Tensor& pred, const std::vector<double>& target);

// ---- backward and verification ------------------------------------------

/// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into
/// every requires_grad ancestor; running it twice without zeroing doubles
/// them. Intermediate buffers are reset per sweep.
void backward(const Tensor& loss);

void zero_grad(std::span<const Tensor> params);

/// Central-difference check of d(f)/d(params). f must rebuild its graph on
/// every call from the current parameter values and be deterministic.
/// Returns max over coordinates of |analytic-numeric| /
/// max(1e-8, |analytic|+|numeric|).
double grad_check(const std::function<Tensor()>& f, std::span<const Tensor> params,
                  double eps = 1e-5);

}  // namespace mmsense
