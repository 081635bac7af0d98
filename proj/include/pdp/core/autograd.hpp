#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pdp/core/kernels.hpp"
#include "pdp/core/tensor.hpp"

// Reverse-mode autodiff over Tensor. The graph is built eagerly during the
// forward pass; backward() walks it once in reverse topological order. Losses
// with hand-derived gradients plug in through make_op.
namespace pdp::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first use, same shape as value
    bool requires_grad = false;
    std::vector<Var> inputs;
    std::function<void(Node&)> backward_fn;  // reads this->grad, accumulates into inputs
    std::string label;

    Tensor& ensure_grad();
    void accumulate(const Tensor& g);
};

// Graph construction.
Var leaf(Tensor value, bool requires_grad = true, std::string label = {});
Var constant(Tensor value, std::string label = {});
Var make_op(Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backward_fn, std::string label = {});

// Accumulates gradients into every reachable node with requires_grad set.
// The root must be scalar unless seed is provided.
void backward(const Var& root, const Tensor* seed = nullptr);

// ---- differentiable ops -------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, const kernels::ConvSpec& spec);
Var conv_transpose2x(const Var& x, const Var& w, const Var& b);

// PyTorch-style batch norm: batch statistics in training mode (updating the
// running buffers in place, unbiased variance), frozen running statistics in
// eval mode.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var,
               bool training, real momentum, real eps);

Var silu(const Var& x);
Var sigmoid(const Var& x);
Var max_pool_same(const Var& x, int k);
Var upsample2(const Var& x);
Var concat_channels(const std::vector<Var>& xs);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, real s);

// Weighted sum of scalar vars; the workhorse for composite losses.
Var weighted_sum(const std::vector<Var>& xs, const std::vector<real>& ws);

// (b, A*K, H, W) -> (b, A, H, W, K): one detection vector per anchor cell.
Var anchor_layout(const Var& x, int anchors);

// Scalar helpers.
real scalar_value(const Var& v);

}  // namespace pdp::ag
