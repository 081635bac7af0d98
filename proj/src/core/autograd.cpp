#include "pdp/core/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace pdp::ag {

Tensor& Node::ensure_grad() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
}

void Node::accumulate(const Tensor& g) {
    if (!requires_grad) return;
    if (!same_shape(g, value))
        throw InputError("autograd: gradient shape " + shape_str(g.shape()) +
                         " does not match value " + shape_str(value.shape()) +
                         (label.empty() ? "" : " at " + label));
    ensure_grad().add_(g);
}

Var leaf(Tensor value, bool requires_grad, std::string label) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->label = std::move(label);
    return n;
}

Var constant(Tensor value, std::string label) { return leaf(std::move(value), false, std::move(label)); }

Var make_op(Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backward_fn, std::string label) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    n->label = std::move(label);
    for (const auto& in : n->inputs)
        if (in && in->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

namespace {

void topo_visit(const Var& v, std::unordered_set<Node*>& seen, std::vector<Var>& order) {
    // Iterative DFS: graphs get deep (dozens of conv blocks) and recursion
    // depth is not worth risking.
    struct Frame {
        Var node;
        size_t next_child = 0;
    };
    std::vector<Frame> stack;
    if (!v || seen.count(v.get())) return;
    seen.insert(v.get());
    stack.push_back({v, 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_child < f.node->inputs.size()) {
            Var child = f.node->inputs[f.next_child++];
            if (child && !seen.count(child.get())) {
                seen.insert(child.get());
                stack.push_back({std::move(child), 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }
}

}  // namespace

void backward(const Var& root, const Tensor* seed) {
    if (!root) throw InputError("autograd: backward on null var");
    if (!root->requires_grad) return;
    if (seed) {
        root->accumulate(*seed);
    } else {
        if (root->value.numel() != 1)
            throw InputError("autograd: backward needs a scalar root or an explicit seed, got " +
                             shape_str(root->value.shape()));
        root->ensure_grad()[0] += 1.0;
    }
    std::unordered_set<Node*> seen;
    std::vector<Var> order;
    topo_visit(root, seen, order);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node& n = **it;
        if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
    }
}

// ---- ops -----------------------------------------------------------------

Var conv2d(const Var& x, const Var& w, const Var& b, const kernels::ConvSpec& spec) {
    Tensor y = kernels::conv2d_forward(x->value, w->value, b ? &b->value : nullptr, spec);
    std::vector<Var> inputs{x, w};
    if (b) inputs.push_back(b);
    return make_op(std::move(y), std::move(inputs), [spec](Node& n) {
        const Var& xi = n.inputs[0];
        const Var& wi = n.inputs[1];
        Var bi = n.inputs.size() > 2 ? n.inputs[2] : nullptr;
        Tensor gx, gw, gb;
        kernels::conv2d_backward(xi->value, wi->value, spec, n.grad, gx, gw, bi ? &gb : nullptr);
        xi->accumulate(gx);
        wi->accumulate(gw);
        if (bi) bi->accumulate(gb);
    }, "conv2d");
}

Var conv_transpose2x(const Var& x, const Var& w, const Var& b) {
    Tensor y = kernels::conv_transpose2x_forward(x->value, w->value, b ? &b->value : nullptr);
    std::vector<Var> inputs{x, w};
    if (b) inputs.push_back(b);
    return make_op(std::move(y), std::move(inputs), [](Node& n) {
        const Var& xi = n.inputs[0];
        const Var& wi = n.inputs[1];
        Var bi = n.inputs.size() > 2 ? n.inputs[2] : nullptr;
        Tensor gx, gw, gb;
        kernels::conv_transpose2x_backward(xi->value, wi->value, n.grad, gx, gw, bi ? &gb : nullptr);
        xi->accumulate(gx);
        wi->accumulate(gw);
        if (bi) bi->accumulate(gb);
    }, "conv_transpose2x");
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta,
               Tensor& running_mean, Tensor& running_var,
               bool training, real momentum, real eps) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw InputError("batch_norm: rank-4 input expected");
    const int n_img = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (gamma->value.numel() != c || beta->value.numel() != c)
        throw ConfigError("batch_norm: affine parameter size mismatch");
    const std::int64_t count = static_cast<std::int64_t>(n_img) * h * w;

    std::vector<real> mean(static_cast<size_t>(c)), inv_std(static_cast<size_t>(c));
    if (training) {
        if (count < 2) throw InputError("batch_norm: needs more than one value per channel in training mode");
        for (int ch = 0; ch < c; ++ch) {
            real s = 0.0;
            for (int n = 0; n < n_img; ++n)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix) s += xv.at4(n, ch, iy, ix);
            const real m = s / static_cast<real>(count);
            real ss = 0.0;
            for (int n = 0; n < n_img; ++n)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix) {
                        const real d = xv.at4(n, ch, iy, ix) - m;
                        ss += d * d;
                    }
            const real var_b = ss / static_cast<real>(count);
            const real var_u = ss / static_cast<real>(count - 1);
            mean[static_cast<size_t>(ch)] = m;
            inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var_b + eps);
            running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * m;
            running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * var_u;
        }
    } else {
        for (int ch = 0; ch < c; ++ch) {
            mean[static_cast<size_t>(ch)] = running_mean[ch];
            inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(running_var[ch] + eps);
        }
    }

    Tensor y(xv.shape());
    for (int n = 0; n < n_img; ++n)
        for (int ch = 0; ch < c; ++ch) {
            const real m = mean[static_cast<size_t>(ch)], is = inv_std[static_cast<size_t>(ch)];
            const real g = gamma->value[ch], bt = beta->value[ch];
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < w; ++ix)
                    y.at4(n, ch, iy, ix) = g * (xv.at4(n, ch, iy, ix) - m) * is + bt;
        }

    return make_op(std::move(y), {x, gamma, beta},
                   [mean = std::move(mean), inv_std = std::move(inv_std), training](Node& node) {
        const Var& xi = node.inputs[0];
        const Var& gi = node.inputs[1];
        const Var& bi = node.inputs[2];
        const Tensor& xv = xi->value;
        const Tensor& gy = node.grad;
        const int n_img = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        const real count = static_cast<real>(static_cast<std::int64_t>(n_img) * h * w);

        Tensor gx(xv.shape()), gg({c}), gb({c});
        for (int ch = 0; ch < c; ++ch) {
            const real m = mean[static_cast<size_t>(ch)], is = inv_std[static_cast<size_t>(ch)];
            const real gmm = gi->value[ch];
            real sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (int n = 0; n < n_img; ++n)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix) {
                        const real dy = gy.at4(n, ch, iy, ix);
                        const real xhat = (xv.at4(n, ch, iy, ix) - m) * is;
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat;
                    }
            gg[ch] = sum_dy_xhat;
            gb[ch] = sum_dy;
            for (int n = 0; n < n_img; ++n)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix) {
                        const real dy = gy.at4(n, ch, iy, ix);
                        const real xhat = (xv.at4(n, ch, iy, ix) - m) * is;
                        // Training mode differentiates through the batch
                        // statistics; eval mode treats them as constants.
                        const real dx = training
                            ? gmm * is * (dy - sum_dy / count - xhat * sum_dy_xhat / count)
                            : gmm * is * dy;
                        gx.at4(n, ch, iy, ix) = dx;
                    }
        }
        xi->accumulate(gx);
        gi->accumulate(gg);
        bi->accumulate(gb);
    }, "batch_norm");
}

namespace {

inline real sigmoid_stable(real x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const real e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Var silu(const Var& x) {
    Tensor y(x->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) {
        const real v = x->value[i];
        y[i] = v * sigmoid_stable(v);
    }
    return make_op(std::move(y), {x}, [](Node& n) {
        const Var& xi = n.inputs[0];
        Tensor gx(xi->value.shape());
        for (std::int64_t i = 0; i < gx.numel(); ++i) {
            const real v = xi->value[i];
            const real s = sigmoid_stable(v);
            gx[i] = n.grad[i] * s * (1.0 + v * (1.0 - s));
        }
        xi->accumulate(gx);
    }, "silu");
}

Var sigmoid(const Var& x) {
    Tensor y(x->value.shape());
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = sigmoid_stable(x->value[i]);
    return make_op(std::move(y), {x}, [](Node& n) {
        const Var& xi = n.inputs[0];
        Tensor gx(xi->value.shape());
        for (std::int64_t i = 0; i < gx.numel(); ++i) {
            const real s = n.value[i];
            gx[i] = n.grad[i] * s * (1.0 - s);
        }
        xi->accumulate(gx);
    }, "sigmoid");
}

Var max_pool_same(const Var& x, int k) {
    std::vector<std::int64_t> argmax;
    Tensor y = kernels::max_pool_same_forward(x->value, k, argmax);
    return make_op(std::move(y), {x}, [k, argmax = std::move(argmax)](Node& n) {
        const Var& xi = n.inputs[0];
        xi->accumulate(kernels::max_pool_same_backward(xi->value, k, argmax, n.grad));
    }, "max_pool_same");
}

Var upsample2(const Var& x) {
    Tensor y = kernels::upsample2_forward(x->value);
    return make_op(std::move(y), {x}, [](Node& n) {
        n.inputs[0]->accumulate(kernels::upsample2_backward(n.grad));
    }, "upsample2");
}

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw InputError("concat_channels: empty input list");
    const Tensor& first = xs[0]->value;
    if (first.ndim() != 4) throw InputError("concat_channels: rank-4 inputs expected");
    int c_total = 0;
    for (const auto& v : xs) {
        if (v->value.ndim() != 4 || v->value.dim(0) != first.dim(0) ||
            v->value.dim(2) != first.dim(2) || v->value.dim(3) != first.dim(3))
            throw InputError("concat_channels: incompatible shapes " + shape_str(first.shape()) +
                             " vs " + shape_str(v->value.shape()));
        c_total += v->value.dim(1);
    }
    const int n_img = first.dim(0), h = first.dim(2), w = first.dim(3);
    Tensor y({n_img, c_total, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int n = 0; n < n_img; ++n) {
        int c_off = 0;
        for (const auto& v : xs) {
            const int c = v->value.dim(1);
            std::copy_n(v->value.data() + static_cast<std::int64_t>(n) * c * plane,
                        static_cast<size_t>(c * plane),
                        y.data() + (static_cast<std::int64_t>(n) * c_total + c_off) * plane);
            c_off += c;
        }
    }
    return make_op(std::move(y), xs, [](Node& n) {
        const int n_img = n.value.dim(0), c_total = n.value.dim(1);
        const std::int64_t plane = static_cast<std::int64_t>(n.value.dim(2)) * n.value.dim(3);
        int c_off = 0;
        for (auto& in : n.inputs) {
            const int c = in->value.dim(1);
            Tensor g(in->value.shape());
            for (int img = 0; img < n_img; ++img)
                std::copy_n(n.grad.data() + (static_cast<std::int64_t>(img) * c_total + c_off) * plane,
                            static_cast<size_t>(c * plane),
                            g.data() + static_cast<std::int64_t>(img) * c * plane);
            in->accumulate(g);
            c_off += c;
        }
    }, "concat_channels");
}

Var add(const Var& a, const Var& b) {
    if (!same_shape(a->value, b->value))
        throw InputError("add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                         shape_str(b->value.shape()));
    Tensor y = a->value;
    y.add_(b->value);
    return make_op(std::move(y), {a, b}, [](Node& n) {
        n.inputs[0]->accumulate(n.grad);
        n.inputs[1]->accumulate(n.grad);
    }, "add");
}

Var scale(const Var& x, real s) {
    Tensor y = x->value;
    y.scale_(s);
    return make_op(std::move(y), {x}, [s](Node& n) {
        Tensor g = n.grad;
        g.scale_(s);
        n.inputs[0]->accumulate(g);
    }, "scale");
}

Var weighted_sum(const std::vector<Var>& xs, const std::vector<real>& ws) {
    if (xs.size() != ws.size() || xs.empty())
        throw InputError("weighted_sum: needs matching non-empty term and weight lists");
    real total = 0.0;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (xs[i]->value.numel() != 1) throw InputError("weighted_sum: scalar terms expected");
        total += ws[i] * xs[i]->value[0];
    }
    return make_op(Tensor::scalar(total), xs, [ws](Node& n) {
        for (size_t i = 0; i < n.inputs.size(); ++i) {
            Tensor g = Tensor::scalar(ws[i] * n.grad[0]);
            n.inputs[i]->accumulate(g);
        }
    }, "weighted_sum");
}

Var anchor_layout(const Var& x, int anchors) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw InputError("anchor_layout: rank-4 input expected");
    const int n_img = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (anchors < 1 || c % anchors != 0)
        throw ConfigError("anchor_layout: channels " + std::to_string(c) +
                          " not divisible by anchors " + std::to_string(anchors));
    const int k = c / anchors;
    Tensor y({n_img, anchors, h, w, k});
    std::int64_t o = 0;
    for (int n = 0; n < n_img; ++n)
        for (int a = 0; a < anchors; ++a)
            for (int iy = 0; iy < h; ++iy)
                for (int ix = 0; ix < w; ++ix)
                    for (int ch = 0; ch < k; ++ch)
                        y[o++] = xv.at4(n, a * k + ch, iy, ix);
    return make_op(std::move(y), {x}, [anchors, k](Node& n) {
        const Var& xi = n.inputs[0];
        const int n_img = xi->value.dim(0), h = xi->value.dim(2), w = xi->value.dim(3);
        Tensor gx(xi->value.shape());
        std::int64_t o = 0;
        for (int img = 0; img < n_img; ++img)
            for (int a = 0; a < anchors; ++a)
                for (int iy = 0; iy < h; ++iy)
                    for (int ix = 0; ix < w; ++ix)
                        for (int ch = 0; ch < k; ++ch)
                            gx.at4(img, a * k + ch, iy, ix) = n.grad[o++];
        xi->accumulate(gx);
    }, "anchor_layout");
}

real scalar_value(const Var& v) {
    if (!v || v->value.numel() != 1) throw InputError("scalar_value: scalar var expected");
    return v->value[0];
}

}  // namespace pdp::ag
