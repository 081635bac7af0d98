#include "pdp/nn/layers.hpp"

#include <cmath>

namespace pdp::nn {

void ParamRegistry::add_param(std::string name, ag::Var v, bool decay) {
    params.push_back({std::move(name), std::move(v), decay});
}

void ParamRegistry::add_buffer(std::string name, Tensor* t) {
    buffers.push_back({std::move(name), t});
}

std::int64_t ParamRegistry::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.var->value.numel();
    return n;
}

Conv2d::Conv2d(int cin, int cout, int k, int stride, int pad, int groups, bool bias, Rng& rng) {
    spec = {k, stride, pad, groups};
    if (groups < 1 || cin % groups != 0 || cout % groups != 0)
        throw ConfigError("Conv2d: channels (" + std::to_string(cin) + "->" + std::to_string(cout) +
                          ") not divisible by groups " + std::to_string(groups));
    const int fan_in = (cin / groups) * k * k;
    const real std_dev = std::sqrt(2.0 / static_cast<real>(fan_in));
    Tensor wt({cout, cin / groups, k, k});
    for (std::int64_t i = 0; i < wt.numel(); ++i) wt[i] = rng.normal() * std_dev;
    w = ag::leaf(std::move(wt));
    if (bias) b = ag::leaf(Tensor({cout}));
}

ag::Var Conv2d::forward(const ag::Var& x) const { return ag::conv2d(x, w, b, spec); }

void Conv2d::collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add_param(prefix + ".w", w, true);
    if (b) reg.add_param(prefix + ".b", b, false);
}

BatchNorm2d::BatchNorm2d(int channels)
    : gamma(ag::leaf(Tensor::full({channels}, 1.0))),
      beta(ag::leaf(Tensor({channels}))),
      running_mean(Tensor({channels})),
      running_var(Tensor::full({channels}, 1.0)) {}

ag::Var BatchNorm2d::forward(const ag::Var& x, bool training) {
    return ag::batch_norm(x, gamma, beta, running_mean, running_var, training, momentum, eps);
}

void BatchNorm2d::collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add_param(prefix + ".gamma", gamma, false);
    reg.add_param(prefix + ".beta", beta, false);
    reg.add_buffer(prefix + ".running_mean", &running_mean);
    reg.add_buffer(prefix + ".running_var", &running_var);
}

ConvBlock::ConvBlock(int cin, int cout, int k, int stride, int groups, Rng& rng)
    : conv(cin, cout, k, stride, k / 2, groups, /*bias=*/false, rng), bn(cout) {}

ag::Var ConvBlock::forward(const ag::Var& x, bool training) {
    return ag::silu(bn.forward(conv.forward(x), training));
}

void ConvBlock::collect(const std::string& prefix, ParamRegistry& reg) {
    conv.collect(prefix + ".conv", reg);
    bn.collect(prefix + ".bn", reg);
}

DeconvBlock::DeconvBlock(int cin, int cout, Rng& rng) : bn(cout) {
    const real std_dev = std::sqrt(2.0 / static_cast<real>(cin * 4));
    Tensor wt({cin, cout, 2, 2});
    for (std::int64_t i = 0; i < wt.numel(); ++i) wt[i] = rng.normal() * std_dev;
    w = ag::leaf(std::move(wt));
}

ag::Var DeconvBlock::forward(const ag::Var& x, bool training) {
    return ag::silu(bn.forward(ag::conv_transpose2x(x, w, nullptr), training));
}

void DeconvBlock::collect(const std::string& prefix, ParamRegistry& reg) {
    reg.add_param(prefix + ".w", w, true);
    bn.collect(prefix + ".bn", reg);
}

}  // namespace pdp::nn
