#include "pdp/train/optimizer.hpp"

namespace pdp::train {

SgdOptimizer::SgdOptimizer(nn::ParamRegistry& reg, real momentum, real weight_decay)
    : reg_(&reg), momentum_(momentum), weight_decay_(weight_decay) {
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
    velocity_.reserve(reg.params.size());
    for (const nn::Param& p : reg.params) {
        velocity_.push_back(Tensor(p.var->value.shape()));
    }
}

void SgdOptimizer::step(real lr) {
    for (size_t i = 0; i < reg_->params.size(); ++i) {
        nn::Param& p = reg_->params[i];
        Tensor& w = p.var->value;
        Tensor& v = velocity_[i];
        const Tensor& g = p.var->grad;
        const bool has_grad = g.numel() == w.numel();
        for (std::int64_t k = 0; k < w.numel(); ++k) {
            real gk = has_grad ? g[k] : 0.0;
            if (p.decay) gk += weight_decay_ * w[k];
            v[k] = momentum_ * v[k] + gk;
            w[k] -= lr * v[k];
        }
    }
}

void SgdOptimizer::store(Checkpoint& ckpt) const {
    for (size_t i = 0; i < reg_->params.size(); ++i) {
        ckpt.tensors["opt." + reg_->params[i].name] = velocity_[i];
    }
}

bool SgdOptimizer::load(const Checkpoint& ckpt) {
    size_t found = 0;
    for (const nn::Param& p : reg_->params) {
        if (ckpt.tensors.count("opt." + p.name)) ++found;
    }
    if (found == 0) return false;
    if (found != reg_->params.size()) {
        throw IoError("checkpoint carries partial optimizer state (" + std::to_string(found) +
                      " of " + std::to_string(reg_->params.size()) + " buffers)");
    }
    for (size_t i = 0; i < reg_->params.size(); ++i) {
        const Tensor& src = ckpt.tensors.at("opt." + reg_->params[i].name);
        if (src.shape() != velocity_[i].shape()) {
            throw IoError("optimizer state shape mismatch for " + reg_->params[i].name);
        }
        velocity_[i] = src;
    }
    return true;
}

}  // namespace pdp::train
