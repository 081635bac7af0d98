#pragma once

#include <vector>

#include "pdp/model/checkpoint.hpp"
#include "pdp/nn/layers.hpp"

namespace pdp::train {

// SGD with momentum and L2 weight decay gated by each parameter's decay
// flag (biases and norm affine parameters opt out):
//   g' = grad + weight_decay * w     (decay parameters only)
//   v  = momentum * v + g'
//   w -= lr * v
// A zero learning rate leaves the weights bitwise unchanged.
class SgdOptimizer {
public:
    SgdOptimizer(nn::ParamRegistry& reg, real momentum, real weight_decay);

    void step(real lr);

    // Momentum buffers round-trip through checkpoints as "opt.<param name>".
    void store(Checkpoint& ckpt) const;
    // Returns false when the checkpoint carries no optimizer state at all;
    // partial or mis-shaped state is an I/O error.
    bool load(const Checkpoint& ckpt);

private:
    nn::ParamRegistry* reg_;
    real momentum_;
    real weight_decay_;
    std::vector<Tensor> velocity_;
};

}  // namespace pdp::train
