#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pdp/core/autograd.hpp"
#include "pdp/core/rng.hpp"

namespace pdp::nn {

// One trainable tensor with the metadata the optimizer and checkpoint code
// need. `decay` excludes biases and norm affine parameters from weight decay.
struct Param {
    std::string name;
    ag::Var var;
    bool decay = true;
};

// Non-trainable state that still belongs in checkpoints (running statistics).
struct BufferRef {
    std::string name;
    Tensor* data = nullptr;
};

struct ParamRegistry {
    std::vector<Param> params;
    std::vector<BufferRef> buffers;

    void add_param(std::string name, ag::Var v, bool decay);
    void add_buffer(std::string name, Tensor* t);
    std::int64_t param_count() const;
};

class Conv2d {
public:
    // Kaiming-style init scaled by fan-in; bias starts at zero.
    Conv2d(int cin, int cout, int k, int stride, int pad, int groups, bool bias, Rng& rng);

    ag::Var forward(const ag::Var& x) const;
    void collect(const std::string& prefix, ParamRegistry& reg);

    kernels::ConvSpec spec;
    ag::Var w;
    ag::Var b;  // null when bias disabled
};

class BatchNorm2d {
public:
    explicit BatchNorm2d(int channels);

    ag::Var forward(const ag::Var& x, bool training);
    void collect(const std::string& prefix, ParamRegistry& reg);

    ag::Var gamma, beta;
    Tensor running_mean, running_var;
    real momentum = 0.1;
    real eps = 1e-5;
};

// conv -> batch norm -> SiLU, the standard block of the whole network.
class ConvBlock {
public:
    ConvBlock(int cin, int cout, int k, int stride, int groups, Rng& rng);

    ag::Var forward(const ag::Var& x, bool training);
    void collect(const std::string& prefix, ParamRegistry& reg);

    Conv2d conv;
    BatchNorm2d bn;
};

// 2x2 stride-2 transposed conv -> batch norm -> SiLU: one learned x2 upsample.
class DeconvBlock {
public:
    DeconvBlock(int cin, int cout, Rng& rng);

    ag::Var forward(const ag::Var& x, bool training);
    void collect(const std::string& prefix, ParamRegistry& reg);

    ag::Var w;  // (cin, cout, 2, 2)
    BatchNorm2d bn;
};

}  // namespace pdp::nn
