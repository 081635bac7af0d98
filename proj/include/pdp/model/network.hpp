#pragma once

#include <array>
#include <memory>

#include "pdp/model/config.hpp"
#include "pdp/nn/layers.hpp"

namespace pdp {

// A feature map tagged with its stride relative to the network input.
struct FeatureMapVar {
    ag::Var data;
    int stride = 0;
};

struct PyramidFeatures {
    std::vector<FeatureMapVar> levels;  // strides 8, 16, 32 in order
    FeatureMapVar pre_fpn_tap;          // raw stride-8 stage output, pre-fusion
};

// E-ELAN-style block: a shortcut branch plus a deep path of grouped 3x3
// convolutions, with intermediate taps concatenated and merged by a 1x1 conv.
class ElanBlock {
public:
    ElanBlock(int cin, int cout, int groups, Rng& rng);

    ag::Var forward(const ag::Var& x, bool training);
    void collect(const std::string& prefix, nn::ParamRegistry& reg);

    nn::ConvBlock shortcut;   // 1x1 cin -> cin/2
    nn::ConvBlock entry;      // 1x1 cin -> cin/2
    nn::ConvBlock deep1;      // 3x3 grouped, cin/2 -> cin/2
    nn::ConvBlock deep2;      // 3x3 grouped, cin/2 -> cin/2
    nn::ConvBlock merge;      // 1x1 3*(cin/2) -> cout
};

// Spatial pyramid pooling: parallel same-size max pools concatenated with the
// identity branch, then projected back to the input width.
class SppBlock {
public:
    SppBlock(int channels, std::vector<int> kernels, Rng& rng);

    ag::Var forward(const ag::Var& x, bool training);
    void collect(const std::string& prefix, nn::ParamRegistry& reg);

    nn::ConvBlock reduce;    // 1x1 c -> c/2
    nn::ConvBlock project;   // 1x1 c/2*(1+#kernels) -> c
    std::vector<int> kernels;
};

class Backbone {
public:
    Backbone(const ModelConfig& cfg, Rng& rng);

    // image (b,3,H,W) with H,W divisible by 32 -> raw stage features at
    // strides 8/16/32 (deepest SPP-fused) plus the pre-FPN tap.
    std::vector<FeatureMapVar> forward_stages(const ag::Var& image, bool training);
    void collect(const std::string& prefix, nn::ParamRegistry& reg);

    struct Stage {
        std::unique_ptr<nn::ConvBlock> down;
        std::vector<ElanBlock> elans;
    };

    nn::ConvBlock stem;          // 3 -> ch0, stride 2
    std::vector<Stage> stages;   // strides 4, 8, 16, 32
    SppBlock spp;
};

// Top-down fusion. Takes raw stage features (strides 8/16/32), returns fused
// levels; records the untouched stride-8 input as pre_fpn_tap.
class Fpn {
public:
    Fpn(const std::vector<int>& ch, Rng& rng);  // ch = channels at strides 8/16/32

    PyramidFeatures forward(const std::vector<FeatureMapVar>& stage_feats, bool training);
    void collect(const std::string& prefix, nn::ParamRegistry& reg);

    nn::ConvBlock reduce32;  // 1x1 c32 -> c16 before upsampling
    nn::ConvBlock lat16;     // 1x1 lateral
    nn::ConvBlock merge16;   // 3x3 on concat
    nn::ConvBlock reduce16;  // 1x1 c16 -> c8
    nn::ConvBlock lat8;
    nn::ConvBlock merge8;
};

// Bottom-up aggregation over the FPN output.
class Pan {
public:
    Pan(const std::vector<int>& ch, Rng& rng);

    PyramidFeatures forward(const PyramidFeatures& p, bool training);
    void collect(const std::string& prefix, nn::ParamRegistry& reg);

    nn::ConvBlock down8;     // 3x3 stride 2
    nn::ConvBlock merge16;
    nn::ConvBlock down16;
    nn::ConvBlock merge32;
};

// Per-scale 1x1 prediction convs emitting 3*(5+nc) channels, reshaped to
// (b, 3, h, w, 5+nc).
class DetectHead {
public:
    DetectHead(const std::vector<int>& ch, int num_classes, Rng& rng);

    std::vector<ag::Var> forward(const PyramidFeatures& p);
    void collect(const std::string& prefix, nn::ParamRegistry& reg);

    std::vector<nn::Conv2d> preds;
    int num_classes;
};

// Segmentation decoder: an ordered list of steps (strided conv, x2 nearest
// upsample + conv, or learned deconv) followed by a 1x1 conv to 2 logits.
// Both heads use this; the step lists differ.
class SegDecoder {
public:
    enum class StepKind { Conv, Upsample, Deconv };
    struct Step {
        StepKind kind;
        std::unique_ptr<nn::ConvBlock> conv;      // Conv and Upsample steps
        std::unique_ptr<nn::DeconvBlock> deconv;  // Deconv steps
    };

    // Drivable head: stride-8 tap -> stride-16 projection -> exactly four
    // x2 nearest upsamplings back to full resolution.
    static SegDecoder drivable(int cin, Rng& rng);
    // Lane head from the deepest FPN level (stride 32): five x2 increases,
    // each a learned transposed conv (default) or nearest upsample (ablation).
    static SegDecoder lane(int cin, const std::string& decoder_kind, Rng& rng);

    ag::Var forward(const ag::Var& x, bool training);
    int upsample_count() const;
    int deconv_count() const;
    void collect(const std::string& prefix, nn::ParamRegistry& reg);

    std::vector<Step> steps;
    std::unique_ptr<nn::Conv2d> head;  // 1x1 -> 2 channels, with bias
};

class Network {
    // Declared ahead of the submodules: members initialize in declaration
    // order and construction consumes the config and seed RNG.
    ModelConfig cfg_;
    Rng init_rng_;

public:
    struct Output {
        std::vector<ag::Var> det_raw;  // rank-5, one per scale
        ag::Var drivable_logits;       // (b, 2, H, W)
        ag::Var lane_logits;           // (b, 2, H, W)
        PyramidFeatures encoder;       // post-FPN levels + tap (introspection)
    };

    Network(const ModelConfig& cfg, std::uint64_t seed);

    Output forward(const ag::Var& image);
    Output forward(const Tensor& image);  // wraps a non-trainable leaf

    void set_training(bool t) { training_ = t; }
    bool training() const { return training_; }

    const ModelConfig& config() const { return cfg_; }
    nn::ParamRegistry& registry() { return reg_; }
    const nn::ParamRegistry& registry() const { return reg_; }
    std::int64_t param_count() const { return reg_.param_count(); }
    void zero_grad();

    Backbone backbone;
    Fpn fpn;
    Pan pan;
    DetectHead detect;
    SegDecoder drivable_head;
    SegDecoder lane_head;

private:
    nn::ParamRegistry reg_;
    bool training_ = true;
};

}  // namespace pdp
