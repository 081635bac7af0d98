#pragma once

#include <array>
#include <string>
#include <vector>

#include "pdp/core/tensor.hpp"

namespace pdp {

// Checkpoint/config compatibility tag; bump when the layout changes.
inline constexpr const char* kSchemaId = "pdp-v1";

struct ModelConfig {
    int input_w = 640;   // eval-time network input
    int input_h = 384;
    std::vector<int> stage_channels = {64, 128, 256, 512};  // strides 4/8/16/32
    int elan_per_stage = 2;
    int group_count = 2;
    int num_classes = 1;
    std::vector<int> spp_kernels = {5, 9, 13};
    // 9 anchor priors (w,h) in px, 3 per scale, shallow scale first.
    std::vector<std::array<real, 2>> anchors;
    bool use_mosaic = true;
    bool use_mixup = true;
    std::string lane_decoder_kind = "transposed_conv";  // or "nearest_upsample"
    std::string lane_loss_kind = "focal_plus_dice";     // or "focal"

    static const std::vector<int>& strides();  // {8, 16, 32}

    // Full-size defaults and the small configuration used for desk runs.
    static ModelConfig base();
    static ModelConfig tiny();

    void validate() const;
};

struct LossWeights {
    real alpha1 = 0.5;    // class term
    real alpha2 = 1.0;    // objectness term
    real alpha3 = 0.05;   // box term
    // Positive cells are a tiny fraction of the objectness grid, so their
    // contribution is averaged separately from the background cells and
    // scaled by this factor; otherwise small-scale runs never lift
    // confidence off the background floor.
    real obj_pos_weight = 1.0;
    real gamma_tradeoff = 1.0;  // focal-vs-dice trade-off in the hybrid loss
    real tversky_alpha = 0.5;   // FN weight; 0.5/0.5 recovers plain dice
    real tversky_beta = 0.5;    // FP weight
    real focal_gamma = 2.0;     // (1-p)^2 modulation exponent
    real seg_eps = 1e-6;

    void validate() const;
};

struct TrainConfig {
    real initial_lr = 0.01;
    real final_lr_fraction = 0.01;
    int warmup_epochs = 3;
    int total_epochs = 50;
    real momentum = 0.937;
    real weight_decay = 0.005;
    int batch_size = 8;
    std::uint64_t seed = 1;
    int eval_every = 5;         // epochs
    bool periodic_restarts = false;  // cosine warm restarts instead of one cycle
    int aug_off_last_epochs = 10;
    real mosaic_prob = 1.0;
    real mixup_prob = 0.15;
    bool use_hflip = false;   // optional photometric/geometric extras
    real hsv_jitter = 0.0;    // 0 disables; otherwise max relative gain
    int train_w = 640;  // train-time letterbox target
    int train_h = 640;

    void validate() const;
};

// Everything a run needs, serialized as a flat key-value file
// ("section.key = value" lines, '#' comments).
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    LossWeights loss;

    static RunConfig desk();  // tiny model + small-image training defaults

    void apply_override(const std::string& key, const std::string& value);
    std::string to_text() const;

    static RunConfig from_text(const std::string& text);
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;

    void validate() const;
};

}  // namespace pdp
