#pragma once

#include <array>
#include <string>
#include <vector>

#include "pdp/core/tensor.hpp"

namespace pdp::data {

struct Box {
    int class_id = 0;
    real x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // px
    real weight = 1.0;                     // mixup objectness weight

    real w() const { return x2 - x1; }
    real h() const { return y2 - y1; }
    real cx() const { return (x1 + x2) / 2; }
    real cy() const { return (y1 + y2) / 2; }
    real area() const { return std::max(w(), real(0)) * std::max(h(), real(0)); }
};

struct Polyline {
    std::vector<std::array<real, 2>> pts;
};

// One lane marking annotated by its two boundary lines.
struct LaneAnnotation {
    Polyline left;
    Polyline right;
};

// Letterbox record: dst = src * scale + (pad_x, pad_y). Stored per sample so
// predictions can be mapped back to source coordinates at evaluation.
struct TransformRecord {
    bool valid = false;
    real scale = 1.0;
    real pad_x = 0.0, pad_y = 0.0;
    int src_w = 0, src_h = 0;
};

// The unit of training and evaluation: one image with all three task labels.
struct Sample {
    Tensor image;          // (3, H, W), values in [0,1]
    std::vector<Box> boxes;
    Tensor drivable_mask;  // (H, W), {0,1}
    Tensor lane_mask;      // (H, W), {0,1}
    std::string source_id;
    TransformRecord transform;

    int width() const { return image.empty() ? 0 : image.dim(2); }
    int height() const { return image.empty() ? 0 : image.dim(1); }
};

}  // namespace pdp::data
