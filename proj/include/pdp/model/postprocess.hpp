#pragma once

#include <array>
#include <vector>

#include "pdp/model/config.hpp"

namespace pdp {

// 9 anchor priors, scale-major: anchors for stride 8 first.
struct AnchorSet {
    std::vector<std::array<real, 2>> sizes;

    static AnchorSet from_config(const ModelConfig& cfg);
    const std::array<real, 2>& at(int scale, int anchor) const;
    void validate() const;
};

struct Detection {
    int class_id = 0;
    real confidence = 0.0;
    real x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // px, input coordinates
};

// Corner-format IoU; degenerate boxes score 0.
real iou_xyxy(real ax1, real ay1, real ax2, real ay2,
              real bx1, real by1, real bx2, real by2);

// Decode one image of a batch from raw rank-5 per-scale head outputs
// (b, 3, h, w, 5+nc):
//   center = (2*sigmoid(t) - 0.5 + cell) * stride
//   size   = (2*sigmoid(t))^2 * anchor
//   confidence = sigmoid(obj) * sigmoid(best class logit)
// Boxes are clipped to the image; entries below conf_threshold are dropped.
std::vector<Detection> decode_boxes(const std::vector<Tensor>& raw, int batch_index,
                                    const AnchorSet& anchors, int num_classes,
                                    real conf_threshold, int img_w, int img_h);

// Greedy per-class suppression: confidence-descending scan, drop boxes with
// IoU > threshold against an already-kept box of the same class.
std::vector<Detection> nms(std::vector<Detection> dets, real iou_threshold);

// Argmax of two-channel logits (b, 2, h, w) for one batch element as a
// (h, w) {0,1} mask; exact ties resolve to background.
Tensor argmax_mask(const Tensor& logits, int batch_index);

}  // namespace pdp
