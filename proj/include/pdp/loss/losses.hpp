#pragma once

#include <array>

#include "pdp/core/autograd.hpp"
#include "pdp/data/types.hpp"
#include "pdp/model/config.hpp"
#include "pdp/model/postprocess.hpp"

namespace pdp {

// ---- general primitives --------------------------------------------------

// Mean focal binary cross-entropy over probability arrays (soft targets
// allowed): mean of -(1-pt)^gamma * [t log p + (1-t) log(1-p)] with
// pt = t*p + (1-t)*(1-p). Probabilities are clamped away from {0,1}.
real focal_bce(const Tensor& prob, const Tensor& target, real gamma);

// Complete-IoU between two corner-format boxes: IoU minus the normalized
// center distance and aspect-consistency penalties.
real ciou_xyxy(real px1, real py1, real px2, real py2,
               real gx1, real gy1, real gx2, real gy2);

// Solves the decode formula for the raw offsets that reproduce `box` at the
// given cell/anchor; used by the decode/encode identity check and tests.
// Returns false when the box is outside the representable range.
bool encode_box(const data::Box& box, int stride, int cx, int cy,
                const std::array<real, 2>& anchor, std::array<real, 4>& t_out);

// ---- target assignment ---------------------------------------------------

// One positive detection target: a ground-truth box bound to a (scale,
// anchor, cell) location.
struct TargetSpec {
    int image = 0;
    int scale = 0;
    int anchor = 0;
    int cy = 0, cx = 0;
    data::Box box;
};

// Matches each box to its center cell plus the two nearest neighbor cells on
// every scale/anchor passing the size-ratio gate
// max(w/wa, wa/w, h/ha, ha/h) < 4. Degenerate boxes are skipped (warning to
// stderr; count reported through `rejected` when given).
std::vector<TargetSpec> assign_targets(const std::vector<std::vector<data::Box>>& gt_per_image,
                                       const AnchorSet& anchors, int img_w, int img_h,
                                       int* rejected = nullptr);

// ---- detection loss (weighted class/objectness/box sum) ------------------

// Frozen per-step targets: the objectness soft labels carry the decoded
// box-vs-gt IoU of the forward pass being trained, treated as constants.
struct DetectionTargets {
    struct Pos {
        TargetSpec at;
        real obj_label = 0.0;  // weight * detached decoded IoU, in [0,1]
    };
    std::vector<Pos> positives;
};

struct DetectionLoss {
    ag::Var class_loss;
    ag::Var obj_loss;
    ag::Var box_loss;
};

DetectionTargets build_detection_targets(const std::vector<Tensor>& raw_values,
                                         const std::vector<TargetSpec>& assigned,
                                         const AnchorSet& anchors, int num_classes);

// Pure function of (raw, frozen targets): focal class loss over positive
// cells, focal objectness loss over every cell, mean (1 - CIoU) over decoded
// positives. Gradients are analytic and exact for the frozen targets.
DetectionLoss detection_loss_terms(const std::vector<ag::Var>& raw,
                                   const DetectionTargets& targets,
                                   const AnchorSet& anchors, const LossWeights& weights,
                                   int num_classes);

// Production path: build targets from the current raw values, then score.
DetectionLoss detection_loss(const std::vector<ag::Var>& raw,
                             const std::vector<TargetSpec>& assigned,
                             const AnchorSet& anchors, const LossWeights& weights,
                             int num_classes);

// ---- segmentation losses -------------------------------------------------

// Mean per-pixel 2-class softmax cross-entropy. gt is (b, H, W) with {0,1}
// labels; logits are (b, 2, H, W).
ag::Var cross_entropy_seg(const ag::Var& logits, const Tensor& gt);

// Soft confusion counts per class from per-pixel probabilities:
// TP = sum p*g, FN = sum (1-p)*g, FP = sum p*(1-g).
struct ClassCounts {
    std::array<real, 2> tp{}, fn{}, fp{};
};
ClassCounts tversky_counts(const Tensor& probs, const Tensor& gt_onehot);

// Hybrid segmentation loss on probabilities (value form, used by oracles):
//   L = C - sum_c TP/(TP + a*FN + b*FP + eps)
//       + (gamma/N) * sum_c sum_n g*(1-p)^2*(-log p)
real hybrid_seg_loss(const Tensor& probs, const Tensor& gt_onehot, const LossWeights& w);

// Trainable forms on logits (b, 2, H, W) with gt (b, H, W).
// kind "focal_plus_dice" is the hybrid above; "focal" drops the dice term
// and the gamma factor.
ag::Var lane_loss(const ag::Var& logits, const Tensor& gt, const LossWeights& w,
                  const std::string& kind);

// ---- breakdown -----------------------------------------------------------

struct LossBreakdown {
    real class_loss = 0, obj_loss = 0, box_loss = 0;
    real drivable_loss = 0, lane_loss = 0;
    real total = 0;

    static real weighted_total(const LossBreakdown& b, const LossWeights& w);
};

// Assembles the joint objective; `total` keeps the graph alive for backward.
struct JointLoss {
    LossBreakdown breakdown;
    ag::Var total;
};

JointLoss joint_loss(const std::vector<ag::Var>& det_raw, const ag::Var& drivable_logits,
                     const ag::Var& lane_logits, const std::vector<std::vector<data::Box>>& gt_boxes,
                     const Tensor& drivable_gt, const Tensor& lane_gt,
                     const AnchorSet& anchors, const LossWeights& weights,
                     int num_classes, const std::string& lane_kind);

}  // namespace pdp
