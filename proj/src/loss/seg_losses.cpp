#include <algorithm>
#include <cmath>
#include <string>

#include "pdp/loss/losses.hpp"

namespace pdp {
namespace {

constexpr real kLogClamp = 1e-12;

void check_seg_pair(const Tensor& logits, const Tensor& gt, const char* who) {
    if (logits.ndim() != 4 || logits.dim(1) != 2) {
        throw InputError(std::string(who) + ": logits must be (b, 2, h, w)");
    }
    if (gt.ndim() != 3 || gt.dim(0) != logits.dim(0) || gt.dim(1) != logits.dim(2) ||
        gt.dim(2) != logits.dim(3)) {
        throw InputError(std::string(who) + ": mask must be (b, h, w) matching the logits");
    }
    for (std::int64_t i = 0; i < gt.numel(); ++i) {
        if (gt[i] != 0.0 && gt[i] != 1.0) {
            throw InputError(std::string(who) + ": mask labels must be 0 or 1");
        }
    }
}

// Stable per-pixel 2-class softmax of (b, 2, h, w) logits.
Tensor softmax2(const Tensor& logits) {
    Tensor p = Tensor::zeros(logits.shape());
    const int b = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
    for (int n = 0; n < b; ++n)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const real z0 = logits.at4(n, 0, y, x);
                const real z1 = logits.at4(n, 1, y, x);
                const real m = std::max(z0, z1);
                const real e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
                const real inv = 1.0 / (e0 + e1);
                p.at4(n, 0, y, x) = e0 * inv;
                p.at4(n, 1, y, x) = e1 * inv;
            }
    return p;
}

// Normalized access to (2, h, w) or (b, 2, h, w) probability/one-hot pairs.
struct SegView {
    const Tensor* t;
    int b, h, w;
    real at(int n, int c, int y, int x) const {
        if (t->ndim() == 3) return (*t)[(static_cast<std::int64_t>(c) * h + y) * w + x];
        return t->at4(n, c, y, x);
    }
};

SegView seg_view(const Tensor& t, const char* who) {
    if (t.ndim() == 3 && t.dim(0) == 2) return SegView{&t, 1, t.dim(1), t.dim(2)};
    if (t.ndim() == 4 && t.dim(1) == 2) return SegView{&t, t.dim(0), t.dim(2), t.dim(3)};
    throw InputError(std::string(who) + ": expected (2, h, w) or (b, 2, h, w)");
}

}  // namespace

ag::Var cross_entropy_seg(const ag::Var& logits, const Tensor& gt) {
    const Tensor& z = logits->value;
    check_seg_pair(z, gt, "cross_entropy_seg");
    const int b = z.dim(0), h = z.dim(2), w = z.dim(3);
    const real inv_n = 1.0 / static_cast<real>(static_cast<std::int64_t>(b) * h * w);

    Tensor grad = Tensor::zeros(z.shape());
    real total = 0.0;
    for (int n = 0; n < b; ++n)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const real z0 = z.at4(n, 0, y, x);
                const real z1 = z.at4(n, 1, y, x);
                const real m = std::max(z0, z1);
                const real lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
                const int g = static_cast<int>(gt[(static_cast<std::int64_t>(n) * h + y) * w + x]);
                total += inv_n * (lse - (g == 0 ? z0 : z1));
                const real p0 = std::exp(z0 - lse);
                const real p1 = std::exp(z1 - lse);
                grad.at4(n, 0, y, x) = inv_n * (p0 - (g == 0 ? 1.0 : 0.0));
                grad.at4(n, 1, y, x) = inv_n * (p1 - (g == 1 ? 1.0 : 0.0));
            }

    return ag::make_op(
        Tensor::scalar(total), {logits},
        [grad](ag::Node& n) {
            Tensor scaled = grad;
            scaled.scale_(n.grad[0]);
            n.inputs[0]->accumulate(scaled);
        },
        "seg.cross_entropy");
}

ClassCounts tversky_counts(const Tensor& probs, const Tensor& gt_onehot) {
    const SegView p = seg_view(probs, "tversky_counts (probs)");
    const SegView g = seg_view(gt_onehot, "tversky_counts (one-hot)");
    if (p.b != g.b || p.h != g.h || p.w != g.w) {
        throw InputError("tversky_counts: probability/one-hot shape mismatch");
    }
    ClassCounts counts;
    for (int n = 0; n < p.b; ++n)
        for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x) {
                const real p0 = p.at(n, 0, y, x), p1 = p.at(n, 1, y, x);
                const real g0 = g.at(n, 0, y, x), g1 = g.at(n, 1, y, x);
                if (std::abs(p0 + p1 - 1.0) > 1e-5) {
                    throw InputError("tversky_counts: probabilities must sum to 1 per pixel");
                }
                if ((g0 != 0.0 && g0 != 1.0) || (g1 != 0.0 && g1 != 1.0) || g0 + g1 != 1.0) {
                    throw InputError("tversky_counts: one-hot mask must select one class");
                }
                const std::array<real, 2> pv{p0, p1}, gv{g0, g1};
                for (int c = 0; c < 2; ++c) {
                    counts.tp[c] += pv[c] * gv[c];
                    counts.fn[c] += (1.0 - pv[c]) * gv[c];
                    counts.fp[c] += pv[c] * (1.0 - gv[c]);
                }
            }
    return counts;
}

real hybrid_seg_loss(const Tensor& probs, const Tensor& gt_onehot, const LossWeights& w) {
    const ClassCounts counts = tversky_counts(probs, gt_onehot);
    real dice_sum = 0.0;
    for (int c = 0; c < 2; ++c) {
        const real denom = counts.tp[c] + w.tversky_alpha * counts.fn[c] +
                           w.tversky_beta * counts.fp[c] + w.seg_eps;
        dice_sum += counts.tp[c] / denom;
    }

    const SegView p = seg_view(probs, "hybrid_seg_loss (probs)");
    const SegView g = seg_view(gt_onehot, "hybrid_seg_loss (one-hot)");
    const real inv_n = 1.0 / static_cast<real>(static_cast<std::int64_t>(p.b) * p.h * p.w);
    real focal = 0.0;
    for (int n = 0; n < p.b; ++n)
        for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x)
                for (int c = 0; c < 2; ++c) {
                    const real gv = g.at(n, c, y, x);
                    if (gv == 0.0) continue;
                    const real pv = std::max(p.at(n, c, y, x), kLogClamp);
                    focal += gv * std::pow(1.0 - pv, w.focal_gamma) * (-std::log(pv));
                }
    return (2.0 - dice_sum) + w.gamma_tradeoff * inv_n * focal;
}

ag::Var lane_loss(const ag::Var& logits, const Tensor& gt, const LossWeights& w,
                  const std::string& kind) {
    const bool with_dice = (kind == "focal_plus_dice");
    if (!with_dice && kind != "focal") {
        throw ConfigError("lane loss kind must be 'focal_plus_dice' or 'focal', got '" + kind +
                          "'");
    }
    const Tensor& z = logits->value;
    check_seg_pair(z, gt, "lane_loss");
    const int b = z.dim(0), h = z.dim(2), wd = z.dim(3);
    const real inv_n = 1.0 / static_cast<real>(static_cast<std::int64_t>(b) * h * wd);
    const real focal_coeff = with_dice ? w.gamma_tradeoff * inv_n : inv_n;

    const Tensor probs = softmax2(z);

    // Soft confusion counts and denominators for the dice part.
    std::array<real, 2> tp{}, denom{};
    if (with_dice) {
        std::array<real, 2> fn{}, fp{};
        for (int n = 0; n < b; ++n)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < wd; ++x) {
                    const int g =
                        static_cast<int>(gt[(static_cast<std::int64_t>(n) * h + y) * wd + x]);
                    for (int c = 0; c < 2; ++c) {
                        const real pv = probs.at4(n, c, y, x);
                        const real gv = (c == g) ? 1.0 : 0.0;
                        tp[c] += pv * gv;
                        fn[c] += (1.0 - pv) * gv;
                        fp[c] += pv * (1.0 - gv);
                    }
                }
        for (int c = 0; c < 2; ++c) {
            denom[c] = tp[c] + w.tversky_alpha * fn[c] + w.tversky_beta * fp[c] + w.seg_eps;
        }
    }

    // Loss value and analytic gradient with respect to the logits. The dice
    // denominators are exact functions of the probabilities, so their
    // dependence is included:
    //   d(-TP/D)/dp = -(g*D - TP*(g*(1-a) + b*(1-g))) / D^2.
    real total = with_dice ? 2.0 - (tp[0] / denom[0] + tp[1] / denom[1]) : 0.0;
    Tensor grad = Tensor::zeros(z.shape());
    for (int n = 0; n < b; ++n)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < wd; ++x) {
                const int g = static_cast<int>(gt[(static_cast<std::int64_t>(n) * h + y) * wd + x]);
                std::array<real, 2> dldp{};
                for (int c = 0; c < 2; ++c) {
                    const real gv = (c == g) ? 1.0 : 0.0;
                    const real pv = probs.at4(n, c, y, x);
                    if (with_dice) {
                        const real dD = gv * (1.0 - w.tversky_alpha) +
                                        w.tversky_beta * (1.0 - gv);
                        dldp[c] += -(gv * denom[c] - tp[c] * dD) / (denom[c] * denom[c]);
                    }
                    if (gv != 0.0) {
                        const real pc = std::max(pv, kLogClamp);
                        total += focal_coeff * std::pow(1.0 - pc, w.focal_gamma) *
                                 (-std::log(pc));
                        dldp[c] += focal_coeff *
                                   (w.focal_gamma * std::pow(1.0 - pc, w.focal_gamma - 1.0) *
                                        std::log(pc) -
                                    std::pow(1.0 - pc, w.focal_gamma) / pc);
                    }
                }
                // Chain through the softmax: dL/dz_k = p_k * (dL/dp_k - sum_c dL/dp_c * p_c).
                const real p0 = probs.at4(n, 0, y, x), p1 = probs.at4(n, 1, y, x);
                const real mix = dldp[0] * p0 + dldp[1] * p1;
                grad.at4(n, 0, y, x) = p0 * (dldp[0] - mix);
                grad.at4(n, 1, y, x) = p1 * (dldp[1] - mix);
            }

    return ag::make_op(
        Tensor::scalar(total), {logits},
        [grad](ag::Node& n) {
            Tensor scaled = grad;
            scaled.scale_(n.grad[0]);
            n.inputs[0]->accumulate(scaled);
        },
        "seg.lane");
}

real LossBreakdown::weighted_total(const LossBreakdown& b, const LossWeights& w) {
    return w.alpha1 * b.class_loss + w.alpha2 * b.obj_loss + w.alpha3 * b.box_loss +
           b.drivable_loss + b.lane_loss;
}

JointLoss joint_loss(const std::vector<ag::Var>& det_raw, const ag::Var& drivable_logits,
                     const ag::Var& lane_logits, const std::vector<std::vector<data::Box>>& gt_boxes,
                     const Tensor& drivable_gt, const Tensor& lane_gt,
                     const AnchorSet& anchors, const LossWeights& weights,
                     int num_classes, const std::string& lane_kind) {
    if (drivable_gt.ndim() != 3) throw InputError("joint_loss: drivable mask must be (b, h, w)");
    const int img_h = drivable_gt.dim(1), img_w = drivable_gt.dim(2);
    if (static_cast<int>(gt_boxes.size()) != drivable_gt.dim(0)) {
        throw InputError("joint_loss: box list batch size disagrees with the masks");
    }

    const std::vector<TargetSpec> assigned =
        assign_targets(gt_boxes, anchors, img_w, img_h, nullptr);
    const DetectionLoss det =
        detection_loss(det_raw, assigned, anchors, weights, num_classes);
    const ag::Var drivable = cross_entropy_seg(drivable_logits, drivable_gt);
    const ag::Var lane = lane_loss(lane_logits, lane_gt, weights, lane_kind);

    JointLoss out;
    out.total = ag::weighted_sum(
        {det.class_loss, det.obj_loss, det.box_loss, drivable, lane},
        {weights.alpha1, weights.alpha2, weights.alpha3, 1.0, 1.0});
    out.breakdown.class_loss = ag::scalar_value(det.class_loss);
    out.breakdown.obj_loss = ag::scalar_value(det.obj_loss);
    out.breakdown.box_loss = ag::scalar_value(det.box_loss);
    out.breakdown.drivable_loss = ag::scalar_value(drivable);
    out.breakdown.lane_loss = ag::scalar_value(lane);
    out.breakdown.total = ag::scalar_value(out.total);
    return out;
}

}  // namespace pdp
