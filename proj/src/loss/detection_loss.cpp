#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <tuple>

#include "pdp/loss/losses.hpp"

namespace pdp {
namespace {

constexpr real kProbClamp = 1e-7;
constexpr real kCiouEps = 1e-9;
constexpr real kSizeRatioGate = 4.0;

real sigmoid_stable(real z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    real e = std::exp(z);
    return e / (1.0 + e);
}

real softplus(real z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

// Focal BCE of a logit against a (possibly soft) target; returns the loss
// and writes d(loss)/d(logit).
real focal_logit(real z, real t, real gamma, real& dz) {
    const real p = sigmoid_stable(z);
    const real log_p = -softplus(-z);
    const real log_1mp = -softplus(z);
    const real pt = t * p + (1.0 - t) * (1.0 - p);
    const real bce = t * log_p + (1.0 - t) * log_1mp;  // = -BCE
    const real mod = std::pow(1.0 - pt, gamma);
    const real loss = -mod * bce;
    real d = -mod * (t - p);  // plain BCE part, already chained through sigmoid
    if (gamma > 0.0) {
        d += gamma * std::pow(1.0 - pt, gamma - 1.0) * (2.0 * t - 1.0) * bce * p * (1.0 - p);
    }
    dz = d;
    return loss;
}

// Forward-mode dual number with four derivative slots, seeded on the raw
// box offsets (tx, ty, tw, th). Carries exact derivatives through the
// sigmoid decode and the complete-IoU formula.
struct Dual4 {
    real v = 0.0;
    std::array<real, 4> d{};

    static Dual4 cnst(real x) { return Dual4{x, {0, 0, 0, 0}}; }
    static Dual4 seed(real x, int slot) {
        Dual4 r{x, {0, 0, 0, 0}};
        r.d[static_cast<size_t>(slot)] = 1.0;
        return r;
    }
};

Dual4 operator+(const Dual4& a, const Dual4& b) {
    Dual4 r{a.v + b.v, {}};
    for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
}
Dual4 operator-(const Dual4& a, const Dual4& b) {
    Dual4 r{a.v - b.v, {}};
    for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
}
Dual4 operator*(const Dual4& a, const Dual4& b) {
    Dual4 r{a.v * b.v, {}};
    for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
}
Dual4 operator*(real s, const Dual4& a) {
    Dual4 r{s * a.v, {}};
    for (int i = 0; i < 4; ++i) r.d[i] = s * a.d[i];
    return r;
}
Dual4 operator+(const Dual4& a, real s) { return a + Dual4::cnst(s); }
Dual4 operator-(const Dual4& a, real s) { return a - Dual4::cnst(s); }
Dual4 operator-(real s, const Dual4& a) { return Dual4::cnst(s) - a; }
Dual4 operator/(const Dual4& a, const Dual4& b) {
    Dual4 r{a.v / b.v, {}};
    const real inv2 = 1.0 / (b.v * b.v);
    for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) * inv2;
    return r;
}
Dual4 dmax(const Dual4& a, const Dual4& b) { return a.v >= b.v ? a : b; }
Dual4 dmin(const Dual4& a, const Dual4& b) { return a.v <= b.v ? a : b; }
Dual4 dsigmoid(const Dual4& a) {
    const real s = sigmoid_stable(a.v);
    Dual4 r{s, {}};
    const real ds = s * (1.0 - s);
    for (int i = 0; i < 4; ++i) r.d[i] = ds * a.d[i];
    return r;
}
Dual4 datan(const Dual4& a) {
    Dual4 r{std::atan(a.v), {}};
    const real da = 1.0 / (1.0 + a.v * a.v);
    for (int i = 0; i < 4; ++i) r.d[i] = da * a.d[i];
    return r;
}
Dual4 dsq(const Dual4& a) { return a * a; }

struct DualBox {
    Dual4 x1, y1, x2, y2;
};

// Decode raw offsets at a grid cell into a corner box, derivatives seeded on
// the four offsets. Matches the inference-time decode (no clipping here).
DualBox decode_dual(real tx, real ty, real tw, real th, int cx, int cy, int stride,
                    const std::array<real, 2>& anchor) {
    const Dual4 sx = dsigmoid(Dual4::seed(tx, 0));
    const Dual4 sy = dsigmoid(Dual4::seed(ty, 1));
    const Dual4 sw = dsigmoid(Dual4::seed(tw, 2));
    const Dual4 sh = dsigmoid(Dual4::seed(th, 3));
    const Dual4 px = static_cast<real>(stride) * (2.0 * sx - 0.5 + static_cast<real>(cx));
    const Dual4 py = static_cast<real>(stride) * (2.0 * sy - 0.5 + static_cast<real>(cy));
    const Dual4 w = anchor[0] * dsq(2.0 * sw);
    const Dual4 h = anchor[1] * dsq(2.0 * sh);
    DualBox b;
    b.x1 = px - 0.5 * w;
    b.x2 = px + 0.5 * w;
    b.y1 = py - 0.5 * h;
    b.y2 = py + 0.5 * h;
    return b;
}

// Complete-IoU of a dual box against a constant ground-truth box.
Dual4 ciou_dual(const DualBox& p, real gx1, real gy1, real gx2, real gy2) {
    const Dual4 pw = dmax(p.x2 - p.x1, Dual4::cnst(0.0));
    const Dual4 ph = dmax(p.y2 - p.y1, Dual4::cnst(0.0));
    const real gw = std::max(gx2 - gx1, 0.0);
    const real gh = std::max(gy2 - gy1, 0.0);

    const Dual4 ix = dmax(dmin(p.x2, Dual4::cnst(gx2)) - dmax(p.x1, Dual4::cnst(gx1)),
                          Dual4::cnst(0.0));
    const Dual4 iy = dmax(dmin(p.y2, Dual4::cnst(gy2)) - dmax(p.y1, Dual4::cnst(gy1)),
                          Dual4::cnst(0.0));
    const Dual4 inter = ix * iy;
    const Dual4 uni = pw * ph + Dual4::cnst(gw * gh) - inter + kCiouEps;
    const Dual4 iou = inter / uni;

    const Dual4 pcx = 0.5 * (p.x1 + p.x2);
    const Dual4 pcy = 0.5 * (p.y1 + p.y2);
    const real gcx = 0.5 * (gx1 + gx2);
    const real gcy = 0.5 * (gy1 + gy2);
    const Dual4 rho2 = dsq(pcx - gcx) + dsq(pcy - gcy);

    const Dual4 ex1 = dmin(p.x1, Dual4::cnst(gx1));
    const Dual4 ey1 = dmin(p.y1, Dual4::cnst(gy1));
    const Dual4 ex2 = dmax(p.x2, Dual4::cnst(gx2));
    const Dual4 ey2 = dmax(p.y2, Dual4::cnst(gy2));
    const Dual4 c2 = dsq(ex2 - ex1) + dsq(ey2 - ey1) + kCiouEps;

    const real kAspect = 4.0 / (std::numbers::pi * std::numbers::pi);
    const Dual4 aspect_diff = datan(Dual4::cnst(gw / std::max(gh, kCiouEps))) -
                              datan(pw / dmax(ph, Dual4::cnst(kCiouEps)));
    const Dual4 v = kAspect * dsq(aspect_diff);
    const Dual4 alpha = v / (1.0 - iou + v + kCiouEps);

    return iou - rho2 / c2 - alpha * v;
}

void check_raw_shapes(const std::vector<const Tensor*>& raw, int num_classes) {
    if (raw.size() != 3) throw InputError("detection loss expects 3 raw scales");
    const int k = 5 + num_classes;
    for (const Tensor* t : raw) {
        if (t->ndim() != 5 || t->dim(1) != 3 || t->dim(4) != k) {
            throw InputError("raw detection tensor must be (b, 3, h, w, " + std::to_string(k) +
                             ")");
        }
        if (t->dim(0) != raw[0]->dim(0)) {
            throw InputError("raw detection scales disagree on batch size");
        }
    }
}

inline std::int64_t raw_index(const Tensor& t, int n, int a, int y, int x, int k) {
    return ((((static_cast<std::int64_t>(n) * t.dim(1) + a) * t.dim(2) + y) * t.dim(3) + x) *
            t.dim(4)) + k;
}

}  // namespace

real focal_bce(const Tensor& prob, const Tensor& target, real gamma) {
    if (prob.shape() != target.shape()) {
        throw InputError("focal_bce: probability/target shape mismatch");
    }
    if (prob.numel() == 0) throw InputError("focal_bce: empty input");
    if (gamma < 0) throw InputError("focal_bce: gamma must be >= 0");
    real total = 0.0;
    for (std::int64_t i = 0; i < prob.numel(); ++i) {
        const real p = std::clamp(prob[i], kProbClamp, 1.0 - kProbClamp);
        const real t = target[i];
        if (t < 0.0 || t > 1.0) throw InputError("focal_bce: target outside [0, 1]");
        const real pt = t * p + (1.0 - t) * (1.0 - p);
        total += -std::pow(1.0 - pt, gamma) * (t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
    return total / static_cast<real>(prob.numel());
}

real ciou_xyxy(real px1, real py1, real px2, real py2,
               real gx1, real gy1, real gx2, real gy2) {
    DualBox p{Dual4::cnst(px1), Dual4::cnst(py1), Dual4::cnst(px2), Dual4::cnst(py2)};
    return ciou_dual(p, gx1, gy1, gx2, gy2).v;
}

bool encode_box(const data::Box& box, int stride, int cx, int cy,
                const std::array<real, 2>& anchor, std::array<real, 4>& t_out) {
    const auto logit = [](real s, real& out) {
        if (s <= 0.0 || s >= 1.0) return false;
        out = std::log(s / (1.0 - s));
        return true;
    };
    // Invert center = stride * (2*sigmoid(t) - 0.5 + cell).
    const real sx = (box.cx() / static_cast<real>(stride) - static_cast<real>(cx) + 0.5) / 2.0;
    const real sy = (box.cy() / static_cast<real>(stride) - static_cast<real>(cy) + 0.5) / 2.0;
    // Invert size = anchor * (2*sigmoid(t))^2.
    if (box.w() <= 0 || box.h() <= 0 || anchor[0] <= 0 || anchor[1] <= 0) return false;
    const real sw = 0.5 * std::sqrt(box.w() / anchor[0]);
    const real sh = 0.5 * std::sqrt(box.h() / anchor[1]);
    return logit(sx, t_out[0]) && logit(sy, t_out[1]) && logit(sw, t_out[2]) &&
           logit(sh, t_out[3]);
}

std::vector<TargetSpec> assign_targets(const std::vector<std::vector<data::Box>>& gt_per_image,
                                       const AnchorSet& anchors, int img_w, int img_h,
                                       int* rejected) {
    anchors.validate();
    if (img_w <= 0 || img_h <= 0 || img_w % 32 != 0 || img_h % 32 != 0) {
        throw InputError("assign_targets: image size must be positive and divisible by 32");
    }
    const std::vector<int>& strides = ModelConfig::strides();
    std::vector<TargetSpec> out;
    int skipped = 0;
    for (size_t img = 0; img < gt_per_image.size(); ++img) {
        for (const data::Box& box : gt_per_image[img]) {
            const bool degenerate = !(box.w() > 1e-6) || !(box.h() > 1e-6) ||
                                    !std::isfinite(box.w()) || !std::isfinite(box.h());
            if (degenerate) {
                std::fprintf(stderr,
                             "warning: skipping degenerate box (image %zu, class %d, "
                             "%.3f x %.3f)\n",
                             img, box.class_id, box.w(), box.h());
                ++skipped;
                continue;
            }
            for (int s = 0; s < static_cast<int>(strides.size()); ++s) {
                const int stride = strides[static_cast<size_t>(s)];
                const int gw = img_w / stride, gh = img_h / stride;
                const real gx = box.cx() / static_cast<real>(stride);
                const real gy = box.cy() / static_cast<real>(stride);
                const int cx = std::clamp(static_cast<int>(std::floor(gx)), 0, gw - 1);
                const int cy = std::clamp(static_cast<int>(std::floor(gy)), 0, gh - 1);
                const real fx = gx - std::floor(gx);
                const real fy = gy - std::floor(gy);
                const int nx = std::clamp(fx < 0.5 ? cx - 1 : cx + 1, 0, gw - 1);
                const int ny = std::clamp(fy < 0.5 ? cy - 1 : cy + 1, 0, gh - 1);
                std::set<std::pair<int, int>> cells{{cy, cx}, {cy, nx}, {ny, cx}};
                for (int a = 0; a < 3; ++a) {
                    const std::array<real, 2>& an = anchors.at(s, a);
                    const real ratio = std::max(std::max(box.w() / an[0], an[0] / box.w()),
                                                std::max(box.h() / an[1], an[1] / box.h()));
                    if (!(ratio < kSizeRatioGate)) continue;
                    for (const auto& [ty, tx] : cells) {
                        TargetSpec spec;
                        spec.image = static_cast<int>(img);
                        spec.scale = s;
                        spec.anchor = a;
                        spec.cy = ty;
                        spec.cx = tx;
                        spec.box = box;
                        out.push_back(spec);
                    }
                }
            }
        }
    }
    if (rejected) *rejected = skipped;
    return out;
}

DetectionTargets build_detection_targets(const std::vector<Tensor>& raw_values,
                                         const std::vector<TargetSpec>& assigned,
                                         const AnchorSet& anchors, int num_classes) {
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : raw_values) ptrs.push_back(&t);
    check_raw_shapes(ptrs, num_classes);
    const std::vector<int>& strides = ModelConfig::strides();

    DetectionTargets targets;
    targets.positives.reserve(assigned.size());
    for (const TargetSpec& spec : assigned) {
        const Tensor& raw = raw_values[static_cast<size_t>(spec.scale)];
        if (spec.image < 0 || spec.image >= raw.dim(0) || spec.cy < 0 || spec.cy >= raw.dim(2) ||
            spec.cx < 0 || spec.cx >= raw.dim(3)) {
            throw InputError("build_detection_targets: target outside the raw grid");
        }
        const real tx = raw[raw_index(raw, spec.image, spec.anchor, spec.cy, spec.cx, 0)];
        const real ty = raw[raw_index(raw, spec.image, spec.anchor, spec.cy, spec.cx, 1)];
        const real tw = raw[raw_index(raw, spec.image, spec.anchor, spec.cy, spec.cx, 2)];
        const real th = raw[raw_index(raw, spec.image, spec.anchor, spec.cy, spec.cx, 3)];
        const DualBox d = decode_dual(tx, ty, tw, th, spec.cx, spec.cy,
                                      strides[static_cast<size_t>(spec.scale)],
                                      anchors.at(spec.scale, spec.anchor));
        const real iou = iou_xyxy(d.x1.v, d.y1.v, d.x2.v, d.y2.v, spec.box.x1, spec.box.y1,
                                  spec.box.x2, spec.box.y2);
        DetectionTargets::Pos pos;
        pos.at = spec;
        pos.obj_label = std::clamp(spec.box.weight * iou, 0.0, 1.0);
        targets.positives.push_back(pos);
    }
    return targets;
}

DetectionLoss detection_loss_terms(const std::vector<ag::Var>& raw,
                                   const DetectionTargets& targets,
                                   const AnchorSet& anchors, const LossWeights& weights,
                                   int num_classes) {
    if (num_classes < 1) throw InputError("detection loss needs at least one class");
    std::vector<const Tensor*> ptrs;
    for (const ag::Var& v : raw) ptrs.push_back(&v->value);
    check_raw_shapes(ptrs, num_classes);
    anchors.validate();
    const std::vector<int>& strides = ModelConfig::strides();
    const real gamma = weights.focal_gamma;

    auto grads_cls = std::make_shared<std::vector<Tensor>>();
    auto grads_obj = std::make_shared<std::vector<Tensor>>();
    auto grads_box = std::make_shared<std::vector<Tensor>>();
    for (const ag::Var& v : raw) {
        grads_cls->push_back(Tensor::zeros(v->value.shape()));
        grads_obj->push_back(Tensor::zeros(v->value.shape()));
        grads_box->push_back(Tensor::zeros(v->value.shape()));
    }

    // Objectness soft labels per cell; when two boxes claim the same cell the
    // larger label wins, keeping the loss independent of box ordering.
    std::map<std::tuple<int, int, int, int, int>, real> obj_label;
    for (const DetectionTargets::Pos& pos : targets.positives) {
        real& slot =
            obj_label[{pos.at.scale, pos.at.image, pos.at.anchor, pos.at.cy, pos.at.cx}];
        slot = std::max(slot, pos.obj_label);
    }

    const std::int64_t num_pos = static_cast<std::int64_t>(targets.positives.size());

    // Class term: focal BCE on the class logits of every positive cell,
    // averaged over positives x classes.
    real cls_total = 0.0;
    if (num_pos > 0) {
        const real inv = 1.0 / static_cast<real>(num_pos * num_classes);
        for (const DetectionTargets::Pos& pos : targets.positives) {
            const Tensor& rv = raw[static_cast<size_t>(pos.at.scale)]->value;
            Tensor& g = (*grads_cls)[static_cast<size_t>(pos.at.scale)];
            for (int c = 0; c < num_classes; ++c) {
                const std::int64_t idx =
                    raw_index(rv, pos.at.image, pos.at.anchor, pos.at.cy, pos.at.cx, 5 + c);
                const real t = (c == pos.at.box.class_id) ? 1.0 : 0.0;
                real dz = 0.0;
                cls_total += inv * focal_logit(rv[idx], t, gamma, dz);
                g[idx] += inv * dz;
            }
        }
    }

    // Objectness term: focal BCE over every anchor cell, but positives and
    // background averaged separately. Positive cells are outnumbered by
    // background thousands to one; folding them into one grid-wide mean
    // would leave their confidence pinned to the background floor for the
    // whole of a short run.
    real obj_total = 0.0;
    std::int64_t num_cells = 0;
    for (size_t s = 0; s < raw.size(); ++s) {
        const Tensor& rv = raw[s]->value;
        num_cells += rv.dim(0) * static_cast<std::int64_t>(rv.dim(1)) * rv.dim(2) * rv.dim(3);
    }
    const std::int64_t num_claimed = static_cast<std::int64_t>(obj_label.size());
    const std::int64_t num_bg = num_cells - num_claimed;
    const real inv_bg = num_bg > 0 ? 1.0 / static_cast<real>(num_bg) : 0.0;
    const real inv_fg =
        num_claimed > 0 ? weights.obj_pos_weight / static_cast<real>(num_claimed) : 0.0;
    for (size_t s = 0; s < raw.size(); ++s) {
        const Tensor& rv = raw[s]->value;
        Tensor& g = (*grads_obj)[s];
        for (int n = 0; n < rv.dim(0); ++n)
            for (int a = 0; a < rv.dim(1); ++a)
                for (int y = 0; y < rv.dim(2); ++y)
                    for (int x = 0; x < rv.dim(3); ++x) {
                        real t = 0.0;
                        real coeff = inv_bg;
                        auto it = obj_label.find({static_cast<int>(s), n, a, y, x});
                        if (it != obj_label.end()) {
                            t = it->second;
                            coeff = inv_fg;
                        }
                        const std::int64_t idx = raw_index(rv, n, a, y, x, 4);
                        real dz = 0.0;
                        obj_total += coeff * focal_logit(rv[idx], t, gamma, dz);
                        g[idx] += coeff * dz;
                    }
    }

    // Box term: mean (1 - CIoU) between decoded positives and their boxes,
    // derivatives carried through the decode by forward-mode duals.
    real box_total = 0.0;
    if (num_pos > 0) {
        const real inv = 1.0 / static_cast<real>(num_pos);
        for (const DetectionTargets::Pos& pos : targets.positives) {
            const Tensor& rv = raw[static_cast<size_t>(pos.at.scale)]->value;
            Tensor& g = (*grads_box)[static_cast<size_t>(pos.at.scale)];
            std::array<std::int64_t, 4> idx{};
            for (int k = 0; k < 4; ++k) {
                idx[static_cast<size_t>(k)] =
                    raw_index(rv, pos.at.image, pos.at.anchor, pos.at.cy, pos.at.cx, k);
            }
            const DualBox d = decode_dual(rv[idx[0]], rv[idx[1]], rv[idx[2]], rv[idx[3]],
                                          pos.at.cx, pos.at.cy,
                                          strides[static_cast<size_t>(pos.at.scale)],
                                          anchors.at(pos.at.scale, pos.at.anchor));
            const Dual4 ciou = ciou_dual(d, pos.at.box.x1, pos.at.box.y1, pos.at.box.x2,
                                         pos.at.box.y2);
            box_total += inv * (1.0 - ciou.v);
            for (int k = 0; k < 4; ++k) {
                g[idx[static_cast<size_t>(k)]] += -inv * ciou.d[static_cast<size_t>(k)];
            }
        }
    }

    const auto make_term = [&raw](real value, std::shared_ptr<std::vector<Tensor>> grads,
                                  const char* label) {
        return ag::make_op(
            Tensor::scalar(value), raw,
            [grads](ag::Node& n) {
                const real up = n.grad[0];
                for (size_t s = 0; s < n.inputs.size(); ++s) {
                    Tensor scaled = (*grads)[s];
                    scaled.scale_(up);
                    n.inputs[s]->accumulate(scaled);
                }
            },
            label);
    };

    DetectionLoss out;
    out.class_loss = make_term(cls_total, grads_cls, "det.class");
    out.obj_loss = make_term(obj_total, grads_obj, "det.obj");
    out.box_loss = make_term(box_total, grads_box, "det.box");
    return out;
}

DetectionLoss detection_loss(const std::vector<ag::Var>& raw,
                             const std::vector<TargetSpec>& assigned,
                             const AnchorSet& anchors, const LossWeights& weights,
                             int num_classes) {
    std::vector<Tensor> values;
    values.reserve(raw.size());
    for (const ag::Var& v : raw) values.push_back(v->value);
    const DetectionTargets targets =
        build_detection_targets(values, assigned, anchors, num_classes);
    return detection_loss_terms(raw, targets, anchors, weights, num_classes);
}

}  // namespace pdp
