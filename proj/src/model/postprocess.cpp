#include "pdp/model/postprocess.hpp"

#include <algorithm>
#include <cmath>

namespace pdp {

AnchorSet AnchorSet::from_config(const ModelConfig& cfg) {
    AnchorSet a{cfg.anchors};
    a.validate();
    return a;
}

const std::array<real, 2>& AnchorSet::at(int scale, int anchor) const {
    return sizes[static_cast<size_t>(scale * 3 + anchor)];
}

void AnchorSet::validate() const {
    if (sizes.size() != 9) throw ConfigError("anchor set needs 9 priors, got " + std::to_string(sizes.size()));
    for (const auto& s : sizes)
        if (s[0] <= 0 || s[1] <= 0) throw ConfigError("anchor sizes must be positive");
}

real iou_xyxy(real ax1, real ay1, real ax2, real ay2,
              real bx1, real by1, real bx2, real by2) {
    const real aw = ax2 - ax1, ah = ay2 - ay1, bw = bx2 - bx1, bh = by2 - by1;
    if (aw <= 0 || ah <= 0 || bw <= 0 || bh <= 0) return 0.0;
    const real ix = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
    const real iy = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
    const real inter = ix * iy;
    const real uni = aw * ah + bw * bh - inter;
    return uni > 0 ? inter / uni : 0.0;
}

namespace {
inline real sigmoid(real x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const real e = std::exp(x);
    return e / (1.0 + e);
}
}  // namespace

std::vector<Detection> decode_boxes(const std::vector<Tensor>& raw, int batch_index,
                                    const AnchorSet& anchors, int num_classes,
                                    real conf_threshold, int img_w, int img_h) {
    anchors.validate();
    if (raw.size() != 3) throw InputError("decode_boxes: expected 3 scales, got " + std::to_string(raw.size()));
    std::vector<Detection> out;
    for (int s = 0; s < 3; ++s) {
        const Tensor& t = raw[static_cast<size_t>(s)];
        if (t.ndim() != 5 || t.dim(1) != 3 || t.dim(4) != 5 + num_classes)
            throw InputError("decode_boxes: bad raw shape " + shape_str(t.shape()));
        if (batch_index < 0 || batch_index >= t.dim(0))
            throw InputError("decode_boxes: batch index out of range");
        const int gh = t.dim(2), gw = t.dim(3), k = t.dim(4);
        const int stride = ModelConfig::strides()[static_cast<size_t>(s)];
        const real* base = t.data() +
            static_cast<std::int64_t>(batch_index) * 3 * gh * gw * k;
        for (int a = 0; a < 3; ++a) {
            const auto& prior = anchors.at(s, a);
            for (int cy = 0; cy < gh; ++cy)
                for (int cx = 0; cx < gw; ++cx) {
                    const real* v = base + ((static_cast<std::int64_t>(a) * gh + cy) * gw + cx) * k;
                    const real obj = sigmoid(v[4]);
                    int best_c = 0;
                    real best_p = sigmoid(v[5]);
                    for (int c = 1; c < num_classes; ++c) {
                        const real p = sigmoid(v[5 + c]);
                        if (p > best_p) {
                            best_p = p;
                            best_c = c;
                        }
                    }
                    const real conf = obj * best_p;
                    if (conf < conf_threshold) continue;
                    const real px = (2.0 * sigmoid(v[0]) - 0.5 + cx) * stride;
                    const real py = (2.0 * sigmoid(v[1]) - 0.5 + cy) * stride;
                    const real sw = 2.0 * sigmoid(v[2]);
                    const real sh = 2.0 * sigmoid(v[3]);
                    const real bw = sw * sw * prior[0];
                    const real bh = sh * sh * prior[1];
                    Detection d;
                    d.class_id = best_c;
                    d.confidence = conf;
                    d.x1 = std::clamp(px - bw / 2, 0.0, static_cast<real>(img_w));
                    d.y1 = std::clamp(py - bh / 2, 0.0, static_cast<real>(img_h));
                    d.x2 = std::clamp(px + bw / 2, 0.0, static_cast<real>(img_w));
                    d.y2 = std::clamp(py + bh / 2, 0.0, static_cast<real>(img_h));
                    if (d.x2 <= d.x1 || d.y2 <= d.y1) continue;
                    out.push_back(d);
                }
        }
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, real iou_threshold) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return std::tie(a.x1, a.y1, a.x2, a.y2) < std::tie(b.x1, b.y1, b.x2, b.y2);
    });
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (k.class_id != d.class_id) continue;
            if (iou_xyxy(d.x1, d.y1, d.x2, d.y2, k.x1, k.y1, k.x2, k.y2) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

Tensor argmax_mask(const Tensor& logits, int batch_index) {
    if (logits.ndim() != 4 || logits.dim(1) != 2) {
        throw InputError("argmax_mask expects (b, 2, h, w) logits");
    }
    if (batch_index < 0 || batch_index >= logits.dim(0)) {
        throw InputError("argmax_mask: batch index out of range");
    }
    const int h = logits.dim(2), w = logits.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const std::int64_t base = static_cast<std::int64_t>(batch_index) * 2 * plane;
    Tensor mask({h, w});
    for (std::int64_t i = 0; i < plane; ++i) {
        mask[i] = logits[base + plane + i] > logits[base + i] ? 1.0 : 0.0;
    }
    return mask;
}

}  // namespace pdp
