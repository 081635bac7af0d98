#include <algorithm>
#include <cstdio>
#include <json.hpp>
#include <string>
#include <tuple>

#include "pdp/metrics/metrics.hpp"

namespace pdp::metrics {
namespace {

bool degenerate(const data::Box& b) { return b.x2 <= b.x1 || b.y2 <= b.y1; }

void check_mask_pair(const char* what, const Tensor& pred, const Tensor& gt) {
    if (pred.shape() != gt.shape()) {
        throw InputError(std::string(what) + ": prediction/ground-truth shape mismatch");
    }
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        if ((pred[i] != 0.0 && pred[i] != 1.0) || (gt[i] != 0.0 && gt[i] != 1.0)) {
            throw InputError(std::string(what) + ": masks must be exactly 0/1");
        }
    }
}

// Confusion for one pair of binary masks, indexed by class {0, 1}.
struct PairCounts {
    std::array<std::int64_t, 2> tp{0, 0}, fp{0, 0}, fn{0, 0};
};

PairCounts count_pair(const Tensor& pred, const Tensor& gt) {
    PairCounts c;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const int p = pred[i] != 0.0 ? 1 : 0;
        const int g = gt[i] != 0.0 ? 1 : 0;
        if (p == g) {
            ++c.tp[static_cast<size_t>(g)];
        } else {
            ++c.fp[static_cast<size_t>(p)];
            ++c.fn[static_cast<size_t>(g)];
        }
    }
    return c;
}

real class_iou(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    const std::int64_t uni = tp + fp + fn;
    // A class absent from both prediction and truth is vacuously perfect.
    return uni == 0 ? 1.0 : static_cast<real>(tp) / static_cast<real>(uni);
}

}  // namespace

real iou_box(const data::Box& a, const data::Box& b) {
    if (degenerate(a) || degenerate(b)) {
        std::fprintf(stderr, "warning: IoU of a degenerate box treated as 0\n");
        return 0.0;
    }
    return iou_xyxy(a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2);
}

void MetricAccumulator::add_detections(const std::string& image_id, std::vector<Detection> dets,
                                       const std::vector<data::Box>& gts) {
    image_ids_.insert(image_id);
    for (const data::Box& g : gts) {
        if (g.class_id < 0) throw InputError("negative ground-truth class id");
        ++det_[g.class_id].gt_count;
    }
    // Canonical order makes matching independent of the caller's ordering.
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        return std::tie(a.x1, a.y1, a.x2, a.y2) < std::tie(b.x1, b.y1, b.x2, b.y2);
    });
    std::vector<bool> taken(gts.size(), false);
    for (const Detection& d : dets) {
        if (d.class_id < 0) throw InputError("negative detection class id");
        int best = -1;
        real best_iou = 0.0;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].class_id != d.class_id) continue;
            const real iou = iou_xyxy(d.x1, d.y1, d.x2, d.y2, gts[g].x1, gts[g].y1, gts[g].x2,
                                      gts[g].y2);
            if (iou > best_iou) {
                best_iou = iou;
                best = static_cast<int>(g);
            }
        }
        const bool tp = best >= 0 && best_iou >= kMatchIouThreshold;
        if (tp) taken[static_cast<size_t>(best)] = true;
        det_[d.class_id].recs.push_back({d.confidence, tp});
    }
}

void MetricAccumulator::add_drivable(const std::string& image_id, const Tensor& pred,
                                     const Tensor& gt) {
    check_mask_pair("drivable", pred, gt);
    image_ids_.insert(image_id);
    const PairCounts c = count_pair(pred, gt);
    for (int k = 0; k < 2; ++k) {
        const size_t s = static_cast<size_t>(k);
        drivable_.tp[s] += c.tp[s];
        drivable_.fp[s] += c.fp[s];
        drivable_.fn[s] += c.fn[s];
    }
    const real miou = 0.5 * (class_iou(c.tp[0], c.fp[0], c.fn[0]) +
                             class_iou(c.tp[1], c.fp[1], c.fn[1]));
    per_image_drivable_.push_back({image_id, miou});
}

void MetricAccumulator::add_lane(const std::string& image_id, const Tensor& pred,
                                 const Tensor& gt) {
    check_mask_pair("lane", pred, gt);
    image_ids_.insert(image_id);
    const PairCounts c = count_pair(pred, gt);
    for (int k = 0; k < 2; ++k) {
        const size_t s = static_cast<size_t>(k);
        lane_.tp[s] += c.tp[s];
        lane_.fp[s] += c.fp[s];
        lane_.fn[s] += c.fn[s];
    }
}

void MetricAccumulator::merge_from(const MetricAccumulator& other) {
    for (const std::string& id : other.image_ids_) {
        if (image_ids_.count(id)) {
            throw InputError("image id appears in multiple metric parts: " + id);
        }
    }
    image_ids_.insert(other.image_ids_.begin(), other.image_ids_.end());
    for (const auto& [cls, st] : other.det_) {
        ClassState& mine = det_[cls];
        mine.gt_count += st.gt_count;
        mine.recs.insert(mine.recs.end(), st.recs.begin(), st.recs.end());
    }
    for (int k = 0; k < 2; ++k) {
        const size_t s = static_cast<size_t>(k);
        drivable_.tp[s] += other.drivable_.tp[s];
        drivable_.fp[s] += other.drivable_.fp[s];
        drivable_.fn[s] += other.drivable_.fn[s];
        lane_.tp[s] += other.lane_.tp[s];
        lane_.fp[s] += other.lane_.fp[s];
        lane_.fn[s] += other.lane_.fn[s];
    }
    per_image_drivable_.insert(per_image_drivable_.end(), other.per_image_drivable_.begin(),
                               other.per_image_drivable_.end());
}

MetricReport MetricAccumulator::report() const {
    MetricReport r;

    // Detection: per-class PR curve over globally sorted records. Records
    // with equal confidence are committed as one group, so the curve (and
    // the AP) cannot depend on the submission order.
    real ap_sum = 0, recall_sum = 0;
    int classes_counted = 0;
    for (const auto& [cls, st] : det_) {
        if (st.gt_count == 0) {
            if (!st.recs.empty()) {
                r.notes.push_back("class " + std::to_string(cls) +
                                  " excluded from mAP: no ground truth");
            }
            continue;
        }
        std::vector<Rec> recs = st.recs;
        std::sort(recs.begin(), recs.end(),
                  [](const Rec& a, const Rec& b) { return a.conf > b.conf; });
        std::vector<std::array<real, 2>> points;  // (recall, precision)
        std::int64_t ctp = 0, cfp = 0, thresh_tp = 0;
        for (size_t i = 0; i < recs.size();) {
            size_t j = i;
            while (j < recs.size() && recs[j].conf == recs[i].conf) {
                ++(recs[j].tp ? ctp : cfp);
                if (recs[j].tp && recs[j].conf >= kEvalConfThreshold) ++thresh_tp;
                ++j;
            }
            points.push_back({static_cast<real>(ctp) / static_cast<real>(st.gt_count),
                              static_cast<real>(ctp) / static_cast<real>(ctp + cfp)});
            i = j;
        }
        // All-points interpolation: area under the running-max envelope.
        real ap = 0, pmax = 0;
        for (size_t i = points.size(); i-- > 0;) {
            pmax = std::max(pmax, points[i][1]);
            const real r_prev = i == 0 ? 0.0 : points[i - 1][0];
            ap += (points[i][0] - r_prev) * pmax;
        }
        const real cls_recall = static_cast<real>(thresh_tp) / static_cast<real>(st.gt_count);
        r.per_class_ap[cls] = ap;
        r.per_class_recall[cls] = cls_recall;
        ap_sum += ap;
        recall_sum += cls_recall;
        ++classes_counted;
    }
    if (classes_counted > 0) {
        r.map50 = ap_sum / classes_counted;
        r.recall = recall_sum / classes_counted;
    } else {
        r.notes.push_back("mAP undefined: no ground-truth boxes");
    }

    const std::int64_t drivable_pixels =
        drivable_.tp[0] + drivable_.tp[1] + drivable_.fp[0] + drivable_.fp[1];
    if (drivable_pixels > 0) {
        r.drivable_miou = 0.5 * (class_iou(drivable_.tp[0], drivable_.fp[0], drivable_.fn[0]) +
                                 class_iou(drivable_.tp[1], drivable_.fp[1], drivable_.fn[1]));
    } else {
        r.notes.push_back("drivable mIoU undefined: no masks");
    }

    const std::int64_t lane_gt = lane_.tp[1] + lane_.fn[1];
    r.lane_defined = lane_gt > 0;
    if (r.lane_defined) {
        r.lane_accuracy = static_cast<real>(lane_.tp[1]) / static_cast<real>(lane_gt);
        r.lane_iou = class_iou(lane_.tp[1], lane_.fp[1], lane_.fn[1]);
    } else {
        r.notes.push_back("lane metrics undefined: no ground-truth lane pixels");
    }

    r.per_image_drivable_iou = per_image_drivable_;
    std::sort(r.per_image_drivable_iou.begin(), r.per_image_drivable_iou.end());
    return r;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["map50"] = map50;
    j["recall"] = recall;
    j["drivable_miou"] = drivable_miou;
    j["lane_defined"] = lane_defined;
    j["lane_accuracy"] = lane_accuracy;
    j["lane_iou"] = lane_iou;
    j["fps"] = fps;
    j["param_count"] = param_count;
    for (const auto& [cls, ap] : per_class_ap) j["per_class_ap"][std::to_string(cls)] = ap;
    for (const auto& [cls, rc] : per_class_recall) {
        j["per_class_recall"][std::to_string(cls)] = rc;
    }
    for (const auto& [id, v] : per_image_drivable_iou) {
        j["per_image_drivable_iou"][id] = v;
    }
    j["notes"] = notes;
    return j.dump(2);
}

std::string MetricReport::to_table() const {
    char line1[160], line2[160], lane_acc[16], lane_i[16];
    if (lane_defined) {
        std::snprintf(lane_acc, sizeof(lane_acc), "%8.3f", lane_accuracy);
        std::snprintf(lane_i, sizeof(lane_i), "%8.3f", lane_iou);
    } else {
        std::snprintf(lane_acc, sizeof(lane_acc), "%8s", "n/a");
        std::snprintf(lane_i, sizeof(lane_i), "%8s", "n/a");
    }
    std::snprintf(line1, sizeof(line1), "%10s %10s %8s %8s %8s %8s %8s", "Params",
                  "Speed(fps)", "mAP50", "Recall", "mIoU", "Accuracy", "IoU");
    std::snprintf(line2, sizeof(line2), "%10lld %10.1f %8.3f %8.3f %8.3f %s %s",
                  static_cast<long long>(param_count), fps, map50, recall, drivable_miou,
                  lane_acc, lane_i);
    return std::string(line1) + "\n" + line2 + "\n";
}

std::pair<real, real> average_precision_50(const std::vector<std::vector<Detection>>& dets,
                                           const std::vector<std::vector<data::Box>>& gts) {
    if (dets.size() != gts.size()) {
        throw InputError("average_precision_50: detections and ground truth differ in length");
    }
    MetricAccumulator acc;
    for (size_t i = 0; i < dets.size(); ++i) {
        acc.add_detections("#" + std::to_string(i), dets[i], gts[i]);
    }
    const MetricReport r = acc.report();
    return {r.map50, r.recall};
}

real mean_iou_seg(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt) {
    if (pred.size() != gt.size()) {
        throw InputError("mean_iou_seg: mask sets differ in length");
    }
    MetricAccumulator acc;
    for (size_t i = 0; i < pred.size(); ++i) {
        acc.add_drivable("#" + std::to_string(i), pred[i], gt[i]);
    }
    return acc.report().drivable_miou;
}

std::pair<real, real> lane_metrics(const std::vector<Tensor>& pred,
                                   const std::vector<Tensor>& gt) {
    if (pred.size() != gt.size()) {
        throw InputError("lane_metrics: mask sets differ in length");
    }
    MetricAccumulator acc;
    for (size_t i = 0; i < pred.size(); ++i) {
        acc.add_lane("#" + std::to_string(i), pred[i], gt[i]);
    }
    const MetricReport r = acc.report();
    return {r.lane_accuracy, r.lane_iou};
}

MetricReport merge_reports(const std::vector<MetricAccumulator>& parts) {
    MetricAccumulator all;
    for (const MetricAccumulator& p : parts) all.merge_from(p);
    return all.report();
}

}  // namespace pdp::metrics
