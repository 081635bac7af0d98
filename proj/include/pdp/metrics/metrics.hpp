#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pdp/data/types.hpp"
#include "pdp/model/postprocess.hpp"

namespace pdp::metrics {

// Confidence floor for the recall metric; evaluation decodes at this
// threshold as well, NMS runs before any metric sees the detections.
inline constexpr real kEvalConfThreshold = 0.001;
// A detection counts as a match at IoU >= 0.5 (inclusive).
inline constexpr real kMatchIouThreshold = 0.5;

// Corner IoU for annotation boxes; degenerate boxes score 0 with a warning.
real iou_box(const data::Box& a, const data::Box& b);

struct MetricReport {
    real map50 = 0;
    real recall = 0;
    real drivable_miou = 0;
    real lane_accuracy = 0;
    real lane_iou = 0;
    bool lane_defined = false;  // false when the split has no GT lane pixels
    real fps = 0;               // filled by the benchmark/eval driver
    std::int64_t param_count = 0;

    std::map<int, real> per_class_ap;
    std::map<int, real> per_class_recall;
    std::vector<std::pair<std::string, real>> per_image_drivable_iou;
    std::vector<std::string> notes;

    std::string to_json() const;
    std::string to_table() const;
};

// Mergeable evaluation state. Per-image greedy matching happens when an
// image is added (it only looks at that image), so partial accumulators
// over disjoint image subsets merge into exactly the monolithic result;
// the PR curve and the means are deferred to report().
class MetricAccumulator {
public:
    // Matches detections to same-class ground truth: confidence-descending
    // scan, each detection takes the highest-IoU still-unmatched GT box if
    // that IoU is >= 0.5, otherwise it is a false positive.
    void add_detections(const std::string& image_id, std::vector<Detection> dets,
                        const std::vector<data::Box>& gts);
    // Binary {0,1} masks of equal shape; confusion counts accumulate over
    // the whole split.
    void add_drivable(const std::string& image_id, const Tensor& pred, const Tensor& gt);
    void add_lane(const std::string& image_id, const Tensor& pred, const Tensor& gt);

    // Folds another part in; a shared image id means the parts were not
    // disjoint and raises an input error.
    void merge_from(const MetricAccumulator& other);

    MetricReport report() const;

private:
    struct Rec {
        real conf;
        bool tp;
    };
    struct ClassState {
        std::vector<Rec> recs;
        std::int64_t gt_count = 0;
    };
    struct Confusion {
        std::array<std::int64_t, 2> tp{0, 0}, fp{0, 0}, fn{0, 0};
    };

    std::map<int, ClassState> det_;
    Confusion drivable_;
    Confusion lane_;
    std::vector<std::pair<std::string, real>> per_image_drivable_;
    std::set<std::string> image_ids_;
};

// Convenience single-shot wrappers over the accumulator.

// VOC-style AP at IoU 0.5 with all-points interpolation, averaged over
// classes that have ground truth; recall = matched GT / total GT counting
// detections with confidence >= kEvalConfThreshold.
std::pair<real, real> average_precision_50(const std::vector<std::vector<Detection>>& dets,
                                           const std::vector<std::vector<data::Box>>& gts);

// Mean of background and foreground IoU with confusion counts pooled over
// the whole mask set.
real mean_iou_seg(const std::vector<Tensor>& pred, const std::vector<Tensor>& gt);

// (accuracy, IoU) of the lane foreground: accuracy = TP/(TP+FN) over GT
// lane pixels, IoU = TP/(TP+FP+FN).
std::pair<real, real> lane_metrics(const std::vector<Tensor>& pred,
                                   const std::vector<Tensor>& gt);

// Merge partial states from disjoint image subsets into one report;
// equals the single-pass result exactly.
MetricReport merge_reports(const std::vector<MetricAccumulator>& parts);

}  // namespace pdp::metrics
