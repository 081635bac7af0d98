#pragma once

#include <string>
#include <vector>

#include "pdp/model/network.hpp"
#include "pdp/model/postprocess.hpp"

namespace pdp::infer {

struct StageTimings {
    real preprocess_ms = 0;
    real forward_ms = 0;
    real postprocess_ms = 0;
};

// Everything the network says about one image, mapped back to the source
// resolution: detections in source pixel coordinates plus the two
// full-resolution {0,1} masks.
struct PerceptionResult {
    std::vector<Detection> detections;
    Tensor drivable_mask;  // (src_h, src_w)
    Tensor lane_mask;      // (src_h, src_w)
    StageTimings timing;
    int src_w = 0;
    int src_h = 0;

    std::string to_json() const;  // detections + timings (masks stay binary artifacts)
};

// Letterbox to the configured input -> forward -> decode + NMS -> argmax ->
// inverse-map everything to source coordinates. Any image size is accepted;
// the letterbox absorbs the geometry.
PerceptionResult run_inference(Network& net, const Tensor& image);  // (3, h, w) in [0,1]
PerceptionResult run_inference_file(Network& net, const std::string& image_path);

// Copy of the image with the drivable area tinted translucent green, lane
// pixels painted red, and each detection drawn as a 2 px box edge with a
// class + confidence label. Colors come from a fixed palette, so identical
// results render identical overlays.
Tensor render_overlay(const Tensor& image, const PerceptionResult& result);

struct BenchReport {
    real fps = 0;
    real mean_forward_ms = 0;
    real postprocess_ms = 0;  // measured once, excluded from fps
    std::int64_t param_count = 0;
    int input_w = 0;
    int input_h = 0;
    int iterations = 0;
    int warmup = 0;
    std::string hardware;

    std::string to_text() const;
};

// Batch-1 forward-pass throughput at the given input size. Warmup passes are
// discarded; postprocessing is timed separately and never counts toward fps.
BenchReport benchmark(Network& net, int input_w, int input_h, int iterations, int warmup = 5);

// "model name" from /proc/cpuinfo, or "unknown cpu".
std::string cpu_model_string();

}  // namespace pdp::infer
