#include "pdp/infer/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "nlohmann/json.hpp"
#include "pdp/data/png_io.hpp"
#include "pdp/data/transforms.hpp"
#include "pdp/metrics/metrics.hpp"
#include "pdp/train/trainer.hpp"

namespace pdp::infer {
namespace {

using Clock = std::chrono::steady_clock;

real ms_since(Clock::time_point t0) {
    return std::chrono::duration<real, std::milli>(Clock::now() - t0).count();
}

void check_image(const Tensor& image, const char* who) {
    if (image.ndim() != 3 || image.dim(0) != 3 || image.dim(1) < 1 || image.dim(2) < 1) {
        throw InputError(std::string(who) + ": expected a (3, h, w) image, got " +
                         shape_str(image.shape()));
    }
}

// Fixed class palette; class c uses entry c modulo the palette size.
constexpr std::array<std::array<real, 3>, 6> kPalette{{{0.12, 0.47, 0.95},
                                                       {0.98, 0.77, 0.18},
                                                       {0.24, 0.84, 0.86},
                                                       {0.88, 0.25, 0.82},
                                                       {0.97, 0.54, 0.12},
                                                       {0.92, 0.92, 0.92}}};

constexpr std::array<real, 3> kDrivableTint{0.05, 0.85, 0.25};
constexpr std::array<real, 3> kLaneTint{0.95, 0.10, 0.10};
constexpr real kDrivableOpacity = 0.45;
constexpr real kLaneOpacity = 0.65;

// 3x5 glyphs for labels, row-major bits, most significant bit top-left.
struct Glyph {
    char ch;
    std::uint16_t bits;
};
constexpr std::array<Glyph, 12> kFont{{
    {'0', 0b111101101101111},
    {'1', 0b010110010010111},
    {'2', 0b111001111100111},
    {'3', 0b111001111001111},
    {'4', 0b101101111001001},
    {'5', 0b111100111001111},
    {'6', 0b111100111101111},
    {'7', 0b111001001010010},
    {'8', 0b111101111101111},
    {'9', 0b111101111001111},
    {'.', 0b000000000000010},
    {' ', 0b000000000000000},
}};

void put_px(Tensor& img, int y, int x, const std::array<real, 3>& c) {
    const int h = img.dim(1), w = img.dim(2);
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    for (int ch = 0; ch < 3; ++ch) {
        img[(static_cast<std::int64_t>(ch) * h + y) * w + x] = c[static_cast<size_t>(ch)];
    }
}

void blend_px(Tensor& img, int y, int x, const std::array<real, 3>& c, real opacity) {
    const int h = img.dim(1), w = img.dim(2);
    for (int ch = 0; ch < 3; ++ch) {
        real& v = img[(static_cast<std::int64_t>(ch) * h + y) * w + x];
        v = (1.0 - opacity) * v + opacity * c[static_cast<size_t>(ch)];
    }
}

void draw_text(Tensor& img, int top, int left, const std::string& text,
               const std::array<real, 3>& color) {
    int x = left;
    for (char ch : text) {
        std::uint16_t bits = 0;
        for (const Glyph& g : kFont) {
            if (g.ch == ch) {
                bits = g.bits;
                break;
            }
        }
        for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 3; ++c)
                if (bits >> (14 - (r * 3 + c)) & 1) put_px(img, top + r, x + c, color);
        x += 4;
    }
}

PerceptionResult infer_tensor(Network& net, const Tensor& image) {
    check_image(image, "run_inference");
    const bool was_training = net.training();
    net.set_training(false);
    const ModelConfig& mc = net.config();
    const AnchorSet anchors = AnchorSet::from_config(mc);

    PerceptionResult res;
    res.src_h = image.dim(1);
    res.src_w = image.dim(2);

    const auto t_pre = Clock::now();
    data::Sample src;
    src.image = image;
    src.drivable_mask = Tensor::zeros({res.src_h, res.src_w});
    src.lane_mask = Tensor::zeros({res.src_h, res.src_w});
    const data::Sample canvas = data::resize_letterbox(src, mc.input_w, mc.input_h);
    Tensor batch({1, 3, mc.input_h, mc.input_w});
    for (std::int64_t k = 0; k < canvas.image.numel(); ++k) batch[k] = canvas.image[k];
    res.timing.preprocess_ms = ms_since(t_pre);

    const auto t_fwd = Clock::now();
    Network::Output out = net.forward(batch);
    res.timing.forward_ms = ms_since(t_fwd);

    const auto t_post = Clock::now();
    std::vector<Tensor> raw;
    raw.reserve(out.det_raw.size());
    for (const ag::Var& v : out.det_raw) raw.push_back(v->value);
    std::vector<Detection> dets =
        nms(decode_boxes(raw, 0, anchors, mc.num_classes, metrics::kEvalConfThreshold,
                         mc.input_w, mc.input_h),
            train::kNmsIouThreshold);
    for (Detection& d : dets) {
        const std::array<real, 2> p1 = data::letterbox_to_src(canvas.transform, d.x1, d.y1);
        const std::array<real, 2> p2 = data::letterbox_to_src(canvas.transform, d.x2, d.y2);
        d.x1 = p1[0];
        d.y1 = p1[1];
        d.x2 = p2[0];
        d.y2 = p2[1];
    }
    res.detections = std::move(dets);
    res.drivable_mask = data::letterbox_mask_to_src(
        canvas.transform, argmax_mask(out.drivable_logits->value, 0), res.src_h, res.src_w);
    res.lane_mask = data::letterbox_mask_to_src(
        canvas.transform, argmax_mask(out.lane_logits->value, 0), res.src_h, res.src_w);
    res.timing.postprocess_ms = ms_since(t_post);

    net.set_training(was_training);
    return res;
}

}  // namespace

std::string PerceptionResult::to_json() const {
    nlohmann::json doc;
    doc["source"] = {{"width", src_w}, {"height", src_h}};
    doc["detections"] = nlohmann::json::array();
    for (const Detection& d : detections) {
        doc["detections"].push_back({{"class", d.class_id},
                                     {"confidence", d.confidence},
                                     {"box", {d.x1, d.y1, d.x2, d.y2}}});
    }
    doc["timing_ms"] = {{"preprocess", timing.preprocess_ms},
                        {"forward", timing.forward_ms},
                        {"postprocess", timing.postprocess_ms}};
    return doc.dump(2);
}

PerceptionResult run_inference(Network& net, const Tensor& image) {
    return infer_tensor(net, image);
}

PerceptionResult run_inference_file(Network& net, const std::string& image_path) {
    return infer_tensor(net, data::read_png_rgb(image_path));
}

Tensor render_overlay(const Tensor& image, const PerceptionResult& result) {
    check_image(image, "render_overlay");
    const int h = image.dim(1), w = image.dim(2);
    const auto mask_ok = [&](const Tensor& m) {
        return m.empty() || (m.ndim() == 2 && m.dim(0) == h && m.dim(1) == w);
    };
    if (!mask_ok(result.drivable_mask) || !mask_ok(result.lane_mask)) {
        throw InputError("render_overlay: result masks do not match the image size");
    }

    Tensor out = image;
    const auto tint = [&](const Tensor& m, const std::array<real, 3>& color, real opacity) {
        if (m.empty()) return;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (m[static_cast<std::int64_t>(y) * w + x] != 0.0)
                    blend_px(out, y, x, color, opacity);
    };
    tint(result.drivable_mask, kDrivableTint, kDrivableOpacity);
    tint(result.lane_mask, kLaneTint, kLaneOpacity);

    for (const Detection& d : result.detections) {
        const auto& color = kPalette[static_cast<size_t>(d.class_id) % kPalette.size()];
        const int x1 = std::clamp(static_cast<int>(std::lround(d.x1)), 0, w - 1);
        const int y1 = std::clamp(static_cast<int>(std::lround(d.y1)), 0, h - 1);
        const int x2 = std::clamp(static_cast<int>(std::lround(d.x2)), 0, w);
        const int y2 = std::clamp(static_cast<int>(std::lround(d.y2)), 0, h);
        for (int t = 0; t < 2; ++t) {
            for (int x = x1; x < x2; ++x) {
                put_px(out, y1 + t, x, color);
                put_px(out, y2 - 1 - t, x, color);
            }
            for (int y = y1; y < y2; ++y) {
                put_px(out, y, x1 + t, color);
                put_px(out, y, x2 - 1 - t, color);
            }
        }
        char label[32];
        std::snprintf(label, sizeof(label), "%d %.2f", d.class_id, d.confidence);
        draw_text(out, std::max(0, y1 - 6), x1 + 1, label, color);
    }
    return out;
}

std::string BenchReport::to_text() const {
    std::ostringstream os;
    os << "protocol: batch 1, float64, forward pass only (postprocess timed separately)\n";
    os << "hardware: " << hardware << "\n";
    os << "input: " << input_w << "x" << input_h << "  iterations: " << iterations
       << "  warmup: " << warmup << "\n";
    char line[160];
    std::snprintf(line, sizeof(line),
                  "params: %lld  fps: %.3f  forward: %.2f ms  postprocess: %.2f ms\n",
                  static_cast<long long>(param_count), fps, mean_forward_ms, postprocess_ms);
    os << line;
    return os.str();
}

BenchReport benchmark(Network& net, int input_w, int input_h, int iterations, int warmup) {
    if (iterations < 1) throw InputError("benchmark: iterations must be >= 1");
    if (warmup < 0) throw InputError("benchmark: warmup must be >= 0");
    if (input_w < 32 || input_h < 32 || input_w % 32 || input_h % 32) {
        throw InputError("benchmark: input size must be positive and divisible by 32");
    }
    const bool was_training = net.training();
    net.set_training(false);
    const ModelConfig& mc = net.config();
    const AnchorSet anchors = AnchorSet::from_config(mc);

    Tensor input = Tensor::full({1, 3, input_h, input_w}, 114.0 / 255.0);
    for (int i = 0; i < warmup; ++i) net.forward(input);

    const auto t0 = Clock::now();
    for (int i = 0; i < iterations; ++i) net.forward(input);
    const real total_ms = ms_since(t0);

    Network::Output out = net.forward(input);
    const auto t_post = Clock::now();
    std::vector<Tensor> raw;
    for (const ag::Var& v : out.det_raw) raw.push_back(v->value);
    nms(decode_boxes(raw, 0, anchors, mc.num_classes, metrics::kEvalConfThreshold, input_w,
                     input_h),
        train::kNmsIouThreshold);
    argmax_mask(out.drivable_logits->value, 0);
    argmax_mask(out.lane_logits->value, 0);
    const real post_ms = ms_since(t_post);

    net.set_training(was_training);

    BenchReport rep;
    rep.fps = total_ms > 0 ? 1000.0 * static_cast<real>(iterations) / total_ms : 0.0;
    rep.mean_forward_ms = total_ms / static_cast<real>(iterations);
    rep.postprocess_ms = post_ms;
    rep.param_count = net.param_count();
    rep.input_w = input_w;
    rep.input_h = input_h;
    rep.iterations = iterations;
    rep.warmup = warmup;
    rep.hardware = cpu_model_string();
    return rep;
}

std::string cpu_model_string() {
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        const auto pos = line.find("model name");
        if (pos == std::string::npos) continue;
        const auto colon = line.find(':', pos);
        if (colon == std::string::npos) continue;
        auto s = line.substr(colon + 1);
        const auto first = s.find_first_not_of(" \t");
        if (first == std::string::npos) continue;
        return s.substr(first);
    }
    return "unknown cpu";
}

}  // namespace pdp::infer
