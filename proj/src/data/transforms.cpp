#include <algorithm>
#include <cmath>
#include <tuple>

#include "pdp/data/transforms.hpp"

namespace pdp::data {
namespace {

constexpr real kPadGray = 114.0 / 255.0;

void check_sample(const Sample& s, const char* who) {
    if (s.image.ndim() != 3 || s.image.dim(0) != 3) {
        throw InputError(std::string(who) + ": sample image must be (3, h, w)");
    }
    const int h = s.image.dim(1), w = s.image.dim(2);
    const auto mask_ok = [&](const Tensor& m) {
        return m.ndim() == 2 && m.dim(0) == h && m.dim(1) == w;
    };
    if (!mask_ok(s.drivable_mask) || !mask_ok(s.lane_mask)) {
        throw InputError(std::string(who) + ": masks must match the image size");
    }
}

int nearest_index(real dst, real offset, real scale, int limit) {
    const int i = static_cast<int>(std::floor((dst + 0.5 - offset) / scale));
    return std::clamp(i, 0, limit - 1);
}

}  // namespace

Sample resize_letterbox(const Sample& s, int out_w, int out_h) {
    check_sample(s, "resize_letterbox");
    if (out_w < 1 || out_h < 1) throw InputError("resize_letterbox: empty output size");
    const int sw = s.width(), sh = s.height();
    const real scale = std::min(static_cast<real>(out_w) / sw, static_cast<real>(out_h) / sh);
    const int new_w = static_cast<int>(std::lround(sw * scale));
    const int new_h = static_cast<int>(std::lround(sh * scale));
    const int pad_x = (out_w - new_w) / 2;
    const int pad_y = (out_h - new_h) / 2;

    Sample out;
    out.source_id = s.source_id;
    out.image = Tensor::full({3, out_h, out_w}, kPadGray);
    out.drivable_mask = Tensor::zeros({out_h, out_w});
    out.lane_mask = Tensor::zeros({out_h, out_w});
    for (int y = 0; y < new_h; ++y) {
        const int sy = nearest_index(static_cast<real>(y), 0.0, scale, sh);
        for (int x = 0; x < new_w; ++x) {
            const int sx = nearest_index(static_cast<real>(x), 0.0, scale, sw);
            for (int c = 0; c < 3; ++c) {
                out.image[(static_cast<std::int64_t>(c) * out_h + pad_y + y) * out_w + pad_x + x] =
                    s.image[(static_cast<std::int64_t>(c) * sh + sy) * sw + sx];
            }
            out.drivable_mask[static_cast<std::int64_t>(pad_y + y) * out_w + pad_x + x] =
                s.drivable_mask[static_cast<std::int64_t>(sy) * sw + sx];
            out.lane_mask[static_cast<std::int64_t>(pad_y + y) * out_w + pad_x + x] =
                s.lane_mask[static_cast<std::int64_t>(sy) * sw + sx];
        }
    }

    out.boxes.reserve(s.boxes.size());
    for (Box b : s.boxes) {
        b.x1 = std::clamp(b.x1 * scale + pad_x, static_cast<real>(pad_x),
                          static_cast<real>(pad_x + new_w));
        b.x2 = std::clamp(b.x2 * scale + pad_x, static_cast<real>(pad_x),
                          static_cast<real>(pad_x + new_w));
        b.y1 = std::clamp(b.y1 * scale + pad_y, static_cast<real>(pad_y),
                          static_cast<real>(pad_y + new_h));
        b.y2 = std::clamp(b.y2 * scale + pad_y, static_cast<real>(pad_y),
                          static_cast<real>(pad_y + new_h));
        out.boxes.push_back(b);
    }

    out.transform.valid = true;
    out.transform.scale = scale;
    out.transform.pad_x = static_cast<real>(pad_x);
    out.transform.pad_y = static_cast<real>(pad_y);
    out.transform.src_w = sw;
    out.transform.src_h = sh;
    return out;
}

std::array<real, 2> letterbox_to_src(const TransformRecord& t, real x, real y) {
    if (!t.valid) throw InputError("letterbox_to_src: no transform recorded");
    const real sx = std::clamp((x - t.pad_x) / t.scale, real(0), static_cast<real>(t.src_w));
    const real sy = std::clamp((y - t.pad_y) / t.scale, real(0), static_cast<real>(t.src_h));
    return {sx, sy};
}

Tensor letterbox_mask_to_src(const TransformRecord& t, const Tensor& canvas_mask, int src_h,
                             int src_w) {
    if (!t.valid) throw InputError("letterbox_mask_to_src: no transform recorded");
    if (canvas_mask.ndim() != 2) throw InputError("letterbox_mask_to_src expects a (h, w) mask");
    if (src_h <= 0 || src_w <= 0) throw InputError("letterbox_mask_to_src: bad source size");
    const int ch = canvas_mask.dim(0), cw = canvas_mask.dim(1);
    Tensor out({src_h, src_w});
    for (int y = 0; y < src_h; ++y) {
        const int cy = std::clamp(
            static_cast<int>(std::lround((y + 0.5) * t.scale + t.pad_y - 0.5)), 0, ch - 1);
        for (int x = 0; x < src_w; ++x) {
            const int cx = std::clamp(
                static_cast<int>(std::lround((x + 0.5) * t.scale + t.pad_x - 0.5)), 0, cw - 1);
            out[static_cast<std::int64_t>(y) * src_w + x] =
                canvas_mask[static_cast<std::int64_t>(cy) * cw + cx];
        }
    }
    return out;
}

Sample mosaic(const std::array<Sample, 4>& parts, int canvas_w, int canvas_h, Rng& rng) {
    if (canvas_w < 4 || canvas_h < 4) throw InputError("mosaic: canvas too small");
    const int cx = rng.uniform_int(canvas_w / 4, 3 * canvas_w / 4);
    const int cy = rng.uniform_int(canvas_h / 4, 3 * canvas_h / 4);
    return mosaic_at(parts, canvas_w, canvas_h, cx, cy);
}

Sample mosaic_at(const std::array<Sample, 4>& parts, int canvas_w, int canvas_h, int cx,
                 int cy) {
    for (const Sample& p : parts) check_sample(p, "mosaic");
    if (canvas_w < 4 || canvas_h < 4) throw InputError("mosaic: canvas too small");
    if (cx < 1 || cx >= canvas_w || cy < 1 || cy >= canvas_h) {
        throw InputError("mosaic: splice center outside the canvas");
    }

    Sample out;
    out.image = Tensor::full({3, canvas_h, canvas_w}, kPadGray);
    out.drivable_mask = Tensor::zeros({canvas_h, canvas_w});
    out.lane_mask = Tensor::zeros({canvas_h, canvas_w});
    out.source_id = "mosaic[";

    // Quadrant rects (x0, y0, x1, y1), order TL, TR, BL, BR.
    const std::array<std::array<int, 4>, 4> rects{{{0, 0, cx, cy},
                                                   {cx, 0, canvas_w, cy},
                                                   {0, cy, cx, canvas_h},
                                                   {cx, cy, canvas_w, canvas_h}}};
    for (int q = 0; q < 4; ++q) {
        const Sample& part = parts[static_cast<size_t>(q)];
        const int sw = part.width(), sh = part.height();
        const auto [rx0, ry0, rx1, ry1] = std::tuple{rects[static_cast<size_t>(q)][0],
                                                     rects[static_cast<size_t>(q)][1],
                                                     rects[static_cast<size_t>(q)][2],
                                                     rects[static_cast<size_t>(q)][3]};
        const int qw = rx1 - rx0, qh = ry1 - ry0;
        // Cover scale: the scaled sample fully covers its quadrant, anchored
        // at the splice center so the crop happens at the outer edges.
        const real s = std::max(static_cast<real>(qw) / sw, static_cast<real>(qh) / sh);
        const real off_x = (q == 0 || q == 2) ? rx1 - s * sw : static_cast<real>(rx0);
        const real off_y = (q == 0 || q == 1) ? ry1 - s * sh : static_cast<real>(ry0);

        for (int y = ry0; y < ry1; ++y) {
            const int sy = nearest_index(static_cast<real>(y), off_y, s, sh);
            for (int x = rx0; x < rx1; ++x) {
                const int sx = nearest_index(static_cast<real>(x), off_x, s, sw);
                for (int c = 0; c < 3; ++c) {
                    out.image[(static_cast<std::int64_t>(c) * canvas_h + y) * canvas_w + x] =
                        part.image[(static_cast<std::int64_t>(c) * sh + sy) * sw + sx];
                }
                out.drivable_mask[static_cast<std::int64_t>(y) * canvas_w + x] =
                    part.drivable_mask[static_cast<std::int64_t>(sy) * sw + sx];
                out.lane_mask[static_cast<std::int64_t>(y) * canvas_w + x] =
                    part.lane_mask[static_cast<std::int64_t>(sy) * sw + sx];
            }
        }

        for (Box b : part.boxes) {
            const real area_scaled = b.area() * s * s;
            b.x1 = std::clamp(b.x1 * s + off_x, static_cast<real>(rx0), static_cast<real>(rx1));
            b.x2 = std::clamp(b.x2 * s + off_x, static_cast<real>(rx0), static_cast<real>(rx1));
            b.y1 = std::clamp(b.y1 * s + off_y, static_cast<real>(ry0), static_cast<real>(ry1));
            b.y2 = std::clamp(b.y2 * s + off_y, static_cast<real>(ry0), static_cast<real>(ry1));
            if (area_scaled <= 0 || b.area() < 0.1 * area_scaled) continue;
            out.boxes.push_back(b);
        }

        out.source_id += part.source_id + (q < 3 ? "," : "]");
    }
    return out;
}

Sample mixup(const Sample& a, const Sample& b, real lambda) {
    check_sample(a, "mixup");
    check_sample(b, "mixup");
    if (a.width() != b.width() || a.height() != b.height()) {
        throw InputError("mixup: samples must share a spatial size");
    }
    if (lambda < 0.0 || lambda > 1.0) throw InputError("mixup: lambda outside [0, 1]");

    Sample out;
    out.image = Tensor::zeros(a.image.shape());
    for (std::int64_t i = 0; i < out.image.numel(); ++i) {
        out.image[i] = lambda * a.image[i] + (1.0 - lambda) * b.image[i];
    }
    out.drivable_mask = Tensor::zeros(a.drivable_mask.shape());
    out.lane_mask = Tensor::zeros(a.lane_mask.shape());
    for (std::int64_t i = 0; i < out.drivable_mask.numel(); ++i) {
        out.drivable_mask[i] = (a.drivable_mask[i] != 0.0 || b.drivable_mask[i] != 0.0) ? 1 : 0;
        out.lane_mask[i] = (a.lane_mask[i] != 0.0 || b.lane_mask[i] != 0.0) ? 1 : 0;
    }
    for (Box box : a.boxes) {
        box.weight *= lambda;
        out.boxes.push_back(box);
    }
    for (Box box : b.boxes) {
        box.weight *= 1.0 - lambda;
        out.boxes.push_back(box);
    }
    out.source_id = "mixup(" + a.source_id + "," + b.source_id + ")";
    return out;
}

Sample hflip(const Sample& s) {
    check_sample(s, "hflip");
    const int h = s.height(), w = s.width();
    Sample out;
    out.source_id = s.source_id;
    out.image = Tensor::zeros(s.image.shape());
    out.drivable_mask = Tensor::zeros(s.drivable_mask.shape());
    out.lane_mask = Tensor::zeros(s.lane_mask.shape());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                out.image[(static_cast<std::int64_t>(c) * h + y) * w + x] =
                    s.image[(static_cast<std::int64_t>(c) * h + y) * w + (w - 1 - x)];
            }
            out.drivable_mask[static_cast<std::int64_t>(y) * w + x] =
                s.drivable_mask[static_cast<std::int64_t>(y) * w + (w - 1 - x)];
            out.lane_mask[static_cast<std::int64_t>(y) * w + x] =
                s.lane_mask[static_cast<std::int64_t>(y) * w + (w - 1 - x)];
        }
    for (Box b : s.boxes) {
        const real x1 = b.x1, x2 = b.x2;
        b.x1 = static_cast<real>(w) - x2;
        b.x2 = static_cast<real>(w) - x1;
        out.boxes.push_back(b);
    }
    return out;
}

void hsv_jitter_inplace(Sample& s, real magnitude, Rng& rng) {
    check_sample(s, "hsv_jitter");
    if (magnitude < 0.0 || magnitude >= 1.0) throw InputError("hsv_jitter: magnitude in [0, 1)");
    if (magnitude == 0.0) return;
    const real dh = rng.uniform(-magnitude, magnitude) * 6.0;  // hue sextant shift
    const real gs = rng.uniform(1.0 - magnitude, 1.0 + magnitude);
    const real gv = rng.uniform(1.0 - magnitude, 1.0 + magnitude);

    const int h = s.height(), w = s.width();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const std::int64_t base = static_cast<std::int64_t>(y) * w + x;
            const std::int64_t plane = static_cast<std::int64_t>(h) * w;
            real r = s.image[base], g = s.image[plane + base], b = s.image[2 * plane + base];
            const real mx = std::max({r, g, b}), mn = std::min({r, g, b});
            const real delta = mx - mn;
            real hue = 0.0;
            if (delta > 0) {
                if (mx == r) hue = std::fmod((g - b) / delta + 6.0, 6.0);
                else if (mx == g) hue = (b - r) / delta + 2.0;
                else hue = (r - g) / delta + 4.0;
            }
            real sat = mx > 0 ? delta / mx : 0.0;
            real val = mx;

            hue = std::fmod(hue + dh + 6.0, 6.0);
            sat = std::clamp(sat * gs, real(0), real(1));
            val = std::clamp(val * gv, real(0), real(1));

            const real c = val * sat;
            const real xx = c * (1.0 - std::abs(std::fmod(hue, 2.0) - 1.0));
            const real m = val - c;
            real rr = 0, gg = 0, bb = 0;
            switch (static_cast<int>(hue)) {
                case 0: rr = c; gg = xx; break;
                case 1: rr = xx; gg = c; break;
                case 2: gg = c; bb = xx; break;
                case 3: gg = xx; bb = c; break;
                case 4: rr = xx; bb = c; break;
                default: rr = c; bb = xx; break;
            }
            s.image[base] = rr + m;
            s.image[plane + base] = gg + m;
            s.image[2 * plane + base] = bb + m;
        }
}

}  // namespace pdp::data
