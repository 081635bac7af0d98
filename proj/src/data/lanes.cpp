#include <algorithm>
#include <cmath>
#include <cstdio>

#include "pdp/data/lanes.hpp"

namespace pdp::data {
namespace {

real dist2(const std::array<real, 2>& a, const std::array<real, 2>& b) {
    const real dx = a[0] - b[0], dy = a[1] - b[1];
    return dx * dx + dy * dy;
}

// Squared distance from point p to segment [a, b].
real point_segment_dist2(const std::array<real, 2>& p, const std::array<real, 2>& a,
                         const std::array<real, 2>& b) {
    const real ab2 = dist2(a, b);
    if (ab2 == 0.0) return dist2(p, a);
    real t = ((p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1])) / ab2;
    t = std::clamp(t, real(0), real(1));
    const std::array<real, 2> q{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])};
    return dist2(p, q);
}

}  // namespace

Polyline resample_polyline(const Polyline& p, int k) {
    if (p.pts.size() < 2) throw InputError("resample_polyline: need at least 2 points");
    if (k < 2) throw InputError("resample_polyline: need at least 2 output points");

    std::vector<real> cum{0.0};
    cum.reserve(p.pts.size());
    for (size_t i = 1; i < p.pts.size(); ++i) {
        cum.push_back(cum.back() + std::sqrt(dist2(p.pts[i - 1], p.pts[i])));
    }
    const real total = cum.back();

    Polyline out;
    out.pts.reserve(static_cast<size_t>(k));
    if (total == 0.0) {
        out.pts.assign(static_cast<size_t>(k), p.pts.front());
        return out;
    }
    size_t seg = 0;
    for (int i = 0; i < k; ++i) {
        const real target = total * static_cast<real>(i) / static_cast<real>(k - 1);
        while (seg + 2 < cum.size() && cum[seg + 1] < target) ++seg;
        const real seg_len = cum[seg + 1] - cum[seg];
        const real t = seg_len > 0 ? (target - cum[seg]) / seg_len : 0.0;
        const std::array<real, 2>& a = p.pts[seg];
        const std::array<real, 2>& b = p.pts[seg + 1];
        out.pts.push_back({a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])});
    }
    return out;
}

Polyline lane_centerline(const LaneAnnotation& ann) {
    if (ann.left.pts.size() < 2 || ann.right.pts.size() < 2) {
        throw InputError("lane annotation: each boundary line needs at least 2 points");
    }
    const int k = std::max({static_cast<int>(ann.left.pts.size()),
                            static_cast<int>(ann.right.pts.size()), 16});
    const Polyline left = resample_polyline(ann.left, k);
    const Polyline right = resample_polyline(ann.right, k);
    Polyline center;
    center.pts.reserve(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        const size_t s = static_cast<size_t>(i);
        center.pts.push_back({(left.pts[s][0] + right.pts[s][0]) / 2,
                              (left.pts[s][1] + right.pts[s][1]) / 2});
    }
    return center;
}

Tensor rasterize_lane(const Polyline& center, int width_px, int h, int w) {
    if (center.pts.empty()) throw InputError("rasterize_lane: empty polyline");
    if (width_px < 1) throw InputError("rasterize_lane: width must be >= 1");
    if (h < 1 || w < 1) throw InputError("rasterize_lane: empty canvas");

    const real r = static_cast<real>(width_px) / 2.0;
    const real r2 = r * r;
    Tensor mask({h, w});

    const auto mark_near = [&](const std::array<real, 2>& a, const std::array<real, 2>& b) {
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a[0], b[0]) - r)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(a[0], b[0]) + r)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a[1], b[1]) - r)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(a[1], b[1]) + r)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                const std::array<real, 2> p{static_cast<real>(x), static_cast<real>(y)};
                if (point_segment_dist2(p, a, b) <= r2) {
                    mask[static_cast<std::int64_t>(y) * w + x] = 1.0;
                }
            }
    };

    if (center.pts.size() == 1) {
        mark_near(center.pts[0], center.pts[0]);
    } else {
        for (size_t i = 1; i < center.pts.size(); ++i) {
            mark_near(center.pts[i - 1], center.pts[i]);
        }
    }
    if (mask.sum() == 0.0) {
        std::fprintf(stderr, "warning: lane polyline misses the %dx%d canvas entirely\n", w, h);
    }
    return mask;
}

}  // namespace pdp::data
