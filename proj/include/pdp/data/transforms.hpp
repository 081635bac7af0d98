#pragma once

#include <array>

#include "pdp/core/rng.hpp"
#include "pdp/data/types.hpp"

namespace pdp::data {

// Aspect-preserving resize onto a (out_w, out_h) canvas with symmetric gray
// padding. Boxes and both masks get the identical affine map; the map is
// recorded in the result's transform for inverse mapping at evaluation.
Sample resize_letterbox(const Sample& s, int out_w, int out_h);

// Maps a point in letterboxed coordinates back to source coordinates.
std::array<real, 2> letterbox_to_src(const TransformRecord& t, real x, real y);

// Nearest-neighbor inverse letterbox: resamples a canvas-sized (h, w) mask
// back to the recorded source resolution.
Tensor letterbox_mask_to_src(const TransformRecord& t, const Tensor& canvas_mask, int src_h,
                             int src_w);

// Four samples spliced into quadrants around a random center. Each sample is
// scaled to cover its quadrant; boxes are clipped to the quadrant and dropped
// when less than 10% of their area survives.
Sample mosaic(const std::array<Sample, 4>& parts, int canvas_w, int canvas_h, Rng& rng);

// Same with an explicit splice center (must lie strictly inside the canvas).
Sample mosaic_at(const std::array<Sample, 4>& parts, int canvas_w, int canvas_h, int cx, int cy);

// Pixelwise blend lambda*a + (1-lambda)*b. Boxes are the union with the blend
// factor recorded as the box weight; masks are the logical OR.
Sample mixup(const Sample& a, const Sample& b, real lambda);

// Horizontal mirror of image, boxes, and masks.
Sample hflip(const Sample& s);

// Random hue shift and saturation/value gains of at most `magnitude`
// (relative). Labels are untouched.
void hsv_jitter_inplace(Sample& s, real magnitude, Rng& rng);

}  // namespace pdp::data
