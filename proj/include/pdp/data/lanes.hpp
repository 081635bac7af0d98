#pragma once

#include "pdp/data/types.hpp"

namespace pdp::data {

// Resamples a polyline to k points spaced uniformly by arclength. k >= 2;
// a zero-length polyline collapses to k copies of its first point.
Polyline resample_polyline(const Polyline& p, int k);

// Midline of the two boundary lines: both are resampled to
// K = max(vertex counts, 16) arclength-uniform points and paired pointwise.
Polyline lane_centerline(const LaneAnnotation& ann);

// Binary (h, w) mask: pixel (x, y) is set when its distance to the polyline
// is <= width_px / 2. A polyline that misses the canvas entirely yields an
// empty mask and a warning.
Tensor rasterize_lane(const Polyline& center, int width_px, int h, int w);

}  // namespace pdp::data
