#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pdp/data/types.hpp"

namespace pdp::data {

// One dataset record; the cached lane-mask path may be empty, in which case
// the mask is rasterized from the two-line annotations on load.
struct ManifestEntry {
    std::string id;
    std::string image_path;
    std::string boxes_path;
    std::string drivable_path;
    std::string lanes_path;
    std::string lane_mask_path;
};

struct DatasetManifest {
    std::string root;
    std::string split;          // train / val / test
    int lane_mask_width = 8;    // 8 for train, 2 otherwise
    std::vector<ManifestEntry> entries;
    std::vector<std::string> errors;  // per-file problems, entry skipped
};

// Lane mask width policy: thick training bands, thin test bands.
int lane_width_for_split(const std::string& split);

// Scans root/{images,labels}/<split>, validating that labels exist and parse.
// Broken entries land in `errors` (and on stderr) instead of aborting.
DatasetManifest load_manifest(const std::string& root, const std::string& split);

// Label-file readers ({objects:[{class, box}]} / {lanes:[{left, right}]}).
std::vector<Box> load_boxes(const std::string& path);
std::vector<LaneAnnotation> load_lanes(const std::string& path);

// Loads one record into memory; lane mask from the cached PNG when present,
// otherwise rasterized at `lane_mask_width`.
Sample load_sample(const ManifestEntry& e, int lane_mask_width);

// Writes the cached lane-mask PNG for an entry (centerline + rasterize) and
// returns its path.
std::string prep_lane_mask(const ManifestEntry& e, int lane_mask_width, int img_h, int img_w);

// Synthetic driving scenes: colored vehicle rectangles on a trapezoid road,
// 1-3 lane markings stored in the raw two-line form.
struct SynthConfig {
    int count = 16;
    int img_w = 256;
    int img_h = 160;
    int min_objects = 1;
    int max_objects = 3;
    std::uint64_t seed = 1;
};

DatasetManifest synth_generate(const SynthConfig& cfg, const std::string& root,
                               const std::string& split);

// Lloyd k-means on (w, h) box sizes with deterministic quantile seeding;
// result sorted by area ascending.
std::vector<std::array<real, 2>> kmeans_anchors(const std::vector<std::array<real, 2>>& wh,
                                                int k);

// All box sizes of a manifest, for anchor estimation.
std::vector<std::array<real, 2>> collect_box_sizes(const DatasetManifest& m);

}  // namespace pdp::data
