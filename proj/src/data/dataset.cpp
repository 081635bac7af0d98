#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numbers>

#include "pdp/core/rng.hpp"
#include "pdp/data/dataset.hpp"
#include "pdp/data/lanes.hpp"
#include "pdp/data/png_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace pdp::data {
namespace {

json parse_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label file: " + path);
    try {
        return json::parse(in);
    } catch (const std::exception& e) {
        throw IoError("malformed JSON in " + path + ": " + e.what());
    }
}

std::string lane_mask_path_for(const std::string& lanes_path) {
    // .../<id>.lanes.json -> .../<id>.lane.png
    const std::string suffix = ".lanes.json";
    if (lanes_path.size() < suffix.size() ||
        lanes_path.compare(lanes_path.size() - suffix.size(), suffix.size(), suffix) != 0) {
        throw InputError("lane annotation path must end in .lanes.json: " + lanes_path);
    }
    return lanes_path.substr(0, lanes_path.size() - suffix.size()) + ".lane.png";
}

Tensor lane_mask_from_annotations(const std::vector<LaneAnnotation>& lanes, int width_px,
                                  int h, int w) {
    Tensor mask({h, w});
    for (const LaneAnnotation& ann : lanes) {
        const Tensor one = rasterize_lane(lane_centerline(ann), width_px, h, w);
        for (std::int64_t i = 0; i < mask.numel(); ++i) {
            if (one[i] != 0.0) mask[i] = 1.0;
        }
    }
    return mask;
}

}  // namespace

int lane_width_for_split(const std::string& split) {
    if (split == "train") return 8;
    if (split == "val" || split == "test") return 2;
    throw InputError("unknown dataset split: " + split);
}

DatasetManifest load_manifest(const std::string& root, const std::string& split) {
    DatasetManifest m;
    m.root = root;
    m.split = split;
    m.lane_mask_width = lane_width_for_split(split);

    const fs::path img_dir = fs::path(root) / "images" / split;
    const fs::path lab_dir = fs::path(root) / "labels" / split;
    if (!fs::is_directory(img_dir)) throw IoError("missing directory: " + img_dir.string());
    if (!fs::is_directory(lab_dir)) throw IoError("missing directory: " + lab_dir.string());

    std::vector<fs::path> images;
    for (const fs::directory_entry& e : fs::directory_iterator(img_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") images.push_back(e.path());
    }
    std::sort(images.begin(), images.end());
    if (images.empty()) {
        std::fprintf(stderr, "warning: no images found under %s\n", img_dir.string().c_str());
    }

    for (const fs::path& img : images) {
        const std::string id = img.stem().string();
        ManifestEntry entry;
        entry.id = id;
        entry.image_path = img.string();
        entry.boxes_path = (lab_dir / (id + ".boxes.json")).string();
        entry.drivable_path = (lab_dir / (id + ".drivable.png")).string();
        entry.lanes_path = (lab_dir / (id + ".lanes.json")).string();
        const fs::path cached = lab_dir / (id + ".lane.png");
        if (fs::exists(cached)) entry.lane_mask_path = cached.string();

        try {
            load_boxes(entry.boxes_path);
            load_lanes(entry.lanes_path);
            if (!fs::exists(entry.drivable_path)) {
                throw IoError("missing drivable mask: " + entry.drivable_path);
            }
        } catch (const std::exception& e) {
            m.errors.push_back(e.what());
            std::fprintf(stderr, "warning: skipping %s: %s\n", id.c_str(), e.what());
            continue;
        }
        m.entries.push_back(std::move(entry));
    }
    return m;
}

std::vector<Box> load_boxes(const std::string& path) {
    const json doc = parse_json_file(path);
    if (!doc.is_object() || !doc.contains("objects") || !doc["objects"].is_array()) {
        throw IoError("expected {objects: [...]} in " + path);
    }
    std::vector<Box> boxes;
    for (const json& obj : doc["objects"]) {
        if (!obj.contains("class") || !obj.contains("box") || !obj["box"].is_array() ||
            obj["box"].size() != 4) {
            throw IoError("object needs class + 4-number box in " + path);
        }
        Box b;
        b.class_id = obj["class"].get<int>();
        if (b.class_id < 0) throw IoError("negative class id in " + path);
        b.x1 = obj["box"][0].get<real>();
        b.y1 = obj["box"][1].get<real>();
        b.x2 = obj["box"][2].get<real>();
        b.y2 = obj["box"][3].get<real>();
        if (obj.contains("weight")) b.weight = obj["weight"].get<real>();
        boxes.push_back(b);
    }
    return boxes;
}

std::vector<LaneAnnotation> load_lanes(const std::string& path) {
    const json doc = parse_json_file(path);
    if (!doc.is_object() || !doc.contains("lanes") || !doc["lanes"].is_array()) {
        throw IoError("expected {lanes: [...]} in " + path);
    }
    const auto read_line = [&](const json& arr) {
        Polyline line;
        if (!arr.is_array() || arr.size() < 2) {
            throw IoError("lane boundary needs at least 2 points in " + path);
        }
        for (const json& pt : arr) {
            if (!pt.is_array() || pt.size() != 2) {
                throw IoError("lane point must be [x, y] in " + path);
            }
            line.pts.push_back({pt[0].get<real>(), pt[1].get<real>()});
        }
        return line;
    };
    std::vector<LaneAnnotation> lanes;
    for (const json& lane : doc["lanes"]) {
        if (!lane.contains("left") || !lane.contains("right")) {
            throw IoError("lane needs left/right boundary lines in " + path);
        }
        LaneAnnotation ann;
        ann.left = read_line(lane["left"]);
        ann.right = read_line(lane["right"]);
        lanes.push_back(std::move(ann));
    }
    return lanes;
}

Sample load_sample(const ManifestEntry& e, int lane_mask_width) {
    Sample s;
    s.source_id = e.id;
    s.image = read_png_rgb(e.image_path);
    const int h = s.image.dim(1), w = s.image.dim(2);
    s.boxes = load_boxes(e.boxes_path);
    for (Box& b : s.boxes) {
        b.x1 = std::clamp(b.x1, real(0), static_cast<real>(w));
        b.x2 = std::clamp(b.x2, real(0), static_cast<real>(w));
        b.y1 = std::clamp(b.y1, real(0), static_cast<real>(h));
        b.y2 = std::clamp(b.y2, real(0), static_cast<real>(h));
    }
    s.drivable_mask = read_png_mask(e.drivable_path);
    if (s.drivable_mask.dim(0) != h || s.drivable_mask.dim(1) != w) {
        throw InputError("drivable mask size mismatch for sample " + e.id);
    }
    if (!e.lane_mask_path.empty() && fs::exists(e.lane_mask_path)) {
        s.lane_mask = read_png_mask(e.lane_mask_path);
        if (s.lane_mask.dim(0) != h || s.lane_mask.dim(1) != w) {
            throw InputError("lane mask size mismatch for sample " + e.id);
        }
    } else {
        s.lane_mask = lane_mask_from_annotations(load_lanes(e.lanes_path), lane_mask_width, h, w);
    }
    return s;
}

std::string prep_lane_mask(const ManifestEntry& e, int lane_mask_width, int img_h, int img_w) {
    const Tensor mask =
        lane_mask_from_annotations(load_lanes(e.lanes_path), lane_mask_width, img_h, img_w);
    const std::string out = lane_mask_path_for(e.lanes_path);
    write_png_mask(out, mask);
    return out;
}

DatasetManifest synth_generate(const SynthConfig& cfg, const std::string& root,
                               const std::string& split) {
    if (cfg.count < 1 || cfg.img_w < 64 || cfg.img_h < 64) {
        throw ConfigError("synth config: need count >= 1 and images >= 64x64");
    }
    if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects) {
        throw ConfigError("synth config: object count range invalid");
    }
    const int W = cfg.img_w, H = cfg.img_h;
    const int lane_width = lane_width_for_split(split);

    const fs::path img_dir = fs::path(root) / "images" / split;
    const fs::path lab_dir = fs::path(root) / "labels" / split;
    fs::create_directories(img_dir);
    fs::create_directories(lab_dir);

    Rng rng(cfg.seed);
    DatasetManifest m;
    m.root = root;
    m.split = split;
    m.lane_mask_width = lane_width;

    for (int i = 0; i < cfg.count; ++i) {
        char id_buf[16];
        std::snprintf(id_buf, sizeof id_buf, "%06d", i);
        const std::string id = id_buf;

        Tensor image({3, H, W});
        Tensor drivable({H, W});
        Tensor lane_mask({H, W});
        const std::int64_t plane = static_cast<std::int64_t>(H) * W;

        const auto put_px = [&](int y, int x, real r, real g, real b) {
            const std::int64_t base = static_cast<std::int64_t>(y) * W + x;
            image[base] = r;
            image[plane + base] = g;
            image[2 * plane + base] = b;
        };

        // Sky and ground.
        const real sky_r = rng.uniform(0.35, 0.55);
        const real sky_g = rng.uniform(0.55, 0.70);
        const real sky_b = rng.uniform(0.75, 0.90);
        const real ground = rng.uniform(0.20, 0.30);
        const int horizon = static_cast<int>(H * rng.uniform(0.30, 0.45));
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (y < horizon) put_px(y, x, sky_r, sky_g, sky_b);
                else put_px(y, x, ground, ground, ground + 0.02);
            }

        // Road trapezoid: narrow at the horizon, wide at the bottom.
        const real bot_l = W * rng.uniform(0.00, 0.15);
        const real bot_r = W * (1.0 - rng.uniform(0.00, 0.15));
        const real top_c = W * rng.uniform(0.35, 0.65);
        const real top_w = W * rng.uniform(0.06, 0.18);
        const real top_l = top_c - top_w / 2, top_r = top_c + top_w / 2;
        const int road_rows = std::max(1, H - 1 - horizon);
        for (int y = horizon; y < H; ++y) {
            const real t = static_cast<real>(y - horizon) / road_rows;
            const real l = top_l + (bot_l - top_l) * t;
            const real r = top_r + (bot_r - top_r) * t;
            const real shade = 0.32 + 0.06 * t;
            for (int x = std::max(0, static_cast<int>(std::ceil(l)));
                 x <= std::min(W - 1, static_cast<int>(std::floor(r))); ++x) {
                drivable[static_cast<std::int64_t>(y) * W + x] = 1.0;
                put_px(y, x, shade, shade, shade);
            }
        }

        // Lane markings in the raw two-line form; the internal centerline is
        // the label oracle.
        const int n_lanes = rng.uniform_int(1, 3);
        std::vector<LaneAnnotation> lanes;
        for (int ln = 0; ln < n_lanes; ++ln) {
            const real u = rng.uniform(0.15, 0.85);  // position across the road
            const real bend = rng.uniform(-8.0, 8.0);
            Polyline center;
            const int segs = 12;
            for (int j = 0; j < segs; ++j) {
                const real t = static_cast<real>(j) / (segs - 1);
                const real y = horizon + t * road_rows;
                const real l = top_l + (bot_l - top_l) * t;
                const real r = top_r + (bot_r - top_r) * t;
                const real x = l + u * (r - l) + bend * std::sin(t * std::numbers::pi);
                center.pts.push_back({x, y});
            }
            LaneAnnotation ann;
            for (const std::array<real, 2>& p : center.pts) {
                ann.left.pts.push_back({p[0] - 2.0, p[1]});
                ann.right.pts.push_back({p[0] + 2.0, p[1]});
            }
            lanes.push_back(ann);

            // Paint the marking and accumulate the truth mask.
            const Tensor paint = rasterize_lane(center, 3, H, W);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    if (paint[static_cast<std::int64_t>(y) * W + x] != 0.0) {
                        put_px(y, x, 0.92, 0.92, 0.88);
                    }
                }
            const Tensor truth = rasterize_lane(center, lane_width, H, W);
            for (std::int64_t px = 0; px < truth.numel(); ++px) {
                if (truth[px] != 0.0) lane_mask[px] = 1.0;
            }
        }

        // Vehicles: axis-aligned rectangles with exact boxes, painted last so
        // they occlude road and lane pixels (labels keep the occluded lanes).
        const int n_obj = rng.uniform_int(cfg.min_objects, cfg.max_objects);
        std::vector<Box> boxes;
        for (int ob = 0; ob < n_obj; ++ob) {
            const int bw = rng.uniform_int(16, std::min(100, W / 2));
            int bh = std::max(10, static_cast<int>(bw * rng.uniform(0.55, 0.90)));
            const int x1 = rng.uniform_int(0, W - bw - 1);
            const int y_lo = horizon;
            const int y_hi = std::max(y_lo, H - bh - 1);
            const int y1 = rng.uniform_int(y_lo, y_hi);
            bh = std::min(bh, H - y1);
            const real cr = rng.uniform(0.10, 0.85);
            const real cg = rng.uniform(0.10, 0.85);
            const real cb = rng.uniform(0.10, 0.85);
            for (int y = y1; y < y1 + bh; ++y)
                for (int x = x1; x < x1 + bw; ++x) put_px(y, x, cr, cg, cb);
            Box b;
            b.class_id = 0;
            b.x1 = x1;
            b.y1 = y1;
            b.x2 = x1 + bw;
            b.y2 = y1 + bh;
            boxes.push_back(b);
        }

        // Write everything.
        ManifestEntry entry;
        entry.id = id;
        entry.image_path = (img_dir / (id + ".png")).string();
        entry.boxes_path = (lab_dir / (id + ".boxes.json")).string();
        entry.drivable_path = (lab_dir / (id + ".drivable.png")).string();
        entry.lanes_path = (lab_dir / (id + ".lanes.json")).string();
        entry.lane_mask_path = (lab_dir / (id + ".lane.png")).string();

        write_png_rgb(entry.image_path, image);
        write_png_mask(entry.drivable_path, drivable);
        write_png_mask(entry.lane_mask_path, lane_mask);

        json boxes_doc;
        boxes_doc["objects"] = json::array();
        for (const Box& b : boxes) {
            boxes_doc["objects"].push_back({{"class", b.class_id}, {"box", {b.x1, b.y1, b.x2, b.y2}}});
        }
        json lanes_doc;
        lanes_doc["lanes"] = json::array();
        for (const LaneAnnotation& ann : lanes) {
            json left = json::array(), right = json::array();
            for (const std::array<real, 2>& p : ann.left.pts) left.push_back({p[0], p[1]});
            for (const std::array<real, 2>& p : ann.right.pts) right.push_back({p[0], p[1]});
            lanes_doc["lanes"].push_back({{"left", left}, {"right", right}});
        }
        std::ofstream(entry.boxes_path) << boxes_doc.dump(2) << "\n";
        std::ofstream(entry.lanes_path) << lanes_doc.dump(2) << "\n";

        m.entries.push_back(std::move(entry));
    }
    return m;
}

std::vector<std::array<real, 2>> kmeans_anchors(const std::vector<std::array<real, 2>>& wh,
                                                int k) {
    if (k < 1) throw InputError("kmeans_anchors: k must be >= 1");
    if (static_cast<int>(wh.size()) < k) {
        throw InputError("kmeans_anchors: fewer boxes than clusters");
    }
    const auto area_less = [](const std::array<real, 2>& a, const std::array<real, 2>& b) {
        return a[0] * a[1] < b[0] * b[1];
    };

    // Deterministic quantile seeding over the area-sorted sizes.
    std::vector<std::array<real, 2>> sorted = wh;
    std::sort(sorted.begin(), sorted.end(), area_less);
    std::vector<std::array<real, 2>> centers;
    for (int c = 0; c < k; ++c) {
        const size_t idx = static_cast<size_t>((c + 0.5) * static_cast<real>(sorted.size()) / k);
        centers.push_back(sorted[std::min(idx, sorted.size() - 1)]);
    }

    std::vector<int> assign(wh.size(), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < wh.size(); ++i) {
            int best = 0;
            real best_d = -1;
            for (int c = 0; c < k; ++c) {
                const real dw = wh[i][0] - centers[static_cast<size_t>(c)][0];
                const real dh = wh[i][1] - centers[static_cast<size_t>(c)][1];
                const real d = dw * dw + dh * dh;
                if (best_d < 0 || d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        if (!changed && iter > 0) break;

        std::vector<std::array<real, 2>> sums(static_cast<size_t>(k), {0, 0});
        std::vector<int> counts(static_cast<size_t>(k), 0);
        for (size_t i = 0; i < wh.size(); ++i) {
            sums[static_cast<size_t>(assign[i])][0] += wh[i][0];
            sums[static_cast<size_t>(assign[i])][1] += wh[i][1];
            counts[static_cast<size_t>(assign[i])]++;
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<size_t>(c)] > 0) {
                centers[static_cast<size_t>(c)] = {
                    sums[static_cast<size_t>(c)][0] / counts[static_cast<size_t>(c)],
                    sums[static_cast<size_t>(c)][1] / counts[static_cast<size_t>(c)]};
            }
        }
    }
    std::sort(centers.begin(), centers.end(), area_less);
    return centers;
}

std::vector<std::array<real, 2>> collect_box_sizes(const DatasetManifest& m) {
    std::vector<std::array<real, 2>> wh;
    for (const ManifestEntry& e : m.entries) {
        for (const Box& b : load_boxes(e.boxes_path)) {
            if (b.w() > 0 && b.h() > 0) wh.push_back({b.w(), b.h()});
        }
    }
    return wh;
}

}  // namespace pdp::data
