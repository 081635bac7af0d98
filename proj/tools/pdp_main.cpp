// Panoptic driving perception CLI: train / eval / infer / bench /
// prep-lanes / gen-synth. A --config file provides the run configuration;
// individual --set overrides win over the file.
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pdp/data/dataset.hpp"
#include "pdp/data/png_io.hpp"
#include "pdp/infer/inference.hpp"
#include "pdp/model/checkpoint.hpp"
#include "pdp/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace pdp;

namespace {

void handle_sigint(int) { train::request_stop(); }

// Resolves a user path against the --workdir root (absolute paths pass
// through untouched).
std::string resolved(const std::string& workdir, const std::string& path) {
    if (path.empty()) return path;
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(workdir) / p).string();
}

RunConfig build_config(const std::string& config_path,
                       const std::vector<std::string>& overrides) {
    RunConfig cfg = config_path.empty() ? RunConfig::desk() : RunConfig::load(config_path);
    for (const std::string& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        }
        cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

int cmd_train(const std::string& workdir, const std::string& config_path,
              const std::vector<std::string>& overrides, const std::string& data_root,
              const std::string& run_dir, const std::string& val_split,
              const std::string& resume) {
    const RunConfig cfg = build_config(config_path, overrides);
    const data::DatasetManifest train_m = data::load_manifest(resolved(workdir, data_root), "train");
    data::DatasetManifest val_m;
    bool have_val = false;
    if (!val_split.empty()) {
        val_m = data::load_manifest(resolved(workdir, data_root), val_split);
        have_val = true;
    }

    train::clear_stop();
    std::signal(SIGINT, handle_sigint);
    train::Trainer trainer(cfg, train_m, resolved(workdir, run_dir));
    if (!resume.empty()) trainer.resume_from(resolved(workdir, resume));
    const std::string last = trainer.fit(have_val ? &val_m : nullptr);
    std::signal(SIGINT, SIG_DFL);

    std::printf("%s after %lld steps; last checkpoint: %s\n",
                train::stop_requested() ? "interrupted" : "finished",
                static_cast<long long>(trainer.global_step()), last.c_str());
    return 0;
}

int cmd_eval(const std::string& workdir, const std::string& weights,
             const std::string& data_root, const std::string& split,
             const std::string& out_path) {
    const Checkpoint ck = Checkpoint::load(resolved(workdir, weights));
    Network net = network_from_checkpoint(ck);
    const data::DatasetManifest m = data::load_manifest(resolved(workdir, data_root), split);
    const metrics::MetricReport rep = train::evaluate(net, m);
    std::printf("%s", rep.to_table().c_str());
    for (const std::string& n : rep.notes) std::printf("note: %s\n", n.c_str());
    if (!out_path.empty()) {
        std::ofstream out(resolved(workdir, out_path));
        if (!out) throw IoError("cannot write report to " + out_path);
        out << rep.to_json() << "\n";
        std::printf("report written to %s\n", resolved(workdir, out_path).c_str());
    }
    return 0;
}

int cmd_infer(const std::string& workdir, const std::string& weights,
              const std::string& image_path, const std::string& out_dir) {
    const Checkpoint ck = Checkpoint::load(resolved(workdir, weights));
    Network net = network_from_checkpoint(ck);
    const std::string img_path = resolved(workdir, image_path);
    const Tensor image = data::read_png_rgb(img_path);
    const infer::PerceptionResult res = infer::run_inference(net, image);

    const fs::path out_root(resolved(workdir, out_dir));
    fs::create_directories(out_root);
    const std::string stem = fs::path(img_path).stem().string();
    const std::string json_path = (out_root / (stem + ".result.json")).string();
    const std::string overlay_path = (out_root / (stem + ".overlay.png")).string();

    std::ofstream(json_path) << res.to_json() << "\n";
    data::write_png_rgb(overlay_path, infer::render_overlay(image, res));
    data::write_png_mask((out_root / (stem + ".drivable.png")).string(), res.drivable_mask);
    data::write_png_mask((out_root / (stem + ".lane.png")).string(), res.lane_mask);

    std::printf("%zu detections; preprocess %.2f ms, forward %.2f ms, postprocess %.2f ms\n",
                res.detections.size(), res.timing.preprocess_ms, res.timing.forward_ms,
                res.timing.postprocess_ms);
    std::printf("wrote %s and %s\n", json_path.c_str(), overlay_path.c_str());
    return 0;
}

int cmd_bench(const std::string& workdir, const std::string& weights,
              const std::string& config_path, const std::vector<std::string>& overrides,
              int iterations, int warmup, std::uint64_t seed) {
    Network net = [&] {
        if (!weights.empty()) {
            return network_from_checkpoint(Checkpoint::load(resolved(workdir, weights)));
        }
        return Network(build_config(config_path, overrides).model, seed);
    }();
    const ModelConfig& mc = net.config();
    const infer::BenchReport rep = infer::benchmark(net, mc.input_w, mc.input_h, iterations,
                                                    warmup);
    std::printf("%s", rep.to_text().c_str());
    return 0;
}

int cmd_prep_lanes(const std::string& workdir, const std::string& data_root,
                   const std::string& split, int width) {
    const std::string root = resolved(workdir, data_root);
    const data::DatasetManifest m = data::load_manifest(root, split);
    const int w = width > 0 ? width : m.lane_mask_width;
    int done = 0;
    for (const data::ManifestEntry& e : m.entries) {
        const Tensor img = data::read_png_rgb(e.image_path);
        data::prep_lane_mask(e, w, img.dim(1), img.dim(2));
        ++done;
    }
    std::printf("rasterized %d lane masks at %d px for %s/%s\n", done, w, root.c_str(),
                split.c_str());
    return 0;
}

int cmd_gen_synth(const std::string& workdir, const std::string& data_root,
                  const std::string& split, int count, int img_w, int img_h, int min_objects,
                  int max_objects, std::uint64_t seed, bool print_anchors) {
    data::SynthConfig sc;
    sc.count = count;
    sc.img_w = img_w;
    sc.img_h = img_h;
    sc.min_objects = min_objects;
    sc.max_objects = max_objects;
    sc.seed = seed;
    const data::DatasetManifest m =
        data::synth_generate(sc, resolved(workdir, data_root), split);
    std::printf("generated %zu images under %s (split %s)\n", m.entries.size(),
                resolved(workdir, data_root).c_str(), split.c_str());
    if (print_anchors) {
        const auto sizes = data::collect_box_sizes(m);
        const auto anchors = data::kmeans_anchors(sizes, 9);
        std::printf("anchors (w, h), area ascending, from %zu boxes:\n", sizes.size());
        for (const auto& a : anchors) std::printf("  {%.0f, %.0f}\n", a[0], a[1]);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Panoptic driving perception: joint detection, drivable area, and lane "
                 "segmentation"};
    app.require_subcommand(1);
    std::string workdir = ".";
    app.add_option("--workdir", workdir, "Root for relative paths")->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    std::string t_config, t_data, t_run = "runs/default", t_val, t_resume;
    std::vector<std::string> t_set;
    train_cmd->add_option("--config", t_config, "Run-config file (defaults to the desk config)");
    train_cmd->add_option("--set", t_set, "Override a config key, e.g. train.batch_size=8");
    train_cmd->add_option("--data", t_data, "Dataset root")->required();
    train_cmd->add_option("--run-dir", t_run, "Output directory")->capture_default_str();
    train_cmd->add_option("--val-split", t_val, "Evaluate this split every eval_every epochs");
    train_cmd->add_option("--resume", t_resume, "Checkpoint to resume from");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    std::string e_weights, e_data, e_split = "val", e_out;
    eval_cmd->add_option("--weights", e_weights, "Checkpoint file")->required();
    eval_cmd->add_option("--data", e_data, "Dataset root")->required();
    eval_cmd->add_option("--split", e_split, "Split name")->capture_default_str();
    eval_cmd->add_option("--out", e_out, "Write the JSON report here");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "Run one image and write overlays");
    std::string i_weights, i_image, i_out = ".";
    infer_cmd->add_option("--weights", i_weights, "Checkpoint file")->required();
    infer_cmd->add_option("--image", i_image, "Input PNG")->required();
    infer_cmd->add_option("--out", i_out, "Output directory")->capture_default_str();

    // bench
    auto* bench_cmd = app.add_subcommand("bench", "Forward-pass speed and parameter count");
    std::string b_weights, b_config;
    std::vector<std::string> b_set;
    int b_iters = 50, b_warmup = 5;
    std::uint64_t b_seed = 1;
    bench_cmd->add_option("--weights", b_weights, "Checkpoint (otherwise a fresh network)");
    bench_cmd->add_option("--config", b_config, "Run-config file for the fresh network");
    bench_cmd->add_option("--set", b_set, "Config override for the fresh network");
    bench_cmd->add_option("--iterations", b_iters, "Timed forward passes")
        ->capture_default_str();
    bench_cmd->add_option("--warmup", b_warmup, "Discarded warmup passes")
        ->capture_default_str();
    bench_cmd->add_option("--seed", b_seed, "Init seed for the fresh network")
        ->capture_default_str();

    // prep-lanes
    auto* prep_cmd = app.add_subcommand("prep-lanes", "Cache lane masks for a split");
    std::string p_data, p_split;
    int p_width = 0;
    prep_cmd->add_option("--root", p_data, "Dataset root")->required();
    prep_cmd->add_option("--split", p_split, "Split name")->required();
    prep_cmd->add_option("--width", p_width,
                         "Band width in px (default: split policy, 8 train / 2 otherwise)");

    // gen-synth
    auto* gen_cmd = app.add_subcommand("gen-synth", "Generate a synthetic dataset");
    std::string g_data, g_split = "train";
    int g_count = 16, g_w = 256, g_h = 160, g_min = 1, g_max = 3;
    std::uint64_t g_seed = 1;
    bool g_anchors = false;
    gen_cmd->add_option("--root", g_data, "Dataset root")->required();
    gen_cmd->add_option("--split", g_split, "Split name")->capture_default_str();
    gen_cmd->add_option("--count", g_count, "Number of images")->capture_default_str();
    gen_cmd->add_option("--width", g_w, "Image width")->capture_default_str();
    gen_cmd->add_option("--height", g_h, "Image height")->capture_default_str();
    gen_cmd->add_option("--min-objects", g_min, "Min vehicles per image")->capture_default_str();
    gen_cmd->add_option("--max-objects", g_max, "Max vehicles per image")->capture_default_str();
    gen_cmd->add_option("--seed", g_seed, "Generator seed")->capture_default_str();
    gen_cmd->add_flag("--print-anchors", g_anchors,
                      "Print k-means anchors for the generated boxes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help/version exit cleanly; bad usage is 2
    }

    try {
        if (*train_cmd) return cmd_train(workdir, t_config, t_set, t_data, t_run, t_val, t_resume);
        if (*eval_cmd) return cmd_eval(workdir, e_weights, e_data, e_split, e_out);
        if (*infer_cmd) return cmd_infer(workdir, i_weights, i_image, i_out);
        if (*bench_cmd)
            return cmd_bench(workdir, b_weights, b_config, b_set, b_iters, b_warmup, b_seed);
        if (*prep_cmd) return cmd_prep_lanes(workdir, p_data, p_split, p_width);
        if (*gen_cmd)
            return cmd_gen_synth(workdir, g_data, g_split, g_count, g_w, g_h, g_min, g_max,
                                 g_seed, g_anchors);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
