#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>

#include "pdp/data/transforms.hpp"
#include "pdp/train/schedule.hpp"
#include "pdp/train/trainer.hpp"

namespace fs = std::filesystem;

namespace pdp::train {
namespace {

std::atomic<bool> g_stop{false};

RunConfig validated(RunConfig cfg) {
    cfg.validate();
    return cfg;
}

void check_finite(const LossBreakdown& b, std::int64_t step) {
    const std::pair<const char*, real> parts[] = {
        {"class", b.class_loss},       {"obj", b.obj_loss},   {"box", b.box_loss},
        {"drivable", b.drivable_loss}, {"lane", b.lane_loss}, {"total", b.total}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) {
            throw InputError("non-finite " + std::string(name) + " loss at step " +
                             std::to_string(step) + "; step aborted");
        }
    }
}

}  // namespace

void request_stop() { g_stop = true; }
void clear_stop() { g_stop = false; }
bool stop_requested() { return g_stop; }

metrics::MetricReport evaluate(Network& net, const data::DatasetManifest& manifest) {
    const bool was_training = net.training();
    net.set_training(false);
    if (manifest.entries.empty()) {
        std::fprintf(stderr, "warning: evaluating an empty %s split\n", manifest.split.c_str());
    }
    const ModelConfig& mc = net.config();
    const AnchorSet anchors = AnchorSet::from_config(mc);
    metrics::MetricAccumulator acc;
    for (const data::ManifestEntry& e : manifest.entries) {
        const data::Sample src = data::load_sample(e, manifest.lane_mask_width);
        const data::Sample canvas = data::resize_letterbox(src, mc.input_w, mc.input_h);
        Tensor batch({1, 3, mc.input_h, mc.input_w});
        for (std::int64_t k = 0; k < canvas.image.numel(); ++k) batch[k] = canvas.image[k];

        Network::Output out = net.forward(batch);
        std::vector<Tensor> raw;
        raw.reserve(out.det_raw.size());
        for (const ag::Var& v : out.det_raw) raw.push_back(v->value);
        std::vector<Detection> dets =
            nms(decode_boxes(raw, 0, anchors, mc.num_classes, metrics::kEvalConfThreshold,
                             mc.input_w, mc.input_h),
                kNmsIouThreshold);
        for (Detection& d : dets) {
            const std::array<real, 2> p1 = data::letterbox_to_src(canvas.transform, d.x1, d.y1);
            const std::array<real, 2> p2 = data::letterbox_to_src(canvas.transform, d.x2, d.y2);
            d.x1 = p1[0];
            d.y1 = p1[1];
            d.x2 = p2[0];
            d.y2 = p2[1];
        }
        const Tensor drv = data::letterbox_mask_to_src(
            canvas.transform, argmax_mask(out.drivable_logits->value, 0), src.height(),
            src.width());
        const Tensor lane = data::letterbox_mask_to_src(
            canvas.transform, argmax_mask(out.lane_logits->value, 0), src.height(), src.width());

        acc.add_detections(e.id, dets, src.boxes);
        acc.add_drivable(e.id, drv, src.drivable_mask);
        acc.add_lane(e.id, lane, src.lane_mask);
    }
    net.set_training(was_training);
    metrics::MetricReport report = acc.report();
    report.param_count = net.param_count();
    return report;
}

Trainer::Trainer(const RunConfig& cfg, data::DatasetManifest train_manifest, std::string run_dir)
    : cfg_(validated(cfg)),
      manifest_(std::move(train_manifest)),
      run_dir_(std::move(run_dir)),
      net_(std::make_unique<Network>(cfg_.model, cfg_.train.seed)),
      anchors_(AnchorSet::from_config(cfg_.model)),
      opt_(net_->registry(), cfg_.train.momentum, cfg_.train.weight_decay),
      rng_(Rng(cfg_.train.seed).fork(1)),
      epoch_rng_(Rng(cfg_.train.seed).fork(2)) {
    if (manifest_.entries.empty()) throw InputError("training manifest is empty");
    fs::create_directories(run_dir_);
    start_epoch(0);
}

int Trainer::steps_per_epoch() const {
    const int n = static_cast<int>(manifest_.entries.size());
    return std::max(1, n / cfg_.train.batch_size);
}

void Trainer::shuffle_perm() {
    // Fisher-Yates through our own RNG: identical order on every platform.
    for (size_t i = perm_.size(); i > 1; --i) {
        const size_t j =
            static_cast<size_t>(epoch_rng_.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(perm_[i - 1], perm_[j]);
    }
    cursor_ = 0;
}

void Trainer::start_epoch(int epoch) {
    // The order stream is re-derived from (seed, epoch), so a resumed run
    // rebuilds exactly the order the uninterrupted run would have used.
    epoch_rng_ = Rng(cfg_.train.seed).fork(0xE70C0000ULL + static_cast<std::uint64_t>(epoch));
    perm_.resize(manifest_.entries.size());
    std::iota(perm_.begin(), perm_.end(), size_t{0});
    shuffle_perm();
}

size_t Trainer::draw_index() {
    if (cursor_ >= perm_.size()) shuffle_perm();  // mosaic drained the epoch early
    return perm_[cursor_++];
}

data::Sample Trainer::load_entry(size_t index) const {
    return data::load_sample(manifest_.entries[index], manifest_.lane_mask_width);
}

data::Sample Trainer::base_sample(bool augment) {
    const int w = cfg_.train.train_w, h = cfg_.train.train_h;
    if (augment && cfg_.model.use_mosaic && rng_.uniform(0, 1) < cfg_.train.mosaic_prob) {
        std::array<data::Sample, 4> parts{load_entry(draw_index()), load_entry(draw_index()),
                                          load_entry(draw_index()), load_entry(draw_index())};
        return data::mosaic(parts, w, h, rng_);
    }
    return data::resize_letterbox(load_entry(draw_index()), w, h);
}

data::Sample Trainer::assemble_sample(bool augment) {
    data::Sample s = base_sample(augment);
    if (augment && cfg_.model.use_mixup && rng_.uniform(0, 1) < cfg_.train.mixup_prob) {
        // Blend factor concentrated around 0.5 keeps both label sets relevant.
        s = data::mixup(s, base_sample(augment), rng_.uniform(0.35, 0.65));
    }
    if (augment && cfg_.train.use_hflip && rng_.uniform(0, 1) < 0.5) s = data::hflip(s);
    if (augment && cfg_.train.hsv_jitter > 0) {
        data::hsv_jitter_inplace(s, cfg_.train.hsv_jitter, rng_);
    }
    return s;
}

std::vector<data::Sample> Trainer::next_batch() {
    const int epoch = static_cast<int>(step_ / steps_per_epoch());
    const bool augment = epoch < cfg_.train.total_epochs - cfg_.train.aug_off_last_epochs;
    const int b = std::min<int>(cfg_.train.batch_size,
                                static_cast<int>(manifest_.entries.size()));
    std::vector<data::Sample> batch;
    batch.reserve(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) batch.push_back(assemble_sample(augment));
    return batch;
}

LossBreakdown Trainer::train_step(const std::vector<data::Sample>& batch) {
    if (batch.empty()) throw InputError("train_step: empty batch");
    const int h = batch[0].height(), w = batch[0].width();
    const int b = static_cast<int>(batch.size());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor images({b, 3, h, w}), drivable_gt({b, h, w}), lane_gt({b, h, w});
    std::vector<std::vector<data::Box>> boxes(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        const data::Sample& s = batch[static_cast<size_t>(i)];
        if (s.height() != h || s.width() != w) {
            throw InputError("train_step: batch images differ in size");
        }
        for (std::int64_t k = 0; k < 3 * plane; ++k) images[i * 3 * plane + k] = s.image[k];
        for (std::int64_t k = 0; k < plane; ++k) {
            drivable_gt[i * plane + k] = s.drivable_mask[k];
            lane_gt[i * plane + k] = s.lane_mask[k];
        }
        boxes[static_cast<size_t>(i)] = s.boxes;
    }

    net_->set_training(true);
    Network::Output out = net_->forward(images);
    const JointLoss jl =
        joint_loss(out.det_raw, out.drivable_logits, out.lane_logits, boxes, drivable_gt,
                   lane_gt, anchors_, cfg_.loss, cfg_.model.num_classes,
                   cfg_.model.lane_loss_kind);
    check_finite(jl.breakdown, step_);

    net_->zero_grad();
    ag::backward(jl.total);
    const real lr = lr_at(step_, cfg_.train, steps_per_epoch());
    opt_.step(lr);

    history_.push_back({step_, lr, jl.breakdown});
    if (log_.is_open()) {
        char row[320];
        std::snprintf(row, sizeof(row), "%lld,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                      static_cast<long long>(step_), lr, jl.breakdown.class_loss,
                      jl.breakdown.obj_loss, jl.breakdown.box_loss, jl.breakdown.drivable_loss,
                      jl.breakdown.lane_loss, jl.breakdown.total);
        log_ << row;
        log_.flush();
    }
    ++step_;
    return jl.breakdown;
}

std::string Trainer::fit(const data::DatasetManifest* val, int stop_after_epochs) {
    const int spe = steps_per_epoch();
    const std::int64_t total_steps =
        static_cast<std::int64_t>(cfg_.train.total_epochs) * spe;
    open_log(step_ > 0);
    const std::string last_path = run_dir_ + "/last.ckpt";
    int epochs_done_here = 0;
    while (step_ < total_steps) {
        if (step_ % spe == 0) start_epoch(static_cast<int>(step_ / spe));
        train_step(next_batch());
        if (step_ % spe == 0) {
            const int completed = static_cast<int>(step_ / spe);
            save_checkpoint(last_path);
            if (val != nullptr && (completed % cfg_.train.eval_every == 0 ||
                                   completed == cfg_.train.total_epochs)) {
                const metrics::MetricReport rep = evaluate(*net_, *val);
                std::ofstream mj(run_dir_ + "/metrics_epoch_" + std::to_string(completed) +
                                 ".json");
                mj << rep.to_json() << "\n";
                if (rep.map50 > best_map50_) {
                    best_map50_ = rep.map50;
                    save_checkpoint(run_dir_ + "/best.ckpt");
                }
            }
            ++epochs_done_here;
            if (stop_after_epochs > 0 && epochs_done_here >= stop_after_epochs) break;
        }
        if (stop_requested()) {
            save_checkpoint(last_path);
            break;
        }
    }
    log_.close();
    return last_path;
}

void Trainer::save_checkpoint(const std::string& path) const {
    Checkpoint ck;
    ck.config = cfg_;
    ck.epoch = static_cast<int>(step_ / steps_per_epoch());
    ck.step = step_;
    ck.best_map50 = best_map50_;
    ck.rng_state = rng_.save_state();
    store_network(*net_, ck);
    opt_.store(ck);
    ck.save(path);
}

void Trainer::resume_from(const std::string& path) {
    const Checkpoint ck = Checkpoint::load(path);
    if (ck.config.to_text() != cfg_.to_text()) {
        throw ConfigError("resume: checkpoint configuration differs from the trainer's");
    }
    load_network(*net_, ck);
    if (!opt_.load(ck)) throw IoError("resume: checkpoint has no optimizer state");
    if (!ck.rng_state.empty()) rng_.load_state(ck.rng_state);
    step_ = ck.step;
    best_map50_ = ck.best_map50;
    history_.clear();
    // Epoch-boundary checkpoints (the ones fit() writes) resume bit-exactly:
    // the order stream only depends on (seed, epoch). A mid-epoch signal
    // checkpoint restarts its epoch's order from the top.
    start_epoch(static_cast<int>(step_ / steps_per_epoch()));
}

void Trainer::open_log(bool append) {
    if (log_.is_open()) return;
    const std::string path = run_dir_ + "/train_log.csv";
    if (append && fs::exists(path)) {
        log_.open(path, std::ios::app);
    } else {
        log_.open(path, std::ios::trunc);
        log_ << "step,lr,class,obj,box,drivable,lane,total\n";
    }
    if (!log_) throw IoError("cannot open training log: " + path);
}

AblationResult run_ablation(const RunConfig& base, const data::DatasetManifest& train_manifest,
                            const data::DatasetManifest& val_manifest,
                            const std::string& workdir) {
    struct Variant {
        const char* name;
        std::function<void(RunConfig&)> tweak;
    };
    const Variant variants[] = {
        {"baseline", [](RunConfig&) {}},
        {"no_mosaic_mixup",
         [](RunConfig& c) {
             c.model.use_mosaic = false;
             c.model.use_mixup = false;
         }},
        {"lane_nearest_upsample",
         [](RunConfig& c) { c.model.lane_decoder_kind = "nearest_upsample"; }},
    };

    AblationResult out;
    for (const Variant& v : variants) {
        RunConfig cfg = base;
        v.tweak(cfg);
        Trainer t(cfg, train_manifest, workdir + "/" + v.name);
        t.fit(nullptr);
        metrics::MetricReport rep = evaluate(t.network(), val_manifest);
        std::ofstream mj(workdir + "/" + v.name + "/metrics.json");
        mj << rep.to_json() << "\n";
        out.rows.push_back({v.name, std::move(rep)});
    }

    const metrics::MetricReport& b0 = out.rows[0].report;
    char line[256];
    std::snprintf(line, sizeof(line), "%-24s %8s %8s %8s %8s %8s %8s\n", "Configuration",
                  "mAP50", "dmAP50", "mIoU", "dmIoU", "LaneAcc", "LaneIoU");
    out.table = line;
    for (const AblationRow& row : out.rows) {
        std::snprintf(line, sizeof(line), "%-24s %8.3f %+8.3f %8.3f %+8.3f %8.3f %8.3f\n",
                      row.name.c_str(), row.report.map50, row.report.map50 - b0.map50,
                      row.report.drivable_miou, row.report.drivable_miou - b0.drivable_miou,
                      row.report.lane_accuracy, row.report.lane_iou);
        out.table += line;
    }
    std::ofstream tf(workdir + "/ablation.txt");
    tf << out.table;
    return out;
}

}  // namespace pdp::train
