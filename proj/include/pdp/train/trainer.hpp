#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pdp/data/dataset.hpp"
#include "pdp/loss/losses.hpp"
#include "pdp/metrics/metrics.hpp"
#include "pdp/model/checkpoint.hpp"
#include "pdp/model/postprocess.hpp"
#include "pdp/train/optimizer.hpp"

namespace pdp::train {

// Suppression threshold used before metrics and overlays.
inline constexpr real kNmsIouThreshold = 0.45;

// Cooperative interruption: a signal handler (or a test) flips the flag and
// fit() checkpoints and returns at the next step boundary.
void request_stop();
void clear_stop();
bool stop_requested();

// Full-split evaluation at the model's input size: letterbox, forward,
// decode + NMS at the metric confidence floor, inverse-map detections and
// argmaxed masks to source coordinates, score everything. Lane ground truth
// is rasterized at the manifest's width. An empty split yields a zero
// report with a warning.
metrics::MetricReport evaluate(Network& net, const data::DatasetManifest& manifest);

struct StepLog {
    std::int64_t step = 0;
    real lr = 0;
    LossBreakdown loss;
};

class Trainer {
public:
    // Builds the network and optimizer from the config; `run_dir` receives
    // the CSV log, metric reports, and checkpoints.
    Trainer(const RunConfig& cfg, data::DatasetManifest train_manifest, std::string run_dir);

    // One update on an assembled batch (images already at the train size,
    // labels in canvas coordinates). Returns the pre-step loss; a non-finite
    // component aborts before the weights are touched.
    LossBreakdown train_step(const std::vector<data::Sample>& batch);

    // Runs the schedule from the current step: logs every step, checkpoints
    // `last` at each epoch end, evaluates every eval_every epochs when a
    // validation manifest is given and keeps the best-mAP50 checkpoint.
    // `stop_after_epochs` > 0 returns early once that many epochs have
    // completed in this call. Returns the path of the last checkpoint.
    std::string fit(const data::DatasetManifest* val = nullptr, int stop_after_epochs = 0);

    // Restores weights, optimizer momentum, RNG, and step counters; the
    // checkpoint must carry an identical run configuration.
    void resume_from(const std::string& path);

    // The next augmented batch of the schedule (exposed for tests).
    std::vector<data::Sample> next_batch();

    Network& network() { return *net_; }
    std::int64_t global_step() const { return step_; }
    int steps_per_epoch() const;
    real best_map50() const { return best_map50_; }
    const std::vector<StepLog>& history() const { return history_; }
    const std::string& run_dir() const { return run_dir_; }

    void save_checkpoint(const std::string& path) const;

private:
    data::Sample assemble_sample(bool augment);
    data::Sample base_sample(bool augment);  // mosaic or plain letterbox
    data::Sample load_entry(size_t index) const;
    void shuffle_perm();
    size_t draw_index();
    void start_epoch(int epoch);
    void open_log(bool append);

    RunConfig cfg_;
    data::DatasetManifest manifest_;
    std::string run_dir_;
    std::unique_ptr<Network> net_;
    AnchorSet anchors_;
    SgdOptimizer opt_;
    Rng rng_;        // augmentation decisions; persisted in checkpoints
    Rng epoch_rng_;  // per-epoch sample order, re-derived from (seed, epoch)
    std::vector<size_t> perm_;
    size_t cursor_ = 0;
    std::int64_t step_ = 0;
    real best_map50_ = -1.0;
    std::vector<StepLog> history_;
    std::ofstream log_;
};

// One row of the augmentation/decoder comparison.
struct AblationRow {
    std::string name;
    metrics::MetricReport report;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::string table;  // aligned text, baseline deltas included
};

// Trains and evaluates the baseline, the no-mosaic/no-mixup variant, and
// the nearest-upsample lane decoder under identical seeds, then renders
// the comparison table. Artifacts land under workdir/<variant>/.
AblationResult run_ablation(const RunConfig& base, const data::DatasetManifest& train_manifest,
                            const data::DatasetManifest& val_manifest,
                            const std::string& workdir);

}  // namespace pdp::train
