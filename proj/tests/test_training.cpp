#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "pdp/train/schedule.hpp"
#include "pdp/train/trainer.hpp"
#include "test_util.hpp"

using namespace pdp;
using namespace pdp::train;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("pdp_train_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Small network + 64x64 images: full pipeline at unit-test cost.
RunConfig micro_cfg() {
    RunConfig cfg = RunConfig::desk();
    cfg.model.input_w = 64;
    cfg.model.input_h = 64;
    cfg.model.stage_channels = {8, 16, 32, 64};
    cfg.model.elan_per_stage = 1;
    cfg.train.train_w = 64;
    cfg.train.train_h = 64;
    cfg.train.batch_size = 2;
    cfg.train.total_epochs = 2;
    cfg.train.warmup_epochs = 1;
    cfg.train.aug_off_last_epochs = 0;
    cfg.train.eval_every = 1;
    cfg.train.seed = 5;
    return cfg;
}

data::DatasetManifest micro_dataset(const std::string& name, const std::string& split,
                                    std::uint64_t seed = 3) {
    data::SynthConfig sc;
    sc.count = 4;
    sc.img_w = 64;
    sc.img_h = 64;
    sc.seed = seed;
    return data::synth_generate(sc, scratch(name).string(), split);
}

real weight_norm(const nn::ParamRegistry& reg) {
    real s = 0;
    for (const nn::Param& p : reg.params) {
        for (std::int64_t k = 0; k < p.var->value.numel(); ++k) {
            s += p.var->value[k] * p.var->value[k];
        }
    }
    return std::sqrt(s);
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("warmup then cosine reproduces the closed-form schedule") {
    TrainConfig cfg;  // lr .01, fraction .01, warmup 3
    cfg.total_epochs = 10;
    const int spe = 9;  // warm = 27, total = 90, cosine span = 62 (even)
    const real hi = 0.01, lo = 0.0001;

    CHECK(lr_at(0, cfg, spe) == 0.0);
    CHECK(lr_at(9, cfg, spe) == doctest::Approx(hi * 9.0 / 27.0).epsilon(1e-15));
    CHECK(lr_at(27, cfg, spe) == doctest::Approx(hi).epsilon(1e-15));  // end of warmup
    // Continuity across the junction: one warmup step's increment at most.
    CHECK(std::abs(lr_at(27, cfg, spe) - lr_at(26, cfg, spe)) < hi / 27 + 1e-12);
    // Half phase: (hi + lo) / 2.
    CHECK(lr_at(27 + 31, cfg, spe) == doctest::Approx(0.5 * (hi + lo)).epsilon(1e-12));
    // The floor is reached exactly at the last step and held after.
    CHECK(lr_at(89, cfg, spe) == doctest::Approx(lo).epsilon(1e-12));
    CHECK(lr_at(500, cfg, spe) == doctest::Approx(lo).epsilon(1e-12));

    real prev = hi + 1e-15;
    for (int s = 27; s <= 89; ++s) {
        const real t = static_cast<real>(s - 27) / 62.0;
        const real want = lo + (hi - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
        CHECK(lr_at(s, cfg, spe) == doctest::Approx(want).epsilon(1e-12));
        CHECK(lr_at(s, cfg, spe) <= prev + 1e-15);  // non-increasing cosine phase
        prev = lr_at(s, cfg, spe);
    }
    CHECK_THROWS_AS(lr_at(-1, cfg, spe), InputError);
    CHECK_THROWS_AS(lr_at(0, cfg, 0), InputError);
}

TEST_CASE("periodic restarts snap back to the initial rate") {
    TrainConfig cfg;
    cfg.periodic_restarts = true;
    cfg.total_epochs = 30;
    const int spe = 4;  // cycles of 12, 24, 48, ... steps
    CHECK(lr_at(0, cfg, spe) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(lr_at(12, cfg, spe) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(lr_at(36, cfg, spe) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(lr_at(6, cfg, spe) < 0.01);
    CHECK(lr_at(11, cfg, spe) < lr_at(6, cfg, spe));
}

TEST_CASE("sgd matches a hand-rolled two-parameter recursion bitwise") {
    nn::ParamRegistry reg;
    ag::Var w0 = ag::leaf(Tensor::from({1}, {5.0}), true, "w0");
    ag::Var w1 = ag::leaf(Tensor::from({1}, {-2.0}), true, "w1");
    reg.add_param("w0", w0, false);
    reg.add_param("w1", w1, false);
    SgdOptimizer opt(reg, 0.937, 0.0);

    real hw0 = 5.0, hw1 = -2.0, hv0 = 0.0, hv1 = 0.0;
    const real lr = 0.05;
    for (int it = 0; it < 25; ++it) {
        // L = (w0-3)^2 + 2 (w1+1)^2
        w0->grad = Tensor::from({1}, {2.0 * (w0->value[0] - 3.0)});
        w1->grad = Tensor::from({1}, {4.0 * (w1->value[0] + 1.0)});
        opt.step(lr);

        const real g0 = 2.0 * (hw0 - 3.0), g1 = 4.0 * (hw1 + 1.0);
        hv0 = 0.937 * hv0 + g0;
        hw0 -= lr * hv0;
        hv1 = 0.937 * hv1 + g1;
        hw1 -= lr * hv1;
        CHECK(w0->value[0] == hw0);
        CHECK(w1->value[0] == hw1);
    }
    // With momentum zeroed the same loop is plain gradient descent.
    nn::ParamRegistry reg2;
    ag::Var u = ag::leaf(Tensor::from({1}, {5.0}), true, "u");
    reg2.add_param("u", u, false);
    SgdOptimizer plain(reg2, 0.0, 0.0);
    real hu = 5.0;
    for (int it = 0; it < 20; ++it) {
        u->grad = Tensor::from({1}, {2.0 * (u->value[0] - 3.0)});
        plain.step(0.1);
        hu -= 0.1 * 2.0 * (hu - 3.0);
        CHECK(u->value[0] == hu);
    }
    CHECK(std::abs(u->value[0] - 3.0) < 0.05);  // converging on the optimum
}

TEST_CASE("zero learning rate is a bitwise no-op on weights") {
    Rng rng(41);
    nn::ParamRegistry reg;
    ag::Var w = ag::leaf(testutil::random_tensor({3, 4}, rng), true, "w");
    reg.add_param("w", w, true);
    const Tensor before = w->value;
    SgdOptimizer opt(reg, 0.937, 0.005);
    w->grad = testutil::random_tensor({3, 4}, rng);
    opt.step(0.0);
    CHECK(testutil::max_abs_diff(w->value, before) == 0.0);
}

TEST_CASE("weight decay alone shrinks weight norms monotonically") {
    Rng rng(43);
    nn::ParamRegistry reg;
    ag::Var w = ag::leaf(testutil::random_tensor({4, 4}, rng, 0.5, 1.5), true, "w");
    reg.add_param("w", w, true);
    SgdOptimizer opt(reg, 0.937, 0.005);
    w->grad = Tensor({4, 4});  // zero loss gradient
    real prev = weight_norm(reg);
    for (int it = 0; it < 30; ++it) {
        opt.step(0.1);
        const real now = weight_norm(reg);
        CHECK(now < prev);
        prev = now;
    }
    CHECK(prev > 0.0);
}

TEST_CASE("repeated steps on one fixed batch drive the joint loss down") {
    RunConfig cfg = micro_cfg();
    cfg.train.total_epochs = 30;  // room in the schedule for 50 steps
    cfg.train.warmup_epochs = 3;
    const data::DatasetManifest m = micro_dataset("fixed_batch", "train");
    Trainer t(cfg, m, scratch("fixed_batch_run").string());
    const std::vector<data::Sample> batch = t.next_batch();

    real first = 0, last = 0;
    for (int s = 0; s < 50; ++s) {
        const LossBreakdown b = t.train_step(batch);
        CHECK(std::abs(LossBreakdown::weighted_total(b, cfg.loss) - b.total) < 1e-12);
        if (s == 0) first = b.total;
        last = b.total;
    }
    CHECK(last < first);
    CHECK(t.global_step() == 50);
}

TEST_CASE("same seed, same trajectory") {
    const RunConfig cfg = micro_cfg();
    const data::DatasetManifest m = micro_dataset("determinism", "train");
    Trainer a(cfg, m, scratch("det_a").string());
    Trainer b(cfg, m, scratch("det_b").string());
    for (int s = 0; s < 3; ++s) {
        const LossBreakdown la = a.train_step(a.next_batch());
        const LossBreakdown lb = b.train_step(b.next_batch());
        CHECK(la.total == lb.total);
        CHECK(la.box_loss == lb.box_loss);
        CHECK(la.lane_loss == lb.lane_loss);
    }
}

TEST_CASE("fit writes the log, checkpoints, and a full history") {
    const RunConfig cfg = micro_cfg();
    const data::DatasetManifest m = micro_dataset("bookkeeping", "train");
    const fs::path dir = scratch("bookkeeping_run");
    Trainer t(cfg, m, dir.string());
    const std::string last = t.fit();

    CHECK(fs::exists(last));
    CHECK(t.history().size() == 4);  // 2 epochs x (4 images / batch 2)
    std::ifstream log(dir / "train_log.csv");
    REQUIRE(log.good());
    std::string line;
    int rows = 0;
    std::getline(log, line);
    CHECK(line == "step,lr,class,obj,box,drivable,lane,total");
    while (std::getline(log, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 4);
}

TEST_CASE("resume from the epoch checkpoint matches the uninterrupted run") {
    const RunConfig cfg = micro_cfg();
    const data::DatasetManifest m = micro_dataset("resume", "train");

    Trainer full(cfg, m, scratch("resume_full").string());
    full.fit();
    REQUIRE(full.history().size() == 4);

    Trainer part(cfg, m, scratch("resume_part").string());
    const std::string ckpt = part.fit(nullptr, 1);  // stop after epoch 1
    CHECK(part.global_step() == 2);

    Trainer resumed(cfg, m, scratch("resume_res").string());
    resumed.resume_from(ckpt);
    CHECK(resumed.global_step() == 2);
    resumed.fit();
    REQUIRE(resumed.history().size() == 2);

    for (int i = 0; i < 2; ++i) {
        const StepLog& want = full.history()[static_cast<size_t>(2 + i)];
        const StepLog& got = resumed.history()[static_cast<size_t>(i)];
        CHECK(got.step == want.step);
        CHECK(got.lr == want.lr);
        CHECK(got.loss.total == want.loss.total);  // bitwise
        CHECK(got.loss.box_loss == want.loss.box_loss);
    }
    // Final weights agree bitwise as well.
    const nn::ParamRegistry& ra = full.network().registry();
    const nn::ParamRegistry& rb = resumed.network().registry();
    REQUIRE(ra.params.size() == rb.params.size());
    for (size_t i = 0; i < ra.params.size(); ++i) {
        CHECK(testutil::max_abs_diff(ra.params[i].var->value, rb.params[i].var->value) == 0.0);
    }
}

TEST_CASE("resume rejects a different configuration") {
    const RunConfig cfg = micro_cfg();
    const data::DatasetManifest m = micro_dataset("resume_cfg", "train");
    Trainer a(cfg, m, scratch("resume_cfg_a").string());
    const std::string path = (fs::path(a.run_dir()) / "manual.ckpt").string();
    a.save_checkpoint(path);

    RunConfig other = cfg;
    other.train.total_epochs = 3;
    Trainer b(other, m, scratch("resume_cfg_b").string());
    CHECK_THROWS_AS(b.resume_from(path), ConfigError);

    CHECK_THROWS_AS(Trainer(cfg, data::DatasetManifest{}, scratch("empty_manifest").string()),
                    InputError);
}

TEST_CASE("evaluation is deterministic and chance-level on random weights") {
    const RunConfig cfg = micro_cfg();
    const data::DatasetManifest m = micro_dataset("eval_random", "val", 11);
    Network net(cfg.model, 7);
    const metrics::MetricReport r1 = evaluate(net, m);
    const metrics::MetricReport r2 = evaluate(net, m);
    CHECK(r1.to_json() == r2.to_json());
    CHECK(r1.lane_iou < 0.05);
    CHECK(r1.param_count == net.param_count());
    CHECK(net.training());  // evaluate restores the mode it found

    data::DatasetManifest empty;
    empty.split = "val";
    const metrics::MetricReport r3 = evaluate(net, empty);
    CHECK(r3.map50 == 0.0);
    CHECK(!r3.notes.empty());
}

TEST_CASE("ablation harness produces the three-variant table") {
    RunConfig cfg = micro_cfg();
    cfg.train.total_epochs = 1;
    cfg.train.warmup_epochs = 0;
    const data::DatasetManifest train_m = micro_dataset("ablate_train", "train");
    const data::DatasetManifest val_m = micro_dataset("ablate_val", "val", 19);
    const fs::path dir = scratch("ablate_run");

    const AblationResult res = run_ablation(cfg, train_m, val_m, dir.string());
    REQUIRE(res.rows.size() == 3);
    CHECK(res.rows[0].name == "baseline");
    CHECK(res.rows[1].name == "no_mosaic_mixup");
    CHECK(res.rows[2].name == "lane_nearest_upsample");
    CHECK(res.table.find("dmAP50") != std::string::npos);
    CHECK(res.table.find("LaneIoU") != std::string::npos);
    CHECK(res.table.find("no_mosaic_mixup") != std::string::npos);
    CHECK(fs::exists(dir / "ablation.txt"));
    CHECK(fs::exists(dir / "baseline" / "metrics.json"));
    for (const AblationRow& row : res.rows) {
        CHECK(std::isfinite(row.report.map50));
        CHECK(std::isfinite(row.report.drivable_miou));
    }
}

}  // TEST_SUITE
