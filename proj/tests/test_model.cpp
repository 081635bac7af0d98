#include <doctest.h>

#include <cstdio>
#include <set>

#include "pdp/model/checkpoint.hpp"
#include "pdp/model/network.hpp"
#include "pdp/model/postprocess.hpp"
#include "test_util.hpp"

using namespace pdp;

TEST_SUITE_BEGIN("model");

// ---- config --------------------------------------------------------------

TEST_CASE("run config round-trips through its text form") {
    RunConfig a = RunConfig::desk();
    a.train.total_epochs = 33;
    a.model.lane_decoder_kind = "nearest_upsample";
    RunConfig b = RunConfig::from_text(a.to_text());
    CHECK(a.to_text() == b.to_text());
    CHECK(b.train.total_epochs == 33);
    CHECK(b.model.lane_decoder_kind == "nearest_upsample");
}

TEST_CASE("config validation rejects malformed settings") {
    RunConfig c = RunConfig::desk();
    c.model.input_w = 100;  // not divisible by 32
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = RunConfig::desk();
    c.model.anchors.pop_back();
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = RunConfig::desk();
    c.train.warmup_epochs = c.train.total_epochs;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    CHECK_THROWS_AS(RunConfig::desk().apply_override("bogus.key", "1"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_text("train.initial_lr = abc\n"), ConfigError);
}

TEST_CASE("flag overrides win over file content") {
    RunConfig c = RunConfig::from_text("train.batch_size = 16\n");
    CHECK(c.train.batch_size == 16);
    c.apply_override("train.batch_size", "2");
    CHECK(c.train.batch_size == 2);
}

// ---- elan / spp / fpn ----------------------------------------------------

TEST_CASE("elan block honours the shape contract") {
    Rng rng(1);
    ElanBlock e1(64, 128, 2, rng);
    auto y1 = e1.forward(ag::constant(Tensor({1, 64, 16, 16}, 0.1)), false);
    CHECK(y1->value.shape() == std::vector<int>({1, 128, 16, 16}));

    ElanBlock e2(32, 32, 1, rng);
    auto y2 = e2.forward(ag::constant(Tensor({1, 32, 8, 8}, 0.1)), false);
    CHECK(y2->value.shape() == std::vector<int>({1, 32, 8, 8}));
}

TEST_CASE("elan block rejects channel/group mismatches") {
    Rng rng(2);
    // 6/2 = 3 channels per deep conv, not divisible by 2 groups
    CHECK_THROWS_AS(ElanBlock(6, 8, 2, rng), ConfigError);
}

TEST_CASE("elan block gradient matches finite differences") {
    Rng rng(3);
    ElanBlock e(8, 8, 2, rng);
    Tensor xv = testutil::random_tensor({1, 8, 4, 4}, rng);

    auto sum_out = [&](const Tensor& t) {
        return e.forward(ag::constant(t), false)->value.sum();
    };
    auto x = ag::leaf(xv);
    auto y = e.forward(x, false);
    Tensor seed(y->value.shape());
    seed.fill(1.0);
    ag::backward(y, &seed);
    CHECK(testutil::rel_err(x->grad, testutil::fd_grad(sum_out, xv)) < 1e-3);
}

TEST_CASE("grouped convolution has 1/g the weights of its dense counterpart") {
    Rng rng(4);
    nn::Conv2d dense(16, 16, 3, 1, 1, 1, false, rng);
    nn::Conv2d grouped(16, 16, 3, 1, 1, 4, false, rng);
    CHECK(dense.w->value.numel() == 4 * grouped.w->value.numel());
}

TEST_CASE("spp keeps shape and its pooled branches fix constant inputs") {
    Rng rng(5);
    SppBlock spp(32, {5, 9, 13}, rng);
    Tensor xv = Tensor::full({1, 32, 8, 8}, 0.7);
    auto y = spp.forward(ag::constant(xv), false);
    CHECK(y->value.shape() == std::vector<int>({1, 32, 8, 8}));

    // With a constant input the reduced feature is constant per channel, so
    // every max-pool branch must equal it elementwise.
    auto r = spp.reduce.forward(ag::constant(xv), false);
    for (int k : spp.kernels) {
        std::vector<std::int64_t> argmax;
        Tensor pooled = kernels::max_pool_same_forward(r->value, k, argmax);
        CHECK(testutil::max_abs_diff(pooled, r->value) == 0.0);
    }

    CHECK_THROWS_AS(SppBlock(32, {4}, rng), ConfigError);
}

TEST_CASE("fpn produces aligned grids and an untouched tap") {
    Rng rng(6);
    Fpn fpn({32, 64, 128}, rng);
    Rng data(7);
    std::vector<FeatureMapVar> feats = {
        {ag::constant(testutil::random_tensor({1, 32, 48, 80}, data)), 8},
        {ag::constant(testutil::random_tensor({1, 64, 24, 40}, data)), 16},
        {ag::constant(testutil::random_tensor({1, 128, 12, 20}, data)), 32},
    };
    PyramidFeatures p = fpn.forward(feats, false);
    REQUIRE(p.levels.size() == 3);
    CHECK(p.levels[0].data->value.shape() == std::vector<int>({1, 32, 48, 80}));
    CHECK(p.levels[1].data->value.shape() == std::vector<int>({1, 64, 24, 40}));
    CHECK(p.levels[2].data->value.shape() == std::vector<int>({1, 128, 12, 20}));
    CHECK(p.levels[0].stride == 8);
    CHECK(p.levels[2].stride == 32);

    // The tap must be the raw stage feature, not a fused copy.
    CHECK(p.pre_fpn_tap.data.get() == feats[0].data.get());
    CHECK(testutil::max_abs_diff(p.pre_fpn_tap.data->value, feats[0].data->value) == 0.0);

    CHECK_THROWS_AS(fpn.forward({feats[0]}, false), InputError);
}

// ---- full network --------------------------------------------------------

namespace {
ModelConfig eval_size_config() {
    ModelConfig c = ModelConfig::tiny();
    c.input_w = 640;
    c.input_h = 384;
    return c;
}
}  // namespace

TEST_CASE("network emits the contracted shapes at 640x384") {
    Network net(eval_size_config(), 11);
    net.set_training(false);
    auto out = net.forward(Tensor({1, 3, 384, 640}, 0.5));

    REQUIRE(out.det_raw.size() == 3);
    CHECK(out.det_raw[0]->value.shape() == std::vector<int>({1, 3, 48, 80, 6}));
    CHECK(out.det_raw[1]->value.shape() == std::vector<int>({1, 3, 24, 40, 6}));
    CHECK(out.det_raw[2]->value.shape() == std::vector<int>({1, 3, 12, 20, 6}));
    CHECK(out.drivable_logits->value.shape() == std::vector<int>({1, 2, 384, 640}));
    CHECK(out.lane_logits->value.shape() == std::vector<int>({1, 2, 384, 640}));

    CHECK(net.drivable_head.upsample_count() == 4);
    CHECK(net.lane_head.upsample_count() == 0);
    CHECK(net.lane_head.deconv_count() == 5);
}

TEST_CASE("network rejects non-divisible input sizes") {
    Network net(ModelConfig::tiny(), 11);
    CHECK_THROWS_AS(net.forward(Tensor({1, 3, 100, 96}, 0.0)), InputError);
    CHECK_THROWS_AS(net.forward(Tensor({1, 4, 96, 96}, 0.0)), InputError);
}

TEST_CASE("eval forward is deterministic and batch-independent") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.input_w = 96;
    cfg.input_h = 64;
    Network net(cfg, 21);
    net.set_training(false);

    Rng rng(22);
    Tensor a = testutil::random_tensor({1, 3, 64, 96}, rng, 0.0, 1.0);
    Tensor b = testutil::random_tensor({1, 3, 64, 96}, rng, 0.0, 1.0);
    Tensor both({2, 3, 64, 96});
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        both[i] = a[i];
        both[a.numel() + i] = b[i];
    }

    auto oa = net.forward(a);
    auto oa2 = net.forward(a);
    CHECK(testutil::max_abs_diff(oa.lane_logits->value, oa2.lane_logits->value) == 0.0);
    CHECK(testutil::max_abs_diff(oa.det_raw[0]->value, oa2.det_raw[0]->value) == 0.0);

    auto ob = net.forward(b);
    auto oboth = net.forward(both);
    // Per-sample outputs of the batched run equal the single-sample runs.
    const std::int64_t seg_n = oa.drivable_logits->value.numel();
    for (std::int64_t i = 0; i < seg_n; ++i) {
        CHECK(oboth.drivable_logits->value[i] == doctest::Approx(oa.drivable_logits->value[i]).epsilon(1e-12));
        CHECK(oboth.drivable_logits->value[seg_n + i] == doctest::Approx(ob.drivable_logits->value[i]).epsilon(1e-12));
    }
    const std::int64_t det_n = oa.det_raw[2]->value.numel();
    for (std::int64_t i = 0; i < det_n; ++i) {
        CHECK(oboth.det_raw[2]->value[i] == doctest::Approx(oa.det_raw[2]->value[i]).epsilon(1e-12));
        CHECK(oboth.det_raw[2]->value[det_n + i] == doctest::Approx(ob.det_raw[2]->value[i]).epsilon(1e-12));
    }
}

TEST_CASE("pan wires shallow information into the deepest level") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.input_w = 96;
    cfg.input_h = 64;
    Network net(cfg, 31);
    net.set_training(false);

    Rng rng(32);
    std::vector<FeatureMapVar> feats = {
        {ag::constant(testutil::random_tensor({1, cfg.stage_channels[1], 8, 12}, rng)), 8},
        {ag::constant(testutil::random_tensor({1, cfg.stage_channels[2], 4, 6}, rng)), 16},
        {ag::constant(testutil::random_tensor({1, cfg.stage_channels[3], 2, 3}, rng)), 32},
    };
    PyramidFeatures enc = net.fpn.forward(feats, false);
    PyramidFeatures agg = net.pan.forward(enc, false);

    // Perturb the shallowest input; the deepest PAN output must change.
    std::vector<FeatureMapVar> feats2 = feats;
    Tensor bumped = feats[0].data->value;
    bumped[0] += 1.0;
    feats2[0] = {ag::constant(bumped), 8};
    PyramidFeatures agg2 = net.pan.forward(net.fpn.forward(feats2, false), false);
    CHECK(testutil::max_abs_diff(agg.levels[2].data->value, agg2.levels[2].data->value) > 0.0);
}

TEST_CASE("detection channel arithmetic follows 3*(5+nc)") {
    Rng rng(41);
    DetectHead h10({16, 32, 64}, 10, rng);
    Rng data(42);
    PyramidFeatures p;
    p.levels = {{ag::constant(testutil::random_tensor({2, 16, 8, 8}, data)), 8},
                {ag::constant(testutil::random_tensor({2, 32, 4, 4}, data)), 16},
                {ag::constant(testutil::random_tensor({2, 64, 2, 2}, data)), 32}};
    auto outs = h10.forward(p);
    CHECK(outs[0]->value.shape() == std::vector<int>({2, 3, 8, 8, 15}));
    CHECK(outs[2]->value.shape() == std::vector<int>({2, 3, 2, 2, 15}));
}

// ---- decode and nms ------------------------------------------------------

TEST_CASE("decode recovers center and size from zero offsets") {
    // Zero tx/ty/tw/th at cell (5,5), stride 8: center (2*0.5-0.5+5)*8 = 44
    // on both axes; size (2*0.5)^2 * anchor = the anchor prior itself.
    // (At cell (0,0) the same arithmetic gives the canonical center 4.0.)
    ModelConfig cfg = ModelConfig::tiny();
    AnchorSet anchors = AnchorSet::from_config(cfg);
    std::vector<Tensor> raw = {Tensor({1, 3, 20, 32, 6}), Tensor({1, 3, 10, 16, 6}),
                               Tensor({1, 3, 5, 8, 6})};
    // Make every other cell invisible and light up (scale 0, anchor 1 = prior
    // (20,16)) at cell (5,5) with high obj/class logits.
    for (auto& t : raw) t.fill(-20.0);
    const int k = 6;
    real* cell = raw[0].data() + ((static_cast<std::int64_t>(1) * 20 + 5) * 32 + 5) * k;
    cell[0] = cell[1] = cell[2] = cell[3] = 0.0;
    cell[4] = 10.0;  // objectness
    cell[5] = 10.0;  // class

    auto dets = decode_boxes(raw, 0, anchors, 1, 0.5, 256, 160);
    REQUIRE(dets.size() == 1);
    const Detection& d = dets[0];
    CHECK((d.x1 + d.x2) / 2 == doctest::Approx(44.0).epsilon(1e-9));
    CHECK((d.y1 + d.y2) / 2 == doctest::Approx(44.0).epsilon(1e-9));
    CHECK(d.x2 - d.x1 == doctest::Approx(anchors.at(0, 1)[0]).epsilon(1e-9));
    CHECK(d.y2 - d.y1 == doctest::Approx(anchors.at(0, 1)[1]).epsilon(1e-9));
    CHECK(d.confidence > 0.0);
    CHECK(d.confidence < 1.0);

    CHECK(decode_boxes(raw, 0, anchors, 1, 1.0, 256, 160).empty());

    // Cell (0,0) with a 16x16 prior decodes to center (4,4), size 16x16;
    // after clipping at the image edge that leaves corners (0,0)-(12,12).
    AnchorSet square{std::vector<std::array<real, 2>>(9, {16.0, 16.0})};
    for (auto& t : raw) t.fill(-20.0);
    real* origin = raw[0].data();
    origin[0] = origin[1] = origin[2] = origin[3] = 0.0;
    origin[4] = origin[5] = 10.0;
    auto od = decode_boxes(raw, 0, square, 1, 0.5, 256, 160);
    REQUIRE(od.size() == 1);
    CHECK(od[0].x1 == doctest::Approx(0.0));
    CHECK(od[0].y1 == doctest::Approx(0.0));
    CHECK(od[0].x2 == doctest::Approx(12.0).epsilon(1e-9));
    CHECK(od[0].y2 == doctest::Approx(12.0).epsilon(1e-9));
}

TEST_CASE("raising the objectness logit never lowers confidence") {
    ModelConfig cfg = ModelConfig::tiny();
    AnchorSet anchors = AnchorSet::from_config(cfg);
    std::vector<Tensor> raw = {Tensor({1, 3, 20, 32, 6}), Tensor({1, 3, 10, 16, 6}),
                               Tensor({1, 3, 5, 8, 6})};
    for (auto& t : raw) t.fill(-20.0);
    real* cell = raw[1].data() + 3 * static_cast<std::int64_t>(0);
    real prev = 0.0;
    for (real obj = -2.0; obj <= 2.0; obj += 0.5) {
        cell[4] = obj;
        cell[5] = 1.0;
        auto dets = decode_boxes(raw, 0, anchors, 1, 0.0, 256, 160);
        // find the max-confidence det (our lit cell)
        real best = 0.0;
        for (const auto& d : dets) best = std::max(best, d.confidence);
        CHECK(best >= prev);
        prev = best;
    }
}

TEST_CASE("nms keeps the winner among duplicates and respects the greedy chain") {
    Detection a{0, 0.9, 0, 0, 10, 10};
    Detection b{0, 0.8, 0, 0, 10, 10};
    auto kept = nms({a, b}, 0.5);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].confidence == 0.9);

    Detection c{0, 0.8, 50, 50, 60, 60};
    CHECK(nms({a, c}, 0.5).size() == 2);

    // Greedy chain: B overlaps A strongly (IoU 0.625) and is suppressed by
    // it; C overlaps B strongly (IoU 0.6) but A only weakly (IoU 0.23), so C
    // survives because B was never kept.
    Detection A{0, 0.9, 0, 0, 10, 10};
    Detection B{0, 0.8, 0, 0, 10, 16};
    Detection C{0, 0.7, 0, 6.25, 10, 16.25};
    auto chain = nms({A, B, C}, 0.5);
    REQUIRE(chain.size() == 2);
    CHECK(chain[0].confidence == 0.9);
    CHECK(chain[1].confidence == 0.7);

    // Different classes never suppress each other.
    Detection d2{1, 0.8, 0, 0, 10, 10};
    CHECK(nms({a, d2}, 0.5).size() == 2);
}

TEST_CASE("nms output is confidence-sorted with pairwise IoU under the threshold") {
    Rng rng(55);
    std::vector<Detection> dets;
    for (int i = 0; i < 40; ++i) {
        Detection d;
        d.class_id = static_cast<int>(rng.uniform_int(0, 1));
        d.confidence = rng.uniform(0.1, 0.99);
        d.x1 = rng.uniform(0, 80);
        d.y1 = rng.uniform(0, 80);
        d.x2 = d.x1 + rng.uniform(5, 40);
        d.y2 = d.y1 + rng.uniform(5, 40);
        dets.push_back(d);
    }
    auto kept = nms(dets, 0.45);
    CHECK(kept.size() <= dets.size());
    for (size_t i = 1; i < kept.size(); ++i) CHECK(kept[i - 1].confidence >= kept[i].confidence);
    for (size_t i = 0; i < kept.size(); ++i)
        for (size_t j = i + 1; j < kept.size(); ++j)
            if (kept[i].class_id == kept[j].class_id)
                CHECK(iou_xyxy(kept[i].x1, kept[i].y1, kept[i].x2, kept[i].y2,
                               kept[j].x1, kept[j].y1, kept[j].x2, kept[j].y2) <= 0.45);
}

// ---- checkpoint ----------------------------------------------------------

TEST_CASE("checkpoint round-trips weights bit-for-bit") {
    ModelConfig cfg = ModelConfig::tiny();
    cfg.input_w = 96;
    cfg.input_h = 64;
    Network net(cfg, 77);
    net.set_training(false);

    RunConfig rc = RunConfig::desk();
    rc.model = cfg;
    Checkpoint ck;
    ck.config = rc;
    ck.epoch = 3;
    ck.step = 123;
    ck.best_map50 = 0.5;
    ck.rng_state = "state-blob";
    store_network(net, ck);

    const std::string path = "ckpt_test.bin";
    ck.save(path);
    Checkpoint loaded = Checkpoint::load(path);
    CHECK(loaded.epoch == 3);
    CHECK(loaded.step == 123);
    CHECK(loaded.rng_state == "state-blob");
    CHECK(loaded.config.to_text() == rc.to_text());

    Network net2 = network_from_checkpoint(loaded);
    net2.set_training(false);
    REQUIRE(net2.registry().params.size() == net.registry().params.size());
    for (size_t i = 0; i < net.registry().params.size(); ++i) {
        const auto& p1 = net.registry().params[i];
        const auto& p2 = net2.registry().params[i];
        CHECK(p1.name == p2.name);
        CHECK(testutil::max_abs_diff(p1.var->value, p2.var->value) == 0.0);
    }

    Rng rng(78);
    Tensor img = testutil::random_tensor({1, 3, 64, 96}, rng, 0.0, 1.0);
    auto o1 = net.forward(img);
    auto o2 = net2.forward(img);
    CHECK(testutil::max_abs_diff(o1.lane_logits->value, o2.lane_logits->value) == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("checkpoint loader rejects foreign files and shape mismatches") {
    const std::string path = "ckpt_bad.bin";
    {
        std::FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("not a checkpoint at all", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(Checkpoint::load(path), IoError);
    std::remove(path.c_str());

    ModelConfig small = ModelConfig::tiny();
    small.input_w = 96;
    small.input_h = 64;
    Network net(small, 5);
    Checkpoint ck;
    ck.config = RunConfig::desk();
    ck.config.model = small;
    store_network(net, ck);
    ck.tensors.erase(ck.tensors.begin());  // drop one tensor
    Network net2(small, 6);
    CHECK_THROWS_AS(load_network(net2, ck), IoError);
}

TEST_CASE("parameter registry flags decay correctly and names are unique") {
    ModelConfig cfg = ModelConfig::tiny();
    Network net(cfg, 99);
    std::set<std::string> names;
    std::int64_t total = 0;
    for (const auto& p : net.registry().params) {
        CHECK(names.insert(p.name).second);
        total += p.var->value.numel();
        const bool is_matrix = p.var->value.ndim() == 4;
        // Convolution kernels decay; biases and norm affine params do not.
        CHECK(p.decay == is_matrix);
    }
    CHECK(total == net.param_count());
    CHECK(total > 0);
}

TEST_SUITE_END();
