#include <doctest.h>

#include <cmath>
#include <set>
#include <utility>

#include "pdp/loss/losses.hpp"
#include "test_util.hpp"

using namespace pdp;

namespace {

AnchorSet square_anchors() {
    AnchorSet as;
    as.sizes = {{10, 10}, {20, 20}, {30, 30}, {40, 40}, {50, 50},
                {60, 60}, {80, 80}, {100, 100}, {120, 120}};
    return as;
}

data::Box make_box(real cx, real cy, real w, real h, int cls = 0, real weight = 1.0) {
    data::Box b;
    b.class_id = cls;
    b.x1 = cx - w / 2;
    b.y1 = cy - h / 2;
    b.x2 = cx + w / 2;
    b.y2 = cy + h / 2;
    b.weight = weight;
    return b;
}

// Raw detection tensors for a (img_w x img_h) input: (b, 3, h, w, 5+nc) per
// stride-8/16/32 scale.
std::vector<Tensor> zero_raw(int b, int img_w, int img_h, int nc) {
    std::vector<Tensor> raw;
    for (int stride : ModelConfig::strides()) {
        raw.push_back(Tensor::zeros({b, 3, img_h / stride, img_w / stride, 5 + nc}));
    }
    return raw;
}

std::int64_t raw_at(const Tensor& t, int n, int a, int y, int x, int k) {
    return ((((static_cast<std::int64_t>(n) * t.dim(1) + a) * t.dim(2) + y) * t.dim(3) + x) *
            t.dim(4)) + k;
}

Tensor onehot2(const Tensor& gt) {  // (b, h, w) {0,1} -> (b, 2, h, w)
    Tensor o = Tensor::zeros({gt.dim(0), 2, gt.dim(1), gt.dim(2)});
    for (int n = 0; n < gt.dim(0); ++n)
        for (int y = 0; y < gt.dim(1); ++y)
            for (int x = 0; x < gt.dim(2); ++x) {
                const int g = static_cast<int>(gt[(static_cast<std::int64_t>(n) * gt.dim(1) + y) *
                                                  gt.dim(2) + x]);
                o.at4(n, g, y, x) = 1.0;
            }
    return o;
}

Tensor softmax_ref(const Tensor& z) {  // independent reference softmax
    Tensor p = Tensor::zeros(z.shape());
    for (int n = 0; n < z.dim(0); ++n)
        for (int y = 0; y < z.dim(2); ++y)
            for (int x = 0; x < z.dim(3); ++x) {
                const real e0 = std::exp(z.at4(n, 0, y, x));
                const real e1 = std::exp(z.at4(n, 1, y, x));
                p.at4(n, 0, y, x) = e0 / (e0 + e1);
                p.at4(n, 1, y, x) = e1 / (e0 + e1);
            }
    return p;
}

Tensor random_mask(int b, int h, int w, Rng& rng) {
    Tensor m = Tensor::zeros({b, h, w});
    for (std::int64_t i = 0; i < m.numel(); ++i) m[i] = rng.uniform(0.0, 1.0) < 0.5 ? 0.0 : 1.0;
    return m;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("focal bce matches the hand-computed p=0.5 example") {
    // t=1, p=0.5, gamma=2: pt=0.5, loss = -(0.5)^2 * ln(0.5) = 0.25*ln 2.
    const Tensor p = Tensor::from({1}, {0.5});
    const Tensor t = Tensor::from({1}, {1.0});
    CHECK(focal_bce(p, t, 2.0) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("focal bce with gamma=0 reduces to plain bce") {
    Rng rng(7);
    const Tensor p = testutil::random_tensor({3, 5}, rng, 0.05, 0.95);
    const Tensor t = testutil::random_tensor({3, 5}, rng, 0.0, 1.0);
    real bce = 0.0;
    for (std::int64_t i = 0; i < p.numel(); ++i) {
        bce += -(t[i] * std::log(p[i]) + (1.0 - t[i]) * std::log(1.0 - p[i]));
    }
    bce /= static_cast<real>(p.numel());
    CHECK(std::abs(focal_bce(p, t, 0.0) - bce) < 1e-10);
}

TEST_CASE("focal bce input validation") {
    CHECK_THROWS_AS(focal_bce(Tensor::zeros({2}), Tensor::zeros({3}), 2.0), InputError);
    CHECK_THROWS_AS(focal_bce(Tensor::from({1}, {0.5}), Tensor::from({1}, {1.5}), 2.0),
                    InputError);
    CHECK_THROWS_AS(focal_bce(Tensor::from({1}, {0.5}), Tensor::from({1}, {0.5}), -1.0),
                    InputError);
}

TEST_CASE("complete iou: identical, shifted, and disjoint boxes") {
    // Identical boxes: IoU 1, no center offset, no aspect penalty.
    CHECK(ciou_xyxy(0, 0, 10, 10, 0, 0, 10, 10) == doctest::Approx(1.0).epsilon(1e-9));

    // (0,0,10,10) vs (5,0,15,10): inter 50, union 150 -> IoU 1/3; centers
    // (5,5)/(10,5) -> rho2  25; enclosing (0,0,15,10) -> c2 325; same aspect
    // -> v=0. CIoU = 1/3 - 25/325.
    const real want = 1.0 / 3.0 - 25.0 / 325.0;
    CHECK(ciou_xyxy(0, 0, 10, 10, 5, 0, 15, 10) == doctest::Approx(want).epsilon(1e-8));

    // Far-apart boxes: IoU 0 and a center penalty -> 1 - CIoU exceeds 1.
    const real far = ciou_xyxy(0, 0, 10, 10, 100, 100, 110, 110);
    CHECK(far < 0.0);
    CHECK(1.0 - far > 1.0);
    // Same-aspect boxes: the aspect term vanishes, so CIoU = IoU - rho2/c2.
    // Centers (5,5)/(105,105): rho2 = 2*100^2 = 20000; c2 = 2*110^2 = 24200.
    CHECK(far == doctest::Approx(0.0 - 20000.0 / 24200.0).epsilon(1e-8));
}

TEST_CASE("complete iou penalizes aspect mismatch") {
    // Same IoU geometry, different aspect: CIoU must drop below IoU - rho2/c2.
    const real iou = iou_xyxy(0, 0, 10, 10, 0, 0, 10, 40);
    const real rho2 = (5.0 - 5.0) * (5.0 - 5.0) + (5.0 - 20.0) * (5.0 - 20.0);
    const real c2 = 10.0 * 10.0 + 40.0 * 40.0;
    const real ciou = ciou_xyxy(0, 0, 10, 10, 0, 0, 10, 40);
    CHECK(ciou < iou - rho2 / c2 - 1e-6);
}

TEST_CASE("encode then decode reproduces the box through the real decoder") {
    const int nc = 1, img = 64;
    AnchorSet as = square_anchors();
    const data::Box box = make_box(20.0, 28.0, 18.0, 14.0);

    // Stride 8, cell (2,3): the box center is inside that cell.
    std::array<real, 4> t{};
    REQUIRE(encode_box(box, 8, 2, 3, as.at(0, 1), t));

    std::vector<Tensor> raw = zero_raw(1, img, img, nc);
    Tensor& r0 = raw[0];
    for (int k = 0; k < 4; ++k) r0[raw_at(r0, 0, 1, 3, 2, k)] = t[static_cast<size_t>(k)];
    r0[raw_at(r0, 0, 1, 3, 2, 4)] = 10.0;  // objectness
    r0[raw_at(r0, 0, 1, 3, 2, 5)] = 10.0;  // class

    // Everywhere else conf = sigmoid(0)^2 = 0.25 < 0.9, so exactly one box
    // survives the threshold.
    const std::vector<Detection> dets = decode_boxes(raw, 0, as, nc, 0.9, img, img);
    REQUIRE(dets.size() == 1);
    CHECK(std::abs(dets[0].x1 - 11.0) < 1e-4);
    CHECK(std::abs(dets[0].y1 - 21.0) < 1e-4);
    CHECK(std::abs(dets[0].x2 - 29.0) < 1e-4);
    CHECK(std::abs(dets[0].y2 - 35.0) < 1e-4);
}

TEST_CASE("encode rejects unrepresentable boxes") {
    std::array<real, 4> t{};
    AnchorSet as = square_anchors();
    // Center 60px away from cell (0,0) at stride 8: sigmoid would need 4.0.
    CHECK_FALSE(encode_box(make_box(60, 4, 10, 10), 8, 0, 0, as.at(0, 0), t));
    // Width 20x the anchor: sigmoid would need sqrt(20)/2 > 1.
    CHECK_FALSE(encode_box(make_box(4, 4, 200, 10), 8, 0, 0, as.at(0, 0), t));
}

TEST_CASE("target assignment: gate, neighbor cells, and counts") {
    AnchorSet as = square_anchors();
    // 20x20 box centered at (36,36) on a 64x64 input. Size-ratio gate
    // (max ratio < 4): passes anchors 10..60, fails 80/100/120, so scales 0
    // and 1 contribute 3 anchors each, scale 2 none.
    std::vector<std::vector<data::Box>> gt{{make_box(36, 36, 20, 20)}};
    int rejected = -1;
    const std::vector<TargetSpec> specs = assign_targets(gt, as, 64, 64, &rejected);
    CHECK(rejected == 0);
    CHECK(specs.size() == 18);  // (3 + 3 + 0) anchors x 3 cells

    std::array<int, 3> per_scale{};
    for (const TargetSpec& s : specs) per_scale[static_cast<size_t>(s.scale)]++;
    CHECK(per_scale[0] == 9);
    CHECK(per_scale[1] == 9);
    CHECK(per_scale[2] == 0);

    // Stride 8: grid pos 4.5 -> center cell (4,4), fractions 0.5 pick the
    // right/bottom neighbors.
    std::set<std::pair<int, int>> s0_cells;
    for (const TargetSpec& s : specs) {
        if (s.scale == 0) s0_cells.insert({s.cy, s.cx});
    }
    CHECK(s0_cells == std::set<std::pair<int, int>>{{4, 4}, {4, 5}, {5, 4}});

    // Stride 16: grid pos 2.25, fraction 0.25 picks the left/top neighbors.
    std::set<std::pair<int, int>> s1_cells;
    for (const TargetSpec& s : specs) {
        if (s.scale == 1) s1_cells.insert({s.cy, s.cx});
    }
    CHECK(s1_cells == std::set<std::pair<int, int>>{{2, 2}, {2, 1}, {1, 2}});
}

TEST_CASE("target assignment clamps neighbors at the image corner") {
    AnchorSet as = square_anchors();
    // Center (2,2): cell (0,0), both neighbor offsets clamp back onto (0,0),
    // so each passing anchor yields exactly one cell.
    std::vector<std::vector<data::Box>> gt{{make_box(2, 2, 20, 20)}};
    const std::vector<TargetSpec> specs = assign_targets(gt, as, 64, 64, nullptr);
    int scale0 = 0;
    for (const TargetSpec& s : specs) {
        if (s.scale == 0) {
            ++scale0;
            CHECK(s.cy == 0);
            CHECK(s.cx == 0);
        }
    }
    CHECK(scale0 == 3);
}

TEST_CASE("target assignment skips degenerate and badly sized boxes") {
    AnchorSet as = square_anchors();
    int rejected = -1;
    // Zero-width box: rejected with a warning.
    std::vector<std::vector<data::Box>> degenerate{{make_box(32, 32, 0, 10)}};
    CHECK(assign_targets(degenerate, as, 64, 64, &rejected).empty());
    CHECK(rejected == 1);
    // 2x2 box: every anchor ratio is >= 5, gate closes, but nothing is
    // "rejected" - it is simply unmatched.
    std::vector<std::vector<data::Box>> tiny{{make_box(32, 32, 2, 2)}};
    CHECK(assign_targets(tiny, as, 64, 64, &rejected).empty());
    CHECK(rejected == 0);
}

TEST_CASE("objectness labels carry the decoded-iou soft target") {
    const int nc = 1, img = 64;
    AnchorSet as = square_anchors();

    // Raw offsets that decode exactly to the box: label = weight * IoU = 1.
    data::Box box = make_box(20.0, 28.0, 18.0, 14.0);
    TargetSpec spec;
    spec.image = 0;
    spec.scale = 0;
    spec.anchor = 1;
    spec.cy = 3;
    spec.cx = 2;
    spec.box = box;

    std::vector<Tensor> raw = zero_raw(1, img, img, nc);
    std::array<real, 4> t{};
    REQUIRE(encode_box(box, 8, 2, 3, as.at(0, 1), t));
    for (int k = 0; k < 4; ++k) raw[0][raw_at(raw[0], 0, 1, 3, 2, k)] = t[static_cast<size_t>(k)];

    DetectionTargets targets = build_detection_targets(raw, {spec}, as, nc);
    REQUIRE(targets.positives.size() == 1);
    CHECK(targets.positives[0].obj_label == doctest::Approx(1.0).epsilon(1e-9));

    // Box weight scales the label.
    spec.box.weight = 0.5;
    targets = build_detection_targets(raw, {spec}, as, nc);
    CHECK(targets.positives[0].obj_label == doctest::Approx(0.5).epsilon(1e-9));

    // Zero offsets decode to a cell-centered anchor-sized box; the label must
    // equal the plain IoU against the ground truth.
    std::vector<Tensor> zeros = zero_raw(1, img, img, nc);
    spec.box.weight = 1.0;
    targets = build_detection_targets(zeros, {spec}, as, nc);
    const real aw = as.at(0, 1)[0], ah = as.at(0, 1)[1];
    const real cx = (2 + 0.5) * 8, cy = (3 + 0.5) * 8;
    const real want = iou_xyxy(cx - aw / 2, cy - ah / 2, cx + aw / 2, cy + ah / 2,
                               box.x1, box.y1, box.x2, box.y2);
    CHECK(targets.positives[0].obj_label == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("detection loss with no ground truth is pure background objectness") {
    const int nc = 1, img = 32;
    AnchorSet as = square_anchors();
    LossWeights w;

    std::vector<ag::Var> raw;
    for (Tensor& t : zero_raw(1, img, img, nc)) raw.push_back(ag::leaf(std::move(t)));
    const DetectionLoss dl = detection_loss(raw, {}, as, w, nc);

    CHECK(ag::scalar_value(dl.class_loss) == 0.0);
    CHECK(ag::scalar_value(dl.box_loss) == 0.0);
    // Every cell: t=0, p=sigmoid(0)=0.5 -> focal = -(0.5)^2 ln(0.5).
    CHECK(ag::scalar_value(dl.obj_loss) ==
          doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("detection loss gradients match finite differences") {
    const int nc = 2, img = 32;
    AnchorSet as = square_anchors();
    LossWeights w;
    Rng rng(11);

    std::vector<Tensor> base;
    for (Tensor& t : zero_raw(1, img, img, nc)) {
        Tensor r = testutil::random_tensor(t.shape(), rng, -0.8, 0.8);
        base.push_back(std::move(r));
    }
    std::vector<std::vector<data::Box>> gt{
        {make_box(10, 12, 14, 18, 0), make_box(24, 20, 30, 26, 1)}};
    const std::vector<TargetSpec> assigned = assign_targets(gt, as, img, img, nullptr);
    REQUIRE(!assigned.empty());
    const DetectionTargets targets = build_detection_targets(base, assigned, as, nc);

    // Frozen targets make the three terms smooth functions of the raw logits.
    const auto total_of = [&](const std::vector<Tensor>& vals) {
        std::vector<ag::Var> vars;
        for (const Tensor& t : vals) vars.push_back(ag::leaf(t, false));
        const DetectionLoss dl = detection_loss_terms(vars, targets, as, w, nc);
        return w.alpha1 * ag::scalar_value(dl.class_loss) +
               w.alpha2 * ag::scalar_value(dl.obj_loss) +
               w.alpha3 * ag::scalar_value(dl.box_loss);
    };

    std::vector<ag::Var> vars;
    for (const Tensor& t : base) vars.push_back(ag::leaf(t));
    const DetectionLoss dl = detection_loss_terms(vars, targets, as, w, nc);
    const ag::Var total = ag::weighted_sum({dl.class_loss, dl.obj_loss, dl.box_loss},
                                           {w.alpha1, w.alpha2, w.alpha3});
    ag::backward(total);

    for (size_t s = 0; s < base.size(); ++s) {
        const Tensor fd = testutil::fd_grad(
            [&](const Tensor& x) {
                std::vector<Tensor> vals = base;
                vals[s] = x;
                return total_of(vals);
            },
            base[s]);
        CHECK(testutil::rel_err(vars[s]->grad, fd) < 5e-4);
    }
}

TEST_CASE("detection loss is invariant to ground-truth ordering") {
    const int nc = 1, img = 32;
    AnchorSet as = square_anchors();
    LossWeights w;
    Rng rng(3);

    std::vector<ag::Var> raw;
    for (Tensor& t : zero_raw(1, img, img, nc)) {
        raw.push_back(ag::leaf(testutil::random_tensor(t.shape(), rng, -0.5, 0.5)));
    }
    // Overlapping boxes that share assignment cells.
    const data::Box a = make_box(16, 16, 18, 18), b = make_box(18, 17, 22, 20);
    const std::vector<TargetSpec> ab = assign_targets({{a, b}}, as, img, img, nullptr);
    const std::vector<TargetSpec> ba = assign_targets({{b, a}}, as, img, img, nullptr);

    const DetectionLoss l1 = detection_loss(raw, ab, as, w, nc);
    const DetectionLoss l2 = detection_loss(raw, ba, as, w, nc);
    CHECK(ag::scalar_value(l1.class_loss) ==
          doctest::Approx(ag::scalar_value(l2.class_loss)).epsilon(1e-14));
    CHECK(ag::scalar_value(l1.obj_loss) ==
          doctest::Approx(ag::scalar_value(l2.obj_loss)).epsilon(1e-14));
    CHECK(ag::scalar_value(l1.box_loss) ==
          doctest::Approx(ag::scalar_value(l2.box_loss)).epsilon(1e-14));
}

TEST_CASE("segmentation cross-entropy: uniform logits give ln 2") {
    Rng rng(5);
    const Tensor gt = random_mask(2, 3, 4, rng);
    const ag::Var logits = ag::leaf(Tensor::zeros({2, 2, 3, 4}));
    const ag::Var loss = cross_entropy_seg(logits, gt);
    CHECK(ag::scalar_value(loss) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // Gradient at uniform logits: (p - onehot)/N with p = 0.5.
    ag::backward(loss);
    const real inv_n = 1.0 / 24.0;
    for (int n = 0; n < 2; ++n)
        for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 4; ++x) {
                const int g = static_cast<int>(gt[(static_cast<std::int64_t>(n) * 3 + y) * 4 + x]);
                CHECK(logits->grad.at4(n, g, y, x) == doctest::Approx(-0.5 * inv_n));
                CHECK(logits->grad.at4(n, 1 - g, y, x) == doctest::Approx(0.5 * inv_n));
            }
}

TEST_CASE("segmentation cross-entropy: confident correct logits vanish") {
    const Tensor gt = Tensor::from({1, 1, 2}, {1.0, 0.0});
    Tensor z = Tensor::zeros({1, 2, 1, 2});
    z.at4(0, 1, 0, 0) = 20.0;  // true class 1
    z.at4(0, 0, 0, 1) = 20.0;  // true class 0
    CHECK(ag::scalar_value(cross_entropy_seg(ag::leaf(z), gt)) < 1e-8);
}

TEST_CASE("segmentation cross-entropy gradient matches finite differences") {
    Rng rng(17);
    const Tensor gt = random_mask(1, 3, 4, rng);
    const Tensor base = testutil::random_tensor({1, 2, 3, 4}, rng, -1.5, 1.5);

    const ag::Var logits = ag::leaf(base);
    const ag::Var loss = cross_entropy_seg(logits, gt);
    ag::backward(loss);

    const Tensor fd = testutil::fd_grad(
        [&](const Tensor& x) { return ag::scalar_value(cross_entropy_seg(ag::leaf(x, false), gt)); },
        base);
    CHECK(testutil::rel_err(logits->grad, fd) < 1e-6);
}

TEST_CASE("segmentation cross-entropy rejects malformed masks") {
    CHECK_THROWS_AS(cross_entropy_seg(ag::leaf(Tensor::zeros({1, 2, 2, 2})),
                                      Tensor::from({1, 2, 2}, {0, 1, 2, 0})),
                    InputError);
    CHECK_THROWS_AS(cross_entropy_seg(ag::leaf(Tensor::zeros({1, 3, 2, 2})),
                                      Tensor::zeros({1, 2, 2})),
                    InputError);
    CHECK_THROWS_AS(cross_entropy_seg(ag::leaf(Tensor::zeros({1, 2, 2, 2})),
                                      Tensor::zeros({1, 2, 3})),
                    InputError);
}

TEST_CASE("tversky counts on the uniform half-probability example") {
    // 2x2 mask with two pixels per class, p = 0.5 everywhere:
    // per class TP = 0.5*2 = 1, FN = 0.5*2 = 1, FP = 0.5*2 = 1, exactly.
    const Tensor gt = Tensor::from({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    const Tensor probs = Tensor::full({1, 2, 2, 2}, 0.5);
    const ClassCounts c = tversky_counts(probs, onehot2(gt));
    for (int k = 0; k < 2; ++k) {
        CHECK(c.tp[k] == 1.0);
        CHECK(c.fn[k] == 1.0);
        CHECK(c.fp[k] == 1.0);
    }
}

TEST_CASE("tversky count identities hold exactly on random inputs") {
    Rng rng(23);
    const Tensor gt = random_mask(1, 5, 7, rng);
    const Tensor oh = onehot2(gt);
    Tensor probs = Tensor::zeros({1, 2, 5, 7});
    real p1_sum = 0.0;
    int n1 = 0;
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 7; ++x) {
            const real p1 = rng.uniform(0.01, 0.99);
            probs.at4(0, 1, y, x) = p1;
            probs.at4(0, 0, y, x) = 1.0 - p1;
            p1_sum += p1;
            if (gt[static_cast<std::int64_t>(y) * 7 + x] == 1.0) ++n1;
        }
    const ClassCounts c = tversky_counts(probs, oh);
    // TP_c + FN_c = pixel count of class c; TP_c + FP_c = total mass of c.
    CHECK(c.tp[1] + c.fn[1] == doctest::Approx(static_cast<real>(n1)).epsilon(1e-12));
    CHECK(c.tp[0] + c.fn[0] == doctest::Approx(static_cast<real>(35 - n1)).epsilon(1e-12));
    CHECK(c.tp[1] + c.fp[1] == doctest::Approx(p1_sum).epsilon(1e-12));
    CHECK(c.tp[0] + c.fp[0] == doctest::Approx(35.0 - p1_sum).epsilon(1e-12));
}

TEST_CASE("tversky counts validate their inputs") {
    const Tensor gt = Tensor::from({1, 1, 2}, {1.0, 0.0});
    Tensor bad_probs = Tensor::full({1, 2, 1, 2}, 0.4);  // columns sum to 0.8
    CHECK_THROWS_AS(tversky_counts(bad_probs, onehot2(gt)), InputError);
    Tensor bad_onehot = Tensor::full({1, 2, 1, 2}, 1.0);  // both classes set
    CHECK_THROWS_AS(tversky_counts(Tensor::full({1, 2, 1, 2}, 0.5), bad_onehot), InputError);
    CHECK_THROWS_AS(tversky_counts(Tensor::full({1, 2, 1, 2}, 0.5), Tensor::zeros({1, 2, 2, 2})),
                    InputError);
}

TEST_CASE("hybrid loss on the uniform half-probability example") {
    // Dice part: per class TP/(TP + 0.5 FN + 0.5 FP + eps) = 1/(2+eps), so
    // 2 - sum = 1 (up to eps). Focal part: every pixel contributes
    // (1-0.5)^2 * ln 2 for its true class; (gamma/N) * 4 * 0.25 * ln 2
    // = 0.25 * ln 2. Total = 1 + 0.25*ln 2 = 1.17329...
    const Tensor gt = Tensor::from({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    const Tensor probs = Tensor::full({1, 2, 2, 2}, 0.5);
    LossWeights w;
    const real want = 1.0 + 0.25 * std::log(2.0);
    CHECK(hybrid_seg_loss(probs, onehot2(gt), w) == doctest::Approx(want).epsilon(1e-5));
}

TEST_CASE("hybrid loss with alpha=beta=0.5 recovers soft dice") {
    Rng rng(31);
    const Tensor gt = random_mask(1, 4, 6, rng);
    const Tensor oh = onehot2(gt);
    Tensor probs = Tensor::zeros({1, 2, 4, 6});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 6; ++x) {
            const real p1 = rng.uniform(0.05, 0.95);
            probs.at4(0, 1, y, x) = p1;
            probs.at4(0, 0, y, x) = 1.0 - p1;
        }
    LossWeights w;
    w.gamma_tradeoff = 0.0;  // isolate the dice part
    w.seg_eps = 0.0;

    // Independent soft-dice: 2 TP / (2 TP + FN + FP) per class.
    real dice_sum = 0.0;
    for (int c = 0; c < 2; ++c) {
        real tp = 0, fn = 0, fp = 0;
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 6; ++x) {
                const real p = probs.at4(0, c, y, x);
                const real g = oh.at4(0, c, y, x);
                tp += p * g;
                fn += (1 - p) * g;
                fp += p * (1 - g);
            }
        dice_sum += 2 * tp / (2 * tp + fn + fp);
    }
    CHECK(hybrid_seg_loss(probs, oh, w) == doctest::Approx(2.0 - dice_sum).epsilon(1e-12));
}

TEST_CASE("lane loss value agrees with the probability-space hybrid loss") {
    Rng rng(41);
    const Tensor gt = random_mask(2, 3, 5, rng);
    const Tensor z = testutil::random_tensor({2, 2, 3, 5}, rng, -2.0, 2.0);
    LossWeights w;
    const real via_logits = ag::scalar_value(lane_loss(ag::leaf(z, false), gt, w,
                                                       "focal_plus_dice"));
    const real via_probs = hybrid_seg_loss(softmax_ref(z), onehot2(gt), w);
    CHECK(via_logits == doctest::Approx(via_probs).epsilon(1e-10));
}

TEST_CASE("lane loss focal-only value matches an independent loop") {
    Rng rng(43);
    const Tensor gt = random_mask(1, 4, 4, rng);
    const Tensor z = testutil::random_tensor({1, 2, 4, 4}, rng, -2.0, 2.0);
    const Tensor p = softmax_ref(z);
    LossWeights w;
    real want = 0.0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const int g = static_cast<int>(gt[static_cast<std::int64_t>(y) * 4 + x]);
            const real pc = p.at4(0, g, y, x);
            want += std::pow(1.0 - pc, w.focal_gamma) * (-std::log(pc));
        }
    want /= 16.0;
    CHECK(ag::scalar_value(lane_loss(ag::leaf(z, false), gt, w, "focal")) ==
          doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("lane loss gradients match finite differences for both kinds") {
    Rng rng(47);
    const Tensor gt = random_mask(1, 3, 4, rng);
    const Tensor base = testutil::random_tensor({1, 2, 3, 4}, rng, -1.5, 1.5);
    LossWeights w;

    for (const char* kind : {"focal_plus_dice", "focal"}) {
        const ag::Var logits = ag::leaf(base);
        const ag::Var loss = lane_loss(logits, gt, w, kind);
        ag::backward(loss);
        const Tensor fd = testutil::fd_grad(
            [&](const Tensor& x) {
                return ag::scalar_value(lane_loss(ag::leaf(x, false), gt, w, kind));
            },
            base);
        CHECK(testutil::rel_err(logits->grad, fd) < 1e-4);
    }
}

TEST_CASE("lane loss rejects unknown kinds") {
    CHECK_THROWS_AS(lane_loss(ag::leaf(Tensor::zeros({1, 2, 2, 2})), Tensor::zeros({1, 2, 2}),
                              LossWeights{}, "dice"),
                    ConfigError);
}

TEST_CASE("joint loss breakdown identity and finite gradients") {
    const int nc = 1, img = 32;
    AnchorSet as = square_anchors();
    LossWeights w;
    Rng rng(53);

    for (int rep = 0; rep < 3; ++rep) {
        std::vector<ag::Var> raw;
        for (Tensor& t : zero_raw(1, img, img, nc)) {
            raw.push_back(ag::leaf(testutil::random_tensor(t.shape(), rng, -0.7, 0.7)));
        }
        const ag::Var drivable = ag::leaf(testutil::random_tensor({1, 2, img, img}, rng, -1, 1));
        const ag::Var lane = ag::leaf(testutil::random_tensor({1, 2, img, img}, rng, -1, 1));
        const Tensor drivable_gt = random_mask(1, img, img, rng);
        const Tensor lane_gt = random_mask(1, img, img, rng);
        std::vector<std::vector<data::Box>> gt{{make_box(14, 18, 16, 12)}};

        const JointLoss jl = joint_loss(raw, drivable, lane, gt, drivable_gt, lane_gt, as, w,
                                        nc, "focal_plus_dice");
        // The reported total is exactly the weighted sum of the parts.
        CHECK(jl.breakdown.total ==
              doctest::Approx(LossBreakdown::weighted_total(jl.breakdown, w)).epsilon(1e-10));
        CHECK(jl.breakdown.total == doctest::Approx(ag::scalar_value(jl.total)).epsilon(1e-14));

        ag::backward(jl.total);
        for (const ag::Var& v : raw) {
            REQUIRE(!v->grad.empty());
            for (std::int64_t i = 0; i < v->grad.numel(); ++i) CHECK(std::isfinite(v->grad[i]));
        }
        REQUIRE(!drivable->grad.empty());
        REQUIRE(!lane->grad.empty());
        CHECK(drivable->grad.abs_max() > 0.0);
        CHECK(lane->grad.abs_max() > 0.0);
    }
}

}  // TEST_SUITE
