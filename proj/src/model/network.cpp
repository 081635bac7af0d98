#include "pdp/model/network.hpp"

namespace pdp {

namespace {

int half_floor8(int c) { return std::max(c / 2, 8); }

}  // namespace

// ---- ElanBlock -----------------------------------------------------------

ElanBlock::ElanBlock(int cin, int cout, int groups, Rng& rng)
    : shortcut(cin, cin / 2, 1, 1, 1, rng),
      entry(cin, cin / 2, 1, 1, 1, rng),
      deep1(cin / 2, cin / 2, 3, 1, groups, rng),
      deep2(cin / 2, cin / 2, 3, 1, groups, rng),
      merge(3 * (cin / 2), cout, 1, 1, 1, rng) {
    if (cin % 2 || (cin / 2) % groups)
        throw ConfigError("elan block: input channels " + std::to_string(cin) +
                          " incompatible with group count " + std::to_string(groups));
}

ag::Var ElanBlock::forward(const ag::Var& x, bool training) {
    ag::Var a = shortcut.forward(x, training);
    ag::Var m = entry.forward(x, training);
    ag::Var d1 = deep1.forward(m, training);
    ag::Var d2 = deep2.forward(d1, training);
    return merge.forward(ag::concat_channels({a, d1, d2}), training);
}

void ElanBlock::collect(const std::string& prefix, nn::ParamRegistry& reg) {
    shortcut.collect(prefix + ".shortcut", reg);
    entry.collect(prefix + ".entry", reg);
    deep1.collect(prefix + ".deep1", reg);
    deep2.collect(prefix + ".deep2", reg);
    merge.collect(prefix + ".merge", reg);
}

// ---- SppBlock ------------------------------------------------------------

SppBlock::SppBlock(int channels, std::vector<int> ks, Rng& rng)
    : reduce(channels, channels / 2, 1, 1, 1, rng),
      project((channels / 2) * (1 + static_cast<int>(ks.size())), channels, 1, 1, 1, rng),
      kernels(std::move(ks)) {
    for (int k : kernels)
        if (k < 1 || k % 2 == 0)
            throw ConfigError("spp kernel sizes must be odd and >= 1, got " + std::to_string(k));
}

ag::Var SppBlock::forward(const ag::Var& x, bool training) {
    ag::Var r = reduce.forward(x, training);
    std::vector<ag::Var> branches{r};
    for (int k : kernels) branches.push_back(ag::max_pool_same(r, k));
    return project.forward(ag::concat_channels(branches), training);
}

void SppBlock::collect(const std::string& prefix, nn::ParamRegistry& reg) {
    reduce.collect(prefix + ".reduce", reg);
    project.collect(prefix + ".project", reg);
}

// ---- Backbone ------------------------------------------------------------

Backbone::Backbone(const ModelConfig& cfg, Rng& rng)
    : stem(3, cfg.stage_channels[0], 3, 2, 1, rng),
      spp(cfg.stage_channels[3], cfg.spp_kernels, rng) {
    int prev = cfg.stage_channels[0];
    for (int i = 0; i < 4; ++i) {
        const int ch = cfg.stage_channels[static_cast<size_t>(i)];
        Stage st;
        st.down = std::make_unique<nn::ConvBlock>(prev, ch, 3, 2, 1, rng);
        for (int j = 0; j < cfg.elan_per_stage; ++j)
            st.elans.emplace_back(ch, ch, cfg.group_count, rng);
        stages.push_back(std::move(st));
        prev = ch;
    }
}

std::vector<FeatureMapVar> Backbone::forward_stages(const ag::Var& image, bool training) {
    const Tensor& img = image->value;
    if (img.ndim() != 4 || img.dim(1) != 3)
        throw InputError("backbone: expected (b,3,H,W) input, got " + shape_str(img.shape()));
    if (img.dim(2) % 32 || img.dim(3) % 32)
        throw InputError("backbone: spatial dims must be divisible by 32, got " +
                         std::to_string(img.dim(3)) + "x" + std::to_string(img.dim(2)));

    ag::Var x = stem.forward(image, training);  // stride 2
    std::vector<FeatureMapVar> feats;
    int stride = 2;
    for (size_t i = 0; i < stages.size(); ++i) {
        x = stages[i].down->forward(x, training);
        stride *= 2;
        for (auto& e : stages[i].elans) x = e.forward(x, training);
        if (stride >= 8) feats.push_back({x, stride});
    }
    feats.back() = {spp.forward(feats.back().data, training), feats.back().stride};
    return feats;  // strides 8, 16, 32; deepest SPP-fused
}

void Backbone::collect(const std::string& prefix, nn::ParamRegistry& reg) {
    stem.collect(prefix + ".stem", reg);
    for (size_t i = 0; i < stages.size(); ++i) {
        const std::string sp = prefix + ".stage" + std::to_string(i + 1);
        stages[i].down->collect(sp + ".down", reg);
        for (size_t j = 0; j < stages[i].elans.size(); ++j)
            stages[i].elans[j].collect(sp + ".elan" + std::to_string(j + 1), reg);
    }
    spp.collect(prefix + ".spp", reg);
}

// ---- Fpn -----------------------------------------------------------------

Fpn::Fpn(const std::vector<int>& ch, Rng& rng)
    : reduce32(ch[2], ch[1], 1, 1, 1, rng),
      lat16(ch[1], ch[1], 1, 1, 1, rng),
      merge16(2 * ch[1], ch[1], 3, 1, 1, rng),
      reduce16(ch[1], ch[0], 1, 1, 1, rng),
      lat8(ch[0], ch[0], 1, 1, 1, rng),
      merge8(2 * ch[0], ch[0], 3, 1, 1, rng) {}

PyramidFeatures Fpn::forward(const std::vector<FeatureMapVar>& stage_feats, bool training) {
    if (stage_feats.size() != 3)
        throw InputError("fpn: expected 3 stage features, got " + std::to_string(stage_feats.size()));
    for (int i = 0; i < 3; ++i) {
        if (stage_feats[static_cast<size_t>(i)].stride != ModelConfig::strides()[static_cast<size_t>(i)])
            throw InputError("fpn: stage " + std::to_string(i) + " has stride " +
                             std::to_string(stage_feats[static_cast<size_t>(i)].stride) + ", expected " +
                             std::to_string(ModelConfig::strides()[static_cast<size_t>(i)]));
    }

    PyramidFeatures out;
    out.pre_fpn_tap = stage_feats[0];  // untouched: no fused information

    const ag::Var& s8 = stage_feats[0].data;
    const ag::Var& s16 = stage_feats[1].data;
    const ag::Var& s32 = stage_feats[2].data;

    ag::Var f32 = s32;
    ag::Var up16 = ag::upsample2(reduce32.forward(f32, training));
    ag::Var f16 = merge16.forward(ag::concat_channels({lat16.forward(s16, training), up16}), training);
    ag::Var up8 = ag::upsample2(reduce16.forward(f16, training));
    ag::Var f8 = merge8.forward(ag::concat_channels({lat8.forward(s8, training), up8}), training);

    out.levels = {{f8, 8}, {f16, 16}, {f32, 32}};
    return out;
}

void Fpn::collect(const std::string& prefix, nn::ParamRegistry& reg) {
    reduce32.collect(prefix + ".reduce32", reg);
    lat16.collect(prefix + ".lat16", reg);
    merge16.collect(prefix + ".merge16", reg);
    reduce16.collect(prefix + ".reduce16", reg);
    lat8.collect(prefix + ".lat8", reg);
    merge8.collect(prefix + ".merge8", reg);
}

// ---- Pan -----------------------------------------------------------------

Pan::Pan(const std::vector<int>& ch, Rng& rng)
    : down8(ch[0], ch[0], 3, 2, 1, rng),
      merge16(ch[0] + ch[1], ch[1], 3, 1, 1, rng),
      down16(ch[1], ch[1], 3, 2, 1, rng),
      merge32(ch[1] + ch[2], ch[2], 3, 1, 1, rng) {}

PyramidFeatures Pan::forward(const PyramidFeatures& p, bool training) {
    if (p.levels.size() != 3) throw InputError("pan: expected 3 pyramid levels");
    const ag::Var& f8 = p.levels[0].data;
    const ag::Var& f16 = p.levels[1].data;
    const ag::Var& f32 = p.levels[2].data;

    ag::Var p8 = f8;
    ag::Var p16 = merge16.forward(ag::concat_channels({down8.forward(p8, training), f16}), training);
    ag::Var p32 = merge32.forward(ag::concat_channels({down16.forward(p16, training), f32}), training);

    PyramidFeatures out;
    out.levels = {{p8, 8}, {p16, 16}, {p32, 32}};
    out.pre_fpn_tap = p.pre_fpn_tap;
    return out;
}

void Pan::collect(const std::string& prefix, nn::ParamRegistry& reg) {
    down8.collect(prefix + ".down8", reg);
    merge16.collect(prefix + ".merge16", reg);
    down16.collect(prefix + ".down16", reg);
    merge32.collect(prefix + ".merge32", reg);
}

// ---- DetectHead ----------------------------------------------------------

DetectHead::DetectHead(const std::vector<int>& ch, int nc, Rng& rng) : num_classes(nc) {
    const int out_ch = 3 * (5 + nc);
    for (int i = 0; i < 3; ++i) {
        preds.emplace_back(ch[static_cast<size_t>(i)], out_ch, 1, 1, 0, 1, /*bias=*/true, rng);
        // Start objectness strongly negative so the grid begins near-empty.
        for (int a = 0; a < 3; ++a) preds.back().b->value[a * (5 + nc) + 4] = -4.0;
    }
}

std::vector<ag::Var> DetectHead::forward(const PyramidFeatures& p) {
    if (p.levels.size() != preds.size()) throw InputError("detect head: pyramid level count mismatch");
    std::vector<ag::Var> out;
    for (size_t i = 0; i < preds.size(); ++i)
        out.push_back(ag::anchor_layout(preds[i].forward(p.levels[i].data), 3));
    return out;
}

void DetectHead::collect(const std::string& prefix, nn::ParamRegistry& reg) {
    for (size_t i = 0; i < preds.size(); ++i)
        preds[i].collect(prefix + ".p" + std::to_string(ModelConfig::strides()[i]), reg);
}

// ---- SegDecoder ----------------------------------------------------------

SegDecoder SegDecoder::drivable(int cin, Rng& rng) {
    SegDecoder d;
    int c = cin;
    // Project the stride-8 tap down to stride 16, then climb back with four
    // nearest upsamplings: 16 -> 8 -> 4 -> 2 -> 1.
    {
        Step s;
        s.kind = StepKind::Conv;
        s.conv = std::make_unique<nn::ConvBlock>(c, c, 3, 2, 1, rng);
        d.steps.push_back(std::move(s));
    }
    for (int i = 0; i < 4; ++i) {
        const int next = half_floor8(c);
        Step s;
        s.kind = StepKind::Upsample;
        s.conv = std::make_unique<nn::ConvBlock>(c, next, 3, 1, 1, rng);
        d.steps.push_back(std::move(s));
        c = next;
    }
    d.head = std::make_unique<nn::Conv2d>(c, 2, 1, 1, 0, 1, true, rng);
    return d;
}

SegDecoder SegDecoder::lane(int cin, const std::string& decoder_kind, Rng& rng) {
    SegDecoder d;
    int c = cin;
    for (int i = 0; i < 5; ++i) {  // stride 32 -> full resolution
        const int next = half_floor8(c);
        Step s;
        if (decoder_kind == "transposed_conv") {
            s.kind = StepKind::Deconv;
            s.deconv = std::make_unique<nn::DeconvBlock>(c, next, rng);
        } else if (decoder_kind == "nearest_upsample") {
            s.kind = StepKind::Upsample;
            s.conv = std::make_unique<nn::ConvBlock>(c, next, 3, 1, 1, rng);
        } else {
            throw ConfigError("unknown lane decoder kind: " + decoder_kind);
        }
        d.steps.push_back(std::move(s));
        c = next;
    }
    d.head = std::make_unique<nn::Conv2d>(c, 2, 1, 1, 0, 1, true, rng);
    return d;
}

ag::Var SegDecoder::forward(const ag::Var& x, bool training) {
    ag::Var h = x;
    for (auto& s : steps) {
        switch (s.kind) {
            case StepKind::Conv: h = s.conv->forward(h, training); break;
            case StepKind::Upsample: h = s.conv->forward(ag::upsample2(h), training); break;
            case StepKind::Deconv: h = s.deconv->forward(h, training); break;
        }
    }
    return head->forward(h);
}

int SegDecoder::upsample_count() const {
    int n = 0;
    for (const auto& s : steps) n += s.kind == StepKind::Upsample ? 1 : 0;
    return n;
}

int SegDecoder::deconv_count() const {
    int n = 0;
    for (const auto& s : steps) n += s.kind == StepKind::Deconv ? 1 : 0;
    return n;
}

void SegDecoder::collect(const std::string& prefix, nn::ParamRegistry& reg) {
    for (size_t i = 0; i < steps.size(); ++i) {
        const std::string sp = prefix + ".step" + std::to_string(i + 1);
        if (steps[i].conv) steps[i].conv->collect(sp, reg);
        if (steps[i].deconv) steps[i].deconv->collect(sp, reg);
    }
    head->collect(prefix + ".head", reg);
}

// ---- Network -------------------------------------------------------------

namespace {
const ModelConfig& validated(const ModelConfig& c) {
    c.validate();
    return c;
}
}  // namespace

Network::Network(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(validated(cfg)),
      init_rng_(seed),
      backbone(cfg_, init_rng_),
      fpn({cfg_.stage_channels[1], cfg_.stage_channels[2], cfg_.stage_channels[3]}, init_rng_),
      pan({cfg_.stage_channels[1], cfg_.stage_channels[2], cfg_.stage_channels[3]}, init_rng_),
      detect({cfg_.stage_channels[1], cfg_.stage_channels[2], cfg_.stage_channels[3]}, cfg_.num_classes, init_rng_),
      drivable_head(SegDecoder::drivable(cfg_.stage_channels[1], init_rng_)),
      lane_head(SegDecoder::lane(cfg_.stage_channels[3], cfg_.lane_decoder_kind, init_rng_)) {
    backbone.collect("backbone", reg_);
    fpn.collect("fpn", reg_);
    pan.collect("pan", reg_);
    detect.collect("detect", reg_);
    drivable_head.collect("drivable", reg_);
    lane_head.collect("lane", reg_);
}

Network::Output Network::forward(const ag::Var& image) {
    auto stage_feats = backbone.forward_stages(image, training_);
    PyramidFeatures enc = fpn.forward(stage_feats, training_);
    PyramidFeatures agg = pan.forward(enc, training_);

    Output out;
    out.det_raw = detect.forward(agg);
    out.drivable_logits = drivable_head.forward(enc.pre_fpn_tap.data, training_);
    out.lane_logits = lane_head.forward(enc.levels[2].data, training_);
    out.encoder = enc;
    return out;
}

Network::Output Network::forward(const Tensor& image) { return forward(ag::constant(image, "image")); }

void Network::zero_grad() {
    for (auto& p : reg_.params) p.var->grad = Tensor();
}

}  // namespace pdp
