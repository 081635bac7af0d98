#include "pdp/model/config.hpp"

#include <fstream>
#include <sstream>

namespace pdp {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

real parse_real(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const real r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": cannot parse '" + v + "' as a number");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    const real r = parse_real(key, v);
    const int i = static_cast<int>(r);
    if (static_cast<real>(i) != r) throw ConfigError("config key " + key + ": '" + v + "' is not an integer");
    return i;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + ": expected true/false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    for (const auto& tok : split(v, ',')) out.push_back(parse_int(key, tok));
    return out;
}

std::string int_list_str(const std::vector<int>& xs) {
    std::string s;
    for (size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
    return s;
}

std::string real_str(real v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

std::string anchors_str(const std::vector<std::array<real, 2>>& a) {
    std::string s;
    for (size_t i = 0; i < a.size(); ++i) {
        if (i) s += ",";
        s += real_str(a[i][0]) + "," + real_str(a[i][1]);
    }
    return s;
}

std::vector<std::array<real, 2>> parse_anchors(const std::string& key, const std::string& v) {
    const auto toks = split(v, ',');
    if (toks.size() % 2 != 0) throw ConfigError("config key " + key + ": odd number of anchor values");
    std::vector<std::array<real, 2>> out;
    for (size_t i = 0; i < toks.size(); i += 2)
        out.push_back({parse_real(key, toks[i]), parse_real(key, toks[i + 1])});
    return out;
}

}  // namespace

const std::vector<int>& ModelConfig::strides() {
    static const std::vector<int> s = {8, 16, 32};
    return s;
}

ModelConfig ModelConfig::base() {
    ModelConfig c;
    c.anchors = tiny().anchors;  // same prior shapes; desk-scale data either way
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.input_w = 256;
    c.input_h = 160;
    c.stage_channels = {16, 32, 64, 128};
    c.elan_per_stage = 1;
    c.group_count = 2;
    // Priors from k-means over the synthetic generator's box distribution
    // (see tools: gen-synth --print-anchors), 3 per scale by ascending area.
    c.anchors = {{19, 14}, {26, 17}, {35, 27},
                 {44, 31}, {57, 39}, {76, 47},
                 {70, 55}, {87, 63}, {95, 75}};
    return c;
}

void ModelConfig::validate() const {
    if (input_w <= 0 || input_h <= 0 || input_w % 32 || input_h % 32)
        throw ConfigError("model input size " + std::to_string(input_w) + "x" + std::to_string(input_h) +
                          " must be positive and divisible by 32");
    if (stage_channels.size() != 4) throw ConfigError("model needs exactly 4 stage channel counts");
    for (int ch : stage_channels) {
        if (ch <= 0 || ch % group_count || (ch / 2) % group_count || ch % 2)
            throw ConfigError("stage channels must be even and divisible by group_count (got " +
                              std::to_string(ch) + " with groups " + std::to_string(group_count) + ")");
    }
    if (elan_per_stage < 1) throw ConfigError("elan_per_stage must be >= 1");
    if (group_count < 1) throw ConfigError("group_count must be >= 1");
    if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
    if (anchors.size() != 9) throw ConfigError("expected 9 anchors (3 scales x 3), got " + std::to_string(anchors.size()));
    for (const auto& a : anchors)
        if (a[0] <= 0 || a[1] <= 0) throw ConfigError("anchor sizes must be positive");
    for (int k : spp_kernels)
        if (k < 1 || k % 2 == 0) throw ConfigError("spp kernels must be odd and >= 1");
    if (lane_decoder_kind != "transposed_conv" && lane_decoder_kind != "nearest_upsample")
        throw ConfigError("lane_decoder_kind must be transposed_conv or nearest_upsample, got " + lane_decoder_kind);
    if (lane_loss_kind != "focal_plus_dice" && lane_loss_kind != "focal")
        throw ConfigError("lane_loss_kind must be focal_plus_dice or focal, got " + lane_loss_kind);
}

void LossWeights::validate() const {
    if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0 || obj_pos_weight < 0 || gamma_tradeoff < 0 ||
        tversky_alpha < 0 || tversky_beta < 0 || focal_gamma < 0 || seg_eps <= 0)
        throw ConfigError("loss weights must be non-negative (seg_eps strictly positive)");
}

void TrainConfig::validate() const {
    if (initial_lr <= 0 || final_lr_fraction <= 0 || final_lr_fraction > 1)
        throw ConfigError("learning-rate settings out of range");
    if (warmup_epochs < 0 || total_epochs <= 0 || warmup_epochs >= total_epochs)
        throw ConfigError("warmup_epochs must be in [0, total_epochs)");
    if (momentum < 0 || momentum >= 1 || weight_decay < 0) throw ConfigError("optimizer settings out of range");
    if (batch_size < 1 || eval_every < 1) throw ConfigError("batch_size and eval_every must be >= 1");
    if (aug_off_last_epochs < 0 || mosaic_prob < 0 || mosaic_prob > 1 || mixup_prob < 0 ||
        mixup_prob > 1 || hsv_jitter < 0 || hsv_jitter >= 1)
        throw ConfigError("augmentation settings out of range");
    if (train_w <= 0 || train_h <= 0 || train_w % 32 || train_h % 32)
        throw ConfigError("train size must be positive and divisible by 32");
}

RunConfig RunConfig::desk() {
    RunConfig c;
    c.model = ModelConfig::tiny();
    c.train.train_w = 256;
    c.train.train_h = 160;
    c.train.batch_size = 4;
    c.train.total_epochs = 20;
    c.train.eval_every = 5;
    return c;
}

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    const std::string v = trim(value);
    if (key == "model.input_w") model.input_w = parse_int(key, v);
    else if (key == "model.input_h") model.input_h = parse_int(key, v);
    else if (key == "model.stage_channels") model.stage_channels = parse_int_list(key, v);
    else if (key == "model.elan_per_stage") model.elan_per_stage = parse_int(key, v);
    else if (key == "model.group_count") model.group_count = parse_int(key, v);
    else if (key == "model.num_classes") model.num_classes = parse_int(key, v);
    else if (key == "model.spp_kernels") model.spp_kernels = parse_int_list(key, v);
    else if (key == "model.anchors") model.anchors = parse_anchors(key, v);
    else if (key == "model.use_mosaic") model.use_mosaic = parse_bool(key, v);
    else if (key == "model.use_mixup") model.use_mixup = parse_bool(key, v);
    else if (key == "model.lane_decoder_kind") model.lane_decoder_kind = v;
    else if (key == "model.lane_loss_kind") model.lane_loss_kind = v;
    else if (key == "train.initial_lr") train.initial_lr = parse_real(key, v);
    else if (key == "train.final_lr_fraction") train.final_lr_fraction = parse_real(key, v);
    else if (key == "train.warmup_epochs") train.warmup_epochs = parse_int(key, v);
    else if (key == "train.total_epochs") train.total_epochs = parse_int(key, v);
    else if (key == "train.momentum") train.momentum = parse_real(key, v);
    else if (key == "train.weight_decay") train.weight_decay = parse_real(key, v);
    else if (key == "train.batch_size") train.batch_size = parse_int(key, v);
    else if (key == "train.seed") train.seed = static_cast<std::uint64_t>(parse_real(key, v));
    else if (key == "train.eval_every") train.eval_every = parse_int(key, v);
    else if (key == "train.periodic_restarts") train.periodic_restarts = parse_bool(key, v);
    else if (key == "train.aug_off_last_epochs") train.aug_off_last_epochs = parse_int(key, v);
    else if (key == "train.mosaic_prob") train.mosaic_prob = parse_real(key, v);
    else if (key == "train.mixup_prob") train.mixup_prob = parse_real(key, v);
    else if (key == "train.use_hflip") train.use_hflip = parse_bool(key, v);
    else if (key == "train.hsv_jitter") train.hsv_jitter = parse_real(key, v);
    else if (key == "train.train_w") train.train_w = parse_int(key, v);
    else if (key == "train.train_h") train.train_h = parse_int(key, v);
    else if (key == "loss.alpha1") loss.alpha1 = parse_real(key, v);
    else if (key == "loss.alpha2") loss.alpha2 = parse_real(key, v);
    else if (key == "loss.alpha3") loss.alpha3 = parse_real(key, v);
    else if (key == "loss.obj_pos_weight") loss.obj_pos_weight = parse_real(key, v);
    else if (key == "loss.gamma_tradeoff") loss.gamma_tradeoff = parse_real(key, v);
    else if (key == "loss.tversky_alpha") loss.tversky_alpha = parse_real(key, v);
    else if (key == "loss.tversky_beta") loss.tversky_beta = parse_real(key, v);
    else if (key == "loss.focal_gamma") loss.focal_gamma = parse_real(key, v);
    else if (key == "loss.seg_eps") loss.seg_eps = parse_real(key, v);
    else throw ConfigError("unknown config key: " + key);
}

std::string RunConfig::to_text() const {
    std::ostringstream out;
    out << "# " << kSchemaId << " run configuration\n";
    out << "model.input_w = " << model.input_w << "\n";
    out << "model.input_h = " << model.input_h << "\n";
    out << "model.stage_channels = " << int_list_str(model.stage_channels) << "\n";
    out << "model.elan_per_stage = " << model.elan_per_stage << "\n";
    out << "model.group_count = " << model.group_count << "\n";
    out << "model.num_classes = " << model.num_classes << "\n";
    out << "model.spp_kernels = " << int_list_str(model.spp_kernels) << "\n";
    out << "model.anchors = " << anchors_str(model.anchors) << "\n";
    out << "model.use_mosaic = " << (model.use_mosaic ? "true" : "false") << "\n";
    out << "model.use_mixup = " << (model.use_mixup ? "true" : "false") << "\n";
    out << "model.lane_decoder_kind = " << model.lane_decoder_kind << "\n";
    out << "model.lane_loss_kind = " << model.lane_loss_kind << "\n";
    out << "train.initial_lr = " << real_str(train.initial_lr) << "\n";
    out << "train.final_lr_fraction = " << real_str(train.final_lr_fraction) << "\n";
    out << "train.warmup_epochs = " << train.warmup_epochs << "\n";
    out << "train.total_epochs = " << train.total_epochs << "\n";
    out << "train.momentum = " << real_str(train.momentum) << "\n";
    out << "train.weight_decay = " << real_str(train.weight_decay) << "\n";
    out << "train.batch_size = " << train.batch_size << "\n";
    out << "train.seed = " << train.seed << "\n";
    out << "train.eval_every = " << train.eval_every << "\n";
    out << "train.periodic_restarts = " << (train.periodic_restarts ? "true" : "false") << "\n";
    out << "train.aug_off_last_epochs = " << train.aug_off_last_epochs << "\n";
    out << "train.mosaic_prob = " << real_str(train.mosaic_prob) << "\n";
    out << "train.mixup_prob = " << real_str(train.mixup_prob) << "\n";
    out << "train.use_hflip = " << (train.use_hflip ? "true" : "false") << "\n";
    out << "train.hsv_jitter = " << real_str(train.hsv_jitter) << "\n";
    out << "train.train_w = " << train.train_w << "\n";
    out << "train.train_h = " << train.train_h << "\n";
    out << "loss.alpha1 = " << real_str(loss.alpha1) << "\n";
    out << "loss.alpha2 = " << real_str(loss.alpha2) << "\n";
    out << "loss.alpha3 = " << real_str(loss.alpha3) << "\n";
    out << "loss.obj_pos_weight = " << real_str(loss.obj_pos_weight) << "\n";
    out << "loss.gamma_tradeoff = " << real_str(loss.gamma_tradeoff) << "\n";
    out << "loss.tversky_alpha = " << real_str(loss.tversky_alpha) << "\n";
    out << "loss.tversky_beta = " << real_str(loss.tversky_beta) << "\n";
    out << "loss.focal_gamma = " << real_str(loss.focal_gamma) << "\n";
    out << "loss.seg_eps = " << real_str(loss.seg_eps) << "\n";
    return out.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig c;  // defaults, then overrides
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
        c.apply_override(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config file " + path);
    out << to_text();
    if (!out) throw IoError("failed writing config file " + path);
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    loss.validate();
}

}  // namespace pdp
