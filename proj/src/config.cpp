#include "mdtrack/config.hpp"

#include <fstream>
#include <sstream>

namespace mdtrack {

KvMap parse_kv_text(const std::string& text) {
    KvMap kv;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key=value, got '" +
                              line + "'");
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
        while (!val.empty() && (val.front() == ' ' || val.front() == '\t')) val.erase(0, 1);
        if (kv.count(key)) throw ConfigError("duplicate key '" + key + "'");
        kv[key] = val;
    }
    return kv;
}

KvMap parse_kv_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_kv_text(buf.str());
}

namespace {

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError(key + ": expected integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError(key + ": expected number, got '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const std::uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (...) {
        throw ConfigError(key + ": expected unsigned integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "0" || v == "false") return false;
    if (v == "1" || v == "true") return true;
    throw ConfigError(key + ": expected 0/1, got '" + v + "'");
}

Dtype to_dtype(const std::string& key, const std::string& v) {
    if (v == "f32") return Dtype::F32;
    if (v == "f64") return Dtype::F64;
    throw ConfigError(key + ": expected f32 or f64, got '" + v + "'");
}

// Returns true when the key was recognized and applied.
bool apply_model_key(ModelConfig& m, const std::string& k, const std::string& v) {
    if (k == "model.dtype") m.dtype = to_dtype(k, v);
    else if (k == "model.patch") m.patch = to_int(k, v);
    else if (k == "model.channels") m.channels = to_int(k, v);
    else if (k == "model.template_side") m.template_side = to_int(k, v);
    else if (k == "model.search_side") m.search_side = to_int(k, v);
    else if (k == "model.blocks") m.backbone.blocks = to_int(k, v);
    else if (k == "model.heads") m.backbone.n_heads = to_int(k, v);
    else if (k == "model.temporal_every") m.backbone.temporal_every = to_int(k, v);
    else if (k == "model.temporal_mode") m.temporal.mode = temporal_mode_from_string(v);
    else if (k == "model.d_state") m.temporal.d_state = to_int(k, v);
    else if (k == "model.no_cross") m.temporal.no_cross = to_bool(k, v);
    else if (k == "model.tie_bidir") m.temporal.tie_bidir = to_bool(k, v);
    else if (k == "model.update_first") m.temporal.update_first = to_bool(k, v);
    else if (k == "model.fusion_mode") m.fusion.mode = fusion_mode_from_string(v);
    else if (k == "model.top_k") m.fusion.top_k = to_int(k, v);
    else if (k == "model.bottleneck") m.fusion.bottleneck = to_int(k, v);
    else if (k == "model.true_modality") m.fusion.true_modality = to_bool(k, v);
    else if (k == "model.lambda_rgb") m.fusion.lambda_rgb = to_double(k, v);
    else if (k == "model.lambda_x") m.fusion.lambda_x = to_double(k, v);
    else if (k == "model.loss_cls") m.loss.cls = to_double(k, v);
    else if (k == "model.loss_l1") m.loss.l1 = to_double(k, v);
    else if (k == "model.loss_giou") m.loss.giou = to_double(k, v);
    else if (k == "model.loss_balance") m.loss.balance = to_double(k, v);
    else return false;
    return true;
}

bool apply_train_key(TrainConfig& t, const std::string& k, const std::string& v) {
    if (k == "train.regime") {
        if (v == "specific") t.regime = TrainConfig::Regime::Specific;
        else if (v == "unified") t.regime = TrainConfig::Regime::Unified;
        else throw ConfigError(k + ": expected specific or unified, got '" + v + "'");
    } else if (k == "train.modality") t.modality = modality_from_string(v);
    else if (k == "train.steps_per_epoch") t.steps_per_epoch = to_int(k, v);
    else if (k == "train.epochs") t.epochs = to_int(k, v);
    else if (k == "train.batch") t.batch = to_int(k, v);
    else if (k == "train.lr") t.lr = to_double(k, v);
    else if (k == "train.weight_decay") t.weight_decay = to_double(k, v);
    else if (k == "train.seed") t.seed = to_u64(k, v);
    else if (k == "train.max_gap") t.max_gap = to_int(k, v);
    else if (k == "train.clip_len") t.clip_len = to_int(k, v);
    else if (k == "train.data") t.data_root = v;
    else if (k == "train.out") t.out_dir = v;
    else if (k == "train.synth_sequences") t.synth_sequences = to_int(k, v);
    else return false;
    return true;
}

bool apply_synth_key(SynthConfig& s, const std::string& k, const std::string& v) {
    if (k == "synth.canvas") s.canvas = to_int(k, v);
    else if (k == "synth.frames") s.frames = to_int(k, v);
    else if (k == "synth.modality") s.x_modality = modality_from_string(v);
    else if (k == "synth.seed") s.seed = to_u64(k, v);
    else if (k == "synth.distractors") s.distractors = to_int(k, v);
    else if (k == "synth.noise") s.noise = to_double(k, v);
    else if (k == "synth.target_size") s.target_size = to_double(k, v);
    else if (k == "synth.speed") s.speed = to_double(k, v);
    else if (k == "synth.sin_amp") s.sin_amp = to_double(k, v);
    else if (k == "synth.sin_freq") s.sin_freq = to_double(k, v);
    else if (k == "synth.size_drift") s.size_drift = to_double(k, v);
    else if (k == "synth.occluders") s.occluders = to_int(k, v);
    else if (k == "synth.occlusion_start") s.occlusion_start = to_int(k, v);
    else if (k == "synth.occlusion_len") s.occlusion_len = to_int(k, v);
    else return false;
    return true;
}

}  // namespace

void TrainConfig::validate() const {
    std::string bad;
    auto flag = [&](bool ok, const char* field) {
        if (!ok) bad += bad.empty() ? field : std::string(", ") + field;
    };
    flag(steps_per_epoch > 0, "train.steps_per_epoch");
    flag(epochs > 0, "train.epochs");
    flag(batch > 0, "train.batch");
    flag(lr > 0, "train.lr");
    flag(weight_decay >= 0, "train.weight_decay");
    flag(max_gap >= 0, "train.max_gap");
    flag(clip_len >= 1, "train.clip_len");
    flag(synth_sequences > 0 || !data_root.empty(), "train.synth_sequences");
    if (!bad.empty()) throw ConfigError("invalid train config fields: " + bad);
}

FullConfig parse_full_config(const KvMap& kv) {
    FullConfig fc;
    std::string unknown;
    for (const auto& [k, v] : kv) {
        if (apply_model_key(fc.model, k, v)) continue;
        if (apply_train_key(fc.train, k, v)) continue;
        if (apply_synth_key(fc.train.synth, k, v)) continue;
        unknown += unknown.empty() ? k : ", " + k;
    }
    if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
    fc.model.backbone.channels = fc.model.channels;
    fc.model.validate();
    fc.train.validate();
    return fc;
}

SynthConfig parse_synth_config(const KvMap& kv) {
    SynthConfig s;
    std::string unknown;
    for (const auto& [k, v] : kv) {
        if (apply_synth_key(s, k, v)) continue;
        unknown += unknown.empty() ? k : ", " + k;
    }
    if (!unknown.empty()) throw ConfigError("unknown config keys: " + unknown);
    return s;
}

std::string model_config_to_text(const ModelConfig& m) {
    std::ostringstream os;
    os << "model.dtype=" << dtype_name(m.dtype) << "\n";
    os << "model.patch=" << m.patch << "\n";
    os << "model.channels=" << m.channels << "\n";
    os << "model.template_side=" << m.template_side << "\n";
    os << "model.search_side=" << m.search_side << "\n";
    os << "model.blocks=" << m.backbone.blocks << "\n";
    os << "model.heads=" << m.backbone.n_heads << "\n";
    os << "model.temporal_every=" << m.backbone.temporal_every << "\n";
    os << "model.temporal_mode=" << temporal_mode_name(m.temporal.mode) << "\n";
    os << "model.d_state=" << m.temporal.d_state << "\n";
    os << "model.no_cross=" << (m.temporal.no_cross ? 1 : 0) << "\n";
    os << "model.tie_bidir=" << (m.temporal.tie_bidir ? 1 : 0) << "\n";
    os << "model.update_first=" << (m.temporal.update_first ? 1 : 0) << "\n";
    os << "model.fusion_mode=" << fusion_mode_name(m.fusion.mode) << "\n";
    os << "model.top_k=" << m.fusion.top_k << "\n";
    os << "model.bottleneck=" << m.fusion.bottleneck << "\n";
    os << "model.true_modality=" << (m.fusion.true_modality ? 1 : 0) << "\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    os << "model.lambda_rgb=" << num(m.fusion.lambda_rgb) << "\n";
    os << "model.lambda_x=" << num(m.fusion.lambda_x) << "\n";
    os << "model.loss_cls=" << num(m.loss.cls) << "\n";
    os << "model.loss_l1=" << num(m.loss.l1) << "\n";
    os << "model.loss_giou=" << num(m.loss.giou) << "\n";
    os << "model.loss_balance=" << num(m.loss.balance) << "\n";
    return os.str();
}

ModelConfig model_config_from_text(const std::string& text) {
    ModelConfig m;
    std::string unknown;
    for (const auto& [k, v] : parse_kv_text(text)) {
        if (!apply_model_key(m, k, v)) unknown += unknown.empty() ? k : ", " + k;
    }
    if (!unknown.empty()) throw ConfigError("unknown model config keys: " + unknown);
    m.backbone.channels = m.channels;
    m.validate();
    return m;
}

}  // namespace mdtrack
