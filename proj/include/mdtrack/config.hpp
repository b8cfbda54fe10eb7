#pragma once

#include <map>

#include "mdtrack/data.hpp"
#include "mdtrack/model.hpp"

namespace mdtrack {

// Flat key=value text with dotted keys; '#' starts a comment line.
// Unknown keys are errors.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);
KvMap parse_kv_file(const std::string& path);

struct TrainConfig {
    enum class Regime { Specific, Unified };
    Regime regime = Regime::Specific;
    Modality modality = Modality::T;  // regime=specific only
    int steps_per_epoch = 500;
    int epochs = 4;
    int batch = 8;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::uint64_t seed = 1;
    int max_gap = 30;   // max template/search frame distance
    int clip_len = 1;   // consecutive search frames unrolled per sample
    std::string data_root;  // empty: generate synthetic data in memory
    std::string out_dir = "runs";
    int synth_sequences = 16;
    SynthConfig synth;

    void validate() const;
};

struct FullConfig {
    ModelConfig model;
    TrainConfig train;
};

FullConfig parse_full_config(const KvMap& kv);
SynthConfig parse_synth_config(const KvMap& kv);

// model.* keys only; the checkpoint stores this text as its config snapshot
std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

}  // namespace mdtrack
