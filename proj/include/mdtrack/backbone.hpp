#pragma once

#include <functional>

#include "mdtrack/tokenizer.hpp"

namespace mdtrack {

struct BackboneConfig {
    int blocks = 4;
    int channels = 64;
    int n_heads = 4;
    int temporal_every = 1;  // block i hooks a temporal module iff (i+1) % temporal_every == 0
};

struct BlockWeights {
    LnWeights ln1, ln2;
    AttnWeights attn;
    MlpWeights mlp;
};

struct BackboneWeights {
    BackboneConfig cfg;
    std::vector<BlockWeights> blocks;
};

BackboneWeights make_backbone(ParamStore& store, const BackboneConfig& cfg, Rng& rng, Dtype dt);

inline bool block_has_hook(const BackboneConfig& cfg, int block_idx) {
    return (block_idx + 1) % cfg.temporal_every == 0;
}
int hook_count(const BackboneConfig& cfg);

// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
// The segment map passes through untouched.
JointSeq block_forward(const JointSeq& joint, const BlockWeights& w);

// Runs the block stack; after each hooked block the temporal exchange
// callback (when provided) rewrites the search segments. The callback owns
// the hidden-state bookkeeping, keeping this module independent of the
// temporal one.
using TemporalHook = std::function<JointSeq(int block_idx, const JointSeq&)>;
JointSeq backbone_forward(JointSeq joint, const BackboneWeights& w,
                          const TemporalHook& hook = nullptr);

}  // namespace mdtrack
