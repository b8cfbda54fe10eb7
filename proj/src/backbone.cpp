#include "mdtrack/backbone.hpp"

namespace mdtrack {

BackboneWeights make_backbone(ParamStore& store, const BackboneConfig& cfg, Rng& rng, Dtype dt) {
    if (cfg.blocks < 1) throw ConfigError("backbone needs at least one block");
    if (cfg.temporal_every < 1) throw ConfigError("temporal_every must be >= 1");
    BackboneWeights w;
    w.cfg = cfg;
    for (int i = 0; i < cfg.blocks; ++i) {
        const std::string prefix = "backbone.block" + std::to_string(i);
        BlockWeights b;
        b.ln1 = make_ln(store, prefix + ".ln1", cfg.channels, dt);
        b.attn = make_attention(store, prefix + ".attn", cfg.channels, cfg.n_heads, rng, dt);
        b.ln2 = make_ln(store, prefix + ".ln2", cfg.channels, dt);
        b.mlp = make_mlp(store, prefix + ".mlp", cfg.channels, 4, rng, dt);
        w.blocks.push_back(b);
    }
    return w;
}

int hook_count(const BackboneConfig& cfg) {
    int n = 0;
    for (int i = 0; i < cfg.blocks; ++i)
        if (block_has_hook(cfg, i)) ++n;
    return n;
}

JointSeq block_forward(const JointSeq& joint, const BlockWeights& w) {
    joint.validate();
    Value x = joint.tokens;
    Value a = apply_ln(x, w.ln1);
    x = add(x, attention(a, a, w.attn));
    x = add(x, apply_mlp(apply_ln(x, w.ln2), w.mlp));
    JointSeq out;
    out.tokens = x;
    out.segments = joint.segments;
    return out;
}

JointSeq backbone_forward(JointSeq joint, const BackboneWeights& w, const TemporalHook& hook) {
    for (int i = 0; i < w.cfg.blocks; ++i) {
        joint = block_forward(joint, w.blocks[static_cast<std::size_t>(i)]);
        if (hook && block_has_hook(w.cfg, i)) joint = hook(i, joint);
    }
    return joint;
}

}  // namespace mdtrack
