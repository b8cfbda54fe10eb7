#include "mdtrack/model.hpp"

namespace mdtrack {

void ModelConfig::validate() const {
    std::string bad;
    auto flag = [&](bool ok, const char* field) {
        if (!ok) bad += bad.empty() ? field : std::string(", ") + field;
    };
    flag(patch > 0, "patch");
    flag(channels > 0, "channels");
    flag(patch <= 0 || template_side % patch == 0, "template_side");
    flag(patch <= 0 || search_side % patch == 0, "search_side");
    flag(backbone.blocks >= 1, "backbone.blocks");
    flag(backbone.channels == channels, "backbone.channels");
    flag(backbone.n_heads >= 1 && channels % (backbone.n_heads > 0 ? backbone.n_heads : 1) == 0,
         "backbone.heads");
    flag(backbone.temporal_every >= 1, "backbone.temporal_every");
    flag(temporal.d_state >= 1, "temporal.d_state");
    flag(fusion.top_k >= 1 && fusion.top_k <= kExpertCount, "fusion.top_k");
    flag(fusion.bottleneck >= 1, "fusion.bottleneck");
    flag(fusion.lambda_rgb >= 0 && fusion.lambda_x >= 0, "fusion.lambda");
    flag(loss.cls >= 0 && loss.l1 >= 0 && loss.giou >= 0 && loss.balance >= 0, "loss.weights");
    flag(loss.cls > 0 || loss.l1 > 0 || loss.giou > 0 || loss.balance > 0, "loss.all_zero");
    if (!bad.empty()) throw ConfigError("invalid model config fields: " + bad);
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.backbone.channels = cfg_.channels;
    cfg_.validate();
    Rng rng(seed);
    embed_ = make_embed(store_, cfg_.patch, cfg_.channels, cfg_.template_side, cfg_.search_side,
                        rng, cfg_.dtype);
    backbone_ = make_backbone(store_, cfg_.backbone, rng, cfg_.dtype);
    temporal_ = make_temporal(store_, cfg_.temporal, hooked_blocks(), cfg_.channels,
                              cfg_.backbone.n_heads, rng, cfg_.dtype);
    fusion_ = make_fusion(store_, cfg_.fusion, cfg_.channels, rng, cfg_.dtype);
    head_ = make_head(store_, cfg_.channels, rng, cfg_.dtype);
}

TemporalStates Model::make_states(Modality x_modality) const {
    if (cfg_.temporal.mode != TemporalMode::Decoupled && cfg_.temporal.mode != TemporalMode::Mixed)
        return TemporalStates{};
    return reset_states(hooked_blocks(), cfg_.channels, cfg_.temporal.d_state, cfg_.dtype,
                        cfg_.temporal.mode == TemporalMode::Mixed, x_modality);
}

Model::Forward Model::forward(Graph& g, const Frame& z_rgb, const Frame& z_x, const Frame& s_rgb,
                              const Frame& s_x, const std::vector<StatePairVal>& states,
                              bool train_mode, std::uint64_t seed, const Tensor* context) const {
    if (z_rgb.modality != Modality::RGB || s_rgb.modality != Modality::RGB)
        throw ContractError("forward: first stream of each pair must be RGB");
    if (z_x.modality != s_x.modality) throw ContractError("forward: X modalities disagree");

    TokenSeq tz_rgb = add_positional(patch_embed(g, z_rgb, Role::Template, embed_), embed_);
    TokenSeq tz_x = add_positional(patch_embed(g, z_x, Role::Template, embed_), embed_);
    TokenSeq ts_rgb = add_positional(patch_embed(g, s_rgb, Role::Search, embed_), embed_);
    TokenSeq ts_x = add_positional(patch_embed(g, s_x, Role::Search, embed_), embed_);

    std::optional<TokenSeq> ctx;
    if (cfg_.temporal.mode == TemporalMode::Token && context && context->defined()) {
        TokenSeq c;
        c.tokens = g.constant(*context);  // stop-gradient carry
        c.role = Role::Search;
        c.modality = s_x.modality;
        c.rows = ts_x.rows;
        c.cols = ts_x.cols;
        ctx = c;
    }
    JointSeq joint = assemble_joint(tz_rgb, tz_x, ts_rgb, ts_x, ctx);

    Forward out;
    const bool recurrent = cfg_.temporal.mode == TemporalMode::Decoupled ||
                           cfg_.temporal.mode == TemporalMode::Mixed;
    if (recurrent) {
        if (static_cast<int>(states.size()) != hooked_blocks())
            throw ContractError("forward: " + std::to_string(states.size()) + " state pairs for " +
                                std::to_string(hooked_blocks()) + " hooked blocks");
        out.states = states;
        int pair_idx_of_block = 0;
        std::vector<int> block_to_pair(static_cast<std::size_t>(cfg_.backbone.blocks), -1);
        for (int i = 0; i < cfg_.backbone.blocks; ++i)
            if (block_has_hook(cfg_.backbone, i)) block_to_pair[static_cast<std::size_t>(i)] = pair_idx_of_block++;

        joint = backbone_forward(joint, backbone_, [&](int block, const JointSeq& j) {
            const int pair = block_to_pair[static_cast<std::size_t>(block)];
            auto res = temporal_forward(j, out.states[static_cast<std::size_t>(pair)],
                                        temporal_.blocks[static_cast<std::size_t>(pair)],
                                        cfg_.temporal);
            out.states[static_cast<std::size_t>(pair)] = res.state;
            return res.joint;
        });
    } else {
        joint = backbone_forward(joint, backbone_);
    }

    auto [fs_rgb, fs_x] = split_search(joint);
    FusionOutput fo = fusion_forward(fs_rgb, fs_x, fusion_, train_mode, seed);
    out.balance = fo.balance;
    out.chosen_expert = fo.chosen_x;
    out.fused_search = fo.fused;
    out.maps = head_forward(fo.fused, cfg_.grid(), cfg_.grid(), head_);
    return out;
}

}  // namespace mdtrack
