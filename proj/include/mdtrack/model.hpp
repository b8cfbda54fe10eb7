#pragma once

#include "mdtrack/backbone.hpp"
#include "mdtrack/fusion.hpp"
#include "mdtrack/head.hpp"
#include "mdtrack/temporal.hpp"

namespace mdtrack {

struct ModelConfig {
    Dtype dtype = Dtype::F32;
    int patch = 16;
    int channels = 64;
    int template_side = 32;
    int search_side = 64;
    BackboneConfig backbone{4, 64, 4, 1};
    TemporalConfig temporal;
    FusionConfig fusion;
    LossWeights loss;

    int grid() const { return search_side / patch; }
    int search_tokens() const { return grid() * grid(); }
    int template_tokens() const {
        return (template_side / patch) * (template_side / patch);
    }
    // throws ConfigError listing every offending field
    void validate() const;
};

// The assembled tracker: embedding, hooked backbone, temporal modules,
// fusion and head, with all parameters in one store.
class Model {
public:
    Model(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& cfg() const { return cfg_; }
    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    int hooked_blocks() const { return hook_count(cfg_.backbone); }

    TemporalStates make_states(Modality x_modality) const;

    struct Forward {
        ScoreMaps maps;
        std::vector<StatePairVal> states;
        Value balance;
        int chosen_expert = -1;
        Value fused_search;  // fused search tokens (the token-mode carry)
    };

    // One frame step: embed -> assemble -> hooked backbone -> split ->
    // fusion -> head. `states` must match the hook count (empty when the
    // temporal mode keeps no recurrent state). `context` carries the
    // previous frame's fused tokens in token mode (undefined on frame 0).
    Forward forward(Graph& g, const Frame& z_rgb, const Frame& z_x, const Frame& s_rgb,
                    const Frame& s_x, const std::vector<StatePairVal>& states, bool train_mode,
                    std::uint64_t seed, const Tensor* context = nullptr) const;

    const EmbedWeights& embed() const { return embed_; }
    const BackboneWeights& backbone() const { return backbone_; }
    const TemporalWeights& temporal() const { return temporal_; }
    const FusionWeights& fusion() const { return fusion_; }
    const HeadWeights& head() const { return head_; }

private:
    ModelConfig cfg_;
    ParamStore store_;
    EmbedWeights embed_;
    BackboneWeights backbone_;
    TemporalWeights temporal_;
    FusionWeights fusion_;
    HeadWeights head_;
};

}  // namespace mdtrack
