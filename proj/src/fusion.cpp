#include "mdtrack/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mdtrack {

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "mean") return FusionMode::Mean;
    if (s == "uniform") return FusionMode::Uniform;
    if (s == "moe") return FusionMode::Moe;
    throw ConfigError("unknown fusion mode '" + s + "'");
}

const char* fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::Mean: return "mean";
        case FusionMode::Uniform: return "uniform";
        case FusionMode::Moe: return "moe";
    }
    return "?";
}

static ExpertWeights make_expert(ParamStore& store, const std::string& prefix, int c, int r,
                                 Rng& rng, Dtype dt) {
    const int mid = c / r > 0 ? c / r : 1;
    ExpertWeights e;
    e.down_w = &store.create(prefix + ".down_w", trunc_normal_init({c, mid}, 0.02, rng, dt));
    e.down_b = &store.create(prefix + ".down_b", Tensor::zeros({mid}, dt));
    e.up_w = &store.create(prefix + ".up_w", trunc_normal_init({mid, c}, 0.02, rng, dt));
    e.up_b = &store.create(prefix + ".up_b", Tensor::zeros({c}, dt));
    return e;
}

FusionWeights make_fusion(ParamStore& store, const FusionConfig& cfg, int channels, Rng& rng,
                          Dtype dt) {
    if (cfg.top_k < 1 || cfg.top_k > kExpertCount)
        throw ConfigError("fusion top_k must be in [1,4]");
    FusionWeights w;
    w.cfg = cfg;
    if (cfg.mode == FusionMode::Mean) return w;
    if (cfg.mode == FusionMode::Uniform) {
        w.shared = make_expert(store, "fusion.shared", channels, cfg.bottleneck, rng, dt);
        return w;
    }
    w.w_g = &store.create("fusion.w_g", trunc_normal_init({2 * channels, kExpertCount}, 0.02, rng, dt));
    w.w_noise =
        &store.create("fusion.w_noise", trunc_normal_init({2 * channels, kExpertCount}, 0.02, rng, dt));
    static const char* names[kExpertCount] = {"rgb", "t", "e", "d"};
    for (int i = 0; i < kExpertCount; ++i)
        w.experts[static_cast<std::size_t>(i)] =
            make_expert(store, std::string("fusion.expert_") + names[i], channels, cfg.bottleneck,
                        rng, dt);
    return w;
}

Value pair_concat(Value s_rgb, Value s_x) {
    if (s_rgb.dim(0) != s_x.dim(0)) throw ShapeError("pair_concat: token count mismatch");
    return concat_cols(s_rgb, s_x);
}

GateDecision route(Value s_rgbx, const FusionWeights& w, bool train_mode, std::uint64_t seed) {
    Graph& g = *s_rgbx.g;
    if (!w.w_g) throw ContractError("route called without router weights");
    const int l = s_rgbx.dim(0);
    const int k = w.cfg.top_k;

    Value logits = matmul(s_rgbx, g.leaf(*w.w_g));
    if (train_mode) {
        Value noise_scale = softplus(matmul(s_rgbx, g.leaf(*w.w_noise)));
        Tensor eps = Tensor::zeros({l, kExpertCount}, s_rgbx.dtype());
        Rng rng(seed);
        for (std::int64_t i = 0; i < eps.numel(); ++i) eps.set(i, rng.normal());
        logits = add(logits, mul(constant(g, std::move(eps)), noise_scale));
    }

    GateDecision d;
    d.raw_logits = logits.tensor().clone();
    d.probs_full = softmax(logits, 1);

    // stable top-K per row: descending logit, ties toward lower expert index
    auto dropped = std::make_shared<std::vector<std::uint8_t>>(
        static_cast<std::size_t>(l) * kExpertCount, std::uint8_t{1});
    d.topk_mask.resize(static_cast<std::size_t>(l));
    for (int r = 0; r < l; ++r) {
        std::array<int, kExpertCount> order{0, 1, 2, 3};
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return d.raw_logits.at(r * kExpertCount + a) > d.raw_logits.at(r * kExpertCount + b);
        });
        for (int j = 0; j < kExpertCount; ++j) {
            const bool keep = j < k;
            const int e = order[static_cast<std::size_t>(j)];
            d.topk_mask[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)] = keep;
            if (keep) (*dropped)[static_cast<std::size_t>(r * kExpertCount + e)] = 0;
        }
    }

    Value masked =
        masked_fill(logits, dropped, -std::numeric_limits<double>::infinity());
    d.gates = softmax(masked, 1);
    return d;
}

Value expert_apply(const ExpertWeights& e, Value tokens) {
    if (!e.down_w) throw ContractError("expert_apply on an empty expert");
    Graph& g = *tokens.g;
    Value mid = gelu(linear(tokens, g.leaf(*e.down_w), g.leaf(*e.down_b)));
    return add(tokens, linear(mid, g.leaf(*e.up_w), g.leaf(*e.up_b)));
}

Value fusion_weights(Value gate_col, Value expert_out) {
    Value weighted = mul_colvec(expert_out, gate_col);
    // clamp keeps F strictly inside (0,1) even under float sigmoid saturation
    return clamp(channel_gap(sigmoid(weighted)), 1e-7, 1.0 - 1e-7);
}

Value fuse(Value s_rgb, Value s_x, Value f_rgb, Value f_x, double lambda_rgb, double lambda_x) {
    return add(scale(mul_colvec(s_rgb, f_rgb), lambda_rgb),
               scale(mul_colvec(s_x, f_x), lambda_x));
}

Value load_balance_loss(const std::vector<GateDecision>& decisions) {
    if (decisions.empty()) throw DomainError("load_balance_loss on an empty batch");
    Graph& g = *decisions[0].probs_full.g;
    const Dtype dt = decisions[0].probs_full.dtype();

    // E * mean over rows of (1/K) sum_e m_re * p_re, i.e. the selection
    // fraction f and mean probability P coupled per token row. The mean of
    // a row's top-K probabilities is at least 1/E, so the loss is >= 1 with
    // equality exactly at uniform routing; the batch-aggregated f*P form
    // does not keep that floor.
    std::int64_t total_rows = 0;
    int k = 1;
    Value acc;
    for (const GateDecision& d : decisions) {
        const auto rows = static_cast<std::int64_t>(d.topk_mask.size());
        total_rows += rows;
        Tensor m = Tensor::zeros({static_cast<int>(rows), kExpertCount}, dt);
        for (std::int64_t r = 0; r < rows; ++r) {
            int row_k = 0;
            for (int e = 0; e < kExpertCount; ++e)
                if (d.topk_mask[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)]) {
                    m.set(r * kExpertCount + e, 1.0);
                    ++row_k;
                }
            k = row_k;
        }
        Value term = sum_all(mul(constant(g, std::move(m)), d.probs_full));
        acc = acc.defined() ? add(acc, term) : term;
    }
    return scale(acc, static_cast<double>(kExpertCount) /
                          (static_cast<double>(total_rows) * k));
}

FusionOutput fusion_forward(const TokenSeq& s_rgb, const TokenSeq& s_x, const FusionWeights& w,
                            bool train_mode, std::uint64_t seed) {
    if (s_x.modality == Modality::RGB)
        throw ContractError("fusion_forward: X stream tagged RGB");
    Graph& g = *s_rgb.tokens.g;
    const int l = s_rgb.tokens.dim(0);
    const Dtype dt = s_rgb.tokens.dtype();

    FusionOutput out;
    if (w.cfg.mode == FusionMode::Mean) {
        out.f_rgb = constant(g, Tensor::full({l, 1}, 1.0, dt));
        out.f_x = constant(g, Tensor::full({l, 1}, 1.0, dt));
        out.fused = fuse(s_rgb.tokens, s_x.tokens, out.f_rgb, out.f_x, w.cfg.lambda_rgb,
                         w.cfg.lambda_x);
        out.balance = constant(g, Tensor::full({1}, 1.0, dt));
        return out;
    }
    if (w.cfg.mode == FusionMode::Uniform) {
        Value e_rgb = expert_apply(w.shared, s_rgb.tokens);
        Value e_x = expert_apply(w.shared, s_x.tokens);
        Value one = constant(g, Tensor::full({l, 1}, 1.0, dt));
        out.f_rgb = fusion_weights(one, e_rgb);
        out.f_x = fusion_weights(one, e_x);
        out.fused = fuse(s_rgb.tokens, s_x.tokens, out.f_rgb, out.f_x, w.cfg.lambda_rgb,
                         w.cfg.lambda_x);
        out.balance = constant(g, Tensor::full({1}, 1.0, dt));
        return out;
    }

    GateDecision d = route(pair_concat(s_rgb.tokens, s_x.tokens), w, train_mode, seed);

    if (w.cfg.true_modality) {
        out.chosen_x = static_cast<int>(s_x.modality);
    } else {
        // highest aggregate gate among the X experts {T,E,D}; ties -> lowest index
        double best = -1.0;
        for (int e = 1; e < kExpertCount; ++e) {
            double total = 0.0;
            for (int r = 0; r < l; ++r) total += d.gates.tensor().at(r * kExpertCount + e);
            if (total > best) {
                best = total;
                out.chosen_x = e;
            }
        }
    }

    Value e_rgb = expert_apply(w.experts[static_cast<std::size_t>(Modality::RGB)], s_rgb.tokens);
    Value e_x = expert_apply(w.experts[static_cast<std::size_t>(out.chosen_x)], s_x.tokens);
    Value g_rgb = slice_cols(d.gates, static_cast<int>(Modality::RGB), 1);
    Value g_x = slice_cols(d.gates, out.chosen_x, 1);
    out.f_rgb = fusion_weights(g_rgb, e_rgb);
    out.f_x = fusion_weights(g_x, e_x);
    out.fused =
        fuse(s_rgb.tokens, s_x.tokens, out.f_rgb, out.f_x, w.cfg.lambda_rgb, w.cfg.lambda_x);
    out.balance = load_balance_loss({d});
    return out;
}

}  // namespace mdtrack
