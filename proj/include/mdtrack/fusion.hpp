#pragma once

#include <array>

#include "mdtrack/tokenizer.hpp"

namespace mdtrack {

// Modality-aware fusion: noisy top-K routing over a four-expert adapter
// library, expert-guided per-token fusion weights, and the weighted
// modality combination, plus the load-balancing regularizer.

enum class FusionMode : std::uint8_t {
    Mean = 0,     // fixed 0.5/0.5 average, no experts (ablation baseline)
    Uniform = 1,  // one shared expert, no routing
    Moe = 2,      // full modality-aware routing
};

FusionMode fusion_mode_from_string(const std::string& s);
const char* fusion_mode_name(FusionMode m);

struct FusionConfig {
    FusionMode mode = FusionMode::Moe;
    int top_k = 2;
    int bottleneck = 4;  // adapter ratio r: C -> C/r -> C
    bool true_modality = false;  // force the X expert to the stream's true modality
    double lambda_rgb = 0.5;
    double lambda_x = 0.5;
};

// Residual bottleneck adapter.
struct ExpertWeights {
    Param *down_w = nullptr, *down_b = nullptr;
    Param *up_w = nullptr, *up_b = nullptr;
};

struct FusionWeights {
    FusionConfig cfg;
    Param* w_g = nullptr;      // [2C, 4]
    Param* w_noise = nullptr;  // [2C, 4]
    std::array<ExpertWeights, 4> experts{};  // indexed by Modality
    ExpertWeights shared;                    // uniform mode only
};

FusionWeights make_fusion(ParamStore& store, const FusionConfig& cfg, int channels, Rng& rng,
                          Dtype dt);

constexpr int kExpertCount = 4;

struct GateDecision {
    Value gates;       // [L,4] softmax over the kept top-K, zeros elsewhere
    Value probs_full;  // [L,4] softmax before TopK (feeds the balance loss)
    Tensor raw_logits; // [L,4] noisy logits snapshot
    std::vector<std::array<bool, kExpertCount>> topk_mask;  // kept entries per row
};

// Channel-wise concatenation of spatially aligned token pairs -> [L,2C],
// RGB channels first.
Value pair_concat(Value s_rgb, Value s_x);

// logits = S*W_g + eps .* softplus(S*W_noise); eps ~ N(0,1) per entry in
// train mode (from `seed`), zero in eval. Top-K keeps the K largest per row
// (ties broken toward the lower expert index), the rest go to -inf before
// the softmax, so dropped gates are exactly zero.
GateDecision route(Value s_rgbx, const FusionWeights& w, bool train_mode, std::uint64_t seed);

Value expert_apply(const ExpertWeights& e, Value tokens);

// F = GAP(sigmoid(G .* E(S))) per token, clamped to the open interval (0,1).
Value fusion_weights(Value gate_col, Value expert_out);

Value fuse(Value s_rgb, Value s_x, Value f_rgb, Value f_x, double lambda_rgb = 0.5,
           double lambda_x = 0.5);

// Switch-style balance: E * sum_e f_e * P_e with the selection fraction f
// and pre-TopK probability P coupled per token row; minimum 1 at exactly
// uniform routing. Throws DomainError on an empty batch.
Value load_balance_loss(const std::vector<GateDecision>& decisions);

struct FusionOutput {
    Value fused;     // [L,C]
    Value f_rgb;     // [L,1]
    Value f_x;       // [L,1]
    Value balance;   // scalar
    int chosen_x = -1;  // expert index applied to the X stream
};

FusionOutput fusion_forward(const TokenSeq& s_rgb, const TokenSeq& s_x, const FusionWeights& w,
                            bool train_mode, std::uint64_t seed);

}  // namespace mdtrack
