#pragma once

#include "mdtrack/tokenizer.hpp"

namespace mdtrack {

// Decoupled temporal propagation: bidirectional cross-attention between the
// two search streams, one selective SSM recurrence per stream whose hidden
// state is carried across frames, and a twice-applied cross-attention
// exchange with the backbone features.

enum class TemporalMode : std::uint8_t { Off = 0, Token = 1, Mixed = 2, Decoupled = 3 };

TemporalMode temporal_mode_from_string(const std::string& s);
const char* temporal_mode_name(TemporalMode m);

struct TemporalConfig {
    TemporalMode mode = TemporalMode::Decoupled;
    int d_state = 8;
    bool no_cross = false;     // disable the bidirectional exchange
    bool tie_bidir = false;    // share weights between the two directions
    bool update_first = false; // run the update cross-attention before inject
};

// Diagonal selective SSM: A = -exp(a_log) (strictly negative), per-channel
// skip gain D, and per-token input projections for delta (softplus), B and C.
struct SsmWeights {
    Param* a_log = nullptr;  // [C, d]
    Param* d_skip = nullptr; // [C]
    Param* w_dt = nullptr;   // [C, C]
    Param* b_dt = nullptr;   // [C]
    Param* w_b = nullptr;    // [C, d]
    Param* w_c = nullptr;    // [C, d]
    int channels = 0;
    int d_state = 0;
};

SsmWeights make_ssm(ParamStore& store, const std::string& prefix, int channels, int d_state,
                    Rng& rng, Dtype dt);

// ---- plain-tensor reference pieces (also the oracle building blocks) ----

// Zero-order hold with the linear B approximation: Abar = exp(delta*A)
// elementwise, Bbar[c,i] = delta[c]*B[i]. Throws DomainError unless delta > 0.
void ssm_discretize(const Tensor& a, const Tensor& delta, const Tensor& b, Tensor& abar,
                    Tensor& bbar);

// One recurrence step on raw tensors: h[c,i] = abar[c,i]*h_prev[c,i] +
// delta[c]*b[i]*x[c]; y[c] = <c_out, h[c,:]> + d_skip[c]*x[c].
std::pair<Tensor, Tensor> ssm_step(const Tensor& h_prev, const Tensor& x, const Tensor& delta,
                                   const Tensor& b, const Tensor& c_out, const Tensor& a,
                                   const Tensor& d_skip);

// ---- recorded scan over L tokens ----

struct ScanResult {
    Value out;      // [L,C], input + per-token readout (residual)
    Value h_final;  // [C,d], carried to the next frame
};

// Scans tokens in raster order with input-dependent delta/B/C. Forward and
// backward are a single fused node; gradients flow into seq, h0 and all six
// SSM params, including through the recurrence (BPTT over the L tokens and,
// when h0 is itself a graph value, across frames).
ScanResult ssm_scan(Value seq, Value h0, const SsmWeights& w);

// ---- cross-attention pieces ----

struct CrossPair {
    LnWeights ln_q, ln_kv;
    AttnWeights attn;
};

CrossPair make_cross(ParamStore& store, const std::string& prefix, int channels, int n_heads,
                     Rng& rng, Dtype dt);

// Symmetric exchange computed from the pre-update inputs:
// rgb' = rgb + attn(Q=rgb, KV=x); x' = x + attn(Q=x, KV=rgb).
std::pair<Value, Value> bidir_cross_attn(Value s_rgb, Value s_x, const CrossPair& rgb_dir,
                                         const CrossPair& x_dir);

struct IoWeights {
    CrossPair inject, update;
};

// Inject temporal context into the backbone stream, then update the
// temporal tokens from the enriched backbone (sequential; order flips with
// update_first).
std::pair<Value, Value> inject_update(Value backbone_seq, Value temporal_tokens,
                                      const IoWeights& w, bool update_first = false);

// ---- per-block module ----

struct TemporalBlockWeights {
    CrossPair bidir_rgb, bidir_x;
    LnWeights ln_scan_rgb, ln_scan_x;
    SsmWeights ssm_rgb, ssm_x;
    LnWeights ln_scan_mix;  // mixed mode: one SSM over channel-concatenated streams
    SsmWeights ssm_mix;
    IoWeights io_rgb, io_x;
};

struct TemporalWeights {
    TemporalConfig cfg;
    std::vector<TemporalBlockWeights> blocks;  // one per hooked backbone block
};

TemporalWeights make_temporal(ParamStore& store, const TemporalConfig& cfg, int hooked_blocks,
                              int channels, int n_heads, Rng& rng, Dtype dt);

// ---- cross-frame hidden state ----

constexpr std::uint8_t kMixedStateTag = 4;  // modality byte for the mixed-SSM ablation

struct SsmState {
    Tensor h;
    std::int64_t frame_index = 0;
    std::uint8_t modality_tag = 0;  // Modality value, or kMixedStateTag
};

struct StatePair {
    SsmState rgb, x;
    bool mixed = false;  // mixed mode stores its single state in `rgb`
};

struct TemporalStates {
    std::vector<StatePair> pairs;  // one per hooked block
};

TemporalStates reset_states(int hooked_blocks, int channels, int d_state, Dtype dt, bool mixed,
                            Modality x_modality);

// Little-endian container, magic "MDTS", version u16, then per-state
// records (block u16, modality u8, frame u64, dtype u8, C u32, d u32, raw h).
std::vector<std::uint8_t> serialize_states(const TemporalStates& states);
TemporalStates restore_states(const std::vector<std::uint8_t>& bytes);

// Graph-side state (h as a Value so clips can backpropagate across frames).
struct StateVal {
    Value h;
    std::int64_t frame_index = 0;
    std::uint8_t modality_tag = 0;
};

struct StatePairVal {
    StateVal rgb, x;
    bool mixed = false;
};

std::vector<StatePairVal> states_to_values(Graph& g, const TemporalStates& states);
TemporalStates states_from_values(const std::vector<StatePairVal>& vals);

struct TemporalForwardResult {
    JointSeq joint;
    StatePairVal state;
};

// One hooked block's exchange: split the search segments, run the
// bidirectional cross-attention and the per-modality scans, exchange with
// the backbone segments, and write the search segments back. Template
// segments pass through untouched.
TemporalForwardResult temporal_forward(const JointSeq& joint, const StatePairVal& state,
                                       const TemporalBlockWeights& w, const TemporalConfig& cfg);

}  // namespace mdtrack
