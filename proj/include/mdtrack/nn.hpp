#pragma once

#include <string>

#include "mdtrack/ops.hpp"
#include "mdtrack/rng.hpp"

namespace mdtrack {

// Small reusable blocks shared by the backbone, temporal modules, fusion
// and head. Weight structs hold raw Param pointers into the model's
// ParamStore; factories create the params with the project-wide init
// (truncated normal sigma=0.02 for projections, zero biases, unit gains).

struct LnWeights {
    Param* gain = nullptr;
    Param* bias = nullptr;
};

struct AttnWeights {
    Param *wq = nullptr, *bq = nullptr;
    Param *wk = nullptr, *bk = nullptr;
    Param *wv = nullptr, *bv = nullptr;
    Param *wo = nullptr, *bo = nullptr;
    int n_heads = 1;
};

struct MlpWeights {
    Param *w1 = nullptr, *b1 = nullptr;
    Param *w2 = nullptr, *b2 = nullptr;
};

Tensor trunc_normal_init(std::vector<int> shape, double sigma, Rng& rng, Dtype dt);

LnWeights make_ln(ParamStore& store, const std::string& prefix, int c, Dtype dt);
AttnWeights make_attention(ParamStore& store, const std::string& prefix, int c, int n_heads,
                           Rng& rng, Dtype dt);
MlpWeights make_mlp(ParamStore& store, const std::string& prefix, int c, int expand, Rng& rng,
                    Dtype dt);

Value apply_ln(Value x, const LnWeights& w);

// Multi-head scaled-dot-product attention (no residual, no norm):
// softmax(QK^T/sqrt(d_head))V per head, heads concatenated, output-projected.
// Self-attention when q_in == kv_in.
Value attention(Value q_in, Value kv_in, const AttnWeights& w);

// linear -> gelu -> linear
Value apply_mlp(Value x, const MlpWeights& w);

}  // namespace mdtrack
