#include "mdtrack/nn.hpp"

#include <cmath>

namespace mdtrack {

Tensor trunc_normal_init(std::vector<int> shape, double sigma, Rng& rng, Dtype dt) {
    Tensor t = Tensor::zeros(std::move(shape), dt);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.truncated_normal(sigma));
    return t;
}

LnWeights make_ln(ParamStore& store, const std::string& prefix, int c, Dtype dt) {
    LnWeights w;
    w.gain = &store.create(prefix + ".gain", Tensor::full({c}, 1.0, dt));
    w.bias = &store.create(prefix + ".bias", Tensor::zeros({c}, dt));
    return w;
}

AttnWeights make_attention(ParamStore& store, const std::string& prefix, int c, int n_heads,
                           Rng& rng, Dtype dt) {
    if (c % n_heads != 0) throw ConfigError(prefix + ": channels not divisible by heads");
    AttnWeights w;
    w.n_heads = n_heads;
    w.wq = &store.create(prefix + ".wq", trunc_normal_init({c, c}, 0.02, rng, dt));
    w.bq = &store.create(prefix + ".bq", Tensor::zeros({c}, dt));
    w.wk = &store.create(prefix + ".wk", trunc_normal_init({c, c}, 0.02, rng, dt));
    w.bk = &store.create(prefix + ".bk", Tensor::zeros({c}, dt));
    w.wv = &store.create(prefix + ".wv", trunc_normal_init({c, c}, 0.02, rng, dt));
    w.bv = &store.create(prefix + ".bv", Tensor::zeros({c}, dt));
    w.wo = &store.create(prefix + ".wo", trunc_normal_init({c, c}, 0.02, rng, dt));
    w.bo = &store.create(prefix + ".bo", Tensor::zeros({c}, dt));
    return w;
}

MlpWeights make_mlp(ParamStore& store, const std::string& prefix, int c, int expand, Rng& rng,
                    Dtype dt) {
    MlpWeights w;
    w.w1 = &store.create(prefix + ".w1", trunc_normal_init({c, c * expand}, 0.02, rng, dt));
    w.b1 = &store.create(prefix + ".b1", Tensor::zeros({c * expand}, dt));
    w.w2 = &store.create(prefix + ".w2", trunc_normal_init({c * expand, c}, 0.02, rng, dt));
    w.b2 = &store.create(prefix + ".b2", Tensor::zeros({c}, dt));
    return w;
}

Value apply_ln(Value x, const LnWeights& w) {
    Graph& g = *x.g;
    return layer_norm(x, g.leaf(*w.gain), g.leaf(*w.bias));
}

Value attention(Value q_in, Value kv_in, const AttnWeights& w) {
    Graph& g = *q_in.g;
    const int c = q_in.dim(1);
    if (kv_in.dim(1) != c) throw ShapeError("attention: channel mismatch");
    if (c % w.n_heads != 0) throw ShapeError("attention: channels not divisible by heads");
    const int dh = c / w.n_heads;

    Value q = linear(q_in, g.leaf(*w.wq), g.leaf(*w.bq));
    Value k = linear(kv_in, g.leaf(*w.wk), g.leaf(*w.bk));
    Value v = linear(kv_in, g.leaf(*w.wv), g.leaf(*w.bv));

    Value heads;
    for (int h = 0; h < w.n_heads; ++h) {
        Value qh = slice_cols(q, h * dh, dh);
        Value kh = slice_cols(k, h * dh, dh);
        Value vh = slice_cols(v, h * dh, dh);
        Value scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
        Value probs = softmax(scores, 1);
        Value oh = matmul(probs, vh);
        heads = h == 0 ? oh : concat_cols(heads, oh);
    }
    return linear(heads, g.leaf(*w.wo), g.leaf(*w.bo));
}

Value apply_mlp(Value x, const MlpWeights& w) {
    Graph& g = *x.g;
    return linear(gelu(linear(x, g.leaf(*w.w1), g.leaf(*w.b1))), g.leaf(*w.w2), g.leaf(*w.b2));
}

}  // namespace mdtrack
