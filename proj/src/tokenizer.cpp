#include "mdtrack/tokenizer.hpp"

namespace mdtrack {

const char* modality_name(Modality m) {
    switch (m) {
        case Modality::RGB: return "RGB";
        case Modality::T: return "T";
        case Modality::E: return "E";
        case Modality::D: return "D";
    }
    return "?";
}

Modality modality_from_string(const std::string& s) {
    if (s == "RGB" || s == "rgb") return Modality::RGB;
    if (s == "T" || s == "t") return Modality::T;
    if (s == "E" || s == "e") return Modality::E;
    if (s == "D" || s == "d") return Modality::D;
    throw ConfigError("unknown modality '" + s + "' (expected RGB, T, E, or D)");
}

const Segment& JointSeq::find(Role role, bool rgb) const {
    for (const Segment& s : segments) {
        if (s.context) continue;
        if (s.role == role && ((s.modality == Modality::RGB) == rgb)) return s;
    }
    throw ContractError("segment map lacks requested segment");
}

void JointSeq::validate() const {
    if (!tokens.defined()) throw ContractError("joint sequence without tokens");
    int expect = 0;
    for (const Segment& s : segments) {
        if (s.offset != expect) throw ContractError("segment map offsets are not contiguous");
        if (s.length <= 0 || s.rows * s.cols != s.length)
            throw ContractError("segment grid does not match its length");
        expect += s.length;
    }
    if (expect != tokens.dim(0)) throw ContractError("segment map does not cover the tokens");
}

EmbedWeights make_embed(ParamStore& store, int patch, int channels, int template_side,
                        int search_side, Rng& rng, Dtype dt) {
    if (template_side % patch != 0 || search_side % patch != 0)
        throw ConfigError("frame sides must be divisible by the patch size");
    EmbedWeights w;
    w.patch = patch;
    w.channels = channels;
    const int lz = (template_side / patch) * (template_side / patch);
    const int ls = (search_side / patch) * (search_side / patch);
    w.template_tokens = lz;
    w.search_tokens = ls;
    w.patch_w = &store.create("embed.patch_w",
                              trunc_normal_init({3 * patch * patch, channels}, 0.02, rng, dt));
    w.pos_template =
        &store.create("embed.pos_template", trunc_normal_init({lz, channels}, 0.02, rng, dt));
    w.pos_search =
        &store.create("embed.pos_search", trunc_normal_init({ls, channels}, 0.02, rng, dt));
    return w;
}

TokenSeq patch_embed(Graph& g, const Frame& frame, Role role, const EmbedWeights& w) {
    const Tensor& px = frame.pixels;
    if (px.rank() != 3 || px.dim(0) != 3)
        throw ShapeError("frame pixels must be [3,H,W], got " + px.shape_str());
    const int h = px.dim(1), wd = px.dim(2), p = w.patch;
    if (h % p != 0 || wd % p != 0)
        throw ShapeError("frame " + px.shape_str() + " not divisible by patch " + std::to_string(p));
    const int rows = h / p, cols = wd / p, plen = 3 * p * p;
    const Dtype dt = w.patch_w->value.dtype();

    // raster-ordered patch rows, each flattened channel-major then y then x
    Tensor patches = Tensor::zeros({rows * cols, plen}, dt);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            const std::int64_t row = static_cast<std::int64_t>(r) * cols + c;
            std::int64_t k = 0;
            for (int ch = 0; ch < 3; ++ch)
                for (int py = 0; py < p; ++py)
                    for (int pxi = 0; pxi < p; ++pxi)
                        patches.set(row * plen + k++,
                                    px.at((static_cast<std::int64_t>(ch) * h + r * p + py) * wd +
                                          c * p + pxi));
        }

    TokenSeq seq;
    seq.tokens = matmul(constant(g, std::move(patches)), g.leaf(*w.patch_w));
    seq.role = role;
    seq.modality = frame.modality;
    seq.rows = rows;
    seq.cols = cols;
    return seq;
}

TokenSeq add_positional(TokenSeq seq, const EmbedWeights& w) {
    Graph& g = *seq.tokens.g;
    Param* table = seq.role == Role::Template ? w.pos_template : w.pos_search;
    const int l = seq.rows * seq.cols;
    if (table->value.dim(0) != l)
        throw ShapeError("positional table holds " + std::to_string(table->value.dim(0)) +
                         " tokens, sequence has " + std::to_string(l));
    seq.tokens = add(seq.tokens, g.leaf(*table));
    return seq;
}

JointSeq assemble_joint(const TokenSeq& z_rgb, const TokenSeq& z_x, const TokenSeq& s_rgb,
                        const TokenSeq& s_x, std::optional<TokenSeq> context) {
    const int c = z_rgb.tokens.dim(1);
    for (const TokenSeq* s : {&z_x, &s_rgb, &s_x})
        if (s->tokens.dim(1) != c) throw ShapeError("assemble_joint: channel width mismatch");
    if (z_rgb.rows != z_x.rows || z_rgb.cols != z_x.cols)
        throw ShapeError("assemble_joint: template grids differ");
    if (s_rgb.rows != s_x.rows || s_rgb.cols != s_x.cols)
        throw ShapeError("assemble_joint: search grids differ");
    if (z_rgb.modality != Modality::RGB || s_rgb.modality != Modality::RGB)
        throw ContractError("assemble_joint: first template/search must be RGB");

    std::vector<Value> parts{z_rgb.tokens, z_x.tokens, s_rgb.tokens, s_x.tokens};
    JointSeq joint;
    int off = 0;
    auto push = [&](const TokenSeq& s, bool ctx) {
        Segment seg;
        seg.role = s.role;
        seg.modality = s.modality;
        seg.offset = off;
        seg.length = s.rows * s.cols;
        seg.rows = s.rows;
        seg.cols = s.cols;
        seg.context = ctx;
        joint.segments.push_back(seg);
        off += seg.length;
    };
    push(z_rgb, false);
    push(z_x, false);
    push(s_rgb, false);
    push(s_x, false);
    if (context) {
        if (context->tokens.dim(1) != c) throw ShapeError("assemble_joint: context width mismatch");
        parts.push_back(context->tokens);
        push(*context, true);
    }
    joint.tokens = concat_rows(parts);
    joint.validate();
    return joint;
}

std::pair<TokenSeq, TokenSeq> split_search(const JointSeq& joint) {
    joint.validate();
    const Segment& rgb = joint.find(Role::Search, true);
    const Segment& x = joint.find(Role::Search, false);
    TokenSeq a, b;
    a.tokens = slice_rows(joint.tokens, rgb.offset, rgb.length);
    a.role = Role::Search;
    a.modality = rgb.modality;
    a.rows = rgb.rows;
    a.cols = rgb.cols;
    b.tokens = slice_rows(joint.tokens, x.offset, x.length);
    b.role = Role::Search;
    b.modality = x.modality;
    b.rows = x.rows;
    b.cols = x.cols;
    return {a, b};
}

}  // namespace mdtrack
