#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "mdtrack/backbone.hpp"
#include "mdtrack/gradcheck.hpp"

using namespace mdtrack;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, Dtype dt, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), dt);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
    return t;
}

Frame random_frame(Modality m, int side, Rng& rng) {
    Frame f;
    f.modality = m;
    f.pixels = random_tensor({3, side, side}, rng, Dtype::F64, 0.0, 1.0);
    return f;
}

void zero_param(Param* p) {
    for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value.set(i, 0.0);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.dtype() == b.dtype() &&
           std::memcmp(a.raw(), b.raw(), a.byte_size()) == 0;
}

}  // namespace

TEST_CASE("patch_embed token counts") {
    Rng rng(1);
    ParamStore store;
    EmbedWeights w = make_embed(store, 16, 32, 32, 64, rng, Dtype::F64);
    Graph g;
    TokenSeq z = patch_embed(g, random_frame(Modality::RGB, 32, rng), Role::Template, w);
    CHECK(z.rows == 2);
    CHECK(z.cols == 2);
    CHECK(z.tokens.dim(0) == 4);

    // paper sizes: 112 template and 224 search at stride 16 give 49 and 196
    ParamStore store2;
    EmbedWeights wp = make_embed(store2, 16, 8, 112, 224, rng, Dtype::F64);
    TokenSeq zt = patch_embed(g, random_frame(Modality::RGB, 112, rng), Role::Template, wp);
    CHECK(zt.tokens.dim(0) == 49);
    TokenSeq st = patch_embed(g, random_frame(Modality::T, 224, rng), Role::Search, wp);
    CHECK(st.tokens.dim(0) == 196);

    Frame bad;
    bad.modality = Modality::RGB;
    bad.pixels = Tensor::zeros({3, 30, 32}, Dtype::F64);
    CHECK_THROWS_AS(patch_embed(g, bad, Role::Template, w), ShapeError);
}

TEST_CASE("patch_embed is linear in the pixels") {
    Rng rng(2);
    ParamStore store;
    EmbedWeights w = make_embed(store, 16, 24, 32, 32, rng, Dtype::F64);
    Graph g;
    Frame f = random_frame(Modality::RGB, 32, rng);
    Frame f2 = f;
    f2.pixels = f.pixels.clone();
    for (std::int64_t i = 0; i < f2.pixels.numel(); ++i) f2.pixels.set(i, 2.5 * f.pixels.at(i));

    TokenSeq a = patch_embed(g, f, Role::Template, w);
    TokenSeq b = patch_embed(g, f2, Role::Template, w);
    for (std::int64_t i = 0; i < a.tokens.numel(); ++i)
        CHECK(b.tokens.tensor().at(i) ==
              doctest::Approx(2.5 * a.tokens.tensor().at(i)).epsilon(1e-9));
}

TEST_CASE("add_positional behavior") {
    Rng rng(3);
    ParamStore store;
    EmbedWeights w = make_embed(store, 16, 24, 32, 32, rng, Dtype::F64);
    Graph g;
    TokenSeq z = patch_embed(g, random_frame(Modality::RGB, 32, rng), Role::Template, w);

    // zero table acts as identity
    zero_param(w.pos_template);
    TokenSeq zp = add_positional(z, w);
    CHECK(bit_equal(zp.tokens.tensor(), z.tokens.tensor()));

    // subtracting the table recovers the input
    w.pos_template->value = random_tensor({4, 24}, rng, Dtype::F64);
    TokenSeq zp2 = add_positional(z, w);
    Value recovered = sub(zp2.tokens, g.leaf(*w.pos_template));
    for (std::int64_t i = 0; i < z.tokens.numel(); ++i)
        CHECK(recovered.tensor().at(i) == doctest::Approx(z.tokens.tensor().at(i)).epsilon(1e-6));

    // positional addition does not commute with token permutation
    Tensor toks = z.tokens.tensor();
    Tensor perm = toks.clone();
    for (int c = 0; c < 24; ++c) {  // swap rows 0 and 3
        const double tmp = perm.at(c);
        perm.set(c, perm.at(3 * 24 + c));
        perm.set(3 * 24 + c, tmp);
    }
    TokenSeq permuted{constant(g, perm), Role::Template, Modality::RGB, 2, 2};
    Value add_then_perm_row0 = slice_rows(zp2.tokens, 3, 1);
    TokenSeq perm_then_add = add_positional(permuted, w);
    Value got_row0 = slice_rows(perm_then_add.tokens, 0, 1);
    bool all_equal = true;
    for (int c = 0; c < 24; ++c)
        if (std::abs(got_row0.tensor().at(c) - add_then_perm_row0.tensor().at(c)) > 1e-9)
            all_equal = false;
    CHECK_FALSE(all_equal);

    // grid larger than the table
    ParamStore store2;
    EmbedWeights small = make_embed(store2, 16, 24, 32, 32, rng, Dtype::F64);
    TokenSeq big = patch_embed(g, random_frame(Modality::RGB, 64, rng), Role::Template, small);
    CHECK_THROWS_AS(add_positional(big, small), ShapeError);
}

TEST_CASE("assemble_joint layout and round trip") {
    Rng rng(4);
    Graph g;
    const int c = 8;
    auto mk = [&](Role role, Modality m, int rows, int cols) {
        TokenSeq s;
        s.tokens = constant(g, random_tensor({rows * cols, c}, rng, Dtype::F64));
        s.role = role;
        s.modality = m;
        s.rows = rows;
        s.cols = cols;
        return s;
    };
    TokenSeq z_rgb = mk(Role::Template, Modality::RGB, 2, 2);
    TokenSeq z_x = mk(Role::Template, Modality::T, 2, 2);
    TokenSeq s_rgb = mk(Role::Search, Modality::RGB, 4, 4);
    TokenSeq s_x = mk(Role::Search, Modality::T, 4, 4);

    JointSeq joint = assemble_joint(z_rgb, z_x, s_rgb, s_x);
    CHECK(joint.tokens.dim(0) == 40);
    CHECK(joint.find(Role::Search, true).offset == 8);
    CHECK(joint.segments.size() == 4);

    auto [r, x] = split_search(joint);
    CHECK(bit_equal(r.tokens.tensor(), s_rgb.tokens.tensor()));
    CHECK(bit_equal(x.tokens.tensor(), s_x.tokens.tensor()));
    CHECK(x.modality == Modality::T);
    CHECK(r.rows == 4);

    // reassembling the split pieces restores the joint exactly
    JointSeq joint2 = assemble_joint(z_rgb, z_x, r, x);
    CHECK(bit_equal(joint2.tokens.tensor(), joint.tokens.tensor()));

    // paper-scale arithmetic
    TokenSeq pz_rgb = mk(Role::Template, Modality::RGB, 7, 7);
    TokenSeq pz_x = mk(Role::Template, Modality::D, 7, 7);
    TokenSeq ps_rgb = mk(Role::Search, Modality::RGB, 14, 14);
    TokenSeq ps_x = mk(Role::Search, Modality::D, 14, 14);
    CHECK(assemble_joint(pz_rgb, pz_x, ps_rgb, ps_x).tokens.dim(0) == 490);

    TokenSeq wrong = mk(Role::Template, Modality::T, 2, 2);
    wrong.tokens = constant(g, random_tensor({4, c + 1}, rng, Dtype::F64));
    CHECK_THROWS_AS(assemble_joint(z_rgb, wrong, s_rgb, s_x), ShapeError);

    JointSeq corrupt = joint;
    corrupt.segments[2].offset = 9;
    CHECK_THROWS_AS(split_search(corrupt), ContractError);
}

namespace {

JointSeq tiny_joint(Graph& g, Rng& rng, int c, Dtype dt = Dtype::F64) {
    auto mk = [&](Role role, Modality m, int rows, int cols) {
        TokenSeq s;
        s.tokens = constant(g, random_tensor({rows * cols, c}, rng, dt));
        s.role = role;
        s.modality = m;
        s.rows = rows;
        s.cols = cols;
        return s;
    };
    return assemble_joint(mk(Role::Template, Modality::RGB, 1, 2), mk(Role::Template, Modality::T, 1, 2),
                          mk(Role::Search, Modality::RGB, 2, 2), mk(Role::Search, Modality::T, 2, 2));
}

}  // namespace

TEST_CASE("block_forward: zeroed weights reduce to identity") {
    Rng rng(5);
    ParamStore store;
    BackboneConfig cfg{1, 8, 2, 1};
    BackboneWeights bw = make_backbone(store, cfg, rng, Dtype::F64);
    for (Param* p : store.all())
        if (p->name.find("ln") == std::string::npos) zero_param(p);

    Graph g;
    JointSeq joint = tiny_joint(g, rng, 8);
    JointSeq out = block_forward(joint, bw.blocks[0]);
    CHECK(bit_equal(out.tokens.tensor(), joint.tokens.tensor()));
}

TEST_CASE("single-token attention weight is exactly one") {
    Rng rng(6);
    ParamStore store;
    AttnWeights aw = make_attention(store, "attn", 8, 2, rng, Dtype::F64);
    Graph g;
    Value tok = constant(g, random_tensor({1, 8}, rng, Dtype::F64));
    Value out = attention(tok, tok, aw);
    // with one token softmax gives probability exactly 1, so the output is
    // out_proj(V) regardless of Q and K
    Value v = linear(tok, g.leaf(*aw.wv), g.leaf(*aw.bv));
    Value expect = linear(v, g.leaf(*aw.wo), g.leaf(*aw.bo));
    for (int i = 0; i < 8; ++i)
        CHECK(out.tensor().at(i) == doctest::Approx(expect.tensor().at(i)).epsilon(1e-12));
}

TEST_CASE("V projection zeroed leaves only the MLP path") {
    Rng rng(7);
    ParamStore store;
    BackboneConfig cfg{1, 8, 2, 1};
    BackboneWeights bw = make_backbone(store, cfg, rng, Dtype::F64);
    zero_param(bw.blocks[0].attn.wv);
    zero_param(bw.blocks[0].attn.bv);

    Graph g;
    JointSeq joint = tiny_joint(g, rng, 8);
    JointSeq out = block_forward(joint, bw.blocks[0]);
    Value expect = add(joint.tokens, apply_mlp(apply_ln(joint.tokens, bw.blocks[0].ln2),
                                               bw.blocks[0].mlp));
    for (std::int64_t i = 0; i < expect.numel(); ++i)
        CHECK(out.tokens.tensor().at(i) == doctest::Approx(expect.tensor().at(i)).epsilon(1e-12));
}

TEST_CASE("attention equals its composed-primitive oracle (rows sum to 1)") {
    Rng rng(8);
    ParamStore store;
    const int c = 8, heads = 2, dh = 4, l = 12;
    AttnWeights aw = make_attention(store, "attn", c, heads, rng, Dtype::F64);
    Graph g;
    Value x = constant(g, random_tensor({l, c}, rng, Dtype::F64));
    Value got = attention(x, x, aw);

    Value q = linear(x, g.leaf(*aw.wq), g.leaf(*aw.bq));
    Value k = linear(x, g.leaf(*aw.wk), g.leaf(*aw.bk));
    Value v = linear(x, g.leaf(*aw.wv), g.leaf(*aw.bv));
    Value acc;
    for (int hh = 0; hh < heads; ++hh) {
        Value qh = slice_cols(q, hh * dh, dh);
        Value kh = slice_cols(k, hh * dh, dh);
        Value vh = slice_cols(v, hh * dh, dh);
        Value probs = softmax(scale(matmul(qh, transpose(kh)), 0.5), 1);
        for (int r = 0; r < l; ++r) {
            double s = 0;
            for (int cc = 0; cc < l; ++cc) s += probs.tensor().at(r * l + cc);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
        Value oh = matmul(probs, vh);
        acc = hh == 0 ? oh : concat_cols(acc, oh);
    }
    Value expect = linear(acc, g.leaf(*aw.wo), g.leaf(*aw.bo));
    for (std::int64_t i = 0; i < expect.numel(); ++i)
        CHECK(got.tensor().at(i) == doctest::Approx(expect.tensor().at(i)).epsilon(1e-12));
}

TEST_CASE("block_forward permutation equivariance across modality segments") {
    Rng rng(9);
    ParamStore store;
    BackboneConfig cfg{1, 8, 2, 1};
    BackboneWeights bw = make_backbone(store, cfg, rng, Dtype::F64);

    Graph g;
    const int c = 8;
    Tensor z1 = random_tensor({2, c}, rng, Dtype::F64);
    Tensor z2 = random_tensor({2, c}, rng, Dtype::F64);
    Tensor s1 = random_tensor({4, c}, rng, Dtype::F64);
    Tensor s2 = random_tensor({4, c}, rng, Dtype::F64);
    auto mk = [&](const Tensor& t, Role role, Modality m, int rows, int cols) {
        return TokenSeq{constant(g, t), role, m, rows, cols};
    };
    JointSeq a = assemble_joint(mk(z1, Role::Template, Modality::RGB, 1, 2),
                                mk(z2, Role::Template, Modality::T, 1, 2),
                                mk(s1, Role::Search, Modality::RGB, 2, 2),
                                mk(s2, Role::Search, Modality::T, 2, 2));
    JointSeq b = assemble_joint(mk(z2, Role::Template, Modality::RGB, 1, 2),
                                mk(z1, Role::Template, Modality::T, 1, 2),
                                mk(s2, Role::Search, Modality::RGB, 2, 2),
                                mk(s1, Role::Search, Modality::T, 2, 2));
    JointSeq oa = block_forward(a, bw.blocks[0]);
    JointSeq ob = block_forward(b, bw.blocks[0]);

    // swapping segment contents swaps the corresponding output segments
    auto seg = [&](const JointSeq& j, int idx) {
        const Segment& s = j.segments[static_cast<std::size_t>(idx)];
        return slice_rows(j.tokens, s.offset, s.length).tensor();
    };
    CHECK(bit_equal(seg(oa, 0), seg(ob, 1)));
    CHECK(bit_equal(seg(oa, 1), seg(ob, 0)));
    CHECK(bit_equal(seg(oa, 2), seg(ob, 3)));
    CHECK(bit_equal(seg(oa, 3), seg(ob, 2)));
}

TEST_CASE("backbone_forward without hooks equals the plain block stack") {
    Rng rng(10);
    ParamStore store;
    BackboneConfig cfg{2, 8, 2, 1};
    BackboneWeights bw = make_backbone(store, cfg, rng, Dtype::F64);
    CHECK(hook_count(cfg) == 2);

    Graph g;
    JointSeq joint = tiny_joint(g, rng, 8);
    JointSeq plain = block_forward(block_forward(joint, bw.blocks[0]), bw.blocks[1]);
    JointSeq full = backbone_forward(joint, bw);
    CHECK(bit_equal(full.tokens.tensor(), plain.tokens.tensor()));

    int hook_calls = 0;
    backbone_forward(joint, bw, [&](int, const JointSeq& j) {
        ++hook_calls;
        return j;
    });
    CHECK(hook_calls == 2);

    BackboneConfig every2{2, 8, 2, 2};
    CHECK(hook_count(every2) == 1);
}

TEST_CASE("backbone gradient check on a two-block config") {
    Rng rng(11);
    ParamStore store;
    BackboneConfig cfg{2, 8, 2, 1};
    BackboneWeights bw = make_backbone(store, cfg, rng, Dtype::F64);
    Tensor in = random_tensor({10, 8}, rng, Dtype::F64);
    Tensor wsum = random_tensor({10, 8}, rng, Dtype::F64);

    auto build = [&](Graph& g) {
        Value all = constant(g, in);
        auto mk = [&](int off, int len, Role role, Modality m, int rows, int cols) {
            return TokenSeq{slice_rows(all, off, len), role, m, rows, cols};
        };
        JointSeq joint = assemble_joint(mk(0, 2, Role::Template, Modality::RGB, 1, 2),
                                        mk(2, 2, Role::Template, Modality::T, 1, 2),
                                        mk(4, 3, Role::Search, Modality::RGB, 1, 3),
                                        mk(7, 3, Role::Search, Modality::T, 1, 3));
        JointSeq out = backbone_forward(joint, bw);
        return sum_all(mul(out.tokens, constant(g, wsum)));
    };
    auto res = grad_check(build, store.all());
    INFO("worst " << res.worst_param);
    CHECK(res.max_rel_error < 1e-4);
}
