#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mdtrack/gradcheck.hpp"
#include "mdtrack/temporal.hpp"

using namespace mdtrack;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, Dtype dt, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), dt);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
    return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
    return a.same_shape(b) && a.dtype() == b.dtype() &&
           std::memcmp(a.raw(), b.raw(), a.byte_size()) == 0;
}

void zero_param(Param* p) {
    for (std::int64_t i = 0; i < p->value.numel(); ++i) p->value.set(i, 0.0);
}

// Explicit per-token recurrence using only ssm_step and the projections,
// independent of the fused scan implementation.
std::pair<Tensor, Tensor> scan_oracle(const Tensor& seq, const Tensor& h0, const SsmWeights& w) {
    const int l = seq.dim(0), c = seq.dim(1), d = w.d_state;
    Tensor a = Tensor::zeros({c, d}, Dtype::F64);
    for (std::int64_t i = 0; i < a.numel(); ++i) a.set(i, -std::exp(w.a_log->value.at(i)));
    Tensor out = Tensor::zeros({l, c}, Dtype::F64);
    Tensor h = h0.clone();
    for (int t = 0; t < l; ++t) {
        Tensor x = Tensor::zeros({c}, Dtype::F64);
        for (int j = 0; j < c; ++j) x.set(j, seq.at(static_cast<std::int64_t>(t) * c + j));
        Tensor delta = Tensor::zeros({c}, Dtype::F64);
        for (int j = 0; j < c; ++j) {
            double raw = w.b_dt->value.at(j);
            for (int i = 0; i < c; ++i) raw += x.at(i) * w.w_dt->value.at(static_cast<std::int64_t>(i) * c + j);
            delta.set(j, std::max(raw, 0.0) + std::log1p(std::exp(-std::fabs(raw))));
        }
        Tensor b = Tensor::zeros({d}, Dtype::F64);
        Tensor co = Tensor::zeros({d}, Dtype::F64);
        for (int j = 0; j < d; ++j) {
            double bb = 0, cc = 0;
            for (int i = 0; i < c; ++i) {
                bb += x.at(i) * w.w_b->value.at(static_cast<std::int64_t>(i) * d + j);
                cc += x.at(i) * w.w_c->value.at(static_cast<std::int64_t>(i) * d + j);
            }
            b.set(j, bb);
            co.set(j, cc);
        }
        auto [h_next, y] = ssm_step(h, x, delta, b, co, a, w.d_skip->value);
        h = h_next;
        for (int j = 0; j < c; ++j)
            out.set(static_cast<std::int64_t>(t) * c + j,
                    seq.at(static_cast<std::int64_t>(t) * c + j) + y.at(j));
    }
    return {out, h};
}

}  // namespace

TEST_CASE("ssm_discretize spot values") {
    // A = 0 -> Abar = 1 exactly
    Tensor a0 = Tensor::zeros({2, 3}, Dtype::F64);
    Tensor delta = Tensor::full({2}, 0.7, Dtype::F64);
    Tensor b = Tensor::from({3}, {1, 2, 3}, Dtype::F64);
    Tensor abar, bbar;
    ssm_discretize(a0, delta, b, abar, bbar);
    for (int i = 0; i < 6; ++i) CHECK(abar.at(i) == 1.0);

    // A = -1, delta = ln 2 -> Abar = 1/2
    Tensor a1 = Tensor::full({1, 1}, -1.0, Dtype::F64);
    Tensor dl = Tensor::full({1}, std::log(2.0), Dtype::F64);
    Tensor b1 = Tensor::full({1}, 1.0, Dtype::F64);
    ssm_discretize(a1, dl, b1, abar, bbar);
    CHECK(abar.at(0) == doctest::Approx(0.5).epsilon(1e-12));

    // Bbar = delta * B
    Tensor d01 = Tensor::full({1}, 0.1, Dtype::F64);
    Tensor b12 = Tensor::from({2}, {1, 2}, Dtype::F64);
    ssm_discretize(Tensor::zeros({1, 2}, Dtype::F64), d01, b12, abar, bbar);
    CHECK(bbar.at(0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(bbar.at(1) == doctest::Approx(0.2).epsilon(1e-12));

    Tensor dneg = Tensor::full({1}, -0.1, Dtype::F64);
    CHECK_THROWS_AS(ssm_discretize(a1, dneg, b1, abar, bbar), DomainError);
}

TEST_CASE("ssm_step hand cases") {
    // h_prev=0, Bbar=1 (delta=1, B=1), x=3, C=2, D=0, A=0 -> h=3, y=6
    Tensor h0 = Tensor::zeros({1, 1}, Dtype::F64);
    Tensor x = Tensor::full({1}, 3.0, Dtype::F64);
    Tensor delta = Tensor::full({1}, 1.0, Dtype::F64);
    Tensor b = Tensor::full({1}, 1.0, Dtype::F64);
    Tensor co = Tensor::full({1}, 2.0, Dtype::F64);
    Tensor a = Tensor::zeros({1, 1}, Dtype::F64);
    Tensor d0 = Tensor::zeros({1}, Dtype::F64);
    auto [h, y] = ssm_step(h0, x, delta, b, co, a, d0);
    CHECK(h.at(0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(y.at(0) == doctest::Approx(6.0).epsilon(1e-12));

    // C=0, D=1 -> y == x whatever the state
    Rng rng(1);
    Tensor hr = random_tensor({4, 3}, rng, Dtype::F64);
    Tensor xr = random_tensor({4}, rng, Dtype::F64);
    Tensor dl = Tensor::full({4}, 0.5, Dtype::F64);
    Tensor br = random_tensor({3}, rng, Dtype::F64);
    Tensor c0 = Tensor::zeros({3}, Dtype::F64);
    Tensor ar = random_tensor({4, 3}, rng, Dtype::F64, -2.0, -0.1);
    Tensor ones = Tensor::full({4}, 1.0, Dtype::F64);
    auto [h2, y2] = ssm_step(hr, xr, dl, br, c0, ar, ones);
    (void)h2;
    for (int i = 0; i < 4; ++i) CHECK(y2.at(i) == doctest::Approx(xr.at(i)).epsilon(1e-12));

    // A -> -inf limit: Abar = 0, h independent of h_prev
    Tensor abig = Tensor::full({4, 3}, -1e4, Dtype::F64);
    auto [ha, _] = ssm_step(hr, xr, dl, br, c0, abig, ones);
    auto [hb, __] = ssm_step(random_tensor({4, 3}, rng, Dtype::F64), xr, dl, br, c0, abig, ones);
    CHECK(bit_equal(ha, hb));
}

TEST_CASE("ssm_scan equals the explicit recurrence oracle") {
    Rng rng(2);
    for (int trial = 0; trial < 8; ++trial) {
        const int l = 1 + static_cast<int>(rng.uniform_int(32));
        const int c = 2 + static_cast<int>(rng.uniform_int(15));
        const int d = 1 + static_cast<int>(rng.uniform_int(8));
        ParamStore store;
        Rng wrng = rng.fork(trial);
        SsmWeights w = make_ssm(store, "ssm", c, d, wrng, Dtype::F64);
        // randomize away from the structured init
        w.w_b->value = random_tensor({c, d}, wrng, Dtype::F64, -0.5, 0.5);
        w.w_c->value = random_tensor({c, d}, wrng, Dtype::F64, -0.5, 0.5);
        w.b_dt->value = random_tensor({c}, wrng, Dtype::F64, -2.0, 1.0);

        Tensor seq = random_tensor({l, c}, rng, Dtype::F64);
        Tensor h0 = random_tensor({c, d}, rng, Dtype::F64, -0.3, 0.3);
        auto [oracle_out, oracle_h] = scan_oracle(seq, h0, w);

        Graph g;
        ScanResult r = ssm_scan(constant(g, seq), constant(g, h0), w);
        for (std::int64_t i = 0; i < oracle_out.numel(); ++i)
            CHECK(r.out.tensor().at(i) == doctest::Approx(oracle_out.at(i)).epsilon(1e-6));
        for (std::int64_t i = 0; i < oracle_h.numel(); ++i)
            CHECK(r.h_final.tensor().at(i) == doctest::Approx(oracle_h.at(i)).epsilon(1e-6));
    }
}

TEST_CASE("ssm_scan with zero state and zero input is the identity") {
    Rng rng(3);
    ParamStore store;
    SsmWeights w = make_ssm(store, "ssm", 6, 4, rng, Dtype::F64);
    Graph g;
    Tensor zseq = Tensor::zeros({5, 6}, Dtype::F64);
    ScanResult r = ssm_scan(constant(g, zseq), constant(g, Tensor::zeros({6, 4}, Dtype::F64)), w);
    for (std::int64_t i = 0; i < r.out.numel(); ++i) CHECK(r.out.tensor().at(i) == 0.0);
    for (std::int64_t i = 0; i < r.h_final.numel(); ++i) CHECK(r.h_final.tensor().at(i) == 0.0);
}

TEST_CASE("ssm_scan gradient check, including the cross-frame chain") {
    Rng rng(4);
    ParamStore store;
    const int l = 4, c = 5, d = 3;
    SsmWeights w = make_ssm(store, "ssm", c, d, rng, Dtype::F64);
    Param& pseq = store.create("seq", random_tensor({l, c}, rng, Dtype::F64));
    Param& ph0 = store.create("h0", random_tensor({c, d}, rng, Dtype::F64, -0.3, 0.3));
    Tensor wsum = random_tensor({l, c}, rng, Dtype::F64);
    Tensor wh = random_tensor({c, d}, rng, Dtype::F64);
    Tensor wsum2 = random_tensor({l, c}, rng, Dtype::F64);

    // frame 1 feeds its final state into frame 2; loss touches both outputs
    // and the final state, exercising every gradient path in the fused node
    auto build = [&](Graph& g) {
        ScanResult r1 = ssm_scan(g.leaf(pseq), g.leaf(ph0), w);
        ScanResult r2 = ssm_scan(r1.out, r1.h_final, w);
        Value loss = sum_all(mul(r2.out, constant(g, wsum)));
        loss = add(loss, sum_all(mul(r1.out, constant(g, wsum2))));
        return add(loss, sum_all(mul(r2.h_final, constant(g, wh))));
    };
    auto res = grad_check(build, store.all());
    INFO("worst " << res.worst_param << "[" << res.worst_index << "]");
    CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("bidir_cross_attn contracts") {
    Rng rng(5);
    ParamStore store;
    const int c = 8, l = 6;
    CrossPair dir_rgb = make_cross(store, "bidir_rgb", c, 2, rng, Dtype::F64);
    CrossPair dir_x = make_cross(store, "bidir_x", c, 2, rng, Dtype::F64);

    Graph g;
    Tensor rgb = random_tensor({l, c}, rng, Dtype::F64);
    Tensor x = random_tensor({l, c}, rng, Dtype::F64);

    // zeroed V projections leave both streams unchanged
    zero_param(dir_rgb.attn.wv);
    zero_param(dir_x.attn.wv);
    auto [ur, ux] = bidir_cross_attn(constant(g, rgb), constant(g, x), dir_rgb, dir_x);
    CHECK(bit_equal(ur.tensor(), rgb));
    CHECK(bit_equal(ux.tensor(), x));

    // equal inputs with shared weights stay equal
    ParamStore store2;
    Rng rng2(6);
    CrossPair shared = make_cross(store2, "shared", c, 2, rng2, Dtype::F64);
    auto [er, ex2] = bidir_cross_attn(constant(g, rgb), constant(g, rgb), shared, shared);
    CHECK(bit_equal(er.tensor(), ex2.tensor()));

    // tied directions: swapping the inputs swaps the outputs
    auto [a1, a2] = bidir_cross_attn(constant(g, rgb), constant(g, x), shared, shared);
    auto [b1, b2] = bidir_cross_attn(constant(g, x), constant(g, rgb), shared, shared);
    CHECK(bit_equal(a1.tensor(), b2.tensor()));
    CHECK(bit_equal(a2.tensor(), b1.tensor()));
}

TEST_CASE("inject_update contracts and gradient") {
    Rng rng(7);
    ParamStore store;
    const int c = 6, l = 4;
    IoWeights io;
    io.inject = make_cross(store, "inject", c, 2, rng, Dtype::F64);
    io.update = make_cross(store, "update", c, 2, rng, Dtype::F64);

    Graph g;
    Tensor bb = random_tensor({l, c}, rng, Dtype::F64);
    Tensor tt = random_tensor({l, c}, rng, Dtype::F64);

    {
        ParamStore zstore;
        Rng zr(8);
        IoWeights zio;
        zio.inject = make_cross(zstore, "inject", c, 2, zr, Dtype::F64);
        zio.update = make_cross(zstore, "update", c, 2, zr, Dtype::F64);
        zero_param(zio.inject.attn.wv);
        zero_param(zio.update.attn.wv);
        auto [b2, t2] = inject_update(constant(g, bb), constant(g, tt), zio);
        CHECK(bit_equal(b2.tensor(), bb));
        CHECK(bit_equal(t2.tensor(), tt));
    }

    Param& pbb = store.create("bb", bb);
    Param& ptt = store.create("tt", tt);
    Tensor w1 = random_tensor({l, c}, rng, Dtype::F64);
    Tensor w2 = random_tensor({l, c}, rng, Dtype::F64);
    auto build = [&](Graph& gg) {
        auto [b2, t2] = inject_update(gg.leaf(pbb), gg.leaf(ptt), io);
        return add(sum_all(mul(b2, constant(gg, w1))), sum_all(mul(t2, constant(gg, w2))));
    };
    CHECK(grad_check(build, store.all()).max_rel_error < 1e-4);
}

namespace {

struct TemporalFixture {
    ParamStore store;
    TemporalConfig cfg;
    TemporalWeights weights;
    int c = 8;

    explicit TemporalFixture(TemporalMode mode, bool no_cross = false, std::uint64_t seed = 9) {
        Rng rng(seed);
        cfg.mode = mode;
        cfg.d_state = 3;
        cfg.no_cross = no_cross;
        weights = make_temporal(store, cfg, 1, c, 2, rng, Dtype::F64);
    }

    JointSeq make_joint(Graph& g, const Tensor& s_rgb, const Tensor& s_x,
                        const Tensor& z) const {
        auto mk = [&](const Tensor& t, Role role, Modality m, int rows, int cols) {
            return TokenSeq{constant(g, t), role, m, rows, cols};
        };
        return assemble_joint(mk(z, Role::Template, Modality::RGB, 1, 2),
                              mk(z, Role::Template, Modality::T, 1, 2),
                              mk(s_rgb, Role::Search, Modality::RGB, 2, 2),
                              mk(s_x, Role::Search, Modality::T, 2, 2));
    }
};

}  // namespace

TEST_CASE("decoupling isolation: h_RGB ignores X perturbations without cross-attention") {
    TemporalFixture fx(TemporalMode::Decoupled, /*no_cross=*/true);
    Rng rng(10);
    Tensor z = random_tensor({2, fx.c}, rng, Dtype::F64);
    std::vector<Tensor> rgb_frames, x_frames;
    for (int t = 0; t < 4; ++t) {
        rgb_frames.push_back(random_tensor({4, fx.c}, rng, Dtype::F64));
        x_frames.push_back(random_tensor({4, fx.c}, rng, Dtype::F64));
    }

    auto run = [&](const std::vector<Tensor>& xs) {
        TemporalStates states = reset_states(1, fx.c, fx.cfg.d_state, Dtype::F64, false, Modality::T);
        for (int t = 0; t < 4; ++t) {
            Graph g(false);
            auto vals = states_to_values(g, states);
            JointSeq joint = fx.make_joint(g, rgb_frames[static_cast<std::size_t>(t)],
                                           xs[static_cast<std::size_t>(t)], z);
            auto res = temporal_forward(joint, vals[0], fx.weights.blocks[0], fx.cfg);
            states = states_from_values({res.state});
        }
        return states;
    };

    TemporalStates base = run(x_frames);
    CHECK(base.pairs[0].rgb.frame_index == 4);
    for (int trial = 0; trial < 10; ++trial) {
        auto perturbed = x_frames;
        Rng prng(100 + trial);
        for (auto& t : perturbed) t = random_tensor({4, fx.c}, prng, Dtype::F64, -3.0, 3.0);
        TemporalStates got = run(perturbed);
        CHECK(bit_equal(got.pairs[0].rgb.h, base.pairs[0].rgb.h));
        CHECK_FALSE(bit_equal(got.pairs[0].x.h, base.pairs[0].x.h));
    }

    // with cross-attention enabled the exchange must exist
    TemporalFixture fx2(TemporalMode::Decoupled, /*no_cross=*/false);
    auto run2 = [&](const Tensor& x0) {
        TemporalStates states = reset_states(1, fx2.c, fx2.cfg.d_state, Dtype::F64, false, Modality::T);
        Graph g(false);
        auto vals = states_to_values(g, states);
        JointSeq joint = fx2.make_joint(g, rgb_frames[0], x0, z);
        auto res = temporal_forward(joint, vals[0], fx2.weights.blocks[0], fx2.cfg);
        return states_from_values({res.state});
    };
    TemporalStates b2 = run2(x_frames[0]);
    int changed = 0;
    for (int trial = 0; trial < 10; ++trial) {
        Rng prng(200 + trial);
        if (!bit_equal(run2(random_tensor({4, fx2.c}, prng, Dtype::F64)).pairs[0].rgb.h,
                       b2.pairs[0].rgb.h))
            ++changed;
    }
    CHECK(changed == 10);
}

TEST_CASE("temporal_forward evolves states across frames") {
    TemporalFixture fx(TemporalMode::Decoupled);
    Rng rng(11);
    Tensor z = random_tensor({2, fx.c}, rng, Dtype::F64);
    TemporalStates states = reset_states(1, fx.c, fx.cfg.d_state, Dtype::F64, false, Modality::T);
    Tensor h_after_2, h_after_3;
    for (int t = 0; t < 3; ++t) {
        Graph g(false);
        auto vals = states_to_values(g, states);
        JointSeq joint = fx.make_joint(g, random_tensor({4, fx.c}, rng, Dtype::F64),
                                       random_tensor({4, fx.c}, rng, Dtype::F64), z);
        auto res = temporal_forward(joint, vals[0], fx.weights.blocks[0], fx.cfg);
        states = states_from_values({res.state});
        if (t == 1) h_after_2 = states.pairs[0].rgb.h.clone();
        if (t == 2) h_after_3 = states.pairs[0].rgb.h.clone();
    }
    CHECK_FALSE(bit_equal(h_after_2, h_after_3));
    CHECK(states.pairs[0].rgb.frame_index == 3);
}

TEST_CASE("mixed-mode temporal module runs and keeps one state") {
    TemporalFixture fx(TemporalMode::Mixed);
    Rng rng(12);
    Tensor z = random_tensor({2, fx.c}, rng, Dtype::F64);
    TemporalStates states = reset_states(1, fx.c, fx.cfg.d_state, Dtype::F64, true, Modality::T);
    CHECK(states.pairs[0].mixed);
    CHECK(states.pairs[0].rgb.h.dim(0) == 2 * fx.c);

    Graph g(false);
    auto vals = states_to_values(g, states);
    JointSeq joint = fx.make_joint(g, random_tensor({4, fx.c}, rng, Dtype::F64),
                                   random_tensor({4, fx.c}, rng, Dtype::F64), z);
    auto res = temporal_forward(joint, vals[0], fx.weights.blocks[0], fx.cfg);
    TemporalStates next = states_from_values({res.state});
    CHECK(next.pairs[0].rgb.frame_index == 1);
    CHECK(next.pairs[0].rgb.h.all_finite());
}

TEST_CASE("state modality tag mismatch is a contract error") {
    TemporalFixture fx(TemporalMode::Decoupled);
    Rng rng(13);
    Tensor z = random_tensor({2, fx.c}, rng, Dtype::F64);
    TemporalStates states = reset_states(1, fx.c, fx.cfg.d_state, Dtype::F64, false, Modality::D);
    Graph g(false);
    auto vals = states_to_values(g, states);
    JointSeq joint = fx.make_joint(g, random_tensor({4, fx.c}, rng, Dtype::F64),
                                   random_tensor({4, fx.c}, rng, Dtype::F64), z);
    CHECK_THROWS_AS(temporal_forward(joint, vals[0], fx.weights.blocks[0], fx.cfg),
                    ContractError);
}

TEST_CASE("state serialization round-trips bit-exactly") {
    Rng rng(14);
    TemporalStates states = reset_states(3, 8, 4, Dtype::F32, false, Modality::E);
    for (auto& p : states.pairs) {
        p.rgb.h = random_tensor({8, 4}, rng, Dtype::F32);
        p.x.h = random_tensor({8, 4}, rng, Dtype::F32);
        p.rgb.frame_index = p.x.frame_index = 17;
    }
    auto bytes = serialize_states(states);
    TemporalStates back = restore_states(bytes);
    REQUIRE(back.pairs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(bit_equal(back.pairs[i].rgb.h, states.pairs[i].rgb.h));
        CHECK(bit_equal(back.pairs[i].x.h, states.pairs[i].x.h));
        CHECK(back.pairs[i].x.frame_index == 17);
        CHECK(back.pairs[i].x.modality_tag == static_cast<std::uint8_t>(Modality::E));
    }
    CHECK(bit_equal(Tensor::zeros({1}, Dtype::F32),
                    Tensor::zeros({1}, Dtype::F32)));  // sanity for the helper

    // serialize(restore(bytes)) reproduces the byte stream
    CHECK(serialize_states(back) == bytes);

    auto corrupted = bytes;
    corrupted[1] = 'X';
    CHECK_THROWS_AS(restore_states(corrupted), FormatError);
    auto truncated = bytes;
    truncated.resize(truncated.size() - 3);
    bool threw_with_offset = false;
    try {
        restore_states(truncated);
    } catch (const FormatError& e) {
        threw_with_offset = e.offset >= 0;
    }
    CHECK(threw_with_offset);

    // mixed-mode states round-trip through the same container
    TemporalStates mixed = reset_states(2, 4, 3, Dtype::F64, true, Modality::T);
    mixed.pairs[1].rgb.h = random_tensor({8, 3}, rng, Dtype::F64);
    TemporalStates mback = restore_states(serialize_states(mixed));
    CHECK(mback.pairs.size() == 2);
    CHECK(mback.pairs[1].mixed);
    CHECK(bit_equal(mback.pairs[1].rgb.h, mixed.pairs[1].rgb.h));
}

TEST_CASE("restore mid-sequence replays bit-exactly") {
    TemporalFixture fx(TemporalMode::Decoupled);
    Rng rng(15);
    Tensor z = random_tensor({2, fx.c}, rng, Dtype::F64);
    std::vector<Tensor> rgb_frames, x_frames;
    for (int t = 0; t < 6; ++t) {
        rgb_frames.push_back(random_tensor({4, fx.c}, rng, Dtype::F64));
        x_frames.push_back(random_tensor({4, fx.c}, rng, Dtype::F64));
    }

    auto step = [&](TemporalStates& states, int t) {
        Graph g(false);
        auto vals = states_to_values(g, states);
        JointSeq joint = fx.make_joint(g, rgb_frames[static_cast<std::size_t>(t)],
                                       x_frames[static_cast<std::size_t>(t)], z);
        auto res = temporal_forward(joint, vals[0], fx.weights.blocks[0], fx.cfg);
        Tensor out = res.joint.tokens.tensor().clone();
        states = states_from_values({res.state});
        return out;
    };

    TemporalStates uninterrupted =
        reset_states(1, fx.c, fx.cfg.d_state, Dtype::F64, false, Modality::T);
    std::vector<Tensor> outs_a;
    for (int t = 0; t < 6; ++t) outs_a.push_back(step(uninterrupted, t));

    TemporalStates first = reset_states(1, fx.c, fx.cfg.d_state, Dtype::F64, false, Modality::T);
    std::vector<Tensor> outs_b;
    for (int t = 0; t < 3; ++t) outs_b.push_back(step(first, t));
    TemporalStates resumed = restore_states(serialize_states(first));
    for (int t = 3; t < 6; ++t) outs_b.push_back(step(resumed, t));

    for (int t = 0; t < 6; ++t) CHECK(bit_equal(outs_a[static_cast<std::size_t>(t)],
                                                outs_b[static_cast<std::size_t>(t)]));
    CHECK(bit_equal(uninterrupted.pairs[0].rgb.h, resumed.pairs[0].rgb.h));
    CHECK(bit_equal(uninterrupted.pairs[0].x.h, resumed.pairs[0].x.h));
}

TEST_CASE("stability: bounded state over a 100-frame run with |x| <= 1") {
    Rng rng(16);
    ParamStore store;
    const int c = 8, d = 4, l = 6;
    SsmWeights w = make_ssm(store, "ssm", c, d, rng, Dtype::F64);

    TemporalStates states = reset_states(1, c, d, Dtype::F64, false, Modality::T);
    Tensor h = states.pairs[0].rgb.h;
    double max_h = 0.0, max_abar = 0.0, max_drive = 0.0;
    for (int frame = 0; frame < 100; ++frame) {
        Tensor seq = random_tensor({l, c}, rng, Dtype::F64, -1.0, 1.0);
        Graph g(false);
        ScanResult r = ssm_scan(constant(g, seq), constant(g, h), w);
        h = r.h_final.tensor().clone();
        REQUIRE(h.all_finite());
        REQUIRE(r.out.tensor().all_finite());
        for (std::int64_t i = 0; i < h.numel(); ++i) max_h = std::max(max_h, std::fabs(h.at(i)));

        // instrument the realized Abar and drive terms with the oracle pieces
        for (int t = 0; t < l; ++t) {
            Tensor x = Tensor::zeros({c}, Dtype::F64);
            for (int j = 0; j < c; ++j) x.set(j, seq.at(static_cast<std::int64_t>(t) * c + j));
            Tensor raw = Tensor::zeros({c}, Dtype::F64);
            for (int j = 0; j < c; ++j) {
                double rv = w.b_dt->value.at(j);
                for (int i = 0; i < c; ++i)
                    rv += x.at(i) * w.w_dt->value.at(static_cast<std::int64_t>(i) * c + j);
                raw.set(j, std::max(rv, 0.0) + std::log1p(std::exp(-std::fabs(rv))));
            }
            for (int ci = 0; ci < c; ++ci)
                for (int di = 0; di < d; ++di) {
                    const double a = -std::exp(w.a_log->value.at(static_cast<std::int64_t>(ci) * d + di));
                    max_abar = std::max(max_abar, std::exp(raw.at(ci) * a));
                }
            double bnorm = 0;
            for (int j = 0; j < d; ++j) {
                double bb = 0;
                for (int i = 0; i < c; ++i)
                    bb += x.at(i) * w.w_b->value.at(static_cast<std::int64_t>(i) * d + j);
                bnorm = std::max(bnorm, std::fabs(bb));
            }
            for (int ci = 0; ci < c; ++ci)
                max_drive = std::max(max_drive, raw.at(ci) * bnorm * std::fabs(x.at(ci)));
        }
    }
    CHECK(max_abar < 1.0);
    const double bound = max_drive / (1.0 - max_abar);
    CHECK(max_h <= bound + 1e-9);
}
