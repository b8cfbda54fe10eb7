#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mdtrack/fusion.hpp"
#include "mdtrack/gradcheck.hpp"

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

// Router with W_g = I4 (2C = 4) so eval-mode logits equal the input row.
struct IdentityRouter {
    ParamStore store;
    FusionWeights w;

    IdentityRouter() {
        Rng rng(1);
        FusionConfig cfg;
        w = make_fusion(store, cfg, 2, rng, Dtype::F64);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j) w.w_g->value.set(i * 4 + j, i == j ? 1.0 : 0.0);
    }

    GateDecision route_row(Graph& g, const std::vector<double>& logits) {
        Tensor in = Tensor::from({1, 4}, logits, Dtype::F64);
        return route(constant(g, std::move(in)), w, false, 0);
    }
};

}  // namespace

TEST_CASE("pair_concat layout") {
    Graph g;
    Value rgb = constant(g, Tensor::from({2, 2}, {1, 2, 3, 4}, Dtype::F64));
    Value x = constant(g, Tensor::from({2, 2}, {5, 6, 7, 8}, Dtype::F64));
    Value cat = pair_concat(rgb, x);
    const double expect[8] = {1, 2, 5, 6, 3, 4, 7, 8};
    for (int i = 0; i < 8; ++i) CHECK(cat.tensor().at(i) == expect[i]);

    // slicing back recovers both inputs; the first C channels are RGB
    CHECK(bit_equal(slice_cols(cat, 0, 2).tensor(), rgb.tensor()));
    CHECK(bit_equal(slice_cols(cat, 2, 2).tensor(), x.tensor()));

    Value bad = constant(g, Tensor::zeros({3, 2}, Dtype::F64));
    CHECK_THROWS_AS(pair_concat(rgb, bad), ShapeError);
}

TEST_CASE("route: eval logits [2,1,0,-1] keep the top pair") {
    IdentityRouter fx;
    Graph g;
    GateDecision d = fx.route_row(g, {2, 1, 0, -1});
    const double z = std::exp(2.0) + std::exp(1.0);
    CHECK(d.gates.tensor().at(0) == doctest::Approx(std::exp(2.0) / z).epsilon(1e-4));
    CHECK(d.gates.tensor().at(1) == doctest::Approx(std::exp(1.0) / z).epsilon(1e-4));
    CHECK(d.gates.tensor().at(2) == 0.0);
    CHECK(d.gates.tensor().at(3) == 0.0);
    CHECK(d.topk_mask[0][0]);
    CHECK(d.topk_mask[0][1]);
    CHECK_FALSE(d.topk_mask[0][2]);
}

TEST_CASE("route: all-equal logits tie-break to the lowest indices") {
    IdentityRouter fx;
    Graph g;
    GateDecision d = fx.route_row(g, {0.5, 0.5, 0.5, 0.5});
    CHECK(d.gates.tensor().at(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.gates.tensor().at(1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.gates.tensor().at(2) == 0.0);
    CHECK(d.gates.tensor().at(3) == 0.0);
}

TEST_CASE("route: exactly K nonzero gates summing to one, argmax shift invariance") {
    Rng rng(2);
    ParamStore store;
    FusionConfig cfg;
    FusionWeights w = make_fusion(store, cfg, 6, rng, Dtype::F64);
    Graph g;
    Tensor in = random_tensor({64, 12}, rng, Dtype::F64, -2.0, 2.0);
    GateDecision d = route(constant(g, in), w, false, 0);
    for (int r = 0; r < 64; ++r) {
        int nonzero = 0;
        double sum = 0;
        for (int e = 0; e < 4; ++e) {
            const double v = d.gates.tensor().at(r * 4 + e);
            if (v != 0.0) ++nonzero;
            sum += v;
        }
        CHECK(nonzero == 2);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }

    // adding a constant to all logit columns leaves mask and gates unchanged
    Graph g2;
    Value base = constant(g2, in);
    GateDecision d1 = route(base, w, false, 0);
    Tensor shifted_w = w.w_g->value.clone();
    FusionWeights w2 = w;
    // emulate the shift by adding c to every raw logit via a bias-free trick:
    // route on logits built from the same input with W_g scaled is not a pure
    // shift, so instead verify via the raw_logits + recomputed mask
    for (int r = 0; r < 64; ++r) {
        std::array<int, 4> order{0, 1, 2, 3};
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return d1.raw_logits.at(r * 4 + a) + 3.7 > d1.raw_logits.at(r * 4 + b) + 3.7;
        });
        for (int j = 0; j < 4; ++j)
            CHECK(d1.topk_mask[static_cast<std::size_t>(r)][static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] ==
                  (j < 2));
    }
    (void)shifted_w;
    (void)w2;
}

TEST_CASE("route: train mode is seed-reproducible, eval mode deterministic") {
    Rng rng(3);
    ParamStore store;
    FusionWeights w = make_fusion(store, FusionConfig{}, 4, rng, Dtype::F64);
    Tensor in = random_tensor({8, 8}, rng, Dtype::F64);

    auto gates_of = [&](bool train, std::uint64_t seed) {
        Graph g;
        return route(constant(g, in), w, train, seed).gates.tensor().clone();
    };
    CHECK(bit_equal(gates_of(true, 42), gates_of(true, 42)));
    CHECK_FALSE(bit_equal(gates_of(true, 42), gates_of(true, 43)));
    CHECK(bit_equal(gates_of(false, 1), gates_of(false, 2)));
}

TEST_CASE("expert_apply: residual adapter contracts") {
    Rng rng(4);
    ParamStore store;
    FusionWeights w = make_fusion(store, FusionConfig{}, 8, rng, Dtype::F64);
    Graph g;
    Tensor in = random_tensor({5, 8}, rng, Dtype::F64);

    // zeroed up-projection leaves the residual only
    for (std::int64_t i = 0; i < w.experts[0].up_w->value.numel(); ++i)
        w.experts[0].up_w->value.set(i, 0.0);
    Value same = expert_apply(w.experts[0], constant(g, in));
    CHECK(bit_equal(same.tensor(), in));

    // distinct experts at random init disagree on the same input
    Value e1 = expert_apply(w.experts[1], constant(g, in));
    Value e2 = expert_apply(w.experts[2], constant(g, in));
    CHECK_FALSE(bit_equal(e1.tensor(), e2.tensor()));

    ParamStore gstore;
    Rng grng(5);
    FusionWeights gw = make_fusion(gstore, FusionConfig{}, 6, grng, Dtype::F64);
    Param& pin = gstore.create("in", random_tensor({4, 6}, grng, Dtype::F64));
    Tensor wsum = random_tensor({4, 6}, grng, Dtype::F64);
    auto build = [&](Graph& gg) {
        return sum_all(mul(expert_apply(gw.experts[3], gg.leaf(pin)), constant(gg, wsum)));
    };
    CHECK(grad_check(build, gstore.all()).max_rel_error < 1e-4);
}

TEST_CASE("fusion_weights values") {
    Rng rng(6);
    Graph g;
    const int l = 4, c = 6;

    // zero gate rows: sigmoid(0) = 0.5 per channel, F = 0.5
    Value zero_gate = constant(g, Tensor::zeros({l, 1}, Dtype::F64));
    Value expert_out = constant(g, random_tensor({l, c}, rng, Dtype::F64));
    Value f = fusion_weights(zero_gate, expert_out);
    for (int i = 0; i < l; ++i) CHECK(f.tensor().at(i) == doctest::Approx(0.5).epsilon(1e-6));

    // saturating expert outputs stay strictly below 1
    Value big_gate = constant(g, Tensor::full({l, 1}, 1.0, Dtype::F64));
    Value big = constant(g, Tensor::full({l, c}, 1e9, Dtype::F64));
    Value fs = fusion_weights(big_gate, big);
    for (int i = 0; i < l; ++i) {
        CHECK(fs.tensor().at(i) < 1.0);
        CHECK(fs.tensor().at(i) > 0.0);
    }

    // random case equals the composed primitive oracle
    Tensor gates = random_tensor({l, 1}, rng, Dtype::F64, 0.0, 1.0);
    Tensor eout = random_tensor({l, c}, rng, Dtype::F64, -3.0, 3.0);
    Value got = fusion_weights(constant(g, gates), constant(g, eout));
    Value oracle = channel_gap(sigmoid(mul_colvec(constant(g, eout), constant(g, gates))));
    for (int i = 0; i < l; ++i)
        CHECK(got.tensor().at(i) == doctest::Approx(oracle.tensor().at(i)).epsilon(1e-6));
}

TEST_CASE("fuse arithmetic") {
    Rng rng(7);
    Graph g;
    const int l = 3, c = 4;
    Tensor rgb = random_tensor({l, c}, rng, Dtype::F64);
    Tensor x = random_tensor({l, c}, rng, Dtype::F64);
    Value ones = constant(g, Tensor::full({l, 1}, 1.0, Dtype::F64));

    // F = 1 with lambda 0.5/0.5 gives the arithmetic mean
    Value mean = fuse(constant(g, rgb), constant(g, x), ones, ones);
    for (std::int64_t i = 0; i < mean.numel(); ++i)
        CHECK(mean.tensor().at(i) == doctest::Approx(0.5 * (rgb.at(i) + x.at(i))).epsilon(1e-12));

    // F_x = 0 suppresses the X stream entirely
    Value fr = constant(g, random_tensor({l, 1}, rng, Dtype::F64, 0.1, 0.9));
    Value zero = constant(g, Tensor::zeros({l, 1}, Dtype::F64));
    Value sup = fuse(constant(g, rgb), constant(g, x), fr, zero);
    for (int r = 0; r < l; ++r)
        for (int cc = 0; cc < c; ++cc)
            CHECK(sup.tensor().at(r * c + cc) ==
                  doctest::Approx(0.5 * fr.tensor().at(r) * rgb.at(r * c + cc)).epsilon(1e-12));

    // fuse is linear in each stream given fixed F
    Value fx = constant(g, random_tensor({l, 1}, rng, Dtype::F64, 0.1, 0.9));
    Tensor rgb_scaled = rgb.clone();
    for (std::int64_t i = 0; i < rgb_scaled.numel(); ++i) rgb_scaled.set(i, 3.0 * rgb.at(i));
    Value base = fuse(constant(g, rgb), constant(g, x), fr, fx);
    Value scaled = fuse(constant(g, rgb_scaled), constant(g, x), fr, fx);
    Value xterm = fuse(constant(g, Tensor::zeros({l, c}, Dtype::F64)), constant(g, x),
                       fr, fx);
    for (std::int64_t i = 0; i < base.numel(); ++i)
        CHECK(scaled.tensor().at(i) ==
              doctest::Approx(3.0 * (base.tensor().at(i) - xterm.tensor().at(i)) +
                              xterm.tensor().at(i))
                  .epsilon(1e-9));
}

TEST_CASE("load_balance_loss closed forms") {
    IdentityRouter fx;

    // exactly uniform routing (per-row uniform probabilities) -> exactly 1
    {
        Graph g;
        std::vector<GateDecision> ds;
        for (double c : {0.0, 1.0, -2.0, 0.25, 7.0, -0.5})
            ds.push_back(fx.route_row(g, {c, c, c, c}));
        Value loss = load_balance_loss(ds);
        CHECK(loss.tensor().at(0) == doctest::Approx(1.0).epsilon(1e-6));
    }

    // every token on the same two experts with equal gates -> 2.0
    {
        Graph g;
        std::vector<GateDecision> ds;
        for (int i = 0; i < 5; ++i) ds.push_back(fx.route_row(g, {1.0, 1.0, -60.0, -60.0}));
        Value loss = load_balance_loss(ds);
        CHECK(loss.tensor().at(0) == doctest::Approx(2.0).epsilon(1e-6));
    }

    // property: loss >= 1 - 1e-6 for random routing
    Rng rng(8);
    ParamStore store;
    FusionWeights w = make_fusion(store, FusionConfig{}, 5, rng, Dtype::F64);
    for (int trial = 0; trial < 50; ++trial) {
        Graph g;
        Tensor in = random_tensor({20, 10}, rng, Dtype::F64, -2.0, 2.0);
        GateDecision d = route(constant(g, in), w, true, 1000 + trial);
        CHECK(load_balance_loss({d}).tensor().at(0) >= 1.0 - 1e-6);
    }

    Graph g;
    CHECK_THROWS_AS(load_balance_loss({}), DomainError);
}

TEST_CASE("fusion_forward: modes, determinism, identical streams") {
    Rng rng(9);
    const int l = 6, c = 8;

    auto mk_seq = [&](Graph& g, const Tensor& t, Modality m) {
        return TokenSeq{constant(g, t), Role::Search, m, 2, 3};
    };

    // uniform mode: defined and differentiable
    {
        ParamStore store;
        Rng r2(10);
        FusionConfig cfg;
        cfg.mode = FusionMode::Uniform;
        FusionWeights w = make_fusion(store, cfg, c, r2, Dtype::F64);
        Param& prgb = store.create("s_rgb", random_tensor({l, c}, r2, Dtype::F64));
        Param& px = store.create("s_x", random_tensor({l, c}, r2, Dtype::F64));
        Tensor wsum = random_tensor({l, c}, r2, Dtype::F64);
        auto build = [&](Graph& g) {
            TokenSeq a{g.leaf(prgb), Role::Search, Modality::RGB, 2, 3};
            TokenSeq b{g.leaf(px), Role::Search, Modality::T, 2, 3};
            FusionOutput out = fusion_forward(a, b, w, false, 0);
            return sum_all(mul(out.fused, constant(g, wsum)));
        };
        CHECK(grad_check(build, store.all()).max_rel_error < 1e-4);
    }

    // mean mode: plain average
    {
        ParamStore store;
        FusionConfig cfg;
        cfg.mode = FusionMode::Mean;
        FusionWeights w = make_fusion(store, cfg, c, rng, Dtype::F64);
        CHECK(store.size() == 0);
        Graph g;
        Tensor rgb = random_tensor({l, c}, rng, Dtype::F64);
        Tensor x = random_tensor({l, c}, rng, Dtype::F64);
        FusionOutput out = fusion_forward(mk_seq(g, rgb, Modality::RGB), mk_seq(g, x, Modality::T),
                                          w, false, 0);
        for (std::int64_t i = 0; i < out.fused.numel(); ++i)
            CHECK(out.fused.tensor().at(i) ==
                  doctest::Approx(0.5 * (rgb.at(i) + x.at(i))).epsilon(1e-12));
        CHECK(out.balance.tensor().at(0) == 1.0);
    }

    // moe mode: eval determinism and output contracts
    {
        ParamStore store;
        Rng r3(11);
        FusionWeights w = make_fusion(store, FusionConfig{}, c, r3, Dtype::F64);
        Tensor rgb = random_tensor({l, c}, r3, Dtype::F64);
        Tensor x = random_tensor({l, c}, r3, Dtype::F64);
        auto run = [&]() {
            Graph g;
            FusionOutput out = fusion_forward(mk_seq(g, rgb, Modality::RGB),
                                              mk_seq(g, x, Modality::T), w, false, 0);
            return std::tuple<Tensor, Tensor, Tensor, int>(
                out.fused.tensor().clone(), out.f_rgb.tensor().clone(),
                out.balance.tensor().clone(), out.chosen_x);
        };
        auto [f1, fr1, b1, cx1] = run();
        auto [f2, fr2, b2, cx2] = run();
        CHECK(bit_equal(f1, f2));
        CHECK(bit_equal(fr1, fr2));
        CHECK(bit_equal(b1, b2));
        CHECK(cx1 == cx2);
        CHECK(cx1 >= 1);
        for (std::int64_t i = 0; i < fr1.numel(); ++i) {
            CHECK(fr1.at(i) > 0.0);
            CHECK(fr1.at(i) < 1.0);
        }
        CHECK(b1.at(0) >= 1.0 - 1e-6);
    }

    // identical streams with tied experts and equal gates: fused == F .* s
    {
        ParamStore store;
        Rng r4(12);
        FusionWeights w = make_fusion(store, FusionConfig{}, c, r4, Dtype::F64);
        for (std::int64_t i = 0; i < w.w_g->value.numel(); ++i) w.w_g->value.set(i, 0.0);
        // tie expert T to expert RGB
        for (int part = 0; part < 4; ++part) {
            Param* src[4] = {w.experts[0].down_w, w.experts[0].down_b, w.experts[0].up_w,
                             w.experts[0].up_b};
            Param* dst[4] = {w.experts[1].down_w, w.experts[1].down_b, w.experts[1].up_w,
                             w.experts[1].up_b};
            dst[part]->value = src[part]->value.clone();
        }
        Graph g;
        Tensor s = random_tensor({l, c}, r4, Dtype::F64);
        FusionOutput out = fusion_forward(mk_seq(g, s, Modality::RGB), mk_seq(g, s, Modality::T),
                                          w, false, 0);
        CHECK(out.chosen_x == 1);
        Value expect = mul_colvec(constant(g, s), out.f_rgb);
        for (std::int64_t i = 0; i < expect.numel(); ++i)
            CHECK(out.fused.tensor().at(i) ==
                  doctest::Approx(expect.tensor().at(i)).epsilon(1e-9));
    }
}

TEST_CASE("router gradient check in eval mode (selected paths)") {
    Rng rng(13);
    ParamStore store;
    FusionWeights w = make_fusion(store, FusionConfig{}, 6, rng, Dtype::F64);
    Tensor rgb = random_tensor({4, 6}, rng, Dtype::F64);
    Tensor x = random_tensor({4, 6}, rng, Dtype::F64);
    Tensor wsum = random_tensor({4, 6}, rng, Dtype::F64);
    auto build = [&](Graph& g) {
        TokenSeq a{constant(g, rgb), Role::Search, Modality::RGB, 2, 2};
        TokenSeq b{constant(g, x), Role::Search, Modality::T, 2, 2};
        FusionOutput out = fusion_forward(a, b, w, false, 0);
        return add(sum_all(mul(out.fused, constant(g, wsum))), out.balance);
    };
    auto res = grad_check(build, store.all());
    INFO("worst " << res.worst_param << "[" << res.worst_index << "]");
    CHECK(res.max_rel_error < 1e-4);
}
