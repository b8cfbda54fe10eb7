#include "mdtrack/verify.hpp"

#include <cmath>
#include <cstring>

#include "mdtrack/data.hpp"
#include "mdtrack/gradcheck.hpp"

namespace mdtrack {

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

CheckResult gradient_check(const std::string& name, const std::function<Value(Graph&)>& build,
                           std::vector<Param*> params, double tol,
                           std::int64_t max_per_param = 0) {
    CheckResult r;
    r.name = name;
    r.tolerance = tol;
    auto res = grad_check(build, params, 1e-5, max_per_param);
    r.value = res.max_rel_error;
    r.pass = res.max_rel_error < tol;
    if (!r.pass) r.detail = "worst " + res.worst_param;
    return r;
}

CheckResult predicate(const std::string& name, bool ok, const std::string& detail = "") {
    CheckResult r;
    r.name = name;
    r.pass = ok;
    r.value = ok ? 1 : 0;
    r.tolerance = 1;
    r.detail = detail;
    return r;
}

}  // namespace

std::vector<CheckResult> verify_numerics() {
    std::vector<CheckResult> out;
    Rng rng(0x5EED);

    {  // matmul over randomized shapes up to 16x16
        double worst = 0;
        for (int trial = 0; trial < 6; ++trial) {
            const int m = 1 + static_cast<int>(rng.uniform_int(16));
            const int k = 1 + static_cast<int>(rng.uniform_int(16));
            const int n = 1 + static_cast<int>(rng.uniform_int(16));
            ParamStore store;
            Param& a = store.create("a", random_tensor({m, k}, rng, Dtype::F64));
            Param& b = store.create("b", random_tensor({k, n}, rng, Dtype::F64));
            Tensor w = random_tensor({m, n}, rng, Dtype::F64);
            auto res = grad_check(
                [&](Graph& g) { return sum_all(mul(matmul(g.leaf(a), g.leaf(b)), constant(g, w))); },
                store.all());
            worst = std::max(worst, res.max_rel_error);
        }
        out.push_back({"numerics.matmul_grad", worst < 1e-4, worst, 1e-4, ""});
    }

    {  // softmax gradient + sum/shift properties
        double worst = 0;
        bool props = true;
        for (int trial = 0; trial < 6; ++trial) {
            const int rows = 1 + static_cast<int>(rng.uniform_int(16));
            const int cols = 2 + static_cast<int>(rng.uniform_int(15));
            ParamStore store;
            Param& p = store.create("x", random_tensor({rows, cols}, rng, Dtype::F64, -4, 4));
            Tensor w = random_tensor({rows, cols}, rng, Dtype::F64);
            worst = std::max(
                worst, grad_check([&](Graph& g) {
                           return sum_all(mul(softmax(g.leaf(p), 1), constant(g, w)));
                       },
                                  store.all())
                           .max_rel_error);
            Graph g;
            Value y = softmax(constant(g, p.value), 1);
            Tensor shifted = p.value.clone();
            for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted.set(i, shifted.at(i) + 2.5);
            Value y2 = softmax(constant(g, shifted), 1);
            for (int r = 0; r < rows; ++r) {
                double s = 0;
                for (int c = 0; c < cols; ++c) s += y.tensor().at(r * cols + c);
                if (std::fabs(s - 1.0) > 1e-6) props = false;
            }
            for (std::int64_t i = 0; i < y.numel(); ++i)
                if (std::fabs(y.tensor().at(i) - y2.tensor().at(i)) > 1e-6) props = false;
        }
        out.push_back({"numerics.softmax_grad", worst < 1e-4, worst, 1e-4, ""});
        out.push_back(predicate("numerics.softmax_props", props));
    }

    {  // activations
        ParamStore store;
        Param& p = store.create("x", random_tensor({9, 11}, rng, Dtype::F64, -3, 3));
        Tensor w = random_tensor({9, 11}, rng, Dtype::F64);
        out.push_back(gradient_check(
            "numerics.activations_grad",
            [&](Graph& g) {
                Value x = g.leaf(p);
                Value y = add(gelu(x), add(sigmoid(x), add(softplus(x), exp(scale(x, 0.3)))));
                return sum_all(mul(y, constant(g, w)));
            },
            store.all(), 1e-4));
    }

    {  // layer_norm
        ParamStore store;
        Param& x = store.create("x", random_tensor({7, 12}, rng, Dtype::F64));
        Param& gn = store.create("gain", random_tensor({12}, rng, Dtype::F64, 0.5, 1.5));
        Param& bs = store.create("bias", random_tensor({12}, rng, Dtype::F64));
        Tensor w = random_tensor({7, 12}, rng, Dtype::F64);
        out.push_back(gradient_check(
            "numerics.layer_norm_grad",
            [&](Graph& g) {
                return sum_all(mul(layer_norm(g.leaf(x), g.leaf(gn), g.leaf(bs)), constant(g, w)));
            },
            store.all(), 1e-4));
    }

    {  // channel_gap
        ParamStore store;
        Param& x = store.create("x", random_tensor({10, 6}, rng, Dtype::F64));
        Tensor w = random_tensor({10, 1}, rng, Dtype::F64);
        out.push_back(gradient_check(
            "numerics.channel_gap_grad",
            [&](Graph& g) { return sum_all(mul(channel_gap(g.leaf(x)), constant(g, w))); },
            store.all(), 1e-4));
    }

    {  // conv2d
        ParamStore store;
        Param& x = store.create("x", random_tensor({2, 5, 5}, rng, Dtype::F64));
        Param& k = store.create("k", random_tensor({3, 2, 3, 3}, rng, Dtype::F64));
        Param& b = store.create("b", random_tensor({3}, rng, Dtype::F64));
        Tensor w = random_tensor({3 * 5 * 5}, rng, Dtype::F64);
        out.push_back(gradient_check(
            "numerics.conv2d_grad",
            [&](Graph& g) {
                return sum_all(
                    mul(reshape(conv2d(g.leaf(x), g.leaf(k), g.leaf(b)), {75}), constant(g, w)));
            },
            store.all(), 1e-4));
    }

    {  // elementwise misc
        ParamStore store;
        const int rows = 8, cols = 9;
        Param& a = store.create("a", random_tensor({rows, cols}, rng, Dtype::F64, 0.2, 2.0));
        Param& b = store.create("b", random_tensor({rows, cols}, rng, Dtype::F64, 0.3, 1.5));
        Tensor w = random_tensor({rows, cols}, rng, Dtype::F64);
        out.push_back(gradient_check(
            "numerics.elementwise_grad",
            [&](Graph& g) {
                Value va = g.leaf(a), vb = g.leaf(b);
                Value t = div(add(mul(va, vb), sub(va, vb)),
                              add(vb, constant(g, Tensor::full({rows, cols}, 2.0, Dtype::F64))));
                t = maximum(minimum(t, va), neg(vb));
                t = add(t, log(add(mul(va, va),
                                   constant(g, Tensor::full({rows, cols}, 0.1, Dtype::F64)))));
                t = add(abs(t), relu(clamp(t, -0.8, 0.8)));
                return sum_all(mul(t, constant(g, w)));
            },
            store.all(), 1e-4));
    }

    {  // attention (one transformer block worth of composition)
        ParamStore store;
        Rng arng(17);
        AttnWeights aw = make_attention(store, "attn", 8, 2, arng, Dtype::F64);
        Param& x = store.create("x", random_tensor({6, 8}, rng, Dtype::F64));
        Tensor w = random_tensor({6, 8}, rng, Dtype::F64);
        out.push_back(gradient_check(
            "numerics.attention_grad",
            [&](Graph& g) {
                Value t = g.leaf(x);
                return sum_all(mul(attention(t, t, aw), constant(g, w)));
            },
            store.all(), 1e-4));
    }

    {  // determinism: two runs of one op chain are bit-identical per dtype
        bool ok = true;
        for (Dtype dt : {Dtype::F32, Dtype::F64}) {
            Rng r1(77);
            Tensor a = random_tensor({12, 10}, r1, dt);
            Tensor b = random_tensor({10, 12}, r1, dt);
            auto run = [&]() {
                Graph g;
                return gelu(softmax(matmul(constant(g, a), constant(g, b)), 1)).tensor();
            };
            if (!bit_equal(run(), run())) ok = false;
        }
        out.push_back(predicate("numerics.determinism", ok));
    }

    return out;
}

std::vector<CheckResult> verify_temporal() {
    std::vector<CheckResult> out;
    Rng rng(0xD1CE);

    {  // Eq.2 spot values
        Tensor abar, bbar;
        ssm_discretize(Tensor::zeros({2, 2}, Dtype::F64), Tensor::full({2}, 0.4, Dtype::F64),
                       Tensor::full({2}, 1.0, Dtype::F64), abar, bbar);
        double err = 0;
        for (int i = 0; i < 4; ++i) err = std::max(err, std::fabs(abar.at(i) - 1.0));
        Tensor a1 = Tensor::full({1, 1}, -1.0, Dtype::F64);
        ssm_discretize(a1, Tensor::full({1}, std::log(2.0), Dtype::F64),
                       Tensor::full({1}, 1.0, Dtype::F64), abar, bbar);
        err = std::max(err, std::fabs(abar.at(0) - 0.5));
        out.push_back({"temporal.discretize_spot", err < 1e-12, err, 1e-12, ""});
    }

    {  // scan equals the explicit per-token recurrence, 100 random instances
        double worst = 0;
        for (int trial = 0; trial < 100; ++trial) {
            const int l = 1 + static_cast<int>(rng.uniform_int(64));
            const int c = 2 + static_cast<int>(rng.uniform_int(31));
            const int d = 1 + static_cast<int>(rng.uniform_int(16));
            ParamStore store;
            Rng wrng = rng.fork(trial);
            SsmWeights w = make_ssm(store, "ssm", c, d, wrng, Dtype::F64);
            w.w_b->value = random_tensor({c, d}, wrng, Dtype::F64, -0.5, 0.5);
            w.w_c->value = random_tensor({c, d}, wrng, Dtype::F64, -0.5, 0.5);
            Tensor seq = random_tensor({l, c}, rng, Dtype::F64);
            Tensor h0 = random_tensor({c, d}, rng, Dtype::F64, -0.3, 0.3);

            // oracle: explicit loop over ssm_step with per-token projections
            Tensor a = Tensor::zeros({c, d}, Dtype::F64);
            for (std::int64_t i = 0; i < a.numel(); ++i)
                a.set(i, -std::exp(w.a_log->value.at(i)));
            Tensor h = h0.clone();
            Tensor expect = Tensor::zeros({l, c}, Dtype::F64);
            for (int t = 0; t < l; ++t) {
                Tensor x = Tensor::zeros({c}, Dtype::F64);
                for (int j = 0; j < c; ++j) x.set(j, seq.at(static_cast<std::int64_t>(t) * c + j));
                Tensor delta = Tensor::zeros({c}, Dtype::F64);
                for (int j = 0; j < c; ++j) {
                    double raw = w.b_dt->value.at(j);
                    for (int i = 0; i < c; ++i)
                        raw += x.at(i) * w.w_dt->value.at(static_cast<std::int64_t>(i) * c + j);
                    delta.set(j, std::max(raw, 0.0) + std::log1p(std::exp(-std::fabs(raw))));
                }
                Tensor bt = Tensor::zeros({d}, Dtype::F64), ct = Tensor::zeros({d}, Dtype::F64);
                for (int j = 0; j < d; ++j) {
                    double bb = 0, cc = 0;
                    for (int i = 0; i < c; ++i) {
                        bb += x.at(i) * w.w_b->value.at(static_cast<std::int64_t>(i) * d + j);
                        cc += x.at(i) * w.w_c->value.at(static_cast<std::int64_t>(i) * d + j);
                    }
                    bt.set(j, bb);
                    ct.set(j, cc);
                }
                auto [hn, y] = ssm_step(h, x, delta, bt, ct, a, w.d_skip->value);
                h = hn;
                for (int j = 0; j < c; ++j)
                    expect.set(static_cast<std::int64_t>(t) * c + j,
                               seq.at(static_cast<std::int64_t>(t) * c + j) + y.at(j));
            }

            Graph g(false);
            ScanResult r = ssm_scan(constant(g, seq), constant(g, h0), w);
            for (std::int64_t i = 0; i < expect.numel(); ++i)
                worst = std::max(worst, std::fabs(r.out.tensor().at(i) - expect.at(i)));
            for (std::int64_t i = 0; i < h.numel(); ++i)
                worst = std::max(worst, std::fabs(r.h_final.tensor().at(i) - h.at(i)));
        }
        out.push_back({"temporal.scan_oracle_100", worst < 1e-6, worst, 1e-6, ""});
    }

    {  // decoupling isolation over 10-frame runs, 100 perturbations each way
        const int c = 8, l = 4, frames = 10;
        auto run_once = [&](const TemporalWeights& tw, const TemporalConfig& tc,
                            const std::vector<Tensor>& rgb, const std::vector<Tensor>& xs,
                            const Tensor& z) {
            TemporalStates st = reset_states(1, c, tc.d_state, Dtype::F64, false, Modality::T);
            for (int t = 0; t < frames; ++t) {
                Graph g(false);
                auto vals = states_to_values(g, st);
                auto mk = [&](const Tensor& tt, Role role, Modality m, int rows, int cols) {
                    return TokenSeq{constant(g, tt), role, m, rows, cols};
                };
                JointSeq joint = assemble_joint(mk(z, Role::Template, Modality::RGB, 1, 2),
                                                mk(z, Role::Template, Modality::T, 1, 2),
                                                mk(rgb[static_cast<std::size_t>(t)], Role::Search,
                                                   Modality::RGB, 2, 2),
                                                mk(xs[static_cast<std::size_t>(t)], Role::Search,
                                                   Modality::T, 2, 2));
                auto res = temporal_forward(joint, vals[0], tw.blocks[0], tc);
                st = states_from_values({res.state});
            }
            return st.pairs[0].rgb.h.clone();
        };

        Tensor z = random_tensor({2, c}, rng, Dtype::F64);
        std::vector<Tensor> rgb, xs;
        for (int t = 0; t < frames; ++t) {
            rgb.push_back(random_tensor({l, c}, rng, Dtype::F64));
            xs.push_back(random_tensor({l, c}, rng, Dtype::F64));
        }

        ParamStore s_iso;
        Rng r_iso(41);
        TemporalConfig tc_iso;
        tc_iso.d_state = 4;
        tc_iso.no_cross = true;
        TemporalWeights tw_iso = make_temporal(s_iso, tc_iso, 1, c, 2, r_iso, Dtype::F64);
        Tensor base_iso = run_once(tw_iso, tc_iso, rgb, xs, z);

        ParamStore s_x;
        Rng r_x(42);
        TemporalConfig tc_x;
        tc_x.d_state = 4;
        TemporalWeights tw_x = make_temporal(s_x, tc_x, 1, c, 2, r_x, Dtype::F64);
        Tensor base_cross = run_once(tw_x, tc_x, rgb, xs, z);

        int identical = 0, changed = 0;
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<Tensor> xs2;
            Rng prng(1000 + trial);
            for (int t = 0; t < frames; ++t)
                xs2.push_back(random_tensor({l, c}, prng, Dtype::F64, -2.0, 2.0));
            if (bit_equal(run_once(tw_iso, tc_iso, rgb, xs2, z), base_iso)) ++identical;
            if (!bit_equal(run_once(tw_x, tc_x, rgb, xs2, z), base_cross)) ++changed;
        }
        out.push_back({"temporal.isolation_no_cross", identical == 100,
                       static_cast<double>(identical), 100, "bit-identical runs"});
        out.push_back({"temporal.exchange_with_cross", changed >= 99, static_cast<double>(changed),
                       99, "perturbations that changed h_RGB"});
    }

    return out;
}

std::vector<CheckResult> verify_fusion() {
    std::vector<CheckResult> out;
    Rng rng(0xF00D);
    const int c = 8;
    ParamStore store;
    FusionWeights w = make_fusion(store, FusionConfig{}, c, rng, Dtype::F64);

    {  // routing contract over 10,000 random tokens
        bool k_ok = true, sum_ok = true;
        const int chunk = 500;
        for (int rep = 0; rep < 20; ++rep) {
            Graph g(false);
            Tensor in = random_tensor({chunk, 2 * c}, rng, Dtype::F64, -2, 2);
            GateDecision d = route(constant(g, in), w, rep % 2 == 0, 555 + rep);
            for (int r = 0; r < chunk; ++r) {
                int nz = 0;
                double s = 0;
                for (int e = 0; e < kExpertCount; ++e) {
                    const double v = d.gates.tensor().at(r * kExpertCount + e);
                    if (v != 0.0) ++nz;
                    s += v;
                }
                if (nz != 2) k_ok = false;
                if (std::fabs(s - 1.0) > 1e-6) sum_ok = false;
            }
        }
        out.push_back(predicate("fusion.topk_exactly_2_of_10000", k_ok));
        out.push_back(predicate("fusion.gates_sum_to_1", sum_ok));
    }

    {  // eval-mode determinism
        Tensor in = random_tensor({64, 2 * c}, rng, Dtype::F64);
        auto run = [&]() {
            Graph g(false);
            return route(constant(g, in), w, false, 0).gates.tensor().clone();
        };
        out.push_back(predicate("fusion.eval_determinism", bit_equal(run(), run())));
    }

    {  // balance loss floor and closed forms
        double min_loss = 1e100;
        for (int trial = 0; trial < 1000; ++trial) {
            Graph g(false);
            Tensor in = random_tensor({16, 2 * c}, rng, Dtype::F64, -3, 3);
            GateDecision d = route(constant(g, in), w, trial % 2 == 0, 900 + trial);
            min_loss = std::min(min_loss, load_balance_loss({d}).tensor().at(0));
        }
        out.push_back({"fusion.balance_floor_1000", min_loss >= 1.0 - 1e-6, min_loss, 1.0, ">= 1 - 1e-6"});

        ParamStore s2;
        Rng r2(7);
        FusionWeights w2 = make_fusion(s2, FusionConfig{}, 2, r2, Dtype::F64);
        for (int i = 0; i < kExpertCount; ++i)
            for (int j = 0; j < kExpertCount; ++j)
                w2.w_g->value.set(i * kExpertCount + j, i == j ? 1.0 : 0.0);
        Graph g(false);
        GateDecision uni =
            route(constant(g, Tensor::full({5, 4}, 0.25, Dtype::F64)), w2, false, 0);
        const double u = load_balance_loss({uni}).tensor().at(0);
        GateDecision two = route(
            constant(g, Tensor::from({2, 4}, {3, 3, -60, -60, 3, 3, -60, -60}, Dtype::F64)), w2,
            false, 0);
        const double t2 = load_balance_loss({two}).tensor().at(0);
        out.push_back({"fusion.balance_uniform_1", std::fabs(u - 1.0) < 1e-6, u, 1.0, ""});
        out.push_back({"fusion.balance_two_experts_2", std::fabs(t2 - 2.0) < 1e-6, t2, 2.0, ""});
    }

    {  // lambda defaults and F ranges
        FusionConfig def;
        bool lambda_ok = def.lambda_rgb == 0.5 && def.lambda_x == 0.5;
        Graph g(false);
        const int l = 6;
        Tensor rgb = random_tensor({l, c}, rng, Dtype::F64);
        Tensor xs = random_tensor({l, c}, rng, Dtype::F64);
        TokenSeq a{constant(g, rgb), Role::Search, Modality::RGB, 2, 3};
        TokenSeq b{constant(g, xs), Role::Search, Modality::T, 2, 3};
        FusionOutput fo = fusion_forward(a, b, w, false, 0);
        bool range_ok = true;
        for (std::int64_t i = 0; i < fo.f_rgb.numel(); ++i) {
            if (!(fo.f_rgb.tensor().at(i) > 0.0 && fo.f_rgb.tensor().at(i) < 1.0)) range_ok = false;
            if (!(fo.f_x.tensor().at(i) > 0.0 && fo.f_x.tensor().at(i) < 1.0)) range_ok = false;
        }
        // saturation: enormous expert outputs still stay strictly inside (0,1)
        Value fsat = fusion_weights(constant(g, Tensor::full({4, 1}, 1.0, Dtype::F64)),
                                    constant(g, Tensor::full({4, c}, 1e9, Dtype::F64)));
        for (int i = 0; i < 4; ++i)
            if (!(fsat.tensor().at(i) > 0.0 && fsat.tensor().at(i) < 1.0)) range_ok = false;
        out.push_back(predicate("fusion.lambda_defaults_0.5", lambda_ok));
        out.push_back(predicate("fusion.f_strictly_inside_unit", range_ok));

        // G = 0 fallback: sigmoid(0) = 0.5
        Value f0 = fusion_weights(constant(g, Tensor::zeros({l, 1}, Dtype::F64)),
                                  constant(g, random_tensor({l, c}, rng, Dtype::F64)));
        double err = 0;
        for (int i = 0; i < l; ++i) err = std::max(err, std::fabs(f0.tensor().at(i) - 0.5));
        out.push_back({"fusion.zero_gate_half", err < 1e-6, err, 1e-6, ""});

        // composed fusion_weights equals the primitive-composition oracle
        Tensor gates = random_tensor({l, 1}, rng, Dtype::F64, 0, 1);
        Tensor eout = random_tensor({l, c}, rng, Dtype::F64, -3, 3);
        Value got = fusion_weights(constant(g, gates), constant(g, eout));
        Value oracle = channel_gap(sigmoid(mul_colvec(constant(g, eout), constant(g, gates))));
        double cerr = 0;
        for (int i = 0; i < l; ++i)
            cerr = std::max(cerr, std::fabs(got.tensor().at(i) - oracle.tensor().at(i)));
        out.push_back({"fusion.weights_composition", cerr < 1e-6, cerr, 1e-6, ""});
    }

    return out;
}

std::vector<CheckResult> verify_head() {
    std::vector<CheckResult> out;
    Rng rng(0xBEEF);

    {  // giou identities
        bool ok = true;
        for (int i = 0; i < 200; ++i) {
            BBox a{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.4),
                   rng.uniform(0.1, 0.4)};
            BBox b{rng.uniform(0.3, 0.7), rng.uniform(0.3, 0.7), rng.uniform(0.1, 0.4),
                   rng.uniform(0.1, 0.4)};
            if (giou(a, a) != 1.0) ok = false;
            if (std::fabs(giou(a, b) - giou(b, a)) > 1e-12) ok = false;
            const double v = giou(a, b);
            if (v < -1.0 || v > 1.0) ok = false;
        }
        out.push_back(predicate("head.giou_identity_symmetry", ok));
    }

    {  // decode/encode round trip, 1000 grid-snapped boxes
        const int h = 8, w = 8;
        double worst = 0;
        Graph g(false);
        for (int trial = 0; trial < 1000; ++trial) {
            BBox gt;
            gt.w = rng.uniform(0.1, 0.5);
            gt.h = rng.uniform(0.1, 0.5);
            gt.cx = rng.uniform(gt.w / 2, 1 - gt.w / 2);
            gt.cy = rng.uniform(gt.h / 2, 1 - gt.h / 2);
            TargetMaps t = make_target_map(gt, h, w);
            Tensor ps = Tensor::zeros({1, h, w}, Dtype::F64);
            Tensor pb = Tensor::zeros({2, h, w}, Dtype::F64);
            Tensor po = Tensor::zeros({2, h, w}, Dtype::F64);
            const std::int64_t cell = static_cast<std::int64_t>(t.ci) * w + t.cj;
            ps.set(cell, 1.0);
            pb.set(cell, gt.w);
            pb.set(h * w + cell, gt.h);
            po.set(cell, t.off_x);
            po.set(h * w + cell, t.off_y);
            ScoreMaps maps;
            maps.p_s = constant(g, ps);
            maps.p_b = constant(g, pb);
            maps.p_o = constant(g, po);
            maps.h = h;
            maps.w = w;
            auto [box, score] = decode_box(maps);
            (void)score;
            worst = std::max({worst, std::fabs(box.cx - gt.cx) / (0.5 / w),
                              std::fabs(box.cy - gt.cy) / (0.5 / h)});
        }
        out.push_back({"head.decode_encode_1000", worst <= 1.0, worst, 1.0,
                       "error as a fraction of 1/(2h)"});
    }

    {  // perfect-prediction focal loss
        BBox gt{0.5, 0.5, 0.3, 0.3};
        TargetMaps t = make_target_map(gt, 4, 4);
        Tensor perfect = Tensor::zeros({1, 4, 4}, Dtype::F64);
        perfect.set(static_cast<std::int64_t>(t.ci) * 4 + t.cj, 1.0);
        Graph g(false);
        const double v = focal_loss(constant(g, perfect), t.cls).tensor().at(0);
        out.push_back({"head.perfect_focal", v < 1e-6, v, 1e-6, ""});
    }

    return out;
}

std::vector<CheckResult> verify_model() {
    std::vector<CheckResult> out;
    ModelConfig mc;  // desk defaults: 4 blocks, 64 channels, 64/32 crops
    mc.dtype = Dtype::F64;
    Model model(mc, 31337);

    // synthetic input pair for a deterministic loss
    SynthConfig sc;
    sc.canvas = 96;
    sc.frames = 2;
    sc.seed = 4242;
    SequenceRecord seq = generate_sequence(sc);
    const CropWindow zwin = crop_window(seq.gt[0], 2.0);
    const CropWindow swin = crop_window(seq.gt[1], 4.0);
    Frame z_rgb{Modality::RGB, crop_resize(seq.rgb[0], zwin, mc.template_side, Dtype::F64)};
    Frame z_x{Modality::T, crop_resize(seq.x[0], zwin, mc.template_side, Dtype::F64)};
    Frame s_rgb{Modality::RGB, crop_resize(seq.rgb[1], swin, mc.search_side, Dtype::F64)};
    Frame s_x{Modality::T, crop_resize(seq.x[1], swin, mc.search_side, Dtype::F64)};
    const BBox gt_crop = box_to_crop(seq.gt[1], swin);

    auto build = [&](Graph& g) {
        auto states = states_to_values(g, model.make_states(Modality::T));
        auto fwd = model.forward(g, z_rgb, z_x, s_rgb, s_x, states, /*train_mode=*/false, 0);
        return total_loss(fwd.maps, gt_crop, fwd.balance, mc.loss).total;
    };
    // sampled elements per param keep the runtime inside the budget; every
    // param tensor is still touched
    auto res = grad_check(build, model.params().all(), 1e-5, /*max_elements_per_param=*/2);
    CheckResult r;
    r.name = "model.end_to_end_grad_f64";
    r.tolerance = 1e-3;
    r.value = res.max_rel_error;
    r.pass = res.max_rel_error < 1e-3;
    r.detail = "checked " + std::to_string(res.elements_checked) + " elements, worst " +
               res.worst_param;
    out.push_back(r);
    return out;
}

std::vector<CheckResult> run_verify(const std::string& module) {
    std::vector<CheckResult> out;
    auto append = [&](std::vector<CheckResult> v) {
        for (auto& r : v) out.push_back(std::move(r));
    };
    if (module == "all" || module == "numerics") append(verify_numerics());
    if (module == "all" || module == "temporal") append(verify_temporal());
    if (module == "all" || module == "fusion") append(verify_fusion());
    if (module == "all" || module == "head") append(verify_head());
    if (module == "all") append(verify_model());
    if (out.empty())
        throw ConfigError("unknown verify module '" + module +
                          "' (expected all, numerics, temporal, fusion, or head)");
    return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return true;
}

void print_results(const std::vector<CheckResult>& results, std::ostream& os) {
    for (const auto& r : results) {
        os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name << "  value " << r.value << "  tol "
           << r.tolerance;
        if (!r.detail.empty()) os << "  (" << r.detail << ")";
        os << "\n";
    }
}

}  // namespace mdtrack
