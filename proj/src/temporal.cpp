#include "mdtrack/temporal.hpp"

#include <cmath>
#include <cstring>

namespace mdtrack {

TemporalMode temporal_mode_from_string(const std::string& s) {
    if (s == "off") return TemporalMode::Off;
    if (s == "token") return TemporalMode::Token;
    if (s == "mixed") return TemporalMode::Mixed;
    if (s == "decoupled") return TemporalMode::Decoupled;
    throw ConfigError("unknown temporal mode '" + s + "'");
}

const char* temporal_mode_name(TemporalMode m) {
    switch (m) {
        case TemporalMode::Off: return "off";
        case TemporalMode::Token: return "token";
        case TemporalMode::Mixed: return "mixed";
        case TemporalMode::Decoupled: return "decoupled";
    }
    return "?";
}

SsmWeights make_ssm(ParamStore& store, const std::string& prefix, int channels, int d_state,
                    Rng& rng, Dtype dt) {
    if (d_state < 1) throw ConfigError(prefix + ": d_state must be >= 1");
    SsmWeights w;
    w.channels = channels;
    w.d_state = d_state;

    // A spans -1 .. -d_state, log-spaced over the state index, same for
    // every channel; stored as log so A stays strictly negative.
    Tensor a_log = Tensor::zeros({channels, d_state}, dt);
    for (int i = 0; i < d_state; ++i) {
        const double mag = d_state == 1
                               ? 1.0
                               : std::exp(std::log(static_cast<double>(d_state)) * i / (d_state - 1));
        for (int c = 0; c < channels; ++c)
            a_log.set(static_cast<std::int64_t>(c) * d_state + i, std::log(mag));
    }
    w.a_log = &store.create(prefix + ".a_log", std::move(a_log));
    w.d_skip = &store.create(prefix + ".d", Tensor::full({channels}, 1.0, dt));
    w.w_dt = &store.create(prefix + ".w_dt", trunc_normal_init({channels, channels}, 0.02, rng, dt));
    // softplus(b_dt) ~ 0.01 at init
    const double b0 = std::log(std::exp(0.01) - 1.0);
    w.b_dt = &store.create(prefix + ".b_dt", Tensor::full({channels}, b0, dt));
    w.w_b = &store.create(prefix + ".w_b", trunc_normal_init({channels, d_state}, 0.02, rng, dt));
    w.w_c = &store.create(prefix + ".w_c", trunc_normal_init({channels, d_state}, 0.02, rng, dt));
    return w;
}

void ssm_discretize(const Tensor& a, const Tensor& delta, const Tensor& b, Tensor& abar,
                    Tensor& bbar) {
    if (a.rank() != 2) throw ShapeError("ssm_discretize: A must be [C,d]");
    const int c = a.dim(0), d = a.dim(1);
    if (delta.numel() != c) throw ShapeError("ssm_discretize: delta must be [C]");
    if (b.numel() != d) throw ShapeError("ssm_discretize: B must be [d]");
    for (int i = 0; i < c; ++i)
        if (delta.at(i) <= 0.0) throw DomainError("ssm_discretize: delta must be positive");
    abar = Tensor::zeros({c, d}, a.dtype());
    bbar = Tensor::zeros({c, d}, a.dtype());
    for (int ci = 0; ci < c; ++ci)
        for (int di = 0; di < d; ++di) {
            abar.set(static_cast<std::int64_t>(ci) * d + di,
                     std::exp(delta.at(ci) * a.at(static_cast<std::int64_t>(ci) * d + di)));
            bbar.set(static_cast<std::int64_t>(ci) * d + di, delta.at(ci) * b.at(di));
        }
}

std::pair<Tensor, Tensor> ssm_step(const Tensor& h_prev, const Tensor& x, const Tensor& delta,
                                   const Tensor& b, const Tensor& c_out, const Tensor& a,
                                   const Tensor& d_skip) {
    const int c = a.dim(0), d = a.dim(1);
    if (h_prev.dim(0) != c || h_prev.dim(1) != d) throw ShapeError("ssm_step: h shape");
    if (x.numel() != c || delta.numel() != c || d_skip.numel() != c)
        throw ShapeError("ssm_step: channel vectors");
    if (b.numel() != d || c_out.numel() != d) throw ShapeError("ssm_step: state vectors");
    Tensor abar, bbar;
    ssm_discretize(a, delta, b, abar, bbar);
    Tensor h = Tensor::zeros({c, d}, h_prev.dtype());
    Tensor y = Tensor::zeros({c}, h_prev.dtype());
    for (int ci = 0; ci < c; ++ci) {
        double acc = 0.0;
        for (int di = 0; di < d; ++di) {
            const std::int64_t k = static_cast<std::int64_t>(ci) * d + di;
            const double hv = abar.at(k) * h_prev.at(k) + bbar.at(k) * x.at(ci);
            h.set(k, hv);
            acc += c_out.at(di) * h.at(k);
        }
        y.set(ci, acc + d_skip.at(ci) * x.at(ci));
    }
    return {h, y};
}

namespace {

// Saved forward intermediates plus the slot where the h_final node deposits
// its incoming gradient for the scan node's backward.
struct ScanCtx {
    Tensor delta;   // [L,C] post-softplus
    Tensor raws;    // [L,C] pre-softplus
    Tensor bmat;    // [L,d]
    Tensor cmat;    // [L,d]
    Tensor hist;    // [L,C,d] hidden state after each token
    Tensor g_hfin;  // [C,d], undefined until the h_final node runs backward
};

template <typename T>
void scan_forward(const Tensor& seq, const Tensor& h0, const Tensor& a_log, const Tensor& d_skip,
                  const Tensor& w_dt, const Tensor& b_dt, const Tensor& w_b, const Tensor& w_c,
                  Tensor& out, ScanCtx& ctx) {
    const int l = seq.dim(0), c = seq.dim(1), d = a_log.dim(1);
    const T* xp = seq.data<T>();
    const T* h0p = h0.data<T>();
    const T* alp = a_log.data<T>();
    const T* dp = d_skip.data<T>();
    const T* wdtp = w_dt.data<T>();
    const T* bdtp = b_dt.data<T>();
    const T* wbp = w_b.data<T>();
    const T* wcp = w_c.data<T>();
    T* op = out.data<T>();
    T* deltap = ctx.delta.data<T>();
    T* rawp = ctx.raws.data<T>();
    T* bp = ctx.bmat.data<T>();
    T* cp = ctx.cmat.data<T>();
    T* hp = ctx.hist.data<T>();

    std::vector<T> a(static_cast<std::size_t>(c) * d);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.size()); ++i)
        a[static_cast<std::size_t>(i)] = -std::exp(alp[i]);

    std::vector<T> h(h0p, h0p + static_cast<std::int64_t>(c) * d);
    for (int t = 0; t < l; ++t) {
        const T* x = xp + static_cast<std::int64_t>(t) * c;
        T* raw = rawp + static_cast<std::int64_t>(t) * c;
        T* dlt = deltap + static_cast<std::int64_t>(t) * c;
        T* bt = bp + static_cast<std::int64_t>(t) * d;
        T* ct = cp + static_cast<std::int64_t>(t) * d;

        for (int j = 0; j < c; ++j) raw[j] = bdtp[j];
        for (int i = 0; i < c; ++i) {
            const T xi = x[i];
            const T* wrow = wdtp + static_cast<std::int64_t>(i) * c;
            for (int j = 0; j < c; ++j) raw[j] += xi * wrow[j];
        }
        for (int j = 0; j < c; ++j) {
            const double r = static_cast<double>(raw[j]);
            dlt[j] = static_cast<T>((r > 0.0 ? r : 0.0) + std::log1p(std::exp(-(r < 0 ? -r : r))));
        }
        for (int j = 0; j < d; ++j) bt[j] = ct[j] = T(0);
        for (int i = 0; i < c; ++i) {
            const T xi = x[i];
            const T* wbrow = wbp + static_cast<std::int64_t>(i) * d;
            const T* wcrow = wcp + static_cast<std::int64_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                bt[j] += xi * wbrow[j];
                ct[j] += xi * wcrow[j];
            }
        }

        for (int ci = 0; ci < c; ++ci) {
            const T dv = dlt[ci];
            const T xv = x[ci];
            T acc = T(0);
            for (int di = 0; di < d; ++di) {
                const std::int64_t k = static_cast<std::int64_t>(ci) * d + di;
                const T abar = std::exp(dv * a[static_cast<std::size_t>(k)]);
                h[static_cast<std::size_t>(k)] =
                    abar * h[static_cast<std::size_t>(k)] + dv * bt[di] * xv;
                acc += ct[di] * h[static_cast<std::size_t>(k)];
            }
            const T y = acc + dp[ci] * xv;
            if (!std::isfinite(static_cast<double>(y)))
                throw DomainError("ssm_scan produced a non-finite value");
            op[static_cast<std::int64_t>(t) * c + ci] = x[ci] + y;
        }
        std::memcpy(hp + static_cast<std::int64_t>(t) * c * d, h.data(), sizeof(T) * h.size());
    }
}

template <typename T>
void scan_backward(Graph& g, std::int32_t self, std::int32_t seq_id, std::int32_t h0_id,
                   std::int32_t alog_id, std::int32_t d_id, std::int32_t wdt_id,
                   std::int32_t bdt_id, std::int32_t wb_id, std::int32_t wc_id,
                   const std::shared_ptr<ScanCtx>& ctx) {
    const Tensor& seq = g.node(seq_id).value;
    const Tensor& h0 = g.node(h0_id).value;
    const Tensor& a_log = g.node(alog_id).value;
    const Tensor& d_skip = g.node(d_id).value;
    const Tensor& w_dt = g.node(wdt_id).value;
    const Tensor& w_b = g.node(wb_id).value;
    const Tensor& w_c = g.node(wc_id).value;
    const int l = seq.dim(0), c = seq.dim(1), d = a_log.dim(1);

    const Tensor& gout = g.grad(self);
    const T* gop = gout.data<T>();
    const T* xp = seq.data<T>();
    const T* alp = a_log.data<T>();
    const T* dp = d_skip.data<T>();
    const T* wdtp = w_dt.data<T>();
    const T* wbp = w_b.data<T>();
    const T* wcp = w_c.data<T>();
    const T* deltap = ctx->delta.data<T>();
    const T* rawp = ctx->raws.data<T>();
    const T* bp = ctx->bmat.data<T>();
    const T* cp = ctx->cmat.data<T>();
    const T* hp = ctx->hist.data<T>();

    std::vector<T> a(static_cast<std::size_t>(c) * d);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(a.size()); ++i)
        a[static_cast<std::size_t>(i)] = -std::exp(alp[i]);

    // local accumulators, folded into parent grads at the end
    Tensor dseq = Tensor::zeros(seq.shape(), seq.dtype());
    Tensor dalog = Tensor::zeros(a_log.shape(), seq.dtype());
    Tensor dd = Tensor::zeros(d_skip.shape(), seq.dtype());
    Tensor dwdt = Tensor::zeros(w_dt.shape(), seq.dtype());
    Tensor dbdt = Tensor::zeros({c}, seq.dtype());
    Tensor dwb = Tensor::zeros(w_b.shape(), seq.dtype());
    Tensor dwc = Tensor::zeros(w_c.shape(), seq.dtype());
    T* dseqp = dseq.data<T>();
    T* dalogp = dalog.data<T>();
    T* ddp = dd.data<T>();
    T* dwdtp = dwdt.data<T>();
    T* dbdtp = dbdt.data<T>();
    T* dwbp = dwb.data<T>();
    T* dwcp = dwc.data<T>();

    std::vector<T> gh(static_cast<std::size_t>(c) * d, T(0));
    if (ctx->g_hfin.defined()) {
        const T* gf = ctx->g_hfin.data<T>();
        for (std::size_t i = 0; i < gh.size(); ++i) gh[i] = gf[i];
    }

    std::vector<T> dx(static_cast<std::size_t>(c));
    std::vector<T> ddelta(static_cast<std::size_t>(c));
    std::vector<T> draw(static_cast<std::size_t>(c));
    std::vector<T> db(static_cast<std::size_t>(d));
    std::vector<T> dcov(static_cast<std::size_t>(d));

    for (int t = l - 1; t >= 0; --t) {
        const T* x = xp + static_cast<std::int64_t>(t) * c;
        const T* gy = gop + static_cast<std::int64_t>(t) * c;
        const T* dlt = deltap + static_cast<std::int64_t>(t) * c;
        const T* bt = bp + static_cast<std::int64_t>(t) * d;
        const T* ct = cp + static_cast<std::int64_t>(t) * d;
        const T* ht = hp + static_cast<std::int64_t>(t) * c * d;
        const T* hprev = t > 0 ? hp + static_cast<std::int64_t>(t - 1) * c * d : h0.data<T>();

        std::fill(dx.begin(), dx.end(), T(0));
        std::fill(ddelta.begin(), ddelta.end(), T(0));
        std::fill(db.begin(), db.end(), T(0));
        std::fill(dcov.begin(), dcov.end(), T(0));

        // readout: out[t,c] = x[c] + sum_i ct[i]*h[c,i] + d[c]*x[c]
        for (int ci = 0; ci < c; ++ci) {
            const T gv = gy[ci];
            dseqp[static_cast<std::int64_t>(t) * c + ci] += gv;  // residual
            ddp[ci] += gv * x[ci];
            dx[static_cast<std::size_t>(ci)] += gv * dp[ci];
            for (int di = 0; di < d; ++di) {
                const std::int64_t k = static_cast<std::int64_t>(ci) * d + di;
                dcov[static_cast<std::size_t>(di)] += gv * ht[k];
                gh[static_cast<std::size_t>(k)] += gv * ct[di];
            }
        }

        // recurrence: h[c,i] = exp(delta[c]*a[c,i])*hprev[c,i] + delta[c]*bt[i]*x[c]
        for (int ci = 0; ci < c; ++ci) {
            const T dv = dlt[ci];
            const T xv = x[ci];
            for (int di = 0; di < d; ++di) {
                const std::int64_t k = static_cast<std::int64_t>(ci) * d + di;
                const T av = a[static_cast<std::size_t>(k)];
                const T abar = std::exp(dv * av);
                const T ghk = gh[static_cast<std::size_t>(k)];
                const T dabar = ghk * hprev[k];
                ddelta[static_cast<std::size_t>(ci)] += ghk * bt[di] * xv + dabar * av * abar;
                db[static_cast<std::size_t>(di)] += ghk * dv * xv;
                dx[static_cast<std::size_t>(ci)] += ghk * dv * bt[di];
                // dA = dabar * delta * abar; a_log sees dA * dA/da_log = dA * a
                dalogp[k] += dabar * dv * abar * av;
                gh[static_cast<std::size_t>(k)] = ghk * abar;
            }
        }

        // projections: raw = x*w_dt + b_dt; delta = softplus(raw); bt = x*w_b; ct = x*w_c
        for (int ci = 0; ci < c; ++ci) {
            const double r = static_cast<double>(rawp[static_cast<std::int64_t>(t) * c + ci]);
            const double sig =
                r >= 0.0 ? 1.0 / (1.0 + std::exp(-r)) : std::exp(r) / (1.0 + std::exp(r));
            draw[static_cast<std::size_t>(ci)] =
                ddelta[static_cast<std::size_t>(ci)] * static_cast<T>(sig);
            dbdtp[ci] += draw[static_cast<std::size_t>(ci)];
        }
        for (int i = 0; i < c; ++i) {
            const T xi = x[i];
            T accx = T(0);
            const T* wdtrow = wdtp + static_cast<std::int64_t>(i) * c;
            T* dwdtrow = dwdtp + static_cast<std::int64_t>(i) * c;
            for (int j = 0; j < c; ++j) {
                dwdtrow[j] += xi * draw[static_cast<std::size_t>(j)];
                accx += wdtrow[j] * draw[static_cast<std::size_t>(j)];
            }
            const T* wbrow = wbp + static_cast<std::int64_t>(i) * d;
            const T* wcrow = wcp + static_cast<std::int64_t>(i) * d;
            T* dwbrow = dwbp + static_cast<std::int64_t>(i) * d;
            T* dwcrow = dwcp + static_cast<std::int64_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                dwbrow[j] += xi * db[static_cast<std::size_t>(j)];
                dwcrow[j] += xi * dcov[static_cast<std::size_t>(j)];
                accx += wbrow[j] * db[static_cast<std::size_t>(j)] +
                        wcrow[j] * dcov[static_cast<std::size_t>(j)];
            }
            dx[static_cast<std::size_t>(i)] += accx;
        }
        for (int ci = 0; ci < c; ++ci)
            dseqp[static_cast<std::int64_t>(t) * c + ci] += dx[static_cast<std::size_t>(ci)];
    }

    auto fold = [&](std::int32_t pid, const Tensor& local) {
        if (!g.node(pid).needs_grad) return;
        Tensor& dst = g.grad(pid);
        T* dstp = dst.data<T>();
        const T* srcp = local.data<T>();
        for (std::int64_t i = 0; i < local.numel(); ++i) dstp[i] += srcp[i];
    };
    fold(seq_id, dseq);
    fold(alog_id, dalog);
    fold(d_id, dd);
    fold(wdt_id, dwdt);
    fold(bdt_id, dbdt);
    fold(wb_id, dwb);
    fold(wc_id, dwc);
    if (g.node(h0_id).needs_grad) {
        Tensor& dst = g.grad(h0_id);
        T* dstp = dst.data<T>();
        for (std::size_t i = 0; i < gh.size(); ++i) dstp[i] += gh[i];
    }
}

}  // namespace

ScanResult ssm_scan(Value seq, Value h0, const SsmWeights& w) {
    Graph& g = *seq.g;
    const Tensor& st = seq.tensor();
    if (st.rank() != 2) throw ShapeError("ssm_scan: seq must be [L,C]");
    const int l = st.dim(0), c = st.dim(1);
    if (c != w.channels) throw ShapeError("ssm_scan: channel mismatch");
    const int d = w.d_state;
    if (h0.tensor().rank() != 2 || h0.dim(0) != c || h0.dim(1) != d)
        throw ShapeError("ssm_scan: h0 must be [C,d]");
    if (h0.dtype() != st.dtype()) throw ContractError("ssm_scan: state dtype mismatch");

    Value a_log = g.leaf(*w.a_log);
    Value d_skip = g.leaf(*w.d_skip);
    Value w_dt = g.leaf(*w.w_dt);
    Value b_dt = g.leaf(*w.b_dt);
    Value w_b = g.leaf(*w.w_b);
    Value w_c = g.leaf(*w.w_c);

    auto ctx = std::make_shared<ScanCtx>();
    ctx->delta = Tensor::zeros({l, c}, st.dtype());
    ctx->raws = Tensor::zeros({l, c}, st.dtype());
    ctx->bmat = Tensor::zeros({l, d}, st.dtype());
    ctx->cmat = Tensor::zeros({l, d}, st.dtype());
    ctx->hist = Tensor::zeros({l, c, d}, st.dtype());

    Tensor out = Tensor::zeros({l, c}, st.dtype());
    dispatch(st.dtype(), [&](auto tag) {
        using T = decltype(tag);
        scan_forward<T>(st, h0.tensor(), a_log.tensor(), d_skip.tensor(), w_dt.tensor(),
                        b_dt.tensor(), w_b.tensor(), w_c.tensor(), out, *ctx);
    });

    const auto si = seq.id, hi = h0.id, ai = a_log.id, di = d_skip.id, wdti = w_dt.id,
               bdti = b_dt.id, wbi = w_b.id, wci = w_c.id;
    Value out_v = g.record(std::move(out), {seq, h0, a_log, d_skip, w_dt, b_dt, w_b, w_c},
                           [si, hi, ai, di, wdti, bdti, wbi, wci, ctx](Graph& gg,
                                                                       std::int32_t self) {
                               dispatch(gg.node(self).value.dtype(), [&](auto tag) {
                                   using T = decltype(tag);
                                   scan_backward<T>(gg, self, si, hi, ai, di, wdti, bdti, wbi,
                                                    wci, ctx);
                               });
                           });

    // Final hidden state as its own node; its backward deposits the incoming
    // gradient where the scan backward picks it up, and touches the scan
    // node's grad so the scan backward runs even when only the state is used.
    Tensor hfin = Tensor::zeros({c, d}, st.dtype());
    std::memcpy(hfin.raw(),
                static_cast<const std::byte*>(ctx->hist.raw()) +
                    static_cast<std::size_t>(l - 1) * c * d * dtype_size(st.dtype()),
                hfin.byte_size());
    const auto scan_id = out_v.id;
    Value hfin_v =
        g.record(std::move(hfin), {out_v}, [scan_id, ctx](Graph& gg, std::int32_t self) {
            const Tensor& gin = gg.grad(self);
            if (!ctx->g_hfin.defined()) ctx->g_hfin = Tensor::zeros(gin.shape(), gin.dtype());
            dispatch(gin.dtype(), [&](auto tag) {
                using T = decltype(tag);
                T* dst = ctx->g_hfin.data<T>();
                const T* src = gin.data<T>();
                for (std::int64_t i = 0; i < gin.numel(); ++i) dst[i] += src[i];
            });
            gg.grad(scan_id);  // ensure the scan backward fires
        });
    return {out_v, hfin_v};
}

CrossPair make_cross(ParamStore& store, const std::string& prefix, int channels, int n_heads,
                     Rng& rng, Dtype dt) {
    CrossPair w;
    w.ln_q = make_ln(store, prefix + ".ln_q", channels, dt);
    w.ln_kv = make_ln(store, prefix + ".ln_kv", channels, dt);
    w.attn = make_attention(store, prefix + ".attn", channels, n_heads, rng, dt);
    return w;
}

static Value cross_attend(Value q, Value kv, const CrossPair& w) {
    return attention(apply_ln(q, w.ln_q), apply_ln(kv, w.ln_kv), w.attn);
}

std::pair<Value, Value> bidir_cross_attn(Value s_rgb, Value s_x, const CrossPair& rgb_dir,
                                         const CrossPair& x_dir) {
    if (s_rgb.shape() != s_x.shape()) throw ShapeError("bidir_cross_attn: stream shape mismatch");
    Value d_rgb = cross_attend(s_rgb, s_x, rgb_dir);
    Value d_x = cross_attend(s_x, s_rgb, x_dir);
    return {add(s_rgb, d_rgb), add(s_x, d_x)};
}

std::pair<Value, Value> inject_update(Value backbone_seq, Value temporal_tokens,
                                      const IoWeights& w, bool update_first) {
    if (backbone_seq.shape() != temporal_tokens.shape())
        throw ShapeError("inject_update: shape mismatch");
    if (update_first) {
        Value tt = add(temporal_tokens, cross_attend(temporal_tokens, backbone_seq, w.update));
        Value bb = add(backbone_seq, cross_attend(backbone_seq, tt, w.inject));
        return {bb, tt};
    }
    Value bb = add(backbone_seq, cross_attend(backbone_seq, temporal_tokens, w.inject));
    Value tt = add(temporal_tokens, cross_attend(temporal_tokens, bb, w.update));
    return {bb, tt};
}

TemporalWeights make_temporal(ParamStore& store, const TemporalConfig& cfg, int hooked_blocks,
                              int channels, int n_heads, Rng& rng, Dtype dt) {
    TemporalWeights w;
    w.cfg = cfg;
    if (cfg.mode == TemporalMode::Off || cfg.mode == TemporalMode::Token) return w;
    for (int i = 0; i < hooked_blocks; ++i) {
        const std::string prefix = "temporal.block" + std::to_string(i);
        TemporalBlockWeights b;
        if (cfg.mode == TemporalMode::Decoupled) {
            if (!cfg.no_cross) {
                b.bidir_rgb = make_cross(store, prefix + ".bidir_rgb", channels, n_heads, rng, dt);
                b.bidir_x = cfg.tie_bidir ? b.bidir_rgb
                                          : make_cross(store, prefix + ".bidir_x", channels,
                                                       n_heads, rng, dt);
            }
            b.ln_scan_rgb = make_ln(store, prefix + ".ln_scan_rgb", channels, dt);
            b.ssm_rgb = make_ssm(store, prefix + ".ssm_rgb", channels, cfg.d_state, rng, dt);
            b.ln_scan_x = make_ln(store, prefix + ".ln_scan_x", channels, dt);
            b.ssm_x = make_ssm(store, prefix + ".ssm_x", channels, cfg.d_state, rng, dt);
        } else {  // Mixed: one SSM over channel-concatenated streams
            b.ln_scan_mix = make_ln(store, prefix + ".ln_scan_mix", 2 * channels, dt);
            b.ssm_mix = make_ssm(store, prefix + ".ssm_mix", 2 * channels, cfg.d_state, rng, dt);
        }
        b.io_rgb.inject = make_cross(store, prefix + ".inject_rgb", channels, n_heads, rng, dt);
        b.io_rgb.update = make_cross(store, prefix + ".update_rgb", channels, n_heads, rng, dt);
        b.io_x.inject = make_cross(store, prefix + ".inject_x", channels, n_heads, rng, dt);
        b.io_x.update = make_cross(store, prefix + ".update_x", channels, n_heads, rng, dt);
        w.blocks.push_back(b);
    }
    return w;
}

TemporalStates reset_states(int hooked_blocks, int channels, int d_state, Dtype dt, bool mixed,
                            Modality x_modality) {
    TemporalStates s;
    for (int i = 0; i < hooked_blocks; ++i) {
        StatePair p;
        p.mixed = mixed;
        if (mixed) {
            p.rgb.h = Tensor::zeros({2 * channels, d_state}, dt);
            p.rgb.modality_tag = kMixedStateTag;
        } else {
            p.rgb.h = Tensor::zeros({channels, d_state}, dt);
            p.rgb.modality_tag = static_cast<std::uint8_t>(Modality::RGB);
            p.x.h = Tensor::zeros({channels, d_state}, dt);
            p.x.modality_tag = static_cast<std::uint8_t>(x_modality);
        }
        s.pairs.push_back(std::move(p));
    }
    return s;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T>
T take(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size())
        throw FormatError("truncated state record", static_cast<long long>(pos));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
}

void put_state(std::vector<std::uint8_t>& out, std::uint16_t block, const SsmState& s) {
    put<std::uint16_t>(out, block);
    put<std::uint8_t>(out, s.modality_tag);
    put<std::uint64_t>(out, static_cast<std::uint64_t>(s.frame_index));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(s.h.dtype()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.h.dim(0)));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.h.dim(1)));
    const auto* raw = static_cast<const std::uint8_t*>(s.h.raw());
    out.insert(out.end(), raw, raw + s.h.byte_size());
}

}  // namespace

std::vector<std::uint8_t> serialize_states(const TemporalStates& states) {
    std::vector<std::uint8_t> out;
    out.push_back('M');
    out.push_back('D');
    out.push_back('T');
    out.push_back('S');
    put<std::uint16_t>(out, 1);  // version
    for (std::size_t i = 0; i < states.pairs.size(); ++i) {
        const StatePair& p = states.pairs[i];
        put_state(out, static_cast<std::uint16_t>(i), p.rgb);
        if (!p.mixed) put_state(out, static_cast<std::uint16_t>(i), p.x);
    }
    return out;
}

TemporalStates restore_states(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    if (bytes.size() < 6 || bytes[0] != 'M' || bytes[1] != 'D' || bytes[2] != 'T' ||
        bytes[3] != 'S')
        throw FormatError("bad state magic (expected MDTS)", 0);
    pos = 4;
    const auto version = take<std::uint16_t>(bytes, pos);
    if (version != 1) throw FormatError("unsupported state version " + std::to_string(version), 4);

    TemporalStates out;
    while (pos < bytes.size()) {
        const long long rec_start = static_cast<long long>(pos);
        const auto block = take<std::uint16_t>(bytes, pos);
        const auto tag = take<std::uint8_t>(bytes, pos);
        const auto frame = take<std::uint64_t>(bytes, pos);
        const auto dt_raw = take<std::uint8_t>(bytes, pos);
        if (dt_raw > 1) throw FormatError("unknown state dtype", rec_start + 11);
        const Dtype dt = static_cast<Dtype>(dt_raw);
        const auto c = take<std::uint32_t>(bytes, pos);
        const auto d = take<std::uint32_t>(bytes, pos);
        if (c == 0 || d == 0 || c > (1u << 20) || d > (1u << 20))
            throw FormatError("implausible state dimensions", rec_start + 12);
        SsmState s;
        s.frame_index = static_cast<std::int64_t>(frame);
        s.modality_tag = tag;
        s.h = Tensor::zeros({static_cast<int>(c), static_cast<int>(d)}, dt);
        if (pos + s.h.byte_size() > bytes.size())
            throw FormatError("truncated state payload", static_cast<long long>(pos));
        std::memcpy(s.h.raw(), bytes.data() + pos, s.h.byte_size());
        pos += s.h.byte_size();

        if (block >= out.pairs.size()) {
            if (block != out.pairs.size())
                throw FormatError("state records out of order", rec_start);
            out.pairs.emplace_back();
        }
        StatePair& p = out.pairs[block];
        if (tag == kMixedStateTag) {
            p.mixed = true;
            p.rgb = std::move(s);
        } else if (tag == static_cast<std::uint8_t>(Modality::RGB)) {
            p.rgb = std::move(s);
        } else if (tag <= 3) {
            p.x = std::move(s);
        } else {
            throw FormatError("unknown modality tag", rec_start + 2);
        }
    }
    for (const StatePair& p : out.pairs)
        if (!p.rgb.h.defined() || (!p.mixed && !p.x.h.defined()))
            throw FormatError("incomplete state pair");
    return out;
}

std::vector<StatePairVal> states_to_values(Graph& g, const TemporalStates& states) {
    std::vector<StatePairVal> out;
    for (const StatePair& p : states.pairs) {
        StatePairVal v;
        v.mixed = p.mixed;
        v.rgb.h = g.constant(p.rgb.h);
        v.rgb.frame_index = p.rgb.frame_index;
        v.rgb.modality_tag = p.rgb.modality_tag;
        if (!p.mixed) {
            v.x.h = g.constant(p.x.h);
            v.x.frame_index = p.x.frame_index;
            v.x.modality_tag = p.x.modality_tag;
        }
        out.push_back(v);
    }
    return out;
}

TemporalStates states_from_values(const std::vector<StatePairVal>& vals) {
    TemporalStates out;
    for (const StatePairVal& v : vals) {
        StatePair p;
        p.mixed = v.mixed;
        p.rgb.h = v.rgb.h.tensor().clone();
        p.rgb.frame_index = v.rgb.frame_index;
        p.rgb.modality_tag = v.rgb.modality_tag;
        if (!v.mixed) {
            p.x.h = v.x.h.tensor().clone();
            p.x.frame_index = v.x.frame_index;
            p.x.modality_tag = v.x.modality_tag;
        }
        out.pairs.push_back(std::move(p));
    }
    return out;
}

TemporalForwardResult temporal_forward(const JointSeq& joint, const StatePairVal& state,
                                       const TemporalBlockWeights& w, const TemporalConfig& cfg) {
    joint.validate();
    if (cfg.mode != TemporalMode::Decoupled && cfg.mode != TemporalMode::Mixed)
        throw ContractError("temporal_forward called with mode " +
                            std::string(temporal_mode_name(cfg.mode)));
    auto [s_rgb, s_x] = split_search(joint);
    if (!state.mixed && state.x.modality_tag != static_cast<std::uint8_t>(s_x.modality))
        throw ContractError("state modality tag does not match the X stream");

    StatePairVal next;
    next.mixed = state.mixed;
    Value t_rgb, t_x;

    if (cfg.mode == TemporalMode::Decoupled) {
        if (state.mixed) throw ContractError("mixed state passed to decoupled temporal module");
        Value a_rgb = s_rgb.tokens;
        Value a_x = s_x.tokens;
        if (!cfg.no_cross) {
            auto [b_rgb, b_x] = bidir_cross_attn(a_rgb, a_x, w.bidir_rgb,
                                                 cfg.tie_bidir ? w.bidir_rgb : w.bidir_x);
            a_rgb = b_rgb;
            a_x = b_x;
        }
        ScanResult r_rgb = ssm_scan(apply_ln(a_rgb, w.ln_scan_rgb), state.rgb.h, w.ssm_rgb);
        ScanResult r_x = ssm_scan(apply_ln(a_x, w.ln_scan_x), state.x.h, w.ssm_x);
        t_rgb = r_rgb.out;
        t_x = r_x.out;
        next.rgb = {r_rgb.h_final, state.rgb.frame_index + 1, state.rgb.modality_tag};
        next.x = {r_x.h_final, state.x.frame_index + 1, state.x.modality_tag};
    } else {
        if (!state.mixed) throw ContractError("decoupled state passed to mixed temporal module");
        Value cat = concat_cols(s_rgb.tokens, s_x.tokens);
        ScanResult r = ssm_scan(apply_ln(cat, w.ln_scan_mix), state.rgb.h, w.ssm_mix);
        const int c = s_rgb.tokens.dim(1);
        t_rgb = slice_cols(r.out, 0, c);
        t_x = slice_cols(r.out, c, c);
        next.rgb = {r.h_final, state.rgb.frame_index + 1, state.rgb.modality_tag};
    }

    auto [bb_rgb, tt_rgb] = inject_update(s_rgb.tokens, t_rgb, w.io_rgb, cfg.update_first);
    auto [bb_x, tt_x] = inject_update(s_x.tokens, t_x, w.io_x, cfg.update_first);
    (void)tt_rgb;
    (void)tt_x;

    std::vector<Value> parts;
    for (const Segment& seg : joint.segments) {
        if (!seg.context && seg.role == Role::Search) {
            parts.push_back(seg.modality == Modality::RGB ? bb_rgb : bb_x);
        } else {
            parts.push_back(slice_rows(joint.tokens, seg.offset, seg.length));
        }
    }
    TemporalForwardResult res;
    res.joint.tokens = concat_rows(parts);
    res.joint.segments = joint.segments;
    res.state = next;
    return res;
}

}  // namespace mdtrack
