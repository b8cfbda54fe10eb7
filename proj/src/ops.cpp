#include "mdtrack/ops.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "mdtrack/kernels.hpp"

namespace mdtrack {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

Graph& graph_of(Value v) {
    if (!v.defined()) throw ContractError("undefined value passed to op");
    return *v.g;
}

void require_same(Value a, Value b, const char* op) {
    if (a.g != b.g) throw ContractError(std::string(op) + ": values from different graphs");
    if (a.tensor().dtype() != b.tensor().dtype())
        throw ContractError(std::string(op) + ": dtype mismatch");
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": " + a.tensor().shape_str() + " vs " +
                         b.tensor().shape_str());
}

bool want(Graph& g, std::int32_t id) { return g.node(id).needs_grad; }

// Unary elementwise: fwd(x) value, dfn(x, y) local derivative.
template <typename Fwd, typename Dfn>
Value unary_op(Value a, Fwd fwd, Dfn dfn) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    Tensor out = Tensor::zeros(at.shape(), at.dtype());
    dispatch(at.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* x = at.data<T>();
        T* y = out.data<T>();
        for (std::int64_t i = 0; i < at.numel(); ++i)
            y[i] = static_cast<T>(fwd(static_cast<double>(x[i])));
    });
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai, dfn](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        const Tensor& xt = gg.node(ai).value;
        const Tensor& yt = gg.node(self).value;
        Tensor& ga = gg.grad(ai);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            const T* xp = xt.data<T>();
            const T* yp = yt.data<T>();
            T* out = ga.data<T>();
            for (std::int64_t i = 0; i < go.numel(); ++i)
                out[i] += gp[i] * static_cast<T>(dfn(static_cast<double>(xp[i]),
                                                     static_cast<double>(yp[i])));
        });
    });
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    // max(x,0) + log1p(exp(-|x|)); exact asymptotes on both sides
    return (x > 0.0 ? x : 0.0) + std::log1p(std::exp(-(x < 0.0 ? -x : x)));
}

}  // namespace

Value constant(Graph& g, Tensor t) { return g.constant(std::move(t)); }

Value scalar(Graph& g, double v, Dtype dt) { return g.constant(Tensor::full({1}, v, dt)); }

Value add(Value a, Value b) {
    require_same(a, b, "add");
    Graph& g = graph_of(a);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        kernels<T>().add(a.tensor().data<T>(), b.tensor().data<T>(), out.data<T>(), out.numel());
    });
    const auto ai = a.id, bi = b.id;
    return g.record(std::move(out), {a, b}, [ai, bi](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            if (want(gg, ai)) {
                T* ga = gg.grad(ai).data<T>();
                kernels<T>().add(ga, go.data<T>(), ga, go.numel());
            }
            if (want(gg, bi)) {
                T* gb = gg.grad(bi).data<T>();
                kernels<T>().add(gb, go.data<T>(), gb, go.numel());
            }
        });
    });
}

Value sub(Value a, Value b) {
    require_same(a, b, "sub");
    Graph& g = graph_of(a);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        kernels<T>().sub(a.tensor().data<T>(), b.tensor().data<T>(), out.data<T>(), out.numel());
    });
    const auto ai = a.id, bi = b.id;
    return g.record(std::move(out), {a, b}, [ai, bi](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            if (want(gg, ai)) {
                T* ga = gg.grad(ai).data<T>();
                kernels<T>().add(ga, go.data<T>(), ga, go.numel());
            }
            if (want(gg, bi)) {
                T* gb = gg.grad(bi).data<T>();
                kernels<T>().axpy(T(-1), go.data<T>(), gb, go.numel());
            }
        });
    });
}

Value mul(Value a, Value b) {
    require_same(a, b, "mul");
    Graph& g = graph_of(a);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        kernels<T>().mul(a.tensor().data<T>(), b.tensor().data<T>(), out.data<T>(), out.numel());
    });
    const auto ai = a.id, bi = b.id;
    return g.record(std::move(out), {a, b}, [ai, bi](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        const Tensor& at = gg.node(ai).value;
        const Tensor& bt = gg.node(bi).value;
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            if (want(gg, ai)) {
                T* ga = gg.grad(ai).data<T>();
                const T* bp = bt.data<T>();
                for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += gp[i] * bp[i];
            }
            if (want(gg, bi)) {
                T* gb = gg.grad(bi).data<T>();
                const T* ap = at.data<T>();
                for (std::int64_t i = 0; i < go.numel(); ++i) gb[i] += gp[i] * ap[i];
            }
        });
    });
}

Value div(Value a, Value b) {
    require_same(a, b, "div");
    Graph& g = graph_of(a);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* ap = a.tensor().data<T>();
        const T* bp = b.tensor().data<T>();
        T* op = out.data<T>();
        for (std::int64_t i = 0; i < out.numel(); ++i) {
            if (bp[i] == T(0)) throw DomainError("division by zero");
            op[i] = ap[i] / bp[i];
        }
    });
    const auto ai = a.id, bi = b.id;
    return g.record(std::move(out), {a, b}, [ai, bi](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        const Tensor& at = gg.node(ai).value;
        const Tensor& bt = gg.node(bi).value;
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            const T* ap = at.data<T>();
            const T* bp = bt.data<T>();
            if (want(gg, ai)) {
                T* ga = gg.grad(ai).data<T>();
                for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += gp[i] / bp[i];
            }
            if (want(gg, bi)) {
                T* gb = gg.grad(bi).data<T>();
                for (std::int64_t i = 0; i < go.numel(); ++i)
                    gb[i] -= gp[i] * ap[i] / (bp[i] * bp[i]);
            }
        });
    });
}

Value maximum(Value a, Value b) {
    require_same(a, b, "maximum");
    Graph& g = graph_of(a);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* ap = a.tensor().data<T>();
        const T* bp = b.tensor().data<T>();
        T* op = out.data<T>();
        for (std::int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] >= bp[i] ? ap[i] : bp[i];
    });
    const auto ai = a.id, bi = b.id;
    return g.record(std::move(out), {a, b}, [ai, bi](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        const Tensor& at = gg.node(ai).value;
        const Tensor& bt = gg.node(bi).value;
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            const T* ap = at.data<T>();
            const T* bp = bt.data<T>();
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                if (ap[i] >= bp[i]) {
                    if (want(gg, ai)) gg.grad(ai).data<T>()[i] += gp[i];
                } else if (want(gg, bi)) {
                    gg.grad(bi).data<T>()[i] += gp[i];
                }
            }
        });
    });
}

Value minimum(Value a, Value b) {
    require_same(a, b, "minimum");
    Graph& g = graph_of(a);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* ap = a.tensor().data<T>();
        const T* bp = b.tensor().data<T>();
        T* op = out.data<T>();
        for (std::int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] <= bp[i] ? ap[i] : bp[i];
    });
    const auto ai = a.id, bi = b.id;
    return g.record(std::move(out), {a, b}, [ai, bi](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        const Tensor& at = gg.node(ai).value;
        const Tensor& bt = gg.node(bi).value;
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            const T* ap = at.data<T>();
            const T* bp = bt.data<T>();
            for (std::int64_t i = 0; i < go.numel(); ++i) {
                if (ap[i] <= bp[i]) {
                    if (want(gg, ai)) gg.grad(ai).data<T>()[i] += gp[i];
                } else if (want(gg, bi)) {
                    gg.grad(bi).data<T>()[i] += gp[i];
                }
            }
        });
    });
}

Value scale(Value a, double s) {
    Graph& g = graph_of(a);
    Tensor out = Tensor::zeros(a.shape(), a.dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        kernels<T>().scale(a.tensor().data<T>(), static_cast<T>(s), out.data<T>(), out.numel());
    });
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai, s](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            kernels<T>().axpy(static_cast<T>(s), go.data<T>(), gg.grad(ai).data<T>(), go.numel());
        });
    });
}

Value neg(Value a) { return scale(a, -1.0); }

Value exp(Value a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Value log(Value a) {
    const Tensor& at = a.tensor();
    for (std::int64_t i = 0; i < at.numel(); ++i)
        if (at.at(i) <= 0.0) throw DomainError("log of non-positive value");
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Value sigmoid(Value a) {
    return unary_op(a, [](double x) { return stable_sigmoid(x); },
                    [](double, double y) { return y * (1.0 - y); });
}

Value softplus(Value a) {
    return unary_op(a, [](double x) { return stable_softplus(x); },
                    [](double x, double) { return stable_sigmoid(x); });
}

Value gelu(Value a) {
    return unary_op(a,
                    [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
                    [](double x, double) {
                        const double phi = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                        return phi + x * pdf;
                    });
}

Value relu(Value a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value abs(Value a) {
    return unary_op(a, [](double x) { return x < 0.0 ? -x : x; },
                    [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Value clamp(Value a, double lo, double hi) {
    if (lo > hi) throw ContractError("clamp bounds out of order");
    return unary_op(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                    [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Value masked_fill(Value a, std::shared_ptr<const std::vector<std::uint8_t>> mask, double fill) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    if (!mask || static_cast<std::int64_t>(mask->size()) != at.numel())
        throw ShapeError("masked_fill: mask size mismatch");
    Tensor out = Tensor::zeros(at.shape(), at.dtype());
    dispatch(at.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* x = at.data<T>();
        T* y = out.data<T>();
        for (std::int64_t i = 0; i < at.numel(); ++i)
            y[i] = (*mask)[static_cast<std::size_t>(i)] ? static_cast<T>(fill) : x[i];
    });
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai, mask](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad(ai);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            T* out = ga.data<T>();
            for (std::int64_t i = 0; i < go.numel(); ++i)
                if (!(*mask)[static_cast<std::size_t>(i)]) out[i] += gp[i];
        });
    });
}

Value matmul(Value a, Value b) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    const Tensor& bt = b.tensor();
    if (at.dtype() != bt.dtype()) throw ContractError("matmul: dtype mismatch");
    if (at.rank() != 2 || bt.rank() != 2)
        throw ShapeError("matmul expects rank-2 operands, got " + at.shape_str() + " and " +
                         bt.shape_str());
    if (at.dim(1) != bt.dim(0))
        throw ShapeError("matmul inner dimensions: " + at.shape_str() + " x " + bt.shape_str());
    const int m = at.dim(0), k = at.dim(1), n = bt.dim(1);
    Tensor out = Tensor::zeros({m, n}, at.dtype());
    dispatch(at.dtype(), [&](auto tag) {
        using T = decltype(tag);
        gemm<T>(at.data<T>(), bt.data<T>(), out.data<T>(), m, k, n);
    });
    const auto ai = a.id, bi = b.id;
    return g.record(std::move(out), {a, b}, [ai, bi, m, k, n](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        const Tensor& at2 = gg.node(ai).value;
        const Tensor& bt2 = gg.node(bi).value;
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            if (want(gg, ai)) {
                // dA = G * B^T
                Tensor btr = Tensor::zeros({n, k}, go.dtype());
                const T* bp = bt2.data<T>();
                T* btp = btr.data<T>();
                for (int r = 0; r < k; ++r)
                    for (int c = 0; c < n; ++c) btp[static_cast<std::int64_t>(c) * k + r] =
                        bp[static_cast<std::int64_t>(r) * n + c];
                Tensor da = Tensor::zeros({m, k}, go.dtype());
                gemm<T>(gp, btp, da.data<T>(), m, n, k);
                T* ga = gg.grad(ai).data<T>();
                kernels<T>().add(ga, da.data<T>(), ga, da.numel());
            }
            if (want(gg, bi)) {
                // dB = A^T * G
                Tensor atr = Tensor::zeros({k, m}, go.dtype());
                const T* ap = at2.data<T>();
                T* atp = atr.data<T>();
                for (int r = 0; r < m; ++r)
                    for (int c = 0; c < k; ++c) atp[static_cast<std::int64_t>(c) * m + r] =
                        ap[static_cast<std::int64_t>(r) * k + c];
                Tensor db = Tensor::zeros({k, n}, go.dtype());
                gemm<T>(atp, gp, db.data<T>(), k, m, n);
                T* gb = gg.grad(bi).data<T>();
                kernels<T>().add(gb, db.data<T>(), gb, db.numel());
            }
        });
    });
}

Value transpose(Value a) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    if (at.rank() != 2) throw ShapeError("transpose expects rank 2, got " + at.shape_str());
    const int m = at.dim(0), n = at.dim(1);
    Tensor out = Tensor::zeros({n, m}, at.dtype());
    dispatch(at.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* x = at.data<T>();
        T* y = out.data<T>();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                y[static_cast<std::int64_t>(j) * m + i] = x[static_cast<std::int64_t>(i) * n + j];
    });
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai, m, n](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad(ai);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            T* out = ga.data<T>();
            for (int j = 0; j < n; ++j)
                for (int i = 0; i < m; ++i)
                    out[static_cast<std::int64_t>(i) * n + j] +=
                        gp[static_cast<std::int64_t>(j) * m + i];
        });
    });
}

Value linear(Value x, Value w, Value b) { return add_rowvec(matmul(x, w), b); }

Value reshape(Value a, std::vector<int> shape) {
    Graph& g = graph_of(a);
    Tensor out = a.tensor().reshaped(std::move(shape));
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad(ai);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            kernels<T>().add(ga.data<T>(), go.data<T>(), ga.data<T>(), go.numel());
        });
    });
}

Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw ContractError("concat_rows of nothing");
    Graph& g = graph_of(parts[0]);
    const int cols = parts[0].tensor().dim(1);
    const Dtype dt = parts[0].dtype();
    int rows = 0;
    for (const Value& p : parts) {
        const Tensor& t = p.tensor();
        if (t.rank() != 2) throw ShapeError("concat_rows expects rank-2 parts");
        if (t.dim(1) != cols) throw ShapeError("concat_rows: column mismatch");
        if (t.dtype() != dt) throw ContractError("concat_rows: dtype mismatch");
        rows += t.dim(0);
    }
    Tensor out = Tensor::zeros({rows, cols}, dt);
    std::vector<std::int32_t> ids;
    std::vector<int> lens;
    std::size_t off = 0;
    for (const Value& p : parts) {
        const Tensor& t = p.tensor();
        std::memcpy(static_cast<std::byte*>(out.raw()) + off, t.raw(), t.byte_size());
        off += t.byte_size();
        ids.push_back(p.id);
        lens.push_back(t.dim(0));
    }
    return g.record(std::move(out), parts, [ids, lens, cols](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            std::int64_t row0 = 0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const std::int64_t cnt = static_cast<std::int64_t>(lens[i]) * cols;
                if (want(gg, ids[i])) {
                    T* gpart = gg.grad(ids[i]).data<T>();
                    kernels<T>().add(gpart, gp + row0 * cols, gpart, cnt);
                }
                row0 += lens[i];
            }
        });
    });
}

Value slice_rows(Value a, int offset, int len) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    if (at.rank() != 2) throw ShapeError("slice_rows expects rank 2");
    if (offset < 0 || len <= 0 || offset + len > at.dim(0))
        throw ShapeError("slice_rows range out of bounds");
    const int cols = at.dim(1);
    Tensor out = Tensor::zeros({len, cols}, at.dtype());
    std::memcpy(out.raw(),
                static_cast<const std::byte*>(at.raw()) +
                    static_cast<std::size_t>(offset) * cols * dtype_size(at.dtype()),
                out.byte_size());
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai, offset, cols](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad(ai);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            T* dst = ga.data<T>() + static_cast<std::int64_t>(offset) * cols;
            kernels<T>().add(dst, go.data<T>(), dst, go.numel());
        });
    });
}

Value concat_cols(Value a, Value b) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    const Tensor& bt = b.tensor();
    if (at.rank() != 2 || bt.rank() != 2) throw ShapeError("concat_cols expects rank 2");
    if (at.dim(0) != bt.dim(0)) throw ShapeError("concat_cols: row count mismatch");
    if (at.dtype() != bt.dtype()) throw ContractError("concat_cols: dtype mismatch");
    const int rows = at.dim(0), ca = at.dim(1), cb = bt.dim(1);
    Tensor out = Tensor::zeros({rows, ca + cb}, at.dtype());
    dispatch(at.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* ap = at.data<T>();
        const T* bp = bt.data<T>();
        T* op = out.data<T>();
        for (int r = 0; r < rows; ++r) {
            std::memcpy(op + static_cast<std::int64_t>(r) * (ca + cb), ap + static_cast<std::int64_t>(r) * ca,
                        sizeof(T) * static_cast<std::size_t>(ca));
            std::memcpy(op + static_cast<std::int64_t>(r) * (ca + cb) + ca,
                        bp + static_cast<std::int64_t>(r) * cb, sizeof(T) * static_cast<std::size_t>(cb));
        }
    });
    const auto ai = a.id, bi = b.id;
    return g.record(std::move(out), {a, b}, [ai, bi, rows, ca, cb](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            if (want(gg, ai)) {
                T* ga = gg.grad(ai).data<T>();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < ca; ++c)
                        ga[static_cast<std::int64_t>(r) * ca + c] +=
                            gp[static_cast<std::int64_t>(r) * (ca + cb) + c];
            }
            if (want(gg, bi)) {
                T* gb = gg.grad(bi).data<T>();
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cb; ++c)
                        gb[static_cast<std::int64_t>(r) * cb + c] +=
                            gp[static_cast<std::int64_t>(r) * (ca + cb) + ca + c];
            }
        });
    });
}

Value slice_cols(Value a, int offset, int len) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    if (at.rank() != 2) throw ShapeError("slice_cols expects rank 2");
    if (offset < 0 || len <= 0 || offset + len > at.dim(1))
        throw ShapeError("slice_cols range out of bounds");
    const int rows = at.dim(0), cols = at.dim(1);
    Tensor out = Tensor::zeros({rows, len}, at.dtype());
    dispatch(at.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* ap = at.data<T>();
        T* op = out.data<T>();
        for (int r = 0; r < rows; ++r)
            std::memcpy(op + static_cast<std::int64_t>(r) * len,
                        ap + static_cast<std::int64_t>(r) * cols + offset,
                        sizeof(T) * static_cast<std::size_t>(len));
    });
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai, offset, rows, cols, len](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad(ai);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            T* out = ga.data<T>();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < len; ++c)
                    out[static_cast<std::int64_t>(r) * cols + offset + c] +=
                        gp[static_cast<std::int64_t>(r) * len + c];
        });
    });
}

Value mul_colvec(Value x, Value col) {
    Graph& g = graph_of(x);
    const Tensor& xt = x.tensor();
    const Tensor& ct = col.tensor();
    if (xt.rank() != 2 || ct.rank() != 2 || ct.dim(1) != 1 || ct.dim(0) != xt.dim(0))
        throw ShapeError("mul_colvec: " + xt.shape_str() + " vs " + ct.shape_str());
    if (xt.dtype() != ct.dtype()) throw ContractError("mul_colvec: dtype mismatch");
    const int rows = xt.dim(0), cols = xt.dim(1);
    Tensor out = Tensor::zeros({rows, cols}, xt.dtype());
    dispatch(xt.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* xp = xt.data<T>();
        const T* cp = ct.data<T>();
        T* op = out.data<T>();
        for (int r = 0; r < rows; ++r)
            kernels<T>().scale(xp + static_cast<std::int64_t>(r) * cols, cp[r],
                               op + static_cast<std::int64_t>(r) * cols, cols);
    });
    const auto xi = x.id, ci = col.id;
    return g.record(std::move(out), {x, col}, [xi, ci, rows, cols](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        const Tensor& xt2 = gg.node(xi).value;
        const Tensor& ct2 = gg.node(ci).value;
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            if (want(gg, xi)) {
                T* gx = gg.grad(xi).data<T>();
                const T* cp = ct2.data<T>();
                for (int r = 0; r < rows; ++r)
                    kernels<T>().axpy(cp[r], gp + static_cast<std::int64_t>(r) * cols,
                                      gx + static_cast<std::int64_t>(r) * cols, cols);
            }
            if (want(gg, ci)) {
                T* gc = gg.grad(ci).data<T>();
                const T* xp = xt2.data<T>();
                for (int r = 0; r < rows; ++r) {
                    T acc = T(0);
                    for (int c = 0; c < cols; ++c)
                        acc += gp[static_cast<std::int64_t>(r) * cols + c] *
                               xp[static_cast<std::int64_t>(r) * cols + c];
                    gc[r] += acc;
                }
            }
        });
    });
}

Value add_rowvec(Value x, Value row) {
    Graph& g = graph_of(x);
    const Tensor& xt = x.tensor();
    const Tensor& rt = row.tensor();
    if (xt.rank() != 2 || rt.rank() != 1 || rt.dim(0) != xt.dim(1))
        throw ShapeError("add_rowvec: " + xt.shape_str() + " vs " + rt.shape_str());
    if (xt.dtype() != rt.dtype()) throw ContractError("add_rowvec: dtype mismatch");
    const int rows = xt.dim(0), cols = xt.dim(1);
    Tensor out = Tensor::zeros({rows, cols}, xt.dtype());
    dispatch(xt.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* xp = xt.data<T>();
        const T* rp = rt.data<T>();
        T* op = out.data<T>();
        for (int r = 0; r < rows; ++r)
            kernels<T>().add(xp + static_cast<std::int64_t>(r) * cols, rp,
                             op + static_cast<std::int64_t>(r) * cols, cols);
    });
    const auto xi = x.id, ri = row.id;
    return g.record(std::move(out), {x, row}, [xi, ri, rows, cols](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            if (want(gg, xi)) {
                T* gx = gg.grad(xi).data<T>();
                kernels<T>().add(gx, gp, gx, go.numel());
            }
            if (want(gg, ri)) {
                T* gr = gg.grad(ri).data<T>();
                for (int r = 0; r < rows; ++r)
                    kernels<T>().add(gr, gp + static_cast<std::int64_t>(r) * cols, gr, cols);
            }
        });
    });
}

Value sum_all(Value a) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    Tensor out = Tensor::zeros({1}, at.dtype());
    dispatch(at.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* x = at.data<T>();
        T acc = T(0);
        for (std::int64_t i = 0; i < at.numel(); ++i) acc += x[i];
        out.data<T>()[0] = acc;
    });
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        Tensor& ga = gg.grad(ai);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T g0 = go.data<T>()[0];
            T* out = ga.data<T>();
            for (std::int64_t i = 0; i < ga.numel(); ++i) out[i] += g0;
        });
    });
}

Value mean_all(Value a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

Value softmax(Value a, int axis) {
    Graph& g = graph_of(a);
    const Tensor& at = a.tensor();
    const int r = at.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("softmax: invalid axis");
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= at.dim(i);
    const std::int64_t n = at.dim(axis);
    for (int i = axis + 1; i < r; ++i) inner *= at.dim(i);

    Tensor out = Tensor::zeros(at.shape(), at.dtype());
    dispatch(at.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* x = at.data<T>();
        T* y = out.data<T>();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t in = 0; in < inner; ++in) {
                const std::int64_t base = o * n * inner + in;
                double m = -std::numeric_limits<double>::infinity();
                for (std::int64_t i = 0; i < n; ++i) {
                    const double v = static_cast<double>(x[base + i * inner]);
                    if (std::isnan(v)) throw DomainError("softmax input is NaN");
                    if (v > m) m = v;
                }
                if (!std::isfinite(m))
                    throw DomainError(m > 0 ? "softmax input is +inf"
                                            : "softmax slice entirely -inf");
                double denom = 0.0;
                for (std::int64_t i = 0; i < n; ++i)
                    denom += std::exp(static_cast<double>(x[base + i * inner]) - m);
                for (std::int64_t i = 0; i < n; ++i)
                    y[base + i * inner] = static_cast<T>(
                        std::exp(static_cast<double>(x[base + i * inner]) - m) / denom);
            }
    });
    const auto ai = a.id;
    return g.record(std::move(out), {a}, [ai, outer, n, inner](Graph& gg, std::int32_t self) {
        if (!want(gg, ai)) return;
        const Tensor& go = gg.grad(self);
        const Tensor& yt = gg.node(self).value;
        Tensor& ga = gg.grad(ai);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            const T* yp = yt.data<T>();
            T* out = ga.data<T>();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * n * inner + in;
                    T dot = T(0);
                    for (std::int64_t i = 0; i < n; ++i)
                        dot += gp[base + i * inner] * yp[base + i * inner];
                    for (std::int64_t i = 0; i < n; ++i)
                        out[base + i * inner] +=
                            yp[base + i * inner] * (gp[base + i * inner] - dot);
                }
        });
    });
}

Value layer_norm(Value x, Value gain, Value bias) {
    Graph& g = graph_of(x);
    const Tensor& xt = x.tensor();
    const Tensor& gt = gain.tensor();
    const Tensor& bt = bias.tensor();
    if (xt.rank() < 1) throw ShapeError("layer_norm expects rank >= 1");
    const int c = xt.dim(xt.rank() - 1);
    if (gt.rank() != 1 || gt.dim(0) != c || bt.rank() != 1 || bt.dim(0) != c)
        throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(c) + "]");
    if (xt.dtype() != gt.dtype() || xt.dtype() != bt.dtype())
        throw ContractError("layer_norm: dtype mismatch");
    const std::int64_t rows = xt.numel() / c;
    constexpr double eps = 1e-6;

    Tensor out = Tensor::zeros(xt.shape(), xt.dtype());
    Tensor xhat = Tensor::zeros(xt.shape(), xt.dtype());
    Tensor inv_std = Tensor::zeros({static_cast<int>(rows)}, xt.dtype());
    dispatch(xt.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* xp = xt.data<T>();
        const T* gp = gt.data<T>();
        const T* bp = bt.data<T>();
        T* op = out.data<T>();
        T* hp = xhat.data<T>();
        T* ip = inv_std.data<T>();
        for (std::int64_t r = 0; r < rows; ++r) {
            const T* row = xp + r * c;
            double mean = 0.0;
            for (int j = 0; j < c; ++j) mean += static_cast<double>(row[j]);
            mean /= c;
            double var = 0.0;
            for (int j = 0; j < c; ++j) {
                const double d = static_cast<double>(row[j]) - mean;
                var += d * d;
            }
            var /= c;
            const double inv = 1.0 / std::sqrt(var + eps);
            ip[r] = static_cast<T>(inv);
            for (int j = 0; j < c; ++j) {
                const double h = (static_cast<double>(row[j]) - mean) * inv;
                hp[r * c + j] = static_cast<T>(h);
                const double v = h * static_cast<double>(gp[j]) + static_cast<double>(bp[j]);
                if (!std::isfinite(v)) throw DomainError("layer_norm produced non-finite value");
                op[r * c + j] = static_cast<T>(v);
            }
        }
    });
    const auto xi = x.id, gi = gain.id, bi = bias.id;
    return g.record(std::move(out), {x, gain, bias},
                    [xi, gi, bi, rows, c, xhat, inv_std](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        const Tensor& gaint = gg.node(gi).value;
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            const T* hp = xhat.data<T>();
            const T* ip = inv_std.data<T>();
            const T* gainp = gaint.data<T>();
            for (std::int64_t r = 0; r < rows; ++r) {
                if (want(gg, gi)) {
                    T* gg2 = gg.grad(gi).data<T>();
                    for (int j = 0; j < c; ++j) gg2[j] += gp[r * c + j] * hp[r * c + j];
                }
                if (want(gg, bi)) {
                    T* gb = gg.grad(bi).data<T>();
                    kernels<T>().add(gb, gp + r * c, gb, c);
                }
                if (want(gg, xi)) {
                    T* gx = gg.grad(xi).data<T>();
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double ghat = static_cast<double>(gp[r * c + j]) *
                                            static_cast<double>(gainp[j]);
                        m1 += ghat;
                        m2 += ghat * static_cast<double>(hp[r * c + j]);
                    }
                    m1 /= c;
                    m2 /= c;
                    for (int j = 0; j < c; ++j) {
                        const double ghat = static_cast<double>(gp[r * c + j]) *
                                            static_cast<double>(gainp[j]);
                        gx[r * c + j] += static_cast<T>(
                            static_cast<double>(ip[r]) *
                            (ghat - m1 - static_cast<double>(hp[r * c + j]) * m2));
                    }
                }
            }
        });
    });
}

Value channel_gap(Value x) {
    Graph& g = graph_of(x);
    const Tensor& xt = x.tensor();
    if (xt.rank() != 2) throw ShapeError("channel_gap expects [L,c]");
    const int rows = xt.dim(0), c = xt.dim(1);
    Tensor out = Tensor::zeros({rows, 1}, xt.dtype());
    dispatch(xt.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* xp = xt.data<T>();
        T* op = out.data<T>();
        for (int r = 0; r < rows; ++r) {
            double acc = 0.0;
            for (int j = 0; j < c; ++j) acc += static_cast<double>(xp[static_cast<std::int64_t>(r) * c + j]);
            op[r] = static_cast<T>(acc / c);
        }
    });
    const auto xi = x.id;
    return g.record(std::move(out), {x}, [xi, rows, c](Graph& gg, std::int32_t self) {
        if (!want(gg, xi)) return;
        const Tensor& go = gg.grad(self);
        Tensor& gx = gg.grad(xi);
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            T* out = gx.data<T>();
            for (int r = 0; r < rows; ++r) {
                const T v = gp[r] / static_cast<T>(c);
                for (int j = 0; j < c; ++j) out[static_cast<std::int64_t>(r) * c + j] += v;
            }
        });
    });
}

Value conv2d(Value x, Value w, Value b) {
    Graph& g = graph_of(x);
    const Tensor& xt = x.tensor();
    const Tensor& wt = w.tensor();
    const Tensor& bt = b.tensor();
    if (xt.rank() != 3) throw ShapeError("conv2d input must be [c_in,h,w]");
    if (wt.rank() != 4) throw ShapeError("conv2d kernel must be [c_out,c_in,kh,kw]");
    const int cin = xt.dim(0), h = xt.dim(1), wdt = xt.dim(2);
    const int cout = wt.dim(0), kh = wt.dim(2), kw = wt.dim(3);
    if (wt.dim(1) != cin)
        throw ShapeError("conv2d channel mismatch: input " + xt.shape_str() + " kernel " +
                         wt.shape_str());
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d kernel spatial size must be odd");
    if (bt.rank() != 1 || bt.dim(0) != cout) throw ShapeError("conv2d bias must be [c_out]");
    if (xt.dtype() != wt.dtype() || xt.dtype() != bt.dtype())
        throw ContractError("conv2d: dtype mismatch");
    const int ph = kh / 2, pw = kw / 2;

    Tensor out = Tensor::zeros({cout, h, wdt}, xt.dtype());
    dispatch(xt.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const T* xp = xt.data<T>();
        const T* wp = wt.data<T>();
        const T* bp = bt.data<T>();
        T* op = out.data<T>();
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < h; ++oy)
                for (int ox = 0; ox < wdt; ++ox) {
                    double acc = static_cast<double>(bp[co]);
                    for (int ci = 0; ci < cin; ++ci)
                        for (int dy = 0; dy < kh; ++dy) {
                            const int iy = oy + dy - ph;
                            if (iy < 0 || iy >= h) continue;
                            for (int dx = 0; dx < kw; ++dx) {
                                const int ix = ox + dx - pw;
                                if (ix < 0 || ix >= wdt) continue;
                                acc += static_cast<double>(
                                           xp[(static_cast<std::int64_t>(ci) * h + iy) * wdt + ix]) *
                                       static_cast<double>(
                                           wp[((static_cast<std::int64_t>(co) * cin + ci) * kh + dy) * kw + dx]);
                            }
                        }
                    op[(static_cast<std::int64_t>(co) * h + oy) * wdt + ox] = static_cast<T>(acc);
                }
    });
    const auto xi = x.id, wi = w.id, bi = b.id;
    return g.record(std::move(out), {x, w, b},
                    [xi, wi, bi, cin, cout, h, wdt, kh, kw, ph, pw](Graph& gg, std::int32_t self) {
        const Tensor& go = gg.grad(self);
        const Tensor& xt2 = gg.node(xi).value;
        const Tensor& wt2 = gg.node(wi).value;
        dispatch(go.dtype(), [&](auto tag) {
            using T = decltype(tag);
            const T* gp = go.data<T>();
            const T* xp = xt2.data<T>();
            const T* wp = wt2.data<T>();
            const bool wx = want(gg, xi), ww = want(gg, wi), wb = want(gg, bi);
            T* gx = wx ? gg.grad(xi).data<T>() : nullptr;
            T* gw = ww ? gg.grad(wi).data<T>() : nullptr;
            T* gb = wb ? gg.grad(bi).data<T>() : nullptr;
            for (int co = 0; co < cout; ++co)
                for (int oy = 0; oy < h; ++oy)
                    for (int ox = 0; ox < wdt; ++ox) {
                        const T gv = gp[(static_cast<std::int64_t>(co) * h + oy) * wdt + ox];
                        if (gv == T(0)) continue;
                        if (wb) gb[co] += gv;
                        for (int ci = 0; ci < cin; ++ci)
                            for (int dy = 0; dy < kh; ++dy) {
                                const int iy = oy + dy - ph;
                                if (iy < 0 || iy >= h) continue;
                                for (int dx = 0; dx < kw; ++dx) {
                                    const int ix = ox + dx - pw;
                                    if (ix < 0 || ix >= wdt) continue;
                                    const std::int64_t xoff =
                                        (static_cast<std::int64_t>(ci) * h + iy) * wdt + ix;
                                    const std::int64_t woff =
                                        ((static_cast<std::int64_t>(co) * cin + ci) * kh + dy) * kw + dx;
                                    if (wx) gx[xoff] += gv * wp[woff];
                                    if (ww) gw[woff] += gv * xp[xoff];
                                }
                            }
                    }
        });
    });
}

}  // namespace mdtrack
