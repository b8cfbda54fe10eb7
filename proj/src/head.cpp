#include "mdtrack/head.hpp"

#include <cmath>

namespace mdtrack {

static HeadBranch make_branch(ParamStore& store, const std::string& prefix, int c, int out,
                              Rng& rng, Dtype dt) {
    const int mid1 = c / 2 > 0 ? c / 2 : 1;
    const int mid2 = c / 4 > 0 ? c / 4 : 1;
    HeadBranch b;
    b.w1 = &store.create(prefix + ".w1", trunc_normal_init({mid1, c, 3, 3}, 0.02, rng, dt));
    b.b1 = &store.create(prefix + ".b1", Tensor::zeros({mid1}, dt));
    b.w2 = &store.create(prefix + ".w2", trunc_normal_init({mid2, mid1, 3, 3}, 0.02, rng, dt));
    b.b2 = &store.create(prefix + ".b2", Tensor::zeros({mid2}, dt));
    b.w3 = &store.create(prefix + ".w3", trunc_normal_init({out, mid2, 1, 1}, 0.02, rng, dt));
    b.b3 = &store.create(prefix + ".b3", Tensor::zeros({out}, dt));
    return b;
}

HeadWeights make_head(ParamStore& store, int channels, Rng& rng, Dtype dt) {
    HeadWeights w;
    w.channels = channels;
    w.cls = make_branch(store, "head.cls", channels, 1, rng, dt);
    w.box = make_branch(store, "head.box", channels, 2, rng, dt);
    w.off = make_branch(store, "head.off", channels, 2, rng, dt);
    return w;
}

static Value run_branch(Value fmap, const HeadBranch& b) {
    Graph& g = *fmap.g;
    Value y = gelu(conv2d(fmap, g.leaf(*b.w1), g.leaf(*b.b1)));
    y = conv2d(y, g.leaf(*b.w2), g.leaf(*b.b2));
    y = conv2d(y, g.leaf(*b.w3), g.leaf(*b.b3));
    return sigmoid(y);
}

ScoreMaps head_forward(Value fused, int grid_h, int grid_w, const HeadWeights& w) {
    const int l = fused.dim(0), c = fused.dim(1);
    if (l != grid_h * grid_w)
        throw ShapeError("head_forward: " + std::to_string(l) + " tokens cannot fill a " +
                         std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    Value fmap = reshape(transpose(fused), {c, grid_h, grid_w});
    ScoreMaps maps;
    maps.h = grid_h;
    maps.w = grid_w;
    maps.p_s = run_branch(fmap, w.cls);
    maps.p_b = run_branch(fmap, w.box);
    maps.p_o = run_branch(fmap, w.off);
    return maps;
}

std::pair<BBox, double> decode_box(const ScoreMaps& maps) {
    const Tensor& ps = maps.p_s.tensor();
    const int h = maps.h, w = maps.w;
    int bi = 0, bj = 0;
    double best = -1.0;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double v = ps.at(static_cast<std::int64_t>(i) * w + j);
            if (v > best) {
                best = v;
                bi = i;
                bj = j;
            }
        }
    const Tensor& pb = maps.p_b.tensor();
    const Tensor& po = maps.p_o.tensor();
    const std::int64_t cell = static_cast<std::int64_t>(bi) * w + bj;
    BBox box;
    box.cx = (bj + po.at(cell)) / w;
    box.cy = (bi + po.at(static_cast<std::int64_t>(h) * w + cell)) / h;
    box.w = pb.at(cell);
    box.h = pb.at(static_cast<std::int64_t>(h) * w + cell);
    return {box, best};
}

TargetMaps make_target_map(const BBox& gt, int grid_h, int grid_w) {
    if (gt.degenerate()) throw DomainError("make_target_map: degenerate gt box");
    if (gt.cx < 0.0 || gt.cx > 1.0 || gt.cy < 0.0 || gt.cy > 1.0)
        throw DomainError("make_target_map: gt center outside the unit square");
    TargetMaps t;
    t.cj = std::min(grid_w - 1, std::max(0, static_cast<int>(gt.cx * grid_w)));
    t.ci = std::min(grid_h - 1, std::max(0, static_cast<int>(gt.cy * grid_h)));
    t.off_x = gt.cx * grid_w - t.cj;
    t.off_y = gt.cy * grid_h - t.ci;

    // CenterNet-style penalty reduction: sigma grows with the box footprint
    const double cells = std::sqrt(gt.w * grid_w * gt.h * grid_h);
    const double sigma = std::max(2.0 / 3.0, cells / 3.0);

    t.cls = Tensor::zeros({1, grid_h, grid_w}, Dtype::F64);
    t.reg_mask = Tensor::zeros({1, grid_h, grid_w}, Dtype::F64);
    for (int i = 0; i < grid_h; ++i)
        for (int j = 0; j < grid_w; ++j) {
            const double d2 = static_cast<double>((i - t.ci) * (i - t.ci) +
                                                  (j - t.cj) * (j - t.cj));
            t.cls.set(static_cast<std::int64_t>(i) * grid_w + j, std::exp(-d2 / (2 * sigma * sigma)));
        }
    t.reg_mask.set(static_cast<std::int64_t>(t.ci) * grid_w + t.cj, 1.0);
    return t;
}

Value focal_loss(Value p_s, const Tensor& cls_target) {
    Graph& g = *p_s.g;
    if (p_s.numel() != cls_target.numel()) throw ShapeError("focal_loss: map shape mismatch");
    const std::int64_t n = p_s.numel();
    const Dtype dt = p_s.dtype();

    Tensor pos = Tensor::zeros({static_cast<int>(n)}, dt);
    Tensor negw = Tensor::zeros({static_cast<int>(n)}, dt);
    int n_pos = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double t = cls_target.at(i);
        if (t == 1.0) {
            pos.set(i, 1.0);
            ++n_pos;
        } else {
            const double u = 1.0 - t;
            negw.set(i, u * u * u * u);  // beta = 4
        }
    }
    if (n_pos == 0) throw DomainError("focal_loss: no positive cell in target");

    Value p = clamp(reshape(p_s, {static_cast<int>(n)}), 1e-7, 1.0 - 1e-7);
    Value one = constant(g, Tensor::full({static_cast<int>(n)}, 1.0, dt));
    Value q = sub(one, p);
    Value pos_term = mul(constant(g, std::move(pos)), mul(mul(q, q), log(p)));  // alpha = 2
    Value neg_term = mul(constant(g, std::move(negw)), mul(mul(p, p), log(q)));
    return scale(add(sum_all(pos_term), sum_all(neg_term)), -1.0 / n_pos);
}

Value giou_value(Value cx, Value cy, Value w, Value h, const BBox& gt) {
    Graph& g = *cx.g;
    const Dtype dt = cx.dtype();
    auto c = [&](double v) { return constant(g, Tensor::full({1}, v, dt)); };

    Value x0 = sub(cx, scale(w, 0.5));
    Value x1 = add(cx, scale(w, 0.5));
    Value y0 = sub(cy, scale(h, 0.5));
    Value y1 = add(cy, scale(h, 0.5));

    Value ix = relu(sub(minimum(x1, c(gt.x1())), maximum(x0, c(gt.x0()))));
    Value iy = relu(sub(minimum(y1, c(gt.y1())), maximum(y0, c(gt.y0()))));
    Value inter = mul(ix, iy);
    Value uni = sub(add(mul(w, h), c(gt.area())), inter);
    Value ex = sub(maximum(x1, c(gt.x1())), minimum(x0, c(gt.x0())));
    Value ey = sub(maximum(y1, c(gt.y1())), minimum(y0, c(gt.y0())));
    Value enc = mul(ex, ey);
    return sub(div(inter, uni), div(sub(enc, uni), enc));
}

LossBreakdown total_loss(const ScoreMaps& maps, const BBox& gt, Value balance,
                         const LossWeights& weights) {
    Graph& g = *maps.p_s.g;
    const Dtype dt = maps.p_s.dtype();
    const int h = maps.h, w = maps.w;
    TargetMaps targets = make_target_map(gt, h, w);

    Value cls = focal_loss(maps.p_s, targets.cls);

    // pick the center cell of each regression map with a one-hot mask
    Tensor mask1 = Tensor::zeros({h * w}, dt);
    mask1.set(static_cast<std::int64_t>(targets.ci) * w + targets.cj, 1.0);
    Value mask = constant(g, std::move(mask1));
    auto at_center = [&](Value map3, int channel) {
        Value flat = reshape(map3, {2 * h * w});
        Value ch = slice_rows(reshape(flat, {2, h * w}), channel, 1);
        return sum_all(mul(reshape(ch, {h * w}), mask));
    };

    Value pred_w = at_center(maps.p_b, 0);
    Value pred_h = at_center(maps.p_b, 1);
    Value pred_ox = at_center(maps.p_o, 0);
    Value pred_oy = at_center(maps.p_o, 1);
    Value pred_cx = scale(add(pred_ox, constant(g, Tensor::full({1}, targets.cj, dt))),
                          1.0 / w);
    Value pred_cy = scale(add(pred_oy, constant(g, Tensor::full({1}, targets.ci, dt))),
                          1.0 / h);

    auto c1 = [&](double v) { return constant(g, Tensor::full({1}, v, dt)); };
    Value l1 = add(add(abs(sub(pred_cx, c1(gt.cx))), abs(sub(pred_cy, c1(gt.cy)))),
                   add(abs(sub(pred_w, c1(gt.w))), abs(sub(pred_h, c1(gt.h)))));
    Value gl = sub(c1(1.0), giou_value(pred_cx, pred_cy, pred_w, pred_h, gt));

    LossBreakdown out;
    out.cls = cls.tensor().at(0);
    out.l1 = l1.tensor().at(0);
    out.giou = gl.tensor().at(0);
    out.balance = balance.tensor().at(0);
    out.total = add(add(scale(cls, weights.cls), scale(l1, weights.l1)),
                    add(scale(gl, weights.giou), scale(balance, weights.balance)));
    return out;
}

}  // namespace mdtrack
