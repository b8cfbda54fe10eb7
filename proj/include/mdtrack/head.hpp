#pragma once

#include "mdtrack/bbox.hpp"
#include "mdtrack/nn.hpp"

namespace mdtrack {

// Three-branch convolutional prediction head over the fused search map,
// center-map box decoding, and the training objective.

struct ScoreMaps {
    Value p_s;  // [1,h,w] target confidence, (0,1)
    Value p_b;  // [2,h,w] normalized width/height
    Value p_o;  // [2,h,w] sub-cell center offsets
    int h = 0, w = 0;
};

struct HeadBranch {
    Param *w1 = nullptr, *b1 = nullptr;  // 3x3, C -> C/2
    Param *w2 = nullptr, *b2 = nullptr;  // 3x3, C/2 -> C/4
    Param *w3 = nullptr, *b3 = nullptr;  // 1x1, C/4 -> out
};

struct HeadWeights {
    HeadBranch cls, box, off;
    int channels = 0;
};

HeadWeights make_head(ParamStore& store, int channels, Rng& rng, Dtype dt);

// Reshapes [L,C] tokens (raster order) to C x h x w and runs the three
// parallel stacks: 3x3 conv -> gelu -> 3x3 conv -> 1x1 conv -> sigmoid.
ScoreMaps head_forward(Value fused, int grid_h, int grid_w, const HeadWeights& w);

// argmax of P_S (row-major first on ties); box from P_B/P_O at that cell.
std::pair<BBox, double> decode_box(const ScoreMaps& maps);

struct TargetMaps {
    Tensor cls;       // [1,h,w] gaussian bump, exactly 1 at the center cell
    Tensor reg_mask;  // [1,h,w] one-hot center cell
    int ci = 0, cj = 0;   // center cell
    double off_x = 0, off_y = 0;  // exact sub-cell offsets in [0,1)
};

// Throws DomainError when gt is degenerate or outside the unit square.
TargetMaps make_target_map(const BBox& gt, int grid_h, int grid_w);

// Penalty-reduced focal loss (alpha=2, beta=4), normalized by the positive
// count; predictions clamped to [1e-7, 1-1e-7].
Value focal_loss(Value p_s, const Tensor& cls_target);

// Differentiable GIoU of the predicted box (graph values, cxcywh) against a
// fixed gt box.
Value giou_value(Value cx, Value cy, Value w, Value h, const BBox& gt);

struct LossWeights {
    double cls = 1.0;
    double l1 = 5.0;
    double giou = 2.0;
    double balance = 0.01;
};

struct LossBreakdown {
    Value total;
    double cls = 0, l1 = 0, giou = 0, balance = 0;
};

// Weighted sum of focal, center-cell L1, center-cell GIoU and the balance
// term; gt is in normalized search-crop coordinates.
LossBreakdown total_loss(const ScoreMaps& maps, const BBox& gt, Value balance,
                         const LossWeights& weights);

}  // namespace mdtrack
