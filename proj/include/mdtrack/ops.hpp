#pragma once

#include <memory>
#include <vector>

#include "mdtrack/graph.hpp"

namespace mdtrack {

// Primitive differentiable operations. Everything downstream (backbone,
// temporal modules, fusion, head, losses) composes these; each records its
// backward closure on the owning graph.

// -- elementwise, matching shapes --
Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value div(Value a, Value b);  // throws DomainError on zero denominator
Value maximum(Value a, Value b);  // ties route gradient to a
Value minimum(Value a, Value b);

// -- elementwise, unary --
Value scale(Value a, double s);
Value neg(Value a);
Value exp(Value a);
Value log(Value a);  // throws DomainError on non-positive input
Value sigmoid(Value a);
Value softplus(Value a);
Value gelu(Value a);
Value relu(Value a);
Value abs(Value a);
Value clamp(Value a, double lo, double hi);
// out[i] = mask[i] ? fill : a[i]; gradient blocked at masked entries.
// `fill` may be +-infinity (the top-K -inf sentinel).
Value masked_fill(Value a, std::shared_ptr<const std::vector<std::uint8_t>> mask, double fill);

// -- linear algebra --
Value matmul(Value a, Value b);     // [m,k]x[k,n]
Value transpose(Value a);           // [m,n] -> [n,m]
Value linear(Value x, Value w, Value b);  // x*w + row-broadcast b

// -- shape --
Value reshape(Value a, std::vector<int> shape);
Value concat_rows(const std::vector<Value>& parts);     // 2-d, equal cols
Value slice_rows(Value a, int offset, int len);
Value concat_cols(Value a, Value b);                    // 2-d, equal rows
Value slice_cols(Value a, int offset, int len);

// -- broadcasts over a [L,C] matrix --
Value mul_colvec(Value x, Value col);  // col: [L,1]
Value add_rowvec(Value x, Value row);  // row: [C]

// -- reductions --
Value sum_all(Value a);   // -> [1]
Value mean_all(Value a);  // -> [1]

// -- normalized / structured --
Value softmax(Value a, int axis);
Value layer_norm(Value x, Value gain, Value bias);  // last axis, eps 1e-6
Value channel_gap(Value x);                         // [L,c] -> [L,1]
// x:[c_in,h,w], w:[c_out,c_in,kh,kw] odd spatial, b:[c_out]; stride 1,
// zero-padded 'same' cross-correlation.
Value conv2d(Value x, Value w, Value b);

// -- graph entry helpers --
Value constant(Graph& g, Tensor t);
Value scalar(Graph& g, double v, Dtype dt);

inline Value operator+(Value a, Value b) { return add(a, b); }
inline Value operator-(Value a, Value b) { return sub(a, b); }
inline Value operator*(Value a, Value b) { return mul(a, b); }
inline Value operator-(Value a) { return neg(a); }

}  // namespace mdtrack
