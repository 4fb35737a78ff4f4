#pragma once

#include <utility>
#include <vector>

#include "vat/tensor.hpp"

namespace vat {

// Taped primitives. Every op computes its forward result and, when `tape`
// is non-null and a gradient path exists, records the matching backward
// rule. Passing tape == nullptr runs pure inference.

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor transpose2d(const Tensor& x, Tape* tape = nullptr);

Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor scale(const Tensor& x, double c, Tape* tape = nullptr);
Tensor add_scalar(const Tensor& x, double c, Tape* tape = nullptr);

// Broadcast a row vector (shape [d] or [1,d]) over every row of x [n,d].
Tensor add_row(const Tensor& x, const Tensor& row, Tape* tape = nullptr);
Tensor mul_row(const Tensor& x, const Tensor& row, Tape* tape = nullptr);

// Softmax over the last axis, computed with max-subtraction.
Tensor softmax_lastdim(const Tensor& x, Tape* tape = nullptr);

// Per-row normalization to zero mean / unit variance over the last axis,
// then an affine map with gain and bias (both shape [d]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-6, Tape* tape = nullptr);

// Exact-erf GELU: x * Phi(x).
Tensor gelu(const Tensor& x, Tape* tape = nullptr);

// Contiguous-range copy reinterpreted with a new shape; backward scatters
// gradients back into the source range.
Tensor slice_flat(const Tensor& x, int64_t start, int64_t len, Shape out_shape,
                  Tape* tape = nullptr);
Tensor slice_rows(const Tensor& x, int64_t r0, int64_t r1, Tape* tape = nullptr);
Tensor slice_cols(const Tensor& x, int64_t c0, int64_t c1, Tape* tape = nullptr);
Tensor concat_rows(const std::vector<Tensor>& parts, Tape* tape = nullptr);
Tensor concat_cols(const std::vector<Tensor>& parts, Tape* tape = nullptr);
// Concatenate the flat buffers of equally-shaped parts into `out_shape`.
Tensor stack_flat(const std::vector<Tensor>& parts, Shape out_shape, Tape* tape = nullptr);
Tensor reshape(const Tensor& x, Shape out_shape, Tape* tape = nullptr);

// Embedding lookup: one row of a [n,d] table as a [1,d] tensor.
Tensor select_row(const Tensor& table, int64_t index, Tape* tape = nullptr);

// Learned 2-D positional table: out[r*wp+c] = row_emb[r] + col_emb[c].
Tensor grid_pos_embed(const Tensor& row_emb, const Tensor& col_emb, Tape* tape = nullptr);

Tensor sum_all(const Tensor& x, Tape* tape = nullptr);
Tensor mean_abs_error(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
Tensor mean_sq_error(const Tensor& a, const Tensor& b, Tape* tape = nullptr);

// x [n,din] * w [din,dout] + b [dout].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b, Tape* tape = nullptr);

// Multi-head scaled dot-product attention on per-head stacks
// q [h,nq,dh], k [h,nk,dh], v [h,nk,dh]. Returns {out [h,nq,dh],
// scores [h,nq,nk]} with scores = softmax(q k^T / sqrt(dh)) per head.
std::pair<Tensor, Tensor> scaled_dot_attention(const Tensor& q, const Tensor& k,
                                               const Tensor& v, Tape* tape = nullptr);

}  // namespace vat
