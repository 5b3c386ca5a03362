#pragma once

#include "nse/tensor.hpp"

namespace nse {

// Packed GRU parameters for input dim d_in -> hidden dim d. Gate order in the
// packed 3d blocks is [update, reset, candidate].
struct GruParams {
    Tensor wx;  // (d_in, 3d)
    Tensor wh;  // (d, 3d)
    Tensor bx;  // (3d,)
    Tensor bh;  // (3d,)
};

// Standard GRU update on 1-d state vectors:
//   z = sigmoid(update gate), r = sigmoid(reset gate)
//   n = tanh(x-path + r * h-path)
//   h' = (1-z) * h + z * n
// A saturated update gate (z -> 1) therefore hands the output to the
// candidate. Differentiable end-to-end; built from the core primitives.
inline Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruParams& p) {
    if (x.ndim() != 1 || h_prev.ndim() != 1)
        throw ShapeError("gru_cell: expects 1-d state vectors, got " + shape_str(x.shape()) +
                         " and " + shape_str(h_prev.shape()));
    const std::size_t d = h_prev.numel();
    if (p.wx.rows() != x.numel() || p.wx.cols() != 3 * d || p.wh.rows() != d ||
        p.wh.cols() != 3 * d)
        throw ShapeError("gru_cell: parameter shapes " + shape_str(p.wx.shape()) + "/" +
                         shape_str(p.wh.shape()) + " do not fit state " + shape_str(h_prev.shape()));

    Tensor xr = reshape(x, {1, x.numel()});
    Tensor hr = reshape(h_prev, {1, d});
    Tensor gx = add_rowvec(matmul(xr, p.wx), p.bx);  // (1, 3d)
    Tensor gh = add_rowvec(matmul(hr, p.wh), p.bh);  // (1, 3d)

    Tensor z = sigmoid(add(slice_cols(gx, 0, d), slice_cols(gh, 0, d)));
    Tensor r = sigmoid(add(slice_cols(gx, d, 2 * d), slice_cols(gh, d, 2 * d)));
    Tensor cand = tanh(add(slice_cols(gx, 2 * d, 3 * d), mul(r, slice_cols(gh, 2 * d, 3 * d))));

    Tensor one_minus_z = scalar_add(neg(z), 1.0);
    Tensor h = add(mul(one_minus_z, hr), mul(z, cand));
    return reshape(h, {d});
}

}  // namespace nse
