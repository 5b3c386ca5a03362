#pragma once

#include <vector>

#include "nse/tensor.hpp"

namespace nse {

struct PwGcnLayerParams {
    Tensor w;  // (d, d)
    Tensor b;  // (d,)
};

// A depth-T' stack of position-weighted graph convolution layers.
struct PwGcnStack {
    std::vector<PwGcnLayerParams> layers;
    std::size_t depth() const { return layers.size(); }
};

// One position-weighted graph convolution:
//   h_i = ReLU( sum_j A_ij * (w_j * W h_j) / (d_i + 1) + b )
// The degree d_i is taken from the matrix actually passed in, so soft-pruned
// matrices yield fractional degrees and the +1 keeps isolated rows finite
// (an all-zero neighborhood returns ReLU(b)).
inline Tensor pwgcn_layer(const Tensor& h, const Tensor& adj, const Tensor& w_pos,
                          const PwGcnLayerParams& p) {
    if (h.ndim() != 2 || adj.ndim() != 2 || adj.rows() != adj.cols() || adj.rows() != h.rows())
        throw ShapeError("pwgcn_layer: hidden " + shape_str(h.shape()) + " vs adjacency " +
                         shape_str(adj.shape()));
    if (w_pos.ndim() != 1 || w_pos.numel() != h.rows())
        throw ShapeError("pwgcn_layer: position weights " + shape_str(w_pos.shape()) +
                         " do not match " + shape_str(h.shape()));
    Tensor messages = rowwise_scale(matmul(h, p.w), w_pos);  // row j = w_j * W h_j
    Tensor aggregated = matmul(adj, messages);
    Tensor inv_deg = reciprocal(scalar_add(sum_axis(adj, 1), 1.0));
    return relu(add_rowvec(rowwise_scale(aggregated, inv_deg), p.b));
}

inline Tensor pwgcn_forward(Tensor h, const Tensor& adj, const Tensor& w_pos,
                            const PwGcnStack& stack) {
    if (stack.depth() < 1) throw ConfigError("pwgcn_forward: stack depth must be >= 1");
    for (const auto& layer : stack.layers) h = pwgcn_layer(h, adj, w_pos, layer);
    return h;
}

}  // namespace nse
