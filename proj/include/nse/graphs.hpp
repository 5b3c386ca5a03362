#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nse/data.hpp"
#include "nse/errors.hpp"
#include "nse/tensor.hpp"

namespace nse {

enum class GraphKind { syn, sat, syn_pruned, sat_pruned, merged };

inline const char* graph_kind_name(GraphKind k) {
    switch (k) {
        case GraphKind::syn: return "syn";
        case GraphKind::sat: return "sat";
        case GraphKind::syn_pruned: return "syn_pruned";
        case GraphKind::sat_pruned: return "sat_pruned";
        case GraphKind::merged: return "merged";
    }
    return "?";
}

// Dense square adjacency with provenance. `values` is a graph tensor so that
// soft-pruned matrices stay differentiable end to end; parse graphs are
// plain constants.
struct AdjacencyMatrix {
    Tensor values;  // (n, n), entries >= 0
    GraphKind kind = GraphKind::syn;

    std::size_t dim() const { return values.rows(); }

    // Check the kind-specific invariants; used by tests and loaders.
    void validate() const {
        const auto& v = values.value();
        const std::size_t n = values.rows();
        if (values.ndim() != 2 || values.cols() != n)
            throw ShapeError("adjacency: not square: " + shape_str(values.shape()));
        for (double x : v)
            if (x < 0.0) throw DataError("adjacency: negative entry");
        if (kind == GraphKind::syn) {
            for (double x : v)
                if (x != 0.0 && x != 1.0) throw DataError("adjacency: syn entries must be 0/1");
        }
        if (kind == GraphKind::sat) {
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += v[i * n + j];
                if (std::fabs(s - 1.0) > 1e-6)
                    throw DataError("adjacency: sat row " + std::to_string(i) +
                                    " sums to " + std::to_string(s));
            }
        }
    }
};

// A_ij = 1 iff there is a dependency from token j to token i. Flags add the
// transposed entries and the diagonal; message passing over a directed parse
// tree otherwise starves leaf-to-root flow.
inline AdjacencyMatrix build_syn_adjacency(const Instance& inst, bool symmetrize = true,
                                           bool self_loops = true) {
    inst.validate();
    const std::size_t n = static_cast<std::size_t>(inst.n_tokens());
    std::vector<double> a(n * n, 0.0);
    for (const auto& [head, dep] : inst.dep_edges) {
        a[static_cast<std::size_t>(dep) * n + static_cast<std::size_t>(head)] = 1.0;
        if (symmetrize) a[static_cast<std::size_t>(head) * n + static_cast<std::size_t>(dep)] = 1.0;
    }
    if (self_loops)
        for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
    return {Tensor::constant({n, n}, std::move(a)), GraphKind::syn};
}

// Per-token relative offset from the target span and the linear decay weight
//   mu_j = (j - boundary) / (N + 1),  w_j = 1 - |mu_j|
// Inside the span mu = 0, so target tokens carry weight exactly 1. The
// farthest offset is N-1 < N+1, so weights stay strictly positive.
struct PositionWeights {
    std::vector<double> mu;
    std::vector<double> w;
};

inline PositionWeights position_weights(const Instance& inst) {
    inst.validate();
    const int n = inst.n_tokens();
    const double denom = static_cast<double>(n) + 1.0;
    PositionWeights pw;
    pw.mu.resize(n);
    pw.w.resize(n);
    for (int j = 0; j < n; ++j) {
        double mu = 0.0;
        if (j < inst.target_start)
            mu = static_cast<double>(j - inst.target_start) / denom;
        else if (j >= inst.target_end)
            mu = static_cast<double>(j - (inst.target_end - 1)) / denom;
        pw.mu[j] = mu;
        pw.w[j] = 1.0 - std::fabs(mu);
    }
    return pw;
}

}  // namespace nse
