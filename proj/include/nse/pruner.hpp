#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nse/gcn.hpp"
#include "nse/graphs.hpp"
#include "nse/gru.hpp"
#include "nse/rng.hpp"
#include "nse/tensor.hpp"

namespace nse {

enum class SamplingMode { soft, hard_st };

inline const char* sampling_mode_name(SamplingMode m) {
    return m == SamplingMode::soft ? "soft" : "hard_st";
}

// ---------------------------------------------------------------------------
// Multi-hop action score estimator
// ---------------------------------------------------------------------------

struct EstimatorParams {
    Tensor score_w;  // (3d+1, 1): concat(w_j*h_j [d], mu_j [1], C [d], r_t [d]) -> scalar
    Tensor score_b;  // (1,)
    GruParams gru;   // d -> d recurrence over hops
};

// Recurrence state and per-hop telemetry. C resets to zero at the start of
// every pruning layer; each hop's attention sums to 1 and gates live in (0,1).
struct EstimatorState {
    std::vector<std::vector<double>> hop_gates;
    std::vector<std::vector<double>> hop_attn;
};

// Per hop: s_j = W_s [w_j h_j, mu_j, C, r_t] + b_s; g = sigmoid(s);
// alpha = softmax(s); I = sum_j alpha_j w_j h_j; C <- GRU(I, C).
// Returns the final hop's gate vector. The recurrence is skipped after the
// last hop since nothing consumes it.
inline std::pair<Tensor, EstimatorState> action_scores(const Tensor& h, const Tensor& w_pos,
                                                       const Tensor& mu, const Tensor& r_t,
                                                       int hops, const EstimatorParams& p) {
    if (hops < 1) throw ConfigError("action_scores: hops must be >= 1");
    const std::size_t n = h.rows(), d = h.cols();
    if (w_pos.numel() != n || mu.numel() != n || r_t.numel() != d)
        throw ShapeError("action_scores: inputs do not agree with hidden " + shape_str(h.shape()));
    if (p.score_w.rows() != 3 * d + 1 || p.score_w.cols() != 1)
        throw ShapeError("action_scores: score weight " + shape_str(p.score_w.shape()) +
                         " must be (3d+1, 1) for d=" + std::to_string(d));

    Tensor weighted_h = rowwise_scale(h, w_pos);
    Tensor mu_col = reshape(mu, {n, 1});
    Tensor context = Tensor::zeros({d});

    EstimatorState state;
    Tensor gates;
    for (int hop = 0; hop < hops; ++hop) {
        Tensor input = concat_cols({weighted_h, mu_col, repeat_row(context, n), repeat_row(r_t, n)});
        Tensor scores = reshape(add_rowvec(matmul(input, p.score_w), p.score_b), {n});
        gates = sigmoid(scores);
        Tensor attn = softmax(scores, 0);
        state.hop_gates.push_back(gates.value());
        state.hop_attn.push_back(attn.value());
        if (hop + 1 < hops) {
            Tensor summary = reshape(matmul(reshape(attn, {1, n}), weighted_h), {d});
            context = gru_cell(summary, context, p.gru);
        }
    }
    return {gates, state};
}

// p0 = 1 - g (prune), p1 = g (reserve); complementary by construction.
inline std::pair<Tensor, Tensor> prune_probs(const Tensor& g) {
    return {scalar_add(neg(g), 1.0), g};
}

// ---------------------------------------------------------------------------
// Gumbel-Softmax action sampling
// ---------------------------------------------------------------------------

// Pre-drawn Gumbel(0,1) noise, one sample per class per node. Zero noise is
// the deterministic evaluation limit.
struct GumbelNoise {
    std::vector<double> e0, e1;

    static GumbelNoise draw(std::size_t n, Rng& rng) {
        return {rng.gumbel_vector(n), rng.gumbel_vector(n)};
    }
    static GumbelNoise zeros(std::size_t n) {
        return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    }
};

// Sampled reserve decisions for one pruning layer. Target-span entries are
// forced to exactly 1 with zero gradient in every mode.
struct ActionVector {
    Tensor act;  // (N,) in [0,1]; hard_st forwards exact {0,1}
    SamplingMode mode = SamplingMode::soft;
    std::vector<std::size_t> forced_reserved;
};

// Two-class Gumbel-Softmax on the reserve probability:
//   act_j = exp((log p1 + e1)/pi) / (exp((log p0 + e0)/pi) + exp((log p1 + e1)/pi))
//         = sigmoid(((log p1 - log p0) + (e1 - e0)) / pi)
// Soft mode returns the relaxed value; hard_st forwards the 0/1 argmax while
// backpropagating through the relaxation.
inline ActionVector gumbel_sample(const Tensor& p0, const Tensor& p1, double temperature,
                                  const GumbelNoise& noise, SamplingMode mode,
                                  std::vector<std::size_t> forced_reserved = {}) {
    if (temperature <= 0.0) throw ConfigError("gumbel_sample: temperature must be > 0");
    const std::size_t n = p1.numel();
    if (p0.numel() != n || noise.e0.size() != n || noise.e1.size() != n)
        throw ShapeError("gumbel_sample: probability/noise length mismatch for " +
                         shape_str(p1.shape()));
    std::vector<double> noise_diff(n);
    for (std::size_t i = 0; i < n; ++i) noise_diff[i] = noise.e1[i] - noise.e0[i];
    Tensor logit = add(sub(log(p1), log(p0)), Tensor::vector(std::move(noise_diff)));
    Tensor act = sigmoid(scalar_mul(logit, 1.0 / temperature));
    if (mode == SamplingMode::hard_st) act = hard_straight_through(act);
    if (!forced_reserved.empty()) act = force_values(act, forced_reserved, 1.0);
    return {act, mode, std::move(forced_reserved)};
}

// ---------------------------------------------------------------------------
// Graph masking and merging
// ---------------------------------------------------------------------------

// Scale column j by act_j: suppresses messages arriving *from* pruned nodes.
inline AdjacencyMatrix mask_graph(const AdjacencyMatrix& a, const ActionVector& act) {
    GraphKind out_kind;
    switch (a.kind) {
        case GraphKind::syn: out_kind = GraphKind::syn_pruned; break;
        case GraphKind::sat: out_kind = GraphKind::sat_pruned; break;
        default:
            throw ConfigError(std::string("mask_graph: expected a syn or sat graph, got ") +
                              graph_kind_name(a.kind));
    }
    return {colwise_scale(a.values, act.act), out_kind};
}

// Entrywise average of the two pruned graphs.
inline AdjacencyMatrix merge_graphs(const AdjacencyMatrix& syn_pruned,
                                    const AdjacencyMatrix& sat_pruned) {
    if (syn_pruned.kind != GraphKind::syn_pruned || sat_pruned.kind != GraphKind::sat_pruned)
        throw ConfigError(std::string("merge_graphs: expected (syn_pruned, sat_pruned), got (") +
                          graph_kind_name(syn_pruned.kind) + ", " + graph_kind_name(sat_pruned.kind) +
                          ")");
    if (syn_pruned.dim() != sat_pruned.dim())
        throw ShapeError("merge_graphs: dimension mismatch " + shape_str(syn_pruned.values.shape()) +
                         " vs " + shape_str(sat_pruned.values.shape()));
    return {scalar_mul(add(syn_pruned.values, sat_pruned.values), 0.5), GraphKind::merged};
}

// ---------------------------------------------------------------------------
// Full pruning layer
// ---------------------------------------------------------------------------

enum class Variant { full, no_prune, rand_prune, no_merge };

inline const char* variant_name(Variant v) {
    switch (v) {
        case Variant::full: return "full";
        case Variant::no_prune: return "no_prune";
        case Variant::rand_prune: return "rand_prune";
        case Variant::no_merge: return "no_merge";
    }
    return "?";
}

struct PruningLayerParams {
    EstimatorParams estimator;
    PwGcnStack gcn_b;
};

struct PruningLayerOptions {
    int hops = 3;
    double temperature = 0.1;
    SamplingMode sampling_mode = SamplingMode::soft;
    Variant variant = Variant::full;
    bool merge_unpruned_sat = false;  // literal printed form of the merge
    double dropout_rate = 0.0;
    std::vector<std::size_t> forced_reserved;  // target span: never pruned
};

struct PruningLayerResult {
    Tensor h_next;
    ActionVector actions;
    AdjacencyMatrix merged;
};

// score -> sample -> mask both graphs -> merge -> graph convolution.
// Every layer re-masks the ORIGINAL syn/sat matrices with its own actions.
// Deterministic given fixed noise; in evaluation mode no noise is drawn and
// the sampler collapses to its epsilon=0 limit.
inline PruningLayerResult pruning_layer(const Tensor& h, const AdjacencyMatrix& a_syn,
                                        const AdjacencyMatrix& a_sat, const Tensor& w_pos,
                                        const Tensor& mu, const Tensor& r_t,
                                        const PruningLayerParams& params,
                                        const PruningLayerOptions& opt, bool training, Rng& rng) {
    const std::size_t n = h.rows();

    auto [gates, state] = action_scores(h, w_pos, mu, r_t, opt.hops, params.estimator);

    GumbelNoise noise = training ? GumbelNoise::draw(n, rng) : GumbelNoise::zeros(n);

    ActionVector actions;
    switch (opt.variant) {
        case Variant::no_prune: {
            // estimator + noise still run so the rng stream matches `full`;
            // the gates themselves are discarded
            actions = {Tensor::ones({n}), opt.sampling_mode, opt.forced_reserved};
            break;
        }
        case Variant::rand_prune: {
            Tensor g_rand = Tensor::vector(rng.uniform_vector(n));
            auto [p0, p1] = prune_probs(g_rand);
            actions = gumbel_sample(p0, p1, opt.temperature, noise, opt.sampling_mode,
                                    opt.forced_reserved);
            break;
        }
        default: {
            auto [p0, p1] = prune_probs(gates);
            actions = gumbel_sample(p0, p1, opt.temperature, noise, opt.sampling_mode,
                                    opt.forced_reserved);
            break;
        }
    }

    AdjacencyMatrix syn_pruned = mask_graph(a_syn, actions);
    AdjacencyMatrix merged;
    if (opt.variant == Variant::no_merge) {
        merged = syn_pruned;
    } else if (opt.merge_unpruned_sat) {
        ActionVector keep_all{Tensor::ones({n}), actions.mode, {}};
        merged = merge_graphs(syn_pruned, mask_graph(a_sat, keep_all));
    } else {
        merged = merge_graphs(syn_pruned, mask_graph(a_sat, actions));
    }

    Tensor h_in = h;
    if (training && opt.dropout_rate > 0.0)
        h_in = dropout(h_in, rng.dropout_mask(h_in.numel(), opt.dropout_rate));
    Tensor h_next = pwgcn_forward(h_in, merged.values, w_pos, params.gcn_b);
    return {h_next, std::move(actions), std::move(merged)};
}

}  // namespace nse
