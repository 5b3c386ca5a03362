#pragma once

#include <cmath>

#include "nse/graphs.hpp"
#include "nse/rng.hpp"
#include "nse/tensor.hpp"
#include "nse/vocab.hpp"

namespace nse {

struct EncoderParams {
    Tensor tok_emb;  // (vocab, d)
    Tensor pos_emb;  // (max_len, d)
};

struct AttentionParams {
    Tensor wq, wk, wv;  // (d, d)
};

// Hidden states for one sentence after the encoding stage.
struct EncodedSentence {
    Tensor h_hat;          // (N, d) token + position embeddings
    Tensor h_tilde;        // (N, d) self-attention update
    AdjacencyMatrix a_sat; // fully-connected attention graph, rows sum to 1
    Tensor h_t;            // (N_t, d) target rows of h_hat
};

// Trainable-embedding stand-in for a pretrained encoder: token embedding
// plus learned positional embedding, dropout at train time. Deterministic
// given ids and parameters.
inline Tensor encode(const std::vector<int>& ids, const EncoderParams& p, double dropout_rate,
                     bool training, Rng& rng) {
    if (ids.empty()) throw DataError("encode: empty sentence");
    if (ids.size() > p.pos_emb.rows())
        throw ConfigError("encode: sentence length " + std::to_string(ids.size()) +
                          " exceeds positional table " + shape_str(p.pos_emb.shape()));
    std::vector<int> positions(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    Tensor h = add(embedding_lookup(p.tok_emb, ids), embedding_lookup(p.pos_emb, positions));
    if (training && dropout_rate > 0.0)
        h = dropout(h, rng.dropout_mask(h.numel(), dropout_rate));
    return h;
}

// Single-head non-local self-attention (one global space, no head split):
//   A_sat = softmax((H Mq)(H Mk)^T / sqrt(d)),  H~ = A_sat H Mv
// `temperature` rescales the logits and exists for limit-case tests only.
inline std::pair<AdjacencyMatrix, Tensor> self_attention(const Tensor& h_hat,
                                                         const AttentionParams& p,
                                                         double temperature = 1.0) {
    if (h_hat.ndim() != 2 || h_hat.cols() != p.wq.rows())
        throw ShapeError("self_attention: hidden " + shape_str(h_hat.shape()) +
                         " does not fit projections " + shape_str(p.wq.shape()));
    const double d = static_cast<double>(h_hat.cols());
    Tensor q = matmul(h_hat, p.wq);
    Tensor k = matmul(h_hat, p.wk);
    Tensor logits = scalar_mul(matmul(q, transpose(k)), 1.0 / (std::sqrt(d) * temperature));
    Tensor a_sat = softmax(logits, 1);
    Tensor h_tilde = matmul(a_sat, matmul(h_hat, p.wv));
    return {AdjacencyMatrix{a_sat, GraphKind::sat}, h_tilde};
}

// Mean pooling over target rows.
inline Tensor initial_target_repr(const Tensor& h_target_rows) {
    if (h_target_rows.ndim() != 2 || h_target_rows.rows() < 1)
        throw ShapeError("initial_target_repr: expects non-empty (N_t, d) block, got " +
                         shape_str(h_target_rows.shape()));
    return mean_axis(h_target_rows, 0);
}

}  // namespace nse
