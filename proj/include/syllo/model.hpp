#pragma once

#include "syllo/cache.hpp"
#include "syllo/component.hpp"
#include "syllo/hooks.hpp"
#include "syllo/weights.hpp"

#include <span>
#include <utility>
#include <vector>

namespace syllo {

struct ForwardOptions {
    // Unembed only the last position; logits (and a Logits hook) are then 1 x n_vocab.
    bool final_position_logits_only = false;
    // Skip recording activations; the returned cache holds only the tokens.
    bool record_cache = true;
};

template <typename Scalar>
struct ForwardResult {
    Mat<Scalar> logits;
    ActivationCache<Scalar> cache;

    // Logits of the last position as a row vector.
    Vec<Scalar> final_logits() const { return logits.row(logits.rows() - 1); }
};

// Plain GPT-2 forward (pre-LN, causal attention, GELU MLP) recording every hook site.
template <typename Scalar>
ForwardResult<Scalar> forward_with_cache(const ModelWeights<Scalar>& weights, std::span<const TokenId> tokens,
                                         const ForwardOptions& options = {});

// Forward pass in which each hooked site is replaced before anything downstream reads it.
// head_result hooks feed attn_out = sum of head results + b_O.
template <typename Scalar>
ForwardResult<Scalar> forward_hooked(const ModelWeights<Scalar>& weights, std::span<const TokenId> tokens,
                                     const HookSet<Scalar>& hooks, const ForwardOptions& options = {});

// Re-run layers [start_layer, n_layers) from the resid_pre recorded in `upstream`, applying
// hooks. Equivalent to forward_hooked when no hook touches a layer below start_layer.
template <typename Scalar>
ForwardResult<Scalar> forward_resume(const ModelWeights<Scalar>& weights, const ActivationCache<Scalar>& upstream,
                                     int start_layer, const HookSet<Scalar>& hooks,
                                     const ForwardOptions& options = {});

template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const LayerNormWeights<Scalar>& ln, double eps);

template <typename Scalar>
Scalar gelu(Scalar x, Activation kind);

// Apply LN2 + MLP of `layer` to each row of x (without the residual add).
template <typename Scalar>
Mat<Scalar> mlp_apply(const ModelWeights<Scalar>& weights, int layer, const Mat<Scalar>& x);

// Final LayerNorm then unembedding, one row per input row.
template <typename Scalar>
Mat<Scalar> unembed(const ModelWeights<Scalar>& weights, const Mat<Scalar>& resid);

template <typename Scalar>
struct ResidualDecomposition {
    std::vector<std::pair<ComponentId, Vec<Scalar>>> components;
    // Sum over layers of the attention output biases, which belong to no head.
    Vec<Scalar> attn_bias;

    Vec<Scalar> sum() const;
    const Vec<Scalar>& of(const ComponentId& id) const;
};

// Split the last layer's resid_post at `position` (default: final) into the embedding,
// every head_result and every mlp_out. Throws std::out_of_range on an incomplete cache.
template <typename Scalar>
ResidualDecomposition<Scalar> decompose_final_residual(const ActivationCache<Scalar>& cache, int position = -1);

using ForwardResultF = ForwardResult<float>;
using CacheF = ActivationCache<float>;
using HooksF = HookSet<float>;

} // namespace syllo
