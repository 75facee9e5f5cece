#pragma once

#include "syllo/config.hpp"
#include "syllo/tensor.hpp"

#include <vector>

namespace syllo {

template <typename Scalar>
struct LayerNormWeights {
    Vec<Scalar> scale;
    Vec<Scalar> bias;
};

// Q/K/V projections are stored with all heads side by side (d_model x n_heads*d_head);
// head h owns columns [h*d_head, (h+1)*d_head). W_O stacks the per-head d_head x d_model
// slices along its rows in the same order.
template <typename Scalar>
struct AttentionWeights {
    Mat<Scalar> W_Q, W_K, W_V;
    Vec<Scalar> b_Q, b_K, b_V;
    Mat<Scalar> W_O;
    Vec<Scalar> b_O;
    int d_head = 0;

    auto W_Q_head(int h) const { return W_Q.middleCols(h * d_head, d_head); }
    auto W_K_head(int h) const { return W_K.middleCols(h * d_head, d_head); }
    auto W_V_head(int h) const { return W_V.middleCols(h * d_head, d_head); }
    auto W_O_head(int h) const { return W_O.middleRows(h * d_head, d_head); }
    auto b_Q_head(int h) const { return b_Q.segment(h * d_head, d_head); }
    auto b_K_head(int h) const { return b_K.segment(h * d_head, d_head); }
    auto b_V_head(int h) const { return b_V.segment(h * d_head, d_head); }

    // d_model x d_model bilinear form of the head's query-key circuit.
    Mat<Scalar> W_QK(int h) const { return W_Q_head(h) * W_K_head(h).transpose(); }
    // d_model x d_model map of the head's value-output circuit.
    Mat<Scalar> W_OV(int h) const { return W_V_head(h) * W_O_head(h); }
};

template <typename Scalar>
struct MlpWeights {
    Mat<Scalar> W_in;  // d_model x d_mlp
    Vec<Scalar> b_in;
    Mat<Scalar> W_out; // d_mlp x d_model
    Vec<Scalar> b_out;
};

template <typename Scalar>
struct BlockWeights {
    LayerNormWeights<Scalar> ln1;
    AttentionWeights<Scalar> attn;
    LayerNormWeights<Scalar> ln2;
    MlpWeights<Scalar> mlp;
};

template <typename Scalar>
struct ModelWeights {
    using scalar_type = Scalar;

    ModelConfig config;
    Mat<Scalar> W_E;   // n_vocab x d_model
    Mat<Scalar> W_pos; // n_ctx x d_model
    std::vector<BlockWeights<Scalar>> blocks;
    LayerNormWeights<Scalar> ln_final;
    Mat<Scalar> W_U;   // d_model x n_vocab

    // All parameters zero (LayerNorm scales one), shapes from config.
    static ModelWeights zeros(const ModelConfig& config);

    // Throws std::invalid_argument naming the first tensor whose shape disagrees with config.
    void validate_shapes() const;

    // Max |W_U - W_E^T|.
    double tied_embedding_error() const;

    template <typename Other>
    ModelWeights<Other> cast() const;
};

template <typename Scalar>
template <typename Other>
ModelWeights<Other> ModelWeights<Scalar>::cast() const {
    auto ln = [](const LayerNormWeights<Scalar>& l) {
        return LayerNormWeights<Other>{l.scale.template cast<Other>(), l.bias.template cast<Other>()};
    };
    ModelWeights<Other> out;
    out.config = config;
    out.W_E = W_E.template cast<Other>();
    out.W_pos = W_pos.template cast<Other>();
    out.W_U = W_U.template cast<Other>();
    out.ln_final = ln(ln_final);
    out.blocks.reserve(blocks.size());
    for (const auto& b : blocks) {
        BlockWeights<Other> o;
        o.ln1 = ln(b.ln1);
        o.ln2 = ln(b.ln2);
        o.attn.W_Q = b.attn.W_Q.template cast<Other>();
        o.attn.W_K = b.attn.W_K.template cast<Other>();
        o.attn.W_V = b.attn.W_V.template cast<Other>();
        o.attn.W_O = b.attn.W_O.template cast<Other>();
        o.attn.b_Q = b.attn.b_Q.template cast<Other>();
        o.attn.b_K = b.attn.b_K.template cast<Other>();
        o.attn.b_V = b.attn.b_V.template cast<Other>();
        o.attn.b_O = b.attn.b_O.template cast<Other>();
        o.attn.d_head = b.attn.d_head;
        o.mlp.W_in = b.mlp.W_in.template cast<Other>();
        o.mlp.b_in = b.mlp.b_in.template cast<Other>();
        o.mlp.W_out = b.mlp.W_out.template cast<Other>();
        o.mlp.b_out = b.mlp.b_out.template cast<Other>();
        out.blocks.push_back(std::move(o));
    }
    return out;
}

using WeightsF = ModelWeights<float>;

} // namespace syllo
