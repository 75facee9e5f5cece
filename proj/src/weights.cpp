#include "syllo/weights.hpp"

#include <stdexcept>
#include <string>

namespace syllo {

namespace {

template <typename Derived>
void expect_shape(const Eigen::MatrixBase<Derived>& m, Eigen::Index rows, Eigen::Index cols,
                  const std::string& name) {
    if (m.rows() != rows || m.cols() != cols)
        throw std::invalid_argument("shape mismatch for " + name + ": expected " +
                                    std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                                    std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

} // namespace

template <typename Scalar>
ModelWeights<Scalar> ModelWeights<Scalar>::zeros(const ModelConfig& c) {
    c.validate();
    const int d = c.d_model;
    auto ln = [d] {
        return LayerNormWeights<Scalar>{Vec<Scalar>::Ones(d), Vec<Scalar>::Zero(d)};
    };
    ModelWeights w;
    w.config = c;
    w.W_E = Mat<Scalar>::Zero(c.n_vocab, d);
    w.W_pos = Mat<Scalar>::Zero(c.n_ctx, d);
    w.W_U = Mat<Scalar>::Zero(d, c.n_vocab);
    w.ln_final = ln();
    w.blocks.resize(c.n_layers);
    for (auto& b : w.blocks) {
        b.ln1 = ln();
        b.ln2 = ln();
        b.attn.W_Q = Mat<Scalar>::Zero(d, d);
        b.attn.W_K = Mat<Scalar>::Zero(d, d);
        b.attn.W_V = Mat<Scalar>::Zero(d, d);
        b.attn.W_O = Mat<Scalar>::Zero(d, d);
        b.attn.b_Q = Vec<Scalar>::Zero(d);
        b.attn.b_K = Vec<Scalar>::Zero(d);
        b.attn.b_V = Vec<Scalar>::Zero(d);
        b.attn.b_O = Vec<Scalar>::Zero(d);
        b.attn.d_head = c.d_head;
        b.mlp.W_in = Mat<Scalar>::Zero(d, c.d_mlp);
        b.mlp.b_in = Vec<Scalar>::Zero(c.d_mlp);
        b.mlp.W_out = Mat<Scalar>::Zero(c.d_mlp, d);
        b.mlp.b_out = Vec<Scalar>::Zero(d);
    }
    return w;
}

template <typename Scalar>
void ModelWeights<Scalar>::validate_shapes() const {
    const auto& c = config;
    c.validate();
    const int d = c.d_model;
    expect_shape(W_E, c.n_vocab, d, "W_E");
    expect_shape(W_pos, c.n_ctx, d, "W_pos");
    expect_shape(W_U, d, c.n_vocab, "W_U");
    expect_shape(ln_final.scale, 1, d, "ln_final.scale");
    expect_shape(ln_final.bias, 1, d, "ln_final.bias");
    if (static_cast<int>(blocks.size()) != c.n_layers)
        throw std::invalid_argument("shape mismatch: expected " + std::to_string(c.n_layers) +
                                    " blocks, got " + std::to_string(blocks.size()));
    for (int l = 0; l < c.n_layers; ++l) {
        const auto& b = blocks[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        expect_shape(b.ln1.scale, 1, d, p + "ln1.scale");
        expect_shape(b.ln1.bias, 1, d, p + "ln1.bias");
        expect_shape(b.ln2.scale, 1, d, p + "ln2.scale");
        expect_shape(b.ln2.bias, 1, d, p + "ln2.bias");
        expect_shape(b.attn.W_Q, d, d, p + "attn.W_Q");
        expect_shape(b.attn.W_K, d, d, p + "attn.W_K");
        expect_shape(b.attn.W_V, d, d, p + "attn.W_V");
        expect_shape(b.attn.W_O, d, d, p + "attn.W_O");
        expect_shape(b.attn.b_Q, 1, d, p + "attn.b_Q");
        expect_shape(b.attn.b_K, 1, d, p + "attn.b_K");
        expect_shape(b.attn.b_V, 1, d, p + "attn.b_V");
        expect_shape(b.attn.b_O, 1, d, p + "attn.b_O");
        if (b.attn.d_head != c.d_head)
            throw std::invalid_argument("shape mismatch: " + p + "attn.d_head");
        expect_shape(b.mlp.W_in, d, c.d_mlp, p + "mlp.W_in");
        expect_shape(b.mlp.b_in, 1, c.d_mlp, p + "mlp.b_in");
        expect_shape(b.mlp.W_out, c.d_mlp, d, p + "mlp.W_out");
        expect_shape(b.mlp.b_out, 1, d, p + "mlp.b_out");
    }
}

template <typename Scalar>
double ModelWeights<Scalar>::tied_embedding_error() const {
    if (W_U.rows() != W_E.cols() || W_U.cols() != W_E.rows())
        throw std::invalid_argument("tied embedding check: W_U is not W_E-transpose shaped");
    return static_cast<double>((W_U - W_E.transpose()).cwiseAbs().maxCoeff());
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;

} // namespace syllo
