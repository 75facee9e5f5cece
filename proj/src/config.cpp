#include "syllo/config.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>

namespace syllo {

namespace {

template <typename T>
T first_of(const nlohmann::json& j, std::initializer_list<const char*> keys, T fallback) {
    for (const char* k : keys) {
        auto it = j.find(k);
        if (it != j.end() && !it->is_null()) return it->get<T>();
    }
    return fallback;
}

} // namespace

void ModelConfig::validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_head <= 0 || d_mlp <= 0 || n_ctx <= 0 ||
        n_vocab <= 0)
        throw std::invalid_argument("model config: all sizes must be positive");
    if (d_head * n_heads != d_model)
        throw std::invalid_argument("model config: d_head * n_heads must equal d_model (" +
                                    std::to_string(d_head) + " * " + std::to_string(n_heads) +
                                    " != " + std::to_string(d_model) + ")");
    if (!(layernorm_epsilon > 0.0))
        throw std::invalid_argument("model config: layernorm_epsilon must be positive");
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_layers = first_of<int>(j, {"n_layers", "n_layer"}, 0);
    c.n_heads = first_of<int>(j, {"n_heads", "n_head"}, 0);
    c.d_model = first_of<int>(j, {"d_model", "n_embd"}, 0);
    c.d_head = first_of<int>(j, {"d_head"}, c.n_heads > 0 ? c.d_model / c.n_heads : 0);
    c.d_mlp = first_of<int>(j, {"d_mlp", "n_inner"}, 4 * c.d_model);
    c.n_ctx = first_of<int>(j, {"n_ctx", "n_positions"}, 0);
    c.n_vocab = first_of<int>(j, {"n_vocab", "vocab_size"}, 0);
    c.layernorm_epsilon = first_of<double>(j, {"layernorm_epsilon", "layer_norm_epsilon"}, 1e-5);
    c.tied_embeddings = first_of<bool>(j, {"tied_embeddings", "tie_word_embeddings"}, true);

    const auto act = first_of<std::string>(j, {"activation", "activation_function"}, "gelu");
    if (act == "gelu_new" || act == "gelu_tanh" || act == "gelu_pytorch_tanh" || act == "gelu_fast")
        c.activation = Activation::GeluTanh;
    else if (act == "gelu" || act == "gelu_erf")
        c.activation = Activation::GeluErf;
    else
        throw std::invalid_argument("model config: unsupported activation '" + act + "'");

    c.validate();
    return c;
}

nlohmann::json ModelConfig::to_json() const {
    return {{"n_layers", n_layers},
            {"n_heads", n_heads},
            {"d_model", d_model},
            {"d_head", d_head},
            {"d_mlp", d_mlp},
            {"n_ctx", n_ctx},
            {"n_vocab", n_vocab},
            {"layernorm_epsilon", layernorm_epsilon},
            {"activation", to_string(activation)},
            {"tied_embeddings", tied_embeddings}};
}

ModelConfig ModelConfig::gpt2_small() {
    ModelConfig c;
    c.n_layers = 12;
    c.n_heads = 12;
    c.d_model = 768;
    c.d_head = 64;
    c.d_mlp = 3072;
    c.n_ctx = 1024;
    c.n_vocab = 50257;
    c.layernorm_epsilon = 1e-5;
    c.activation = Activation::GeluTanh;
    return c;
}

std::string to_string(Activation a) {
    return a == Activation::GeluTanh ? "gelu_tanh" : "gelu_erf";
}

} // namespace syllo
