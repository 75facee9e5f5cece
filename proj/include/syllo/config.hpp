#pragma once

#include <nlohmann/json_fwd.hpp>

#include <string>

namespace syllo {

enum class Activation { GeluErf, GeluTanh };

// Architecture sizes of a GPT-2-family decoder.
struct ModelConfig {
    int n_layers = 0;
    int n_heads = 0;
    int d_model = 0;
    int d_head = 0;
    int d_mlp = 0;
    int n_ctx = 0;
    int n_vocab = 0;
    double layernorm_epsilon = 1e-5;
    Activation activation = Activation::GeluErf;
    bool tied_embeddings = true;

    // Throws std::invalid_argument when sizes are non-positive or d_head * n_heads != d_model.
    void validate() const;

    // Accepts either the native keys (n_layers, d_model, ...) or the Hugging Face GPT-2
    // keys (n_layer, n_embd, n_positions, vocab_size, n_inner, activation_function).
    static ModelConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;

    static ModelConfig gpt2_small();

    bool operator==(const ModelConfig&) const = default;
};

std::string to_string(Activation a);

} // namespace syllo
