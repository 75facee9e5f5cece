#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>

namespace syllo {

struct ModelConfig;

// Address of a residual-stream writer: the embedding, one attention head, or one MLP.
struct ComponentId {
    enum class Kind { Embed, AttnHead, Mlp };

    Kind kind = Kind::Embed;
    int layer = 0;
    std::optional<int> head;

    static ComponentId embed() { return {Kind::Embed, 0, std::nullopt}; }
    static ComponentId attn_head(int layer, int head) { return {Kind::AttnHead, layer, head}; }
    static ComponentId mlp(int layer) { return {Kind::Mlp, layer, std::nullopt}; }

    bool is_head() const { return kind == Kind::AttnHead; }
    bool is_mlp() const { return kind == Kind::Mlp; }

    // "7.2" for heads, "MLP10" for MLPs, "embed" for the embedding.
    std::string label() const;

    // Inverse of label(); also accepts "mlp10" and "m10". Throws std::invalid_argument.
    static ComponentId parse(std::string_view text);

    // Throws std::out_of_range when the layer/head does not exist in config.
    void check(const ModelConfig& config) const;

    // Position in the forward computation: embed < heads of layer l < MLP l < heads of l+1.
    int order() const;

    auto operator<=>(const ComponentId&) const = default;
};

std::string to_string(ComponentId::Kind kind);

} // namespace syllo
