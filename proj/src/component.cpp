#include "syllo/component.hpp"

#include "syllo/config.hpp"

#include <cctype>
#include <charconv>
#include <stdexcept>

namespace syllo {

namespace {

int parse_int(std::string_view s, std::string_view whole) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw std::invalid_argument("bad component id '" + std::string(whole) + "'");
    return v;
}

} // namespace

std::string ComponentId::label() const {
    switch (kind) {
    case Kind::Embed: return "embed";
    case Kind::AttnHead: return std::to_string(layer) + "." + std::to_string(head.value_or(0));
    case Kind::Mlp: return "MLP" + std::to_string(layer);
    }
    return {};
}

ComponentId ComponentId::parse(std::string_view text) {
    std::string lower;
    for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (lower == "embed") return embed();
    if (lower.rfind("mlp", 0) == 0) return mlp(parse_int(std::string_view(lower).substr(3), text));
    if (lower.rfind("m", 0) == 0) return mlp(parse_int(std::string_view(lower).substr(1), text));
    auto dot = lower.find('.');
    if (dot == std::string::npos) throw std::invalid_argument("bad component id '" + std::string(text) + "'");
    std::string_view sv(lower);
    return attn_head(parse_int(sv.substr(0, dot), text), parse_int(sv.substr(dot + 1), text));
}

void ComponentId::check(const ModelConfig& config) const {
    if (kind == Kind::Embed) return;
    if (layer < 0 || layer >= config.n_layers)
        throw std::out_of_range("component " + label() + ": layer out of range");
    if (kind == Kind::AttnHead && (!head || *head < 0 || *head >= config.n_heads))
        throw std::out_of_range("component " + label() + ": head out of range");
}

int ComponentId::order() const {
    switch (kind) {
    case Kind::Embed: return -1;
    case Kind::AttnHead: return 2 * layer;
    case Kind::Mlp: return 2 * layer + 1;
    }
    return 0;
}

std::string to_string(ComponentId::Kind kind) {
    switch (kind) {
    case ComponentId::Kind::Embed: return "embed";
    case ComponentId::Kind::AttnHead: return "head";
    case ComponentId::Kind::Mlp: return "mlp";
    }
    return {};
}

} // namespace syllo
