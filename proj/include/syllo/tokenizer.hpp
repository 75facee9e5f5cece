#pragma once

#include "syllo/tensor.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace syllo {

// Byte-level BPE compatible with the GPT-2 vocab.json / merges.txt release files.
// Immutable after load; encode/decode are thread-safe.
class BpeTokenizer {
public:
    static BpeTokenizer load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);

    Tokens encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;

    // Raw bytes of one token, e.g. " true".
    std::string token_text(TokenId id) const;

    // Id of `text` when it encodes to exactly one token; otherwise std::invalid_argument
    // naming the offending string.
    TokenId single_token_id(std::string_view text) const;

    int n_vocab() const { return static_cast<int>(id_to_token_.size()); }
    TokenId eot_id() const { return eot_id_; }

    // Pre-tokenizer split, exposed for tests: each piece is a byte range of the input.
    static std::vector<std::string_view> pre_tokenize(std::string_view text);

private:
    void bpe(std::string_view piece, Tokens& out) const;

    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<std::string> id_to_token_;        // byte-level unicode form
    std::unordered_map<std::string, int> merge_rank_; // "left right" -> rank
    std::array<std::string, 256> byte_to_symbol_;
    std::unordered_map<char32_t, unsigned char> symbol_to_byte_;
    TokenId eot_id_ = -1;
};

} // namespace syllo
