#include "syllo/tokenizer.hpp"

#include <nlohmann/json.hpp>
#include <unicode/uchar.h>

#include <fstream>
#include <limits>
#include <stdexcept>

namespace syllo {

namespace {

void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Decodes one code point starting at s[i]; invalid sequences yield a single byte with
// cp = U+FFFD so that pre-tokenization stays byte-exact.
struct CodePoint {
    char32_t cp;
    std::size_t len;
};

CodePoint next_code_point(std::string_view s, std::size_t i) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    auto cont = [&](std::size_t k) {
        return i + k < s.size() && (static_cast<unsigned char>(s[i + k]) & 0xC0) == 0x80;
    };
    auto byte = [&](std::size_t k) { return static_cast<char32_t>(static_cast<unsigned char>(s[i + k]) & 0x3F); };
    if (b0 < 0x80) return {b0, 1};
    if ((b0 & 0xE0) == 0xC0 && cont(1)) {
        const char32_t cp = ((b0 & 0x1F) << 6) | byte(1);
        if (cp >= 0x80) return {cp, 2};
    } else if ((b0 & 0xF0) == 0xE0 && cont(1) && cont(2)) {
        const char32_t cp = ((b0 & 0x0F) << 12) | (byte(1) << 6) | byte(2);
        if (cp >= 0x800 && (cp < 0xD800 || cp > 0xDFFF)) return {cp, 3};
    } else if ((b0 & 0xF8) == 0xF0 && cont(1) && cont(2) && cont(3)) {
        const char32_t cp = ((b0 & 0x07) << 18) | (byte(1) << 12) | (byte(2) << 6) | byte(3);
        if (cp >= 0x10000 && cp <= 0x10FFFF) return {cp, 4};
    }
    return {0xFFFD, 1};
}

enum class CharClass { Letter, Number, Space, Other };

CharClass classify(char32_t cp) {
    const auto c = static_cast<UChar32>(cp);
    if (u_isUWhiteSpace(c)) return CharClass::Space;
    switch (u_charType(c)) {
    case U_UPPERCASE_LETTER:
    case U_LOWERCASE_LETTER:
    case U_TITLECASE_LETTER:
    case U_MODIFIER_LETTER:
    case U_OTHER_LETTER: return CharClass::Letter;
    case U_DECIMAL_DIGIT_NUMBER:
    case U_LETTER_NUMBER:
    case U_OTHER_NUMBER: return CharClass::Number;
    default: return CharClass::Other;
    }
}

} // namespace

// Equivalent to the GPT-2 pattern
//   's|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+
std::vector<std::string_view> BpeTokenizer::pre_tokenize(std::string_view text) {
    struct Unit {
        std::size_t pos, len;
        char32_t cp;
        CharClass cls;
    };
    std::vector<Unit> units;
    for (std::size_t i = 0; i < text.size();) {
        const auto [cp, len] = next_code_point(text, i);
        units.push_back({i, len, cp, classify(cp)});
        i += len;
    }
    const std::size_t n = units.size();
    std::vector<std::string_view> out;
    auto emit = [&](std::size_t from, std::size_t to) {
        const std::size_t begin = units[from].pos;
        const std::size_t end = to < n ? units[to].pos : text.size();
        out.push_back(text.substr(begin, end - begin));
    };
    auto run_end = [&](std::size_t from, CharClass cls) {
        std::size_t j = from;
        while (j < n && units[j].cls == cls) ++j;
        return j;
    };

    std::size_t i = 0;
    while (i < n) {
        if (units[i].cp == U'\'' && i + 1 < n) {
            const char32_t a = units[i + 1].cp;
            const char32_t b = i + 2 < n ? units[i + 2].cp : 0;
            if (a == U's' || a == U't' || a == U'm' || a == U'd') {
                emit(i, i + 2);
                i += 2;
                continue;
            }
            if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) {
                emit(i, i + 3);
                i += 3;
                continue;
            }
        }
        std::size_t start = i;
        std::size_t body = i;
        if (units[i].cp == U' ' && i + 1 < n && units[i + 1].cls != CharClass::Space) body = i + 1;
        const CharClass cls = units[body].cls;
        if (cls != CharClass::Space) {
            const std::size_t end = run_end(body, cls);
            emit(start, end);
            i = end;
            continue;
        }
        // Whitespace: \s+(?!\S) leaves the last space for a following word, else \s+.
        const std::size_t end = run_end(i, CharClass::Space);
        if (end == n || end - i == 1) {
            emit(i, end);
            i = end;
        } else {
            emit(i, end - 1);
            i = end - 1;
        }
    }
    return out;
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt) {
    BpeTokenizer t;

    // GPT-2's reversible byte -> printable code point table.
    std::vector<int> printable;
    for (int b = '!'; b <= '~'; ++b) printable.push_back(b);
    for (int b = 0xA1; b <= 0xAC; ++b) printable.push_back(b);
    for (int b = 0xAE; b <= 0xFF; ++b) printable.push_back(b);
    std::array<char32_t, 256> cp_of{};
    std::array<bool, 256> seen{};
    for (int b : printable) {
        cp_of[b] = static_cast<char32_t>(b);
        seen[b] = true;
    }
    char32_t next = 256;
    for (int b = 0; b < 256; ++b)
        if (!seen[b]) cp_of[b] = next++;
    for (int b = 0; b < 256; ++b) {
        append_utf8(t.byte_to_symbol_[b], cp_of[b]);
        t.symbol_to_byte_[cp_of[b]] = static_cast<unsigned char>(b);
    }

    std::ifstream vin(vocab_json);
    if (!vin) throw std::runtime_error("cannot open vocabulary " + vocab_json.string());
    const auto vocab = nlohmann::json::parse(vin);
    t.id_to_token_.resize(vocab.size());
    std::vector<bool> filled(vocab.size(), false);
    for (const auto& [token, id_json] : vocab.items()) {
        const auto id = id_json.get<std::int64_t>();
        if (id < 0 || id >= static_cast<std::int64_t>(vocab.size()) || filled[id])
            throw std::runtime_error("vocabulary ids are not dense in [0, n_vocab)");
        filled[id] = true;
        t.id_to_token_[id] = token;
        t.token_to_id_.emplace(token, static_cast<TokenId>(id));
    }
    if (auto it = t.token_to_id_.find("<|endoftext|>"); it != t.token_to_id_.end()) t.eot_id_ = it->second;

    std::ifstream min(merges_txt);
    if (!min) throw std::runtime_error("cannot open merges " + merges_txt.string());
    std::string line;
    int rank = 0;
    while (std::getline(min, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.rfind("#version", 0) == 0) continue;
        if (line.find(' ') == std::string::npos) throw std::runtime_error("bad merge rule: " + line);
        t.merge_rank_.emplace(line, rank++);
    }
    return t;
}

void BpeTokenizer::bpe(std::string_view piece, Tokens& out) const {
    std::vector<std::string> word;
    word.reserve(piece.size());
    for (char c : piece) word.push_back(byte_to_symbol_[static_cast<unsigned char>(c)]);

    std::string key;
    while (word.size() > 1) {
        int best = std::numeric_limits<int>::max();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i + 1 < word.size(); ++i) {
            key.assign(word[i]).append(" ").append(word[i + 1]);
            auto it = merge_rank_.find(key);
            if (it != merge_rank_.end() && it->second < best) {
                best = it->second;
                best_i = i;
            }
        }
        if (best == std::numeric_limits<int>::max()) break;
        // Merge every occurrence of the best pair, left to right.
        const std::string left = word[best_i], right = word[best_i + 1];
        std::vector<std::string> merged;
        merged.reserve(word.size());
        for (std::size_t i = 0; i < word.size();) {
            if (i + 1 < word.size() && word[i] == left && word[i + 1] == right) {
                merged.push_back(left + right);
                i += 2;
            } else {
                merged.push_back(std::move(word[i]));
                ++i;
            }
        }
        word = std::move(merged);
    }
    for (const auto& symbol : word) {
        auto it = token_to_id_.find(symbol);
        if (it == token_to_id_.end()) throw std::runtime_error("BPE produced out-of-vocabulary symbol");
        out.push_back(it->second);
    }
}

Tokens BpeTokenizer::encode(std::string_view text) const {
    Tokens out;
    for (auto piece : pre_tokenize(text)) bpe(piece, out);
    return out;
}

std::string BpeTokenizer::token_text(TokenId id) const {
    if (id < 0 || id >= n_vocab()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
    const std::string& sym = id_to_token_[id];
    std::string out;
    for (std::size_t i = 0; i < sym.size();) {
        const auto [cp, len] = next_code_point(sym, i);
        auto it = symbol_to_byte_.find(cp);
        if (it == symbol_to_byte_.end()) {
            out.append(sym, i, len); // special tokens such as <|endoftext|> are plain ASCII
        } else {
            out.push_back(static_cast<char>(it->second));
        }
        i += len;
    }
    return out;
}

std::string BpeTokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) out += token_text(id);
    return out;
}

TokenId BpeTokenizer::single_token_id(std::string_view text) const {
    const Tokens ids = encode(text);
    if (ids.size() != 1)
        throw std::invalid_argument("'" + std::string(text) + "' is not a single token (encodes to " +
                                    std::to_string(ids.size()) + " tokens)");
    return ids.front();
}

} // namespace syllo
