#pragma once

#include "syllo/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace syllo {

class BpeTokenizer;

enum class SyllogismKind { Simple, Opposite, Complex, ComplexOpposite };

std::string_view short_name(SyllogismKind kind); // "ss", "os", "cs", "cos"
SyllogismKind parse_kind(std::string_view text);
int template_count(SyllogismKind kind);
// Template variant used for the headline averages (1-based).
int default_template(SyllogismKind kind);
// Template text with {A} {B} {C} letter slots and {T1} {T2} truth-value slots.
std::string_view template_text(SyllogismKind kind, int template_index);
// True when the gold answer is the negation of the first stated truth value.
bool negates(SyllogismKind kind);

// Two contrasting answer words, each a single token with a leading space.
struct BinaryPair {
    std::string positive_word = " true";
    std::string negative_word = " false";
    TokenId positive_id = -1;
    TokenId negative_id = -1;

    // Throws std::invalid_argument ("pair unusable: ...") when a word is multi-token or the
    // ids coincide. Words without a leading space get one.
    static BinaryPair resolve(const BpeTokenizer& tokenizer, std::string positive, std::string negative);
    // "true/false"
    static BinaryPair parse(const BpeTokenizer& tokenizer, std::string_view spec);

    std::string label() const;
    const std::string& word(bool positive) const { return positive ? positive_word : negative_word; }
    TokenId id(bool positive) const { return positive ? positive_id : negative_id; }
};

struct PairSpec {
    std::string column; // "Original", "Good/Bad", ...
    std::string positive, negative;
};
// true/false plus the four contrasts used in the transfer tables, in table column order.
const std::vector<PairSpec>& builtin_pairs();

enum class Corruption { FlipTruthValues, ResampleLetters };
std::string_view to_string(Corruption c);
Corruption parse_corruption(std::string_view text);

struct SyllogismInstance {
    Tokens clean_tokens;
    Tokens corrupted_tokens;
    TokenId correct_id = -1;
    TokenId incorrect_id = -1;
    std::string letters;              // one char per letter slot, A B C order
    std::vector<bool> truth;          // per truth slot T1, T2: true = positive word
    bool gold_positive = true;
    std::string clean_text;
    std::string corrupted_text;
};

struct DatasetOptions {
    int template_index = 0; // 0 = default_template(kind)
    Corruption corruption = Corruption::FlipTruthValues;
    bool prepend_eot = false;
};

struct SyllogismDataset {
    SyllogismKind kind = SyllogismKind::Simple;
    int template_index = 1;
    BinaryPair pair;
    std::uint64_t seed = 0;
    DatasetOptions options;
    std::vector<SyllogismInstance> instances;

    int size() const { return static_cast<int>(instances.size()); }
    int seq_len() const { return instances.empty() ? 0 : static_cast<int>(instances.front().clean_tokens.size()); }
};

// Fills templates for one (kind, template, pair). Holds a reference to the tokenizer.
class SyllogismGenerator {
public:
    SyllogismGenerator(const BpeTokenizer& tokenizer, SyllogismKind kind, BinaryPair pair, DatasetOptions options = {});

    // n >= 1. Letters are distinct within an instance, drawn with replacement across
    // instances; first truth values are exactly balanced then shuffled.
    SyllogismDataset generate(int n, std::uint64_t seed) const;

    // Build one instance from explicit letters ("ES") and first truth value.
    SyllogismInstance make(std::string letters, bool first_truth_positive) const;

    std::string render(const std::string& letters, const std::vector<bool>& truth) const;

    // Token sequence with every truth-value word replaced by its opposite.
    Tokens corrupt(const SyllogismInstance& instance) const;

    // The instance whose clean prompt is `instance` with truth values flipped.
    SyllogismInstance flipped(const SyllogismInstance& instance) const;

    // Letters whose leading-space form is one token.
    const std::string& usable_letters() const { return letters_; }

    SyllogismKind kind() const { return kind_; }
    int template_index() const { return template_; }
    const BinaryPair& pair() const { return pair_; }

private:
    int letter_slots() const;
    std::vector<bool> truth_slots(bool first) const;
    bool gold(const std::vector<bool>& truth) const;
    Tokens tokenize(const std::string& text) const;
    SyllogismInstance build(std::string letters, std::vector<bool> truth, const std::string& corrupt_letters) const;

    const BpeTokenizer& tok_;
    SyllogismKind kind_;
    int template_;
    BinaryPair pair_;
    DatasetOptions options_;
    std::string letters_;
};

SyllogismDataset generate(const BpeTokenizer& tokenizer, SyllogismKind kind, const BinaryPair& pair, int n,
                          std::uint64_t seed, DatasetOptions options = {});

// JSON-lines, one instance per line:
// {clean, corrupted, correct, incorrect, letters, seed, kind, pair, template, truth, clean_text, corrupted_text}
void write_jsonl(const SyllogismDataset& dataset, const std::filesystem::path& path);
SyllogismDataset read_jsonl(const BpeTokenizer& tokenizer, const std::filesystem::path& path);

} // namespace syllo
