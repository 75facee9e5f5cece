#include "syllo/dataset.hpp"

#include "syllo/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <fstream>
#include <random>
#include <stdexcept>

namespace syllo {

namespace {

struct TemplateDef {
    SyllogismKind kind;
    int index;
    std::string_view text;
};

constexpr std::array<TemplateDef, 9> kTemplates{{
    {SyllogismKind::Simple, 1,
     "Statement {A} is {T1}. Statement {B} has the same truth value as {A}. Statement {B} is"},
    {SyllogismKind::Simple, 2, "Statement {A} is {T1}. Statement {B} matches statement {A}. Statement {B} is"},
    {SyllogismKind::Simple, 3,
     "Statement {A} is {T1}. Statement {B} must match {A}. Statement {C} doesn't matter. Statement {B} is"},
    {SyllogismKind::Opposite, 1,
     "Statement {B} has the opposite truth value of {A}. Statement {A} is {T1}. Statement {B} is"},
    {SyllogismKind::Opposite, 2,
     "Statement {A} and statement {B} are opposites. Statement {A} is {T1}. Statement {B} is"},
    {SyllogismKind::Complex, 1,
     "Statement {A} is {T1}. Statement {B} has same truth value as {A}. Statement {C} is {T2}. Statement {B} is"},
    {SyllogismKind::ComplexOpposite, 1,
     "Statement {A} is {T1}. Statement {B} has the opposite truth value of {A}. Statement {C} is {T2}. "
     "Statement {B} is"},
    {SyllogismKind::ComplexOpposite, 2,
     "Statement {A} and {B} are opposites. Statement {C} has the same truth value as {A}. Statement {C} is "
     "{T1}. Statement {B} is"},
    {SyllogismKind::ComplexOpposite, 3,
     "Statement {A} is {T1}. Statement {A} and {B} are opposites. Statement {C} is {T2}. Statement {B} is"},
}};

std::string with_leading_space(std::string w) {
    if (w.empty() || w.front() != ' ') w.insert(w.begin(), ' ');
    return w;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

} // namespace

std::string_view short_name(SyllogismKind kind) {
    switch (kind) {
    case SyllogismKind::Simple: return "ss";
    case SyllogismKind::Opposite: return "os";
    case SyllogismKind::Complex: return "cs";
    case SyllogismKind::ComplexOpposite: return "cos";
    }
    return "?";
}

SyllogismKind parse_kind(std::string_view text) {
    if (text == "ss" || text == "simple") return SyllogismKind::Simple;
    if (text == "os" || text == "opposite") return SyllogismKind::Opposite;
    if (text == "cs" || text == "complex") return SyllogismKind::Complex;
    if (text == "cos" || text == "complex-opposite") return SyllogismKind::ComplexOpposite;
    throw std::invalid_argument("unknown syllogism kind '" + std::string(text) + "'");
}

int template_count(SyllogismKind kind) {
    return static_cast<int>(std::count_if(kTemplates.begin(), kTemplates.end(),
                                          [kind](const TemplateDef& t) { return t.kind == kind; }));
}

int default_template(SyllogismKind kind) {
    return kind == SyllogismKind::Simple || kind == SyllogismKind::Opposite ? 2 : 1;
}

std::string_view template_text(SyllogismKind kind, int index) {
    for (const auto& t : kTemplates)
        if (t.kind == kind && t.index == index) return t.text;
    throw std::invalid_argument("template " + std::to_string(index) + " does not exist for kind " +
                                std::string(short_name(kind)) + " (valid: 1.." +
                                std::to_string(template_count(kind)) + ")");
}

bool negates(SyllogismKind kind) {
    return kind == SyllogismKind::Opposite || kind == SyllogismKind::ComplexOpposite;
}

BinaryPair BinaryPair::resolve(const BpeTokenizer& tokenizer, std::string positive, std::string negative) {
    BinaryPair p;
    p.positive_word = with_leading_space(std::move(positive));
    p.negative_word = with_leading_space(std::move(negative));
    try {
        p.positive_id = tokenizer.single_token_id(p.positive_word);
        p.negative_id = tokenizer.single_token_id(p.negative_word);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("pair unusable: " + std::string(e.what()));
    }
    if (p.positive_id == p.negative_id) throw std::invalid_argument("pair unusable: both words map to one token");
    return p;
}

BinaryPair BinaryPair::parse(const BpeTokenizer& tokenizer, std::string_view spec) {
    const auto slash = spec.find('/');
    if (slash == std::string_view::npos)
        throw std::invalid_argument("pair must look like 'true/false', got '" + std::string(spec) + "'");
    return resolve(tokenizer, std::string(spec.substr(0, slash)), std::string(spec.substr(slash + 1)));
}

std::string BinaryPair::label() const { return positive_word.substr(1) + "/" + negative_word.substr(1); }

const std::vector<PairSpec>& builtin_pairs() {
    static const std::vector<PairSpec> pairs{
        {"Original", "true", "false"},
        {"Good/Bad", "good", "bad"},
        {"Pos/Neg", "positive", "negative"},
        {"Correct/Incorrect", "correct", "incorrect"},
        {"Right/Wrong", "right", "wrong"},
    };
    return pairs;
}

std::string_view to_string(Corruption c) {
    return c == Corruption::FlipTruthValues ? "flip-truth-values" : "resample-letters";
}

Corruption parse_corruption(std::string_view text) {
    if (text == "flip-truth-values" || text == "flip") return Corruption::FlipTruthValues;
    if (text == "resample-letters" || text == "resample") return Corruption::ResampleLetters;
    throw std::invalid_argument("unknown corruption '" + std::string(text) + "'");
}

SyllogismGenerator::SyllogismGenerator(const BpeTokenizer& tokenizer, SyllogismKind kind, BinaryPair pair,
                                       DatasetOptions options)
    : tok_(tokenizer), kind_(kind), template_(options.template_index ? options.template_index : default_template(kind)),
      pair_(std::move(pair)), options_(options) {
    template_text(kind_, template_); // validates the index
    options_.template_index = template_;
    if (pair_.positive_id < 0 || pair_.negative_id < 0) pair_ = BinaryPair::resolve(tok_, pair_.positive_word, pair_.negative_word);
    for (char c = 'A'; c <= 'Z'; ++c)
        if (tok_.encode(std::string(" ") + c).size() == 1) letters_.push_back(c);
    if (static_cast<int>(letters_.size()) < letter_slots() + 1)
        throw std::runtime_error("tokenizer has too few single-token capital letters");
    if (options_.prepend_eot && tok_.eot_id() < 0)
        throw std::invalid_argument("prepend_eot requested but the vocabulary has no <|endoftext|>");
}

int SyllogismGenerator::letter_slots() const {
    const auto text = template_text(kind_, template_);
    return text.find("{C}") != std::string_view::npos ? 3 : 2;
}

std::vector<bool> SyllogismGenerator::truth_slots(bool first) const {
    const auto text = template_text(kind_, template_);
    std::vector<bool> truth{first};
    if (text.find("{T2}") != std::string_view::npos) {
        // Distractor: CS states the negation of T1 (which is the wrong answer); COS repeats
        // T1, which is likewise the wrong answer once negated.
        truth.push_back(kind_ == SyllogismKind::Complex ? !first : first);
    }
    return truth;
}

bool SyllogismGenerator::gold(const std::vector<bool>& truth) const { return negates(kind_) ? !truth[0] : truth[0]; }

std::string SyllogismGenerator::render(const std::string& letters, const std::vector<bool>& truth) const {
    std::string text(template_text(kind_, template_));
    const char* slots[] = {"{A}", "{B}", "{C}"};
    for (std::size_t i = 0; i < letters.size() && i < 3; ++i) replace_all(text, slots[i], std::string(1, letters[i]));
    replace_all(text, "{T1}", pair_.word(truth.at(0)).substr(1));
    if (truth.size() > 1) replace_all(text, "{T2}", pair_.word(truth[1]).substr(1));
    return text;
}

Tokens SyllogismGenerator::tokenize(const std::string& text) const {
    Tokens ids;
    if (options_.prepend_eot) ids.push_back(tok_.eot_id());
    const Tokens body = tok_.encode(text);
    ids.insert(ids.end(), body.begin(), body.end());
    return ids;
}

SyllogismInstance SyllogismGenerator::build(std::string letters, std::vector<bool> truth,
                                            const std::string& corrupt_letters) const {
    if (static_cast<int>(letters.size()) != letter_slots())
        throw std::invalid_argument("template needs " + std::to_string(letter_slots()) + " letters");
    for (std::size_t i = 0; i < letters.size(); ++i) {
        if (letters_.find(letters[i]) == std::string::npos)
            throw std::invalid_argument(std::string("letter '") + letters[i] + "' is not a single token");
        for (std::size_t j = i + 1; j < letters.size(); ++j)
            if (letters[i] == letters[j]) throw std::invalid_argument("letters must be pairwise distinct");
    }
    SyllogismInstance inst;
    inst.letters = std::move(letters);
    inst.truth = std::move(truth);
    inst.gold_positive = gold(inst.truth);
    inst.correct_id = pair_.id(inst.gold_positive);
    inst.incorrect_id = pair_.id(!inst.gold_positive);
    inst.clean_text = render(inst.letters, inst.truth);
    if (options_.corruption == Corruption::FlipTruthValues) {
        std::vector<bool> flipped = inst.truth;
        flipped.flip();
        inst.corrupted_text = render(inst.letters, flipped);
    } else {
        inst.corrupted_text = render(corrupt_letters, inst.truth);
    }
    inst.clean_tokens = tokenize(inst.clean_text);
    inst.corrupted_tokens = tokenize(inst.corrupted_text);
    if (inst.clean_tokens.size() != inst.corrupted_tokens.size())
        throw std::runtime_error("clean and corrupted prompts tokenize to different lengths: '" + inst.clean_text +
                                 "' vs '" + inst.corrupted_text + "'");
    return inst;
}

SyllogismInstance SyllogismGenerator::make(std::string letters, bool first_truth_positive) const {
    // Resampled corruption letters are derived deterministically from the clean ones.
    std::string other;
    for (char c : letters) {
        auto pos = letters_.find(c);
        char next = c;
        for (std::size_t k = 1; k < letters_.size(); ++k) {
            next = letters_[(pos + k) % letters_.size()];
            if (letters.find(next) == std::string::npos && other.find(next) == std::string::npos) break;
        }
        other.push_back(next);
    }
    return build(std::move(letters), truth_slots(first_truth_positive), other);
}

SyllogismDataset SyllogismGenerator::generate(int n, std::uint64_t seed) const {
    if (n < 1) throw std::invalid_argument("dataset size must be at least 1");
    std::mt19937_64 rng(seed);

    std::vector<bool> firsts(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) firsts[i] = i < (n + 1) / 2;
    std::shuffle(firsts.begin(), firsts.end(), rng);

    SyllogismDataset ds;
    ds.kind = kind_;
    ds.template_index = template_;
    ds.pair = pair_;
    ds.seed = seed;
    ds.options = options_;
    ds.instances.reserve(n);
    const int k = letter_slots();
    std::string pool = letters_;
    for (int i = 0; i < n; ++i) {
        std::shuffle(pool.begin(), pool.end(), rng);
        std::string letters = pool.substr(0, k);
        std::string other = pool.substr(k, k);
        ds.instances.push_back(build(letters, truth_slots(firsts[i]), other));
    }
    for (const auto& inst : ds.instances)
        if (inst.clean_tokens.size() != ds.instances.front().clean_tokens.size())
            throw std::runtime_error("dataset prompts do not share one token length");
    return ds;
}

Tokens SyllogismGenerator::corrupt(const SyllogismInstance& instance) const {
    std::vector<bool> flipped = instance.truth;
    flipped.flip();
    return tokenize(render(instance.letters, flipped));
}

SyllogismInstance SyllogismGenerator::flipped(const SyllogismInstance& instance) const {
    std::vector<bool> truth = instance.truth;
    truth.flip();
    return build(instance.letters, std::move(truth), instance.letters);
}

SyllogismDataset generate(const BpeTokenizer& tokenizer, SyllogismKind kind, const BinaryPair& pair, int n,
                          std::uint64_t seed, DatasetOptions options) {
    return SyllogismGenerator(tokenizer, kind, pair, options).generate(n, seed);
}

void write_jsonl(const SyllogismDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& inst : ds.instances) {
        nlohmann::ordered_json j;
        j["clean"] = inst.clean_tokens;
        j["corrupted"] = inst.corrupted_tokens;
        j["correct"] = inst.correct_id;
        j["incorrect"] = inst.incorrect_id;
        j["letters"] = inst.letters;
        j["seed"] = ds.seed;
        j["kind"] = short_name(ds.kind);
        j["pair"] = ds.pair.label();
        j["template"] = ds.template_index;
        j["corruption"] = to_string(ds.options.corruption);
        j["prepend_eot"] = ds.options.prepend_eot;
        j["truth"] = inst.truth;
        j["clean_text"] = inst.clean_text;
        j["corrupted_text"] = inst.corrupted_text;
        out << j.dump() << "\n";
    }
}

SyllogismDataset read_jsonl(const BpeTokenizer& tokenizer, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    SyllogismDataset ds;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        if (first) {
            ds.kind = parse_kind(j.at("kind").get<std::string>());
            ds.template_index = j.value("template", default_template(ds.kind));
            ds.pair = BinaryPair::parse(tokenizer, j.at("pair").get<std::string>());
            ds.seed = j.at("seed").get<std::uint64_t>();
            ds.options.template_index = ds.template_index;
            ds.options.corruption = parse_corruption(j.value("corruption", std::string("flip-truth-values")));
            ds.options.prepend_eot = j.value("prepend_eot", false);
            first = false;
        }
        SyllogismInstance inst;
        inst.clean_tokens = j.at("clean").get<Tokens>();
        inst.corrupted_tokens = j.at("corrupted").get<Tokens>();
        inst.correct_id = j.at("correct").get<TokenId>();
        inst.incorrect_id = j.at("incorrect").get<TokenId>();
        inst.letters = j.at("letters").get<std::string>();
        inst.truth = j.value("truth", std::vector<bool>{});
        inst.gold_positive = inst.correct_id == ds.pair.positive_id;
        inst.clean_text = j.value("clean_text", tokenizer.decode(inst.clean_tokens));
        inst.corrupted_text = j.value("corrupted_text", tokenizer.decode(inst.corrupted_tokens));
        ds.instances.push_back(std::move(inst));
    }
    if (ds.instances.empty()) throw std::runtime_error("dataset file " + path.string() + " is empty");
    return ds;
}

} // namespace syllo
