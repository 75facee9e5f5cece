#pragma once

#include "syllo/component.hpp"
#include "syllo/dataset.hpp"
#include "syllo/model.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace syllo {

class BpeTokenizer;

// Token string for reports: raw bytes with one leading space removed.
std::string display_token(const BpeTokenizer& tokenizer, TokenId id);

// ---------------------------------------------------------------------------------------
// QK scores in weight space

struct QkOptions {
    // Apply the head layer's LN1 to each embedding row before W_Q / W_K.
    bool apply_ln = false;
};

// scores(i, j) = (W_E[t_i] W_Q^h) . (W_E[t_j] W_K^h) / sqrt(d_head), no positions, no mask.
struct QKScoreMatrix {
    ComponentId head;
    Tokens tokens;
    std::vector<std::string> labels; // empty when built without a tokenizer
    MatF raw;
    MatF normalized; // raw / max|raw|; all zeros when raw is
};

QKScoreMatrix qk_prompt_matrix(const WeightsF& weights, const ComponentId& head, const Tokens& tokens,
                               const BpeTokenizer* tokenizer = nullptr, const QkOptions& options = {});

struct QkPair {
    int query_pos = 0;
    int key_pos = 0;
    TokenId query_token = -1;
    TokenId key_token = -1;
    std::string query_label;
    std::string key_label;
    double score = 0.0; // normalized
};

// Distinct (query token, key token) pairs sorted by normalized score, highest first; ties
// keep the earliest positions. Throws std::invalid_argument when k exceeds the pair count.
std::vector<QkPair> top_qk_pairs(const QKScoreMatrix& matrix, std::size_t k);
std::size_t distinct_pair_count(const QKScoreMatrix& matrix);

// ---------------------------------------------------------------------------------------
// OV slates

struct OvOptions {
    // Treat the token as x + MLP0(LN2_0(x)) rather than the bare embedding.
    bool mlp0_extended = true;
    // Apply the head layer's LN1 before W_V.
    bool apply_ln = true;
    // Apply the final LayerNorm before W_U.
    bool final_ln = false;
};

struct TokenLogit {
    TokenId token = -1;
    double logit = 0.0;
};

struct TokenLogitSlate {
    TokenId source = -1;
    std::string stage; // "after_ov" or "after_mlp_<layer>"
    std::vector<TokenLogit> top;    // descending
    std::vector<TokenLogit> bottom; // ascending
};

// Extended embedding of `token` pushed through the head's W_V W_O (no biases).
VecF ov_vector(const WeightsF& weights, const ComponentId& head, TokenId token, const OvOptions& options = {});

// Top and bottom k of a d_model vector projected on W_U. Throws when 2k exceeds the vocab.
TokenLogitSlate slate_from_vector(const WeightsF& weights, const VecF& vector, std::size_t k, bool final_ln = false);

TokenLogitSlate ov_extended_logits(const WeightsF& weights, const ComponentId& head, TokenId source, std::size_t k,
                                   const OvOptions& options = {});

// After-OV vector plus the given MLP's response to it (through its LN2), then unembedded.
// Throws std::invalid_argument when mlp_layer is below the head's layer.
TokenLogitSlate trace_ov_through_mlp(const WeightsF& weights, const ComponentId& head, int mlp_layer, TokenId source,
                                     std::size_t k, const OvOptions& options = {});

// ---------------------------------------------------------------------------------------
// Logit lens

// A component's output or a residual snapshot (resid_pre / resid_mid / resid_post).
using LensTarget = std::variant<ComponentId, HookSite>;

// Final LayerNorm then W_U applied to the target's row at `position` (-1 = last); top k.
std::vector<TokenLogit> logit_lens(const WeightsF& weights, const CacheF& cache, int position, const LensTarget& target,
                                   std::size_t k);

// ---------------------------------------------------------------------------------------
// Contribution scatter and head classification

enum class ScatterTarget { Correct, Incorrect };

struct Correlation {
    double r = 0.0;
    bool degenerate = false; // zero variance on either axis; r reported as 0
};

Correlation pearson(const std::vector<double>& x, const std::vector<double>& y);

struct ScatterResult {
    ComponentId head;
    std::vector<double> attention;    // final-position mass on the target token's positions
    std::vector<double> contribution; // head_result[last] . W_U[:, target]
    Correlation correlation;
};

// Every head at once from one forward per instance. Throws std::invalid_argument when the
// target token does not occur in some prompt.
std::vector<ScatterResult> scatter_all_heads(const WeightsF& weights, const SyllogismDataset& dataset,
                                             ScatterTarget target, int jobs = 1);

ScatterResult head_contribution_scatter(const WeightsF& weights, const ComponentId& head,
                                        const SyllogismDataset& dataset, ScatterTarget target, int jobs = 1);

enum class HeadLabel { TruthHead, NegativeTruthHead, CorrectTruthInhibition, CorrectTruthReinforcement, Unclassified };
std::string_view to_string(HeadLabel label);

struct ClassifyOptions {
    double theta_attn = 0.3;
    double theta_r = 0.35;
    std::size_t k = 10;
    OvOptions ov;
};

struct HeadEvidence {
    double attn_ss = 0.0;       // SS: mean final-position attention on the gold truth token
    double attn_os = 0.0;       // OS: mean attention on the stated (flipped-answer) truth token
    double attn_cs = 0.0;       // CS: mean attention on the incorrect truth token
    double contribution_cs = 0.0; // CS: mean logit contribution to the incorrect token
    double r_cs = 0.0;
    bool r_degenerate = false;
    bool ov_in_top = false;     // a truth word lands in its own OV top-k
    bool ov_in_bottom = false;  // a truth word lands in its own OV bottom-k
};

struct HeadClassification {
    ComponentId head;
    HeadLabel label = HeadLabel::Unclassified;
    HeadEvidence evidence;
};

// Decision rules, first match wins:
//   attn_ss > theta_attn and ov_in_top                      -> TruthHead
//   attn_os > theta_attn and ov_in_bottom and !ov_in_top    -> NegativeTruthHead
//   r_cs > theta_r                                          -> CorrectTruthInhibition
//   r_cs < -theta_r                                         -> CorrectTruthReinforcement
//   otherwise                                               -> Unclassified
HeadLabel label_from_evidence(const HeadEvidence& evidence, const ClassifyOptions& options);

// Throws std::invalid_argument when the datasets use different pairs or kinds other than
// SS / OS / CS.
std::vector<HeadClassification> classify_heads(const WeightsF& weights, const SyllogismDataset& ss,
                                               const SyllogismDataset& os, const SyllogismDataset& cs,
                                               const ClassifyOptions& options = {}, int jobs = 1);

// ---------------------------------------------------------------------------------------
// Attention diagnostics

struct AttentionScores {
    double prev_token = 0.0; // mean mass on position i-1
    double duplicate = 0.0;  // mean mass on earlier copies of the current token
    double induction = 0.0;  // mean mass on the token after an earlier copy
};

constexpr int kMinProbeLength = 4;

// Throws std::invalid_argument when the probe is shorter than kMinProbeLength.
AttentionScores attention_diagnostics(const WeightsF& weights, const ComponentId& head, const Tokens& probe);
std::map<ComponentId, AttentionScores> attention_diagnostics_all(const WeightsF& weights, const Tokens& probe);
AttentionScores attention_scores_from_pattern(const MatF& pattern, const Tokens& probe);

// `half` random ids from [lo, hi) followed by the same ids again, optionally after `prefix`.
Tokens repeated_random_probe(int half, TokenId lo, TokenId hi, std::uint64_t seed, std::optional<TokenId> prefix = {});

} // namespace syllo
