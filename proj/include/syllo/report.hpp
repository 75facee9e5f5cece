#pragma once

#include "syllo/analysis.hpp"
#include "syllo/circuit.hpp"
#include "syllo/metrics.hpp"
#include "syllo/patching.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace syllo {

// Every CSV starts with a "# schema: <name>/v<N>" line; readers skip '#' lines.
namespace schema {
inline constexpr const char* kEffects = "effects/v1";
inline constexpr const char* kHeadGrid = "head_grid/v1";
inline constexpr const char* kInstances = "instances/v1";
inline constexpr const char* kTransfer = "transfer/v1";
inline constexpr const char* kQkMatrix = "qk_matrix/v1";
inline constexpr const char* kQkPairs = "qk_pairs/v1";
inline constexpr const char* kSlate = "slate/v1";
inline constexpr const char* kScatter = "scatter/v1";
inline constexpr const char* kDiagnostics = "diagnostics/v1";
} // namespace schema

// RFC 4180 quoting when the field holds a comma, quote or newline.
std::string csv_field(const std::string& text);
// Shortest round-trip representation.
std::string format_number(double value);

// component,kind,mode,source,delta,ald_patched
std::string effects_csv(const EffectMatrix& m);
// layer,h0..h{n-1}; cells with no head entry are empty.
std::string head_grid_csv(const EffectMatrix& m, const ModelConfig& config);
// Diverging blue/white/red grid centered at 0 with min/max printed in the legend. Heads
// fill an n_layers x n_heads grid; MLP entries, if any, fill an extra column.
std::string heatmap_svg(const EffectMatrix& m, const ModelConfig& config, const std::string& title);

// instance,gold,correct,incorrect,ld
std::string instances_csv(const SyllogismDataset& dataset, const EvalSummary& summary);
nlohmann::json eval_json(const EvalSummary& summary);

// row,<pair columns...> with rows "model", the circuit name, and "faithfulness".
std::string transfer_csv(const TransferTable& table);
nlohmann::json transfer_json(const TransferTable& table);

// Token-labeled matrix of normalized scores.
std::string qk_matrix_csv(const QKScoreMatrix& m);
std::string qk_pairs_csv(const std::vector<QkPair>& pairs);
nlohmann::json qk_pairs_json(const QKScoreMatrix& m, const std::vector<QkPair>& pairs);

// list,rank,token,text,logit
std::string slate_csv(const TokenLogitSlate& slate, const BpeTokenizer& tokenizer);
nlohmann::json slate_json(const TokenLogitSlate& slate, const BpeTokenizer& tokenizer);

// instance,attn_prob,contribution
std::string scatter_csv(const ScatterResult& scatter);
nlohmann::json classify_json(const std::vector<HeadClassification>& heads, const ClassifyOptions& options);
// head,prev_token,duplicate,induction
std::string diagnostics_csv(const std::map<ComponentId, AttentionScores>& scores);

} // namespace syllo
