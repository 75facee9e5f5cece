#pragma once

#include "syllo/component.hpp"
#include "syllo/config.hpp"
#include "syllo/dataset.hpp"
#include "syllo/metrics.hpp"
#include "syllo/model.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace syllo {

class MeanCache;

// A set of heads and MLPs kept live; everything else is mean-ablated. The embeddings and
// LayerNorms are never ablated.
struct CircuitSpec {
    std::string name;
    std::set<ComponentId> included;
    std::string notes;

    bool contains(const ComponentId& c) const { return included.count(c) != 0; }

    // Throws std::out_of_range for a component missing from `config`, std::invalid_argument
    // for an embedding entry.
    void check(const ModelConfig& config) const;

    // {"name": ..., "heads": ["7.2", ...], "mlps": [8, 9, 10], "notes": ...}
    static CircuitSpec from_json_text(const std::string& text);
    static CircuitSpec load(const std::filesystem::path& path);
    std::string to_json_text() const;
    void save(const std::filesystem::path& path) const;

    static CircuitSpec full_model(const ModelConfig& config);
    static CircuitSpec empty(std::string name = "empty");

    // Truth Heads of the simple syllogism.
    static CircuitSpec c_ss();
    // Negative Truth Heads plus MLPs 8-10; `with_11_10` adds head 11.10.
    static CircuitSpec c_os(bool with_11_10 = false);
    // "c_ss", "c_os", "c_os_11_10", "full" (needs config), or a JSON file path.
    static CircuitSpec resolve(const std::string& name_or_path, const ModelConfig& config);
};

// Every head_result and mlp_out outside the circuit replaced by its mean at all positions.
HooksF ablation_hooks(const CircuitSpec& circuit, const MeanCache& mean, const ModelConfig& config);

// ALD of the circuit on `dataset`, with means taken from the same dataset's clean runs when
// `mean` is null.
EvalSummary eval_circuit(const WeightsF& weights, const CircuitSpec& circuit, const SyllogismDataset& dataset,
                         const MeanCache* mean = nullptr, int jobs = 1);

// ALD of the unmodified model.
EvalSummary eval_model(const WeightsF& weights, const SyllogismDataset& dataset, int jobs = 1);

struct TransferColumn {
    std::string column;                 // "Original", "Good/Bad", ...
    std::optional<double> model_ald;    // empty when the pair is unusable
    std::optional<double> circuit_ald;
    std::string error;                  // reason the pair was skipped
};

struct TransferTable {
    std::string circuit;
    SyllogismKind kind = SyllogismKind::Simple;
    std::vector<TransferColumn> columns;
};

struct TransferOptions {
    int n = 500;
    std::uint64_t seed = 0;
    DatasetOptions dataset;
    int jobs = 1;
};

// Model and circuit ALD for each pair. Unusable pairs produce an entry with an error instead
// of aborting the table.
TransferTable transfer_matrix(const WeightsF& weights, const BpeTokenizer& tokenizer, const CircuitSpec& circuit,
                              SyllogismKind kind, const std::vector<PairSpec>& pairs,
                              const TransferOptions& options = {});

} // namespace syllo
