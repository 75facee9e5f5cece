#pragma once

#include "syllo/component.hpp"
#include "syllo/dataset.hpp"
#include "syllo/model.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace syllo {

enum class PatchSource {
    CorruptedPrompt, // same instance's corrupted prompt
    DatasetMean,     // position-wise mean over the dataset's clean runs
    Clean,           // the clean activation itself (identity patch)
};

enum class PatchMode { DirectToLogits, QInput, KInput, VInput, MlpWithAttn, MlpWithoutAttn };

std::string_view to_string(PatchSource s);
std::string_view to_string(PatchMode m);
PatchSource parse_source(std::string_view text);

// Position-wise mean of every recorded site over a dataset's clean runs.
class MeanCache {
public:
    // Throws std::invalid_argument on an empty or non-uniform-length dataset. Instances are
    // summed in fixed chunks, so the result does not depend on `jobs`.
    static MeanCache compute(const WeightsF& weights, const SyllogismDataset& dataset, int jobs = 1);
    static MeanCache compute(const WeightsF& weights, const std::vector<Tokens>& prompts, int jobs = 1);

    const MatF& at(const HookSite& site) const;
    bool contains(const HookSite& site) const { return means_.count(site) != 0; }
    int n_instances() const { return n_; }
    int n_positions() const { return positions_; }

private:
    std::map<HookSite, MatF> means_;
    int n_ = 0;
    int positions_ = 0;
};

struct EffectEntry {
    ComponentId component;
    double delta = 0.0;       // (ALD_patched - ALD_clean) / |ALD_clean|
    double ald_patched = 0.0;
};

struct EffectMatrix {
    PatchMode mode = PatchMode::DirectToLogits;
    PatchSource source = PatchSource::DatasetMean;
    double ald_clean = 0.0;
    std::optional<ComponentId> receiver; // q/k/v input sweeps only
    std::vector<EffectEntry> entries;

    const EffectEntry& at(const ComponentId& c) const;
    // Components sorted by delta ascending (most harmful first).
    std::vector<ComponentId> most_negative(std::size_t k) const;
    // Components sorted by |delta| descending.
    std::vector<ComponentId> largest_magnitude(std::size_t k) const;
    // Rank (0-based) of c among entries sorted by `key` ascending.
    std::size_t rank_by_delta(const ComponentId& c) const;
};

double normalized_delta(double ald_patched, double ald_clean);

struct PatchContext {
    const WeightsF& weights;
    const SyllogismDataset& dataset;
    PatchSource source = PatchSource::DatasetMean;
    const MeanCache* mean = nullptr; // required for DatasetMean
    int jobs = 1;
};

// All heads then all MLPs, in layer order.
std::vector<ComponentId> all_heads(const ModelConfig& config);
std::vector<ComponentId> all_mlps(const ModelConfig& config);

// Direct path only: the component's final-position residual contribution is swapped for
// the source's, every other component keeps its clean value, and the final LayerNorm and
// unembedding are recomputed.
EffectMatrix direct_effect_sweep(const PatchContext& ctx, const std::vector<ComponentId>& components);

// Each MLP's output is replaced by the source at every position. with_attention = true
// restores every downstream attention head to its clean output, so the MLP acts through
// the residual stream and later MLPs only; with_attention = false lets downstream heads
// recompute on the patched stream.
EffectMatrix mlp_effect_modes(const PatchContext& ctx, bool with_attention);

enum class HeadInput { Q, K, V };
std::string_view to_string(HeadInput s);

struct PathPatchResult {
    double delta = 0.0;
    double ald_patched = 0.0;
    double ald_clean = 0.0;
};

// Three-run path patch: only the sender's contribution into the receiver head's `input`
// (query, key or value side of its LayerNorm input) is swapped; the receiver's new output
// then flows through the rest of the model. Throws std::invalid_argument unless the sender
// is strictly upstream of the receiver (an earlier layer).
PathPatchResult head_input_path_patch(const PatchContext& ctx, const ComponentId& sender, const ComponentId& receiver,
                                      HeadInput input);

// Every listed sender into one receiver, for each of q/k/v; one EffectMatrix per input.
std::vector<EffectMatrix> head_input_sweep(const PatchContext& ctx, const std::vector<ComponentId>& senders,
                                           const ComponentId& receiver);

// Senders strictly upstream of `receiver`: embed, heads and MLPs of earlier layers.
std::vector<ComponentId> upstream_components(const ModelConfig& config, const ComponentId& receiver);

} // namespace syllo
