#include "syllo/circuit.hpp"

#include "syllo/patching.hpp"
#include "syllo/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace syllo {

using nlohmann::json;

void CircuitSpec::check(const ModelConfig& config) const {
    for (const auto& c : included) {
        if (c.kind == ComponentId::Kind::Embed)
            throw std::invalid_argument("circuit '" + name + "': the embedding is always included");
        c.check(config);
    }
}

CircuitSpec CircuitSpec::from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("circuit file: ") + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("circuit file: expected a JSON object");
    CircuitSpec spec;
    spec.name = j.value("name", std::string("circuit"));
    spec.notes = j.value("notes", std::string());
    try {
        for (const auto& h : j.value("heads", json::array())) {
            auto c = ComponentId::parse(h.get<std::string>());
            if (!c.is_head()) throw std::invalid_argument("circuit file: '" + h.get<std::string>() + "' is not a head");
            spec.included.insert(c);
        }
        for (const auto& m : j.value("mlps", json::array())) spec.included.insert(ComponentId::mlp(m.get<int>()));
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("circuit file: ") + e.what());
    }
    return spec;
}

CircuitSpec CircuitSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open circuit file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_text(ss.str());
}

std::string CircuitSpec::to_json_text() const {
    json heads = json::array(), mlps = json::array();
    for (const auto& c : included) {
        if (c.is_head()) heads.push_back(c.label());
        if (c.is_mlp()) mlps.push_back(c.layer);
    }
    json j{{"name", name}, {"heads", heads}, {"mlps", mlps}};
    if (!notes.empty()) j["notes"] = notes;
    return j.dump(2);
}

void CircuitSpec::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write circuit file " + path.string());
    out << to_json_text() << '\n';
}

CircuitSpec CircuitSpec::full_model(const ModelConfig& config) {
    CircuitSpec spec{"full", {}, "every head and MLP"};
    for (const auto& c : all_heads(config)) spec.included.insert(c);
    for (const auto& c : all_mlps(config)) spec.included.insert(c);
    return spec;
}

CircuitSpec CircuitSpec::empty(std::string name) { return {std::move(name), {}, {}}; }

CircuitSpec CircuitSpec::c_ss() {
    CircuitSpec spec{"c_ss", {}, "truth heads"};
    for (auto [l, h] : {std::pair{7, 2}, {9, 1}, {9, 9}, {10, 1}, {10, 4}})
        spec.included.insert(ComponentId::attn_head(l, h));
    return spec;
}

CircuitSpec CircuitSpec::c_os(bool with_11_10) {
    CircuitSpec spec{with_11_10 ? "c_os_11_10" : "c_os", {}, "negative truth heads and MLPs 8-10"};
    for (auto [l, h] : {std::pair{7, 3}, {8, 8}, {8, 10}, {9, 7}, {10, 7}})
        spec.included.insert(ComponentId::attn_head(l, h));
    if (with_11_10) spec.included.insert(ComponentId::attn_head(11, 10));
    for (int l : {8, 9, 10}) spec.included.insert(ComponentId::mlp(l));
    return spec;
}

CircuitSpec CircuitSpec::resolve(const std::string& name_or_path, const ModelConfig& config) {
    if (name_or_path == "c_ss") return c_ss();
    if (name_or_path == "c_os") return c_os(false);
    if (name_or_path == "c_os_11_10") return c_os(true);
    if (name_or_path == "full") return full_model(config);
    if (name_or_path == "empty") return empty();
    return load(name_or_path);
}

HooksF ablation_hooks(const CircuitSpec& circuit, const MeanCache& mean, const ModelConfig& config) {
    circuit.check(config);
    HooksF hooks;
    for (const auto& c : all_heads(config))
        if (!circuit.contains(c)) {
            const HookSite site{c.layer, Site::HeadResult, c.head};
            hooks.replace(site, mean.at(site));
        }
    for (const auto& c : all_mlps(config))
        if (!circuit.contains(c)) {
            const HookSite site{c.layer, Site::MlpOut};
            hooks.replace(site, mean.at(site));
        }
    return hooks;
}

namespace {

EvalSummary run_with_hooks(const WeightsF& weights, const HooksF& hooks, const SyllogismDataset& dataset, int jobs) {
    ForwardOptions opts;
    opts.final_position_logits_only = true;
    opts.record_cache = false;
    const InstanceRunner runner = [&](const SyllogismInstance& inst) {
        return forward_hooked(weights, std::span<const TokenId>(inst.clean_tokens), hooks, opts).final_logits();
    };
    return average_logit_diff(runner, dataset, jobs);
}

} // namespace

EvalSummary eval_model(const WeightsF& weights, const SyllogismDataset& dataset, int jobs) {
    return run_with_hooks(weights, HooksF{}, dataset, jobs);
}

EvalSummary eval_circuit(const WeightsF& weights, const CircuitSpec& circuit, const SyllogismDataset& dataset,
                         const MeanCache* mean, int jobs) {
    circuit.check(weights.config);
    std::optional<MeanCache> own;
    if (!mean) {
        own = MeanCache::compute(weights, dataset, jobs);
        mean = &*own;
    }
    if (mean->n_positions() != dataset.seq_len())
        throw std::invalid_argument("eval_circuit: mean cache length does not match the dataset");
    return run_with_hooks(weights, ablation_hooks(circuit, *mean, weights.config), dataset, jobs);
}

TransferTable transfer_matrix(const WeightsF& weights, const BpeTokenizer& tokenizer, const CircuitSpec& circuit,
                              SyllogismKind kind, const std::vector<PairSpec>& pairs, const TransferOptions& options) {
    circuit.check(weights.config);
    TransferTable table{circuit.name, kind, {}};
    for (const auto& spec : pairs) {
        TransferColumn col{spec.column, std::nullopt, std::nullopt, {}};
        BinaryPair pair;
        try {
            pair = BinaryPair::resolve(tokenizer, spec.positive, spec.negative);
        } catch (const std::invalid_argument& e) {
            col.error = e.what();
            table.columns.push_back(std::move(col));
            continue;
        }
        const auto dataset = generate(tokenizer, kind, pair, options.n, options.seed, options.dataset);
        const auto mean = MeanCache::compute(weights, dataset, options.jobs);
        col.model_ald = eval_model(weights, dataset, options.jobs).ald;
        col.circuit_ald = eval_circuit(weights, circuit, dataset, &mean, options.jobs).ald;
        table.columns.push_back(std::move(col));
    }
    return table;
}

} // namespace syllo
