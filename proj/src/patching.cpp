#include "syllo/patching.hpp"

#include "syllo/config.hpp"
#include "syllo/metrics.hpp"
#include "syllo/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace syllo {

std::string_view to_string(PatchSource s) {
    switch (s) {
    case PatchSource::CorruptedPrompt: return "corrupted";
    case PatchSource::DatasetMean: return "mean";
    case PatchSource::Clean: return "clean";
    }
    return "?";
}

std::string_view to_string(PatchMode m) {
    switch (m) {
    case PatchMode::DirectToLogits: return "direct";
    case PatchMode::QInput: return "q";
    case PatchMode::KInput: return "k";
    case PatchMode::VInput: return "v";
    case PatchMode::MlpWithAttn: return "mlp_with_attn";
    case PatchMode::MlpWithoutAttn: return "mlp_without_attn";
    }
    return "?";
}

std::string_view to_string(HeadInput s) {
    switch (s) {
    case HeadInput::Q: return "q";
    case HeadInput::K: return "k";
    case HeadInput::V: return "v";
    }
    return "?";
}

PatchSource parse_source(std::string_view text) {
    if (text == "corrupted" || text == "corrupt") return PatchSource::CorruptedPrompt;
    if (text == "mean") return PatchSource::DatasetMean;
    if (text == "clean") return PatchSource::Clean;
    throw std::invalid_argument("unknown patch source '" + std::string(text) + "' (expected corrupted, mean or clean)");
}

double normalized_delta(double ald_patched, double ald_clean) {
    if (ald_clean == 0.0) throw std::domain_error("normalized delta: clean ALD is zero");
    return (ald_patched - ald_clean) / std::abs(ald_clean);
}

// ---------------------------------------------------------------------------------------
// Mean cache

namespace {

constexpr int kMeanChunk = 16;

using SiteSums = std::map<HookSite, Eigen::MatrixXd>;

void accumulate(SiteSums& sums, const CacheF& cache) {
    for (const auto& [site, value] : cache.entries()) {
        if (site.site == Site::Logits) continue;
        Eigen::MatrixXd v = value.cast<double>();
        auto it = sums.find(site);
        if (it == sums.end())
            sums.emplace(site, std::move(v));
        else
            it->second += v;
    }
}

} // namespace

MeanCache MeanCache::compute(const WeightsF& weights, const std::vector<Tokens>& prompts, int jobs) {
    if (prompts.empty()) throw std::invalid_argument("mean cache: empty dataset");
    const std::size_t len = prompts.front().size();
    for (const auto& p : prompts)
        if (p.size() != len) throw std::invalid_argument("mean cache: prompts differ in length");

    const int n = static_cast<int>(prompts.size());
    const int chunks = (n + kMeanChunk - 1) / kMeanChunk;
    std::vector<SiteSums> partial(chunks);
    ForwardOptions opts;
    opts.final_position_logits_only = true;
    parallel_for(chunks, jobs, [&](int c) {
        const int end = std::min(n, (c + 1) * kMeanChunk);
        for (int i = c * kMeanChunk; i < end; ++i) {
            auto run = forward_with_cache(weights, std::span<const TokenId>(prompts[i]), opts);
            accumulate(partial[c], run.cache);
        }
    });

    SiteSums total = std::move(partial.front());
    for (int c = 1; c < chunks; ++c)
        for (auto& [site, sum] : partial[c]) total.at(site) += sum;

    MeanCache out;
    out.n_ = n;
    out.positions_ = static_cast<int>(len);
    for (auto& [site, sum] : total) out.means_.emplace(site, (sum / static_cast<double>(n)).cast<float>());
    return out;
}

MeanCache MeanCache::compute(const WeightsF& weights, const SyllogismDataset& dataset, int jobs) {
    std::vector<Tokens> prompts;
    prompts.reserve(dataset.instances.size());
    for (const auto& inst : dataset.instances) prompts.push_back(inst.clean_tokens);
    return compute(weights, prompts, jobs);
}

const MatF& MeanCache::at(const HookSite& site) const {
    auto it = means_.find(site);
    if (it == means_.end()) throw std::out_of_range("mean cache: missing " + site.name());
    return it->second;
}

// ---------------------------------------------------------------------------------------
// Effect matrices

const EffectEntry& EffectMatrix::at(const ComponentId& c) const {
    for (const auto& e : entries)
        if (e.component == c) return e;
    throw std::out_of_range("effect matrix: no entry for " + c.label());
}

std::vector<ComponentId> EffectMatrix::most_negative(std::size_t k) const {
    std::vector<EffectEntry> sorted = entries;
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.delta < b.delta; });
    std::vector<ComponentId> out;
    for (std::size_t i = 0; i < std::min(k, sorted.size()); ++i) out.push_back(sorted[i].component);
    return out;
}

std::vector<ComponentId> EffectMatrix::largest_magnitude(std::size_t k) const {
    std::vector<EffectEntry> sorted = entries;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return std::abs(a.delta) > std::abs(b.delta); });
    std::vector<ComponentId> out;
    for (std::size_t i = 0; i < std::min(k, sorted.size()); ++i) out.push_back(sorted[i].component);
    return out;
}

std::size_t EffectMatrix::rank_by_delta(const ComponentId& c) const {
    const double d = at(c).delta;
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [d](const auto& e) { return e.delta < d; }));
}

std::vector<ComponentId> all_heads(const ModelConfig& config) {
    std::vector<ComponentId> out;
    for (int l = 0; l < config.n_layers; ++l)
        for (int h = 0; h < config.n_heads; ++h) out.push_back(ComponentId::attn_head(l, h));
    return out;
}

std::vector<ComponentId> all_mlps(const ModelConfig& config) {
    std::vector<ComponentId> out;
    for (int l = 0; l < config.n_layers; ++l) out.push_back(ComponentId::mlp(l));
    return out;
}

std::vector<ComponentId> upstream_components(const ModelConfig& config, const ComponentId& receiver) {
    std::vector<ComponentId> out{ComponentId::embed()};
    for (int l = 0; l < receiver.layer && l < config.n_layers; ++l) {
        for (int h = 0; h < config.n_heads; ++h) out.push_back(ComponentId::attn_head(l, h));
        out.push_back(ComponentId::mlp(l));
    }
    return out;
}

namespace {

HookSite output_site(const ComponentId& c) {
    switch (c.kind) {
    case ComponentId::Kind::Embed: return {0, Site::ResidPre};
    case ComponentId::Kind::AttnHead: return {c.layer, Site::HeadResult, c.head};
    case ComponentId::Kind::Mlp: return {c.layer, Site::MlpOut};
    }
    throw std::logic_error("unreachable");
}

// Everything one instance needs from its clean and source runs.
struct InstanceRuns {
    ForwardResultF clean;
    std::optional<ForwardResultF> corrupted;

    const MatF& source(const HookSite& site, const PatchContext& ctx) const {
        switch (ctx.source) {
        case PatchSource::Clean: return clean.cache.at(site);
        case PatchSource::CorruptedPrompt: return corrupted->cache.at(site);
        case PatchSource::DatasetMean: return ctx.mean->at(site);
        }
        throw std::logic_error("unreachable");
    }
};

void check_context(const PatchContext& ctx) {
    if (ctx.dataset.instances.empty()) throw std::invalid_argument("patching: empty dataset");
    if (ctx.source == PatchSource::DatasetMean) {
        if (!ctx.mean) throw std::invalid_argument("patching: mean source requires a mean cache");
        if (ctx.mean->n_positions() != ctx.dataset.seq_len())
            throw std::invalid_argument("patching: mean cache length does not match the dataset");
    }
}

ForwardOptions cached_options() {
    ForwardOptions o;
    o.final_position_logits_only = true;
    return o;
}

ForwardOptions logits_only() {
    ForwardOptions o;
    o.final_position_logits_only = true;
    o.record_cache = false;
    return o;
}

InstanceRuns run_instance(const PatchContext& ctx, const SyllogismInstance& inst) {
    InstanceRuns runs{forward_with_cache(ctx.weights, std::span<const TokenId>(inst.clean_tokens), cached_options()),
                      std::nullopt};
    if (ctx.source == PatchSource::CorruptedPrompt)
        runs.corrupted =
            forward_with_cache(ctx.weights, std::span<const TokenId>(inst.corrupted_tokens), cached_options());
    return runs;
}

double final_ld(const ForwardResultF& r, const SyllogismInstance& inst) {
    return logit_diff(r.final_logits(), inst.correct_id, inst.incorrect_id).value;
}

// Per-component instance LDs -> EffectMatrix.
EffectMatrix collect(PatchMode mode, const PatchContext& ctx, const std::vector<ComponentId>& components,
                     const std::vector<double>& clean_lds, const std::vector<std::vector<double>>& patched_lds) {
    EffectMatrix out;
    out.mode = mode;
    out.source = ctx.source;
    out.ald_clean = std::accumulate(clean_lds.begin(), clean_lds.end(), 0.0) / static_cast<double>(clean_lds.size());
    for (std::size_t c = 0; c < components.size(); ++c) {
        double sum = 0.0;
        for (const auto& row : patched_lds) sum += row[c];
        const double ald = sum / static_cast<double>(patched_lds.size());
        out.entries.push_back({components[c], normalized_delta(ald, out.ald_clean), ald});
    }
    return out;
}

} // namespace

EffectMatrix direct_effect_sweep(const PatchContext& ctx, const std::vector<ComponentId>& components) {
    check_context(ctx);
    const auto& w = ctx.weights;
    for (const auto& c : components) c.check(w.config);

    const int n = ctx.dataset.size();
    std::vector<double> clean_lds(n);
    std::vector<std::vector<double>> patched(n, std::vector<double>(components.size()));

    parallel_for(n, ctx.jobs, [&](int i) {
        const auto& inst = ctx.dataset.instances[i];
        const InstanceRuns runs = run_instance(ctx, inst);
        const int last = runs.clean.cache.n_positions() - 1;
        const VecF resid = runs.clean.cache.resid_post(w.config.n_layers - 1).row(last);
        const VecF direction = (w.W_U.col(inst.correct_id) - w.W_U.col(inst.incorrect_id)).transpose();

        auto ld_of = [&](const VecF& r) {
            const MatF normed = layer_norm<float>(MatF(r), w.ln_final, w.config.layernorm_epsilon);
            return static_cast<double>(normed.row(0).dot(direction));
        };
        clean_lds[i] = ld_of(resid);
        for (std::size_t c = 0; c < components.size(); ++c) {
            const HookSite site = output_site(components[c]);
            const VecF delta = runs.source(site, ctx).row(last) - runs.clean.cache.at(site).row(last);
            patched[i][c] = ld_of(resid + delta);
        }
    });
    return collect(PatchMode::DirectToLogits, ctx, components, clean_lds, patched);
}

EffectMatrix mlp_effect_modes(const PatchContext& ctx, bool with_attention) {
    check_context(ctx);
    const auto& w = ctx.weights;
    const auto& cfg = w.config;
    const auto mlps = all_mlps(cfg);

    const int n = ctx.dataset.size();
    std::vector<double> clean_lds(n);
    std::vector<std::vector<double>> patched(n, std::vector<double>(mlps.size()));

    parallel_for(n, ctx.jobs, [&](int i) {
        const auto& inst = ctx.dataset.instances[i];
        const InstanceRuns runs = run_instance(ctx, inst);
        clean_lds[i] = final_ld(runs.clean, inst);
        for (int l = 0; l < cfg.n_layers; ++l) {
            HooksF hooks;
            const HookSite site{l, Site::MlpOut};
            hooks.replace(site, runs.source(site, ctx));
            if (with_attention)
                for (int m = l + 1; m < cfg.n_layers; ++m)
                    for (int h = 0; h < cfg.n_heads; ++h) {
                        const HookSite hs{m, Site::HeadResult, h};
                        hooks.replace(hs, runs.clean.cache.at(hs));
                    }
            patched[i][l] = final_ld(forward_resume(w, runs.clean.cache, l, hooks, logits_only()), inst);
        }
    });
    return collect(with_attention ? PatchMode::MlpWithAttn : PatchMode::MlpWithoutAttn, ctx, mlps, clean_lds,
                   patched);
}

namespace {

void check_path(const ModelConfig& cfg, const ComponentId& sender, const ComponentId& receiver) {
    sender.check(cfg);
    receiver.check(cfg);
    if (!receiver.is_head()) throw std::invalid_argument("path patch: receiver must be an attention head");
    if (sender == receiver) throw std::invalid_argument("path patch: sender and receiver are the same component");
    if (sender.kind != ComponentId::Kind::Embed && sender.layer >= receiver.layer)
        throw std::invalid_argument("path patch: sender " + sender.label() + " is not upstream of receiver " +
                                    receiver.label());
}

// Receiver head output when only `input` reads the shifted residual stream.
MatF receiver_result(const WeightsF& w, const CacheF& clean, const ComponentId& receiver, HeadInput input,
                     const MatF& shift) {
    const auto& cfg = w.config;
    const int l = receiver.layer;
    const int h = *receiver.head;
    const auto& attn = w.blocks[l].attn;
    // An unchanged input leaves the head's clean output in place bit for bit.
    if ((shift.array() == 0.0f).all()) return clean.head_result(l, h);

    const MatF& clean_ln = clean.at({l, Site::Ln1Out});
    const MatF shifted_ln = layer_norm<float>(MatF(clean.resid_pre(l) + shift), w.blocks[l].ln1, cfg.layernorm_epsilon);

    auto project = [&](HeadInput which, const auto& W, const auto& b) {
        MatF out = (which == input ? shifted_ln : clean_ln) * W;
        out.rowwise() += b;
        return out;
    };
    const MatF q = project(HeadInput::Q, attn.W_Q_head(h), attn.b_Q_head(h));
    const MatF k = project(HeadInput::K, attn.W_K_head(h), attn.b_K_head(h));
    const MatF v = project(HeadInput::V, attn.W_V_head(h), attn.b_V_head(h));

    const Eigen::Index n = q.rows();
    MatF scores = (q * k.transpose()) / std::sqrt(static_cast<float>(cfg.d_head));
    MatF pattern = MatF::Zero(n, n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto row = scores.row(r).head(r + 1);
        const float m = row.maxCoeff();
        pattern.row(r).head(r + 1) = (row.array() - m).exp().matrix();
        pattern.row(r) /= pattern.row(r).sum();
    }
    return pattern * v * attn.W_O_head(h);
}

} // namespace

std::vector<EffectMatrix> head_input_sweep(const PatchContext& ctx, const std::vector<ComponentId>& senders,
                                           const ComponentId& receiver) {
    check_context(ctx);
    const auto& w = ctx.weights;
    for (const auto& s : senders) check_path(w.config, s, receiver);

    constexpr HeadInput inputs[] = {HeadInput::Q, HeadInput::K, HeadInput::V};
    const int n = ctx.dataset.size();
    const std::size_t cols = senders.size() * 3;
    std::vector<double> clean_lds(n);
    std::vector<std::vector<double>> patched(n, std::vector<double>(cols));
    const HookSite target{receiver.layer, Site::HeadResult, receiver.head};

    parallel_for(n, ctx.jobs, [&](int i) {
        const auto& inst = ctx.dataset.instances[i];
        const InstanceRuns runs = run_instance(ctx, inst);
        clean_lds[i] = final_ld(runs.clean, inst);
        for (std::size_t s = 0; s < senders.size(); ++s) {
            const HookSite site = output_site(senders[s]);
            const MatF shift = runs.source(site, ctx) - runs.clean.cache.at(site);
            for (int k = 0; k < 3; ++k) {
                HooksF hooks;
                hooks.replace(target, receiver_result(w, runs.clean.cache, receiver, inputs[k], shift));
                patched[i][s * 3 + k] =
                    final_ld(forward_resume(w, runs.clean.cache, receiver.layer, hooks, logits_only()), inst);
            }
        }
    });

    std::vector<EffectMatrix> out;
    constexpr PatchMode modes[] = {PatchMode::QInput, PatchMode::KInput, PatchMode::VInput};
    for (int k = 0; k < 3; ++k) {
        std::vector<std::vector<double>> per(n, std::vector<double>(senders.size()));
        for (int i = 0; i < n; ++i)
            for (std::size_t s = 0; s < senders.size(); ++s) per[i][s] = patched[i][s * 3 + k];
        EffectMatrix m = collect(modes[k], ctx, senders, clean_lds, per);
        m.receiver = receiver;
        out.push_back(std::move(m));
    }
    return out;
}

PathPatchResult head_input_path_patch(const PatchContext& ctx, const ComponentId& sender, const ComponentId& receiver,
                                      HeadInput input) {
    const auto sweeps = head_input_sweep(ctx, {sender}, receiver);
    const auto& m = sweeps[static_cast<int>(input)];
    return {m.entries.front().delta, m.entries.front().ald_patched, m.ald_clean};
}

} // namespace syllo
