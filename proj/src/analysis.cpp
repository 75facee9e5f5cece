#include "syllo/analysis.hpp"

#include "syllo/config.hpp"
#include "syllo/parallel.hpp"
#include "syllo/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace syllo {

std::string display_token(const BpeTokenizer& tokenizer, TokenId id) {
    std::string text = tokenizer.token_text(id);
    if (!text.empty() && text.front() == ' ') text.erase(0, 1);
    return text;
}

namespace {

void require_head(const WeightsF& w, const ComponentId& head) {
    if (!head.is_head()) throw std::invalid_argument(head.label() + " is not an attention head");
    head.check(w.config);
}

void require_token(const WeightsF& w, TokenId t) {
    if (t < 0 || t >= w.config.n_vocab) throw std::out_of_range("token id " + std::to_string(t) + " out of range");
}

} // namespace

// ---------------------------------------------------------------------------------------

QKScoreMatrix qk_prompt_matrix(const WeightsF& weights, const ComponentId& head, const Tokens& tokens,
                               const BpeTokenizer* tokenizer, const QkOptions& options) {
    require_head(weights, head);
    for (TokenId t : tokens) require_token(weights, t);
    const auto& cfg = weights.config;
    const auto& block = weights.blocks[head.layer];

    MatF emb(static_cast<Eigen::Index>(tokens.size()), cfg.d_model);
    for (std::size_t i = 0; i < tokens.size(); ++i) emb.row(i) = weights.W_E.row(tokens[i]);
    if (options.apply_ln) emb = layer_norm(emb, block.ln1, cfg.layernorm_epsilon);

    const MatF q = emb * block.attn.W_Q_head(*head.head);
    const MatF k = emb * block.attn.W_K_head(*head.head);

    QKScoreMatrix out;
    out.head = head;
    out.tokens = tokens;
    out.raw = (q * k.transpose()) / std::sqrt(static_cast<float>(cfg.d_head));
    const float peak = out.raw.size() ? out.raw.cwiseAbs().maxCoeff() : 0.0f;
    out.normalized = peak > 0.0f ? MatF(out.raw / peak) : MatF::Zero(out.raw.rows(), out.raw.cols());
    if (tokenizer)
        for (TokenId t : tokens) out.labels.push_back(display_token(*tokenizer, t));
    return out;
}

namespace {

std::vector<QkPair> distinct_pairs(const QKScoreMatrix& m) {
    std::vector<QkPair> out;
    std::set<std::pair<TokenId, TokenId>> seen;
    const int n = static_cast<int>(m.tokens.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (!seen.insert({m.tokens[i], m.tokens[j]}).second) continue;
            QkPair p;
            p.query_pos = i;
            p.key_pos = j;
            p.query_token = m.tokens[i];
            p.key_token = m.tokens[j];
            if (!m.labels.empty()) {
                p.query_label = m.labels[i];
                p.key_label = m.labels[j];
            }
            p.score = m.normalized(i, j);
            out.push_back(std::move(p));
        }
    return out;
}

} // namespace

std::size_t distinct_pair_count(const QKScoreMatrix& matrix) { return distinct_pairs(matrix).size(); }

std::vector<QkPair> top_qk_pairs(const QKScoreMatrix& matrix, std::size_t k) {
    auto pairs = distinct_pairs(matrix);
    if (k > pairs.size())
        throw std::invalid_argument("top_qk_pairs: k = " + std::to_string(k) + " exceeds " +
                                    std::to_string(pairs.size()) + " distinct pairs");
    std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    pairs.resize(k);
    return pairs;
}

// ---------------------------------------------------------------------------------------

VecF ov_vector(const WeightsF& weights, const ComponentId& head, TokenId token, const OvOptions& options) {
    require_head(weights, head);
    require_token(weights, token);
    const auto& cfg = weights.config;
    MatF x = weights.W_E.row(token);
    if (options.mlp0_extended) x += mlp_apply(weights, 0, x);
    if (options.apply_ln) x = layer_norm(x, weights.blocks[head.layer].ln1, cfg.layernorm_epsilon);
    const auto& attn = weights.blocks[head.layer].attn;
    return x * attn.W_V_head(*head.head) * attn.W_O_head(*head.head);
}

TokenLogitSlate slate_from_vector(const WeightsF& weights, const VecF& vector, std::size_t k, bool final_ln) {
    const auto n_vocab = static_cast<std::size_t>(weights.config.n_vocab);
    if (2 * k > n_vocab) throw std::invalid_argument("slate: 2k exceeds the vocabulary size");
    MatF v = vector;
    if (final_ln) v = layer_norm(v, weights.ln_final, weights.config.layernorm_epsilon);
    const VecF logits = v * weights.W_U;

    std::vector<TokenId> order(n_vocab);
    std::iota(order.begin(), order.end(), 0);
    auto desc = [&](TokenId a, TokenId b) { return logits(a) > logits(b) || (logits(a) == logits(b) && a < b); };
    auto asc = [&](TokenId a, TokenId b) { return logits(a) < logits(b) || (logits(a) == logits(b) && a < b); };

    TokenLogitSlate slate;
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), desc);
    for (std::size_t i = 0; i < k; ++i) slate.top.push_back({order[i], logits(order[i])});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), asc);
    for (std::size_t i = 0; i < k; ++i) slate.bottom.push_back({order[i], logits(order[i])});
    return slate;
}

TokenLogitSlate ov_extended_logits(const WeightsF& weights, const ComponentId& head, TokenId source, std::size_t k,
                                   const OvOptions& options) {
    auto slate = slate_from_vector(weights, ov_vector(weights, head, source, options), k, options.final_ln);
    slate.source = source;
    slate.stage = "after_ov";
    return slate;
}

TokenLogitSlate trace_ov_through_mlp(const WeightsF& weights, const ComponentId& head, int mlp_layer, TokenId source,
                                     std::size_t k, const OvOptions& options) {
    require_head(weights, head);
    if (mlp_layer < head.layer || mlp_layer >= weights.config.n_layers)
        throw std::invalid_argument("trace_ov_through_mlp: MLP " + std::to_string(mlp_layer) +
                                    " does not follow head " + head.label());
    const MatF v = ov_vector(weights, head, source, options);
    const VecF traced = v + mlp_apply(weights, mlp_layer, v);
    auto slate = slate_from_vector(weights, traced, k, options.final_ln);
    slate.source = source;
    slate.stage = "after_mlp_" + std::to_string(mlp_layer);
    return slate;
}

// ---------------------------------------------------------------------------------------

std::vector<TokenLogit> logit_lens(const WeightsF& weights, const CacheF& cache, int position, const LensTarget& target,
                                   std::size_t k) {
    const MatF* source = nullptr;
    if (const auto* c = std::get_if<ComponentId>(&target)) {
        c->check(weights.config);
        switch (c->kind) {
        case ComponentId::Kind::Embed: source = &cache.at({0, Site::ResidPre}); break;
        case ComponentId::Kind::AttnHead: source = &cache.at({c->layer, Site::HeadResult, c->head}); break;
        case ComponentId::Kind::Mlp: source = &cache.at({c->layer, Site::MlpOut}); break;
        }
    } else {
        const auto& site = std::get<HookSite>(target);
        if (site.site != Site::ResidPre && site.site != Site::ResidMid && site.site != Site::ResidPost)
            throw std::invalid_argument("logit_lens: " + site.name() + " is not a residual site");
        site.check(weights.config);
        source = &cache.at(site);
    }
    const int n = static_cast<int>(source->rows());
    const int pos = position < 0 ? n + position : position;
    if (pos < 0 || pos >= n) throw std::out_of_range("logit_lens: position out of range");
    if (k > static_cast<std::size_t>(weights.config.n_vocab)) throw std::invalid_argument("logit_lens: k too large");

    const VecF logits = unembed(weights, MatF(source->row(pos)));
    std::vector<TokenId> order(logits.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](TokenId a, TokenId b) { return logits(a) > logits(b) || (logits(a) == logits(b) && a < b); });
    std::vector<TokenLogit> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back({order[i], logits(order[i])});
    return out;
}

// ---------------------------------------------------------------------------------------

Correlation pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    const auto n = static_cast<double>(x.size());
    if (x.size() < 2) return {0.0, true};
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    // Float noise on a constant series is not variance.
    const double tiny = 1e-20 * n;
    if (sxx <= tiny * (1 + mx * mx) || syy <= tiny * (1 + my * my)) return {0.0, true};
    return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

std::vector<ScatterResult> scatter_all_heads(const WeightsF& weights, const SyllogismDataset& dataset,
                                             ScatterTarget target, int jobs) {
    const auto& cfg = weights.config;
    const int n = dataset.size();
    if (n == 0) throw std::invalid_argument("scatter: empty dataset");
    const int heads = cfg.n_layers * cfg.n_heads;
    std::vector<std::vector<double>> attn(heads, std::vector<double>(n)), contrib(heads, std::vector<double>(n));

    ForwardOptions opts;
    opts.final_position_logits_only = true;
    parallel_for(n, jobs, [&](int i) {
        const auto& inst = dataset.instances[i];
        const TokenId t = target == ScatterTarget::Correct ? inst.correct_id : inst.incorrect_id;
        std::vector<int> where;
        for (std::size_t p = 0; p < inst.clean_tokens.size(); ++p)
            if (inst.clean_tokens[p] == t) where.push_back(static_cast<int>(p));
        if (where.empty())
            throw std::invalid_argument("scatter: target token " + std::to_string(t) + " absent from instance " +
                                        std::to_string(i));
        const auto run = forward_with_cache(weights, std::span<const TokenId>(inst.clean_tokens), opts);
        const int last = run.cache.n_positions() - 1;
        const auto direction = weights.W_U.col(t);
        for (int l = 0; l < cfg.n_layers; ++l)
            for (int h = 0; h < cfg.n_heads; ++h) {
                const MatF& pattern = run.cache.pattern(l, h);
                double mass = 0.0;
                for (int p : where) mass += pattern(last, p);
                const int idx = l * cfg.n_heads + h;
                attn[idx][i] = mass;
                contrib[idx][i] = run.cache.head_result(l, h).row(last).dot(direction.transpose());
            }
    });

    std::vector<ScatterResult> out;
    for (int l = 0; l < cfg.n_layers; ++l)
        for (int h = 0; h < cfg.n_heads; ++h) {
            const int idx = l * cfg.n_heads + h;
            ScatterResult r{ComponentId::attn_head(l, h), std::move(attn[idx]), std::move(contrib[idx]), {}};
            r.correlation = pearson(r.attention, r.contribution);
            out.push_back(std::move(r));
        }
    return out;
}

ScatterResult head_contribution_scatter(const WeightsF& weights, const ComponentId& head,
                                        const SyllogismDataset& dataset, ScatterTarget target, int jobs) {
    require_head(weights, head);
    auto all = scatter_all_heads(weights, dataset, target, jobs);
    return std::move(all[head.layer * weights.config.n_heads + *head.head]);
}

std::string_view to_string(HeadLabel label) {
    switch (label) {
    case HeadLabel::TruthHead: return "truth_head";
    case HeadLabel::NegativeTruthHead: return "negative_truth_head";
    case HeadLabel::CorrectTruthInhibition: return "correct_truth_inhibition";
    case HeadLabel::CorrectTruthReinforcement: return "correct_truth_reinforcement";
    case HeadLabel::Unclassified: return "unclassified";
    }
    return "?";
}

HeadLabel label_from_evidence(const HeadEvidence& e, const ClassifyOptions& o) {
    if (e.attn_ss > o.theta_attn && e.ov_in_top) return HeadLabel::TruthHead;
    if (e.attn_os > o.theta_attn && e.ov_in_bottom && !e.ov_in_top) return HeadLabel::NegativeTruthHead;
    if (!e.r_degenerate && e.r_cs > o.theta_r) return HeadLabel::CorrectTruthInhibition;
    if (!e.r_degenerate && e.r_cs < -o.theta_r) return HeadLabel::CorrectTruthReinforcement;
    return HeadLabel::Unclassified;
}

namespace {

double mean(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

bool slate_has(const std::vector<TokenLogit>& list, TokenId t) {
    return std::any_of(list.begin(), list.end(), [t](const auto& e) { return e.token == t; });
}

} // namespace

std::vector<HeadClassification> classify_heads(const WeightsF& weights, const SyllogismDataset& ss,
                                               const SyllogismDataset& os, const SyllogismDataset& cs,
                                               const ClassifyOptions& options, int jobs) {
    if (ss.kind != SyllogismKind::Simple || os.kind != SyllogismKind::Opposite || cs.kind != SyllogismKind::Complex)
        throw std::invalid_argument("classify_heads: expected SS, OS and CS datasets");
    if (ss.pair.positive_id != os.pair.positive_id || ss.pair.positive_id != cs.pair.positive_id ||
        ss.pair.negative_id != os.pair.negative_id || ss.pair.negative_id != cs.pair.negative_id)
        throw std::invalid_argument("classify_heads: datasets use different binary pairs");

    const auto ss_scatter = scatter_all_heads(weights, ss, ScatterTarget::Correct, jobs);
    const auto os_scatter = scatter_all_heads(weights, os, ScatterTarget::Incorrect, jobs);
    const auto cs_scatter = scatter_all_heads(weights, cs, ScatterTarget::Incorrect, jobs);

    const TokenId words[] = {ss.pair.positive_id, ss.pair.negative_id};
    std::vector<HeadClassification> out(ss_scatter.size());
    parallel_for(static_cast<int>(out.size()), jobs, [&](int i) {
        HeadClassification& c = out[i];
        c.head = ss_scatter[i].head;
        auto& e = c.evidence;
        e.attn_ss = mean(ss_scatter[i].attention);
        e.attn_os = mean(os_scatter[i].attention);
        e.attn_cs = mean(cs_scatter[i].attention);
        e.contribution_cs = mean(cs_scatter[i].contribution);
        e.r_cs = cs_scatter[i].correlation.r;
        e.r_degenerate = cs_scatter[i].correlation.degenerate;
        for (TokenId w : words) {
            const auto slate = ov_extended_logits(weights, c.head, w, options.k, options.ov);
            e.ov_in_top = e.ov_in_top || slate_has(slate.top, w);
            e.ov_in_bottom = e.ov_in_bottom || slate_has(slate.bottom, w);
        }
        c.label = label_from_evidence(e, options);
    });
    return out;
}

// ---------------------------------------------------------------------------------------

AttentionScores attention_scores_from_pattern(const MatF& pattern, const Tokens& probe) {
    const int n = static_cast<int>(probe.size());
    if (n < kMinProbeLength)
        throw std::invalid_argument("attention diagnostics: probe too short (" + std::to_string(n) + " < " +
                                    std::to_string(kMinProbeLength) + ")");
    if (pattern.rows() != n || pattern.cols() != n)
        throw std::invalid_argument("attention diagnostics: pattern does not match probe");

    AttentionScores s;
    double prev = 0.0;
    for (int i = 1; i < n; ++i) prev += pattern(i, i - 1);
    s.prev_token = prev / (n - 1);

    double dup = 0.0, ind = 0.0;
    int dup_rows = 0, ind_rows = 0;
    for (int i = 1; i < n; ++i) {
        double d = 0.0, in = 0.0;
        bool has_dup = false, has_ind = false;
        for (int j = 0; j < i; ++j)
            if (probe[j] == probe[i]) {
                has_dup = true;
                d += pattern(i, j);
                has_ind = true;
                in += pattern(i, j + 1);
            }
        if (has_dup) {
            dup += d;
            ++dup_rows;
        }
        if (has_ind) {
            ind += in;
            ++ind_rows;
        }
    }
    s.duplicate = dup_rows ? dup / dup_rows : 0.0;
    s.induction = ind_rows ? ind / ind_rows : 0.0;
    return s;
}

std::map<ComponentId, AttentionScores> attention_diagnostics_all(const WeightsF& weights, const Tokens& probe) {
    if (static_cast<int>(probe.size()) < kMinProbeLength)
        throw std::invalid_argument("attention diagnostics: probe too short (" + std::to_string(probe.size()) +
                                    " < " + std::to_string(kMinProbeLength) + ")");
    ForwardOptions opts;
    opts.final_position_logits_only = true;
    const auto run = forward_with_cache(weights, std::span<const TokenId>(probe), opts);
    std::map<ComponentId, AttentionScores> out;
    for (int l = 0; l < weights.config.n_layers; ++l)
        for (int h = 0; h < weights.config.n_heads; ++h)
            out.emplace(ComponentId::attn_head(l, h), attention_scores_from_pattern(run.cache.pattern(l, h), probe));
    return out;
}

AttentionScores attention_diagnostics(const WeightsF& weights, const ComponentId& head, const Tokens& probe) {
    require_head(weights, head);
    return attention_diagnostics_all(weights, probe).at(head);
}

Tokens repeated_random_probe(int half, TokenId lo, TokenId hi, std::uint64_t seed, std::optional<TokenId> prefix) {
    if (half < 2 || hi <= lo) throw std::invalid_argument("repeated_random_probe: bad arguments");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<TokenId> dist(lo, hi - 1);
    Tokens block(half);
    for (auto& t : block) t = dist(rng);
    Tokens out;
    if (prefix) out.push_back(*prefix);
    out.insert(out.end(), block.begin(), block.end());
    out.insert(out.end(), block.begin(), block.end());
    return out;
}

} // namespace syllo
