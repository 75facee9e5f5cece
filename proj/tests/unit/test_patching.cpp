#include "toy.hpp"

#include "syllo/metrics.hpp"
#include "syllo/patching.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace syllo;

namespace {

SyllogismDataset synthetic_dataset(int n, int len, int vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> tok(2, vocab - 1);
    SyllogismDataset ds;
    for (int i = 0; i < n; ++i) {
        SyllogismInstance inst;
        for (int p = 0; p < len; ++p) inst.clean_tokens.push_back(tok(rng));
        inst.corrupted_tokens = inst.clean_tokens;
        inst.corrupted_tokens[1] = tok(rng);
        inst.corrupted_tokens[len - 2] = tok(rng);
        inst.gold_positive = i % 2 == 0;
        inst.correct_id = inst.gold_positive ? 0 : 1;
        inst.incorrect_id = inst.gold_positive ? 1 : 0;
        ds.instances.push_back(std::move(inst));
    }
    return ds;
}

toy::ToySpec spec3() {
    toy::ToySpec s;
    s.n_layers = 2;
    s.n_heads = 3;
    s.d_model = 12;
    s.n_vocab = 14;
    s.seed = 5;
    s.scale = 0.5f;
    return s;
}

double ld(const ForwardResultF& r, const SyllogismInstance& inst) {
    return logit_diff(r.final_logits(), inst.correct_id, inst.incorrect_id).value;
}

double clean_ald(const WeightsF& w, const SyllogismDataset& ds) {
    double sum = 0;
    for (const auto& inst : ds.instances) sum += ld(forward_with_cache(w, std::span<const TokenId>(inst.clean_tokens)), inst);
    return sum / ds.size();
}

std::vector<ComponentId> everything(const ModelConfig& c) {
    auto comps = all_heads(c);
    for (const auto& m : all_mlps(c)) comps.push_back(m);
    comps.push_back(ComponentId::embed());
    return comps;
}

} // namespace

TEST_CASE("mean cache is the position-wise average") {
    const auto w = toy::make_weights(spec3());
    const auto ds = synthetic_dataset(37, 6, 14, 1);
    const auto mean = MeanCache::compute(w, ds, 3);
    CHECK(mean.n_instances() == 37);
    MatF sum = MatF::Zero(6, 12);
    for (const auto& inst : ds.instances)
        sum += forward_with_cache(w, std::span<const TokenId>(inst.clean_tokens)).cache.head_result(1, 2);
    CHECK((mean.at({1, Site::HeadResult, 2}) - sum / 37.0f).cwiseAbs().maxCoeff() < 1e-5);
    CHECK_FALSE(mean.contains(HookSite::final_site(Site::Logits)));

    const auto again = MeanCache::compute(w, ds, 1);
    CHECK(again.at({0, Site::MlpOut}) == mean.at({0, Site::MlpOut}));

    SyllogismDataset ragged = ds;
    ragged.instances[3].clean_tokens.push_back(1);
    CHECK_THROWS_AS(MeanCache::compute(w, ragged), std::invalid_argument);
    CHECK_THROWS_AS(MeanCache::compute(w, SyllogismDataset{}), std::invalid_argument);
}

TEST_CASE("patching with the clean activation changes nothing") {
    const auto w = toy::make_weights(spec3());
    const auto ds = synthetic_dataset(12, 7, 14, 2);
    const PatchContext ctx{w, ds, PatchSource::Clean, nullptr, 2};

    const auto direct = direct_effect_sweep(ctx, everything(w.config));
    for (const auto& e : direct.entries) CHECK(e.delta == 0.0);
    for (bool with_attn : {true, false})
        for (const auto& e : mlp_effect_modes(ctx, with_attn).entries) CHECK(std::abs(e.delta) < 1e-6);
    for (const auto& m : head_input_sweep(ctx, upstream_components(w.config, ComponentId::attn_head(1, 1)),
                                          ComponentId::attn_head(1, 1)))
        for (const auto& e : m.entries) CHECK(std::abs(e.delta) < 1e-5);

    SyllogismDataset same = ds;
    for (auto& inst : same.instances) inst.corrupted_tokens = inst.clean_tokens;
    const PatchContext corrupt{w, same, PatchSource::CorruptedPrompt, nullptr, 1};
    for (const auto& e : direct_effect_sweep(corrupt, all_heads(w.config)).entries) CHECK(e.delta == 0.0);
}

TEST_CASE("direct effect equals a hooked run with every other path frozen") {
    const auto spec = spec3();
    const auto w = toy::make_weights(spec);
    const auto ds = synthetic_dataset(10, 6, 14, 3);
    const auto mean = MeanCache::compute(w, ds);
    const PatchContext ctx{w, ds, PatchSource::DatasetMean, &mean, 1};
    const auto comps = everything(w.config);
    const auto sweep = direct_effect_sweep(ctx, comps);
    const double base = clean_ald(w, ds);
    CHECK(sweep.ald_clean == doctest::Approx(base).epsilon(1e-5));

    for (const auto& c : comps) {
        if (c.kind == ComponentId::Kind::Embed) continue;
        double sum = 0;
        for (const auto& inst : ds.instances) {
            const auto clean = forward_with_cache(w, std::span<const TokenId>(inst.clean_tokens));
            const int last = clean.cache.n_positions() - 1;
            HooksF hooks;
            const HookSite site = c.is_head() ? HookSite{c.layer, Site::HeadResult, c.head} : HookSite{c.layer, Site::MlpOut};
            hooks.replace_row(site, last, mean.at(site).row(last));
            for (int l = c.layer; l < spec.n_layers; ++l) {
                for (int h = 0; h < spec.n_heads; ++h) {
                    const HookSite hs{l, Site::HeadResult, h};
                    if (hs != site && (l > c.layer)) hooks.replace(hs, clean.cache.at(hs));
                }
                const HookSite ms{l, Site::MlpOut};
                if (ms != site) hooks.replace(ms, clean.cache.at(ms));
            }
            sum += ld(forward_hooked(w, std::span<const TokenId>(inst.clean_tokens), hooks), inst);
        }
        INFO(c.label());
        CHECK(sweep.at(c).ald_patched == doctest::Approx(sum / ds.size()).epsilon(1e-4));
        CHECK(sweep.at(c).delta == doctest::Approx((sum / ds.size() - base) / std::abs(base)).epsilon(1e-3));
    }
}

TEST_CASE("MLP modes match hand-built hooked runs") {
    const auto spec = spec3();
    const auto w = toy::make_weights(spec);
    const auto ds = synthetic_dataset(8, 6, 14, 4);
    const auto mean = MeanCache::compute(w, ds);
    const PatchContext ctx{w, ds, PatchSource::DatasetMean, &mean, 2};
    for (bool with_attn : {true, false}) {
        const auto m = mlp_effect_modes(ctx, with_attn);
        CHECK(m.mode == (with_attn ? PatchMode::MlpWithAttn : PatchMode::MlpWithoutAttn));
        for (int l = 0; l < spec.n_layers; ++l) {
            double sum = 0;
            for (const auto& inst : ds.instances) {
                const auto clean = forward_with_cache(w, std::span<const TokenId>(inst.clean_tokens));
                HooksF hooks;
                hooks.replace({l, Site::MlpOut}, mean.at({l, Site::MlpOut}));
                if (with_attn)
                    for (int k = l + 1; k < spec.n_layers; ++k)
                        for (int h = 0; h < spec.n_heads; ++h)
                            hooks.replace({k, Site::HeadResult, h}, clean.cache.head_result(k, h));
                sum += ld(forward_hooked(w, std::span<const TokenId>(inst.clean_tokens), hooks), inst);
            }
            CHECK(m.at(ComponentId::mlp(l)).ald_patched == doctest::Approx(sum / ds.size()).epsilon(1e-4));
        }
    }
    // The last MLP has nothing downstream, so both modes agree there.
    const auto a = mlp_effect_modes(ctx, true).at(ComponentId::mlp(spec.n_layers - 1)).delta;
    const auto b = mlp_effect_modes(ctx, false).at(ComponentId::mlp(spec.n_layers - 1)).delta;
    CHECK(a == doctest::Approx(b).epsilon(1e-5));
}

namespace {

// Receiver head output computed in double with the sender shift applied to one input side.
MatF reference_receiver(const WeightsF& w, const CacheF& clean, int layer, int head, int which, const MatF& shift) {
    const auto& c = w.config;
    const int n = clean.n_positions(), dh = c.d_head;
    const auto& b = w.blocks[layer];
    auto ln = [&](const MatF& x) {
        Eigen::MatrixXd out(x.rows(), x.cols());
        for (int r = 0; r < x.rows(); ++r) {
            Eigen::RowVectorXd row = x.row(r).cast<double>();
            const double mu = row.mean();
            const double var = (row.array() - mu).square().mean();
            out.row(r) = ((row.array() - mu) / std::sqrt(var + c.layernorm_epsilon)).matrix().cwiseProduct(
                             b.ln1.scale.cast<double>()) +
                         b.ln1.bias.cast<double>();
        }
        return out;
    };
    const Eigen::MatrixXd plain = ln(clean.resid_pre(layer));
    const Eigen::MatrixXd moved = ln(MatF(clean.resid_pre(layer) + shift));
    auto proj = [&](int side, const MatF& W, const VecF& bias) {
        const Eigen::MatrixXd& x = side == which ? moved : plain;
        Eigen::MatrixXd out = x * W.middleCols(head * dh, dh).cast<double>();
        out.rowwise() += bias.segment(head * dh, dh).cast<double>();
        return out;
    };
    const auto q = proj(0, b.attn.W_Q, b.attn.b_Q);
    const auto k = proj(1, b.attn.W_K, b.attn.b_K);
    const auto v = proj(2, b.attn.W_V, b.attn.b_V);
    Eigen::MatrixXd z = Eigen::MatrixXd::Zero(n, dh);
    for (int i = 0; i < n; ++i) {
        std::vector<double> s(i + 1);
        double mx = -1e300, tot = 0;
        for (int j = 0; j <= i; ++j) mx = std::max(mx, s[j] = q.row(i).dot(k.row(j)) / std::sqrt(double(dh)));
        for (int j = 0; j <= i; ++j) tot += (s[j] = std::exp(s[j] - mx));
        for (int j = 0; j <= i; ++j) z.row(i) += s[j] / tot * v.row(j);
    }
    return (z * b.attn.W_O.middleRows(head * dh, dh).cast<double>()).cast<float>();
}

} // namespace

TEST_CASE("q/k/v path patching matches an independent receiver recomputation") {
    const auto spec = spec3();
    const auto w = toy::make_weights(spec);
    const auto ds = synthetic_dataset(6, 6, 14, 9);
    const auto mean = MeanCache::compute(w, ds);
    const PatchContext ctx{w, ds, PatchSource::DatasetMean, &mean, 1};
    const ComponentId receiver = ComponentId::attn_head(1, 2);
    const std::vector<ComponentId> senders{ComponentId::embed(), ComponentId::attn_head(0, 1), ComponentId::mlp(0)};
    const auto sweeps = head_input_sweep(ctx, senders, receiver);
    REQUIRE(sweeps.size() == 3);

    for (int which = 0; which < 3; ++which)
        for (const auto& s : senders) {
            const HookSite site = s.kind == ComponentId::Kind::Embed ? HookSite{0, Site::ResidPre}
                                  : s.is_head()                     ? HookSite{s.layer, Site::HeadResult, s.head}
                                                                    : HookSite{s.layer, Site::MlpOut};
            double sum = 0;
            for (const auto& inst : ds.instances) {
                const auto clean = forward_with_cache(w, std::span<const TokenId>(inst.clean_tokens));
                const MatF shift = mean.at(site) - clean.cache.at(site);
                HooksF hooks;
                hooks.replace({1, Site::HeadResult, 2}, reference_receiver(w, clean.cache, 1, 2, which, shift));
                sum += ld(forward_hooked(w, std::span<const TokenId>(inst.clean_tokens), hooks), inst);
            }
            INFO(s.label() << " input " << which);
            CHECK(sweeps[which].at(s).ald_patched == doctest::Approx(sum / ds.size()).epsilon(1e-4));
            CHECK(sweeps[which].receiver == receiver);
        }

    const auto single = head_input_path_patch(ctx, ComponentId::attn_head(0, 1), receiver, HeadInput::K);
    CHECK(single.delta == sweeps[1].at(ComponentId::attn_head(0, 1)).delta);
}

TEST_CASE("path patching enforces upstream senders") {
    const auto w = toy::make_weights(spec3());
    const auto ds = synthetic_dataset(3, 5, 14, 1);
    const PatchContext ctx{w, ds, PatchSource::Clean, nullptr, 1};
    const auto r = ComponentId::attn_head(1, 0);
    CHECK_THROWS_AS(head_input_path_patch(ctx, ComponentId::attn_head(1, 1), r, HeadInput::Q), std::invalid_argument);
    CHECK_THROWS_AS(head_input_path_patch(ctx, r, r, HeadInput::Q), std::invalid_argument);
    CHECK_THROWS_AS(head_input_path_patch(ctx, ComponentId::mlp(1), r, HeadInput::Q), std::invalid_argument);
    CHECK_THROWS_AS(head_input_path_patch(ctx, ComponentId::embed(), ComponentId::mlp(1), HeadInput::V),
                    std::invalid_argument);
    CHECK_THROWS(head_input_path_patch(ctx, ComponentId::attn_head(0, 9), r, HeadInput::Q));

    const PatchContext no_mean{w, ds, PatchSource::DatasetMean, nullptr, 1};
    CHECK_THROWS_AS(direct_effect_sweep(no_mean, all_heads(w.config)), std::invalid_argument);
    CHECK(upstream_components(w.config, r).size() == 1u + 3u + 1u);
}

TEST_CASE("sweeps are deterministic regardless of thread count") {
    const auto w = toy::make_weights(spec3());
    const auto ds = synthetic_dataset(20, 6, 14, 6);
    const auto mean1 = MeanCache::compute(w, ds, 1);
    const auto mean8 = MeanCache::compute(w, ds, 8);
    const auto a = direct_effect_sweep({w, ds, PatchSource::DatasetMean, &mean1, 1}, all_heads(w.config));
    const auto b = direct_effect_sweep({w, ds, PatchSource::DatasetMean, &mean8, 8}, all_heads(w.config));
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].component == b.entries[i].component);
        CHECK(a.entries[i].delta == b.entries[i].delta);
    }
}

TEST_CASE("effect matrix ranking helpers") {
    EffectMatrix m;
    m.entries = {{ComponentId::attn_head(0, 0), -0.5, 0},
                 {ComponentId::attn_head(0, 1), 0.9, 0},
                 {ComponentId::mlp(0), -0.1, 0},
                 {ComponentId::attn_head(1, 0), -0.7, 0}};
    CHECK(m.most_negative(2) == std::vector<ComponentId>{ComponentId::attn_head(1, 0), ComponentId::attn_head(0, 0)});
    CHECK(m.largest_magnitude(1) == std::vector<ComponentId>{ComponentId::attn_head(0, 1)});
    CHECK(m.rank_by_delta(ComponentId::mlp(0)) == 2);
    CHECK_THROWS_AS(m.at(ComponentId::mlp(3)), std::out_of_range);
    CHECK(normalized_delta(1.0, 2.0) == -0.5);
    CHECK(normalized_delta(-3.0, -2.0) == -0.5);
    CHECK_THROWS(normalized_delta(1.0, 0.0));
    CHECK(parse_source("corrupted") == PatchSource::CorruptedPrompt);
    CHECK_THROWS(parse_source("nope"));
}
