#include "syllo/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace syllo {

template <typename Scalar>
Scalar gelu(Scalar x, Activation kind) {
    if (kind == Activation::GeluTanh) {
        const Scalar c = static_cast<Scalar>(0.7978845608028654); // sqrt(2/pi)
        return Scalar(0.5) * x * (Scalar(1) + std::tanh(c * (x + Scalar(0.044715) * x * x * x)));
    }
    return Scalar(0.5) * x * (Scalar(1) + std::erf(x * static_cast<Scalar>(0.7071067811865476)));
}

template <typename Scalar>
Mat<Scalar> layer_norm(const Mat<Scalar>& x, const LayerNormWeights<Scalar>& ln, double eps) {
    Mat<Scalar> out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const Scalar mean = x.row(r).mean();
        const auto centered = (x.row(r).array() - mean).matrix();
        const Scalar var = centered.squaredNorm() / static_cast<Scalar>(x.cols());
        const Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(eps));
        out.row(r) = (centered * inv).cwiseProduct(ln.scale) + ln.bias;
    }
    return out;
}

template <typename Scalar>
Mat<Scalar> mlp_apply(const ModelWeights<Scalar>& weights, int layer, const Mat<Scalar>& x) {
    const auto& b = weights.blocks.at(layer);
    Mat<Scalar> pre = layer_norm(x, b.ln2, weights.config.layernorm_epsilon) * b.mlp.W_in;
    pre.rowwise() += b.mlp.b_in;
    const Activation act = weights.config.activation;
    pre = pre.unaryExpr([act](Scalar v) { return gelu(v, act); });
    Mat<Scalar> out = pre * b.mlp.W_out;
    out.rowwise() += b.mlp.b_out;
    return out;
}

template <typename Scalar>
Mat<Scalar> unembed(const ModelWeights<Scalar>& weights, const Mat<Scalar>& resid) {
    return layer_norm(resid, weights.ln_final, weights.config.layernorm_epsilon) * weights.W_U;
}

namespace {

template <typename Scalar>
class Runner {
public:
    Runner(const ModelWeights<Scalar>& w, const HookSet<Scalar>& hooks, const ForwardOptions& opt,
           ActivationCache<Scalar>& cache)
        : w_(w), hooks_(hooks), opt_(opt), cache_(cache) {}

    Mat<Scalar> run_layers(Mat<Scalar> resid, int start_layer) {
        const auto& c = w_.config;
        for (int l = start_layer; l < c.n_layers; ++l) resid = block(l, std::move(resid));
        return resid;
    }

    Mat<Scalar> finish(const Mat<Scalar>& resid) {
        const auto& c = w_.config;
        Mat<Scalar> normed = layer_norm(resid, w_.ln_final, c.layernorm_epsilon);
        stage(HookSite::final_site(Site::FinalLn), normed);
        Mat<Scalar> logits = opt_.final_position_logits_only
                                 ? Mat<Scalar>(normed.row(normed.rows() - 1) * w_.W_U)
                                 : Mat<Scalar>(normed * w_.W_U);
        stage(HookSite::final_site(Site::Logits), logits);
        return logits;
    }

    // Apply any hook for `site`, then record the (possibly replaced) value.
    void stage(const HookSite& site, Mat<Scalar>& value) {
        hooks_.apply(site, value);
        if (opt_.record_cache) cache_.set(site, value);
    }

private:
    Mat<Scalar> block(int l, Mat<Scalar> resid) {
        const auto& c = w_.config;
        const auto& b = w_.blocks[l];
        const Eigen::Index n = resid.rows();

        stage({l, Site::ResidPre}, resid);
        Mat<Scalar> normed = layer_norm(resid, b.ln1, c.layernorm_epsilon);
        stage({l, Site::Ln1Out}, normed);

        Mat<Scalar> q = normed * b.attn.W_Q;
        q.rowwise() += b.attn.b_Q;
        Mat<Scalar> k = normed * b.attn.W_K;
        k.rowwise() += b.attn.b_K;
        Mat<Scalar> v = normed * b.attn.W_V;
        v.rowwise() += b.attn.b_V;

        const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(c.d_head));
        const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
        Mat<Scalar> attn_out = Mat<Scalar>::Zero(n, c.d_model);
        for (int h = 0; h < c.n_heads; ++h) {
            const auto cols = Eigen::seqN(h * c.d_head, c.d_head);
            Mat<Scalar> scores = (q(Eigen::all, cols) * k(Eigen::all, cols).transpose()) * scale;
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = i + 1; j < n; ++j) scores(i, j) = neg_inf;
            stage({l, Site::AttnScores, h}, scores);

            Mat<Scalar> pattern(n, n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const Scalar m = scores.row(i).maxCoeff();
                pattern.row(i) = (scores.row(i).array() - m).exp().matrix();
                pattern.row(i) /= pattern.row(i).sum();
            }
            stage({l, Site::AttnPattern, h}, pattern);

            Mat<Scalar> z = pattern * v(Eigen::all, cols);
            stage({l, Site::HeadZ, h}, z);

            Mat<Scalar> result = z * b.attn.W_O_head(h);
            stage({l, Site::HeadResult, h}, result);
            attn_out += result;
        }
        attn_out.rowwise() += b.attn.b_O;
        stage({l, Site::AttnOut}, attn_out);

        resid += attn_out;
        stage({l, Site::ResidMid}, resid);

        Mat<Scalar> pre = layer_norm(resid, b.ln2, c.layernorm_epsilon) * b.mlp.W_in;
        pre.rowwise() += b.mlp.b_in;
        stage({l, Site::MlpPre}, pre);
        const Activation act = c.activation;
        Mat<Scalar> post = pre.unaryExpr([act](Scalar x) { return gelu(x, act); });
        Mat<Scalar> mlp_out = post * b.mlp.W_out;
        mlp_out.rowwise() += b.mlp.b_out;
        stage({l, Site::MlpOut}, mlp_out);

        resid += mlp_out;
        stage({l, Site::ResidPost}, resid);
        return resid;
    }

    const ModelWeights<Scalar>& w_;
    const HookSet<Scalar>& hooks_;
    const ForwardOptions& opt_;
    ActivationCache<Scalar>& cache_;
};

template <typename Scalar>
void check_inputs(const ModelWeights<Scalar>& w, std::span<const TokenId> tokens, const HookSet<Scalar>& hooks) {
    const auto& c = w.config;
    if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
    if (static_cast<int>(tokens.size()) > c.n_ctx)
        throw std::invalid_argument("forward: sequence too long (" + std::to_string(tokens.size()) +
                                    " > n_ctx " + std::to_string(c.n_ctx) + ")");
    for (TokenId t : tokens)
        if (t < 0 || t >= c.n_vocab)
            throw std::out_of_range("forward: token id " + std::to_string(t) + " out of range");
    for (const auto& [site, action] : hooks.actions()) site.check(c);
}

} // namespace

template <typename Scalar>
ForwardResult<Scalar> forward_hooked(const ModelWeights<Scalar>& weights, std::span<const TokenId> tokens,
                                     const HookSet<Scalar>& hooks, const ForwardOptions& options) {
    check_inputs(weights, tokens, hooks);
    const auto& c = weights.config;
    const auto n = static_cast<Eigen::Index>(tokens.size());

    ForwardResult<Scalar> out;
    out.cache = ActivationCache<Scalar>(Tokens(tokens.begin(), tokens.end()), c.n_layers, c.n_heads);

    Mat<Scalar> resid(n, c.d_model);
    for (Eigen::Index p = 0; p < n; ++p) resid.row(p) = weights.W_E.row(tokens[p]) + weights.W_pos.row(p);

    Runner<Scalar> runner(weights, hooks, options, out.cache);
    resid = runner.run_layers(std::move(resid), 0);
    out.logits = runner.finish(resid);
    return out;
}

template <typename Scalar>
ForwardResult<Scalar> forward_with_cache(const ModelWeights<Scalar>& weights, std::span<const TokenId> tokens,
                                         const ForwardOptions& options) {
    static const HookSet<Scalar> none;
    return forward_hooked(weights, tokens, none, options);
}

template <typename Scalar>
ForwardResult<Scalar> forward_resume(const ModelWeights<Scalar>& weights, const ActivationCache<Scalar>& upstream,
                                     int start_layer, const HookSet<Scalar>& hooks, const ForwardOptions& options) {
    const auto& c = weights.config;
    if (start_layer < 0 || start_layer > c.n_layers)
        throw std::out_of_range("forward_resume: start layer out of range");
    check_inputs(weights, std::span<const TokenId>(upstream.tokens()), hooks);
    if (hooks.first_layer(c.n_layers) < start_layer)
        throw std::invalid_argument("forward_resume: hook upstream of start layer");

    ForwardResult<Scalar> out;
    out.cache = ActivationCache<Scalar>(upstream.tokens(), c.n_layers, c.n_heads);
    if (options.record_cache)
        for (const auto& [site, value] : upstream.entries())
            if (!is_final_scoped(site.site) && site.layer < start_layer) out.cache.set(site, value);

    Runner<Scalar> runner(weights, hooks, options, out.cache);
    Mat<Scalar> resid = start_layer < c.n_layers ? upstream.resid_pre(start_layer)
                                                 : upstream.resid_post(c.n_layers - 1);
    resid = runner.run_layers(std::move(resid), start_layer);
    out.logits = runner.finish(resid);
    return out;
}

template <typename Scalar>
Vec<Scalar> ResidualDecomposition<Scalar>::sum() const {
    Vec<Scalar> total = attn_bias;
    for (const auto& [id, v] : components) total += v;
    return total;
}

template <typename Scalar>
const Vec<Scalar>& ResidualDecomposition<Scalar>::of(const ComponentId& id) const {
    for (const auto& [cid, v] : components)
        if (cid == id) return v;
    throw std::out_of_range("decomposition has no component " + id.label());
}

template <typename Scalar>
ResidualDecomposition<Scalar> decompose_final_residual(const ActivationCache<Scalar>& cache, int position) {
    const int L = cache.n_layers(), H = cache.n_heads();
    if (L <= 0) throw std::out_of_range("incomplete cache: no layers recorded");
    const int pos = position < 0 ? cache.n_positions() - 1 : position;
    if (pos >= cache.n_positions()) throw std::out_of_range("decompose: position out of range");

    ResidualDecomposition<Scalar> out;
    out.components.reserve(1 + L * (H + 1));
    out.components.emplace_back(ComponentId::embed(), cache.resid_pre(0).row(pos));
    out.attn_bias = Vec<Scalar>::Zero(cache.resid_pre(0).cols());
    for (int l = 0; l < L; ++l) {
        Vec<Scalar> heads_total = Vec<Scalar>::Zero(out.attn_bias.cols());
        for (int h = 0; h < H; ++h) {
            Vec<Scalar> r = cache.head_result(l, h).row(pos);
            heads_total += r;
            out.components.emplace_back(ComponentId::attn_head(l, h), std::move(r));
        }
        out.attn_bias += cache.attn_out(l).row(pos) - heads_total;
        out.components.emplace_back(ComponentId::mlp(l), cache.mlp_out(l).row(pos));
    }
    return out;
}

#define SYLLO_INSTANTIATE(S)                                                                                \
    template S gelu<S>(S, Activation);                                                                     \
    template Mat<S> layer_norm<S>(const Mat<S>&, const LayerNormWeights<S>&, double);                      \
    template Mat<S> mlp_apply<S>(const ModelWeights<S>&, int, const Mat<S>&);                              \
    template Mat<S> unembed<S>(const ModelWeights<S>&, const Mat<S>&);                                     \
    template ForwardResult<S> forward_hooked<S>(const ModelWeights<S>&, std::span<const TokenId>,          \
                                                const HookSet<S>&, const ForwardOptions&);                 \
    template ForwardResult<S> forward_with_cache<S>(const ModelWeights<S>&, std::span<const TokenId>,      \
                                                    const ForwardOptions&);                                \
    template ForwardResult<S> forward_resume<S>(const ModelWeights<S>&, const ActivationCache<S>&, int,    \
                                                const HookSet<S>&, const ForwardOptions&);                 \
    template struct ResidualDecomposition<S>;                                                              \
    template ResidualDecomposition<S> decompose_final_residual<S>(const ActivationCache<S>&, int);

SYLLO_INSTANTIATE(float)
SYLLO_INSTANTIATE(double)

#undef SYLLO_INSTANTIATE

} // namespace syllo
