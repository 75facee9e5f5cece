#include "toy.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace toy {

namespace fs = std::filesystem;
using syllo::MatF;
using syllo::VecF;

syllo::ModelConfig ToySpec::config() const {
    syllo::ModelConfig c;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.d_model = d_model;
    c.d_head = d_model / n_heads;
    c.d_mlp = 4 * d_model;
    c.n_ctx = n_ctx;
    c.n_vocab = n_vocab;
    c.activation = activation;
    c.tied_embeddings = true;
    return c;
}

namespace {

struct Filler {
    std::mt19937_64 rng;
    std::normal_distribution<float> normal{0.0f, 1.0f};

    void fill(MatF& m, float scale) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * normal(rng);
    }
    void fill(VecF& v, float scale, float offset = 0.0f) {
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = offset + scale * normal(rng);
    }
};

void plant_ov(syllo::WeightsF& w, float sign) {
    const auto& c = w.config;
    if (c.n_vocab > c.d_head) throw std::invalid_argument("toy: planted OV head needs n_vocab <= d_head");
    w.W_E.setZero();
    for (int t = 0; t < c.n_vocab; ++t) w.W_E(t, t) = 5.0f;
    w.W_pos.setZero();
    w.W_U = w.W_E.transpose();
    auto& attn = w.blocks[0].attn;
    attn.W_V.middleCols(0, c.d_head).setZero();
    attn.W_O.middleRows(0, c.d_head).setZero();
    for (int t = 0; t < c.n_vocab; ++t) {
        attn.W_V(t, t) = 1.0f;
        attn.W_O(t, t) = sign;
    }
    for (auto& b : w.blocks) {
        b.mlp.W_in *= 0.05f;
        b.mlp.W_out *= 0.05f;
        b.mlp.b_in.setZero();
        b.mlp.b_out.setZero();
    }
}

void plant_induction(syllo::WeightsF& w) {
    const auto& c = w.config;
    if (c.d_model != 32 || c.n_vocab != 8 || c.n_layers != 2 || c.n_heads != 2 || c.n_ctx > 16)
        throw std::invalid_argument("toy: induction pair needs d_model 32, n_vocab 8, 2 layers, 2 heads, n_ctx <= 16");
    constexpr int kPos = 8, kPrev = 24;
    constexpr float kSharp = 6.0f;

    for (auto& b : w.blocks) {
        b.ln1.scale.setOnes();
        b.ln1.bias.setZero();
        b.ln2.scale.setOnes();
        b.ln2.bias.setZero();
        auto& a = b.attn;
        for (MatF* m : {&a.W_Q, &a.W_K, &a.W_V, &a.W_O}) m->setZero();
        for (VecF* v : {&a.b_Q, &a.b_K, &a.b_V, &a.b_O}) v->setZero();
        b.mlp.W_in.setZero();
        b.mlp.W_out.setZero();
        b.mlp.b_in.setZero();
        b.mlp.b_out.setZero();
    }
    w.W_E.setZero();
    w.W_pos.setZero();
    for (int t = 0; t < 8; ++t) w.W_E(t, t) = 1.0f;
    for (int p = 0; p < c.n_ctx; ++p) w.W_pos(p, kPos + p) = 1.0f;
    w.W_U = w.W_E.transpose();
    w.ln_final.scale.setOnes();
    w.ln_final.bias.setZero();

    // Head 0.0: position p queries position p-1; its value carries the token into the slot.
    auto& a0 = w.blocks[0].attn;
    for (int p = 0; p < c.n_ctx; ++p) a0.W_Q(kPos + p, p) = kSharp;
    for (int p = 0; p + 1 < c.n_ctx; ++p) a0.W_K(kPos + p, p + 1) = kSharp;
    for (int t = 0; t < 8; ++t) {
        a0.W_V(t, t) = 1.0f;
        a0.W_O(t, kPrev + t) = 1.0f;
    }
    // Head 1.0: the current token queries positions whose previous token matches it.
    auto& a1 = w.blocks[1].attn;
    for (int t = 0; t < 8; ++t) {
        a1.W_Q(t, t) = kSharp;
        a1.W_K(kPrev + t, t) = kSharp;
        a1.W_V(t, t) = 1.0f;
        a1.W_O(t, t) = 1.0f;
    }
}

} // namespace

syllo::WeightsF make_weights(const ToySpec& spec) {
    syllo::WeightsF w = syllo::WeightsF::zeros(spec.config());
    Filler f{std::mt19937_64(spec.seed)};
    const float s = spec.scale;
    f.fill(w.W_E, s);
    f.fill(w.W_pos, s * 0.5f);
    for (auto& b : w.blocks) {
        f.fill(b.ln1.scale, 0.1f, 1.0f);
        f.fill(b.ln1.bias, 0.1f);
        f.fill(b.ln2.scale, 0.1f, 1.0f);
        f.fill(b.ln2.bias, 0.1f);
        for (MatF* m : {&b.attn.W_Q, &b.attn.W_K, &b.attn.W_V, &b.attn.W_O, &b.mlp.W_in, &b.mlp.W_out}) f.fill(*m, s);
        for (VecF* v : {&b.attn.b_Q, &b.attn.b_K, &b.attn.b_V, &b.attn.b_O, &b.mlp.b_in, &b.mlp.b_out}) f.fill(*v, s * 0.3f);
    }
    f.fill(w.ln_final.scale, 0.1f, 1.0f);
    f.fill(w.ln_final.bias, 0.1f);
    w.W_U = w.W_E.transpose();

    if (spec.planted.count(Planted::CopyHead)) plant_ov(w, 1.0f);
    if (spec.planted.count(Planted::SuppressionHead)) plant_ov(w, -1.0f);
    if (spec.planted.count(Planted::InductionPair)) plant_induction(w);
    w.validate_shapes();
    return w;
}

syllo::CheckpointManifest build_toy(const ToySpec& spec, const fs::path& dir) {
    fs::create_directories(dir);
    return syllo::save_model(make_weights(spec), dir);
}

// ---------------------------------------------------------------------------------------

namespace {

using Rows = std::vector<std::vector<double>>;

double at(const MatF& m, int r, int c) { return static_cast<double>(m(r, c)); }
double at(const VecF& v, int i) { return static_cast<double>(v(i)); }

std::vector<double> layer_norm(const std::vector<double>& x, const syllo::LayerNormWeights<float>& ln, double eps) {
    const std::size_t d = x.size();
    double mean = 0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(d);
    double var = 0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    std::vector<double> out(d);
    for (std::size_t i = 0; i < d; ++i)
        out[i] = (x[i] - mean) / std::sqrt(var + eps) * at(ln.scale, static_cast<int>(i)) + at(ln.bias, static_cast<int>(i));
    return out;
}

double gelu(double x, syllo::Activation a) {
    if (a == syllo::Activation::GeluTanh)
        return 0.5 * x * (1 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
    return 0.5 * x * (1 + std::erf(x / std::sqrt(2.0)));
}

// y = x W + b for a row vector x.
std::vector<double> affine(const std::vector<double>& x, const MatF& W, const VecF* b, int col0, int cols) {
    std::vector<double> y(cols, 0.0);
    for (int j = 0; j < cols; ++j) {
        double s = b ? at(*b, col0 + j) : 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * at(W, static_cast<int>(i), col0 + j);
        y[j] = s;
    }
    return y;
}

} // namespace

Rows brute_force_logits(const syllo::WeightsF& w, const std::vector<int>& tokens) {
    const auto& c = w.config;
    const int n = static_cast<int>(tokens.size());
    const int D = c.d_model, H = c.n_heads, dh = c.d_head;

    Rows resid(n, std::vector<double>(D));
    for (int p = 0; p < n; ++p)
        for (int i = 0; i < D; ++i) resid[p][i] = at(w.W_E, tokens[p], i) + at(w.W_pos, p, i);

    for (int l = 0; l < c.n_layers; ++l) {
        const auto& b = w.blocks[l];
        Rows x(n);
        for (int p = 0; p < n; ++p) x[p] = layer_norm(resid[p], b.ln1, c.layernorm_epsilon);

        Rows attn(n, std::vector<double>(D, 0.0));
        for (int h = 0; h < H; ++h) {
            Rows q(n), k(n), v(n);
            for (int p = 0; p < n; ++p) {
                q[p] = affine(x[p], b.attn.W_Q, &b.attn.b_Q, h * dh, dh);
                k[p] = affine(x[p], b.attn.W_K, &b.attn.b_K, h * dh, dh);
                v[p] = affine(x[p], b.attn.W_V, &b.attn.b_V, h * dh, dh);
            }
            for (int i = 0; i < n; ++i) {
                std::vector<double> s(i + 1);
                double m = -1e300;
                for (int j = 0; j <= i; ++j) {
                    double dot = 0;
                    for (int e = 0; e < dh; ++e) dot += q[i][e] * k[j][e];
                    s[j] = dot / std::sqrt(static_cast<double>(dh));
                    m = std::max(m, s[j]);
                }
                double z = 0;
                for (double& e : s) z += (e = std::exp(e - m));
                std::vector<double> mixed(dh, 0.0);
                for (int j = 0; j <= i; ++j)
                    for (int e = 0; e < dh; ++e) mixed[e] += s[j] / z * v[j][e];
                for (int o = 0; o < D; ++o) {
                    double acc = 0;
                    for (int e = 0; e < dh; ++e) acc += mixed[e] * at(b.attn.W_O, h * dh + e, o);
                    attn[i][o] += acc;
                }
            }
        }
        for (int p = 0; p < n; ++p)
            for (int o = 0; o < D; ++o) resid[p][o] += attn[p][o] + at(b.attn.b_O, o);

        for (int p = 0; p < n; ++p) {
            auto hidden = affine(layer_norm(resid[p], b.ln2, c.layernorm_epsilon), b.mlp.W_in, &b.mlp.b_in, 0, c.d_mlp);
            for (double& e : hidden) e = gelu(e, c.activation);
            const auto out = affine(hidden, b.mlp.W_out, &b.mlp.b_out, 0, D);
            for (int o = 0; o < D; ++o) resid[p][o] += out[o];
        }
    }

    Rows logits(n);
    for (int p = 0; p < n; ++p)
        logits[p] = affine(layer_norm(resid[p], w.ln_final, c.layernorm_epsilon), w.W_U, nullptr, 0, c.n_vocab);
    return logits;
}

// ---------------------------------------------------------------------------------------

fs::path data_dir() { return SYLLO_TEST_DATA_DIR; }
fs::path gpt2_vocab() { return data_dir() / "gpt2" / "vocab.json"; }
fs::path gpt2_merges() { return data_dir() / "gpt2" / "merges.txt"; }

syllo::CheckpointManifest build_text_toy(const fs::path& dir, std::uint64_t seed) {
    ToySpec spec;
    spec.n_layers = 2;
    spec.n_heads = 2;
    spec.d_model = 16;
    spec.n_vocab = 50257;
    spec.n_ctx = 64;
    spec.seed = seed;
    fs::create_directories(dir);
    syllo::save_model(make_weights(spec), dir);
    fs::copy_file(gpt2_vocab(), dir / "vocab.json", fs::copy_options::overwrite_existing);
    fs::copy_file(gpt2_merges(), dir / "merges.txt", fs::copy_options::overwrite_existing);
    return syllo::CheckpointManifest::from_directory(dir);
}

TempDir::TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = fs::temp_directory_path() / ("syllo-" + tag + "-" + std::to_string(rng()));
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

} // namespace toy
