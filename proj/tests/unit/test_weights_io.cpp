#include "toy.hpp"

#include "syllo/checkpoint.hpp"
#include "syllo/model.hpp"
#include "syllo/safetensors.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

using namespace syllo;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Minimal independent safetensors writer: F32 or F16 tensors, header unpadded.
struct RawTensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> values;
    bool half = false;
};

std::uint16_t to_half(float f) {
    std::uint32_t x;
    std::memcpy(&x, &f, 4);
    const std::uint32_t sign = (x >> 16) & 0x8000u;
    const int exp = static_cast<int>((x >> 23) & 0xff) - 127 + 15;
    const std::uint32_t mant = (x >> 13) & 0x3ffu;
    if (exp <= 0) return static_cast<std::uint16_t>(sign);
    return static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(exp) << 10) | mant);
}

void write_raw(const fs::path& path, const std::vector<RawTensor>& tensors, std::size_t truncate_by = 0) {
    json header = json::object();
    std::string data;
    for (const auto& t : tensors) {
        const std::size_t begin = data.size();
        for (float v : t.values) {
            if (t.half) {
                const std::uint16_t h = to_half(v);
                data.append(reinterpret_cast<const char*>(&h), 2);
            } else {
                data.append(reinterpret_cast<const char*>(&v), 4);
            }
        }
        header[t.name] = {{"dtype", t.half ? "F16" : "F32"}, {"shape", t.shape}, {"data_offsets", {begin, data.size()}}};
    }
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    std::ofstream out(path, std::ios::binary);
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
    out << text << data.substr(0, data.size() - truncate_by);
}

std::vector<float> flat(const MatF& m) { return std::vector<float>(m.data(), m.data() + m.size()); }
std::vector<float> flat(const VecF& v) { return std::vector<float>(v.data(), v.data() + v.size()); }

// GPT-2 layout of `w`, written by hand from the published tensor names.
std::vector<RawTensor> gpt2_tensors(const WeightsF& w, const std::string& prefix, bool half = false) {
    const auto& c = w.config;
    const std::int64_t D = c.d_model, M = c.d_mlp;
    std::vector<RawTensor> out;
    auto add = [&](const std::string& name, std::vector<std::int64_t> shape, std::vector<float> v) {
        out.push_back({prefix + name, std::move(shape), std::move(v), half});
    };
    add("wte.weight", {c.n_vocab, D}, flat(w.W_E));
    add("wpe.weight", {c.n_ctx, D}, flat(w.W_pos));
    for (int l = 0; l < c.n_layers; ++l) {
        const auto& b = w.blocks[l];
        const std::string p = "h." + std::to_string(l) + ".";
        add(p + "ln_1.weight", {D}, flat(b.ln1.scale));
        add(p + "ln_1.bias", {D}, flat(b.ln1.bias));
        MatF fused(D, 3 * D);
        fused << b.attn.W_Q, b.attn.W_K, b.attn.W_V;
        VecF fused_b(3 * D);
        fused_b << b.attn.b_Q, b.attn.b_K, b.attn.b_V;
        add(p + "attn.c_attn.weight", {D, 3 * D}, flat(fused));
        add(p + "attn.c_attn.bias", {3 * D}, flat(fused_b));
        add(p + "attn.c_proj.weight", {D, D}, flat(b.attn.W_O));
        add(p + "attn.c_proj.bias", {D}, flat(b.attn.b_O));
        add(p + "ln_2.weight", {D}, flat(b.ln2.scale));
        add(p + "ln_2.bias", {D}, flat(b.ln2.bias));
        add(p + "mlp.c_fc.weight", {D, M}, flat(b.mlp.W_in));
        add(p + "mlp.c_fc.bias", {M}, flat(b.mlp.b_in));
        add(p + "mlp.c_proj.weight", {M, D}, flat(b.mlp.W_out));
        add(p + "mlp.c_proj.bias", {D}, flat(b.mlp.b_out));
    }
    add("ln_f.weight", {D}, flat(w.ln_final.scale));
    add("ln_f.bias", {D}, flat(w.ln_final.bias));
    return out;
}

void write_hf_config(const fs::path& path, const ModelConfig& c) {
    json j{{"model_type", "gpt2"},      {"n_layer", c.n_layers},  {"n_head", c.n_heads},
           {"n_embd", c.d_model},       {"n_positions", c.n_ctx}, {"vocab_size", c.n_vocab},
           {"n_inner", nullptr},        {"layer_norm_epsilon", 1e-5}, {"activation_function", "gelu_new"}};
    std::ofstream(path) << j.dump(2);
}

bool weights_equal(const WeightsF& a, const WeightsF& b, float tol = 0.0f) {
    auto same = [tol](const auto& x, const auto& y) {
        return x.rows() == y.rows() && x.cols() == y.cols() && (x - y).cwiseAbs().maxCoeff() <= tol;
    };
    if (!(a.config == b.config) || !same(a.W_E, b.W_E) || !same(a.W_pos, b.W_pos) || !same(a.W_U, b.W_U)) return false;
    for (std::size_t l = 0; l < a.blocks.size(); ++l) {
        const auto &x = a.blocks[l], &y = b.blocks[l];
        if (!same(x.attn.W_Q, y.attn.W_Q) || !same(x.attn.W_K, y.attn.W_K) || !same(x.attn.W_V, y.attn.W_V) ||
            !same(x.attn.W_O, y.attn.W_O) || !same(x.attn.b_Q, y.attn.b_Q) || !same(x.attn.b_V, y.attn.b_V) ||
            !same(x.mlp.W_in, y.mlp.W_in) || !same(x.mlp.W_out, y.mlp.W_out) || !same(x.ln1.scale, y.ln1.scale) ||
            !same(x.ln2.bias, y.ln2.bias))
            return false;
    }
    return same(a.ln_final.scale, b.ln_final.scale) && same(a.ln_final.bias, b.ln_final.bias);
}

toy::ToySpec small_spec() {
    toy::ToySpec s;
    s.n_layers = 2;
    s.n_heads = 2;
    s.d_model = 8;
    s.n_vocab = 10;
    s.n_ctx = 12;
    return s;
}

} // namespace

TEST_CASE("hand-written GPT-2 checkpoint loads with Q, K, V split in order") {
    toy::TempDir dir("hf");
    const auto w = toy::make_weights(small_spec());
    write_hf_config(dir / "config.json", w.config);
    write_raw(dir / "model.safetensors", gpt2_tensors(w, ""));
    const auto loaded = load_model(CheckpointManifest::from_directory(dir.path()));
    CHECK(weights_equal(loaded, w));
    CHECK(loaded.config.activation == Activation::GeluTanh);
}

TEST_CASE("transformer. prefix and an explicit lm_head are accepted") {
    toy::TempDir dir("prefix");
    const auto w = toy::make_weights(small_spec());
    write_hf_config(dir / "config.json", w.config);
    auto tensors = gpt2_tensors(w, "transformer.");
    tensors.push_back({"lm_head.weight", {w.config.n_vocab, w.config.d_model}, flat(MatF(w.W_E)), false});
    write_raw(dir / "model.safetensors", tensors);
    CHECK(weights_equal(load_model(CheckpointManifest::from_directory(dir.path())), w));
}

TEST_CASE("F16 tensors are widened to float") {
    toy::TempDir dir("f16");
    auto w = toy::make_weights(small_spec());
    write_hf_config(dir / "config.json", w.config);
    write_raw(dir / "model.safetensors", gpt2_tensors(w, "", true));
    const auto loaded = load_model(CheckpointManifest::from_directory(dir.path()));
    CHECK(weights_equal(loaded, w, 2e-3f));
}

TEST_CASE("save/load round trip is lossless and loading is pure") {
    toy::TempDir dir("roundtrip");
    const auto w = toy::make_weights(small_spec());
    const auto manifest = save_model(w, dir / "st");
    const auto a = load_model(manifest);
    const auto b = load_model(manifest);
    CHECK(weights_equal(a, w));
    CHECK(weights_equal(a, b));

    const auto raw = save_model_raw(w, dir / "raw");
    CHECK(raw.format == WeightsFormat::RawF32WithIndex);
    CHECK(weights_equal(load_model(raw), w));
}

TEST_CASE("untied unembedding survives a round trip") {
    toy::TempDir dir("untied");
    auto w = toy::make_weights(small_spec());
    w.config.tied_embeddings = false;
    w.W_U.array() += 0.5f;
    CHECK(weights_equal(load_model(save_model(w, dir.path())), w));
}

TEST_CASE("manifest file with relative paths") {
    toy::TempDir dir("manifest");
    const auto w = toy::make_weights(small_spec());
    save_model(w, dir / "ckpt");
    std::ofstream(dir / "manifest.json") << R"({"config": "ckpt/config.json", "weights": "ckpt/model.safetensors"})";
    const auto m = CheckpointManifest::from_path(dir / "manifest.json");
    CHECK(weights_equal(load_model(m), w));
    CHECK_FALSE(m.vocab_path.has_value());
}

TEST_CASE("safetensors header is parsed by the documented layout") {
    toy::TempDir dir("header");
    write_raw(dir / "t.safetensors", {{"a", {2, 3}, {1, 2, 3, 4, 5, 6}, false}, {"b", {2}, {0.5f, -1.5f}, true}});
    const auto f = safetensors::File::open(dir / "t.safetensors");
    CHECK(f.tensors().size() == 2);
    CHECK(f.info("a").shape == std::vector<std::int64_t>{2, 3});
    CHECK(f.info("a").begin == 0);
    CHECK(f.info("a").end == 24);
    CHECK(f.read_f32("a") == std::vector<float>{1, 2, 3, 4, 5, 6});
    CHECK(f.read_f32("b") == std::vector<float>{0.5f, -1.5f});
}

TEST_CASE("corrupt checkpoints fail with a named error") {
    toy::TempDir dir("corrupt");
    const auto w = toy::make_weights(small_spec());

    SUBCASE("missing tensor") {
        write_hf_config(dir / "config.json", w.config);
        auto t = gpt2_tensors(w, "");
        t.erase(t.begin() + 5);
        const std::string expected = "missing tensor '" + gpt2_tensors(w, "")[5].name + "'";
        write_raw(dir / "model.safetensors", t);
        CHECK_THROWS_WITH(load_model(CheckpointManifest::from_directory(dir.path())),
                          doctest::Contains(expected.c_str()));
    }
    SUBCASE("shape mismatch") {
        write_hf_config(dir / "config.json", w.config);
        auto t = gpt2_tensors(w, "");
        t[0].shape = {w.config.d_model, w.config.n_vocab};
        write_raw(dir / "model.safetensors", t);
        CHECK_THROWS_WITH(load_model(CheckpointManifest::from_directory(dir.path())),
                          doctest::Contains("shape mismatch"));
    }
    SUBCASE("truncated data") {
        write_hf_config(dir / "config.json", w.config);
        write_raw(dir / "model.safetensors", gpt2_tensors(w, ""), 16);
        CHECK_THROWS(load_model(CheckpointManifest::from_directory(dir.path())));
    }
    SUBCASE("truncated header") {
        std::ofstream out(dir / "model.safetensors", std::ios::binary);
        const std::uint64_t len = 1000;
        out.write(reinterpret_cast<const char*>(&len), 8);
        out << "{\"a\":";
        out.close();
        CHECK_THROWS_WITH(safetensors::File::open(dir / "model.safetensors"), doctest::Contains("truncated"));
    }
    SUBCASE("missing files") {
        CHECK_THROWS(CheckpointManifest::from_directory(dir / "nowhere").check_files());
    }
    SUBCASE("untied weights declared tied") {
        write_hf_config(dir / "config.json", w.config);
        auto t = gpt2_tensors(w, "");
        MatF other = w.W_E;
        other.array() += 1.0f;
        t.push_back({"lm_head.weight", {w.config.n_vocab, w.config.d_model}, flat(other), false});
        write_raw(dir / "model.safetensors", t);
        CHECK_THROWS_WITH(load_model(CheckpointManifest::from_directory(dir.path())), doctest::Contains("tied"));
    }
}

TEST_CASE("config accepts both key styles") {
    const auto c = ModelConfig::from_json(json::parse(
        R"({"n_layer": 12, "n_head": 12, "n_embd": 768, "n_positions": 1024, "vocab_size": 50257,
            "n_inner": null, "activation_function": "gelu_new"})"));
    CHECK(c == ModelConfig::gpt2_small());
    CHECK(ModelConfig::from_json(c.to_json()) == c);
    CHECK_THROWS(ModelConfig::from_json(json::parse(R"({"n_layer": 1, "n_head": 3, "n_embd": 8})")));
}
