#include "syllo/checkpoint.hpp"

#include "syllo/safetensors.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>
#include <functional>
#include <stdexcept>

namespace syllo {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("cannot parse " + path.string() + ": " + e.what());
    }
}

struct RawTensor {
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

// Uniform tensor access over both on-disk formats.
class TensorSource {
public:
    virtual ~TensorSource() = default;
    virtual bool contains(const std::string& name) const = 0;
    virtual std::vector<std::int64_t> shape(const std::string& name) const = 0;
    virtual std::vector<float> read(const std::string& name) const = 0;
};

class SafetensorsSource : public TensorSource {
public:
    explicit SafetensorsSource(const fs::path& p) : file_(safetensors::File::open(p)) {}
    bool contains(const std::string& n) const override { return file_.contains(n); }
    std::vector<std::int64_t> shape(const std::string& n) const override { return file_.info(n).shape; }
    std::vector<float> read(const std::string& n) const override { return file_.read_f32(n); }

private:
    safetensors::File file_;
};

class RawSource : public TensorSource {
public:
    RawSource(const fs::path& weights, const fs::path& index) : path_(weights) {
        const auto j = read_json(index);
        for (const auto& [name, entry] : j.at("tensors").items())
            index_[name] = {entry.at("shape").get<std::vector<std::int64_t>>(), entry.at("offset").get<std::uint64_t>()};
        size_ = fs::file_size(weights);
    }
    bool contains(const std::string& n) const override { return index_.count(n) != 0; }
    std::vector<std::int64_t> shape(const std::string& n) const override { return entry(n).shape; }
    std::vector<float> read(const std::string& n) const override {
        const auto& e = entry(n);
        std::int64_t numel = 1;
        for (auto s : e.shape) numel *= s;
        if (e.offset + static_cast<std::uint64_t>(numel) * 4 > size_)
            throw std::runtime_error("missing tensor '" + n + "': data truncated");
        std::vector<float> out(static_cast<std::size_t>(numel));
        std::ifstream in(path_, std::ios::binary);
        in.seekg(static_cast<std::streamoff>(e.offset));
        in.read(reinterpret_cast<char*>(out.data()), numel * 4);
        if (!in) throw std::runtime_error("missing tensor '" + n + "': short read");
        return out;
    }

private:
    struct Entry {
        std::vector<std::int64_t> shape;
        std::uint64_t offset = 0;
    };
    const Entry& entry(const std::string& n) const {
        auto it = index_.find(n);
        if (it == index_.end()) throw std::runtime_error("missing tensor '" + n + "'");
        return it->second;
    }
    fs::path path_;
    std::map<std::string, Entry> index_;
    std::uint64_t size_ = 0;
};

std::string shape_str(const std::vector<std::int64_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

class Reader {
public:
    Reader(const TensorSource& src, std::string prefix) : src_(src), prefix_(std::move(prefix)) {}

    MatF matrix(const std::string& name, std::int64_t rows, std::int64_t cols) const {
        auto data = fetch(name, {rows, cols});
        return Eigen::Map<MatF>(data.data(), rows, cols);
    }

    VecF vector(const std::string& name, std::int64_t n) const {
        auto data = fetch(name, {n});
        return Eigen::Map<VecF>(data.data(), n);
    }

    bool contains(const std::string& name) const { return src_.contains(prefix_ + name); }

private:
    std::vector<float> fetch(const std::string& name, const std::vector<std::int64_t>& expected) const {
        const std::string full = prefix_ + name;
        if (!src_.contains(full)) throw std::runtime_error("missing tensor '" + full + "'");
        const auto actual = src_.shape(full);
        if (actual != expected)
            throw std::runtime_error("shape mismatch for '" + full + "': expected " + shape_str(expected) +
                                     ", got " + shape_str(actual));
        return src_.read(full);
    }

    const TensorSource& src_;
    std::string prefix_;
};

WeightsF read_weights(const ModelConfig& c, const TensorSource& src) {
    const std::string prefix = src.contains("wte.weight") ? ""
                               : src.contains("transformer.wte.weight") ? "transformer."
                                                                         : "";
    Reader r(src, prefix);
    const int d = c.d_model;

    WeightsF w;
    w.config = c;
    w.W_E = r.matrix("wte.weight", c.n_vocab, d);
    w.W_pos = r.matrix("wpe.weight", c.n_ctx, d);
    w.blocks.resize(c.n_layers);
    for (int l = 0; l < c.n_layers; ++l) {
        auto& b = w.blocks[l];
        const std::string p = "h." + std::to_string(l) + ".";
        b.ln1 = {r.vector(p + "ln_1.weight", d), r.vector(p + "ln_1.bias", d)};
        b.ln2 = {r.vector(p + "ln_2.weight", d), r.vector(p + "ln_2.bias", d)};

        const MatF qkv = r.matrix(p + "attn.c_attn.weight", d, 3 * d);
        const VecF qkv_b = r.vector(p + "attn.c_attn.bias", 3 * d);
        b.attn.W_Q = qkv.middleCols(0, d);
        b.attn.W_K = qkv.middleCols(d, d);
        b.attn.W_V = qkv.middleCols(2 * d, d);
        b.attn.b_Q = qkv_b.segment(0, d);
        b.attn.b_K = qkv_b.segment(d, d);
        b.attn.b_V = qkv_b.segment(2 * d, d);
        b.attn.W_O = r.matrix(p + "attn.c_proj.weight", d, d);
        b.attn.b_O = r.vector(p + "attn.c_proj.bias", d);
        b.attn.d_head = c.d_head;

        b.mlp.W_in = r.matrix(p + "mlp.c_fc.weight", d, c.d_mlp);
        b.mlp.b_in = r.vector(p + "mlp.c_fc.bias", c.d_mlp);
        b.mlp.W_out = r.matrix(p + "mlp.c_proj.weight", c.d_mlp, d);
        b.mlp.b_out = r.vector(p + "mlp.c_proj.bias", d);
    }
    w.ln_final = {r.vector("ln_f.weight", d), r.vector("ln_f.bias", d)};

    // The LM head sits outside the "transformer." prefix in GPT2LMHeadModel exports.
    Reader head(src, "");
    if (head.contains("lm_head.weight")) {
        w.W_U = head.matrix("lm_head.weight", c.n_vocab, d).transpose();
    } else if (c.tied_embeddings) {
        w.W_U = w.W_E.transpose();
    } else {
        throw std::runtime_error("missing tensor 'lm_head.weight' (config declares untied embeddings)");
    }

    w.validate_shapes();
    if (c.tied_embeddings) {
        const double err = w.tied_embedding_error();
        if (err > kTiedEmbeddingTolerance)
            throw std::runtime_error("tied embedding check failed: max |W_U - W_E^T| = " + std::to_string(err));
    }
    return w;
}

std::vector<safetensors::NamedTensor> to_named(const WeightsF& w) {
    const auto& c = w.config;
    std::vector<safetensors::NamedTensor> out;
    auto add = [&out](std::string name, std::vector<std::int64_t> shape, const auto& m) {
        std::vector<float> data(static_cast<std::size_t>(m.size()));
        Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            data.data(), m.rows(), m.cols()) = m;
        out.push_back({std::move(name), std::move(shape), std::move(data)});
    };
    const int d = c.d_model;
    add("wte.weight", {c.n_vocab, d}, w.W_E);
    add("wpe.weight", {c.n_ctx, d}, w.W_pos);
    for (int l = 0; l < c.n_layers; ++l) {
        const auto& b = w.blocks[l];
        const std::string p = "h." + std::to_string(l) + ".";
        add(p + "ln_1.weight", {d}, b.ln1.scale);
        add(p + "ln_1.bias", {d}, b.ln1.bias);
        MatF qkv(d, 3 * d);
        qkv << b.attn.W_Q, b.attn.W_K, b.attn.W_V;
        VecF qkv_b(3 * d);
        qkv_b << b.attn.b_Q, b.attn.b_K, b.attn.b_V;
        add(p + "attn.c_attn.weight", {d, 3 * d}, qkv);
        add(p + "attn.c_attn.bias", {3 * d}, qkv_b);
        add(p + "attn.c_proj.weight", {d, d}, b.attn.W_O);
        add(p + "attn.c_proj.bias", {d}, b.attn.b_O);
        add(p + "ln_2.weight", {d}, b.ln2.scale);
        add(p + "ln_2.bias", {d}, b.ln2.bias);
        add(p + "mlp.c_fc.weight", {d, c.d_mlp}, b.mlp.W_in);
        add(p + "mlp.c_fc.bias", {c.d_mlp}, b.mlp.b_in);
        add(p + "mlp.c_proj.weight", {c.d_mlp, d}, b.mlp.W_out);
        add(p + "mlp.c_proj.bias", {d}, b.mlp.b_out);
    }
    add("ln_f.weight", {d}, w.ln_final.scale);
    add("ln_f.bias", {d}, w.ln_final.bias);
    if (!c.tied_embeddings) add("lm_head.weight", {c.n_vocab, d}, MatF(w.W_U.transpose()));
    return out;
}

void write_config(const ModelConfig& c, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << c.to_json().dump(2) << "\n";
}

} // namespace

CheckpointManifest CheckpointManifest::from_directory(const fs::path& dir) {
    CheckpointManifest m;
    m.config_path = dir / "config.json";
    if (fs::exists(dir / "weights.index.json")) {
        m.format = WeightsFormat::RawF32WithIndex;
        m.weights_path = dir / "weights.f32";
        m.index_path = dir / "weights.index.json";
    } else {
        m.weights_path = dir / "model.safetensors";
    }
    if (fs::exists(dir / "vocab.json")) m.vocab_path = dir / "vocab.json";
    if (fs::exists(dir / "merges.txt")) m.merges_path = dir / "merges.txt";
    return m;
}

CheckpointManifest CheckpointManifest::from_file(const fs::path& manifest) {
    const auto j = read_json(manifest);
    const fs::path base = manifest.parent_path();
    auto resolve = [&base](const std::string& p) {
        fs::path path(p);
        return path.is_absolute() ? path : base / path;
    };
    CheckpointManifest m;
    m.config_path = resolve(j.at("config").get<std::string>());
    m.weights_path = resolve(j.at("weights").get<std::string>());
    if (j.contains("vocab")) m.vocab_path = resolve(j["vocab"].get<std::string>());
    if (j.contains("merges")) m.merges_path = resolve(j["merges"].get<std::string>());
    if (j.contains("index")) m.index_path = resolve(j["index"].get<std::string>());
    const auto format = j.value("format", std::string("safetensors"));
    if (format == "safetensors")
        m.format = WeightsFormat::Safetensors;
    else if (format == "raw-f32-with-index")
        m.format = WeightsFormat::RawF32WithIndex;
    else
        throw std::runtime_error("manifest: unknown format '" + format + "'");
    return m;
}

CheckpointManifest CheckpointManifest::from_path(const fs::path& path) {
    if (fs::is_directory(path)) return from_directory(path);
    if (fs::exists(path)) return from_file(path);
    throw std::runtime_error("checkpoint not found: " + path.string());
}

void CheckpointManifest::check_files() const {
    auto need = [](const fs::path& p, const char* what) {
        if (!fs::exists(p)) throw std::runtime_error(std::string("checkpoint ") + what + " not found: " + p.string());
    };
    need(config_path, "config");
    need(weights_path, "weights");
    if (format == WeightsFormat::RawF32WithIndex) {
        if (!index_path) throw std::runtime_error("raw-f32-with-index checkpoint needs an index file");
        need(*index_path, "index");
    }
    if (vocab_path) need(*vocab_path, "vocab");
    if (merges_path) need(*merges_path, "merges");
}

WeightsF load_model(const CheckpointManifest& manifest) {
    manifest.check_files();
    const ModelConfig config = ModelConfig::from_json(read_json(manifest.config_path));
    if (manifest.format == WeightsFormat::Safetensors) return read_weights(config, SafetensorsSource(manifest.weights_path));
    return read_weights(config, RawSource(manifest.weights_path, *manifest.index_path));
}

CheckpointManifest save_model(const WeightsF& weights, const fs::path& dir) {
    weights.validate_shapes();
    fs::create_directories(dir);
    write_config(weights.config, dir / "config.json");
    safetensors::write(dir / "model.safetensors", to_named(weights), {{"format", "pt"}});
    return CheckpointManifest::from_directory(dir);
}

CheckpointManifest save_model_raw(const WeightsF& weights, const fs::path& dir) {
    weights.validate_shapes();
    fs::create_directories(dir);
    write_config(weights.config, dir / "config.json");
    nlohmann::json index;
    std::ofstream out(dir / "weights.f32", std::ios::binary);
    std::uint64_t offset = 0;
    for (const auto& t : to_named(weights)) {
        index["tensors"][t.name] = {{"shape", t.shape}, {"offset", offset}};
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
        offset += t.data.size() * 4;
    }
    if (!out) throw std::runtime_error("short write to " + (dir / "weights.f32").string());
    std::ofstream(dir / "weights.index.json") << index.dump(2) << "\n";
    return CheckpointManifest::from_directory(dir);
}

} // namespace syllo
