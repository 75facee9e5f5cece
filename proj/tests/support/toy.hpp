#pragma once

#include "syllo/checkpoint.hpp"
#include "syllo/weights.hpp"

#include <cstdint>
#include <filesystem>
#include <set>
#include <vector>

namespace toy {

enum class Planted { CopyHead, SuppressionHead, InductionPair };

struct ToySpec {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 16;
    int n_vocab = 16;
    int n_ctx = 32;
    std::uint64_t seed = 1;
    syllo::Activation activation = syllo::Activation::GeluTanh;
    std::set<Planted> planted;
    float scale = 0.3f; // std of the random weights

    syllo::ModelConfig config() const;
};

// Seeded Gaussian weights. Planted behaviours overwrite parts of them:
//   CopyHead / SuppressionHead: one-hot token embeddings (5x), no positions, tied unembedding,
//     head 0.0 with W_OV = +I / -I, MLPs scaled down so the embedding dominates.
//   InductionPair: d_model 32, n_vocab 8; head 0.0 copies the previous token into dims 24..31
//     and head 1.0 matches the current token against them. Everything else is zero.
syllo::WeightsF make_weights(const ToySpec& spec);

// make_weights, saved as a safetensors checkpoint in dir.
syllo::CheckpointManifest build_toy(const ToySpec& spec, const std::filesystem::path& dir);

// Straight-line double-precision GPT-2 forward with no hooks: positions x n_vocab.
std::vector<std::vector<double>> brute_force_logits(const syllo::WeightsF& w, const std::vector<int>& tokens);

// Random weights with the real GPT-2 vocabulary size plus vocab.json / merges.txt copied
// into dir, so text prompts and the CLI run end to end.
syllo::CheckpointManifest build_text_toy(const std::filesystem::path& dir, std::uint64_t seed = 7);

std::filesystem::path data_dir();
std::filesystem::path gpt2_vocab();
std::filesystem::path gpt2_merges();

// Fresh empty directory under the system temp dir, removed by the destructor.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace toy
