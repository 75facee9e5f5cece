#pragma once

#include "syllo/weights.hpp"

#include <filesystem>
#include <optional>

namespace syllo {

enum class WeightsFormat { Safetensors, RawF32WithIndex };

// Where a checkpoint lives on disk. vocab/merges are only needed for text prompts.
struct CheckpointManifest {
    std::filesystem::path config_path;
    std::filesystem::path weights_path;
    std::optional<std::filesystem::path> vocab_path;
    std::optional<std::filesystem::path> merges_path;
    // Only for RawF32WithIndex: JSON {"tensors": {name: {"shape": [...], "offset": bytes}}}.
    std::optional<std::filesystem::path> index_path;
    WeightsFormat format = WeightsFormat::Safetensors;

    // Directory layout: config.json, model.safetensors (or weights.f32 + weights.index.json),
    // and optionally vocab.json / merges.txt.
    static CheckpointManifest from_directory(const std::filesystem::path& dir);

    // JSON file {"config", "weights", "vocab", "merges", "index", "format"}; relative paths
    // resolve against the manifest's directory.
    static CheckpointManifest from_file(const std::filesystem::path& manifest);

    // A directory or a manifest file.
    static CheckpointManifest from_path(const std::filesystem::path& path);

    // Throws std::runtime_error naming the first missing file.
    void check_files() const;
};

// Reads config + weights, validates every shape, splits the fused c_attn projection into
// Q, K, V (in that order) and checks the tied unembedding. Tensor names follow the
// published GPT-2 checkpoint, with or without a "transformer." prefix.
WeightsF load_model(const CheckpointManifest& manifest);

// Writes config.json and model.safetensors (GPT-2 tensor names) into dir.
CheckpointManifest save_model(const WeightsF& weights, const std::filesystem::path& dir);

// Writes config.json, weights.f32 and weights.index.json into dir.
CheckpointManifest save_model_raw(const WeightsF& weights, const std::filesystem::path& dir);

inline constexpr double kTiedEmbeddingTolerance = 1e-5;

} // namespace syllo
