#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace syllo::safetensors {

enum class DType { F64, F32, F16, BF16 };

std::string to_string(DType dtype);
std::size_t element_size(DType dtype);

struct TensorInfo {
    DType dtype = DType::F32;
    std::vector<std::int64_t> shape;
    std::uint64_t begin = 0; // offsets relative to the start of the data section
    std::uint64_t end = 0;

    std::int64_t numel() const;
};

// Read-only view of a .safetensors file: u64 little-endian header length, UTF-8 JSON
// header, then raw tensor bytes at the declared offsets. The file is memory-mapped.
class File {
public:
    static File open(const std::filesystem::path& path);

    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
    const std::map<std::string, TensorInfo>& tensors() const { return tensors_; }
    const nlohmann::json& metadata() const { return metadata_; }

    // Converts F64/F16/BF16 to float. Throws std::runtime_error "missing tensor ..." when
    // the name is absent or its bytes lie beyond the end of the file.
    std::vector<float> read_f32(const std::string& name) const;
    const TensorInfo& info(const std::string& name) const;

private:
    struct Mapping;
    std::shared_ptr<const Mapping> mapping_;
    std::map<std::string, TensorInfo> tensors_;
    nlohmann::json metadata_;
    std::uint64_t data_begin_ = 0;
};

struct NamedTensor {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> data;
};

// Writes F32 tensors in the order given, header padded with spaces to 8-byte alignment.
void write(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
           const nlohmann::json& metadata = nlohmann::json::object());

} // namespace syllo::safetensors
