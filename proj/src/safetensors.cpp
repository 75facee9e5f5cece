#include "syllo/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

static_assert(std::endian::native == std::endian::little, "safetensors reader assumes a little-endian host");

namespace syllo::safetensors {

struct File::Mapping {
    const std::byte* data = nullptr;
    std::size_t size = 0;

    Mapping(const Mapping&) = delete;
    Mapping& operator=(const Mapping&) = delete;

    explicit Mapping(const std::filesystem::path& path) {
        const int fd = ::open(path.c_str(), O_RDONLY);
        if (fd < 0) throw std::runtime_error("cannot open " + path.string());
        struct stat st{};
        if (::fstat(fd, &st) != 0) {
            ::close(fd);
            throw std::runtime_error("cannot stat " + path.string());
        }
        size = static_cast<std::size_t>(st.st_size);
        if (size > 0) {
            void* p = ::mmap(nullptr, size, PROT_READ, MAP_PRIVATE, fd, 0);
            if (p == MAP_FAILED) {
                ::close(fd);
                throw std::runtime_error("cannot map " + path.string());
            }
            data = static_cast<const std::byte*>(p);
        }
        ::close(fd);
    }

    ~Mapping() {
        if (data) ::munmap(const_cast<std::byte*>(data), size);
    }
};

namespace {

DType parse_dtype(const std::string& s) {
    if (s == "F32") return DType::F32;
    if (s == "F64") return DType::F64;
    if (s == "F16") return DType::F16;
    if (s == "BF16") return DType::BF16;
    throw std::runtime_error("unsupported dtype " + s);
}

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = (h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1fu;
    std::uint32_t mant = h & 0x3ffu;
    std::uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ffu;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

} // namespace

std::string to_string(DType d) {
    switch (d) {
    case DType::F64: return "F64";
    case DType::F32: return "F32";
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
    }
    return "?";
}

std::size_t element_size(DType d) {
    switch (d) {
    case DType::F64: return 8;
    case DType::F32: return 4;
    case DType::F16:
    case DType::BF16: return 2;
    }
    return 0;
}

std::int64_t TensorInfo::numel() const {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

File File::open(const std::filesystem::path& path) {
    File f;
    f.mapping_ = std::make_shared<const Mapping>(path);
    const auto& m = *f.mapping_;
    if (m.size < 8) throw std::runtime_error("safetensors: truncated header in " + path.string());
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, m.data, 8);
    if (header_len > m.size - 8) throw std::runtime_error("safetensors: truncated header in " + path.string());
    f.data_begin_ = 8 + header_len;

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(reinterpret_cast<const char*>(m.data) + 8,
                                       reinterpret_cast<const char*>(m.data) + 8 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("safetensors: bad header JSON in " + path.string() + ": " + e.what());
    }
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__metadata__") {
            f.metadata_ = it.value();
            continue;
        }
        TensorInfo info;
        info.dtype = parse_dtype(it.value().at("dtype").get<std::string>());
        info.shape = it.value().at("shape").get<std::vector<std::int64_t>>();
        const auto offsets = it.value().at("data_offsets").get<std::vector<std::uint64_t>>();
        if (offsets.size() != 2 || offsets[1] < offsets[0])
            throw std::runtime_error("safetensors: bad data_offsets for " + it.key());
        info.begin = offsets[0];
        info.end = offsets[1];
        if (info.end - info.begin != static_cast<std::uint64_t>(info.numel()) * element_size(info.dtype))
            throw std::runtime_error("safetensors: byte size disagrees with shape for " + it.key());
        f.tensors_.emplace(it.key(), std::move(info));
    }
    return f;
}

const TensorInfo& File::info(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::runtime_error("missing tensor '" + name + "'");
    return it->second;
}

std::vector<float> File::read_f32(const std::string& name) const {
    const auto& t = info(name);
    if (data_begin_ + t.end > mapping_->size)
        throw std::runtime_error("missing tensor '" + name + "': data truncated");
    const std::byte* src = mapping_->data + data_begin_ + t.begin;
    const auto n = static_cast<std::size_t>(t.numel());
    std::vector<float> out(n);
    switch (t.dtype) {
    case DType::F32: std::memcpy(out.data(), src, n * 4); break;
    case DType::F64:
        for (std::size_t i = 0; i < n; ++i) {
            double v;
            std::memcpy(&v, src + 8 * i, 8);
            out[i] = static_cast<float>(v);
        }
        break;
    case DType::F16:
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t v;
            std::memcpy(&v, src + 2 * i, 2);
            out[i] = half_to_float(v);
        }
        break;
    case DType::BF16:
        for (std::size_t i = 0; i < n; ++i) {
            std::uint16_t v;
            std::memcpy(&v, src + 2 * i, 2);
            out[i] = std::bit_cast<float>(static_cast<std::uint32_t>(v) << 16);
        }
        break;
    }
    return out;
}

void write(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors,
           const nlohmann::json& metadata) {
    nlohmann::ordered_json header;
    if (!metadata.empty()) header["__metadata__"] = metadata;
    std::uint64_t offset = 0;
    for (const auto& t : tensors) {
        std::int64_t numel = 1;
        for (auto s : t.shape) numel *= s;
        if (numel != static_cast<std::int64_t>(t.data.size()))
            throw std::invalid_argument("safetensors write: shape/data size mismatch for " + t.name);
        const std::uint64_t bytes = t.data.size() * 4;
        header[t.name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string text = header.dump();
    while ((8 + text.size()) % 8 != 0) text.push_back(' ');

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& t : tensors)
        out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * 4));
    if (!out) throw std::runtime_error("short write to " + path.string());
}

} // namespace syllo::safetensors
