#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "selftrain/errors.hpp"
#include "selftrain/numerics/tensor.hpp"

namespace selftrain::numerics {

// Checkpoint layout (little-endian):
//   "SLT1" | version u32 | count u32 |
//   count x { name_len u16 | name | rank u8 | dims u32 x rank | dtype u8 (0=f32, 1=f64) | values }
inline constexpr char kCheckpointMagic[4] = {'S', 'L', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    std::variant<Tensor<float>, Tensor<double>> tensor;

    const Shape& shape() const {
        return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, tensor);
    }
    std::uint8_t dtype_tag() const { return std::holds_alternative<Tensor<float>>(tensor) ? 0 : 1; }

    template <class Real>
    Tensor<Real> as() const {
        return std::visit([](const auto& t) { return t.template cast<Real>(); }, tensor);
    }

    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void raw(const char* p, std::size_t n) { bytes_.append(p, n); }
    const std::string& bytes() const { return bytes_; }

private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
    std::uint64_t u64() { return get_le(8); }
    std::string raw(std::size_t n) {
        need(n);
        std::string out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::size_t offset() const { return pos_; }
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CorruptionError("checkpoint truncated", pos_);
    }
    std::uint64_t get_le(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        if (nt.name.size() > 0xFFFF) throw FormatError("tensor name too long: " + nt.name.substr(0, 32) + "...");
        w.u16(static_cast<std::uint16_t>(nt.name.size()));
        w.raw(nt.name.data(), nt.name.size());
        const Shape& shape = nt.shape();
        if (shape.size() > 0xFF) throw FormatError("tensor rank too large: " + nt.name);
        w.u8(static_cast<std::uint8_t>(shape.size()));
        for (auto d : shape) w.u32(static_cast<std::uint32_t>(d));
        w.u8(nt.dtype_tag());
        std::visit(
            [&w](const auto& t) {
                using Real = typename std::decay_t<decltype(t)>::value_type;
                for (Real v : t.storage()) {
                    if constexpr (sizeof(Real) == 4) {
                        w.u32(std::bit_cast<std::uint32_t>(v));
                    } else {
                        w.u64(std::bit_cast<std::uint64_t>(v));
                    }
                }
            },
            nt.tensor);
    }
    return w.bytes();
}

inline std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
    detail::ByteReader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
        throw FormatError("not a checkpoint: magic mismatch");
    }
    r.raw(4);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor nt;
        nt.name = r.raw(r.u16());
        const std::uint8_t rank = r.u8();
        Shape shape(rank);
        for (auto& d : shape) d = r.u32();
        const std::size_t tag_offset = r.offset();
        const std::uint8_t tag = r.u8();
        const std::size_t n = shape_numel(shape);
        if (tag == 0) {
            std::vector<float> values(n);
            for (auto& v : values) v = std::bit_cast<float>(r.u32());
            nt.tensor = Tensor<float>(std::move(shape), std::move(values));
        } else if (tag == 1) {
            std::vector<double> values(n);
            for (auto& v : values) v = std::bit_cast<double>(r.u64());
            nt.tensor = Tensor<double>(std::move(shape), std::move(values));
        } else {
            throw CorruptionError("unknown dtype tag " + std::to_string(tag) + " for tensor '" + nt.name + "'",
                                  tag_offset);
        }
        out.push_back(std::move(nt));
    }
    if (!r.at_end()) throw CorruptionError("trailing bytes after last tensor", r.offset());
    return out;
}

// Writes to a sibling temporary file and renames it into place, so readers never
// observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) {
            out.close();
            std::filesystem::remove(tmp, ec);
            throw IoError("failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move " + tmp.string() + " to " + path.string());
    }
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    write_file_atomic(path, encode_checkpoint(tensors));
}

inline std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path));
}

}  // namespace selftrain::numerics
