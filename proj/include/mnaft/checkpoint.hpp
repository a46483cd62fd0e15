#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnaft/tensor.hpp"

// Binary tensor container used for model checkpoints and mask sets.
//
// Layout (all integers little-endian):
//   magic "MNAF"
//   u32 version (currently 1)
//   u32 config text length, config text bytes
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               f32 values (row-major)
//   u32 CRC-32 (IEEE, reflected) of all preceding bytes

namespace mnaft {

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline const std::array<uint32_t, 256>& crc32_table() {
    static const std::array<uint32_t, 256> table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

struct Crc32 {
    uint32_t state = 0xffffffffu;
    void update(const void* data, size_t len) {
        const auto* p = static_cast<const unsigned char*>(data);
        const auto& table = crc32_table();
        for (size_t i = 0; i < len; ++i) state = table[(state ^ p[i]) & 0xffu] ^ (state >> 8);
    }
    uint32_t value() const { return state ^ 0xffffffffu; }
};

inline uint32_t crc32_bytes(const void* data, size_t len) {
    Crc32 c;
    c.update(data, len);
    return c.value();
}

namespace detail {

constexpr char kMagic[4] = {'M', 'N', 'A', 'F'};
constexpr uint32_t kVersion = 1;

struct CountingWriter {
    std::ofstream out;
    Crc32 crc;

    explicit CountingWriter(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw IoError("cannot open '" + path + "' for writing");
    }
    void write(const void* data, size_t len) {
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        crc.update(data, len);
    }
    void write_u32(uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        write(b, 4);
    }
    void write_f32(const float* v, size_t n) {
        // assumes little-endian host; asserted below
        write(v, n * sizeof(float));
    }
};

inline void require_little_endian() {
    const uint32_t probe = 1;
    unsigned char b;
    std::memcpy(&b, &probe, 1);
    if (b != 1) throw std::runtime_error("big-endian hosts are not supported");
}

struct Reader {
    std::vector<unsigned char> bytes;
    size_t pos = 0;

    explicit Reader(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot open '" + path + "' for reading");
        in.seekg(0, std::ios::end);
        bytes.resize(static_cast<size_t>(in.tellg()));
        in.seekg(0);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!in) throw IoError("short read from '" + path + "'");
    }
    void need(size_t n) const {
        if (pos + n > bytes.size()) throw IoError("truncated container");
    }
    uint32_t read_u32() {
        need(4);
        uint32_t v = bytes[pos] | (bytes[pos + 1] << 8) | (bytes[pos + 2] << 16) |
                     (static_cast<uint32_t>(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::string read_string(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
    std::vector<float> read_f32(size_t n) {
        need(n * sizeof(float));
        std::vector<float> v(n);
        std::memcpy(v.data(), bytes.data() + pos, n * sizeof(float));
        pos += n * sizeof(float);
        return v;
    }
};

} // namespace detail

inline void write_container(const std::string& path, const std::string& config_text,
                            const std::map<std::string, Tensor>& tensors) {
    detail::require_little_endian();
    detail::CountingWriter w(path);
    w.write(detail::kMagic, 4);
    w.write_u32(detail::kVersion);
    w.write_u32(static_cast<uint32_t>(config_text.size()));
    w.write(config_text.data(), config_text.size());
    w.write_u32(static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.write_u32(static_cast<uint32_t>(name.size()));
        w.write(name.data(), name.size());
        w.write_u32(static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) w.write_u32(static_cast<uint32_t>(d));
        w.write_f32(t.data.data(), t.data.size());
    }
    uint32_t crc = w.crc.value();
    unsigned char b[4] = {static_cast<unsigned char>(crc), static_cast<unsigned char>(crc >> 8),
                          static_cast<unsigned char>(crc >> 16),
                          static_cast<unsigned char>(crc >> 24)};
    w.out.write(reinterpret_cast<const char*>(b), 4);
    if (!w.out) throw IoError("write failed for '" + path + "'");
}

struct Container {
    std::string config_text;
    std::map<std::string, Tensor> tensors;
};

inline Container read_container(const std::string& path) {
    detail::require_little_endian();
    detail::Reader r(path);
    if (r.bytes.size() < 4 + 4 + 4 + 4) throw IoError("container too small: " + path);
    uint32_t stored_crc;
    std::memcpy(&stored_crc, r.bytes.data() + r.bytes.size() - 4, 4);
    uint32_t actual = crc32_bytes(r.bytes.data(), r.bytes.size() - 4);
    if (stored_crc != actual) throw IoError("CRC mismatch in '" + path + "'");

    if (std::memcmp(r.bytes.data(), detail::kMagic, 4) != 0)
        throw IoError("bad magic in '" + path + "'");
    r.pos = 4;
    uint32_t version = r.read_u32();
    if (version != detail::kVersion)
        throw IoError("unsupported container version " + std::to_string(version));

    Container c;
    uint32_t cfg_len = r.read_u32();
    c.config_text = r.read_string(cfg_len);
    uint32_t count = r.read_u32();
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = r.read_u32();
        std::string name = r.read_string(name_len);
        uint32_t rank = r.read_u32();
        std::vector<int> shape;
        int64_t numel = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape.push_back(static_cast<int>(r.read_u32()));
            numel *= shape.back();
        }
        Tensor t(shape, r.read_f32(static_cast<size_t>(numel)));
        c.tensors.emplace(std::move(name), std::move(t));
    }
    return c;
}

} // namespace mnaft
