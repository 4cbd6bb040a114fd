#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "skiptrack/errors.hpp"
#include "skiptrack/tensor.hpp"

namespace skiptrack {

// Binary tensor container. Little-endian throughout, f32 payloads only:
//   "LGTW" | version u32 | entry count u32
//   per entry: name_len u16 | name | rank u8 | dims u32 x rank | f32 data
inline constexpr std::uint32_t kWeightFileVersion = 1;
inline constexpr char kWeightFileMagic[4] = {'L', 'G', 'T', 'W'};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace wire {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    put_u32(out, std::bit_cast<std::uint32_t>(v));
}

struct Reader {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > size) {
            throw ParseError(std::string("weight file truncated while reading ") + what);
        }
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        const std::uint16_t v = static_cast<std::uint16_t>(data[pos]) |
                                static_cast<std::uint16_t>(data[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data + pos), n);
        pos += n;
        return s;
    }
};

} // namespace wire

inline std::vector<std::uint8_t> encode_weights(const NamedTensors& tensors) {
    std::set<std::string> seen;
    for (const auto& [name, t] : tensors) {
        if (name.empty() || name.size() > 0xffff) {
            throw ArgumentError("tensor name length out of range: '" + name + "'");
        }
        if (!seen.insert(name).second) throw ArgumentError("duplicate tensor name: " + name);
        if (!t.all_finite()) throw ArgumentError("tensor '" + name + "' has non-finite values");
    }
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kWeightFileMagic, kWeightFileMagic + 4);
    wire::put_u32(out, kWeightFileVersion);
    wire::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        wire::put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(static_cast<std::uint8_t>(t.ndim()));
        for (std::size_t d : t.dims()) wire::put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t.values()) wire::put_f32(out, v);
    }
    return out;
}

inline NamedTensors decode_weights(const std::uint8_t* data, std::size_t size) {
    wire::Reader r{data, size};
    r.need(4, "magic");
    if (std::memcmp(data, kWeightFileMagic, 4) != 0) {
        throw ParseError("weight file: bad magic");
    }
    r.pos = 4;
    const std::uint32_t version = r.u32("version");
    if (version != kWeightFileVersion) {
        throw ParseError("weight file: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32("entry count");
    NamedTensors out;
    out.reserve(count);
    std::set<std::string> seen;
    for (std::uint32_t e = 0; e < count; ++e) {
        const std::uint16_t name_len = r.u16("name length");
        std::string name = r.str(name_len, "name");
        if (name.empty()) throw ParseError("weight file: empty tensor name");
        if (!seen.insert(name).second) {
            throw ParseError("weight file: duplicate tensor name '" + name + "'");
        }
        r.need(1, "rank");
        const std::uint8_t rank = r.data[r.pos++];
        if (rank < 1 || rank > 4) {
            throw ParseError("weight file: tensor '" + name + "' has unsupported rank " +
                             std::to_string(rank));
        }
        std::vector<std::size_t> dims(rank);
        std::size_t numel = 1;
        for (auto& d : dims) {
            d = r.u32("dims");
            if (d == 0) throw ParseError("weight file: tensor '" + name + "' has a zero dim");
            numel *= d;
        }
        std::vector<float> values(numel);
        for (auto& v : values) v = r.f32("tensor data");
        out.emplace_back(std::move(name), Tensor(std::move(dims), std::move(values)));
    }
    if (r.pos != size) throw ParseError("weight file: trailing bytes after last entry");
    return out;
}

inline void save_weights(const std::string& path, const NamedTensors& tensors) {
    const auto bytes = encode_weights(tensors);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for '" + path + "'");
}

inline NamedTensors load_weights(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open '" + path + "' for reading");
    const std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw IoError("read failed for '" + path + "'");
    return decode_weights(bytes.data(), bytes.size());
}

inline const Tensor* find_tensor(const NamedTensors& tensors, const std::string& name) {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

} // namespace skiptrack
