#pragma once

// Binary tensor-archive container used for every checkpoint in the toolkit.
//
// File layout (bit-exact, compatible with the common "JSON header + raw
// payload" tensor container):
//   bytes 0..7    unsigned 64-bit little-endian header length N
//   bytes 8..8+N  UTF-8 JSON object: tensor name -> {"dtype": "F32"|"F16"|
//                 "BF16", "shape": [ints], "data_offsets": [begin, end]},
//                 plus an optional "__metadata__": {string: string} entry
//   8+N..EOF      payload; offsets are relative to the payload start, data
//                 is little-endian row-major
//
// Writing is canonical: names sorted, offsets assigned contiguously in name
// order, header serialized with sorted keys and no whitespace. An archive
// written by this module survives open -> write byte-identically.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "frankenkit/errors.hpp"
#include "frankenkit/matrix.hpp"

namespace frankenkit {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

enum class Dtype { f32, f16, bf16 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::f32 ? 4 : 2; }

inline const char* dtype_name(Dtype d) {
    switch (d) {
        case Dtype::f32: return "F32";
        case Dtype::f16: return "F16";
        case Dtype::bf16: return "BF16";
    }
    return "?";
}

inline Dtype dtype_from_name(const std::string& s, const std::string& tensor) {
    if (s == "F32") return Dtype::f32;
    if (s == "F16") return Dtype::f16;
    if (s == "BF16") return Dtype::bf16;
    throw DataError("tensor '" + tensor + "': unknown dtype \"" + s + "\"");
}

// ---------------------------------------------------------------------------
// f16 / bf16 <-> f32 conversion. Widening is exact; narrowing rounds to
// nearest-even. NaN payloads are truncated, never rounded, so widen+narrow
// is the identity on every 16-bit pattern.
// ---------------------------------------------------------------------------

namespace halfdetail {

inline std::uint32_t f16_to_f32_bits(std::uint16_t h) {
    std::uint32_t sign = (std::uint32_t(h) & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1Fu;
    std::uint32_t man = h & 0x3FFu;
    if (exp == 0) {
        if (man == 0) return sign;
        int shift = 0;
        while (!(man & 0x400u)) {
            man <<= 1;
            ++shift;
        }
        man &= 0x3FFu;
        return sign | (std::uint32_t(113 - shift) << 23) | (man << 13);
    }
    if (exp == 31) return sign | 0x7F800000u | (man << 13);
    return sign | ((exp + 112u) << 23) | (man << 13);
}

inline std::uint16_t f32_to_f16_bits(std::uint32_t u) {
    std::uint16_t sign = std::uint16_t((u >> 16) & 0x8000u);
    std::uint32_t abs = u & 0x7FFFFFFFu;
    if (abs >= 0x7F800000u) {
        if (abs == 0x7F800000u) return sign | 0x7C00u;
        std::uint16_t man = std::uint16_t((abs >> 13) & 0x3FFu);
        if (man == 0) man = 0x200u;
        return sign | 0x7C00u | man;
    }
    int e = int(abs >> 23) - 127 + 15;
    std::uint32_t man = abs & 0x7FFFFFu;
    if (e >= 31) return sign | 0x7C00u;  // overflows to infinity
    if (e <= 0) {
        if (e < -10) return sign;  // below half the smallest subnormal
        std::uint32_t full = 0x800000u | man;
        int shift = 14 - e;  // 13 dropped bits plus the denormal shift
        std::uint32_t half = 1u << (shift - 1);
        std::uint32_t rest = full & (2 * half - 1);
        std::uint32_t out = full >> shift;
        if (rest > half || (rest == half && (out & 1u))) ++out;
        return sign | std::uint16_t(out);
    }
    std::uint32_t out = (std::uint32_t(e) << 10) | (man >> 13);
    std::uint32_t rest = man & 0x1FFFu;
    if (rest > 0x1000u || (rest == 0x1000u && (out & 1u))) ++out;
    return sign | std::uint16_t(out);  // mantissa carry may roll into inf
}

inline std::uint32_t bf16_to_f32_bits(std::uint16_t h) {
    return std::uint32_t(h) << 16;
}

inline std::uint16_t f32_to_bf16_bits(std::uint32_t u) {
    if ((u & 0x7FFFFFFFu) > 0x7F800000u) {
        std::uint16_t t = std::uint16_t(u >> 16);
        if ((t & 0x7Fu) == 0) t |= 0x40u;  // keep NaN a NaN
        return t;
    }
    std::uint32_t r = u + 0x7FFFu + ((u >> 16) & 1u);
    return std::uint16_t(r >> 16);
}

inline float f16_to_f32(std::uint16_t h) {
    return std::bit_cast<float>(f16_to_f32_bits(h));
}
inline float bf16_to_f32(std::uint16_t h) {
    return std::bit_cast<float>(bf16_to_f32_bits(h));
}
inline std::uint16_t f32_to_f16(float f) {
    return f32_to_f16_bits(std::bit_cast<std::uint32_t>(f));
}
inline std::uint16_t f32_to_bf16(float f) {
    return f32_to_bf16_bits(std::bit_cast<std::uint32_t>(f));
}

}  // namespace halfdetail

// ---------------------------------------------------------------------------
// Archive
// ---------------------------------------------------------------------------

struct TensorInfo {
    Dtype dtype = Dtype::f32;
    std::vector<std::size_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }
    std::size_t byte_length() const { return std::size_t(end - begin); }
};

class TensorArchive {
public:
    static TensorArchive open(const std::string& path);

    const std::map<std::string, TensorInfo>& tensors() const { return tensors_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }
    std::size_t size() const { return tensors_.size(); }
    bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(tensors_.size());
        for (const auto& [n, _] : tensors_) out.push_back(n);
        return out;
    }

    const TensorInfo& info(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end())
            throw DataError("tensor '" + name + "' not present in archive");
        return it->second;
    }

    // Raw payload bytes, undecoded. Used by the bit-exact merge path.
    std::span<const std::uint8_t> raw(const std::string& name) const {
        const TensorInfo& ti = info(name);
        return {payload_.data() + ti.begin, std::size_t(ti.end - ti.begin)};
    }

    // Decode to f32. Widening from f16/bf16 is lossless.
    Matrix read(const std::string& name) const {
        const TensorInfo& ti = info(name);
        std::span<const std::uint8_t> bytes = raw(name);
        std::size_t n = ti.numel();
        std::vector<float> out(n);
        switch (ti.dtype) {
            case Dtype::f32:
                std::memcpy(out.data(), bytes.data(), n * 4);
                break;
            case Dtype::f16:
                for (std::size_t i = 0; i < n; ++i) {
                    std::uint16_t h;
                    std::memcpy(&h, bytes.data() + 2 * i, 2);
                    out[i] = halfdetail::f16_to_f32(h);
                }
                break;
            case Dtype::bf16:
                for (std::size_t i = 0; i < n; ++i) {
                    std::uint16_t h;
                    std::memcpy(&h, bytes.data() + 2 * i, 2);
                    out[i] = halfdetail::bf16_to_f32(h);
                }
                break;
        }
        return Matrix(ti.shape, std::move(out));
    }

private:
    std::map<std::string, TensorInfo> tensors_;
    std::map<std::string, std::string> metadata_;
    std::vector<std::uint8_t> payload_;
};

inline TensorArchive TensorArchive::open(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open archive: " + path);
    f.seekg(0, std::ios::end);
    std::uint64_t file_size = std::uint64_t(f.tellg());
    f.seekg(0);

    if (file_size < 8)
        throw DataError(path + ": malformed header: file shorter than the 8-byte length prefix");
    std::uint64_t header_len = 0;
    f.read(reinterpret_cast<char*>(&header_len), 8);
    if (header_len > file_size - 8)
        throw DataError(path + ": malformed header: declared length " +
                        std::to_string(header_len) + " exceeds file size");

    std::string header(header_len, '\0');
    f.read(header.data(), std::streamsize(header_len));

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed header: " + e.what());
    }
    if (!j.is_object()) throw DataError(path + ": malformed header: not a JSON object");

    TensorArchive a;
    a.payload_.resize(file_size - 8 - header_len);
    f.read(reinterpret_cast<char*>(a.payload_.data()), std::streamsize(a.payload_.size()));
    const std::uint64_t payload_size = a.payload_.size();

    for (const auto& [name, entry] : j.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object())
                throw DataError(path + ": malformed header: __metadata__ is not an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string())
                    throw DataError(path + ": malformed header: __metadata__ value for \"" + k +
                                    "\" is not a string");
                a.metadata_[k] = v.get<std::string>();
            }
            continue;
        }
        if (name.empty()) throw DataError(path + ": malformed header: empty tensor name");
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets"))
            throw DataError(path + ": tensor '" + name +
                            "': malformed header entry (need dtype, shape, data_offsets)");

        TensorInfo ti;
        ti.dtype = dtype_from_name(entry["dtype"].get<std::string>(), name);
        for (const auto& d : entry["shape"]) {
            if (!d.is_number_integer() || d.get<std::int64_t>() < 0)
                throw DataError(path + ": tensor '" + name + "': malformed shape");
            ti.shape.push_back(std::size_t(d.get<std::int64_t>()));
        }
        const auto& off = entry["data_offsets"];
        if (!off.is_array() || off.size() != 2)
            throw DataError(path + ": tensor '" + name + "': malformed data_offsets");
        ti.begin = off[0].get<std::uint64_t>();
        ti.end = off[1].get<std::uint64_t>();
        if (ti.end < ti.begin)
            throw DataError(path + ": tensor '" + name + "': data_offsets end " +
                            std::to_string(ti.end) + " precedes begin " + std::to_string(ti.begin));
        if (ti.end > payload_size)
            throw DataError(path + ": tensor '" + name + "': truncated payload: range ends at byte " +
                            std::to_string(ti.end) + " but payload holds " +
                            std::to_string(payload_size));

        std::size_t expect = 0;
        bool overflow = false;
        std::size_t n = 1;
        for (std::size_t d : ti.shape)
            if (__builtin_mul_overflow(n, d, &n)) overflow = true;
        if (!overflow) overflow = __builtin_mul_overflow(n, dtype_size(ti.dtype), &expect);
        if (overflow || expect != ti.end - ti.begin)
            throw DataError(path + ": tensor '" + name + "': length mismatch: data_offsets [" +
                            std::to_string(ti.begin) + "," + std::to_string(ti.end) + ") hold " +
                            std::to_string(ti.end - ti.begin) + " bytes but dtype " +
                            dtype_name(ti.dtype) + " shape " + shape_str(ti.shape) + " needs " +
                            (overflow ? std::string("an overflowing count") : std::to_string(expect)));

        a.tensors_.emplace(name, std::move(ti));
    }

    // Non-empty byte ranges must not overlap.
    std::vector<std::pair<std::uint64_t, const std::pair<const std::string, TensorInfo>*>> spans;
    for (const auto& kv : a.tensors_)
        if (kv.second.end > kv.second.begin) spans.emplace_back(kv.second.begin, &kv);
    std::sort(spans.begin(), spans.end(),
              [](const auto& l, const auto& r) { return l.first < r.first; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
        const auto& prev = *spans[i - 1].second;
        const auto& cur = *spans[i].second;
        if (cur.second.begin < prev.second.end)
            throw DataError(path + ": tensor '" + cur.first + "': overlapping offsets: range [" +
                            std::to_string(cur.second.begin) + "," + std::to_string(cur.second.end) +
                            ") intersects tensor '" + prev.first + "' ending at byte " +
                            std::to_string(prev.second.end));
    }
    return a;
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

struct TensorSpec {
    Dtype dtype = Dtype::f32;
    std::vector<std::size_t> shape;
    std::vector<float> data;  // narrowed on write if dtype != f32
};

struct RawTensor {
    Dtype dtype = Dtype::f32;
    std::vector<std::size_t> shape;
    std::vector<std::uint8_t> bytes;
};

namespace storedetail {

inline void write_file(const std::string& path, const std::map<std::string, std::string>& metadata,
                       const std::map<std::string, RawTensor>& tensors) {
    nlohmann::json header = nlohmann::json::object();
    if (!metadata.empty()) {
        nlohmann::json meta = nlohmann::json::object();
        for (const auto& [k, v] : metadata) meta[k] = v;
        header["__metadata__"] = meta;
    }
    std::uint64_t cursor = 0;
    for (const auto& [name, t] : tensors) {
        if (name.empty()) throw DataError("write_archive: empty tensor name");
        nlohmann::json e = nlohmann::json::object();
        e["dtype"] = dtype_name(t.dtype);
        e["shape"] = t.shape;
        e["data_offsets"] = {cursor, cursor + t.bytes.size()};
        header[name] = e;
        cursor += t.bytes.size();
    }
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path);
    std::uint64_t n = hs.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    f.write(hs.data(), std::streamsize(hs.size()));
    for (const auto& [_, t] : tensors)
        f.write(reinterpret_cast<const char*>(t.bytes.data()), std::streamsize(t.bytes.size()));
    if (!f) throw DataError("write failed: " + path);
}

}  // namespace storedetail

inline void write_archive_raw(const std::map<std::string, RawTensor>& tensors,
                              const std::map<std::string, std::string>& metadata,
                              const std::string& path) {
    for (const auto& [name, t] : tensors) {
        std::size_t n = 1;
        for (std::size_t d : t.shape) n *= d;
        if (t.bytes.size() != n * dtype_size(t.dtype))
            throw DataError("write_archive: tensor '" + name + "': byte length " +
                            std::to_string(t.bytes.size()) + " does not match shape " +
                            shape_str(t.shape));
    }
    storedetail::write_file(path, metadata, tensors);
}

inline void write_archive(const std::map<std::string, TensorSpec>& tensors,
                          const std::map<std::string, std::string>& metadata,
                          const std::string& path) {
    std::map<std::string, RawTensor> raw;
    for (const auto& [name, t] : tensors) {
        std::size_t n = 1;
        for (std::size_t d : t.shape) n *= d;
        if (t.data.size() != n)
            throw DataError("write_archive: tensor '" + name + "': " + std::to_string(t.data.size()) +
                            " values do not match shape " + shape_str(t.shape));
        RawTensor r;
        r.dtype = t.dtype;
        r.shape = t.shape;
        r.bytes.resize(n * dtype_size(t.dtype));
        switch (t.dtype) {
            case Dtype::f32:
                std::memcpy(r.bytes.data(), t.data.data(), n * 4);
                break;
            case Dtype::f16:
                for (std::size_t i = 0; i < n; ++i) {
                    std::uint16_t h = halfdetail::f32_to_f16(t.data[i]);
                    std::memcpy(r.bytes.data() + 2 * i, &h, 2);
                }
                break;
            case Dtype::bf16:
                for (std::size_t i = 0; i < n; ++i) {
                    std::uint16_t h = halfdetail::f32_to_bf16(t.data[i]);
                    std::memcpy(r.bytes.data() + 2 * i, &h, 2);
                }
                break;
        }
        raw.emplace(name, std::move(r));
    }
    storedetail::write_file(path, metadata, raw);
}

// Convenience for rewriting an opened archive unchanged (dtypes preserved).
inline void write_archive(const TensorArchive& a, const std::string& path) {
    std::map<std::string, RawTensor> raw;
    for (const auto& [name, ti] : a.tensors()) {
        auto bytes = a.raw(name);
        raw.emplace(name, RawTensor{ti.dtype, ti.shape,
                                    std::vector<std::uint8_t>(bytes.begin(), bytes.end())});
    }
    storedetail::write_file(path, a.metadata(), raw);
}

}  // namespace frankenkit
