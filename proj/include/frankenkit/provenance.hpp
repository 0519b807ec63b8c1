#pragma once

// Checksums and run manifests so every emitted artifact can be traced back
// to its inputs and the exact invocation that produced it.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "frankenkit/errors.hpp"

namespace frankenkit {

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n,
                           std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const std::string& s) {
    return fnv1a(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[std::size_t(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

inline std::uint64_t file_checksum(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for checksum: " + path);
    std::uint64_t h = 0xcbf29ce484222325ull;
    std::vector<std::uint8_t> buf(1 << 16);
    while (f) {
        f.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
        h = fnv1a(buf.data(), std::size_t(f.gcount()), h);
    }
    return h;
}

// One JSON manifest per CLI run: the argv, resolved options, input file
// checksums, and the artifacts written.
struct RunManifest {
    std::vector<std::string> argv;
    nlohmann::json options = nlohmann::json::object();
    std::map<std::string, std::string> input_checksums;  // path -> hex fnv1a
    std::vector<std::string> outputs;

    void note_input(const std::string& path) { input_checksums[path] = hex64(file_checksum(path)); }
    void note_output(const std::string& path) { outputs.push_back(path); }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["argv"] = argv;
        j["options"] = options;
        j["inputs"] = input_checksums;
        j["outputs"] = outputs;
        return j;
    }

    void write(const std::string& path) const {
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw DataError("cannot write manifest: " + path);
        f << to_json().dump(2) << "\n";
    }
};

}  // namespace frankenkit
