#pragma once

// Region-wise checkpoint merging: build a hybrid model whose early, mid and
// late decoder layers are taken wholesale from one of two donor checkpoints.
// Tensor payloads move as raw bytes, so a tensor in the hybrid is always
// byte-identical to the donor it came from.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "frankenkit/errors.hpp"
#include "frankenkit/model_graph.hpp"
#include "frankenkit/provenance.hpp"
#include "frankenkit/tensor_store.hpp"

namespace frankenkit {

enum class Donor { A, B };

inline char donor_letter(Donor d) { return d == Donor::A ? 'A' : 'B'; }

inline Donor donor_from_letter(char c) {
    if (c == 'A' || c == 'a') return Donor::A;
    if (c == 'B' || c == 'b') return Donor::B;
    throw UsageError(std::string("unknown donor '") + c + "' (expected A or B)");
}

struct MergeRecipe {
    Donor early = Donor::A;
    Donor mid = Donor::A;
    Donor late = Donor::A;
    // Donor for each non-layer role. Roles absent from the map default to A.
    std::map<Role, Donor> non_layer;

    Donor for_region(Region r) const {
        switch (r) {
            case Region::early: return early;
            case Region::mid: return mid;
            case Region::late: return late;
        }
        return Donor::A;
    }

    Donor for_role(Role role) const {
        auto it = non_layer.find(role);
        return it == non_layer.end() ? Donor::A : it->second;
    }

    // "EA_MB_LB" style tag used in artifact names.
    std::string tag() const {
        std::string t = "Ex_Mx_Lx";
        t[1] = donor_letter(early);
        t[4] = donor_letter(mid);
        t[7] = donor_letter(late);
        return t;
    }

    // "A:B:B" plus any non-default role assignments, e.g. "A:B:B;head=B".
    std::string to_string() const {
        std::string s;
        s += donor_letter(early);
        s += ':';
        s += donor_letter(mid);
        s += ':';
        s += donor_letter(late);
        std::string extras;
        for (const auto& [role, donor] : non_layer) {
            if (donor == Donor::A) continue;
            extras += extras.empty() ? ";" : ",";
            extras += role_name(role);
            extras += '=';
            extras += donor_letter(donor);
        }
        return s + extras;
    }
};

namespace mergedetail {

inline Role role_from_alias(const std::string& s) {
    if (s == "embedding" || s == "embed") return Role::embedding;
    if (s == "vision_encoder" || s == "vision") return Role::vision_encoder;
    if (s == "projector") return Role::projector;
    if (s == "final_norm" || s == "norm") return Role::final_norm;
    if (s == "head") return Role::head;
    if (s == "other") return Role::other;
    throw UsageError("unknown role \"" + s +
                     "\" in merge recipe (expected embedding, vision_encoder, projector, "
                     "final_norm, head or other)");
}

}  // namespace mergedetail

// Parse "E:M:L" with optional ";role=donor,role=donor" suffix, e.g.
// "A:B:B;embed=B,head=A".
inline MergeRecipe parse_recipe(const std::string& text) {
    std::string spec = text;
    std::string extras;
    if (auto semi = spec.find(';'); semi != std::string::npos) {
        extras = spec.substr(semi + 1);
        spec = spec.substr(0, semi);
    }
    if (spec.size() != 5 || spec[1] != ':' || spec[3] != ':')
        throw UsageError("malformed merge recipe \"" + text + "\" (expected E:M:L, e.g. A:B:B)");
    MergeRecipe r;
    r.early = donor_from_letter(spec[0]);
    r.mid = donor_from_letter(spec[2]);
    r.late = donor_from_letter(spec[4]);

    std::size_t pos = 0;
    while (pos < extras.size()) {
        std::size_t comma = extras.find(',', pos);
        std::string item = extras.substr(pos, comma == std::string::npos ? comma : comma - pos);
        pos = comma == std::string::npos ? extras.size() : comma + 1;
        if (item.empty()) continue;
        std::size_t eq = item.find('=');
        if (eq == std::string::npos || eq + 2 != item.size())
            throw UsageError("malformed role assignment \"" + item + "\" in merge recipe");
        r.non_layer[mergedetail::role_from_alias(item.substr(0, eq))] =
            donor_from_letter(item[eq + 1]);
    }
    return r;
}

// All eight early/mid/late donor combinations, non-layer roles left at the
// recipe default (donor A).
inline std::vector<MergeRecipe> all_region_recipes() {
    std::vector<MergeRecipe> out;
    for (Donor e : {Donor::A, Donor::B})
        for (Donor m : {Donor::A, Donor::B})
            for (Donor l : {Donor::A, Donor::B}) out.push_back(MergeRecipe{e, m, l, {}});
    return out;
}

struct MergeResult {
    std::map<std::string, RawTensor> tensors;
    std::map<std::string, std::string> metadata;
    std::map<std::string, Donor> origin;  // tensor name -> donor it came from
};

// The donors must expose identical tensor names with identical dtypes and
// shapes; the graph decides which region or role each tensor belongs to.
inline MergeResult merge_checkpoints(const TensorArchive& a, const TensorArchive& b,
                                     const ModelGraph& graph, const MergeRecipe& recipe) {
    std::string problems;
    for (const auto& [name, _] : a.tensors())
        if (!b.contains(name)) problems += "\n  only in donor A: " + name;
    for (const auto& [name, _] : b.tensors())
        if (!a.contains(name)) problems += "\n  only in donor B: " + name;
    for (const auto& [name, ti] : a.tensors()) {
        if (!b.contains(name)) continue;
        const TensorInfo& tb = b.info(name);
        if (tb.shape != ti.shape)
            problems += "\n  shape mismatch for " + name + ": " + shape_str(ti.shape) + " vs " +
                        shape_str(tb.shape);
        else if (tb.dtype != ti.dtype)
            problems += std::string("\n  dtype mismatch for ") + name + ": " +
                        dtype_name(ti.dtype) + " vs " + dtype_name(tb.dtype);
    }
    if (!problems.empty()) throw DataError("donor checkpoints are not mergeable:" + problems);

    MergeResult out;
    for (const auto& [name, ti] : a.tensors()) {
        const TensorSlot& slot = graph.slot(name);
        Donor d = slot.role == Role::layer
                      ? recipe.for_region(graph.partition().region_of(*slot.layer))
                      : recipe.for_role(slot.role);
        const TensorArchive& src = d == Donor::A ? a : b;
        auto bytes = src.raw(name);
        out.tensors.emplace(name, RawTensor{ti.dtype, ti.shape,
                                            std::vector<std::uint8_t>(bytes.begin(), bytes.end())});
        out.origin[name] = d;
    }

    // Hybrids built from the toy model keep its config metadata loadable.
    const TensorArchive& meta_src = recipe.for_role(Role::other) == Donor::B ? b : a;
    out.metadata = meta_src.metadata();
    out.metadata["merge.recipe"] = recipe.to_string();
    const Partition& p = graph.partition();
    out.metadata["merge.partition"] = std::to_string(p.layers) + ":" +
                                      std::to_string(p.early_end) + ":" + std::to_string(p.mid_end);
    return out;
}

inline void write_merge(const MergeResult& m, const std::string& path) {
    write_archive_raw(m.tensors, m.metadata, path);
}

// Merge under every region recipe and write "<stem>_EA_MA_LA.fkpt" etc.
// into out_dir; two of the eight outputs reproduce the donor endpoints.
inline std::vector<std::string> enumerate_hybrids(const TensorArchive& a, const TensorArchive& b,
                                                  const ModelGraph& graph,
                                                  const std::string& out_dir,
                                                  const std::string& stem = "hybrid") {
    std::vector<std::string> paths;
    for (const MergeRecipe& r : all_region_recipes()) {
        MergeResult m = merge_checkpoints(a, b, graph, r);
        std::string path = out_dir + "/" + stem + "_" + r.tag() + ".fkpt";
        write_merge(m, path);
        paths.push_back(path);
    }
    return paths;
}

// Signed score gap of a merged model against its reference, rendered to one
// decimal for report annotation. The sign is '+' only for strictly positive
// deltas; an exact zero renders "-0.0" and classifies as non-positive.
struct DeltaAnnotation {
    double delta = 0.0;
    bool positive = false;
    std::string text;
};

inline DeltaAnnotation delta_annotation(double reference, double merged) {
    DeltaAnnotation a;
    a.delta = merged - reference;
    a.positive = a.delta > 0.0;
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.1f", std::abs(a.delta));
    a.text = (a.positive ? "+" : "-") + std::string(buf);
    return a;
}

// Per-region FNV-1a checksum over the merged payload bytes, tensor names
// included, in sorted name order. Two hybrids agree on a region iff they
// agree on every byte of every tensor in it.
inline std::map<std::string, std::string> region_checksums(const MergeResult& m,
                                                           const ModelGraph& graph) {
    std::map<std::string, std::uint64_t> acc;
    for (const char* r : {"early", "mid", "late", "non_layer"})
        acc[r] = 0xcbf29ce484222325ull;
    for (const auto& [name, t] : m.tensors) {
        const TensorSlot& slot = graph.slot(name);
        std::string key = slot.role == Role::layer
                              ? region_name(graph.partition().region_of(*slot.layer))
                              : "non_layer";
        std::uint64_t h = acc[key];
        h = fnv1a(reinterpret_cast<const std::uint8_t*>(name.data()), name.size(), h);
        h = fnv1a(t.bytes.data(), t.bytes.size(), h);
        acc[key] = h;
    }
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : acc) out[k] = hex64(v);
    return out;
}

}  // namespace frankenkit
