#pragma once

// Maps raw tensor names onto model structure: which decoder layer a tensor
// belongs to, which non-layer role it plays, and how the layer stack splits
// into early / mid / late regions.

#include <cstddef>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "frankenkit/errors.hpp"
#include "frankenkit/tensor_store.hpp"

namespace frankenkit {

enum class Role {
    layer,
    embedding,
    vision_encoder,
    projector,
    final_norm,
    head,
    other,
};

inline const char* role_name(Role r) {
    switch (r) {
        case Role::layer: return "layer";
        case Role::embedding: return "embedding";
        case Role::vision_encoder: return "vision_encoder";
        case Role::projector: return "projector";
        case Role::final_norm: return "final_norm";
        case Role::head: return "head";
        case Role::other: return "other";
    }
    return "?";
}

enum class Region { early, mid, late };

inline const char* region_name(Region r) {
    switch (r) {
        case Region::early: return "early";
        case Region::mid: return "mid";
        case Region::late: return "late";
    }
    return "?";
}

inline Region region_from_name(const std::string& s) {
    if (s == "early") return Region::early;
    if (s == "mid") return Region::mid;
    if (s == "late") return Region::late;
    throw DataError("unknown region name \"" + s + "\" (expected early, mid or late)");
}

// Half-open [begin, end) layer index ranges per region.
struct Partition {
    std::size_t layers = 0;
    std::size_t early_end = 0;  // early = [0, early_end)
    std::size_t mid_end = 0;    // mid   = [early_end, mid_end), late = [mid_end, layers)

    Region region_of(std::size_t layer) const {
        if (layer >= layers)
            throw DataError("layer " + std::to_string(layer) + " out of range for a " +
                            std::to_string(layers) + "-layer stack");
        if (layer < early_end) return Region::early;
        if (layer < mid_end) return Region::mid;
        return Region::late;
    }

    std::pair<std::size_t, std::size_t> range(Region r) const {
        switch (r) {
            case Region::early: return {0, early_end};
            case Region::mid: return {early_end, mid_end};
            case Region::late: return {mid_end, layers};
        }
        return {0, 0};
    }
};

// Split L layers into three contiguous regions. The early region takes
// ceil(L/3) layers and the mid region takes the ceiling half of what is
// left, so 28 layers split 10/9/9.
inline Partition partition_layers(std::size_t layers) {
    if (layers < 3)
        throw DataError("cannot partition " + std::to_string(layers) +
                        " layers into three non-empty regions");
    Partition p;
    p.layers = layers;
    p.early_end = (layers + 2) / 3;
    std::size_t rest = layers - p.early_end;
    p.mid_end = p.early_end + (rest + 1) / 2;
    return p;
}

// Where a tensor sits in the model.
struct TensorSlot {
    Role role = Role::other;
    std::optional<std::size_t> layer;  // set iff role == Role::layer
};

struct NamingConfig {
    // Regex whose first capture group is the decimal layer index. Applied
    // with std::regex_search, so anchor it yourself if needed.
    std::string layer_pattern = R"((?:^|\.)layers\.([0-9]+)\.)";

    // Longest-prefix role assignment for tensors the layer pattern misses.
    // A prefix matches either the whole name or a leading "prefix." segment.
    std::vector<std::pair<std::string, Role>> role_prefixes = {
        {"model.embed_tokens", Role::embedding},
        {"model.pos_embed", Role::embedding},
        {"vision_encoder", Role::vision_encoder},
        {"visual", Role::vision_encoder},
        {"projector", Role::projector},
        {"model.norm", Role::final_norm},
        {"lm_head", Role::head},
    };

    // 0 means "infer as max matched layer index + 1".
    std::size_t declared_layers = 0;
};

namespace graphdetail {

inline bool prefix_matches(const std::string& name, const std::string& prefix) {
    if (name.size() < prefix.size()) return false;
    if (name.compare(0, prefix.size(), prefix) != 0) return false;
    return name.size() == prefix.size() || name[prefix.size()] == '.';
}

}  // namespace graphdetail

class ModelGraph {
public:
    static ModelGraph from_names(const std::vector<std::string>& names,
                                 const NamingConfig& cfg = {});
    static ModelGraph from_archive(const TensorArchive& a, const NamingConfig& cfg = {}) {
        return from_names(a.names(), cfg);
    }

    const TensorSlot& slot(const std::string& name) const {
        auto it = slots_.find(name);
        if (it == slots_.end())
            throw DataError("tensor '" + name + "' is not part of this model graph");
        return it->second;
    }

    std::size_t layers() const { return layers_; }
    const Partition& partition() const { return partition_; }
    const std::map<std::string, TensorSlot>& slots() const { return slots_; }

    // Replace the computed partition, e.g. from a CLI override. Must cover
    // the same layer count.
    void override_partition(const Partition& p) {
        if (p.layers != layers_)
            throw DataError("partition override covers " + std::to_string(p.layers) +
                            " layers but the graph has " + std::to_string(layers_));
        if (p.early_end == 0 || p.early_end >= p.mid_end || p.mid_end >= p.layers)
            throw DataError("partition override must give three non-empty regions");
        partition_ = p;
    }

    // Tensor names for one decoder layer, sorted.
    std::vector<std::string> layer_tensors(std::size_t layer) const {
        std::vector<std::string> out;
        for (const auto& [n, s] : slots_)
            if (s.role == Role::layer && *s.layer == layer) out.push_back(n);
        return out;
    }

    std::vector<std::string> role_tensors(Role role) const {
        std::vector<std::string> out;
        for (const auto& [n, s] : slots_)
            if (s.role == role) out.push_back(n);
        return out;
    }

    Region region_of(const std::string& name) const {
        const TensorSlot& s = slot(name);
        if (s.role != Role::layer)
            throw DataError("tensor '" + name + "' is not a layer tensor");
        return partition_.region_of(*s.layer);
    }

private:
    std::map<std::string, TensorSlot> slots_;
    std::size_t layers_ = 0;
    Partition partition_;
};

inline ModelGraph ModelGraph::from_names(const std::vector<std::string>& names,
                                         const NamingConfig& cfg) {
    std::regex layer_re;
    try {
        layer_re = std::regex(cfg.layer_pattern);
    } catch (const std::regex_error& e) {
        throw DataError(std::string("invalid layer pattern: ") + e.what());
    }

    ModelGraph g;
    std::size_t max_layer = 0;
    bool any_layer = false;
    for (const std::string& name : names) {
        TensorSlot s;
        std::smatch m;
        bool is_layer = std::regex_search(name, m, layer_re) && m.size() >= 2;

        const std::string* best_prefix = nullptr;
        Role prefix_role = Role::other;
        for (const auto& [prefix, role] : cfg.role_prefixes) {
            if (!graphdetail::prefix_matches(name, prefix)) continue;
            if (!best_prefix || prefix.size() > best_prefix->size()) {
                best_prefix = &prefix;
                prefix_role = role;
            }
        }

        if (is_layer && best_prefix)
            throw DataError("tensor '" + name + "' matches both the layer pattern and role prefix '" +
                            *best_prefix + "'");

        if (is_layer) {
            s.role = Role::layer;
            s.layer = std::size_t(std::stoull(m[1].str()));
            max_layer = std::max(max_layer, *s.layer);
            any_layer = true;
        } else {
            s.role = best_prefix ? prefix_role : Role::other;
        }
        g.slots_[name] = s;
    }

    std::size_t inferred = any_layer ? max_layer + 1 : 0;
    if (cfg.declared_layers) {
        if (inferred > cfg.declared_layers)
            throw DataError("tensor names reference layer " + std::to_string(max_layer) +
                            " but only " + std::to_string(cfg.declared_layers) +
                            " layers were declared");
        g.layers_ = cfg.declared_layers;
    } else {
        g.layers_ = inferred;
    }
    if (g.layers_)
        g.partition_ = partition_layers(g.layers_);
    return g;
}

// ---------------------------------------------------------------------------
// Freeze masks: the named region's layer tensors are frozen, every other
// tensor (other regions, vision encoder, embeddings, head) stays trainable.
// ---------------------------------------------------------------------------

struct FreezeMask {
    std::vector<std::string> frozen;
    std::vector<std::string> trainable;
    Region region = Region::mid;
    Partition partition;
};

inline FreezeMask freeze_mask(const ModelGraph& g, Region frozen_region) {
    FreezeMask m;
    m.region = frozen_region;
    m.partition = g.partition();
    for (const auto& [name, s] : g.slots()) {
        bool freeze = s.role == Role::layer && g.partition().region_of(*s.layer) == frozen_region;
        (freeze ? m.frozen : m.trainable).push_back(name);
    }
    return m;
}

// Layer ranges are inclusive [lo, hi] in the emitted JSON, matching the
// "layers 0 to 9" phrasing external trainers expect to read.
inline nlohmann::json freeze_mask_json(const FreezeMask& m) {
    nlohmann::json j;
    j["region"] = region_name(m.region);
    j["frozen"] = m.frozen;
    j["trainable"] = m.trainable;
    nlohmann::json p;
    p["L"] = m.partition.layers;
    p["early"] = {0, m.partition.early_end - 1};
    p["mid"] = {m.partition.early_end, m.partition.mid_end - 1};
    p["late"] = {m.partition.mid_end, m.partition.layers - 1};
    j["partition"] = p;
    return j;
}

}  // namespace frankenkit
