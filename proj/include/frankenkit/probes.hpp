#pragma once

// Causal layer probes on the toy model: representation swaps between runs
// on paired images, single-layer skips, and attention-mass profiles, plus
// the suite driver that turns probe items into evaluation records.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "frankenkit/errors.hpp"
#include "frankenkit/metrics.hpp"
#include "frankenkit/model_graph.hpp"
#include "frankenkit/toy_vlm.hpp"

namespace frankenkit {

// ---------------------------------------------------------------------------
// Suite items
// ---------------------------------------------------------------------------

struct ImageSpec {
    enum class Kind { none, black, seed };
    Kind kind = Kind::none;
    std::uint64_t seed = 0;

    ImageInput realize(const ToyConfig& cfg) const {
        switch (kind) {
            case Kind::none: return ImageInput::none();
            case Kind::black: return ImageInput::black();
            case Kind::seed: return make_image(cfg, seed);
        }
        return ImageInput::none();
    }
};

struct ProbeItem {
    std::string id;
    std::string task;  // ocr, counting, grounding, recognition, reasoning
    std::vector<int> prompt;
    std::string gold;
    ImageSpec image;
    ImageSpec paired;       // second image for swap probes
    std::vector<int> desc;  // description tokens appended for f(b, d, p)
};

namespace probedetail {

inline ImageSpec image_spec_from_json(const nlohmann::json& j, const std::string& where) {
    if (j.is_null()) return {};
    if (!j.is_object() || !j.contains("kind"))
        throw DataError(where + ": image spec must be an object with a \"kind\"");
    ImageSpec s;
    std::string kind = j["kind"].get<std::string>();
    if (kind == "none") {
        s.kind = ImageSpec::Kind::none;
    } else if (kind == "black") {
        s.kind = ImageSpec::Kind::black;
    } else if (kind == "seed") {
        s.kind = ImageSpec::Kind::seed;
        if (!j.contains("seed") || !j["seed"].is_number_unsigned())
            throw DataError(where + ": seed image spec needs an unsigned \"seed\"");
        s.seed = j["seed"].get<std::uint64_t>();
    } else {
        throw DataError(where + ": unknown image kind \"" + kind + "\"");
    }
    return s;
}

inline nlohmann::json image_spec_to_json(const ImageSpec& s) {
    nlohmann::json j;
    switch (s.kind) {
        case ImageSpec::Kind::none: j["kind"] = "none"; break;
        case ImageSpec::Kind::black: j["kind"] = "black"; break;
        case ImageSpec::Kind::seed:
            j["kind"] = "seed";
            j["seed"] = s.seed;
            break;
    }
    return j;
}

inline std::vector<int> int_array(const nlohmann::json& j, const std::string& where,
                                  const char* field) {
    std::vector<int> out;
    if (!j.is_array()) throw DataError(where + ": \"" + std::string(field) + "\" must be an array");
    for (const auto& v : j) {
        if (!v.is_number_integer())
            throw DataError(where + ": \"" + std::string(field) + "\" holds a non-integer");
        out.push_back(v.get<int>());
    }
    return out;
}

}  // namespace probedetail

inline std::vector<ProbeItem> read_probe_items(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open suite file: " + path);
    std::vector<ProbeItem> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::string where = path + ":" + std::to_string(lineno);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
        ProbeItem it;
        for (const char* field : {"id", "task", "gold"})
            if (!j.contains(field) || !j[field].is_string())
                throw DataError(where + ": item needs string field \"" + std::string(field) + "\"");
        it.id = j["id"].get<std::string>();
        it.task = j["task"].get<std::string>();
        it.gold = j["gold"].get<std::string>();
        if (!j.contains("prompt")) throw DataError(where + ": item needs a \"prompt\" token array");
        it.prompt = probedetail::int_array(j["prompt"], where, "prompt");
        if (it.prompt.empty()) throw DataError(where + ": empty prompt");
        if (j.contains("image")) it.image = probedetail::image_spec_from_json(j["image"], where);
        if (j.contains("paired")) it.paired = probedetail::image_spec_from_json(j["paired"], where);
        if (j.contains("desc")) it.desc = probedetail::int_array(j["desc"], where, "desc");
        out.push_back(std::move(it));
    }
    return out;
}

inline void write_probe_items(const std::vector<ProbeItem>& items, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write suite file: " + path);
    for (const ProbeItem& it : items) {
        nlohmann::json j;
        j["id"] = it.id;
        j["task"] = it.task;
        j["prompt"] = it.prompt;
        j["gold"] = it.gold;
        if (it.image.kind != ImageSpec::Kind::none)
            j["image"] = probedetail::image_spec_to_json(it.image);
        if (it.paired.kind != ImageSpec::Kind::none)
            j["paired"] = probedetail::image_spec_to_json(it.paired);
        if (!it.desc.empty()) j["desc"] = it.desc;
        f << j.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Evaluation records
// ---------------------------------------------------------------------------

struct SuiteOptions {
    std::size_t max_new_tokens = 8;
};

// Run every answer variant an item supports: the real image, a black image,
// a black image with the description appended, and text only.
inline std::vector<EvalRecord> run_eval_suite(const ToyModel& model,
                                              const std::vector<ProbeItem>& items,
                                              const SuiteOptions& opt = {}) {
    std::vector<EvalRecord> records;
    records.reserve(items.size());
    GenerateOptions gen;
    gen.max_new_tokens = opt.max_new_tokens;
    for (const ProbeItem& it : items) {
        EvalRecord r;
        r.id = it.id;
        r.task = it.task;
        r.gold = it.gold;
        if (it.image.kind != ImageSpec::Kind::none) {
            r.pred_img = tokens_to_answer(
                model.generate(it.image.realize(model.cfg), it.prompt, gen).tokens);
            r.pred_black =
                tokens_to_answer(model.generate(ImageInput::black(), it.prompt, gen).tokens);
            if (!it.desc.empty()) {
                std::vector<int> with_desc = it.prompt;
                with_desc.insert(with_desc.end(), it.desc.begin(), it.desc.end());
                r.pred_black_desc = tokens_to_answer(
                    model.generate(ImageInput::black(), with_desc, gen).tokens);
            }
        }
        r.pred_text_only =
            tokens_to_answer(model.generate(ImageInput::none(), it.prompt, gen).tokens);
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Layer profiles
// ---------------------------------------------------------------------------

// One value in [0,1] per probed layer.
struct LayerProfile {
    std::string metric;  // change_rate, error_rate or attention_mass
    std::map<std::size_t, double> values;
    std::size_t n_items = 0;
};

namespace probedetail {

inline std::set<std::size_t> resolve_layers(const std::set<std::size_t>& requested,
                                            std::size_t total) {
    if (requested.empty()) {
        std::set<std::size_t> all;
        for (std::size_t l = 0; l < total; ++l) all.insert(l);
        return all;
    }
    for (std::size_t l : requested)
        if (l >= total)
            throw DataError("probe layer " + std::to_string(l) + " out of range for " +
                            std::to_string(total) + " layers");
    return requested;
}

}  // namespace probedetail

// How the swapped run is compared when computing the change rate.
enum class ChangeRateMode {
    vs_unswapped,  // swapped answer vs the plain answer of the recipient run
    vs_self_swap,  // swapped answer vs a swap sourced from the recipient itself
};

// Fraction of items whose answer changes when the vision rows entering
// layer l are replaced by hidden states captured from a run on the paired
// image. Items must carry two images.
inline LayerProfile vision_change_rate(const ToyModel& model, const std::vector<ProbeItem>& items,
                                       const std::set<std::size_t>& layers = {},
                                       ChangeRateMode mode = ChangeRateMode::vs_unswapped,
                                       const SuiteOptions& opt = {}) {
    if (items.empty()) throw DataError("change rate needs at least one item");
    std::set<std::size_t> probe = probedetail::resolve_layers(layers, model.cfg.layers);
    LayerProfile prof;
    prof.metric = "change_rate";
    for (std::size_t l : probe) prof.values[l] = 0.0;
    GenerateOptions gen;
    gen.max_new_tokens = opt.max_new_tokens;

    for (const ProbeItem& it : items) {
        if (it.image.kind == ImageSpec::Kind::none || it.paired.kind == ImageSpec::Kind::none)
            throw DataError("item " + it.id + " lacks the paired images a swap probe needs");
        ImageInput donor_img = it.image.realize(model.cfg);
        ImageInput recip_img = it.paired.realize(model.cfg);

        HiddenCapture donor = model.capture_prefix(donor_img, it.prompt);
        HiddenCapture self;
        if (mode == ChangeRateMode::vs_self_swap)
            self = model.capture_prefix(recip_img, it.prompt);

        std::vector<int> plain;
        if (mode == ChangeRateMode::vs_unswapped)
            plain = model.generate(recip_img, it.prompt, gen).tokens;

        for (std::size_t l : probe) {
            GenerateOptions swapped = gen;
            swapped.swap_layer = l;
            swapped.swap_source = &donor;
            std::vector<int> got = model.generate(recip_img, it.prompt, swapped).tokens;

            std::vector<int> ref;
            if (mode == ChangeRateMode::vs_unswapped) {
                ref = plain;
            } else {
                GenerateOptions selfswap = gen;
                selfswap.swap_layer = l;
                selfswap.swap_source = &self;
                ref = model.generate(recip_img, it.prompt, selfswap).tokens;
            }
            if (!answers_match(tokens_to_answer(got), tokens_to_answer(ref)))
                prof.values[l] += 1.0;
        }
    }
    for (auto& [_, v] : prof.values) v /= double(items.size());
    prof.n_items = items.size();
    return prof;
}

// Error rate (1 - exact-match accuracy against gold) when layer l is
// replaced by the identity.
inline LayerProfile reasoning_error_rate(const ToyModel& model,
                                         const std::vector<ProbeItem>& items,
                                         const std::set<std::size_t>& layers = {},
                                         const SuiteOptions& opt = {}) {
    if (items.empty()) throw DataError("skip probe needs at least one item");
    std::set<std::size_t> probe = probedetail::resolve_layers(layers, model.cfg.layers);
    LayerProfile prof;
    prof.metric = "error_rate";
    for (std::size_t l : probe) prof.values[l] = 0.0;
    GenerateOptions gen;
    gen.max_new_tokens = opt.max_new_tokens;

    for (const ProbeItem& it : items) {
        ImageInput img = it.image.realize(model.cfg);
        std::string gold = normalize_answer(it.gold);
        for (std::size_t l : probe) {
            GenerateOptions skipped = gen;
            skipped.skip = {l};
            std::string got =
                normalize_answer(tokens_to_answer(model.generate(img, it.prompt, skipped).tokens));
            if (got != gold) prof.values[l] += 1.0;
        }
    }
    for (auto& [_, v] : prof.values) v /= double(items.size());
    prof.n_items = items.size();
    return prof;
}

// Error rate of the unmodified model on the same items, for reference.
inline double baseline_error_rate(const ToyModel& model, const std::vector<ProbeItem>& items,
                                  const SuiteOptions& opt = {}) {
    if (items.empty()) throw DataError("baseline needs at least one item");
    GenerateOptions gen;
    gen.max_new_tokens = opt.max_new_tokens;
    std::size_t wrong = 0;
    for (const ProbeItem& it : items) {
        ImageInput img = it.image.realize(model.cfg);
        std::string got =
            normalize_answer(tokens_to_answer(model.generate(img, it.prompt, gen).tokens));
        if (got != normalize_answer(it.gold)) ++wrong;
    }
    return double(wrong) / double(items.size());
}

// ---------------------------------------------------------------------------
// Attention mass
// ---------------------------------------------------------------------------

enum class AttnRows { generated, prompt_and_generated, all };

namespace probedetail {

inline std::pair<std::size_t, std::size_t> row_range(const SequenceLayout& lay, AttnRows rows) {
    switch (rows) {
        case AttnRows::generated: return lay.generated_range();
        case AttnRows::prompt_and_generated: return {lay.n_vision, lay.total()};
        case AttnRows::all: return {0, lay.total()};
    }
    return {0, 0};
}

}  // namespace probedetail

// Mean attention from the selected query rows onto the vision columns for
// one layer: (1 / (H |R| |V|)) sum over heads, rows in R, columns in V.
inline double attention_mass_layer(const std::vector<Matrix>& heads, const SequenceLayout& lay,
                                   AttnRows rows = AttnRows::generated) {
    auto [r0, r1] = probedetail::row_range(lay, rows);
    std::size_t nv = lay.n_vision;
    if (heads.empty()) throw DataError("attention mass needs at least one head");
    if (nv == 0) throw DataError("attention mass is undefined without vision positions");
    if (r1 <= r0) throw DataError("attention mass is undefined over an empty row set");
    double acc = 0;
    for (const Matrix& a : heads) {
        if (a.rows() != lay.total() || a.cols() != lay.total())
            throw InvariantError("attention matrix does not match the sequence layout");
        for (std::size_t i = r0; i < r1; ++i)
            for (std::size_t j = 0; j < nv; ++j) acc += double(a.at(i, j));
    }
    return acc / (double(heads.size()) * double(r1 - r0) * double(nv));
}

// Per-layer mass over a single capture. Only captured (executed) layers can
// appear; requesting layers beyond them is an error.
inline LayerProfile attention_mass(const AttentionCapture& cap, const SequenceLayout& lay,
                                   const std::set<std::size_t>& layers = {},
                                   AttnRows rows = AttnRows::generated) {
    LayerProfile prof;
    prof.metric = "attention_mass";
    prof.n_items = 1;
    if (layers.empty()) {
        for (const auto& [layer, heads] : cap.per_layer)
            prof.values[layer] = attention_mass_layer(heads, lay, rows);
        return prof;
    }
    for (std::size_t l : layers) {
        auto it = cap.per_layer.find(l);
        if (it == cap.per_layer.end())
            throw DataError("no attention captured for layer " + std::to_string(l));
        prof.values[l] = attention_mass_layer(it->second, lay, rows);
    }
    return prof;
}

// Mean attention-mass profile across a suite, measured on each item's final
// teacher-forced pass.
inline LayerProfile attention_mass_suite(const ToyModel& model,
                                         const std::vector<ProbeItem>& items,
                                         const std::set<std::size_t>& layers = {},
                                         AttnRows rows = AttnRows::generated,
                                         const SuiteOptions& opt = {}) {
    if (items.empty()) throw DataError("attention mass needs at least one item");
    LayerProfile prof;
    prof.metric = "attention_mass";
    GenerateOptions gen;
    gen.max_new_tokens = opt.max_new_tokens;
    gen.capture_attention = true;

    for (const ProbeItem& it : items) {
        if (it.image.kind == ImageSpec::Kind::none)
            throw DataError("item " + it.id + " has no image; attention mass needs vision rows");
        GenerateResult g = model.generate(it.image.realize(model.cfg), it.prompt, gen);
        if (rows == AttnRows::generated && g.layout.n_generated == 0)
            throw DataError("item " + it.id + " generated no tokens; no query rows to measure");
        for (const auto& [layer, mass] : attention_mass(g.attention, g.layout, layers, rows).values)
            prof.values[layer] += mass;
    }
    for (auto& [_, v] : prof.values) v /= double(items.size());
    prof.n_items = items.size();
    return prof;
}

// ---------------------------------------------------------------------------
// Profile comparison
// ---------------------------------------------------------------------------

struct ProfileComparison {
    std::string metric;
    std::map<std::size_t, double> delta;  // b minus a, per layer
    double region_delta_early = 0, region_delta_mid = 0, region_delta_late = 0;
};

inline ProfileComparison compare_profiles(const LayerProfile& a, const LayerProfile& b,
                                          const Partition& part) {
    if (a.metric != b.metric)
        throw DataError("cannot compare profiles of different metrics (" + a.metric + " vs " +
                        b.metric + ")");
    if (a.values.size() != b.values.size())
        throw DataError("cannot compare profiles over different layer sets");
    ProfileComparison c;
    c.metric = a.metric;
    for (const auto& [l, va] : a.values) {
        auto it = b.values.find(l);
        if (it == b.values.end())
            throw DataError("cannot compare profiles over different layer sets");
        c.delta[l] = it->second - va;
    }
    auto mean = [&](Region r) {
        auto [lo, hi] = part.range(r);
        double s = 0;
        std::size_t cnt = 0;
        for (const auto& [l, d] : c.delta)
            if (l >= lo && l < hi) {
                s += d;
                ++cnt;
            }
        return cnt ? s / double(cnt) : 0.0;
    };
    c.region_delta_early = mean(Region::early);
    c.region_delta_mid = mean(Region::mid);
    c.region_delta_late = mean(Region::late);
    return c;
}

}  // namespace frankenkit
