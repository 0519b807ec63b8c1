#pragma once

// Fine-grained capability metrics over per-item evaluation records.
//
// Three metrics, each the mean of a 0/1 indicator over all N records:
//   M_vis  answer correct with the real image AND wrong when the image is
//          replaced by a black one
//   M_v2r  answer correct with the real image AND still correct with a
//          black image plus a textual description
//   M_rea  answer correct from text alone
//
// Indicators are accumulated as integer bits and divided once at the end,
// so a recount of the same records is bit-exact, and the denominator is
// always the full record count.

#include <cctype>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "frankenkit/errors.hpp"

namespace frankenkit {

// Canonical answer form: whitespace trimmed and collapsed, ASCII lowercase,
// trailing sentence punctuation stripped, and purely numeric answers
// (thousands separators allowed) rewritten in a canonical digit form.
inline std::string normalize_answer(const std::string& raw) {
    std::string s;
    s.reserve(raw.size());
    bool in_space = true;  // swallows leading whitespace
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) s += ' ';
            in_space = true;
        } else {
            s += char(std::tolower(static_cast<unsigned char>(c)));
            in_space = false;
        }
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    while (!s.empty() && std::string(".,;:!?").find(s.back()) != std::string::npos) s.pop_back();
    while (!s.empty() && s.back() == ' ') s.pop_back();
    if (s.empty()) return s;

    std::string unseparated;
    unseparated.reserve(s.size());
    for (char c : s)
        if (c != ',') unseparated += c;
    errno = 0;
    char* end = nullptr;
    double v = std::strtod(unseparated.c_str(), &end);
    if (end == unseparated.c_str() + unseparated.size() && errno == 0 && std::isfinite(v)) {
        if (v == std::trunc(v) && std::abs(v) <= 9007199254740992.0)
            return std::to_string((long long)(v));
        char buf[64];
        auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
        if (ec == std::errc()) return std::string(buf, p);
    }
    return s;
}

inline bool answers_match(const std::string& a, const std::string& b) {
    return normalize_answer(a) == normalize_answer(b);
}

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

struct EvalRecord {
    std::string id;
    std::string task;
    std::string gold;
    std::optional<std::string> pred_img;        // f(i, p)
    std::optional<std::string> pred_black;      // f(b, p)
    std::optional<std::string> pred_black_desc; // f(b, d, p)
    std::optional<std::string> pred_text_only;  // f(p)
};

inline nlohmann::json record_to_json(const EvalRecord& r) {
    nlohmann::json j;
    j["id"] = r.id;
    j["task"] = r.task;
    j["gold"] = r.gold;
    if (r.pred_img) j["pred_img"] = *r.pred_img;
    if (r.pred_black) j["pred_black"] = *r.pred_black;
    if (r.pred_black_desc) j["pred_black_desc"] = *r.pred_black_desc;
    if (r.pred_text_only) j["pred_text_only"] = *r.pred_text_only;
    return j;
}

inline EvalRecord record_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw DataError(where + ": record is not a JSON object");
    EvalRecord r;
    auto str = [&](const char* key, bool required) -> std::optional<std::string> {
        if (!j.contains(key)) {
            if (required) throw DataError(where + ": record missing required field \"" +
                                          std::string(key) + "\"");
            return std::nullopt;
        }
        if (!j[key].is_string())
            throw DataError(where + ": field \"" + std::string(key) + "\" is not a string");
        return j[key].get<std::string>();
    };
    r.id = *str("id", true);
    r.task = j.contains("task") ? *str("task", false) : "";
    r.gold = *str("gold", true);
    if (r.gold.empty()) throw DataError(where + ": empty gold answer");
    r.pred_img = str("pred_img", false);
    r.pred_black = str("pred_black", false);
    r.pred_black_desc = str("pred_black_desc", false);
    r.pred_text_only = str("pred_text_only", false);
    return r;
}

inline std::vector<EvalRecord> read_records(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open records file: " + path);
    std::vector<EvalRecord> out;
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
        out.push_back(record_from_json(j, where));
    }
    return out;
}

inline void write_records(const std::vector<EvalRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write records file: " + path);
    for (const EvalRecord& r : records) f << record_to_json(r).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

enum class MetricKind { vis, v2r, rea };

inline const char* metric_name(MetricKind k) {
    switch (k) {
        case MetricKind::vis: return "M_vis";
        case MetricKind::v2r: return "M_v2r";
        case MetricKind::rea: return "M_rea";
    }
    return "?";
}

inline MetricKind metric_from_name(const std::string& s) {
    if (s == "vis" || s == "M_vis" || s == "vision") return MetricKind::vis;
    if (s == "v2r" || s == "M_v2r" || s == "vision_to_reason") return MetricKind::v2r;
    if (s == "rea" || s == "M_rea" || s == "reasoning") return MetricKind::rea;
    throw DataError("unknown metric \"" + s + "\" (expected vis, v2r or rea)");
}

struct MetricReport {
    MetricKind metric = MetricKind::rea;
    std::size_t n = 0;
    std::vector<std::uint8_t> indicators;  // one 0/1 bit per record, in input order
    std::size_t indicator_sum = 0;
    double value = 0.0;  // indicator_sum / n

    double percent() const { return 100.0 * value; }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["metric"] = metric_name(metric);
        j["value"] = value;
        j["N"] = n;
        j["indicators"] = indicators;
        return j;
    }
};

// The full record set is the denominator; a record that lacks a field the
// metric needs is an input error, reported with every offending id at once.
inline MetricReport compute_metric(const std::vector<EvalRecord>& records, MetricKind kind) {
    std::string missing;
    auto require = [&](const EvalRecord& r, const std::optional<std::string>& field,
                       const char* name) {
        if (!field) {
            missing += missing.empty() ? "" : ", ";
            missing += r.id + " (no " + name + ")";
            return false;
        }
        return true;
    };

    MetricReport rep;
    rep.metric = kind;
    rep.n = records.size();
    rep.indicators.reserve(records.size());
    for (const EvalRecord& r : records) {
        std::string gold = normalize_answer(r.gold);
        bool hit = false;
        // Bitwise & so both field checks run and every gap gets reported.
        switch (kind) {
            case MetricKind::vis:
                if (require(r, r.pred_img, "pred_img") & require(r, r.pred_black, "pred_black"))
                    hit = normalize_answer(*r.pred_img) == gold &&
                          normalize_answer(*r.pred_black) != gold;
                break;
            case MetricKind::v2r:
                if (require(r, r.pred_img, "pred_img") &
                    require(r, r.pred_black_desc, "pred_black_desc"))
                    hit = normalize_answer(*r.pred_img) == gold &&
                          normalize_answer(*r.pred_black_desc) == gold;
                break;
            case MetricKind::rea:
                if (require(r, r.pred_text_only, "pred_text_only"))
                    hit = normalize_answer(*r.pred_text_only) == gold;
                break;
        }
        rep.indicators.push_back(hit ? 1 : 0);
        if (hit) ++rep.indicator_sum;
    }
    if (!missing.empty())
        throw DataError(std::string("records unusable for ") + metric_name(kind) + ": " + missing);
    rep.value = rep.n ? double(rep.indicator_sum) / double(rep.n) : 0.0;
    return rep;
}

inline MetricReport m_vis(const std::vector<EvalRecord>& r) {
    return compute_metric(r, MetricKind::vis);
}
inline MetricReport m_v2r(const std::vector<EvalRecord>& r) {
    return compute_metric(r, MetricKind::v2r);
}
inline MetricReport m_rea(const std::vector<EvalRecord>& r) {
    return compute_metric(r, MetricKind::rea);
}

enum class Monotonicity { monotone, non_monotone };

// Non-strict: monotone iff each successive stage value is >= its predecessor.
inline Monotonicity monotonicity_check(const std::vector<double>& stages) {
    if (stages.size() < 2) throw DataError("monotonicity check needs at least two stages");
    for (std::size_t i = 1; i < stages.size(); ++i)
        if (stages[i] < stages[i - 1]) return Monotonicity::non_monotone;
    return Monotonicity::monotone;
}

inline const char* monotonicity_name(Monotonicity m) {
    return m == Monotonicity::monotone ? "monotone" : "non-monotone";
}

}  // namespace frankenkit
