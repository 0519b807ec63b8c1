#pragma once

// Turn emitted CSV tables back into standalone SVG charts.
//
// layer_line: one polyline with a vertex per data row, x = the "layer"
// column, y = the "value" column (or the last column when no "value"
// exists). Suits the per-layer profile tables.
//
// spectrum_lines: one polyline per (layer, tensor) series over the rows
// flagged sampled=true, x = rank, y = log_normalized. Suits spectrum.csv.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "frankenkit/csv.hpp"
#include "frankenkit/errors.hpp"
#include "frankenkit/svg.hpp"

namespace frankenkit {

enum class ChartKind { layer_line, spectrum_lines };

inline ChartKind chart_kind_from_name(const std::string& s) {
    if (s == "layer_line") return ChartKind::layer_line;
    if (s == "spectrum_lines") return ChartKind::spectrum_lines;
    throw DataError("unknown chart kind \"" + s + "\" (expected layer_line or spectrum_lines)");
}

inline void emit_chart(const CsvTable& table, ChartKind kind, const std::string& title,
                       const std::string& out_path) {
    const std::string where = "chart input";
    if (kind == ChartKind::layer_line) {
        std::size_t xc = table.column("layer", where);
        std::size_t yc;
        bool have_value = false;
        for (std::size_t i = 0; i < table.header.size(); ++i)
            if (table.header[i] == "value") {
                yc = i;
                have_value = true;
            }
        if (!have_value) {
            if (table.header.empty()) throw DataError(where + ": no columns");
            yc = table.header.size() - 1;
        }
        Series s;
        s.label = table.header[yc];
        for (const auto& row : table.rows) {
            if (row.size() <= std::max(xc, yc))
                throw DataError(where + ": short row with " + std::to_string(row.size()) +
                                " cells");
            s.x.push_back(csv_number(row[xc], where));
            s.y.push_back(csv_number(row[yc], where));
        }
        write_line_chart(out_path, title, "layer", table.header[yc], {s});
        return;
    }

    std::size_t lc = table.column("layer", where);
    std::size_t tc = table.column("tensor", where);
    std::size_t rc = table.column("rank", where);
    std::size_t vc = table.column("log_normalized", where);
    std::size_t sc = table.column("sampled", where);
    std::map<std::string, Series> by_series;
    for (const auto& row : table.rows) {
        std::size_t need = std::max({lc, tc, rc, vc, sc});
        if (row.size() <= need)
            throw DataError(where + ": short row with " + std::to_string(row.size()) + " cells");
        if (row[sc] != "true" && row[sc] != "1") continue;
        if (row[vc].empty()) continue;  // degenerate spectrum, no normalized values
        std::string key = row[lc] + ":" + row[tc];
        Series& s = by_series[key];
        if (s.label.empty()) s.label = "layer " + row[lc] + " " + row[tc];
        s.x.push_back(csv_number(row[rc], where));
        s.y.push_back(csv_number(row[vc], where));
    }
    std::vector<Series> series;
    series.reserve(by_series.size());
    for (auto& [_, s] : by_series) series.push_back(std::move(s));
    write_line_chart(out_path, title, "rank", "log(sigma_i / sigma_1)", series);
}

}  // namespace frankenkit
