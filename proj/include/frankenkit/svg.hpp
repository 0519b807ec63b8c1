#pragma once

// Self-contained SVG plots: multi-series line charts for layer profiles and
// spectra, grouped bar charts with per-bar annotations for metric tables.
// Coordinates are emitted with fixed precision so output is reproducible.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "frankenkit/errors.hpp"

namespace frankenkit {

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;  // non-finite entries are skipped
};

struct BarGroup {
    std::string label;                    // x-axis group label
    std::vector<double> values;           // one per series
    std::vector<std::string> annotations; // optional, drawn above each bar
};

namespace svgdetail {

inline std::string num(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

inline const char* color(std::size_t i) {
    static const char* palette[] = {"#3366cc", "#dc3912", "#109618", "#ff9900",
                                    "#990099", "#0099c6", "#dd4477", "#66aa00"};
    return palette[i % (sizeof palette / sizeof palette[0])];
}

struct Frame {
    double w = 760, h = 420;
    double left = 64, right = 24, top = 40, bottom = 48;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

    double px(double x) const {
        return left + (x - x0) / (x1 - x0 == 0 ? 1 : x1 - x0) * (w - left - right);
    }
    double py(double y) const {
        return h - bottom - (y - y0) / (y1 - y0 == 0 ? 1 : y1 - y0) * (h - top - bottom);
    }
};

inline void open_svg(std::ofstream& f, const Frame& fr, const std::string& title) {
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << num(fr.w) << " "
      << num(fr.h) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    f << "<rect width=\"" << num(fr.w) << "\" height=\"" << num(fr.h) << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << num(fr.w / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
      << escape(title) << "</text>\n";
}

inline void axes(std::ofstream& f, const Frame& fr, const std::string& x_label,
                 const std::string& y_label, bool x_ticks = true) {
    f << "<line x1=\"" << num(fr.left) << "\" y1=\"" << num(fr.h - fr.bottom) << "\" x2=\""
      << num(fr.w - fr.right) << "\" y2=\"" << num(fr.h - fr.bottom)
      << "\" stroke=\"black\"/>\n";
    f << "<line x1=\"" << num(fr.left) << "\" y1=\"" << num(fr.top) << "\" x2=\"" << num(fr.left)
      << "\" y2=\"" << num(fr.h - fr.bottom) << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= 4; ++t) {
        double fy = fr.y0 + (fr.y1 - fr.y0) * t / 4.0;
        double y = fr.py(fy);
        f << "<line x1=\"" << num(fr.left - 4) << "\" y1=\"" << num(y) << "\" x2=\""
          << num(fr.left) << "\" y2=\"" << num(y) << "\" stroke=\"black\"/>\n";
        f << "<text x=\"" << num(fr.left - 8) << "\" y=\"" << num(y + 4)
          << "\" text-anchor=\"end\">" << num(fy) << "</text>\n";
        if (x_ticks) {
            double fx = fr.x0 + (fr.x1 - fr.x0) * t / 4.0;
            double x = fr.px(fx);
            f << "<line x1=\"" << num(x) << "\" y1=\"" << num(fr.h - fr.bottom) << "\" x2=\""
              << num(x) << "\" y2=\"" << num(fr.h - fr.bottom + 4) << "\" stroke=\"black\"/>\n";
            f << "<text x=\"" << num(x) << "\" y=\"" << num(fr.h - fr.bottom + 16)
              << "\" text-anchor=\"middle\">" << num(fx) << "</text>\n";
        }
    }
    f << "<text x=\"" << num((fr.left + fr.w - fr.right) / 2) << "\" y=\"" << num(fr.h - 8)
      << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
    f << "<text x=\"14\" y=\"" << num((fr.top + fr.h - fr.bottom) / 2)
      << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << num((fr.top + fr.h - fr.bottom) / 2) << ")\">" << escape(y_label) << "</text>\n";
}

inline void legend(std::ofstream& f, const Frame& fr, const std::vector<std::string>& labels) {
    double x = fr.left + 10, y = fr.top + 6;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        f << "<rect x=\"" << num(x) << "\" y=\"" << num(y + double(i) * 16) << "\" width=\"10\""
          << " height=\"10\" fill=\"" << color(i) << "\"/>\n";
        f << "<text x=\"" << num(x + 14) << "\" y=\"" << num(y + double(i) * 16 + 9) << "\">"
          << escape(labels[i]) << "</text>\n";
    }
}

}  // namespace svgdetail

inline void write_line_chart(const std::string& path, const std::string& title,
                             const std::string& x_label, const std::string& y_label,
                             const std::vector<Series>& series) {
    using namespace svgdetail;
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write svg: " + path);

    Frame fr;
    bool any = false;
    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    for (const Series& s : series) {
        if (s.x.size() != s.y.size()) throw DataError("series x/y lengths differ");
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (!any) {
                x0 = x1 = s.x[i];
                y0 = y1 = s.y[i];
                any = true;
            } else {
                x0 = std::min(x0, s.x[i]);
                x1 = std::max(x1, s.x[i]);
                y0 = std::min(y0, s.y[i]);
                y1 = std::max(y1, s.y[i]);
            }
        }
    }
    if (x0 == x1) x1 = x0 + 1;
    if (y0 == y1) y1 = y0 + 1;
    fr.x0 = x0;
    fr.x1 = x1;
    fr.y0 = y0;
    fr.y1 = y1;

    open_svg(f, fr, title);
    axes(f, fr, x_label, y_label);
    std::vector<std::string> labels;
    for (std::size_t si = 0; si < series.size(); ++si) {
        const Series& s = series[si];
        labels.push_back(s.label);
        std::string pts;
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            if (!pts.empty()) pts += ' ';
            pts += num(fr.px(s.x[i])) + "," + num(fr.py(s.y[i]));
        }
        f << "<polyline fill=\"none\" stroke=\"" << color(si) << "\" stroke-width=\"1.5\" points=\""
          << pts << "\"/>\n";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            f << "<circle cx=\"" << num(fr.px(s.x[i])) << "\" cy=\"" << num(fr.py(s.y[i]))
              << "\" r=\"2\" fill=\"" << color(si) << "\"/>\n";
        }
    }
    if (series.size() > 1) legend(f, fr, labels);
    f << "</svg>\n";
}

inline void write_bar_chart(const std::string& path, const std::string& title,
                            const std::string& y_label,
                            const std::vector<std::string>& series_labels,
                            const std::vector<BarGroup>& groups) {
    using namespace svgdetail;
    if (groups.empty()) throw DataError("bar chart needs at least one group");
    for (const BarGroup& g : groups)
        if (g.values.size() != series_labels.size())
            throw DataError("bar group \"" + g.label + "\" does not match the series labels");

    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write svg: " + path);

    Frame fr;
    double y1 = 0, y0 = 0;
    for (const BarGroup& g : groups)
        for (double v : g.values) {
            y1 = std::max(y1, v);
            y0 = std::min(y0, v);
        }
    if (y1 == y0) y1 = y0 + 1;
    fr.y0 = y0;
    fr.y1 = y1 * 1.15;  // headroom for annotations
    fr.x0 = 0;
    fr.x1 = 1;

    open_svg(f, fr, title);
    axes(f, fr, "", y_label, false);

    const double plot_w = fr.w - fr.left - fr.right;
    const double group_w = plot_w / double(groups.size());
    const double bar_w = group_w * 0.8 / double(series_labels.size());
    const double base_y = fr.py(std::max(0.0, fr.y0));

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const BarGroup& g = groups[gi];
        double gx = fr.left + group_w * double(gi) + group_w * 0.1;
        for (std::size_t si = 0; si < g.values.size(); ++si) {
            double v = g.values[si];
            double top = fr.py(v);
            double x = gx + bar_w * double(si);
            double y = std::min(top, base_y);
            double h = std::abs(base_y - top);
            f << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(bar_w * 0.9)
              << "\" height=\"" << num(h) << "\" fill=\"" << color(si) << "\"/>\n";
            if (si < g.annotations.size() && !g.annotations[si].empty())
                f << "<text x=\"" << num(x + bar_w * 0.45) << "\" y=\"" << num(y - 4)
                  << "\" text-anchor=\"middle\" font-size=\"10\">" << escape(g.annotations[si])
                  << "</text>\n";
        }
        f << "<text x=\"" << num(gx + group_w * 0.4) << "\" y=\"" << num(fr.h - fr.bottom + 16)
          << "\" text-anchor=\"middle\">" << escape(g.label) << "</text>\n";
    }
    legend(f, fr, series_labels);
    f << "</svg>\n";
}

}  // namespace frankenkit
