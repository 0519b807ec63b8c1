#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "frankenkit/csv.hpp"
#include "frankenkit/report.hpp"
#include "frankenkit/svg.hpp"

#include "support/temp.hpp"

using namespace frankenkit;
using testsupport::TempDir;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::size_t count_of(const std::string& hay, const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t pos = hay.find(needle); pos != std::string::npos;
         pos = hay.find(needle, pos + needle.size()))
        ++n;
    return n;
}

// Vertex counts per polyline, in document order. Each vertex renders as
// "x,y", so commas count vertices.
std::vector<std::size_t> polyline_vertices(const std::string& svg) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while ((pos = svg.find("<polyline", pos)) != std::string::npos) {
        std::size_t p0 = svg.find("points=\"", pos);
        REQUIRE(p0 != std::string::npos);
        p0 += 8;
        std::size_t p1 = svg.find('"', p0);
        out.push_back(count_of(svg.substr(p0, p1 - p0), ","));
        pos = p1;
    }
    return out;
}

}  // namespace

TEST_CASE("doubles format to shortest round-trip text", "[output]") {
    for (double v : {0.1, 1.0 / 3.0, 2.5, -17.0, 1e-300, 1e300, 0.0625,
                     std::numeric_limits<double>::denorm_min()}) {
        std::string s = fmt_double(v);
        REQUIRE(std::strtod(s.c_str(), nullptr) == v);
    }
    REQUIRE(fmt_double(0.1) == "0.1");
    REQUIRE(fmt_double(2.5) == "2.5");
    REQUIRE(fmt_double(-3.0) == "-3");
    REQUIRE(fmt_double(std::numeric_limits<double>::infinity()) == "inf");
    REQUIRE(fmt_double(-std::numeric_limits<double>::infinity()) == "-inf");
    REQUIRE(fmt_double(std::nan("")) == "nan");
}

TEST_CASE("csv cells escape exactly when needed", "[output]") {
    REQUIRE(csv_escape("plain") == "plain");
    REQUIRE(csv_escape("") == "");
    REQUIRE(csv_escape("a,b") == "\"a,b\"");
    REQUIRE(csv_escape("say \"hi\"") == "\"say \"\"hi\"\"\"");
    REQUIRE(csv_escape("two\nlines") == "\"two\nlines\"");
}

TEST_CASE("csv lines parse with quoting", "[output]") {
    REQUIRE(parse_csv_line("a,b,c", "t") == std::vector<std::string>{"a", "b", "c"});
    REQUIRE(parse_csv_line("a,,c", "t") == std::vector<std::string>{"a", "", "c"});
    REQUIRE(parse_csv_line("", "t") == std::vector<std::string>{""});
    REQUIRE(parse_csv_line("\"a,b\",c", "t") == std::vector<std::string>{"a,b", "c"});
    REQUIRE(parse_csv_line("\"say \"\"hi\"\"\"", "t") == std::vector<std::string>{"say \"hi\""});
    REQUIRE_THROWS_WITH(parse_csv_line("\"open,", "t"),
                        Catch::Matchers::ContainsSubstring("unterminated"));
    // escape then parse is the identity on awkward cells
    for (const std::string& cell : {std::string("a,b"), std::string("\"x\""), std::string("c")})
        REQUIRE(parse_csv_line(csv_escape(cell), "t") == std::vector<std::string>{cell});
}

TEST_CASE("csv tables round-trip through files", "[output]") {
    TempDir td;
    std::string path = td.file("t.csv");
    write_csv(path, {"name", "value"},
              {{"alpha", "1.5"}, {"with,comma", "2"}, {"say \"hi\"", "-3"}});
    CsvTable t = read_csv(path);
    REQUIRE(t.header == std::vector<std::string>{"name", "value"});
    REQUIRE(t.rows.size() == 3);
    REQUIRE(t.rows[1][0] == "with,comma");
    REQUIRE(t.rows[2][0] == "say \"hi\"");
    REQUIRE(t.column("value", "t") == 1);
    REQUIRE_THROWS_WITH(t.column("missing", "t"),
                        Catch::Matchers::ContainsSubstring("missing column"));
}

TEST_CASE("csv reading tolerates CRLF and blank lines", "[output]") {
    TempDir td;
    std::string path = td.file("crlf.csv");
    std::ofstream f(path, std::ios::binary);
    f << "a,b\r\n1,2\r\n\r\n3,4\r\n";
    f.close();
    CsvTable t = read_csv(path);
    REQUIRE(t.header == std::vector<std::string>{"a", "b"});
    REQUIRE(t.rows == std::vector<std::vector<std::string>>{{"1", "2"}, {"3", "4"}});

    std::string empty = td.file("empty.csv");
    std::ofstream(empty).close();
    REQUIRE_THROWS_AS(read_csv(empty), DataError);
    REQUIRE_THROWS_AS(read_csv(td.file("nonexistent.csv")), DataError);
}

TEST_CASE("csv numbers parse fully or not at all", "[output]") {
    REQUIRE(csv_number("3.5", "t") == 3.5);
    REQUIRE(csv_number("-0.25", "t") == -0.25);
    REQUIRE(csv_number("inf", "t") == std::numeric_limits<double>::infinity());
    REQUIRE(csv_number("-inf", "t") == -std::numeric_limits<double>::infinity());
    REQUIRE(std::isnan(csv_number("nan", "t")));
    for (const char* bad : {"", "x", "3.5x", "1 2"})
        REQUIRE_THROWS_AS(csv_number(bad, "t"), DataError);
}

TEST_CASE("line charts draw one polyline per series", "[output]") {
    TempDir td;
    std::string path = td.file("c.svg");
    Series s1{"first", {0, 1, 2, 3}, {0.5, 0.25, 0.125, 1.0}};
    Series s2{"second", {0, 1, 2, 3}, {0.1, std::nan(""), 0.3, 0.4}};
    write_line_chart(path, "profile", "layer", "value", {s1, s2});
    std::string svg = slurp(path);
    auto verts = polyline_vertices(svg);
    REQUIRE(verts == std::vector<std::size_t>{4, 3});  // NaN vertex dropped
    REQUIRE(count_of(svg, "<circle") == 7);
    REQUIRE(svg.find("first") != std::string::npos);
    REQUIRE(svg.find("second") != std::string::npos);
    REQUIRE(svg.find("</svg>") != std::string::npos);

    Series bad{"bad", {0, 1}, {0.5}};
    REQUIRE_THROWS_AS(write_line_chart(td.file("bad.svg"), "t", "x", "y", {bad}), DataError);

    // Flat series exercise the degenerate-range guards.
    Series flat{"flat", {0, 1}, {0.5, 0.5}};
    write_line_chart(td.file("flat.svg"), "t", "x", "y", {flat});
    REQUIRE(polyline_vertices(slurp(td.file("flat.svg"))) == std::vector<std::size_t>{2});
}

TEST_CASE("bar charts carry annotations above the bars", "[output]") {
    TempDir td;
    std::string path = td.file("bars.svg");
    std::vector<BarGroup> groups = {
        {"early", {38.0, 46.0}, {"-0.0", "+8.0"}},
        {"mid", {47.0, 55.0}, {}},
        {"late", {42.0, 61.0}, {"", "+19.0"}},
    };
    write_bar_chart(path, "scores", "value", {"run a", "run b"}, groups);
    std::string svg = slurp(path);
    // one backdrop, six bars, two legend swatches
    REQUIRE(count_of(svg, "<rect") == 9);
    REQUIRE(svg.find("+8.0") != std::string::npos);
    REQUIRE(svg.find("+19.0") != std::string::npos);
    REQUIRE(svg.find("-0.0") != std::string::npos);
    REQUIRE(svg.find("early") != std::string::npos);

    REQUIRE_THROWS_AS(write_bar_chart(td.file("x.svg"), "t", "y", {"a"}, {}), DataError);
    REQUIRE_THROWS_AS(
        write_bar_chart(td.file("x.svg"), "t", "y", {"a"}, {{"g", {1.0, 2.0}, {}}}),
        DataError);
}

TEST_CASE("xml-significant characters are escaped in labels", "[output]") {
    TempDir td;
    std::string path = td.file("esc.svg");
    write_line_chart(path, "a < b & c > d", "x", "y", {{"s", {0, 1}, {0, 1}}});
    std::string svg = slurp(path);
    REQUIRE(svg.find("a &lt; b &amp; c &gt; d") != std::string::npos);
    REQUIRE(svg.find("a < b") == std::string::npos);
}

TEST_CASE("layer tables re-render as a line chart", "[output][report]") {
    TempDir td;
    CsvTable t;
    t.header = {"metric", "layer", "value", "n_items"};
    t.rows = {{"change_rate", "0", "0.25", "8"},
              {"change_rate", "1", "0.5", "8"},
              {"change_rate", "2", "0.125", "8"}};
    std::string path = td.file("layer.svg");
    emit_chart(t, ChartKind::layer_line, "probe", path);
    REQUIRE(polyline_vertices(slurp(path)) == std::vector<std::size_t>{3});

    CsvTable no_value = t;
    no_value.header = {"metric", "layer", "score", "extra"};
    emit_chart(no_value, ChartKind::layer_line, "probe", path);  // falls back to last column
    REQUIRE(slurp(path).find("extra") != std::string::npos);

    CsvTable missing = t;
    missing.header = {"metric", "depth", "value", "n"};
    REQUIRE_THROWS_WITH(emit_chart(missing, ChartKind::layer_line, "t", path),
                        Catch::Matchers::ContainsSubstring("missing column"));

    CsvTable ragged = t;
    ragged.rows.push_back({"change_rate"});
    REQUIRE_THROWS_WITH(emit_chart(ragged, ChartKind::layer_line, "t", path),
                        Catch::Matchers::ContainsSubstring("short row"));
}

TEST_CASE("spectrum tables group sampled rows into series", "[output][report]") {
    TempDir td;
    CsvTable t;
    t.header = {"layer", "tensor", "rank", "sigma", "log_normalized", "sampled"};
    t.rows = {
        {"0", "attn.wq.weight", "0", "4", "0", "true"},
        {"0", "attn.wq.weight", "1", "2", "-0.69", "true"},
        {"0", "attn.wq.weight", "2", "1", "-1.38", "false"},
        {"1", "mlp.w_in.weight", "0", "3", "0", "true"},
        {"1", "mlp.w_in.weight", "1", "1.5", "-0.69", "true"},
        {"1", "mlp.w_in.weight", "2", "0.75", "-1.38", "true"},
    };
    std::string path = td.file("spec.svg");
    emit_chart(t, ChartKind::spectrum_lines, "spectra", path);
    std::string svg = slurp(path);
    REQUIRE(polyline_vertices(svg) == std::vector<std::size_t>{2, 3});
    REQUIRE(svg.find("layer 0 attn.wq.weight") != std::string::npos);
    REQUIRE(svg.find("layer 1 mlp.w_in.weight") != std::string::npos);

    CsvTable missing = t;
    missing.header[4] = "logs";
    REQUIRE_THROWS_WITH(emit_chart(missing, ChartKind::spectrum_lines, "t", path),
                        Catch::Matchers::ContainsSubstring("missing column"));

    // Degenerate tensors emit empty log_normalized cells; the re-plot path
    // must drop them rather than choke on the blank.
    CsvTable degen = t;
    degen.rows.push_back({"2", "attn.wk.weight", "0", "0", "", "true"});
    degen.rows.push_back({"2", "attn.wk.weight", "1", "0", "", "true"});
    emit_chart(degen, ChartKind::spectrum_lines, "spectra", path);
    REQUIRE(polyline_vertices(slurp(path)) == std::vector<std::size_t>{2, 3});
}

TEST_CASE("chart kinds parse by name", "[output][report]") {
    REQUIRE(chart_kind_from_name("layer_line") == ChartKind::layer_line);
    REQUIRE(chart_kind_from_name("spectrum_lines") == ChartKind::spectrum_lines);
    REQUIRE_THROWS_AS(chart_kind_from_name("pie"), DataError);
}
