// frankenkit command-line front end.
//
// Every subcommand writes its artifacts into --out-dir (or explicit --out
// paths) together with a run.json provenance manifest holding the argv, the
// resolved options, and FNV-1a checksums of every input file.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "frankenkit/frankenkit.hpp"

namespace fk = frankenkit;
namespace fs = std::filesystem;

namespace {

// JSON config support for CLI11: a flat or nested object whose keys are
// option names (without dashes) or subcommand names.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        nlohmann::json j;
        for (const CLI::Option* opt : app->get_options({})) {
            if (!opt->get_lnames().empty() && opt->get_configurable()) {
                std::string name = opt->get_lnames()[0];
                if (opt->reduced_results().size() == 1) {
                    j[name] = opt->reduced_results()[0];
                } else if (!opt->reduced_results().empty()) {
                    j[name] = opt->reduced_results();
                } else if (default_also) {
                    j[name] = opt->get_default_str();
                }
            }
        }
        for (const CLI::App* sub : app->get_subcommands({}))
            j[sub->get_name()] =
                nlohmann::json::parse(to_config(sub, default_also, false, ""));
        return j.dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        nlohmann::json j;
        try {
            input >> j;
        } catch (const nlohmann::json::exception& e) {
            throw CLI::FileError(std::string("config is not valid JSON: ") + e.what());
        }
        return walk(j, {});
    }

private:
    static std::vector<CLI::ConfigItem> walk(const nlohmann::json& j,
                                             const std::vector<std::string>& parents) {
        std::vector<CLI::ConfigItem> out;
        if (!j.is_object()) throw CLI::FileError("config root must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (value.is_object()) {
                auto prefix = parents;
                prefix.push_back(key);
                auto nested = walk(value, prefix);
                out.insert(out.end(), nested.begin(), nested.end());
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = key;
            if (value.is_array()) {
                for (const auto& v : value)
                    item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
            } else if (value.is_string()) {
                item.inputs.push_back(value.get<std::string>());
            } else {
                item.inputs.push_back(value.dump());
            }
            out.push_back(std::move(item));
        }
        return out;
    }
};

struct GlobalOpts {
    std::uint64_t seed = 0;
    std::size_t workers = 0;  // 0 = library default
    std::string out_dir = ".";
    std::string layer_pattern = fk::NamingConfig{}.layer_pattern;
    std::string partition_override;  // "E:M:L" sizes
    std::vector<std::string> argv;
};

std::string join_path(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw fk::DataError("cannot create output directory " + dir + ": " + ec.message());
}

fk::ModelGraph build_graph(const fk::TensorArchive& a, const GlobalOpts& g,
                           std::size_t declared_layers = 0) {
    fk::NamingConfig cfg;
    cfg.layer_pattern = g.layer_pattern;
    cfg.declared_layers = declared_layers;
    fk::ModelGraph graph = fk::ModelGraph::from_archive(a, cfg);
    if (!g.partition_override.empty()) {
        std::size_t e = 0, m = 0, l = 0;
        char c1 = 0, c2 = 0;
        std::istringstream ss(g.partition_override);
        if (!(ss >> e >> c1 >> m >> c2 >> l) || c1 != ':' || c2 != ':' || !ss.eof())
            throw fk::UsageError("bad --partition \"" + g.partition_override +
                                 "\" (expected sizes E:M:L, e.g. 10:9:9)");
        fk::Partition p;
        p.layers = e + m + l;
        p.early_end = e;
        p.mid_end = e + m;
        graph.override_partition(p);
    }
    return graph;
}

std::set<std::size_t> parse_layer_set(const std::string& text) {
    std::set<std::size_t> out;
    if (text.empty()) return out;
    std::istringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            out.insert(std::stoull(tok));
        } catch (const std::exception&) {
            throw fk::UsageError("bad layer list entry \"" + tok + "\"");
        }
    }
    return out;
}

fk::RunManifest start_manifest(const GlobalOpts& g, const std::string& command,
                               nlohmann::json options) {
    fk::RunManifest m;
    m.argv = g.argv;
    options["command"] = command;
    options["seed"] = g.seed;
    options["out_dir"] = g.out_dir;
    options["layer_pattern"] = g.layer_pattern;
    if (!g.partition_override.empty()) options["partition"] = g.partition_override;
    m.options = std::move(options);
    return m;
}

void finish_manifest(fk::RunManifest& m, const GlobalOpts& g) {
    ensure_dir(g.out_dir);
    std::string path = join_path(g.out_dir, "run.json");
    m.write(path);
}

std::vector<std::vector<std::string>> profile_rows(const fk::LayerProfile& p) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [layer, value] : p.values)
        rows.push_back({p.metric, std::to_string(layer), fk::fmt_double(value),
                        std::to_string(p.n_items)});
    return rows;
}

void write_profile_csv(const fk::LayerProfile& p, const std::string& path) {
    fk::write_csv(path, {"metric", "layer", "value", "n_items"}, profile_rows(p));
}

void write_profile_svg(const fk::LayerProfile& p, const std::string& title,
                       const std::string& path) {
    fk::Series s;
    s.label = p.metric;
    for (const auto& [layer, value] : p.values) {
        s.x.push_back(double(layer));
        s.y.push_back(value);
    }
    fk::write_line_chart(path, title, "layer", p.metric, {s});
}

// ---------------------------------------------------------------------------
// toy
// ---------------------------------------------------------------------------

struct ToyInitArgs {
    std::size_t layers = 12, dmodel = 64, heads = 4, dff = 256, vocab = 64, patches = 8,
                dpatch = 16, maxpos = 256;
    int eos = 0;
    std::string out = "toy.fkpt";
};

int run_toy_init(const GlobalOpts& g, const ToyInitArgs& a) {
    fk::ToyConfig cfg;
    cfg.layers = a.layers;
    cfg.d_model = a.dmodel;
    cfg.n_heads = a.heads;
    cfg.d_ff = a.dff;
    cfg.vocab = a.vocab;
    cfg.n_patches = a.patches;
    cfg.d_patch = a.dpatch;
    cfg.max_positions = a.maxpos;
    cfg.eos_id = a.eos;
    cfg.validate();
    fk::ToyModel model = fk::ToyModel::init(cfg, g.seed);
    ensure_dir(g.out_dir);
    std::string out = join_path(g.out_dir, a.out);
    model.save(out);

    auto m = start_manifest(g, "toy init",
                            {{"layers", a.layers},
                             {"d_model", a.dmodel},
                             {"n_heads", a.heads},
                             {"d_ff", a.dff},
                             {"vocab", a.vocab},
                             {"n_patches", a.patches},
                             {"d_patch", a.dpatch},
                             {"max_positions", a.maxpos},
                             {"eos_id", a.eos}});
    m.note_output(out);
    finish_manifest(m, g);
    return 0;
}

struct ToyPerturbArgs {
    std::string weights;
    std::string out = "perturbed.fkpt";
    double scale_early = 0, scale_mid = 0, scale_late = 0, scale_nonlayer = 0;
};

int run_toy_perturb(const GlobalOpts& g, const ToyPerturbArgs& a) {
    fk::ToyModel model = fk::ToyModel::load(a.weights);
    fk::Partition part = fk::partition_layers(model.cfg.layers);
    std::mt19937_64 rng(g.seed);
    auto apply = [&](fk::Region r, double sigma) {
        if (sigma == 0) return;
        auto [lo, hi] = part.range(r);
        fk::perturb_layers(model, lo, hi, float(sigma), rng);
    };
    apply(fk::Region::early, a.scale_early);
    apply(fk::Region::mid, a.scale_mid);
    apply(fk::Region::late, a.scale_late);
    if (a.scale_nonlayer != 0) {
        std::normal_distribution<float> dist(0.0f, float(a.scale_nonlayer));
        for (auto& [name, w] : model.weights) {
            if (name.rfind("model.layers.", 0) == 0) continue;
            for (float& v : w.data) v += dist(rng);
        }
    }
    ensure_dir(g.out_dir);
    std::string out = join_path(g.out_dir, a.out);
    model.save(out);

    auto m = start_manifest(g, "toy perturb",
                            {{"weights", a.weights},
                             {"scale_early", a.scale_early},
                             {"scale_mid", a.scale_mid},
                             {"scale_late", a.scale_late},
                             {"scale_nonlayer", a.scale_nonlayer}});
    m.note_input(a.weights);
    m.note_output(out);
    finish_manifest(m, g);
    return 0;
}

struct ToySuiteArgs {
    std::string kind = "paired";  // paired | eval | reasoning
    std::size_t items = 8;
    std::string out = "suite.jsonl";
    std::string weights;     // optional: gold answers from this model
    std::size_t vocab = 0;   // prompt token range when no weights are given
    std::size_t max_new_tokens = 8;
};

int run_toy_suite(const GlobalOpts& g, const ToySuiteArgs& a) {
    static const char* tags[] = {"ocr", "counting", "grounding", "recognition"};
    std::mt19937_64 rng(g.seed);
    std::optional<fk::ToyModel> model;
    if (!a.weights.empty()) model = fk::ToyModel::load(a.weights);
    std::size_t vocab = model ? model->cfg.vocab : (a.vocab ? a.vocab : 64);
    std::uniform_int_distribution<int> tok(1, int(vocab) - 1);
    std::uniform_int_distribution<std::size_t> plen(3, 6);
    fk::GenerateOptions gen;
    gen.max_new_tokens = a.max_new_tokens;

    std::vector<fk::ProbeItem> items;
    for (std::size_t i = 0; i < a.items; ++i) {
        fk::ProbeItem it;
        it.id = a.kind + "-" + std::to_string(i);
        it.task = a.kind == "reasoning" ? "reasoning" : tags[i % 4];
        std::size_t n = plen(rng);
        for (std::size_t t = 0; t < n; ++t) it.prompt.push_back(tok(rng));
        if (a.kind != "reasoning") {
            it.image = {fk::ImageSpec::Kind::seed, rng()};
            if (a.kind == "paired") it.paired = {fk::ImageSpec::Kind::seed, rng()};
            if (a.kind == "eval")
                for (int t = 0; t < 3; ++t) it.desc.push_back(tok(rng));
        }
        if (model) {
            fk::ImageInput img = it.image.realize(model->cfg);
            it.gold = fk::tokens_to_answer(model->generate(img, it.prompt, gen).tokens);
            if (it.gold.empty()) it.gold = std::to_string(model->cfg.eos_id);
        } else {
            it.gold = std::to_string(tok(rng));
        }
        items.push_back(std::move(it));
    }
    ensure_dir(g.out_dir);
    std::string out = join_path(g.out_dir, a.out);
    fk::write_probe_items(items, out);

    auto m = start_manifest(g, "toy suite",
                            {{"kind", a.kind},
                             {"items", a.items},
                             {"weights", a.weights},
                             {"max_new_tokens", a.max_new_tokens}});
    if (!a.weights.empty()) m.note_input(a.weights);
    m.note_output(out);
    finish_manifest(m, g);
    return 0;
}

struct ToyEvalArgs {
    std::string weights;
    std::string suite;
    std::string out = "records.jsonl";
    std::size_t max_new_tokens = 8;
};

int run_toy_eval(const GlobalOpts& g, const ToyEvalArgs& a) {
    fk::ToyModel model = fk::ToyModel::load(a.weights);
    std::vector<fk::ProbeItem> items = fk::read_probe_items(a.suite);
    fk::SuiteOptions opt;
    opt.max_new_tokens = a.max_new_tokens;
    std::vector<fk::EvalRecord> records = fk::run_eval_suite(model, items, opt);
    ensure_dir(g.out_dir);
    std::string out = join_path(g.out_dir, a.out);
    fk::write_records(records, out);

    auto m = start_manifest(
        g, "toy eval",
        {{"weights", a.weights}, {"suite", a.suite}, {"max_new_tokens", a.max_new_tokens}});
    m.note_input(a.weights);
    m.note_input(a.suite);
    m.note_output(out);
    finish_manifest(m, g);
    return 0;
}

struct ToyRunArgs {
    std::string weights;
    std::string inputs;
    std::string out = "answers.jsonl";
    std::size_t max_new_tokens = 128;
};

int run_toy_run(const GlobalOpts& g, const ToyRunArgs& a) {
    fk::ToyModel model = fk::ToyModel::load(a.weights);
    std::vector<fk::ToyInput> inputs = fk::read_toy_inputs(a.inputs, model.cfg);
    fk::GenerateOptions gen;
    gen.max_new_tokens = a.max_new_tokens;
    ensure_dir(g.out_dir);
    std::string out = join_path(g.out_dir, a.out);
    std::ofstream f(out, std::ios::trunc);
    if (!f) throw fk::DataError("cannot write answers: " + out);
    for (const fk::ToyInput& in : inputs) {
        fk::GenerateResult r = model.generate(in.image, in.prompt, gen);
        nlohmann::json j;
        j["tokens"] = r.tokens;
        j["answer"] = fk::tokens_to_answer(r.tokens);
        if (!in.gold.empty())
            j["correct"] = fk::answers_match(fk::tokens_to_answer(r.tokens),
                                             fk::tokens_to_answer(in.gold));
        f << j.dump() << "\n";
    }
    f.close();

    auto m = start_manifest(
        g, "toy run",
        {{"weights", a.weights}, {"inputs", a.inputs}, {"max_new_tokens", a.max_new_tokens}});
    m.note_input(a.weights);
    m.note_input(a.inputs);
    m.note_output(out);
    finish_manifest(m, g);
    return 0;
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

struct ProbeArgs {
    std::string kind;  // vision | reasoning | attn
    std::string suite;
    std::string weights;
    std::string compare_weights;
    std::string layers;
    std::string mode = "unswapped";  // unswapped | selfswap
    std::string rows = "generated";  // generated | prompt_and_generated | all
    std::size_t max_new_tokens = 8;
    std::string out_prefix;
};

fk::LayerProfile run_probe_profile(const fk::ToyModel& model, const ProbeArgs& a,
                                   const std::vector<fk::ProbeItem>& items,
                                   const std::set<std::size_t>& layers) {
    fk::SuiteOptions opt;
    opt.max_new_tokens = a.max_new_tokens;
    if (a.kind == "vision") {
        fk::ChangeRateMode mode;
        if (a.mode == "unswapped")
            mode = fk::ChangeRateMode::vs_unswapped;
        else if (a.mode == "selfswap")
            mode = fk::ChangeRateMode::vs_self_swap;
        else
            throw fk::UsageError("bad --mode \"" + a.mode + "\" (expected unswapped or selfswap)");
        return fk::vision_change_rate(model, items, layers, mode, opt);
    }
    if (a.kind == "reasoning") return fk::reasoning_error_rate(model, items, layers, opt);
    if (a.kind == "attn") {
        fk::AttnRows rows;
        if (a.rows == "generated")
            rows = fk::AttnRows::generated;
        else if (a.rows == "prompt_and_generated")
            rows = fk::AttnRows::prompt_and_generated;
        else if (a.rows == "all")
            rows = fk::AttnRows::all;
        else
            throw fk::UsageError("bad --rows \"" + a.rows + "\"");
        return fk::attention_mass_suite(model, items, layers, rows, opt);
    }
    throw fk::UsageError("bad --kind \"" + a.kind + "\" (expected vision, reasoning or attn)");
}

int run_probe(const GlobalOpts& g, const ProbeArgs& a) {
    fk::ToyModel model = fk::ToyModel::load(a.weights);
    std::vector<fk::ProbeItem> items = fk::read_probe_items(a.suite);
    std::set<std::size_t> layers = parse_layer_set(a.layers);
    std::string prefix = a.out_prefix.empty() ? "probe_" + a.kind : a.out_prefix;

    fk::LayerProfile prof = run_probe_profile(model, a, items, layers);
    ensure_dir(g.out_dir);
    std::string csv = join_path(g.out_dir, prefix + ".csv");
    std::string svg = join_path(g.out_dir, prefix + ".svg");
    write_profile_csv(prof, csv);
    write_profile_svg(prof, prof.metric + " by layer", svg);

    auto m = start_manifest(g, "probe",
                            {{"kind", a.kind},
                             {"suite", a.suite},
                             {"weights", a.weights},
                             {"compare_weights", a.compare_weights},
                             {"layers", a.layers},
                             {"mode", a.mode},
                             {"rows", a.rows},
                             {"max_new_tokens", a.max_new_tokens}});
    m.note_input(a.weights);
    m.note_input(a.suite);
    m.note_output(csv);
    m.note_output(svg);

    if (!a.compare_weights.empty()) {
        fk::ToyModel other = fk::ToyModel::load(a.compare_weights);
        if (other.cfg.layers != model.cfg.layers)
            throw fk::DataError("cannot compare probes across different layer counts");
        fk::LayerProfile prof_b = run_probe_profile(other, a, items, layers);
        std::string csv_b = join_path(g.out_dir, prefix + "_b.csv");
        write_profile_csv(prof_b, csv_b);

        fk::Partition part = fk::partition_layers(model.cfg.layers);
        fk::ProfileComparison cmp = fk::compare_profiles(prof, prof_b, part);
        std::vector<std::vector<std::string>> rows;
        for (const auto& [layer, delta] : cmp.delta)
            rows.push_back({cmp.metric, std::to_string(layer),
                            fk::fmt_double(prof.values.at(layer)), std::to_string(prof.n_items),
                            fk::fmt_double(delta),
                            fk::region_name(part.region_of(layer))});
        std::string cmp_csv = join_path(g.out_dir, prefix + "_compare.csv");
        fk::write_csv(cmp_csv, {"metric", "layer", "value", "n_items", "delta", "region"}, rows);
        m.note_input(a.compare_weights);
        m.note_output(csv_b);
        m.note_output(cmp_csv);
    }
    finish_manifest(m, g);
    return 0;
}

// ---------------------------------------------------------------------------
// norms / spectra
// ---------------------------------------------------------------------------

struct NormsArgs {
    std::string base;
    std::string trained;
    std::string aggregation = "sqsum";  // sqsum | mean
    std::size_t layers = 0;
};

int run_norms(const GlobalOpts& g, const NormsArgs& a) {
    fk::TensorArchive base = fk::TensorArchive::open(a.base);
    fk::TensorArchive trained = fk::TensorArchive::open(a.trained);
    fk::ModelGraph graph = build_graph(base, g, a.layers);
    if (graph.layers() == 0) throw fk::DataError("no layer tensors matched the layer pattern");

    std::vector<fk::LayerDelta> deltas = fk::layer_delta(base, trained, graph);
    fk::Aggregation agg;
    if (a.aggregation == "sqsum")
        agg = fk::Aggregation::sum_of_squares_then_sqrt;
    else if (a.aggregation == "mean")
        agg = fk::Aggregation::mean;
    else
        throw fk::UsageError("bad --aggregation \"" + a.aggregation + "\" (expected sqsum or mean)");
    fk::NormProfile profile = fk::frobenius_profile(deltas, graph.layers(), agg);
    fk::RegionNorms regions = fk::region_means(profile, graph.partition());

    std::vector<double> norms(deltas.size());
    fk::parallel_for(deltas.size(), [&](std::size_t i) { norms[i] = fk::frobenius_norm(deltas[i].delta); },
                     g.workers);

    ensure_dir(g.out_dir);
    std::string csv = join_path(g.out_dir, "norms.csv");
    {
        std::vector<std::vector<std::string>> rows;
        for (std::size_t i = 0; i < deltas.size(); ++i)
            rows.push_back({std::to_string(deltas[i].layer), deltas[i].tensor,
                            fk::fmt_double(norms[i])});
        fk::write_csv(csv, {"layer", "tensor", "frobenius"}, rows);
    }
    std::string pcsv = join_path(g.out_dir, "norms_profile.csv");
    {
        std::vector<std::vector<std::string>> rows;
        for (std::size_t l = 0; l < profile.per_layer.size(); ++l)
            rows.push_back({"frobenius_profile", std::to_string(l),
                            fk::fmt_double(profile.per_layer[l]),
                            std::to_string(profile.tensor_count[l])});
        fk::write_csv(pcsv, {"metric", "layer", "value", "n_items"}, rows);
    }
    std::string svg = join_path(g.out_dir, "norms.svg");
    {
        fk::Series s;
        s.label = "frobenius";
        for (std::size_t l = 0; l < profile.per_layer.size(); ++l) {
            s.x.push_back(double(l));
            s.y.push_back(profile.per_layer[l]);
        }
        fk::write_line_chart(svg, "per-layer Frobenius norm of the update", "layer", "frobenius",
                             {s});
    }
    std::string summary = join_path(g.out_dir, "norms_summary.json");
    {
        nlohmann::json j;
        j["aggregation"] = a.aggregation;
        j["region_means"] = {{"early", regions.early}, {"mid", regions.mid}, {"late", regions.late}};
        std::size_t argmax = 0;
        for (std::size_t l = 1; l < profile.per_layer.size(); ++l)
            if (profile.per_layer[l] > profile.per_layer[argmax]) argmax = l;
        j["argmax_layer"] = argmax;
        j["argmax_region"] = fk::region_name(graph.partition().region_of(argmax));
        std::ofstream f(summary, std::ios::trunc);
        f << j.dump(2) << "\n";
    }

    auto m = start_manifest(g, "norms",
                            {{"base", a.base},
                             {"trained", a.trained},
                             {"aggregation", a.aggregation},
                             {"layers", a.layers}});
    m.note_input(a.base);
    m.note_input(a.trained);
    m.note_output(csv);
    m.note_output(pcsv);
    m.note_output(svg);
    m.note_output(summary);
    finish_manifest(m, g);
    return 0;
}

struct SpectraArgs {
    std::string base;
    std::string trained;
    std::size_t stride = 10;
    double rank_fraction = 0.01;
    std::string tensor_filter;  // substring of tensor names
    std::size_t layers = 0;
};

int run_spectra(const GlobalOpts& g, const SpectraArgs& a) {
    fk::TensorArchive base = fk::TensorArchive::open(a.base);
    fk::TensorArchive trained = fk::TensorArchive::open(a.trained);
    fk::ModelGraph graph = build_graph(base, g, a.layers);
    if (graph.layers() == 0) throw fk::DataError("no layer tensors matched the layer pattern");

    std::vector<fk::LayerDelta> all = fk::layer_delta(base, trained, graph);
    std::vector<fk::LayerDelta> deltas;
    for (auto& d : all) {
        if (d.delta.shape.size() < 2) continue;  // spectra are for weight matrices
        if (!a.tensor_filter.empty() && d.tensor.find(a.tensor_filter) == std::string::npos)
            continue;
        deltas.push_back(std::move(d));
    }
    if (deltas.empty()) throw fk::DataError("no 2-D delta tensors to analyze");

    std::vector<fk::SpectrumReport> reports(deltas.size());
    fk::parallel_for(
        deltas.size(),
        [&](std::size_t i) { reports[i] = fk::singular_spectrum(deltas[i], a.stride); },
        g.workers);

    ensure_dir(g.out_dir);
    std::string csv = join_path(g.out_dir, "spectrum.csv");
    {
        std::vector<std::vector<std::string>> rows;
        for (const fk::SpectrumReport& sp : reports) {
            std::set<std::size_t> sampled(sp.sampled_ranks.begin(), sp.sampled_ranks.end());
            for (std::size_t r = 0; r < sp.sigma.size(); ++r)
                rows.push_back({std::to_string(sp.layer), sp.tensor, std::to_string(r),
                                fk::fmt_double(sp.sigma[r]),
                                sp.degenerate ? "" : fk::fmt_double(sp.log_normalized[r]),
                                sampled.count(r) ? "true" : "false"});
        }
        fk::write_csv(csv, {"layer", "tensor", "rank", "sigma", "log_normalized", "sampled"},
                      rows);
    }
    std::string decay = join_path(g.out_dir, "decay.json");
    {
        nlohmann::json per_tensor = nlohmann::json::array();
        std::map<std::size_t, std::pair<double, std::size_t>> by_layer;
        for (const fk::SpectrumReport& sp : reports) {
            nlohmann::json e;
            e["layer"] = sp.layer;
            e["tensor"] = sp.tensor;
            e["degenerate"] = sp.degenerate;
            if (!sp.degenerate) {
                double v = fk::decay_summary(sp, a.rank_fraction);
                e["decay"] = v;
                by_layer[sp.layer].first += v;
                by_layer[sp.layer].second += 1;
            }
            per_tensor.push_back(e);
        }
        nlohmann::json per_layer = nlohmann::json::object();
        for (const auto& [layer, acc] : by_layer)
            per_layer[std::to_string(layer)] = acc.first / double(acc.second);
        nlohmann::json j;
        j["rank_fraction"] = a.rank_fraction;
        j["per_tensor"] = per_tensor;
        j["per_layer_mean"] = per_layer;
        std::ofstream f(decay, std::ios::trunc);
        f << j.dump(2) << "\n";
    }
    std::string svg = join_path(g.out_dir, "spectra.svg");
    {
        std::vector<fk::Series> series;
        for (const fk::SpectrumReport& sp : reports) {
            if (sp.degenerate) continue;
            fk::Series s;
            s.label = "layer " + std::to_string(sp.layer) + " " + sp.tensor;
            for (std::size_t r : sp.sampled_ranks) {
                s.x.push_back(double(r));
                s.y.push_back(sp.log_normalized[r]);
            }
            series.push_back(std::move(s));
        }
        fk::write_line_chart(svg, "log-normalized singular spectra", "rank",
                             "log(sigma_i / sigma_1)", series);
    }

    auto m = start_manifest(g, "spectra",
                            {{"base", a.base},
                             {"trained", a.trained},
                             {"stride", a.stride},
                             {"rank_fraction", a.rank_fraction},
                             {"tensor_filter", a.tensor_filter},
                             {"layers", a.layers}});
    m.note_input(a.base);
    m.note_input(a.trained);
    m.note_output(csv);
    m.note_output(decay);
    m.note_output(svg);
    finish_manifest(m, g);
    return 0;
}

// ---------------------------------------------------------------------------
// merge / mask
// ---------------------------------------------------------------------------

struct MergeArgs {
    std::string a;
    std::string b;
    std::string recipe = "A:B:B";
    bool enumerate = false;
    std::string out = "merged.fkpt";
    std::string stem = "hybrid";
    std::size_t layers = 0;
};

int run_merge(const GlobalOpts& g, const MergeArgs& a) {
    fk::TensorArchive A = fk::TensorArchive::open(a.a);
    fk::TensorArchive B = fk::TensorArchive::open(a.b);
    fk::ModelGraph graph = build_graph(A, g, a.layers);
    if (graph.layers() < 3)
        throw fk::DataError("merging needs at least 3 layers, found " +
                            std::to_string(graph.layers()));

    ensure_dir(g.out_dir);
    auto m = start_manifest(g, "merge",
                            {{"a", a.a},
                             {"b", a.b},
                             {"recipe", a.recipe},
                             {"enumerate", a.enumerate},
                             {"stem", a.stem},
                             {"layers", a.layers}});
    m.note_input(a.a);
    m.note_input(a.b);

    nlohmann::json summary;
    summary["partition"] = {{"L", graph.partition().layers},
                            {"early_end", graph.partition().early_end},
                            {"mid_end", graph.partition().mid_end}};
    summary["source_checksums"] = {{"A", fk::hex64(fk::file_checksum(a.a))},
                                   {"B", fk::hex64(fk::file_checksum(a.b))}};

    if (a.enumerate) {
        std::vector<std::string> paths = fk::enumerate_hybrids(A, B, graph, g.out_dir, a.stem);
        nlohmann::json hybrids = nlohmann::json::array();
        for (std::size_t i = 0; i < paths.size(); ++i) {
            fk::MergeRecipe r = fk::all_region_recipes()[i];
            fk::MergeResult res = fk::merge_checkpoints(A, B, graph, r);
            nlohmann::json h;
            h["path"] = paths[i];
            h["recipe"] = r.to_string();
            h["region_checksums"] = fk::region_checksums(res, graph);
            hybrids.push_back(h);
            m.note_output(paths[i]);
        }
        summary["hybrids"] = hybrids;
    } else {
        fk::MergeRecipe recipe = fk::parse_recipe(a.recipe);
        fk::MergeResult res = fk::merge_checkpoints(A, B, graph, recipe);
        std::string out = join_path(g.out_dir, a.out);
        fk::write_merge(res, out);
        summary["recipe"] = recipe.to_string();
        summary["region_checksums"] = fk::region_checksums(res, graph);
        summary["path"] = out;
        m.note_output(out);
    }
    std::string mpath = join_path(g.out_dir, "merge.json");
    {
        std::ofstream f(mpath, std::ios::trunc);
        f << summary.dump(2) << "\n";
    }
    m.note_output(mpath);
    finish_manifest(m, g);
    return 0;
}

struct MaskArgs {
    std::string weights;
    std::string region = "mid";
    std::string out = "mask.json";
    std::size_t layers = 0;
};

int run_mask(const GlobalOpts& g, const MaskArgs& a) {
    fk::TensorArchive archive = fk::TensorArchive::open(a.weights);
    fk::ModelGraph graph = build_graph(archive, g, a.layers);
    if (graph.layers() < 3)
        throw fk::DataError("freeze masks need at least 3 layers, found " +
                            std::to_string(graph.layers()));
    fk::FreezeMask mask = fk::freeze_mask(graph, fk::region_from_name(a.region));
    ensure_dir(g.out_dir);
    std::string out = join_path(g.out_dir, a.out);
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f) throw fk::DataError("cannot write mask: " + out);
        f << fk::freeze_mask_json(mask).dump(2) << "\n";
    }
    auto m = start_manifest(g, "mask",
                            {{"weights", a.weights}, {"region", a.region}, {"layers", a.layers}});
    m.note_input(a.weights);
    m.note_output(out);
    finish_manifest(m, g);
    return 0;
}

// ---------------------------------------------------------------------------
// metrics / report
// ---------------------------------------------------------------------------

struct MetricsArgs {
    std::string records;
    std::string metric = "vis";
    std::string stages;  // comma list for a monotonicity check
    std::string out;
};

int run_metrics(const GlobalOpts& g, const MetricsArgs& a) {
    if (a.records.empty() && a.stages.empty())
        throw fk::UsageError("metrics needs --records or --stages");
    ensure_dir(g.out_dir);
    nlohmann::json j;
    auto m = start_manifest(
        g, "metrics", {{"records", a.records}, {"metric", a.metric}, {"stages", a.stages}});

    if (!a.records.empty()) {
        std::vector<fk::EvalRecord> records = fk::read_records(a.records);
        fk::MetricReport rep = fk::compute_metric(records, fk::metric_from_name(a.metric));
        j = rep.to_json();
        m.note_input(a.records);
    }
    if (!a.stages.empty()) {
        std::vector<double> stages;
        std::istringstream ss(a.stages);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) stages.push_back(fk::csv_number(tok, "--stages"));
        j["stages"] = stages;
        j["verdict"] = fk::monotonicity_name(fk::monotonicity_check(stages));
    }
    std::string out =
        join_path(g.out_dir, a.out.empty() ? "metrics_" + a.metric + ".json" : a.out);
    {
        std::ofstream f(out, std::ios::trunc);
        if (!f) throw fk::DataError("cannot write metrics report: " + out);
        f << j.dump(2) << "\n";
    }
    m.note_output(out);
    finish_manifest(m, g);
    std::cout << j.dump(2) << "\n";
    return 0;
}

struct ReportArgs {
    std::string in;
    std::string chart = "svg";
    std::string kind = "layer_line";
    std::string title;
    std::string out;
};

int run_report(const GlobalOpts& g, const ReportArgs& a) {
    if (a.chart != "svg") throw fk::UsageError("only --chart svg is supported");
    fk::CsvTable table = fk::read_csv(a.in);
    ensure_dir(g.out_dir);
    std::string base = fs::path(a.in).stem().string();
    std::string out = join_path(g.out_dir, a.out.empty() ? base + ".svg" : a.out);
    std::string title = a.title.empty() ? base : a.title;
    fk::emit_chart(table, fk::chart_kind_from_name(a.kind), title, out);

    auto m = start_manifest(g, "report", {{"in", a.in}, {"chart", a.chart}, {"kind", a.kind}});
    m.note_input(a.in);
    m.note_output(out);
    finish_manifest(m, g);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"model dissection toolkit: probes, update geometry, region merging"};
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON config file with option defaults");
    app.require_subcommand(1);

    GlobalOpts g;
    for (int i = 0; i < argc; ++i) g.argv.push_back(argv[i]);
    app.add_option("--seed", g.seed, "global random seed")->capture_default_str();
    app.add_option("--workers", g.workers, "worker threads (0 = auto)")->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "artifact output directory")->capture_default_str();
    app.add_option("--layer-pattern", g.layer_pattern,
                   "regex with one capture group for the layer index")
        ->capture_default_str();
    app.add_option("--partition", g.partition_override, "region sizes override, e.g. 10:9:9");

    // toy
    auto* toy = app.add_subcommand("toy", "build and run the reference toy model");
    toy->require_subcommand(1);
    ToyInitArgs ti;
    auto* toy_init = toy->add_subcommand("init", "write a reproducible random checkpoint");
    toy_init->add_option("--layers", ti.layers)->capture_default_str();
    toy_init->add_option("--dmodel", ti.dmodel)->capture_default_str();
    toy_init->add_option("--heads", ti.heads)->capture_default_str();
    toy_init->add_option("--dff", ti.dff)->capture_default_str();
    toy_init->add_option("--vocab", ti.vocab)->capture_default_str();
    toy_init->add_option("--patches", ti.patches)->capture_default_str();
    toy_init->add_option("--dpatch", ti.dpatch)->capture_default_str();
    toy_init->add_option("--maxpos", ti.maxpos)->capture_default_str();
    toy_init->add_option("--eos", ti.eos)->capture_default_str();
    toy_init->add_option("--out", ti.out)->capture_default_str();

    ToyPerturbArgs tp;
    auto* toy_perturb =
        toy->add_subcommand("perturb", "add region-scaled noise to a checkpoint");
    toy_perturb->add_option("--weights", tp.weights)->required();
    toy_perturb->add_option("--out", tp.out)->capture_default_str();
    toy_perturb->add_option("--scale-early", tp.scale_early)->capture_default_str();
    toy_perturb->add_option("--scale-mid", tp.scale_mid)->capture_default_str();
    toy_perturb->add_option("--scale-late", tp.scale_late)->capture_default_str();
    toy_perturb->add_option("--scale-nonlayer", tp.scale_nonlayer)->capture_default_str();

    ToySuiteArgs ts;
    auto* toy_suite = toy->add_subcommand("suite", "generate a synthetic probe suite");
    toy_suite->add_option("--kind", ts.kind, "paired | eval | reasoning")->capture_default_str();
    toy_suite->add_option("--items", ts.items)->capture_default_str();
    toy_suite->add_option("--out", ts.out)->capture_default_str();
    toy_suite->add_option("--weights", ts.weights, "gold answers from this model");
    toy_suite->add_option("--vocab", ts.vocab, "prompt token range when --weights is absent");
    toy_suite->add_option("--max-new-tokens", ts.max_new_tokens)->capture_default_str();

    ToyEvalArgs te;
    auto* toy_eval = toy->add_subcommand("eval", "run a suite into evaluation records");
    toy_eval->add_option("--weights", te.weights)->required();
    toy_eval->add_option("--suite", te.suite)->required();
    toy_eval->add_option("--out", te.out)->capture_default_str();
    toy_eval->add_option("--max-new-tokens", te.max_new_tokens)->capture_default_str();

    ToyRunArgs tr;
    auto* toy_run = toy->add_subcommand("run", "answer direct toy inputs");
    toy_run->add_option("--weights", tr.weights)->required();
    toy_run->add_option("--inputs", tr.inputs)->required();
    toy_run->add_option("--out", tr.out)->capture_default_str();
    toy_run->add_option("--max-new-tokens", tr.max_new_tokens)->capture_default_str();

    // probe
    ProbeArgs pa;
    auto* probe = app.add_subcommand("probe", "layer probes over a suite");
    probe->add_option("--kind", pa.kind, "vision | reasoning | attn")->required();
    probe->add_option("--suite", pa.suite)->required();
    probe->add_option("--weights", pa.weights)->required();
    probe->add_option("--compare-weights", pa.compare_weights,
                      "second checkpoint for a comparison report");
    probe->add_option("--layers", pa.layers, "comma list of layers (default all)");
    probe->add_option("--mode", pa.mode, "change-rate reference: unswapped | selfswap")
        ->capture_default_str();
    probe->add_option("--rows", pa.rows, "attention query rows: generated | prompt_and_generated | all")
        ->capture_default_str();
    probe->add_option("--max-new-tokens", pa.max_new_tokens)->capture_default_str();
    probe->add_option("--out-prefix", pa.out_prefix, "artifact name prefix");

    // norms
    NormsArgs na;
    auto* norms = app.add_subcommand("norms", "per-layer Frobenius norms of an update");
    norms->add_option("--base", na.base)->required();
    norms->add_option("--trained", na.trained)->required();
    norms->add_option("--aggregation", na.aggregation, "sqsum | mean")->capture_default_str();
    norms->add_option("--layers", na.layers, "declared layer count (default inferred)");

    // spectra
    SpectraArgs sa;
    auto* spectra = app.add_subcommand("spectra", "singular spectra of update deltas");
    spectra->add_option("--base", sa.base)->required();
    spectra->add_option("--trained", sa.trained)->required();
    spectra->add_option("--stride", sa.stride, "rank sampling stride")->capture_default_str();
    spectra->add_option("--rank-fraction", sa.rank_fraction)->capture_default_str();
    spectra->add_option("--tensor-filter", sa.tensor_filter, "substring filter on tensor names");
    spectra->add_option("--layers", sa.layers, "declared layer count (default inferred)");

    // merge
    MergeArgs ma;
    auto* merge = app.add_subcommand("merge", "region-wise checkpoint merge");
    merge->add_option("--a", ma.a)->required();
    merge->add_option("--b", ma.b)->required();
    merge->add_option("--recipe", ma.recipe, "E:M:L donors, e.g. A:B:B;head=B")
        ->capture_default_str();
    merge->add_flag("--enumerate", ma.enumerate, "write all 8 region recipes");
    merge->add_option("--out", ma.out)->capture_default_str();
    merge->add_option("--stem", ma.stem, "file stem for --enumerate outputs")
        ->capture_default_str();
    merge->add_option("--layers", ma.layers, "declared layer count (default inferred)");

    // mask
    MaskArgs ka;
    auto* mask = app.add_subcommand("mask", "emit a freeze mask for a region");
    mask->add_option("--weights", ka.weights)->required();
    mask->add_option("--region", ka.region, "early | mid | late")->capture_default_str();
    mask->add_option("--out", ka.out)->capture_default_str();
    mask->add_option("--layers", ka.layers, "declared layer count (default inferred)");

    // metrics
    MetricsArgs xa;
    auto* metrics = app.add_subcommand("metrics", "fine-grained metrics over records");
    metrics->add_option("--records", xa.records, "EvalRecord JSONL");
    metrics->add_option("--metric", xa.metric, "vis | v2r | rea")->capture_default_str();
    metrics->add_option("--stages", xa.stages, "comma list for a monotonicity verdict");
    metrics->add_option("--out", xa.out, "report file name");

    // report
    ReportArgs ra;
    auto* report = app.add_subcommand("report", "re-plot an emitted CSV as SVG");
    report->add_option("--in", ra.in)->required();
    report->add_option("--chart", ra.chart, "svg")->capture_default_str();
    report->add_option("--kind", ra.kind, "layer_line | spectrum_lines")->capture_default_str();
    report->add_option("--title", ra.title);
    report->add_option("--out", ra.out, "output file name");

    // Let global options (--seed, --out-dir, ...) appear after the subcommand.
    std::function<void(CLI::App*)> enable_fallthrough = [&](CLI::App* a) {
        for (CLI::App* sub : a->get_subcommands({})) {
            sub->fallthrough();
            enable_fallthrough(sub);
        }
    };
    enable_fallthrough(&app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (toy_init->parsed()) return run_toy_init(g, ti);
        if (toy_perturb->parsed()) return run_toy_perturb(g, tp);
        if (toy_suite->parsed()) return run_toy_suite(g, ts);
        if (toy_eval->parsed()) return run_toy_eval(g, te);
        if (toy_run->parsed()) return run_toy_run(g, tr);
        if (probe->parsed()) return run_probe(g, pa);
        if (norms->parsed()) return run_norms(g, na);
        if (spectra->parsed()) return run_spectra(g, sa);
        if (merge->parsed()) return run_merge(g, ma);
        if (mask->parsed()) return run_mask(g, ka);
        if (metrics->parsed()) return run_metrics(g, xa);
        if (report->parsed()) return run_report(g, ra);
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const fk::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const fk::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const fk::InvariantError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
