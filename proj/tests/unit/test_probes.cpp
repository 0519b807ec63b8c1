#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "frankenkit/probes.hpp"

#include "support/oracles.hpp"
#include "support/temp.hpp"

using namespace frankenkit;
using testsupport::TempDir;

namespace {

ToyConfig probe_config() {
    ToyConfig cfg;
    cfg.layers = 4;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 32;
    cfg.vocab = 24;
    cfg.n_patches = 3;
    cfg.d_patch = 6;
    cfg.max_positions = 64;
    return cfg;
}

std::vector<ProbeItem> paired_items(std::size_t n, std::uint64_t seed, bool identical = false) {
    std::mt19937_64 rng(seed);
    std::vector<ProbeItem> items;
    for (std::size_t i = 0; i < n; ++i) {
        ProbeItem it;
        it.id = "p" + std::to_string(i);
        it.task = "ocr";
        it.prompt = {int(1 + rng() % 20), int(1 + rng() % 20)};
        it.gold = "1";
        it.image = {ImageSpec::Kind::seed, rng()};
        it.paired = identical ? it.image : ImageSpec{ImageSpec::Kind::seed, rng()};
        items.push_back(std::move(it));
    }
    return items;
}

}  // namespace

TEST_CASE("identical pairs never change the answer", "[probes]") {
    ToyModel m = ToyModel::init(probe_config(), 10);
    std::vector<ProbeItem> items = paired_items(4, 5, /*identical=*/true);
    for (ChangeRateMode mode : {ChangeRateMode::vs_unswapped, ChangeRateMode::vs_self_swap}) {
        LayerProfile prof = vision_change_rate(m, items, {}, mode);
        REQUIRE(prof.values.size() == m.cfg.layers);
        for (const auto& [l, v] : prof.values) {
            INFO("layer " << l);
            REQUIRE(v == 0.0);
        }
    }
}

TEST_CASE("profiles stay within [0,1] and are deterministic", "[probes]") {
    ToyModel m = ToyModel::init(probe_config(), 11);
    std::vector<ProbeItem> items = paired_items(5, 6);
    LayerProfile a = vision_change_rate(m, items);
    LayerProfile b = vision_change_rate(m, items);
    REQUIRE(a.values == b.values);
    REQUIRE(a.n_items == 5);
    for (const auto& [_, v] : a.values) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    LayerProfile e1 = reasoning_error_rate(m, items);
    LayerProfile e2 = reasoning_error_rate(m, items);
    REQUIRE(e1.values == e2.values);
    for (const auto& [_, v] : e1.values) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
}

TEST_CASE("self-swap mode agrees with unswapped mode on one model", "[probes]") {
    // Swapping a run's own captured hiddens back in reproduces the plain run
    // exactly, so both comparison references coincide.
    ToyModel m = ToyModel::init(probe_config(), 12);
    std::vector<ProbeItem> items = paired_items(4, 13);
    LayerProfile u = vision_change_rate(m, items, {}, ChangeRateMode::vs_unswapped);
    LayerProfile s = vision_change_rate(m, items, {}, ChangeRateMode::vs_self_swap);
    REQUIRE(u.values == s.values);
}

TEST_CASE("probed layer subsets restrict the profile", "[probes]") {
    ToyModel m = ToyModel::init(probe_config(), 14);
    std::vector<ProbeItem> items = paired_items(3, 15);
    LayerProfile prof = vision_change_rate(m, items, {1, 3});
    REQUIRE(prof.values.size() == 2);
    REQUIRE(prof.values.count(1) == 1);
    REQUIRE(prof.values.count(3) == 1);
    REQUIRE_THROWS_AS(vision_change_rate(m, items, {4}), DataError);
}

TEST_CASE("unpaired items cannot run a swap probe", "[probes]") {
    ToyModel m = ToyModel::init(probe_config(), 16);
    std::vector<ProbeItem> items = paired_items(2, 17);
    items[1].paired = {};
    REQUIRE_THROWS_AS(vision_change_rate(m, items), DataError);
    REQUIRE_THROWS_AS(vision_change_rate(m, {}), DataError);
}

TEST_CASE("gold answers from the model itself give zero baseline error", "[probes]") {
    ToyModel m = ToyModel::init(probe_config(), 18);
    std::vector<ProbeItem> items = paired_items(4, 19);
    GenerateOptions gen;
    gen.max_new_tokens = 8;
    for (ProbeItem& it : items)
        it.gold = tokens_to_answer(m.generate(it.image.realize(m.cfg), it.prompt, gen).tokens);
    REQUIRE(baseline_error_rate(m, items) == 0.0);
}

TEST_CASE("attention mass matches the brute-force recount", "[probes][attention]") {
    std::mt19937_64 rng(2025);
    for (int trial = 0; trial < 50; ++trial) {
        std::size_t n = 4 + rng() % 13;           // n <= 16
        std::size_t heads = 1 + rng() % 4;        // heads <= 4
        std::size_t nv = 1 + rng() % (n - 2);
        std::size_t rest = n - nv;
        std::size_t np = 1 + rng() % (rest - 1 ? rest - 1 : 1);
        if (np >= rest) np = rest - 1;
        if (np == 0) np = 1;
        std::size_t ng = rest - np;
        if (ng == 0) {
            np -= 1;
            ng = 1;
        }
        SequenceLayout lay{nv, np, ng};
        REQUIRE(lay.total() == n);

        // Random row-stochastic causal matrices.
        std::vector<Matrix> cap;
        std::vector<std::vector<float>> flat;
        std::uniform_real_distribution<double> u(0.01, 1.0);
        for (std::size_t h = 0; h < heads; ++h) {
            Matrix a(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                double sum = 0;
                std::vector<double> row(i + 1);
                for (std::size_t j = 0; j <= i; ++j) {
                    row[j] = u(rng);
                    sum += row[j];
                }
                for (std::size_t j = 0; j <= i; ++j) a.at(i, j) = float(row[j] / sum);
            }
            flat.push_back(a.data);
            cap.push_back(std::move(a));
        }

        for (AttnRows rows : {AttnRows::generated, AttnRows::prompt_and_generated, AttnRows::all}) {
            auto [r0, r1] = probedetail::row_range(lay, rows);
            double got = attention_mass_layer(cap, lay, rows);
            double want = oracle::attention_mass(flat, n, r0, r1, nv);
            INFO("trial " << trial << " rows " << int(rows));
            REQUIRE_THAT(got, Catch::Matchers::WithinAbs(want, 1e-7));
        }
    }
}

TEST_CASE("uniform rows hit the closed form exactly", "[probes][attention]") {
    // With a single query row at the last position attending uniformly over
    // its full causal prefix, the summed mass onto vision is |V|/n and the
    // head-row-column mean is therefore 1/n; the two coincide when |V| = 1.
    for (std::size_t nv : {std::size_t(1), std::size_t(3)}) {
        SequenceLayout lay{nv, 7 - nv, 1};  // n = 8 keeps 1/n exact in binary
        std::size_t n = lay.total();
        Matrix a(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) a.at(i, j) = 1.0f / float(i + 1);
        double mass = attention_mass_layer({a, a}, lay, AttnRows::generated);
        REQUIRE(mass == 1.0 / double(n));
        REQUIRE(mass * double(nv) == double(nv) / double(n));
    }
}

TEST_CASE("uniform model attention matches the closed form per layer",
          "[probes][attention]") {
    ToyConfig cfg = probe_config();
    ToyModel m = ToyModel::init(cfg, 20);
    // Zeroing the query and key maps makes every score zero, so each row
    // softens to the uniform distribution over its causal prefix.
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::string p = "model.layers." + std::to_string(l) + ".";
        for (const char* t : {"attn.wq.weight", "attn.wk.weight"})
            for (float& v : m.weights.at(p + t).data) v = 0.0f;
    }
    GenerateOptions gen;
    gen.max_new_tokens = 1;
    gen.capture_attention = true;
    GenerateResult r = m.generate(make_image(cfg, 33), {4, 7}, gen);
    if (r.layout.n_generated == 1) {
        std::size_t n = r.layout.total();
        LayerProfile prof = attention_mass(r.attention, r.layout, {}, AttnRows::generated);
        REQUIRE(prof.values.size() == cfg.layers);
        for (const auto& [l, v] : prof.values) {
            INFO("layer " << l << " n " << n);
            REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.0 / double(n), 1e-6));
        }
    } else {
        // The model emitted eos immediately; the probe refuses the row set.
        REQUIRE_THROWS_AS(attention_mass_suite(m, paired_items(1, 3), {}, AttnRows::generated),
                          DataError);
    }
}

TEST_CASE("attention mass validates its inputs", "[probes][attention]") {
    SequenceLayout lay{2, 2, 2};
    Matrix ok(6, 6);
    for (std::size_t i = 0; i < 6; ++i) ok.at(i, 0) = 1.0f;
    REQUIRE_THROWS_AS(attention_mass_layer({}, lay), DataError);
    SequenceLayout no_vision{0, 3, 3};
    REQUIRE_THROWS_AS(attention_mass_layer({ok}, no_vision), DataError);
    SequenceLayout no_rows{2, 4, 0};
    REQUIRE_THROWS_AS(attention_mass_layer({ok}, no_rows, AttnRows::generated), DataError);
    Matrix wrong(5, 5);
    REQUIRE_THROWS_AS(attention_mass_layer({wrong}, lay), InvariantError);

    AttentionCapture cap;
    cap.per_layer[0] = {ok};
    REQUIRE_THROWS_AS(attention_mass(cap, lay, {1}), DataError);
    REQUIRE_NOTHROW(attention_mass(cap, lay, {0}));
}

TEST_CASE("suite runs produce the fields each item supports", "[probes]") {
    ToyModel m = ToyModel::init(probe_config(), 21);
    std::vector<ProbeItem> items = paired_items(2, 22);
    items[0].desc = {3, 4};
    items.push_back(ProbeItem{"text", "reasoning", {5, 6}, "2", {}, {}, {}});
    std::vector<EvalRecord> records = run_eval_suite(m, items);
    REQUIRE(records.size() == 3);
    REQUIRE(records[0].pred_img.has_value());
    REQUIRE(records[0].pred_black.has_value());
    REQUIRE(records[0].pred_black_desc.has_value());
    REQUIRE(records[0].pred_text_only.has_value());
    REQUIRE(records[1].pred_img.has_value());
    REQUIRE_FALSE(records[1].pred_black_desc.has_value());
    REQUIRE_FALSE(records[2].pred_img.has_value());
    REQUIRE(records[2].pred_text_only.has_value());
    // Determinism end to end.
    std::vector<EvalRecord> again = run_eval_suite(m, items);
    for (std::size_t i = 0; i < records.size(); ++i) {
        REQUIRE(records[i].pred_img == again[i].pred_img);
        REQUIRE(records[i].pred_text_only == again[i].pred_text_only);
    }
}

TEST_CASE("probe items round-trip through JSONL", "[probes]") {
    TempDir td;
    std::vector<ProbeItem> items = paired_items(3, 23);
    items[0].desc = {9, 9};
    items[2].image = {ImageSpec::Kind::black, 0};
    std::string p = td.file("suite.jsonl");
    write_probe_items(items, p);
    std::vector<ProbeItem> back = read_probe_items(p);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        REQUIRE(back[i].id == items[i].id);
        REQUIRE(back[i].prompt == items[i].prompt);
        REQUIRE(back[i].gold == items[i].gold);
        REQUIRE(back[i].image.kind == items[i].image.kind);
        REQUIRE(back[i].image.seed == items[i].image.seed);
        REQUIRE(back[i].desc == items[i].desc);
    }
    std::ofstream f(p, std::ios::app);
    f << R"({"id":"x","task":"t","gold":"1"})" << "\n";  // prompt missing
    f.close();
    REQUIRE_THROWS_AS(read_probe_items(p), DataError);
}

TEST_CASE("profile comparisons subtract per layer and summarize regions", "[probes]") {
    LayerProfile a, b;
    a.metric = b.metric = "error_rate";
    a.n_items = b.n_items = 4;
    for (std::size_t l = 0; l < 6; ++l) {
        a.values[l] = 0.25 * double(l % 2);
        b.values[l] = a.values[l] + (l < 2 ? 0.5 : l < 4 ? 0.25 : 0.0);
    }
    Partition part = partition_layers(6);
    ProfileComparison c = compare_profiles(a, b, part);
    REQUIRE(c.metric == "error_rate");
    REQUIRE_THAT(c.region_delta_early, Catch::Matchers::WithinAbs(0.5, 1e-12));
    REQUIRE_THAT(c.region_delta_mid, Catch::Matchers::WithinAbs(0.25, 1e-12));
    REQUIRE_THAT(c.region_delta_late, Catch::Matchers::WithinAbs(0.0, 1e-12));
    for (std::size_t l = 0; l < 6; ++l) REQUIRE(c.delta.at(l) == b.values[l] - a.values[l]);

    LayerProfile wrong = a;
    wrong.metric = "change_rate";
    REQUIRE_THROWS_AS(compare_profiles(a, wrong, part), DataError);
    LayerProfile fewer = a;
    fewer.values.erase(5);
    REQUIRE_THROWS_AS(compare_profiles(a, fewer, part), DataError);
    LayerProfile shifted = a;
    shifted.values.erase(5);
    shifted.values[6] = 0.0;
    REQUIRE_THROWS_AS(compare_profiles(a, shifted, part), DataError);
}
