#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <set>

#include "frankenkit/region_merge.hpp"

#include "support/oracles.hpp"
#include "support/temp.hpp"

using namespace frankenkit;
using testsupport::TempDir;

namespace {

std::vector<std::string> merge_names(std::size_t layers) {
    std::vector<std::string> names = {
        "vision_encoder.proj.weight", "model.embed_tokens.weight",
        "model.norm.weight",          "lm_head.weight",
    };
    for (std::size_t l = 0; l < layers; ++l) {
        std::string p = "model.layers." + std::to_string(l) + ".";
        names.push_back(p + "attn.wq.weight");
        names.push_back(p + "mlp.w_in.weight");
    }
    return names;
}

std::string donor_path(TempDir& td, const std::string& tag, std::size_t layers,
                       std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::map<std::string, TensorSpec> tensors;
    for (const std::string& name : merge_names(layers)) {
        TensorSpec t;
        t.dtype = Dtype::f32;
        t.shape = {3, 4};
        t.data.resize(12);
        for (float& v : t.data) v = float(rng() % 1000) / 16.0f;
        tensors.emplace(name, std::move(t));
    }
    std::string path = td.file("donor_" + tag + ".fkpt");
    write_archive(tensors, {{"toy", tag}}, path);
    return path;
}

struct MergeFixture {
    TempDir td;
    TensorArchive a, b;
    ModelGraph graph;

    explicit MergeFixture(std::size_t layers = 6)
        : a(TensorArchive::open(donor_path(td, "a", layers, 100))),
          b(TensorArchive::open(donor_path(td, "b", layers, 200))),
          graph(ModelGraph::from_archive(a)) {}
};

bool same_bytes(const TensorArchive& x, const std::string& name,
                const std::vector<std::uint8_t>& bytes) {
    auto raw = x.raw(name);
    return std::equal(raw.begin(), raw.end(), bytes.begin(), bytes.end());
}

}  // namespace

TEST_CASE("recipe strings parse and print", "[region_merge]") {
    MergeRecipe r = parse_recipe("A:B:B");
    REQUIRE(r.early == Donor::A);
    REQUIRE(r.mid == Donor::B);
    REQUIRE(r.late == Donor::B);
    REQUIRE(r.non_layer.empty());
    REQUIRE(r.tag() == "EA_MB_LB");
    REQUIRE(r.to_string() == "A:B:B");

    MergeRecipe lower = parse_recipe("b:a:b");
    REQUIRE(lower.early == Donor::B);
    REQUIRE(lower.mid == Donor::A);
    REQUIRE(lower.tag() == "EB_MA_LB");

    MergeRecipe extras = parse_recipe("A:A:B;head=B,embed=B");
    REQUIRE(extras.non_layer.at(Role::head) == Donor::B);
    REQUIRE(extras.non_layer.at(Role::embedding) == Donor::B);
    REQUIRE(parse_recipe(extras.to_string()).non_layer == extras.non_layer);
    REQUIRE(parse_recipe("A:A:A;head=A").to_string() == "A:A:A");

    for (const char* bad : {"A:B", "AB:B:B", "A;B:B", "X:B:B", "A:B:B;head", "A:B:B;head=",
                            "A:B:B;head=C", "A:B:B;bogus=B"})
        REQUIRE_THROWS_AS(parse_recipe(bad), UsageError);

    REQUIRE(donor_letter(Donor::A) == 'A');
    REQUIRE(donor_from_letter('b') == Donor::B);
    REQUIRE_THROWS_AS(donor_from_letter('q'), UsageError);
}

TEST_CASE("all eight region recipes come out distinct and ordered", "[region_merge]") {
    std::vector<MergeRecipe> all = all_region_recipes();
    REQUIRE(all.size() == 8);
    std::set<std::string> tags;
    for (const MergeRecipe& r : all) tags.insert(r.tag());
    REQUIRE(tags.size() == 8);
    REQUIRE(all.front().tag() == "EA_MA_LA");
    REQUIRE(all.back().tag() == "EB_MB_LB");
}

TEST_CASE("an all-A merge copies donor A byte for byte", "[region_merge]") {
    MergeFixture f;
    MergeResult m = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("A:A:A"));
    REQUIRE(m.tensors.size() == f.a.names().size());
    for (const auto& [name, t] : m.tensors) {
        INFO(name);
        REQUIRE(m.origin.at(name) == Donor::A);
        REQUIRE(same_bytes(f.a, name, t.bytes));
    }
    REQUIRE(m.metadata.at("merge.recipe") == "A:A:A");
}

TEST_CASE("layer tensors follow their region donor", "[region_merge]") {
    MergeFixture f;  // 6 layers partition as 2/2/2
    MergeResult m = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("A:B:A"));
    const Partition& p = f.graph.partition();
    REQUIRE(m.metadata.at("merge.partition") ==
            "6:" + std::to_string(p.early_end) + ":" + std::to_string(p.mid_end));
    for (const auto& [name, t] : m.tensors) {
        const TensorSlot& slot = f.graph.slot(name);
        Donor want = Donor::A;
        if (slot.role == Role::layer && p.region_of(*slot.layer) == Region::mid)
            want = Donor::B;
        INFO(name);
        REQUIRE(m.origin.at(name) == want);
        REQUIRE(same_bytes(want == Donor::A ? f.a : f.b, name, t.bytes));
    }
}

TEST_CASE("non-layer roles can be reassigned", "[region_merge]") {
    MergeFixture f;
    MergeResult m = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("A:A:A;head=B"));
    REQUIRE(m.origin.at("lm_head.weight") == Donor::B);
    REQUIRE(m.origin.at("model.embed_tokens.weight") == Donor::A);
    REQUIRE(m.origin.at("vision_encoder.proj.weight") == Donor::A);
    REQUIRE(same_bytes(f.b, "lm_head.weight", m.tensors.at("lm_head.weight").bytes));
    REQUIRE(m.metadata.at("merge.recipe") == "A:A:A;head=B");
}

TEST_CASE("donor mismatches are reported in one pass", "[region_merge]") {
    TempDir td;
    std::map<std::string, TensorSpec> ta, tb;
    TensorSpec base;
    base.dtype = Dtype::f32;
    base.shape = {2, 2};
    base.data = {1, 2, 3, 4};
    for (const std::string& n : merge_names(3)) {
        ta.emplace(n, base);
        tb.emplace(n, base);
    }
    ta.emplace("model.extra_a.weight", base);
    tb.emplace("model.extra_b.weight", base);
    tb.at("model.norm.weight").shape = {4, 1};
    tb.at("lm_head.weight").dtype = Dtype::f16;
    tb.at("lm_head.weight").data.resize(4);
    std::string pa = td.file("a.fkpt"), pb = td.file("b.fkpt");
    write_archive(ta, {}, pa);
    write_archive(tb, {}, pb);
    TensorArchive a = TensorArchive::open(pa), b = TensorArchive::open(pb);
    ModelGraph g = ModelGraph::from_archive(a);
    try {
        merge_checkpoints(a, b, g, parse_recipe("A:A:A"));
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("only in donor A: model.extra_a.weight") != std::string::npos);
        REQUIRE(msg.find("only in donor B: model.extra_b.weight") != std::string::npos);
        REQUIRE(msg.find("shape mismatch for model.norm.weight") != std::string::npos);
        REQUIRE(msg.find("dtype mismatch for lm_head.weight") != std::string::npos);
    }
}

TEST_CASE("merges round-trip through the archive format", "[region_merge]") {
    MergeFixture f;
    TempDir out;
    MergeResult m = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("B:A:B"));
    std::string path = out.file("hybrid.fkpt");
    write_merge(m, path);
    TensorArchive back = TensorArchive::open(path);
    REQUIRE(back.metadata().at("merge.recipe") == "B:A:B");
    for (const auto& [name, t] : m.tensors) {
        INFO(name);
        REQUIRE(same_bytes(back, name, t.bytes));
    }
}

TEST_CASE("enumerating hybrids writes all eight artifacts", "[region_merge]") {
    MergeFixture f;
    TempDir out;
    std::vector<std::string> paths = enumerate_hybrids(f.a, f.b, f.graph, out.dir(), "toy");
    REQUIRE(paths.size() == 8);
    std::vector<MergeRecipe> recipes = all_region_recipes();
    for (std::size_t i = 0; i < 8; ++i) {
        INFO(paths[i]);
        REQUIRE(paths[i] == out.dir() + "/toy_" + recipes[i].tag() + ".fkpt");
        TensorArchive h = TensorArchive::open(paths[i]);
        REQUIRE(h.metadata().at("merge.recipe") == recipes[i].to_string());
    }
    // The all-A endpoint reproduces donor A tensor for tensor.
    TensorArchive aa = TensorArchive::open(out.dir() + "/toy_EA_MA_LA.fkpt");
    for (const std::string& name : f.a.names()) {
        auto got = aa.raw(name), want = f.a.raw(name);
        REQUIRE(std::equal(got.begin(), got.end(), want.begin(), want.end()));
    }
}

TEST_CASE("region checksums track donor provenance", "[region_merge]") {
    MergeFixture f;
    MergeResult all_a = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("A:A:A"));
    MergeResult all_b = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("B:B:B"));
    MergeResult mix = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("A:B:B"));
    auto ca = region_checksums(all_a, f.graph);
    auto cb = region_checksums(all_b, f.graph);
    auto cm = region_checksums(mix, f.graph);
    REQUIRE(ca.size() == 4);
    REQUIRE(cm.at("early") == ca.at("early"));
    REQUIRE(cm.at("mid") == cb.at("mid"));
    REQUIRE(cm.at("late") == cb.at("late"));
    REQUIRE(cm.at("non_layer") == ca.at("non_layer"));
    // Donors hold different payloads, so the per-region hashes distinguish them.
    for (const char* k : {"early", "mid", "late"}) REQUIRE(ca.at(k) != cb.at(k));
}

TEST_CASE("recipes differing in one region differ only there", "[region_merge]") {
    MergeFixture f;
    MergeResult x = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("A:A:B"));
    MergeResult y = merge_checkpoints(f.a, f.b, f.graph, parse_recipe("A:B:B"));
    auto cx = region_checksums(x, f.graph);
    auto cy = region_checksums(y, f.graph);
    REQUIRE(cx.at("early") == cy.at("early"));
    REQUIRE(cx.at("late") == cy.at("late"));
    REQUIRE(cx.at("non_layer") == cy.at("non_layer"));
    REQUIRE(cx.at("mid") != cy.at("mid"));
    for (const auto& [name, t] : x.tensors) {
        const TensorSlot& slot = f.graph.slot(name);
        bool in_mid = slot.role == Role::layer &&
                      f.graph.partition().region_of(*slot.layer) == Region::mid;
        if (!in_mid) REQUIRE(t.bytes == y.tensors.at(name).bytes);
    }
}

TEST_CASE("score gaps render with an explicit sign", "[region_merge]") {
    DeltaAnnotation up = delta_annotation(2.0, 5.5);
    REQUIRE(up.delta == 3.5);
    REQUIRE(up.positive);
    REQUIRE(up.text == "+3.5");

    DeltaAnnotation down = delta_annotation(5.5, 2.0);
    REQUIRE(down.delta == -3.5);
    REQUIRE_FALSE(down.positive);
    REQUIRE(down.text == "-3.5");

    DeltaAnnotation flat = delta_annotation(1.0, 1.0);
    REQUIRE(flat.delta == 0.0);
    REQUIRE_FALSE(flat.positive);
    REQUIRE(flat.text == "-0.0");
}
