#pragma once

// A deliberately small vision-language transformer used as the test bed for
// layer probes. Pre-norm blocks with bias-free linear maps, so zeroing a
// layer's attention and MLP weight matrices makes that layer an exact
// identity: all-zero attention scores soften to a uniform distribution over
// a zero value matrix, and GELU(0) = 0.
//
// Sequence layout is [vision patches | prompt tokens | generated tokens]
// with learned absolute position embeddings. Decoding is greedy with full
// recomputation each step, ties resolved toward the lowest token id.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "frankenkit/errors.hpp"
#include "frankenkit/matrix.hpp"
#include "frankenkit/tensor_store.hpp"

namespace frankenkit {

struct ToyConfig {
    std::size_t layers = 12;
    std::size_t d_model = 64;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t vocab = 64;
    std::size_t n_patches = 8;
    std::size_t d_patch = 16;
    std::size_t max_positions = 256;
    int eos_id = 0;

    std::size_t d_head() const { return d_model / n_heads; }

    void validate() const {
        if (layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab == 0 ||
            d_patch == 0 || max_positions == 0)
            throw DataError("toy model config has a zero dimension");
        if (d_model % n_heads != 0)
            throw DataError("toy model d_model must be divisible by n_heads");
        if (eos_id < 0 || std::size_t(eos_id) >= vocab)
            throw DataError("toy model eos id out of vocabulary range");
    }

    std::map<std::string, std::string> to_metadata() const {
        return {
            {"toy.layers", std::to_string(layers)},
            {"toy.d_model", std::to_string(d_model)},
            {"toy.n_heads", std::to_string(n_heads)},
            {"toy.d_ff", std::to_string(d_ff)},
            {"toy.vocab", std::to_string(vocab)},
            {"toy.n_patches", std::to_string(n_patches)},
            {"toy.d_patch", std::to_string(d_patch)},
            {"toy.max_positions", std::to_string(max_positions)},
            {"toy.eos_id", std::to_string(eos_id)},
        };
    }

    static ToyConfig from_metadata(const std::map<std::string, std::string>& meta) {
        auto get = [&](const char* key) -> std::size_t {
            auto it = meta.find(key);
            if (it == meta.end())
                throw DataError(std::string("archive is not a toy checkpoint: missing metadata key ") +
                                key);
            return std::size_t(std::stoull(it->second));
        };
        ToyConfig c;
        c.layers = get("toy.layers");
        c.d_model = get("toy.d_model");
        c.n_heads = get("toy.n_heads");
        c.d_ff = get("toy.d_ff");
        c.vocab = get("toy.vocab");
        c.n_patches = get("toy.n_patches");
        c.d_patch = get("toy.d_patch");
        c.max_positions = get("toy.max_positions");
        c.eos_id = int(get("toy.eos_id"));
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Inputs and run artifacts
// ---------------------------------------------------------------------------

struct ImageInput {
    enum class Kind { none, black, patches };
    Kind kind = Kind::none;
    Matrix patches;  // [n_patches, d_patch] when kind == patches

    static ImageInput none() { return {}; }
    static ImageInput black() { return {Kind::black, {}}; }
    static ImageInput from_patches(Matrix p) { return {Kind::patches, std::move(p)}; }
};

// Deterministic synthetic image.
inline ImageInput make_image(const ToyConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, 1.0f);
    Matrix p(cfg.n_patches, cfg.d_patch);
    for (float& v : p.data) v = dist(rng);
    return ImageInput::from_patches(std::move(p));
}

struct SequenceLayout {
    std::size_t n_vision = 0;
    std::size_t n_prompt = 0;
    std::size_t n_generated = 0;

    std::size_t total() const { return n_vision + n_prompt + n_generated; }
    std::pair<std::size_t, std::size_t> vision_range() const { return {0, n_vision}; }
    std::pair<std::size_t, std::size_t> prompt_range() const {
        return {n_vision, n_vision + n_prompt};
    }
    std::pair<std::size_t, std::size_t> generated_range() const {
        return {n_vision + n_prompt, total()};
    }
};

// Hidden states captured at the entry of each block; index `layers` holds
// the residual stream after the last block (what the final norm sees).
// Captures are taken after any swap hook has been applied.
struct HiddenCapture {
    std::vector<Matrix> at_layer;
};

// Post-softmax attention, executed layers only: layer -> one [n, n] matrix
// per head with explicit zeros above the causal diagonal.
struct AttentionCapture {
    std::map<std::size_t, std::vector<Matrix>> per_layer;
};

struct RunHooks {
    std::set<std::size_t> skip;  // block indices to bypass entirely
    std::optional<std::size_t> swap_layer;
    const HiddenCapture* swap_source = nullptr;  // donor hiddens for the vision rows
    std::size_t swap_rows = 0;                   // how many leading rows to replace
    bool capture_hidden = false;
    bool capture_attention = false;
};

struct ForwardResult {
    Matrix hidden;  // [n, d_model] residual stream after the last block
    HiddenCapture hidden_capture;
    AttentionCapture attention;
};

struct GenerateOptions {
    std::size_t max_new_tokens = 128;
    std::set<std::size_t> skip;
    std::optional<std::size_t> swap_layer;
    const HiddenCapture* swap_source = nullptr;
    bool capture_hidden = false;
    bool capture_attention = false;
};

struct GenerateResult {
    std::vector<int> tokens;  // generated ids, eos excluded
    bool hit_eos = false;
    SequenceLayout layout;  // of the final pass over prompt plus generation
    HiddenCapture hidden;
    AttentionCapture attention;
};

inline std::string tokens_to_answer(const std::vector<int>& ids) {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(ids[i]);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class ToyModel {
public:
    ToyConfig cfg;
    std::map<std::string, Matrix> weights;

    static ToyModel init(const ToyConfig& cfg, std::uint64_t seed);
    static ToyModel load(const TensorArchive& a);
    static ToyModel load(const std::string& path) { return load(TensorArchive::open(path)); }
    void save(const std::string& path) const;

    const Matrix& weight(const std::string& name) const {
        auto it = weights.find(name);
        if (it == weights.end()) throw DataError("toy checkpoint is missing tensor '" + name + "'");
        return it->second;
    }

    Matrix embed(const ImageInput& image, const std::vector<int>& prompt) const;
    ForwardResult forward(const Matrix& x0, const RunHooks& hooks) const;
    std::vector<float> logits_at(const Matrix& hidden, std::size_t pos) const;
    GenerateResult generate(const ImageInput& image, const std::vector<int>& prompt,
                            const GenerateOptions& opt) const;

    // Hidden states of a plain (or skip-hooked) pass over the prefix only;
    // this is the donor side of a representation swap.
    HiddenCapture capture_prefix(const ImageInput& image, const std::vector<int>& prompt,
                                 const std::set<std::size_t>& skip = {}) const {
        RunHooks h;
        h.skip = skip;
        h.capture_hidden = true;
        return forward(embed(image, prompt), h).hidden_capture;
    }

    std::size_t vision_rows(const ImageInput& image) const {
        return image.kind == ImageInput::Kind::none ? 0 : cfg.n_patches;
    }

private:
    void run_block(std::size_t layer, Matrix& x, AttentionCapture* attn) const;
};

namespace toydetail {

inline void layer_norm(const float* x, const float* w, const float* b, float* out,
                       std::size_t d) {
    double mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= double(d);
    double var = 0;
    for (std::size_t i = 0; i < d; ++i) {
        double t = x[i] - mean;
        var += t * t;
    }
    var /= double(d);
    double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t i = 0; i < d; ++i)
        out[i] = float((x[i] - mean) * inv) * w[i] + b[i];
}

// x [n, in] times W [in, out], row-major, double accumulation.
inline void matmul(const float* x, std::size_t n, std::size_t in, const float* w,
                   std::size_t out, float* y) {
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < out; ++c) {
            double acc = 0;
            for (std::size_t k = 0; k < in; ++k) acc += double(x[r * in + k]) * double(w[k * out + c]);
            y[r * out + c] = float(acc);
        }
}

inline float gelu(float x) {
    return 0.5f * x * (1.0f + std::erf(x / std::sqrt(2.0f)));
}

}  // namespace toydetail

inline ToyModel ToyModel::init(const ToyConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ToyModel m;
    m.cfg = cfg;
    std::mt19937_64 rng(seed);
    auto fill = [&](std::size_t r, std::size_t c, float sigma) {
        std::normal_distribution<float> dist(0.0f, sigma);
        Matrix w(r, c);
        for (float& v : w.data) v = dist(rng);
        return w;
    };
    auto vec = [&](std::size_t n, float base, float sigma) {
        std::normal_distribution<float> dist(0.0f, sigma);
        Matrix w({n}, std::vector<float>(n, 0.0f));
        for (float& v : w.data) v = base + dist(rng);
        return w;
    };
    const float ws = 1.0f / std::sqrt(float(cfg.d_model));

    m.weights["vision_encoder.proj.weight"] = fill(cfg.d_patch, cfg.d_model, 0.35f);
    m.weights["vision_encoder.proj.bias"] = vec(cfg.d_model, 0.0f, 0.02f);
    m.weights["model.embed_tokens.weight"] = fill(cfg.vocab, cfg.d_model, 0.5f);
    m.weights["model.pos_embed.weight"] = fill(cfg.max_positions, cfg.d_model, 0.1f);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        std::string p = "model.layers." + std::to_string(l) + ".";
        m.weights[p + "ln1.weight"] = vec(cfg.d_model, 1.0f, 0.02f);
        m.weights[p + "ln1.bias"] = vec(cfg.d_model, 0.0f, 0.02f);
        m.weights[p + "attn.wq.weight"] = fill(cfg.d_model, cfg.d_model, ws);
        m.weights[p + "attn.wk.weight"] = fill(cfg.d_model, cfg.d_model, ws);
        m.weights[p + "attn.wv.weight"] = fill(cfg.d_model, cfg.d_model, ws);
        m.weights[p + "attn.wo.weight"] = fill(cfg.d_model, cfg.d_model, ws);
        m.weights[p + "ln2.weight"] = vec(cfg.d_model, 1.0f, 0.02f);
        m.weights[p + "ln2.bias"] = vec(cfg.d_model, 0.0f, 0.02f);
        m.weights[p + "mlp.w_in.weight"] = fill(cfg.d_model, cfg.d_ff, ws);
        m.weights[p + "mlp.w_out.weight"] = fill(cfg.d_ff, cfg.d_model, 1.0f / std::sqrt(float(cfg.d_ff)));
    }
    m.weights["model.norm.weight"] = vec(cfg.d_model, 1.0f, 0.02f);
    m.weights["model.norm.bias"] = vec(cfg.d_model, 0.0f, 0.02f);
    m.weights["lm_head.weight"] = fill(cfg.d_model, cfg.vocab, ws);
    return m;
}

inline ToyModel ToyModel::load(const TensorArchive& a) {
    ToyModel m;
    m.cfg = ToyConfig::from_metadata(a.metadata());
    for (const auto& [name, _] : a.tensors()) m.weights[name] = a.read(name);

    auto expect = [&](const std::string& name, std::vector<std::size_t> shape) {
        const Matrix& w = m.weight(name);
        if (w.shape != shape)
            throw DataError("toy checkpoint tensor '" + name + "' has shape " + shape_str(w.shape) +
                            ", expected " + shape_str(shape));
    };
    const ToyConfig& c = m.cfg;
    expect("vision_encoder.proj.weight", {c.d_patch, c.d_model});
    expect("vision_encoder.proj.bias", {c.d_model});
    expect("model.embed_tokens.weight", {c.vocab, c.d_model});
    expect("model.pos_embed.weight", {c.max_positions, c.d_model});
    for (std::size_t l = 0; l < c.layers; ++l) {
        std::string p = "model.layers." + std::to_string(l) + ".";
        expect(p + "ln1.weight", {c.d_model});
        expect(p + "ln1.bias", {c.d_model});
        expect(p + "attn.wq.weight", {c.d_model, c.d_model});
        expect(p + "attn.wk.weight", {c.d_model, c.d_model});
        expect(p + "attn.wv.weight", {c.d_model, c.d_model});
        expect(p + "attn.wo.weight", {c.d_model, c.d_model});
        expect(p + "ln2.weight", {c.d_model});
        expect(p + "ln2.bias", {c.d_model});
        expect(p + "mlp.w_in.weight", {c.d_model, c.d_ff});
        expect(p + "mlp.w_out.weight", {c.d_ff, c.d_model});
    }
    expect("model.norm.weight", {c.d_model});
    expect("model.norm.bias", {c.d_model});
    expect("lm_head.weight", {c.d_model, c.vocab});
    return m;
}

inline void ToyModel::save(const std::string& path) const {
    std::map<std::string, TensorSpec> specs;
    for (const auto& [name, w] : weights)
        specs.emplace(name, TensorSpec{Dtype::f32, w.shape, w.data});
    write_archive(specs, cfg.to_metadata(), path);
}

inline Matrix ToyModel::embed(const ImageInput& image, const std::vector<int>& prompt) const {
    for (int id : prompt)
        if (id < 0 || std::size_t(id) >= cfg.vocab)
            throw DataError("prompt token " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(cfg.vocab));
    if (image.kind == ImageInput::Kind::patches &&
        image.patches.shape != std::vector<std::size_t>{cfg.n_patches, cfg.d_patch})
        throw DataError("image patches have shape " + shape_str(image.patches.shape) +
                        ", expected " + shape_str({cfg.n_patches, cfg.d_patch}));

    std::size_t nv = vision_rows(image);
    std::size_t n = nv + prompt.size();
    if (n == 0) throw DataError("cannot run on an empty sequence");
    if (n > cfg.max_positions)
        throw DataError("prefix of " + std::to_string(n) + " positions exceeds max_positions " +
                        std::to_string(cfg.max_positions));

    const Matrix& proj_w = weight("vision_encoder.proj.weight");
    const Matrix& proj_b = weight("vision_encoder.proj.bias");
    const Matrix& tok = weight("model.embed_tokens.weight");
    const Matrix& pos = weight("model.pos_embed.weight");

    Matrix x(n, cfg.d_model);
    if (nv) {
        // A black image is a zero patch grid pushed through the same path.
        Matrix zeros;
        const Matrix* patches = &image.patches;
        if (image.kind == ImageInput::Kind::black) {
            zeros = Matrix(cfg.n_patches, cfg.d_patch);
            patches = &zeros;
        }
        toydetail::matmul(patches->data.data(), nv, cfg.d_patch, proj_w.data.data(), cfg.d_model,
                          x.data.data());
        for (std::size_t i = 0; i < nv; ++i)
            for (std::size_t j = 0; j < cfg.d_model; ++j) x.at(i, j) += proj_b.data[j];
    }
    for (std::size_t t = 0; t < prompt.size(); ++t)
        for (std::size_t j = 0; j < cfg.d_model; ++j)
            x.at(nv + t, j) = tok.at(std::size_t(prompt[t]), j);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cfg.d_model; ++j) x.at(i, j) += pos.at(i, j);
    return x;
}

inline void ToyModel::run_block(std::size_t layer, Matrix& x, AttentionCapture* attn) const {
    const std::string p = "model.layers." + std::to_string(layer) + ".";
    const std::size_t n = x.rows(), d = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head();
    const Matrix& ln1w = weight(p + "ln1.weight");
    const Matrix& ln1b = weight(p + "ln1.bias");

    Matrix normed(n, d);
    for (std::size_t i = 0; i < n; ++i)
        toydetail::layer_norm(&x.data[i * d], ln1w.data.data(), ln1b.data.data(),
                              &normed.data[i * d], d);

    Matrix q(n, d), k(n, d), v(n, d);
    toydetail::matmul(normed.data.data(), n, d, weight(p + "attn.wq.weight").data.data(), d,
                      q.data.data());
    toydetail::matmul(normed.data.data(), n, d, weight(p + "attn.wk.weight").data.data(), d,
                      k.data.data());
    toydetail::matmul(normed.data.data(), n, d, weight(p + "attn.wv.weight").data.data(), d,
                      v.data.data());

    std::vector<Matrix>* cap = nullptr;
    if (attn) {
        auto& slot = attn->per_layer[layer];
        slot.assign(H, Matrix(n, n));
        cap = &slot;
    }

    const float scale = 1.0f / std::sqrt(float(dh));
    Matrix ctx(n, d);
    std::vector<double> row(n);
    for (std::size_t h = 0; h < H; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
            // Causal scores for row i over keys 0..i.
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j <= i; ++j) {
                double s = 0;
                for (std::size_t t = 0; t < dh; ++t)
                    s += double(q.at(i, off + t)) * double(k.at(j, off + t));
                s *= scale;
                row[j] = s;
                if (s > mx) mx = s;
            }
            double denom = 0;
            for (std::size_t j = 0; j <= i; ++j) {
                row[j] = std::exp(row[j] - mx);
                denom += row[j];
            }
            for (std::size_t j = 0; j <= i; ++j) {
                float a = float(row[j] / denom);
                if (cap) (*cap)[h].at(i, j) = a;
                for (std::size_t t = 0; t < dh; ++t)
                    ctx.at(i, off + t) += a * v.at(j, off + t);
            }
        }
    }

    Matrix attn_out(n, d);
    toydetail::matmul(ctx.data.data(), n, d, weight(p + "attn.wo.weight").data.data(), d,
                      attn_out.data.data());
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_out.data[i];

    const Matrix& ln2w = weight(p + "ln2.weight");
    const Matrix& ln2b = weight(p + "ln2.bias");
    for (std::size_t i = 0; i < n; ++i)
        toydetail::layer_norm(&x.data[i * d], ln2w.data.data(), ln2b.data.data(),
                              &normed.data[i * d], d);

    Matrix ff(n, cfg.d_ff);
    toydetail::matmul(normed.data.data(), n, d, weight(p + "mlp.w_in.weight").data.data(), cfg.d_ff,
                      ff.data.data());
    for (float& vv : ff.data) vv = toydetail::gelu(vv);
    Matrix mlp_out(n, d);
    toydetail::matmul(ff.data.data(), n, cfg.d_ff, weight(p + "mlp.w_out.weight").data.data(), d,
                      mlp_out.data.data());
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += mlp_out.data[i];
}

inline ForwardResult ToyModel::forward(const Matrix& x0, const RunHooks& hooks) const {
    if (hooks.swap_layer) {
        if (!hooks.swap_source)
            throw DataError("swap requested without donor hidden states");
        if (*hooks.swap_layer >= cfg.layers)
            throw DataError("swap layer " + std::to_string(*hooks.swap_layer) +
                            " out of range for " + std::to_string(cfg.layers) + " layers");
        if (hooks.swap_source->at_layer.size() <= *hooks.swap_layer)
            throw DataError("donor capture does not cover the swap layer");
        const Matrix& src = hooks.swap_source->at_layer[*hooks.swap_layer];
        if (src.cols() != cfg.d_model || src.rows() < hooks.swap_rows)
            throw DataError("donor hidden states do not cover the swapped rows");
        if (hooks.swap_rows > x0.rows())
            throw DataError("swap rows exceed the running sequence length");
    }

    ForwardResult out;
    out.hidden = x0;
    Matrix& x = out.hidden;
    const std::size_t d = cfg.d_model;
    AttentionCapture* attn = hooks.capture_attention ? &out.attention : nullptr;

    for (std::size_t l = 0; l < cfg.layers; ++l) {
        if (hooks.swap_layer && *hooks.swap_layer == l && hooks.swap_rows) {
            const Matrix& src = hooks.swap_source->at_layer[l];
            for (std::size_t i = 0; i < hooks.swap_rows; ++i)
                for (std::size_t j = 0; j < d; ++j) x.at(i, j) = src.at(i, j);
        }
        if (hooks.capture_hidden) out.hidden_capture.at_layer.push_back(x);
        if (hooks.skip.count(l)) continue;
        run_block(l, x, attn);
    }
    if (hooks.capture_hidden) out.hidden_capture.at_layer.push_back(x);
    return out;
}

inline std::vector<float> ToyModel::logits_at(const Matrix& hidden, std::size_t pos) const {
    const std::size_t d = cfg.d_model;
    std::vector<float> normed(d);
    toydetail::layer_norm(&hidden.data[pos * d], weight("model.norm.weight").data.data(),
                          weight("model.norm.bias").data.data(), normed.data(), d);
    std::vector<float> logits(cfg.vocab);
    toydetail::matmul(normed.data(), 1, d, weight("lm_head.weight").data.data(), cfg.vocab,
                      logits.data());
    return logits;
}

inline GenerateResult ToyModel::generate(const ImageInput& image, const std::vector<int>& prompt,
                                         const GenerateOptions& opt) const {
    for (std::size_t l : opt.skip)
        if (l >= cfg.layers)
            throw DataError("skip layer " + std::to_string(l) + " out of range for " +
                            std::to_string(cfg.layers) + " layers");

    GenerateResult res;
    res.layout.n_vision = vision_rows(image);
    res.layout.n_prompt = prompt.size();

    RunHooks hooks;
    hooks.skip = opt.skip;
    hooks.swap_layer = opt.swap_layer;
    hooks.swap_source = opt.swap_source;
    hooks.swap_rows = opt.swap_layer ? res.layout.n_vision : 0;

    Matrix x = embed(image, prompt);
    const Matrix& tok = weight("model.embed_tokens.weight");
    const Matrix& pos = weight("model.pos_embed.weight");
    const std::size_t d = cfg.d_model;

    for (std::size_t step = 0; step < opt.max_new_tokens; ++step) {
        if (x.rows() >= cfg.max_positions) break;
        ForwardResult f = forward(x, hooks);
        std::vector<float> logits = logits_at(f.hidden, x.rows() - 1);
        int best = 0;
        for (std::size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[std::size_t(best)]) best = int(i);
        if (best == cfg.eos_id) {
            res.hit_eos = true;
            break;
        }
        res.tokens.push_back(best);
        std::size_t at = x.rows();
        Matrix grown(at + 1, d);
        std::copy(x.data.begin(), x.data.end(), grown.data.begin());
        for (std::size_t j = 0; j < d; ++j)
            grown.at(at, j) = tok.at(std::size_t(best), j) + pos.at(at, j);
        x = std::move(grown);
    }
    res.layout.n_generated = res.tokens.size();

    // One teacher-forced pass over the final sequence carries the captures.
    hooks.capture_hidden = opt.capture_hidden;
    hooks.capture_attention = opt.capture_attention;
    ForwardResult fin = forward(x, hooks);
    res.hidden = std::move(fin.hidden_capture);
    res.attention = std::move(fin.attention);
    return res;
}

// Run a donor pass on each image, then the opposite pass with the vision
// rows entering layer l substituted from the donor: the swapped answers for
// (a with b's vision, b with a's vision). Both passes share the prompt and
// the decoding procedure.
struct SwapPairResult {
    std::vector<int> a_with_b_vision;
    std::vector<int> b_with_a_vision;
};

inline SwapPairResult swap_forward_pair(const ToyModel& model, const ImageInput& image_a,
                                        const ImageInput& image_b, const std::vector<int>& prompt,
                                        std::size_t layer, std::size_t max_new_tokens = 128) {
    if (model.vision_rows(image_a) != model.vision_rows(image_b) ||
        model.vision_rows(image_a) == 0)
        throw DataError("swap needs two images with the same vision-token count");
    HiddenCapture cap_a = model.capture_prefix(image_a, prompt);
    HiddenCapture cap_b = model.capture_prefix(image_b, prompt);
    GenerateOptions gen;
    gen.max_new_tokens = max_new_tokens;
    gen.swap_layer = layer;
    SwapPairResult out;
    gen.swap_source = &cap_b;
    out.a_with_b_vision = model.generate(image_a, prompt, gen).tokens;
    gen.swap_source = &cap_a;
    out.b_with_a_vision = model.generate(image_b, prompt, gen).tokens;
    return out;
}

// ---------------------------------------------------------------------------
// Direct toy inputs: JSONL lines of the form
//   {"patches": [[f32,...],...] | "BLACK", "prompt": [ids], "gold": [ids]}
// ---------------------------------------------------------------------------

struct ToyInput {
    ImageInput image;
    std::vector<int> prompt;
    std::vector<int> gold;
};

inline std::vector<ToyInput> read_toy_inputs(const std::string& path, const ToyConfig& cfg) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open toy input file: " + path);
    std::vector<ToyInput> out;
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
        ToyInput in;
        if (j.contains("patches")) {
            const auto& p = j["patches"];
            if (p.is_string() && p.get<std::string>() == "BLACK") {
                in.image = ImageInput::black();
            } else if (p.is_array()) {
                Matrix m(p.size(), cfg.d_patch);
                for (std::size_t r = 0; r < p.size(); ++r) {
                    if (!p[r].is_array() || p[r].size() != cfg.d_patch)
                        throw DataError(where + ": patch row " + std::to_string(r) +
                                        " is not an array of " + std::to_string(cfg.d_patch) +
                                        " floats");
                    for (std::size_t c = 0; c < cfg.d_patch; ++c)
                        m.at(r, c) = p[r][c].get<float>();
                }
                if (m.rows() != cfg.n_patches)
                    throw DataError(where + ": expected " + std::to_string(cfg.n_patches) +
                                    " patches, got " + std::to_string(m.rows()));
                in.image = ImageInput::from_patches(std::move(m));
            } else {
                throw DataError(where + ": \"patches\" must be a 2-D array or \"BLACK\"");
            }
        }
        auto ids = [&](const char* field, bool required) {
            std::vector<int> v;
            if (!j.contains(field)) {
                if (required) throw DataError(where + ": missing \"" + std::string(field) + "\"");
                return v;
            }
            if (!j[field].is_array())
                throw DataError(where + ": \"" + std::string(field) + "\" must be a token array");
            for (const auto& t : j[field]) v.push_back(t.get<int>());
            return v;
        };
        in.prompt = ids("prompt", true);
        in.gold = ids("gold", false);
        out.push_back(std::move(in));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint surgery used by fixtures and the CLI
// ---------------------------------------------------------------------------

// Zero a layer's attention and MLP weight matrices, leaving its norms alone.
// With the pre-norm bias-free blocks this makes the layer an exact identity.
inline void zero_layer(ToyModel& m, std::size_t layer) {
    const std::string p = "model.layers." + std::to_string(layer) + ".";
    for (const char* t : {"attn.wq.weight", "attn.wk.weight", "attn.wv.weight", "attn.wo.weight",
                          "mlp.w_in.weight", "mlp.w_out.weight"}) {
        Matrix& w = m.weights.at(p + t);
        std::fill(w.data.begin(), w.data.end(), 0.0f);
    }
}

// Add Gaussian noise of the given standard deviation to every tensor of the
// selected layers. Used to manufacture checkpoints whose update is
// concentrated in chosen regions.
inline void perturb_layers(ToyModel& m, std::size_t lo, std::size_t hi, float sigma,
                           std::mt19937_64& rng) {
    std::normal_distribution<float> dist(0.0f, sigma);
    for (std::size_t l = lo; l < hi; ++l) {
        const std::string p = "model.layers." + std::to_string(l) + ".";
        for (auto& [name, w] : m.weights) {
            if (name.rfind(p, 0) != 0) continue;
            for (float& v : w.data) v += dist(rng);
        }
    }
}

}  // namespace frankenkit
