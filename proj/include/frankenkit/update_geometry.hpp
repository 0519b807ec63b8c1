#pragma once

// Geometry of a parameter update between two checkpoints: per-layer delta
// tensors, Frobenius-norm profiles over the layer stack, and log-normalized
// singular spectra of individual delta matrices.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "frankenkit/errors.hpp"
#include "frankenkit/matrix.hpp"
#include "frankenkit/model_graph.hpp"
#include "frankenkit/svd.hpp"
#include "frankenkit/tensor_store.hpp"

namespace frankenkit {

struct LayerDelta {
    std::size_t layer = 0;
    std::string tensor;
    Matrix delta;  // trained minus base
};

inline double frobenius_norm(const Matrix& m) {
    double s = 0;
    for (float v : m.data) s += double(v) * double(v);
    return std::sqrt(s);
}

namespace geomdetail {

inline void check_comparable(const TensorArchive& base, const TensorArchive& trained) {
    std::string problems;
    for (const auto& [name, _] : base.tensors())
        if (!trained.contains(name)) problems += "\n  only in base: " + name;
    for (const auto& [name, _] : trained.tensors())
        if (!base.contains(name)) problems += "\n  only in trained: " + name;
    for (const auto& [name, ti] : base.tensors())
        if (trained.contains(name) && trained.info(name).shape != ti.shape)
            problems += "\n  shape mismatch for " + name + ": " + shape_str(ti.shape) + " vs " +
                        shape_str(trained.info(name).shape);
    if (!problems.empty()) throw DataError("checkpoints are not comparable:" + problems);
}

}  // namespace geomdetail

// Per-tensor deltas for layer-role tensors only, ordered by (layer, tensor).
inline std::vector<LayerDelta> layer_delta(const TensorArchive& base, const TensorArchive& trained,
                                           const ModelGraph& graph) {
    geomdetail::check_comparable(base, trained);
    std::vector<LayerDelta> out;
    for (const auto& [name, ti] : base.tensors()) {
        const TensorSlot& slot = graph.slot(name);
        if (slot.role != Role::layer) continue;
        Matrix mb = base.read(name);
        Matrix mt = trained.read(name);
        for (std::size_t i = 0; i < mt.data.size(); ++i) mt.data[i] -= mb.data[i];
        out.push_back(LayerDelta{*slot.layer, name, std::move(mt)});
    }
    std::sort(out.begin(), out.end(), [](const LayerDelta& l, const LayerDelta& r) {
        return l.layer != r.layer ? l.layer < r.layer : l.tensor < r.tensor;
    });
    return out;
}

// Deltas for every shared tensor, including non-layer roles.
inline std::map<std::string, Matrix> checkpoint_delta(const TensorArchive& base,
                                                      const TensorArchive& trained) {
    geomdetail::check_comparable(base, trained);
    std::map<std::string, Matrix> delta;
    for (const auto& [name, _] : base.tensors()) {
        Matrix mb = base.read(name);
        Matrix mt = trained.read(name);
        for (std::size_t i = 0; i < mt.data.size(); ++i) mt.data[i] -= mb.data[i];
        delta.emplace(name, std::move(mt));
    }
    return delta;
}

enum class Aggregation {
    sum_of_squares_then_sqrt,  // the layer treated as one block-diagonal matrix
    mean,                      // mean of the per-tensor Frobenius norms
};

struct NormProfile {
    Aggregation aggregation = Aggregation::sum_of_squares_then_sqrt;
    std::vector<double> per_layer;          // index = layer; 0.0 where nothing matched
    std::vector<std::size_t> tensor_count;  // contributing tensors per layer
};

inline NormProfile frobenius_profile(const std::vector<LayerDelta>& deltas, std::size_t layers,
                                     Aggregation agg = Aggregation::sum_of_squares_then_sqrt) {
    if (deltas.empty()) throw DataError("frobenius profile needs at least one delta");
    NormProfile p;
    p.aggregation = agg;
    p.per_layer.assign(layers, 0.0);
    p.tensor_count.assign(layers, 0);
    std::vector<double> sq(layers, 0.0), norm_sum(layers, 0.0);
    for (const LayerDelta& d : deltas) {
        if (d.layer >= layers)
            throw InvariantError("delta layer " + std::to_string(d.layer) +
                                 " outside the declared stack of " + std::to_string(layers));
        double f = frobenius_norm(d.delta);
        sq[d.layer] += f * f;
        norm_sum[d.layer] += f;
        ++p.tensor_count[d.layer];
    }
    for (std::size_t l = 0; l < layers; ++l)
        p.per_layer[l] = agg == Aggregation::sum_of_squares_then_sqrt
                             ? std::sqrt(sq[l])
                             : (p.tensor_count[l] ? norm_sum[l] / double(p.tensor_count[l]) : 0.0);
    return p;
}

struct RegionNorms {
    double early = 0, mid = 0, late = 0;
};

inline RegionNorms region_means(const NormProfile& p, const Partition& part) {
    if (p.per_layer.size() != part.layers)
        throw InvariantError("profile length does not match partition");
    auto mean = [&](Region reg) {
        auto [lo, hi] = part.range(reg);
        double s = 0;
        for (std::size_t l = lo; l < hi; ++l) s += p.per_layer[l];
        return hi > lo ? s / double(hi - lo) : 0.0;
    };
    return {mean(Region::early), mean(Region::mid), mean(Region::late)};
}

// ---------------------------------------------------------------------------
// Singular spectra
// ---------------------------------------------------------------------------

struct SpectrumReport {
    std::size_t layer = 0;
    std::string tensor;
    std::vector<double> sigma;               // non-increasing, noise floor at 1e-7 sigma_1
    std::vector<double> log_normalized;      // ln(sigma_i / sigma_1); empty when degenerate
    std::vector<std::size_t> sampled_ranks;  // {0, stride, 2 stride, ...}
    bool degenerate = false;                 // sigma_1 == 0

    double sigma1() const { return sigma.empty() ? 0.0 : sigma[0]; }
};

inline SpectrumReport singular_spectrum(const LayerDelta& d, std::size_t sample_stride = 10) {
    if (sample_stride == 0) throw DataError("sample stride must be positive");
    SpectrumReport sp;
    sp.layer = d.layer;
    sp.tensor = d.tensor;
    sp.sigma = singular_values(d.delta);
    sp.degenerate = sp.sigma.empty() || sp.sigma[0] == 0.0;
    if (!sp.degenerate) {
        sp.log_normalized.reserve(sp.sigma.size());
        for (double s : sp.sigma)
            sp.log_normalized.push_back(s > 0 ? std::log(s / sp.sigma[0])
                                              : -std::numeric_limits<double>::infinity());
    }
    for (std::size_t i = 0; i < sp.sigma.size(); i += sample_stride) sp.sampled_ranks.push_back(i);
    return sp;
}

inline SpectrumReport singular_spectrum(const Matrix& delta, std::size_t sample_stride = 10) {
    return singular_spectrum(LayerDelta{0, "", delta}, sample_stride);
}

// Fraction of the squared spectral mass held by the top ceil(fraction * r)
// singular values.
inline double decay_summary(const SpectrumReport& sp, double rank_fraction = 0.01) {
    if (!(rank_fraction > 0.0) || rank_fraction > 1.0)
        throw DataError("rank fraction must lie in (0, 1]");
    if (sp.degenerate)
        throw DataError("decay summary of a degenerate (all-zero) spectrum for tensor '" +
                        sp.tensor + "'");
    std::size_t rank = sp.sigma.size();
    std::size_t top =
        std::min(rank, std::max<std::size_t>(1, std::size_t(std::ceil(rank_fraction * double(rank)))));
    double total = 0, head = 0;
    for (std::size_t i = 0; i < rank; ++i) {
        double e = sp.sigma[i] * sp.sigma[i];
        total += e;
        if (i < top) head += e;
    }
    return head / total;
}

}  // namespace frankenkit
