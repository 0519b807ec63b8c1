#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "frankenkit/errors.hpp"

namespace frankenkit {

// Dense row-major f32 tensor. Rank is arbitrary; the 2-D view used by the
// spectral and attention code treats a 1-D tensor as a column vector and
// flattens trailing dimensions of higher-rank tensors into the column axis.
struct Matrix {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, float fill = 0.0f)
        : shape{r, c}, data(r * c, fill) {}
    Matrix(std::vector<std::size_t> s, std::vector<float> d)
        : shape(std::move(s)), data(std::move(d)) {}

    static Matrix column(std::vector<float> v) {
        std::size_t n = v.size();
        return Matrix({n}, std::move(v));
    }

    std::size_t numel() const { return data.size(); }

    std::size_t rows() const {
        if (shape.empty()) return data.empty() ? 0 : 1;
        return shape[0];
    }

    std::size_t cols() const {
        std::size_t r = rows();
        if (r == 0) return 0;
        if (shape.size() == 1) return 1;
        return data.size() / r;
    }

    float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool same_shape(const Matrix& o) const { return shape == o.shape; }
};

inline std::string shape_str(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace frankenkit
