#pragma once

// Singular values via one-sided Jacobi rotations. The input is copied into
// double precision and columns are orthogonalized pairwise until every
// off-diagonal Gram entry is negligible; singular values are the resulting
// column norms. Only values are returned, no singular vectors, which is all
// the spectrum analysis needs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "frankenkit/errors.hpp"
#include "frankenkit/matrix.hpp"

namespace frankenkit {

// Descending singular values of an r x c matrix given row-major. Works on
// the transpose when r < c so the rotation sweeps always run over the
// narrow side.
inline std::vector<double> singular_values(const float* data, std::size_t r, std::size_t c) {
    if (r == 0 || c == 0) return {};

    std::size_t rows = r, cols = c;
    bool flip = r < c;
    if (flip) std::swap(rows, cols);

    // Column-major storage keeps each Jacobi rotation a pair of contiguous
    // column updates.
    std::vector<double> a(rows * cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            a[j * rows + i] = flip ? double(data[j * c + i]) : double(data[i * c + j]);

    const int max_sweeps = 60;
    const double eps = 1e-15;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < cols; ++p) {
            for (std::size_t q = p + 1; q < cols; ++q) {
                double* cp = a.data() + p * rows;
                double* cq = a.data() + q * rows;
                double app = 0, aqq = 0, apq = 0;
                for (std::size_t k = 0; k < rows; ++k) {
                    app += cp[k] * cp[k];
                    aqq += cq[k] * cq[k];
                    apq += cp[k] * cq[k];
                }
                if (std::abs(apq) <= eps * std::sqrt(app * aqq) || apq == 0.0) continue;
                rotated = true;
                double zeta = (aqq - app) / (2.0 * apq);
                double t = (zeta >= 0 ? 1.0 : -1.0) /
                           (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                double cs = 1.0 / std::sqrt(1.0 + t * t);
                double sn = cs * t;
                for (std::size_t k = 0; k < rows; ++k) {
                    double xp = cp[k], xq = cq[k];
                    cp[k] = cs * xp - sn * xq;
                    cq[k] = sn * xp + cs * xq;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sigma(cols);
    for (std::size_t j = 0; j < cols; ++j) {
        double s = 0;
        const double* cj = a.data() + j * rows;
        for (std::size_t k = 0; k < rows; ++k) s += cj[k] * cj[k];
        sigma[j] = std::sqrt(s);
    }
    std::sort(sigma.begin(), sigma.end(), std::greater<double>());

    // Drop numerical noise far below the leading value.
    if (!sigma.empty() && sigma[0] > 0) {
        double floor = 1e-7 * sigma[0];
        for (double& s : sigma)
            if (s < floor) s = 0.0;
    }
    return sigma;
}

inline std::vector<double> singular_values(const Matrix& m) {
    return singular_values(m.data.data(), m.rows(), m.cols());
}

}  // namespace frankenkit
