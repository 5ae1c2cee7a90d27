#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "crossdiff/array.hpp"

namespace crossdiff {

/// Solves A x = b in place by LU with partial pivoting. A is overwritten.
/// Sized for the Newton systems here (a few dozen unknowns).
inline void lu_solve(Array2D& A, std::vector<double>& b) {
    const std::size_t n = A.rows();
    if (A.cols() != n || b.size() != n) throw std::invalid_argument("lu_solve: shape mismatch");
    std::vector<std::size_t> piv(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        double best = std::abs(A(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            const double v = std::abs(A(i, k));
            if (v > best) { best = v; p = i; }
        }
        if (best == 0.0 || !std::isfinite(best)) throw std::runtime_error("lu_solve: singular matrix");
        piv[k] = p;
        if (p != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(A(k, j), A(p, j));
            std::swap(b[k], b[p]);
        }
        const double inv = 1.0 / A(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double m = A(i, k) * inv;
            A(i, k) = m;
            if (m != 0.0)
                for (std::size_t j = k + 1; j < n; ++j) A(i, j) -= m * A(k, j);
            b[i] -= m * b[k];
        }
    }
    for (std::size_t k = n; k-- > 0;) {
        double x = b[k];
        for (std::size_t j = k + 1; j < n; ++j) x -= A(k, j) * b[j];
        b[k] = x / A(k, k);
    }
}

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double norm_inf(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

}  // namespace crossdiff
