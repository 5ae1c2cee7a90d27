#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "crossdiff/array.hpp"
#include "crossdiff/basis.hpp"
#include "crossdiff/rng.hpp"

namespace crossdiff {

enum class NoiseKind { zero, additive, bounded_multiplicative };

/**
 * Built-in multiplicative noise families. sigma_{ijk}(u)(x) is the nodal field
 * amp(i, j, u_i(x)) * e_{k+1}(x) for mode slots k = 0..K-1; the constant basis
 * mode is deliberately excluded so the drift part conserves mass for
 * u-independent amplitudes.
 *
 *   zero:                   amp = 0
 *   additive:               amp = c_ij
 *   bounded_multiplicative: amp = c_ij * phi(|u_i|), phi(r) = r/(1+r)
 */
struct NoiseModel {
    NoiseKind kind = NoiseKind::zero;
    Array2D c;  // n x n amplitudes
    int K = 0;  // retained spatial modes e_1..e_K

    static double phi(double r) { return r / (1.0 + r); }
    static double dphi(double r) { const double d = 1.0 + r; return 1.0 / (d * d); }

    double amp(int i, int j, double ui) const {
        switch (kind) {
            case NoiseKind::zero: return 0.0;
            case NoiseKind::additive: return c(i, j);
            case NoiseKind::bounded_multiplicative: return c(i, j) * phi(std::abs(ui));
        }
        return 0.0;
    }

    /// d amp / d u_i; sign convention phi(|u|)' = phi'(|u|) sgn(u), sgn(0) = 0.
    double damp(int i, int j, double ui) const {
        if (kind != NoiseKind::bounded_multiplicative) return 0.0;
        const double sgn = (ui > 0.0) - (ui < 0.0);
        return c(i, j) * dphi(std::abs(ui)) * sgn;
    }

    bool is_zero() const { return kind == NoiseKind::zero; }
};

/**
 * Truncated cylindrical Wiener increments on the mesh eta = T/M: increments
 * (m, j, k) ~ N(0, eta) i.i.d., cumulative sums precomputed so grid values are
 * exact partial sums. Fully determined by the seed.
 */
struct BrownianPath {
    double T = 0.0;
    double eta = 0.0;
    int M = 0, n = 0, K = 0;
    std::uint64_t seed = 0;
    Array3D incr;  // M x n x K
    Array3D cums;  // (M+1) x n x K

    /// Sums groups of `factor` fine increments: the same Brownian motion on mesh factor*eta.
    BrownianPath coarsen(int factor) const {
        if (factor < 1 || M % factor != 0) throw std::invalid_argument("coarsen: factor must divide M");
        BrownianPath c;
        c.T = T;
        c.M = M / factor;
        c.eta = eta * factor;
        c.n = n;
        c.K = K;
        c.seed = seed;
        c.incr = Array3D(c.M, n, K);
        c.cums = Array3D(c.M + 1, n, K);
        for (int m = 0; m < c.M; ++m)
            for (int j = 0; j < n; ++j)
                for (int k = 0; k < K; ++k) {
                    double s = 0.0;
                    for (int f = 0; f < factor; ++f) s += incr(m * factor + f, j, k);
                    c.incr(m, j, k) = s;
                    c.cums(m + 1, j, k) = c.cums(m, j, k) + s;
                }
        return c;
    }
};

inline BrownianPath sample_path(double T, int M, int n, int K, std::uint64_t seed) {
    if (!(T > 0.0) || M < 1) throw std::invalid_argument("sample_path: need T > 0 and M >= 1");
    BrownianPath p;
    p.T = T;
    p.M = M;
    p.eta = T / M;
    p.n = n;
    p.K = K;
    p.seed = seed;
    p.incr = Array3D(M, n, K);
    p.cums = Array3D(M + 1, n, K);
    Rng rng(seed);
    const double sd = std::sqrt(p.eta);
    for (int m = 0; m < M; ++m)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < K; ++k) {
                const double dw = rng.gaussian(0.0, sd);
                p.incr(m, j, k) = dw;
                p.cums(m + 1, j, k) = p.cums(m, j, k) + dw;
            }
    return p;
}

namespace detail {
inline int path_interval(const BrownianPath& p, double t) {
    if (!(t >= 0.0) || t > p.T * (1.0 + 1e-12)) throw std::domain_error("time outside [0, T]");
    int m = static_cast<int>(std::floor(t / p.eta));
    return std::min(std::max(m, 0), p.M - 1);
}
}  // namespace detail

/// Piecewise-linear interpolant W^(eta) of the cumulative sums for component (j, k).
inline double wong_zakai_value(const BrownianPath& p, int j, int k, double t) {
    const int m = detail::path_interval(p, t);
    const double frac = (t - m * p.eta) / p.eta;
    return p.cums(m, j, k) + frac * p.incr(m, j, k);
}

/// dW^(eta)/dt on the subinterval containing t (right-continuous at grid points).
inline double wong_zakai_rate(const BrownianPath& p, int j, int k, double t) {
    const int m = detail::path_interval(p, t);
    return p.incr(m, j, k) / p.eta;
}

/// Increment of the interpolant over [t0, t1]; exact Brownian increments when
/// t0, t1 lie on the eta grid.
inline double wong_zakai_increment(const BrownianPath& p, int j, int k, double t0, double t1) {
    return wong_zakai_value(p, j, k, t1) - wong_zakai_value(p, j, k, t0);
}

/// Flattened (n, n, K) stack of length-Q nodal fields sigma_{ijk}(u).
struct SigmaField {
    int n = 0, K = 0, Q = 0;
    std::vector<double> data;
    double at(int i, int j, int k, int q) const { return data[((static_cast<std::size_t>(i) * n + j) * K + k) * Q + q]; }
};

inline SigmaField sigma_apply(const NoiseModel& model, const SpeciesField& u, const BasisSet& basis) {
    SigmaField f;
    f.n = static_cast<int>(u.values.rows());
    f.K = model.K;
    f.Q = basis.nodes();
    f.data.assign(static_cast<std::size_t>(f.n) * f.n * f.K * f.Q, 0.0);
    if (model.is_zero()) return f;
    std::size_t idx = 0;
    for (int i = 0; i < f.n; ++i)
        for (int j = 0; j < f.n; ++j)
            for (int k = 0; k < f.K; ++k)
                for (int q = 0; q < f.Q; ++q, ++idx)
                    f.data[idx] = model.amp(i, j, u.values(i, q)) * basis.value(k + 1, q);
    return f;
}

/**
 * Ito correction drift -(1/2) sum_{j,l,k} (d sigma_ijk / d u_l) sigma_ljk,
 * evaluated nodally. The built-in families depend on u_i only, so the sum
 * collapses to -(1/2) phi'(u_i) phi(u_i) (sum_j c_ij^2) (sum_k e_k^2).
 */
inline void ito_correction(const NoiseModel& model, const Array2D& u_nodal, const BasisSet& basis,
                           Array2D& out) {
    const int n = static_cast<int>(u_nodal.rows());
    const int Q = basis.nodes();
    out.fill(0.0);
    if (model.kind != NoiseKind::bounded_multiplicative) return;  // additive/zero: d sigma/du = 0
    std::vector<double> mode_sq(Q, 0.0);
    for (int q = 0; q < Q; ++q) {
        double s = 0.0;
        for (int k = 0; k < model.K; ++k) {
            const double e = basis.value(k + 1, q);
            s += e * e;
        }
        mode_sq[q] = s;
    }
    for (int i = 0; i < n; ++i) {
        double csq = 0.0;
        for (int j = 0; j < n; ++j) csq += model.c(i, j) * model.c(i, j);
        for (int q = 0; q < Q; ++q) {
            const double ui = u_nodal(i, q);
            const double sgn = (ui > 0.0) - (ui < 0.0);
            const double r = std::abs(ui);
            out(i, q) = -0.5 * NoiseModel::dphi(r) * sgn * NoiseModel::phi(r) * csq * mode_sq[q];
        }
    }
}

/**
 * Full Wong-Zakai drift f_i(u, t) = sum_{j,k} sigma_ijk(u) dW^(eta)_jk/dt (t)
 * plus the Ito correction. Nodal; the Galerkin projection happens implicitly
 * when the caller tests against basis functions.
 */
inline void wong_zakai_drift(const NoiseModel& model, const Array2D& u_nodal, const BrownianPath& path,
                             double t, const BasisSet& basis, Array2D& out) {
    const int n = static_cast<int>(u_nodal.rows());
    const int Q = basis.nodes();
    if (model.is_zero()) {
        out.fill(0.0);
        return;
    }
    ito_correction(model, u_nodal, basis, out);
    const int m = detail::path_interval(path, t);
    std::vector<double> h(model.K);
    for (int i = 0; i < n; ++i) {
        // amp factors as c_ij * g(u_i), so contract c with the rates once per species
        for (int k = 0; k < model.K; ++k) {
            double gk = 0.0;
            for (int j = 0; j < n; ++j) gk += model.c(i, j) * path.incr(m, j, k);
            h[k] = gk / path.eta;
        }
        for (int q = 0; q < Q; ++q) {
            double mode_sum = 0.0;
            for (int k = 0; k < model.K; ++k) mode_sum += h[k] * basis.value(k + 1, q);
            const double g = model.kind == NoiseKind::additive ? 1.0 : NoiseModel::phi(std::abs(u_nodal(i, q)));
            out(i, q) += g * mode_sum;
        }
    }
}

}  // namespace crossdiff
