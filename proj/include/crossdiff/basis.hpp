#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "crossdiff/array.hpp"
#include "crossdiff/model.hpp"

namespace crossdiff {

/// 1-D domain [0, L], Galerkin dimension N, requested quadrature resolution Q (Q >= 2N+1).
struct GridSpec {
    double L = 1.0;
    int N = 16;
    int Q = 64;
};

namespace detail {

/// sin(pi y) with exact zeros at integer y.
inline double sin_pi(double y) {
    const double r = std::remainder(y, 2.0);
    if (r == 0.0 || r == 1.0 || r == -1.0) return 0.0;
    return std::sin(3.14159265358979323846264338328 * r);
}

inline double cos_pi(double y) {
    const double r = std::remainder(y, 2.0);
    return std::cos(3.14159265358979323846264338328 * r);
}

/// Gauss-Legendre nodes/weights on [-1, 1] by Newton on the Legendre recurrence.
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    x.assign(n, 0.0);
    w.assign(n, 0.0);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double xi = std::cos(3.14159265358979323846 * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * xi * p1 - j * p2) / (j + 1.0);
            }
            pp = n * (xi * p0 - p1) / (xi * xi - 1.0);
            const double dx = p0 / pp;
            xi -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        x[i] = -xi;
        x[n - 1 - i] = xi;
        w[i] = w[n - 1 - i] = 2.0 / ((1.0 - xi * xi) * pp * pp);
    }
}

}  // namespace detail

/**
 * Orthonormal Neumann cosine basis on [0, L] with composite Gauss-Legendre
 * quadrature: e_0 = 1/sqrt(L), e_k = sqrt(2/L) cos(k pi x / L). Basis
 * derivatives vanish at both endpoints, which is the no-flux compatibility.
 *
 * Quadrature uses 16-point panels; the node count is the requested Q rounded
 * up to a panel multiple, so Q acts as a lower bound. Panels scale with Q, and
 * Q >= 2N+1 keeps products of two basis elements integrated to ~1e-12.
 */
class BasisSet {
public:
    explicit BasisSet(const GridSpec& grid) : L_(grid.L), N_(grid.N) {
        if (!(grid.L > 0.0)) throw std::invalid_argument("BasisSet: L must be > 0");
        if (grid.N < 1) throw std::invalid_argument("BasisSet: N must be >= 1");
        if (grid.Q < 2 * grid.N + 1) throw std::invalid_argument("BasisSet: Q must be >= 2N+1");
        constexpr int kPanel = 16;
        const int ncells = (grid.Q + kPanel - 1) / kPanel;
        Q_ = ncells * kPanel;
        std::vector<double> gx, gw;
        detail::gauss_legendre(kPanel, gx, gw);
        nodes_.resize(Q_);
        weights_.resize(Q_);
        const double h = L_ / ncells;
        for (int c = 0; c < ncells; ++c)
            for (int g = 0; g < kPanel; ++g) {
                nodes_[c * kPanel + g] = c * h + 0.5 * h * (gx[g] + 1.0);
                weights_[c * kPanel + g] = 0.5 * h * gw[g];
            }
        values_ = Array2D(N_, Q_);
        derivs_ = Array2D(N_, Q_);
        lambda_.resize(N_);
        for (int m = 0; m < N_; ++m) {
            lambda_[m] = (m * M_PI / L_) * (m * M_PI / L_);
            for (int q = 0; q < Q_; ++q) {
                values_(m, q) = eval(m, nodes_[q]);
                derivs_(m, q) = eval_deriv(m, nodes_[q]);
            }
        }
    }

    int modes() const { return N_; }
    int nodes() const { return Q_; }
    double length() const { return L_; }
    double node(int q) const { return nodes_[q]; }
    double weight(int q) const { return weights_[q]; }
    double value(int m, int q) const { return values_(m, q); }
    double deriv(int m, int q) const { return derivs_(m, q); }
    const Array2D& values_table() const { return values_; }
    const Array2D& derivs_table() const { return derivs_; }
    /// Neumann Laplacian eigenvalue (m pi / L)^2 of e_m.
    double laplace_eig(int m) const { return lambda_[m]; }

    double eval(int m, double x) const {
        if (m == 0) return 1.0 / std::sqrt(L_);
        return std::sqrt(2.0 / L_) * detail::cos_pi(m * x / L_);
    }

    double eval_deriv(int m, double x) const {
        if (m == 0) return 0.0;
        return -std::sqrt(2.0 / L_) * (m * M_PI / L_) * detail::sin_pi(m * x / L_);
    }

    double integrate(std::span<const double> nodal) const {
        double s = 0.0;
        for (int q = 0; q < Q_; ++q) s += weights_[q] * nodal[q];
        return s;
    }

    double inner(std::span<const double> f, std::span<const double> g) const {
        double s = 0.0;
        for (int q = 0; q < Q_; ++q) s += weights_[q] * f[q] * g[q];
        return s;
    }

    /// Coefficients (f, e_m) for m < n_keep (defaults to all N).
    void project(std::span<const double> nodal, std::span<double> coeffs, int n_keep = -1) const {
        const int nk = n_keep < 0 ? N_ : n_keep;
        for (int m = 0; m < nk; ++m) {
            double s = 0.0;
            for (int q = 0; q < Q_; ++q) s += weights_[q] * nodal[q] * values_(m, q);
            coeffs[m] = s;
        }
    }

    void synthesize(std::span<const double> coeffs, std::span<double> nodal) const {
        for (int q = 0; q < Q_; ++q) {
            double s = 0.0;
            for (int m = 0; m < static_cast<int>(coeffs.size()); ++m) s += coeffs[m] * values_(m, q);
            nodal[q] = s;
        }
    }

    void synthesize_deriv(std::span<const double> coeffs, std::span<double> nodal) const {
        for (int q = 0; q < Q_; ++q) {
            double s = 0.0;
            for (int m = 1; m < static_cast<int>(coeffs.size()); ++m) s += coeffs[m] * derivs_(m, q);
            nodal[q] = s;
        }
    }

private:
    double L_;
    int N_;
    int Q_;
    std::vector<double> nodes_, weights_, lambda_;
    Array2D values_, derivs_;
};

/**
 * Species state: nodal values (n x Q) and Galerkin coefficients (n x N),
 * consistent under the projection/synthesis pair by construction.
 */
struct SpeciesField {
    Array2D values;  // n x Q
    Array2D coeffs;  // n x N

    static SpeciesField from_coeffs(const BasisSet& basis, const Array2D& coeffs) {
        SpeciesField f;
        f.coeffs = coeffs;
        f.values = Array2D(coeffs.rows(), basis.nodes());
        for (std::size_t i = 0; i < coeffs.rows(); ++i) basis.synthesize(coeffs.row(i), f.values.row(i));
        return f;
    }

    /// Projects nodal data onto the Galerkin space (the field becomes bandlimited).
    static SpeciesField from_nodal(const BasisSet& basis, const Array2D& nodal) {
        Array2D coeffs(nodal.rows(), basis.modes());
        for (std::size_t i = 0; i < nodal.rows(); ++i) basis.project(nodal.row(i), coeffs.row(i));
        return from_coeffs(basis, coeffs);
    }

    int species() const { return static_cast<int>(values.rows()); }
};

/// Per-species integral of u_i over the domain.
inline std::vector<double> species_mass(const Array2D& u_nodal, const BasisSet& basis) {
    std::vector<double> m(u_nodal.rows());
    for (std::size_t i = 0; i < u_nodal.rows(); ++i) m[i] = basis.integrate(u_nodal.row(i));
    return m;
}

inline std::vector<double> species_mass(const SpeciesField& u, const BasisSet& basis) {
    return species_mass(u.values, basis);
}

enum class MatrixKind { A, M };

/**
 * Weak-form divergence term for species i: out[m] = -sum_j int (mat)_ij(u) u_j' e_m' dx,
 * the coefficient form of Pi_N div(sum_j (mat)_ij grad u_j). Nonlinearities are
 * evaluated pseudo-spectrally at the quadrature nodes.
 */
inline void assemble_divergence_term(const SpeciesField& u, int i, const BasisSet& basis,
                                     const ModelParams& p, MatrixKind kind, std::span<double> out) {
    const int n = p.n;
    const int Q = basis.nodes();
    const int N = basis.modes();
    const double s = p.s;
    if (kind == MatrixKind::A)
        for (int j = 0; j < n; ++j)
            for (int q = 0; q < Q; ++q)
                if (!(u.values(j, q) >= 0.0))
                    throw std::domain_error("assemble_divergence_term: negative nodal value with matrix kind A");

    Array2D du(n, Q);
    for (int j = 0; j < n; ++j) basis.synthesize_deriv(u.coeffs.row(j), du.row(j));

    // Row i of the diffusion matrix at every node, contracted with grad u.
    std::vector<double> flux(Q, 0.0);
    std::vector<double> us(n), usm1(n);
    for (int q = 0; q < Q; ++q) {
        for (int j = 0; j < n; ++j) {
            const double uj = std::abs(u.values(j, q));
            usm1[j] = rpow(uj, s - 1.0);
            us[j] = usm1[j] * uj;
        }
        double diag = p.a0[i] + (s + 1.0) * p.a(i, i) * us[i];
        for (int k = 0; k < n; ++k)
            if (k != i) diag += p.a(i, k) * us[k];
        double fx = diag * du(i, q);
        const double ui = std::abs(u.values(i, q));
        for (int j = 0; j < n; ++j)
            if (j != i) fx += s * p.a(i, j) * ui * usm1[j] * du(j, q);
        flux[q] = fx;
    }
    for (int m = 0; m < N; ++m) {
        double acc = 0.0;
        for (int q = 0; q < Q; ++q) acc += basis.weight(q) * flux[q] * basis.deriv(m, q);
        out[m] = -acc;
    }
}

inline std::vector<double> assemble_divergence_term(const SpeciesField& u, int i, const BasisSet& basis,
                                                    const ModelParams& p, MatrixKind kind) {
    std::vector<double> out(basis.modes());
    assemble_divergence_term(u, i, basis, p, kind, out);
    return out;
}

}  // namespace crossdiff
