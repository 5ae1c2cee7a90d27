#pragma once

// Reference implementations used by the test suites to cross-check the
// production paths. Deliberately slow and simple; algorithmically independent
// of what they validate (denser quadrature, pure bisection, closed forms).
// Not used anywhere in the production code.

#include <cmath>
#include <span>
#include <vector>

#include "crossdiff/basis.hpp"
#include "crossdiff/model.hpp"

namespace crossdiff::oracle {

struct OracleReport {
    std::string name;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    long samples = 0;
};

/**
 * Reference assembly of the weak divergence term at `factor`*Q Gauss nodes.
 * Evaluates the field and its derivative directly from the coefficients at the
 * dense nodes rather than reusing the production tables.
 */
inline std::vector<double> dense_weak_form(const SpeciesField& u, int i, const BasisSet& basis,
                                           const ModelParams& p, int factor = 4) {
    const GridSpec dense_grid{basis.length(), basis.modes(), factor * basis.nodes()};
    const BasisSet dense(dense_grid);
    const int n = p.n;
    const int Qd = dense.nodes();
    const double s = p.s;
    Array2D uv(n, Qd), duv(n, Qd);
    for (int j = 0; j < n; ++j) {
        dense.synthesize(u.coeffs.row(j), uv.row(j));
        dense.synthesize_deriv(u.coeffs.row(j), duv.row(j));
    }
    std::vector<double> out(basis.modes(), 0.0);
    for (int m = 0; m < basis.modes(); ++m) {
        double acc = 0.0;
        for (int q = 0; q < Qd; ++q) {
            double flux = 0.0;
            for (int j = 0; j < n; ++j) {
                double aij;
                if (j == i) {
                    aij = p.a0[i] + (s + 1.0) * p.a(i, i) * std::pow(std::abs(uv(i, q)), s);
                    for (int k = 0; k < n; ++k)
                        if (k != i) aij += p.a(i, k) * std::pow(std::abs(uv(k, q)), s);
                } else {
                    aij = s * p.a(i, j) * std::abs(uv(i, q)) * std::pow(std::abs(uv(j, q)), s - 1.0);
                }
                flux += aij * duv(j, q);
            }
            acc += dense.weight(q) * flux * dense.eval_deriv(m, dense.node(q));
        }
        out[m] = -acc;
    }
    return out;
}

/**
 * Pure-bisection root of pi (u^{s-1} + log u) = w, carried out in log u from
 * an expanding bracket so extreme w stays representable. Residual of the
 * returned root is below 1e-13 on the dual-variable scale (evaluated in the
 * log-domain form).
 */
inline double bisect_entropy_inverse(double w, double pi_i, double s, double* residual_out = nullptr) {
    const double r = w / pi_i;
    auto F = [&](double ell) {
        const double e = (s - 1.0) * ell;
        const double ex = e > 700.0 ? std::numeric_limits<double>::infinity() : std::exp(e);
        return pi_i * (ex + ell) - w;
    };
    double lo = std::min(r, 0.0) - 2.0, hi = std::max(r, 0.0) + 2.0;
    for (int g = 0; g < 128 && F(lo) > 0.0; ++g) lo -= std::abs(lo) + 1.0;
    for (int g = 0; g < 128 && F(hi) < 0.0; ++g) hi += std::abs(hi) + 1.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (F(mid) >= 0.0) hi = mid;
        else lo = mid;
        if (hi - lo < 1e-15 * (std::abs(hi) + 1.0)) break;
    }
    const double ell = 0.5 * (lo + hi);
    if (residual_out) *residual_out = std::abs(F(ell));
    return std::max(std::exp(ell), std::numeric_limits<double>::min());
}

/// Closed-form semi-implicit heat update: coeff / (1 + dt a10 (k pi / L)^2).
inline double heat_decay_reference(double coeff_k, double dt, double a10, int k, double L) {
    const double lam = (k * M_PI / L) * (k * M_PI / L);
    return coeff_k / (1.0 + dt * a10 * lam);
}

}  // namespace crossdiff::oracle
