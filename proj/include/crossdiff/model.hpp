#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossdiff/array.hpp"

namespace crossdiff {

/**
 * Coefficient set of the cross-diffusion system.
 *
 * n species; transition-rate exponent s (>= 2 for the full theory, values in
 * [1, 2) are accepted for exploration with sub_quadratic_warning set);
 * a0[i] > 0 base diffusivities; a(i,j) >= 0 interaction coefficients with
 * a(i,i) the self-diffusion; pi[i] > 0 detailed-balance weights.
 */
struct ModelParams {
    int n = 1;
    double s = 2.0;
    std::vector<double> a0;
    Array2D a;
    std::vector<double> pi;
    bool sub_quadratic_warning = false;
};

struct ConvergenceError : std::runtime_error {
    double worst_residual;
    explicit ConvergenceError(const std::string& what, double resid)
        : std::runtime_error(what), worst_residual(resid) {}
};

/// x^p with a cheap exact path for small integer exponents.
inline double rpow(double x, double p) {
    const double ip = std::nearbyint(p);
    if (ip == p && ip >= 0.0 && ip <= 16.0) {
        double r = 1.0, b = x;
        int e = static_cast<int>(ip);
        while (e) {
            if (e & 1) r *= b;
            b *= b;
            e >>= 1;
        }
        return r;
    }
    return std::pow(x, p);
}

/// Structural checks on a parameter set; returns human-readable problems (empty = valid).
/// Dominance margins are a separate concern (see assumptions.hpp).
inline std::vector<std::string> validate_params(const ModelParams& p) {
    std::vector<std::string> issues;
    const std::size_t n = static_cast<std::size_t>(p.n);
    if (p.n < 1) issues.push_back("species count n must be >= 1");
    if (!(p.s >= 1.0)) issues.push_back("exponent s must be >= 1");
    if (p.a0.size() != n || p.pi.size() != n || p.a.rows() != n || p.a.cols() != n) {
        issues.push_back("coefficient shapes do not match n");
        return issues;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!(p.a0[i] > 0.0)) issues.push_back("a0[" + std::to_string(i) + "] must be > 0");
        if (!(p.pi[i] > 0.0)) issues.push_back("pi[" + std::to_string(i) + "] must be > 0");
        for (std::size_t j = 0; j < n; ++j)
            if (!(p.a(i, j) >= 0.0))
                issues.push_back("a[" + std::to_string(i) + "][" + std::to_string(j) + "] must be >= 0");
    }
    // Detailed balance: pi_i a_ij = pi_j a_ji up to roundoff in the stated scale.
    double scale = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            scale = std::max(scale, std::abs(p.pi[i] * p.a(i, j)));
            worst = std::max(worst, std::abs(p.pi[i] * p.a(i, j) - p.pi[j] * p.a(j, i)));
        }
    if (worst > 1e-12 * std::max(scale, 1e-300))
        issues.push_back("detailed-balance residual max|pi_i a_ij - pi_j a_ji| exceeds 1e-12 of scale");
    return issues;
}

/// Diffusion matrix A(u): A_ii = a_i0 + (s+1) a_ii u_i^s + sum_{k != i} a_ik u_k^s,
/// A_ij = s a_ij u_i u_j^{s-1}. Requires u >= 0 componentwise.
inline void diffusion_matrix(std::span<const double> u, const ModelParams& p, Array2D& A) {
    const int n = p.n;
    const double s = p.s;
    for (int i = 0; i < n; ++i)
        if (!(u[i] >= 0.0)) throw std::domain_error("diffusion_matrix: negative component; use abs_diffusion_matrix for signed states");
    std::vector<double> us(n), usm1(n);
    for (int i = 0; i < n; ++i) {
        usm1[i] = rpow(u[i], s - 1.0);
        us[i] = usm1[i] * u[i];
    }
    for (int i = 0; i < n; ++i) {
        double diag = p.a0[i] + (s + 1.0) * p.a(i, i) * us[i];
        for (int k = 0; k < n; ++k)
            if (k != i) diag += p.a(i, k) * us[k];
        A(i, i) = diag;
        for (int j = 0; j < n; ++j)
            if (j != i) A(i, j) = s * p.a(i, j) * u[i] * usm1[j];
    }
}

inline Array2D diffusion_matrix(std::span<const double> u, const ModelParams& p) {
    Array2D A(p.n, p.n);
    diffusion_matrix(u, p, A);
    return A;
}

/// M(u): the absolute-value variant, defined on all of R^n, M(u) = A(|u|).
inline void abs_diffusion_matrix(std::span<const double> u, const ModelParams& p, Array2D& M) {
    std::vector<double> au(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) au[i] = std::abs(u[i]);
    diffusion_matrix(au, p, M);
}

inline Array2D abs_diffusion_matrix(std::span<const double> u, const ModelParams& p) {
    Array2D M(p.n, p.n);
    abs_diffusion_matrix(u, p, M);
    return M;
}

/// A^H(v): A^H_ii = a_i0 + (s+1) a_ii v_i^2 + sum_{k != i} a_ik v_k^2, A^H_ij = s a_ij v_i v_j.
/// Conjugate of A(u) at v = u^{s/2}. Requires v >= 0.
inline void transformed_matrix(std::span<const double> v, const ModelParams& p, Array2D& AH) {
    const int n = p.n;
    const double s = p.s;
    for (int i = 0; i < n; ++i)
        if (!(v[i] >= 0.0)) throw std::domain_error("transformed_matrix: negative component");
    for (int i = 0; i < n; ++i) {
        double diag = p.a0[i] + (s + 1.0) * p.a(i, i) * v[i] * v[i];
        for (int k = 0; k < n; ++k)
            if (k != i) diag += p.a(i, k) * v[k] * v[k];
        AH(i, i) = diag;
        for (int j = 0; j < n; ++j)
            if (j != i) AH(i, j) = s * p.a(i, j) * v[i] * v[j];
    }
}

inline Array2D transformed_matrix(std::span<const double> v, const ModelParams& p) {
    Array2D AH(p.n, p.n);
    transformed_matrix(v, p, AH);
    return AH;
}

/// Scalar entropy integrand pi*(u^s/s + u(log u - 1) + 1), continuously extended to u = 0.
inline double entropy_term(double u, double pi_i, double s) {
    if (u == 0.0) return pi_i;  // u log u -> 0
    return pi_i * (rpow(u, s) / s + u * (std::log(u) - 1.0) + 1.0);
}

/// Entropy density h_s(u) = sum_i pi_i (u_i^s/s + u_i(log u_i - 1) + 1); u >= 0.
inline double entropy_density(std::span<const double> u, const ModelParams& p) {
    double h = 0.0;
    for (int i = 0; i < p.n; ++i) {
        if (!(u[i] >= 0.0)) throw std::domain_error("entropy_density: negative component");
        h += entropy_term(u[i], p.pi[i], p.s);
    }
    return h;
}

/// Scalar dual variable w = pi (u^{s-1} + log u); u > 0.
inline double entropy_gradient_scalar(double u, double pi_i, double s) {
    if (!(u > 0.0)) throw std::domain_error("entropy_gradient: component must be > 0");
    return pi_i * (rpow(u, s - 1.0) + std::log(u));
}

/// w_i = pi_i (u_i^{s-1} + log u_i); u > 0 componentwise.
inline std::vector<double> entropy_gradient(std::span<const double> u, const ModelParams& p) {
    std::vector<double> w(p.n);
    for (int i = 0; i < p.n; ++i) w[i] = entropy_gradient_scalar(u[i], p.pi[i], p.s);
    return w;
}

/// Diagonal of h''_s: pi_i (1/u_i + (s-1) u_i^{s-2}); u > 0.
inline std::vector<double> entropy_hessian(std::span<const double> u, const ModelParams& p) {
    std::vector<double> d(p.n);
    for (int i = 0; i < p.n; ++i) {
        if (!(u[i] > 0.0)) throw std::domain_error("entropy_hessian: component must be > 0");
        d[i] = p.pi[i] * (1.0 / u[i] + (p.s - 1.0) * rpow(u[i], p.s - 2.0));
    }
    return d;
}

namespace detail {

/**
 * Solves pi*(u^{s-1} + log u) = w for log u.
 *
 * Works in ell = log u: F(ell) = pi*(exp((s-1) ell) + ell) - w is smooth,
 * increasing and convex, so safeguarded Newton inside the bracket
 * [min(w/pi,0) - 1, log(1 + max(w/pi,0)^{1/(s-1)})] always converges. The log
 * form keeps w around +-1e6 representable where u itself under/overflows.
 * Residual is measured on F, i.e. on the dual-variable scale.
 */
inline double entropy_inverse_log(double w, double pi_i, double s, double tol, int max_iter,
                                  double* residual_out) {
    const double r = w / pi_i;
    if (s == 1.0) {  // h' = pi (1 + log u); exact
        if (residual_out) *residual_out = 0.0;
        return r - 1.0;
    }
    const double sm1 = s - 1.0;
    double lo = std::min(r, 0.0) - 1.0;
    double hi;
    if (r > 0.0) {
        const double t = std::log(r) / sm1;
        hi = (t > 30.0) ? t + 1e-12 : std::log1p(std::exp(t));
    } else {
        hi = 0.0;
    }
    auto F = [&](double ell) {
        const double e = sm1 * ell;
        const double ex = (e > 700.0) ? std::numeric_limits<double>::infinity() : std::exp(e);
        return pi_i * (ex + ell) - w;
    };
    // The analytic bracket is exact in reals; pad against roundoff at the ends.
    for (int g = 0; g < 64 && !(F(lo) <= 0.0); ++g) lo -= 1.0;
    for (int g = 0; g < 64 && !(F(hi) >= 0.0); ++g) hi += 1.0;

    double ell = 0.5 * (lo + hi);
    if (r > 0.0 && hi > 30.0) ell = hi;  // deep superquadratic branch: start at the bracket top
    double f = F(ell);
    double best_resid = std::abs(f);
    for (int it = 0; it < max_iter; ++it) {
        if (std::abs(f) <= tol) break;
        if (f > 0.0) hi = std::min(hi, ell);
        else lo = std::max(lo, ell);
        const double e = sm1 * ell;
        const double ex = (e > 700.0) ? std::numeric_limits<double>::infinity() : std::exp(e);
        const double fp = pi_i * (sm1 * ex + 1.0);
        double cand = ell - f / fp;
        if (!std::isfinite(cand) || cand <= lo || cand >= hi) cand = 0.5 * (lo + hi);
        ell = cand;
        f = F(ell);
        best_resid = std::min(best_resid, std::abs(f));
        if (hi - lo < 1e-16 * (std::abs(ell) + 1.0)) break;
    }
    if (residual_out) *residual_out = std::abs(f);
    return ell;
}

}  // namespace detail

/// Scalar inverse of the dual map; strictly positive result for every finite w.
inline double entropy_gradient_inverse_scalar(double w, double pi_i, double s, double tol = 1e-12) {
    double resid = 0.0;
    const double ell = detail::entropy_inverse_log(w, pi_i, s, tol, 80, &resid);
    return std::max(std::exp(ell), std::numeric_limits<double>::min());
}

/**
 * u = (h'_s)^{-1}(w) componentwise. The range of the inverse is (0, inf)^n,
 * which is what guarantees positivity of dual-variable schemes.
 * Throws ConvergenceError carrying the worst component residual if the
 * iteration budget runs out.
 */
inline std::vector<double> entropy_gradient_inverse(std::span<const double> w, const ModelParams& p,
                                                    double tol) {
    if (!(tol > 0.0)) throw std::invalid_argument("entropy_gradient_inverse: tol must be > 0");
    std::vector<double> u(p.n);
    double worst = 0.0;
    for (int i = 0; i < p.n; ++i) {
        double resid = 0.0;
        const double ell = detail::entropy_inverse_log(w[i], p.pi[i], p.s, tol, 80, &resid);
        worst = std::max(worst, resid);
        u[i] = std::max(std::exp(ell), std::numeric_limits<double>::min());
    }
    if (worst > tol) throw ConvergenceError("entropy_gradient_inverse: residual above tolerance", worst);
    return u;
}

/// du/dw for the scalar dual map: 1/h'' = u / (pi (1 + (s-1) u^{s-1})).
inline double primal_slope(double u, double pi_i, double s) {
    return u / (pi_i * (1.0 + (s - 1.0) * rpow(u, s - 1.0)));
}

/// B(w) = A(u(w)) h''_s(u(w))^{-1} expressed through the primal state:
/// B_ij = A_ij(u) * u_j / (pi_j ((s-1) u_j^{s-1} + 1)).
inline void transport_matrix_from_primal(std::span<const double> u, const ModelParams& p, Array2D& B) {
    diffusion_matrix(u, p, B);
    for (int j = 0; j < p.n; ++j) {
        const double g = primal_slope(u[j], p.pi[j], p.s);
        for (int i = 0; i < p.n; ++i) B(i, j) *= g;
    }
}

/// B(w) with the dual variables as input (inverts the dual map first).
inline Array2D entropy_transport_matrix(std::span<const double> w, const ModelParams& p) {
    const std::vector<double> u = entropy_gradient_inverse(w, p, 1e-12);
    Array2D B(p.n, p.n);
    transport_matrix_from_primal(u, p, B);
    return B;
}

/// Diagonal of H(v): (2/s) v^{2/s - 1}; the conjugation H^{-1}(v) A(u) H(v) = A^H(v) at v = u^{s/2}.
inline double transform_weight(double v, double s) { return (2.0 / s) * rpow(v, 2.0 / s - 1.0); }

}  // namespace crossdiff
