#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "crossdiff/basis.hpp"
#include "crossdiff/model.hpp"

namespace crossdiff {

/**
 * Per-step functionals of a trajectory state. Gradients of powers are chain
 * ruled nodally (p |u|^{p-1} u') with u' from spectral differentiation of the
 * Galerkin representative. Signed states (the absolute-value reference scheme
 * can undershoot) are read through |u|, matching its coefficient definition;
 * dual-variable trajectories are strictly positive so only min_nodal sees the
 * sign there.
 */
struct MonitorRow {
    double t = 0.0;
    double l2_sq = 0.0;        // ||u||^2_{L2}
    double grad_sq = 0.0;      // ||grad u||^2
    double grad_us_sq = 0.0;   // ||grad u^s||^2
    double grad_us2_sq = 0.0;  // ||grad u^{s/2}||^2
    double entropy = 0.0;      // int h_s(u)
    std::vector<double> mass;  // per-species int u_i
    double min_nodal = 0.0;
    double us_l2 = 0.0;        // ||u^s||_{L2}
};

inline MonitorRow compute_monitors(const Array2D& u_nodal, const BasisSet& basis, const ModelParams& p) {
    const int n = static_cast<int>(u_nodal.rows());
    const int Q = basis.nodes();
    const double s = p.s;
    MonitorRow row;
    row.mass.resize(n);
    row.min_nodal = std::numeric_limits<double>::infinity();
    std::vector<double> coeffs(basis.modes()), du(Q);
    double us_l2_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        basis.project(u_nodal.row(i), coeffs);
        basis.synthesize_deriv(coeffs, du);
        double l2 = 0.0, g = 0.0, gs = 0.0, gs2 = 0.0, h = 0.0, m = 0.0, us2 = 0.0;
        for (int q = 0; q < Q; ++q) {
            const double wq = basis.weight(q);
            const double u = u_nodal(i, q);
            const double au = std::abs(u);
            const double d = du[q];
            const double ps = s * rpow(au, s - 1.0) * d;
            const double ps2 = 0.5 * s * rpow(au, 0.5 * s - 1.0) * d;
            l2 += wq * u * u;
            g += wq * d * d;
            gs += wq * ps * ps;
            gs2 += wq * ps2 * ps2;
            h += wq * entropy_term(au, p.pi[i], s);
            m += wq * u;
            us2 += wq * rpow(au, 2.0 * s);
            row.min_nodal = std::min(row.min_nodal, u);
        }
        row.l2_sq += l2;
        row.grad_sq += g;
        row.grad_us_sq += gs;
        row.grad_us2_sq += gs2;
        row.entropy += h;
        row.mass[i] = m;
        us_l2_sq += us2;
    }
    row.us_l2 = std::sqrt(us_l2_sq);
    return row;
}

/// ||u^{s/2}||^2_{L2} = sum_i int |u_i|^s, the squared norm of the transformed variable.
inline double vsq_integral(const Array2D& u_nodal, const BasisSet& basis, const ModelParams& p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < u_nodal.rows(); ++i)
        for (int q = 0; q < basis.nodes(); ++q)
            acc += basis.weight(q) * rpow(std::abs(u_nodal(i, q)), p.s);
    return acc;
}

}  // namespace crossdiff
