#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossdiff/model.hpp"
#include "crossdiff/noise.hpp"
#include "crossdiff/rng.hpp"

namespace crossdiff {

struct CertificateError : std::runtime_error {
    int species_index;
    CertificateError(const std::string& what, int idx) : std::runtime_error(what), species_index(idx) {}
};

struct FalsificationError : std::runtime_error {
    std::vector<double> u, z;
    double lhs, rhs;
    FalsificationError(const std::string& what, std::vector<double> u_, std::vector<double> z_,
                       double lhs_, double rhs_)
        : std::runtime_error(what), u(std::move(u_)), z(std::move(z_)), lhs(lhs_), rhs(rhs_) {}
};

struct DominanceReport {
    std::vector<double> strong_margins;  // (s+1) a_ii - (s^2/4) sum_{k != i} a_ik
    std::vector<double> weak_margins;    // (s+1) a_ii - (s-1)   sum_{k != i} a_ik
    bool strong_ok = false;
    bool weak_ok = false;
};

inline DominanceReport check_dominance(const ModelParams& p) {
    DominanceReport r;
    r.strong_margins.resize(p.n);
    r.weak_margins.resize(p.n);
    r.strong_ok = r.weak_ok = true;
    const double cs = p.s * p.s / 4.0;
    const double cw = p.s - 1.0;
    for (int i = 0; i < p.n; ++i) {
        double off = 0.0;
        for (int k = 0; k < p.n; ++k)
            if (k != i) off += p.a(i, k);
        r.strong_margins[i] = (p.s + 1.0) * p.a(i, i) - cs * off;
        r.weak_margins[i] = (p.s + 1.0) * p.a(i, i) - cw * off;
        if (!(r.strong_margins[i] > 0.0)) r.strong_ok = false;
        if (!(r.weak_margins[i] > 0.0)) r.weak_ok = false;
    }
    return r;
}

struct DetailedBalanceResult {
    bool feasible = false;
    std::vector<double> pi;
    /// On infeasibility: node indices of a violating cycle (tree path plus closing edge),
    /// and the residual of its constraint.
    std::vector<int> violating_cycle;
    double witness_residual = 0.0;
};

/**
 * Finds pi > 0 with pi_i a_ij = pi_j a_ji by spanning-tree propagation over
 * the graph of index pairs with a_ij + a_ji > 0, then verifies every non-tree
 * constraint. Normalization: the first node of each connected component gets
 * pi = 1 (so pi_1 = 1). A pair with exactly one zero coefficient, or a
 * non-tree constraint violated by more than `tol` relative, yields a witness
 * cycle instead of a silent failure.
 */
inline DetailedBalanceResult solve_detailed_balance(const Array2D& a, double tol) {
    const int n = static_cast<int>(a.rows());
    DetailedBalanceResult res;
    res.pi.assign(n, 0.0);
    std::vector<int> parent(n, -1), order;
    std::vector<char> seen(n, 0);

    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const bool ij = a(i, j) > 0.0, ji = a(j, i) > 0.0;
            if (ij != ji) {  // pi_i a_ij = 0 forces pi = 0, impossible
                res.violating_cycle = {i, j};
                res.witness_residual = std::abs(a(i, j) - a(j, i));
                return res;
            }
        }

    for (int root = 0; root < n; ++root) {
        if (seen[root]) continue;
        res.pi[root] = 1.0;
        seen[root] = 1;
        std::deque<int> bfs{root};
        while (!bfs.empty()) {
            const int i = bfs.front();
            bfs.pop_front();
            order.push_back(i);
            for (int j = 0; j < n; ++j) {
                if (seen[j] || j == i || !(a(i, j) > 0.0)) continue;
                res.pi[j] = res.pi[i] * a(i, j) / a(j, i);
                parent[j] = i;
                seen[j] = 1;
                bfs.push_back(j);
            }
        }
    }

    auto tree_path_to_root = [&](int v) {
        std::vector<int> path;
        for (; v != -1; v = parent[v]) path.push_back(v);
        return path;
    };

    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (j == i || !(a(i, j) > 0.0)) continue;
            const double lhs = res.pi[i] * a(i, j);
            const double rhs = res.pi[j] * a(j, i);
            if (std::abs(lhs - rhs) > tol * std::max({std::abs(lhs), std::abs(rhs), 1e-300})) {
                // Close the cycle: path i -> root, path j -> root, spliced at the common ancestor.
                std::vector<int> pi_path = tree_path_to_root(i);
                std::vector<int> pj_path = tree_path_to_root(j);
                std::vector<char> on_pi(n, 0);
                for (int v : pi_path) on_pi[v] = 1;
                int anc = pj_path[0];
                std::vector<int> down;
                for (int v : pj_path) {
                    if (on_pi[v]) { anc = v; break; }
                    down.push_back(v);
                }
                std::vector<int> cycle;
                for (int v : pi_path) { cycle.push_back(v); if (v == anc) break; }
                std::reverse(down.begin(), down.end());
                for (int v : down) cycle.push_back(v);
                res.violating_cycle = cycle;
                res.witness_residual = std::abs(lhs - rhs);
                return res;
            }
        }
    res.feasible = true;
    return res;
}

enum class LemmaKind { L1, L2, L3, L4 };

inline const char* lemma_name(LemmaKind k) {
    switch (k) {
        case LemmaKind::L1: return "L1";
        case LemmaKind::L2: return "L2";
        case LemmaKind::L3: return "L3";
        case LemmaKind::L4: return "L4";
    }
    return "?";
}

/// Weighted quadratic form on the selected matrix:
///   L1: sum pi_i A_ij(u) z_i z_j                 (u >= 0)
///   L2: sum (pi_i/u_i) A_ij(u) z_i z_j           (u > 0)
///   L3: sum pi_i u_i^{s-2} A_ij(u) z_i z_j       (u > 0)
///   L4: sum pi_i A^H_ij(u) z_i z_j               (u >= 0, u read as v)
inline double quadratic_form_lhs(LemmaKind kind, std::span<const double> u, std::span<const double> z,
                                 const ModelParams& p) {
    const int n = p.n;
    Array2D A(n, n);
    if (kind == LemmaKind::L4) transformed_matrix(u, p, A);
    else diffusion_matrix(u, p, A);
    std::vector<double> wgt(n);
    for (int i = 0; i < n; ++i) {
        switch (kind) {
            case LemmaKind::L1:
            case LemmaKind::L4: wgt[i] = p.pi[i]; break;
            case LemmaKind::L2:
                if (!(u[i] > 0.0)) throw std::domain_error("quadratic_form L2 requires u > 0");
                wgt[i] = p.pi[i] / u[i];
                break;
            case LemmaKind::L3:
                if (!(u[i] > 0.0)) throw std::domain_error("quadratic_form L3 requires u > 0");
                wgt[i] = p.pi[i] * rpow(u[i], p.s - 2.0);
                break;
        }
    }
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) acc += wgt[i] * A(i, j) * z[i] * z[j];
    return acc;
}

/// The certified lower-bound constants: alpha1 = min_i pi_i a_i0 and
/// beta_i = pi_i ((s+1) a_ii - c(s) sum_{k != i} a_ik) with c = s^2/4 for
/// L1/L2 and c = s-1 for L3/L4; alpha2 = min_i beta_i.
inline void certificate_constants(LemmaKind kind, const ModelParams& p, double& alpha1, double& alpha2,
                                  std::vector<double>& beta) {
    const bool strong = (kind == LemmaKind::L1 || kind == LemmaKind::L2);
    const double c = strong ? p.s * p.s / 4.0 : p.s - 1.0;
    beta.resize(p.n);
    alpha1 = std::numeric_limits<double>::infinity();
    alpha2 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < p.n; ++i) {
        double off = 0.0;
        for (int k = 0; k < p.n; ++k)
            if (k != i) off += p.a(i, k);
        beta[i] = p.pi[i] * ((p.s + 1.0) * p.a(i, i) - c * off);
        alpha1 = std::min(alpha1, p.pi[i] * p.a0[i]);
        alpha2 = std::min(alpha2, beta[i]);
        if (!(beta[i] > 0.0))
            throw CertificateError(std::string("dominance margin non-positive for kind ") + lemma_name(kind) +
                                       " at species " + std::to_string(i),
                                   i);
    }
}

/// Certified lower bound:
///   L1: a1 sum z_i^2          + a2 sum u_i^s     z_i^2
///   L2: a1 sum z_i^2/u_i      + a2 sum u_i^{s-1} z_i^2
///   L3: a1 sum u_i^{s-2}z_i^2 + a2 sum u_i^{2s-2}z_i^2
///   L4: a1 sum z_i^2          + a2 sum v_i^2     z_i^2
inline double quadratic_form_rhs(LemmaKind kind, std::span<const double> u, std::span<const double> z,
                                 const ModelParams& p) {
    double a1, a2;
    std::vector<double> beta;
    certificate_constants(kind, p, a1, a2, beta);
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < p.n; ++i) {
        const double z2 = z[i] * z[i];
        switch (kind) {
            case LemmaKind::L1:
                s1 += z2;
                s2 += rpow(u[i], p.s) * z2;
                break;
            case LemmaKind::L2:
                if (!(u[i] > 0.0)) throw std::domain_error("quadratic_form L2 requires u > 0");
                s1 += z2 / u[i];
                s2 += rpow(u[i], p.s - 1.0) * z2;
                break;
            case LemmaKind::L3:
                if (!(u[i] > 0.0)) throw std::domain_error("quadratic_form L3 requires u > 0");
                s1 += rpow(u[i], p.s - 2.0) * z2;
                s2 += rpow(u[i], 2.0 * p.s - 2.0) * z2;
                break;
            case LemmaKind::L4:
                s1 += z2;
                s2 += u[i] * u[i] * z2;
                break;
        }
    }
    return a1 * s1 + a2 * s2;
}

struct LemmaCertificate {
    LemmaKind kind;
    double alpha1 = 0.0;
    double alpha2 = 0.0;
    std::vector<double> beta;
    long samples_tested = 0;
    double worst_slack = 0.0;  // min over the scan of lhs - rhs
    std::vector<double> worst_u, worst_z;
    double worst_lhs = 0.0;
};

/**
 * Randomized verification of the lower bound: n_samples seeded draws with u
 * log-uniform in [1e-6, 1e3]^n (components zeroed with probability 1/8 for the
 * kinds defined on the closed orthant) and z standard normal. A sample with
 * lhs - rhs < -1e-9 |lhs| would contradict the bound and raises
 * FalsificationError carrying the witness. Deterministic in (seed, n_samples).
 */
inline LemmaCertificate certify_lemma(LemmaKind kind, const ModelParams& p, long n_samples,
                                      std::uint64_t seed) {
    LemmaCertificate cert;
    cert.kind = kind;
    certificate_constants(kind, p, cert.alpha1, cert.alpha2, cert.beta);
    const bool closed_orthant = (kind == LemmaKind::L1 || kind == LemmaKind::L4);
    Rng rng(seed);
    std::vector<double> u(p.n), z(p.n);
    double worst = std::numeric_limits<double>::infinity();
    for (long t = 0; t < n_samples; ++t) {
        for (int i = 0; i < p.n; ++i) {
            const double zero_draw = rng.uniform01();
            u[i] = (closed_orthant && zero_draw < 0.125) ? 0.0 : rng.log_uniform(1e-6, 1e3);
            z[i] = rng.gaussian();
        }
        const double lhs = quadratic_form_lhs(kind, u, z, p);
        const double rhs = quadratic_form_rhs(kind, u, z, p);
        const double slack = lhs - rhs;
        if (slack < worst) {
            worst = slack;
            cert.worst_u = u;
            cert.worst_z = z;
            cert.worst_lhs = lhs;
        }
        if (slack < -1e-9 * std::abs(lhs))
            throw FalsificationError(std::string("quadratic-form bound violated for kind ") + lemma_name(kind),
                                     u, z, lhs, rhs);
    }
    cert.samples_tested = n_samples;
    cert.worst_slack = worst;
    return cert;
}

struct NoiseComplianceReport {
    double lipschitz_estimate = 0.0;
    double growth_estimate = 0.0;
    double entropy_coupling_estimate = 0.0;
    long sample_count = 0;
    bool lipschitz_pass = false;
    bool growth_pass = false;
    bool entropy_pass = false;
};

/**
 * Empirical constants for the noise family, sampled over constant-in-x states
 * on a unit-length domain (amplitude-level scalarization; the mode factor
 * contributes sqrt(K) through orthonormality):
 *   lipschitz: max over pairs of ||amp(u) - amp(v)||_F sqrt(K) / |u - v|
 *   growth:    max of K sum_ij (amp_ij^2 + u_i^{2(s-2)/s} amp_ij^2) / (1 + |u|^2)
 *   entropy coupling: max over samples of the weighted dual-pairing bound,
 *     (max_j |sum_i pi_i amp_ij (u_i^{s-1} + log u_i)| sqrt(K)
 *      + (1/2) |sum_ij pi_i damp_ij amp_ij (u_i^{s-1} + log u_i)| K)
 *     divided by sum_i (u_i^s/s + u_i(log u_i - 1) + 1).
 */
inline NoiseComplianceReport check_noise_assumptions(const NoiseModel& model, const ModelParams& p,
                                                     long n_samples, std::uint64_t seed, double cap = 10.0) {
    NoiseComplianceReport rep;
    rep.sample_count = n_samples;
    Rng rng(seed);
    const int n = p.n;
    const double k1 = std::sqrt(static_cast<double>(std::max(model.K, 1)));
    const double k2 = static_cast<double>(std::max(model.K, 1));
    std::vector<double> u(n), v(n);
    for (long t = 0; t < n_samples; ++t) {
        double nu2 = 0.0;
        for (int i = 0; i < n; ++i) {
            u[i] = rng.log_uniform(1e-6, 1e3);
            v[i] = rng.log_uniform(1e-6, 1e3);
            nu2 += u[i] * u[i];
        }
        double diff2 = 0.0, dist2 = 0.0;
        double grow = 0.0;
        double pair1 = 0.0, pair2 = 0.0;
        std::vector<double> col(n, 0.0);
        for (int i = 0; i < n; ++i) {
            const double wi = rpow(u[i], p.s - 1.0) + std::log(u[i]);
            const double upow = rpow(u[i], 2.0 * (p.s - 2.0) / p.s);
            for (int j = 0; j < n; ++j) {
                const double aij = model.amp(i, j, u[i]);
                const double bij = model.amp(i, j, v[i]);
                diff2 += (aij - bij) * (aij - bij);
                grow += k2 * aij * aij * (1.0 + upow);
                col[j] += p.pi[i] * aij * wi;
                pair2 += p.pi[i] * model.damp(i, j, u[i]) * aij * wi;
            }
            dist2 += (u[i] - v[i]) * (u[i] - v[i]);
        }
        for (int j = 0; j < n; ++j) pair1 = std::max(pair1, std::abs(col[j]));
        if (!std::isfinite(grow) || !std::isfinite(pair1) || !std::isfinite(pair2))
            throw std::runtime_error("check_noise_assumptions: non-finite noise evaluation");
        if (dist2 > 0.0)
            rep.lipschitz_estimate = std::max(rep.lipschitz_estimate, std::sqrt(diff2) * k1 / std::sqrt(dist2));
        rep.growth_estimate = std::max(rep.growth_estimate, grow / (1.0 + nu2));
        double h = 0.0;
        for (int i = 0; i < n; ++i) h += entropy_term(u[i], 1.0, p.s);
        rep.entropy_coupling_estimate =
            std::max(rep.entropy_coupling_estimate, (pair1 * k1 + 0.5 * std::abs(pair2) * k2) / h);
    }
    rep.lipschitz_pass = rep.lipschitz_estimate <= cap;
    rep.growth_pass = rep.growth_estimate <= cap;
    rep.entropy_pass = rep.entropy_coupling_estimate <= cap;
    return rep;
}

}  // namespace crossdiff
